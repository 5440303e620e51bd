//! Central-difference validation of the analytic gradients.

use crate::error::Result;
use crate::nn::model::Model;
use crate::nn::train::{compute_gradients, mean_cross_entropy, Gradients, LayerGrad, Sample};
use crate::scalar::Scalar;

/// Mean cross-entropy of `model` over `batch` (the training loss).
pub fn batch_loss<S: Scalar>(model: &Model<S>, batch: &[Sample<S>]) -> Result<S> {
    mean_cross_entropy(model, batch)
}

/// Backprop gradients of the batch loss for every layer.
pub fn analytic_gradients<S: Scalar>(
    model: &Model<S>,
    batch: &[Sample<S>],
) -> Result<Gradients<S>> {
    Ok(compute_gradients(model, batch, 0)?.0)
}

/// Central-difference gradients: each parameter is nudged ±eps and the loss
/// re-evaluated, so this path shares no code with backprop.
pub fn numeric_gradients<S: Scalar>(
    model: &Model<S>,
    batch: &[Sample<S>],
    eps: S,
) -> Result<Gradients<S>> {
    let mut work = model.clone();
    let mut per_layer = Vec::with_capacity(model.layer_count());
    let two_eps = eps + eps;
    for li in 0..model.layer_count() {
        let (n_w, n_b) = {
            let d = work.dense(li + 1)?;
            (d.weights.len(), d.biases.len())
        };
        let mut g = LayerGrad {
            weights: vec![S::zero(); n_w],
            biases: vec![S::zero(); n_b],
        };
        for wi in 0..n_w {
            let orig = work.dense_mut(li).weights[wi];
            work.dense_mut(li).weights[wi] = orig + eps;
            let plus = mean_cross_entropy(&work, batch)?;
            work.dense_mut(li).weights[wi] = orig - eps;
            let minus = mean_cross_entropy(&work, batch)?;
            work.dense_mut(li).weights[wi] = orig;
            g.weights[wi] = (plus - minus) / two_eps;
        }
        for bi in 0..n_b {
            let orig = work.dense_mut(li).biases[bi];
            work.dense_mut(li).biases[bi] = orig + eps;
            let plus = mean_cross_entropy(&work, batch)?;
            work.dense_mut(li).biases[bi] = orig - eps;
            let minus = mean_cross_entropy(&work, batch)?;
            work.dense_mut(li).biases[bi] = orig;
            g.biases[bi] = (plus - minus) / two_eps;
        }
        per_layer.push(Some(g));
    }
    Ok(Gradients { per_layer })
}

/// Largest relative disagreement between two gradient sets, using
/// `|a − b| / max(1e-12, |a| + |b|)` per parameter.
pub fn max_relative_error<S: Scalar>(a: &Gradients<S>, b: &Gradients<S>) -> S {
    let floor = S::from_config(1e-12);
    let mut worst = S::zero();
    for (ga, gb) in a.per_layer.iter().zip(&b.per_layer) {
        let (Some(ga), Some(gb)) = (ga, gb) else {
            continue;
        };
        for (x, y) in ga
            .weights
            .iter()
            .zip(&gb.weights)
            .chain(ga.biases.iter().zip(&gb.biases))
        {
            let err = (*x - *y).abs() / floor.max(x.abs() + y.abs());
            worst = worst.max(err);
        }
    }
    worst
}

/// Compares analytic and central-difference gradients over `batch`,
/// returning the worst per-parameter relative error.
pub fn gradient_check<S: Scalar>(model: &Model<S>, batch: &[Sample<S>], eps: S) -> Result<S> {
    let analytic = analytic_gradients(model, batch)?;
    let numeric = numeric_gradients(model, batch, eps)?;
    Ok(max_relative_error(&analytic, &numeric))
}
