//! Accuracy metrics, deployment cost accounting, and the signal
//! indistinguishability probe.
//!
//! Accuracy is measured as *average accuracy*: many small trials, each
//! scoring a fixed-size random draw from the validation set, averaged.
//! The per-trial counts are kept in the report so the figure can be
//! re-derived from raw data.
//!
//! The probe asks the question an honest-but-curious server would: given
//! only the activations it receives, can a cheap learned classifier tell
//! which complement signal the client used? It fits a least-squares linear
//! separator on activations computed under both signal values and reports
//! held-out accuracy — near 0.5 means the activations carry no usable
//! trace of the signal for this trained instance.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::labeling::{encode_signal, SecureDataset, SignalMode};
use crate::leakage::linsys_solve_square;
use crate::nn::LayerSpec;
use crate::protocol::comm_cost;
use crate::scalar::Scalar;
use crate::secure::ClientHalf;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default number of trials for [`average_accuracy`].
pub const DEFAULT_TRIALS: usize = 1000;
/// Default per-trial draw size for [`average_accuracy`].
pub const DEFAULT_SAMPLE_SIZE: usize = 100;
/// Default parameter width for [`storage_cost`].
pub const DEFAULT_BITS_PER_PARAM: u64 = 64;

/// Outcome of an average-accuracy measurement, with per-trial raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// Number of independent trials.
    pub trials: usize,
    /// Validation draws scored per trial.
    pub sample_size: usize,
    /// Correct predictions per trial.
    pub correct: Vec<u32>,
    /// Incorrect predictions per trial; `correct[i] + incorrect[i]`
    /// always equals `sample_size`.
    pub incorrect: Vec<u32>,
    /// Mean of the per-trial accuracies.
    pub average_accuracy: f64,
    /// Seed that drew the trial samples.
    pub seed: u64,
}

impl AccuracyReport {
    /// Re-derives the average from the stored counts; always equals
    /// [`average_accuracy`](Self::average_accuracy) bit for bit.
    pub fn recomputed(&self) -> f64 {
        let sum: f64 = self
            .correct
            .iter()
            .zip(&self.incorrect)
            .map(|(&c, &ic)| f64::from(c) / f64::from(c + ic))
            .sum();
        sum / self.trials as f64
    }
}

/// Measures average accuracy of `predict` over `validation`.
///
/// `predict` receives a dataset index and must return the *recovered*
/// prediction for that sample — it is scored against the true (unflipped)
/// label. Each trial draws `sample_size` indices uniformly without
/// replacement; trials are independent and the whole measurement is
/// deterministic in `seed`.
pub fn average_accuracy<S: Scalar, F>(
    predict: F,
    validation: &SecureDataset<S>,
    trials: usize,
    sample_size: usize,
    seed: u64,
) -> Result<AccuracyReport>
where
    F: FnMut(usize) -> Result<u32>,
{
    let all: Vec<usize> = (0..validation.len()).collect();
    average_accuracy_over(predict, validation, &all, trials, sample_size, seed)
}

/// [`average_accuracy`] restricted to the dataset indices in `eligible` —
/// used to score accuracy separately per signal value.
pub fn average_accuracy_over<S: Scalar, F>(
    mut predict: F,
    validation: &SecureDataset<S>,
    eligible: &[usize],
    trials: usize,
    sample_size: usize,
    seed: u64,
) -> Result<AccuracyReport>
where
    F: FnMut(usize) -> Result<u32>,
{
    if trials == 0 || sample_size == 0 {
        return Err(Error::Contract(
            "trials and sample size must be positive".into(),
        ));
    }
    if sample_size > eligible.len() {
        return Err(Error::Contract(format!(
            "cannot draw {sample_size} samples from {} eligible",
            eligible.len()
        )));
    }
    if let Some(&bad) = eligible.iter().find(|&&i| i >= validation.len()) {
        return Err(Error::Contract(format!(
            "eligible index {bad} is out of range for {} samples",
            validation.len()
        )));
    }
    let truth = &validation.base().labels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut correct = Vec::with_capacity(trials);
    let mut incorrect = Vec::with_capacity(trials);
    for _ in 0..trials {
        let draw = rand::seq::index::sample(&mut rng, eligible.len(), sample_size);
        let mut c = 0u32;
        for slot in draw.iter() {
            let i = eligible[slot];
            if predict(i)? == truth[i] {
                c += 1;
            }
        }
        correct.push(c);
        incorrect.push(sample_size as u32 - c);
    }
    let sum: f64 = correct
        .iter()
        .zip(&incorrect)
        .map(|(&c, &ic)| f64::from(c) / f64::from(c + ic))
        .sum();
    Ok(AccuracyReport {
        trials,
        sample_size,
        correct,
        incorrect,
        average_accuracy: sum / trials as f64,
        seed,
    })
}

/// Storage and communication costs of a deployment, in exact integers
/// wherever the quantity is an integer.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Parameters in the published client half.
    pub param_count: u64,
    /// Bits stored per parameter.
    pub bits_per_param: u64,
    /// `param_count × bits_per_param / 8`, integer arithmetic throughout.
    pub storage_bytes: u64,
    /// Links crossing the wire per inference (0 until
    /// [`with_comm`](Self::with_comm) fills the communication side).
    pub link_count: u64,
    /// Bits per link (0 until filled).
    pub bits_per_link: u64,
    /// Channel bandwidth in bits/s (0 until filled).
    pub bandwidth_bits_per_s: u64,
    /// Seconds per inference round-trip (0 until filled).
    pub comm_seconds: f64,
}

impl CostReport {
    /// Fills the communication side of the report.
    pub fn with_comm(
        mut self,
        link_count: u64,
        bits_per_link: u64,
        bandwidth_bits_per_s: u64,
    ) -> Result<Self> {
        self.comm_seconds = comm_cost(link_count, bits_per_link, bandwidth_bits_per_s)?;
        self.link_count = link_count;
        self.bits_per_link = bits_per_link;
        self.bandwidth_bits_per_s = bandwidth_bits_per_s;
        Ok(self)
    }
}

/// Storage cost of publishing layers `1..=upto_k` at `bits_per_param` bits
/// each. `upto_k` of 0 prices an empty client half at zero bytes.
pub fn storage_cost<S: Scalar>(
    layers: &[LayerSpec<S>],
    upto_k: usize,
    bits_per_param: u64,
) -> Result<CostReport> {
    if upto_k > layers.len() {
        return Err(Error::Contract(format!(
            "cannot publish {upto_k} of {} layers",
            layers.len()
        )));
    }
    if bits_per_param == 0 {
        return Err(Error::Contract("zero bits per parameter".into()));
    }
    let param_count = crate::nn::param_count(&layers[..upto_k]);
    let storage_bytes = (u128::from(param_count) * u128::from(bits_per_param) / 8) as u64;
    Ok(CostReport {
        param_count,
        bits_per_param,
        storage_bytes,
        link_count: 0,
        bits_per_link: 0,
        bandwidth_bits_per_s: 0,
        comm_seconds: 0.0,
    })
}

/// Fits a least-squares linear separator (bias included, targets 0/1)
/// on the training rows and returns its accuracy on the test rows.
///
/// Classification thresholds the fitted response at 0.5. A singular
/// normal-equation system falls back to an escalating ridge, so the fit
/// always exists.
pub fn linear_probe(
    train_features: &[Vec<f64>],
    train_labels: &[u32],
    test_features: &[Vec<f64>],
    test_labels: &[u32],
) -> Result<f64> {
    validate_probe_rows(train_features, train_labels, "training")?;
    validate_probe_rows(test_features, test_labels, "test")?;
    let width = train_features[0].len();
    if test_features[0].len() != width {
        return Err(Error::Shape(format!(
            "training rows have {width} features, test rows have {}",
            test_features[0].len()
        )));
    }

    // Normal equations over [x, 1] rows.
    let d = width + 1;
    let mut gram = vec![vec![0.0f64; d]; d];
    let mut rhs = vec![0.0f64; d];
    let mut phi = vec![0.0f64; d];
    for (x, &y) in train_features.iter().zip(train_labels) {
        phi[..width].copy_from_slice(x);
        phi[width] = 1.0;
        for (i, row) in gram.iter_mut().enumerate() {
            for (j, g) in row.iter_mut().enumerate().skip(i) {
                *g += phi[i] * phi[j];
            }
            rhs[i] += phi[i] * f64::from(y);
        }
    }
    for i in 1..d {
        let (above, rest) = gram.split_at_mut(i);
        for (j, upper_row) in above.iter().enumerate() {
            rest[0][j] = upper_row[i];
        }
    }

    let diag_scale = gram
        .iter()
        .enumerate()
        .map(|(i, row)| row[i])
        .fold(1.0f64, f64::max);
    let mut ridge = 0.0;
    let weights = loop {
        let mut a = gram.clone();
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += ridge;
        }
        if let Some(w) = linsys_solve_square(a, rhs.clone(), 1e-12) {
            break w;
        }
        ridge = if ridge == 0.0 {
            1e-10 * diag_scale
        } else {
            ridge * 10.0
        };
    };

    let mut hits = 0usize;
    for (x, &y) in test_features.iter().zip(test_labels) {
        let response: f64 =
            x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>() + weights[width];
        let guess = u32::from(response > 0.5);
        if guess == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test_labels.len() as f64)
}

fn validate_probe_rows(features: &[Vec<f64>], labels: &[u32], side: &str) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Contract(format!("no {side} rows")));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} {side} rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    let width = features[0].len();
    if width == 0 {
        return Err(Error::Contract(format!("{side} rows have no features")));
    }
    for row in features {
        if row.len() != width {
            return Err(Error::Shape(format!(
                "ragged {side} rows: {width} vs {}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!(
                "{side} rows must be finite"
            )));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Contract(format!(
            "probe labels are binary, got {bad}"
        )));
    }
    Ok(())
}

/// Estimates how well the client half's output activations reveal the
/// complement signal.
///
/// Draws `samples` validation inputs (without replacement), computes each
/// input's activations under *both* signal values, splits the inputs
/// half/half into held-in and held-out sets — both activation rows of an
/// input stay on the same side — and reports the held-out accuracy of a
/// [`linear_probe`] trained to predict the signal. Chance level (0.5)
/// means this adversary learns nothing; the value is advisory and specific
/// to the trained instance being probed.
pub fn cs_probe(
    client: &ClientHalf<f64>,
    validation: &Dataset<f64>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if samples < 200 {
        return Err(Error::Contract(format!(
            "the probe needs at least 200 samples for a stable estimate, got {samples}"
        )));
    }
    if samples > validation.len() {
        return Err(Error::Contract(format!(
            "cannot draw {samples} probe inputs from a validation set of {}",
            validation.len()
        )));
    }
    if validation.input_dim() != client.input_dim() {
        return Err(Error::Shape(format!(
            "validation inputs have {} features, the client half expects {}",
            validation.input_dim(),
            client.input_dim()
        )));
    }
    let mode = SignalMode::Binary {
        cs_width: client.concat().cs_width,
    };
    let enc0 = encode_signal::<f64>(0, mode)?;
    let enc1 = encode_signal::<f64>(1, mode)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, validation.len(), samples).into_vec();
    chosen.shuffle(&mut rng);

    let held_in = samples / 2;
    let mut sets = [
        (Vec::with_capacity(2 * held_in), Vec::with_capacity(2 * held_in)),
        (
            Vec::with_capacity(2 * (samples - held_in)),
            Vec::with_capacity(2 * (samples - held_in)),
        ),
    ];
    for (pos, &i) in chosen.iter().enumerate() {
        let x = validation.images[i].as_slice();
        let (features, labels) = &mut sets[usize::from(pos >= held_in)];
        features.push(client.forward(x, &enc0)?.into_vec());
        labels.push(0);
        features.push(client.forward(x, &enc1)?.into_vec());
        labels.push(1);
    }
    let [(train_x, train_y), (test_x, test_y)] = sets;
    linear_probe(&train_x, &train_y, &test_x, &test_y)
}
