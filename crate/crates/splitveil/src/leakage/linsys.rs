//! The concrete reconstruction attack against a published client half.
//!
//! An adversary holding the client's parameters and an observed activation
//! vector can write one linear equation per output coordinate whose
//! pre-activation value the activation function pins down. This module
//! builds that system, classifies it (unique / underdetermined /
//! inconsistent) with rank-revealing Gaussian elimination, and scores how
//! close the adversary's best estimate lands to the true input.

use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::scalar::Scalar;
use crate::secure::ClientHalf;
use crate::tensor::relative_l2_error;

/// Relative pivot tolerance used by the shipped attack: pivots below
/// `tol × largest entry` count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// What one unknown column of an attack system stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unknown {
    /// An input coordinate (pixel index).
    Input(usize),
    /// A signal entry, when the client's first layer carries the concat
    /// point. Granting the adversary columns for these keeps the audit
    /// honest without assuming they know the signal's value.
    Signal(usize),
}

/// A dense linear system `A·x = b` with a record of what each unknown means.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem<S: Scalar> {
    /// Coefficient rows, each `provenance.len()` wide.
    pub rows: Vec<Vec<S>>,
    /// Right-hand side, one entry per row.
    pub rhs: Vec<S>,
    /// Meaning of each unknown column.
    pub provenance: Vec<Unknown>,
}

impl<S: Scalar> LinearSystem<S> {
    pub fn new(rows: Vec<Vec<S>>, rhs: Vec<S>, provenance: Vec<Unknown>) -> Result<Self> {
        if rows.len() != rhs.len() {
            return Err(Error::Contract(format!(
                "{} rows but {} right-hand-side entries",
                rows.len(),
                rhs.len()
            )));
        }
        if let Some(row) = rows.iter().find(|r| r.len() != provenance.len()) {
            return Err(Error::Shape(format!(
                "row of width {} in a system with {} unknowns",
                row.len(),
                provenance.len()
            )));
        }
        if rows.iter().flatten().chain(&rhs).any(|v| !v.is_finite()) {
            return Err(Error::Contract(
                "linear system entries must be finite".into(),
            ));
        }
        Ok(Self {
            rows,
            rhs,
            provenance,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.provenance.len()
    }
}

/// Outcome of attempting to solve an attack system.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict<S: Scalar> {
    /// Full column rank: the unknowns are pinned exactly. For an attack
    /// system this means the published half leaks its input.
    Unique(Vec<S>),
    /// More degrees of freedom than equations pin down.
    Underdetermined { rank: usize, nullity: usize },
    /// No solution exists (numerically contradictory rows).
    Inconsistent,
}

/// Builds the adversary's linear system from a published client half and an
/// observed activation vector of its **first** layer.
///
/// The first layer is the worst case: its equations are over raw input
/// coordinates. `d_c_out` must therefore be that layer's activation vector —
/// which is exactly what crosses the wire when the partition point is 1, and
/// a strictly generous assumption otherwise. Rows are emitted per output
/// coordinate according to the activation:
///
/// - `Identity`: every coordinate, `w·x = h − b`.
/// - `Relu`: positive coordinates only (`w·x = h − b` holds exactly there);
///   zeros are dropped since they pin only an inequality.
/// - `Sigmoid`: coordinates strictly inside (0, 1), via the logit
///   `w·x = ln(h/(1−h)) − b`; saturated values are dropped.
/// - `Softmax`: rejected — outputs couple all coordinates, so no per-row
///   linear equation exists.
///
/// `d_in_dim` must equal the client's declared input width; when the concat
/// point sits on the first layer, the extra signal columns become
/// [`Unknown::Signal`] unknowns.
pub fn build_attack_system<S: Scalar>(
    client: &ClientHalf<S>,
    d_c_out: &[S],
    d_in_dim: usize,
) -> Result<LinearSystem<S>> {
    let first = &client.layers()[0];
    if d_in_dim != client.input_dim() {
        return Err(Error::Contract(format!(
            "attack declares {d_in_dim} input coordinates but the client half takes {}",
            client.input_dim()
        )));
    }
    if d_c_out.len() != first.out_dim {
        return Err(Error::Shape(format!(
            "activation vector has {} entries, first layer emits {}",
            d_c_out.len(),
            first.out_dim
        )));
    }
    if let Some(i) = d_c_out.iter().position(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "activation entry {i} is not finite"
        )));
    }
    if first.activation == Activation::Softmax {
        return Err(Error::UnsupportedLayer(
            "softmax first layer admits no per-coordinate linear equations".into(),
        ));
    }
    let signal_cols = first.in_dim - d_in_dim;
    let provenance: Vec<Unknown> = (0..d_in_dim)
        .map(Unknown::Input)
        .chain((0..signal_cols).map(Unknown::Signal))
        .collect();

    let one = S::one();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (o, &h) in d_c_out.iter().enumerate() {
        let pre = match first.activation {
            Activation::Identity => Some(h),
            Activation::Relu => {
                if h < S::zero() {
                    return Err(Error::Contract(format!(
                        "coordinate {o} is negative ({h}); not a relu activation vector"
                    )));
                }
                (h > S::zero()).then_some(h)
            }
            Activation::Sigmoid => {
                if h < S::zero() || h > one {
                    return Err(Error::Contract(format!(
                        "coordinate {o} is outside [0, 1] ({h}); not a sigmoid activation vector"
                    )));
                }
                (h > S::zero() && h < one).then(|| (h / (one - h)).ln())
            }
            Activation::Softmax => unreachable!("rejected above"),
        };
        if let Some(pre) = pre {
            rows.push(first.weights[o * first.in_dim..(o + 1) * first.in_dim].to_vec());
            rhs.push(pre - first.biases[o]);
        }
    }
    LinearSystem::new(rows, rhs, provenance)
}

/// Row-echelon form of the augmented system, with enough bookkeeping to
/// answer rank, consistency, and which original rows were independent.
struct Echelon<S: Scalar> {
    aug: Vec<Vec<S>>,
    rank: usize,
    /// Original index of the row that supplied pivot `i`.
    pivot_sources: Vec<usize>,
    residual_tol: S,
}

fn eliminate<S: Scalar>(sys: &LinearSystem<S>, tol: S) -> Echelon<S> {
    let m = sys.n_rows();
    let n = sys.n_cols();
    let mut aug: Vec<Vec<S>> = sys
        .rows
        .iter()
        .zip(&sys.rhs)
        .map(|(row, &b)| {
            let mut v = row.clone();
            v.push(b);
            v
        })
        .collect();
    let mut perm: Vec<usize> = (0..m).collect();
    let a_scale = sys
        .rows
        .iter()
        .flatten()
        .fold(S::zero(), |acc, v| acc.max(v.abs()));
    let b_scale = sys.rhs.iter().fold(S::zero(), |acc, v| acc.max(v.abs()));
    let pivot_tol = tol * a_scale;
    let mut rank = 0;
    for col in 0..n {
        if rank == m {
            break;
        }
        let mut best = rank;
        for r in rank + 1..m {
            if aug[r][col].abs() > aug[best][col].abs() {
                best = r;
            }
        }
        if aug[best][col].abs() <= pivot_tol {
            continue; // column spent: no usable pivot left
        }
        aug.swap(rank, best);
        perm.swap(rank, best);
        let (top, below) = aug.split_at_mut(rank + 1);
        let pivot_row = &top[rank];
        for row in below.iter_mut() {
            let factor = row[col] / pivot_row[col];
            if factor != S::zero() {
                for c in col..=n {
                    row[c] -= factor * pivot_row[c];
                }
                row[col] = S::zero();
            }
        }
        rank += 1;
    }
    Echelon {
        aug,
        rank,
        pivot_sources: perm[..rank].to_vec(),
        residual_tol: tol * (a_scale + b_scale),
    }
}

/// Classifies a system by rank-revealing Gaussian elimination with partial
/// pivoting. Pivots (and leftover residuals) below `tol` times the system's
/// largest entry are treated as zero.
pub fn solve_or_refute<S: Scalar>(sys: &LinearSystem<S>, tol: S) -> Result<Verdict<S>> {
    if !tol.is_finite() || tol <= S::zero() {
        return Err(Error::Contract(format!(
            "rank tolerance must be positive and finite, got {tol}"
        )));
    }
    let n = sys.n_cols();
    let e = eliminate(sys, tol);
    if e.aug[e.rank..]
        .iter()
        .any(|row| row[n].abs() > e.residual_tol)
    {
        return Ok(Verdict::Inconsistent);
    }
    if e.rank < n {
        return Ok(Verdict::Underdetermined {
            rank: e.rank,
            nullity: n - e.rank,
        });
    }
    // Full column rank: every column holds a pivot, in order, so the first
    // n rows are upper triangular. Back-substitute.
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let row = &e.aug[i];
        let tail: S = row[i + 1..n]
            .iter()
            .zip(&x[i + 1..])
            .map(|(a, v)| *a * *v)
            .sum();
        x[i] = (row[n] - tail) / row[i];
    }
    Ok(Verdict::Unique(x))
}

/// Plain square solve, used for the Gram systems here and in the signal
/// probe. Returns `None` when no pivot clears `tol` times the matrix scale.
pub(crate) fn solve_square<S: Scalar>(mut a: Vec<Vec<S>>, mut b: Vec<S>, tol: S) -> Option<Vec<S>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(S::zero(), |acc, v| acc.max(v.abs()));
    let pivot_tol = tol * scale;
    for col in 0..n {
        let mut best = col;
        for r in col + 1..n {
            if a[r][col].abs() > a[best][col].abs() {
                best = r;
            }
        }
        if a[best][col].abs() <= pivot_tol {
            return None;
        }
        a.swap(col, best);
        b.swap(col, best);
        let (top, below) = a.split_at_mut(col + 1);
        let pivot_row = &top[col];
        let pivot_b = b[col];
        for (off, row) in below.iter_mut().enumerate() {
            let factor = row[col] / pivot_row[col];
            if factor != S::zero() {
                for c in col..n {
                    row[c] -= factor * pivot_row[c];
                }
                b[col + 1 + off] -= factor * pivot_b;
            }
        }
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let row = &a[i];
        let tail: S = row[i + 1..]
            .iter()
            .zip(&x[i + 1..])
            .map(|(a, v)| *a * *v)
            .sum();
        x[i] = (b[i] - tail) / row[i];
    }
    Some(x)
}

/// Minimum-norm solution of a consistent system: with `A_r` an independent
/// row subset, `x̂ = A_rᵀ (A_r A_rᵀ)⁻¹ b_r`. Returns `None` if the Gram
/// system degenerates numerically.
fn min_norm_solution<S: Scalar>(sys: &LinearSystem<S>, tol: S) -> Option<Vec<S>> {
    let e = eliminate(sys, tol);
    let r = e.rank;
    if r == 0 {
        // Zero map: the zero vector is the minimum-norm preimage.
        return Some(vec![S::zero(); sys.n_cols()]);
    }
    let ind_rows: Vec<&[S]> = e
        .pivot_sources
        .iter()
        .map(|&i| sys.rows[i].as_slice())
        .collect();
    let b_ind: Vec<S> = e.pivot_sources.iter().map(|&i| sys.rhs[i]).collect();
    let mut gram = vec![vec![S::zero(); r]; r];
    for i in 0..r {
        for j in 0..r {
            gram[i][j] = ind_rows[i]
                .iter()
                .zip(ind_rows[j])
                .map(|(a, b)| *a * *b)
                .sum();
        }
    }
    let y = solve_square(gram, b_ind, tol)?;
    let mut x = vec![S::zero(); sys.n_cols()];
    for (yi, row) in y.iter().zip(&ind_rows) {
        for (c, w) in row.iter().enumerate() {
            x[c] += *yi * *w;
        }
    }
    Some(x)
}

/// Determinant-ratio solve for small square systems, kept as an independent
/// cross-check of the elimination path. Limited to 6 unknowns because the
/// cofactor expansion is factorial.
pub fn cramer_solve<S: Scalar>(matrix: &[Vec<S>], rhs: &[S]) -> Result<Vec<S>> {
    let n = rhs.len();
    if n == 0 || n > 6 {
        return Err(Error::Contract(format!(
            "determinant-ratio solve covers 1..=6 unknowns, got {n}"
        )));
    }
    if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
        return Err(Error::Shape(format!("matrix is not {n}x{n}")));
    }
    if matrix.iter().flatten().chain(rhs).any(|v| !v.is_finite()) {
        return Err(Error::Contract("system entries must be finite".into()));
    }
    let scale = matrix
        .iter()
        .flatten()
        .fold(S::zero(), |acc, v| acc.max(v.abs()));
    let d = determinant(matrix);
    let floor = S::from_config(DEFAULT_RANK_TOL) * scale.powi(n as i32);
    if d.abs() <= floor {
        return Err(Error::Contract(
            "matrix is numerically singular; no determinant ratio exists".into(),
        ));
    }
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let mut replaced = matrix.to_vec();
        for r in 0..n {
            replaced[r][i] = rhs[r];
        }
        x.push(determinant(&replaced) / d);
    }
    Ok(x)
}

fn determinant<S: Scalar>(m: &[Vec<S>]) -> S {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    let mut acc = S::zero();
    let mut sign = S::one();
    for col in 0..n {
        let minor: Vec<Vec<S>> = m[1..]
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != col)
                    .map(|(_, v)| *v)
                    .collect()
            })
            .collect();
        acc += sign * m[0][col] * determinant(&minor);
        sign = -sign;
    }
    acc
}

/// How the full attack ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackVerdict {
    /// The input is pinned exactly — publishing this half leaks it.
    Unique,
    /// The equations leave free directions; the reported estimate is the
    /// minimum-norm guess.
    Underdetermined { rank: usize, nullity: usize },
    /// The observed vector contradicts the published parameters.
    Inconsistent,
}

/// Result of [`reconstruction_attack`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome<S: Scalar> {
    pub verdict: AttackVerdict,
    /// The adversary's input estimate, ordered by input coordinate (signal
    /// unknowns, if any, are not reported).
    pub reconstruction: Option<Vec<S>>,
    /// ‖x̂ − x‖₂ / ‖x‖₂ against `true_input`, when an estimate exists.
    pub relative_error: Option<S>,
}

/// Runs the full attack against a published client half and scores it.
///
/// `true_input` is used only for scoring — the adversary never sees it. The
/// verdict uses [`DEFAULT_RANK_TOL`]; underdetermined systems still report
/// the minimum-norm estimate so the audit can show how far the best blind
/// guess lands.
pub fn reconstruction_attack<S: Scalar>(
    client: &ClientHalf<S>,
    d_c_out: &[S],
    true_input: &[S],
) -> Result<AttackOutcome<S>> {
    if true_input.len() != client.input_dim() {
        return Err(Error::Contract(format!(
            "true input has {} coordinates, client half takes {}",
            true_input.len(),
            client.input_dim()
        )));
    }
    let sys = build_attack_system(client, d_c_out, true_input.len())?;
    let tol = S::from_config(DEFAULT_RANK_TOL);
    let input_estimate = |x: &[S]| -> Vec<S> {
        let mut est = vec![S::zero(); true_input.len()];
        for (col, unknown) in sys.provenance.iter().enumerate() {
            if let Unknown::Input(i) = unknown {
                est[*i] = x[col];
            }
        }
        est
    };
    let outcome = match solve_or_refute(&sys, tol)? {
        Verdict::Unique(x) => {
            let est = input_estimate(&x);
            let err = relative_l2_error(&est, true_input);
            AttackOutcome {
                verdict: AttackVerdict::Unique,
                reconstruction: Some(est),
                relative_error: Some(err),
            }
        }
        Verdict::Underdetermined { rank, nullity } => {
            let est = min_norm_solution(&sys, tol).map(|x| input_estimate(&x));
            let err = est.as_ref().map(|e| relative_l2_error(e, true_input));
            AttackOutcome {
                verdict: AttackVerdict::Underdetermined { rank, nullity },
                reconstruction: est,
                relative_error: err,
            }
        }
        Verdict::Inconsistent => AttackOutcome {
            verdict: AttackVerdict::Inconsistent,
            reconstruction: None,
            relative_error: None,
        },
    };
    Ok(outcome)
}
