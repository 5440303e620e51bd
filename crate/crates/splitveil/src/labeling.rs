//! Complement signals and label arithmetic.
//!
//! A *secure* model is trained against deliberately wrong labels. For
//! 2-class models each sample gets a complement signal bit `cs`: the stored
//! label is flipped exactly when `cs = 1`, and a prediction is read back by
//! applying the same flip again. For n-class models the signal is an offset
//! `o` and the stored label is shifted by it modulo `n`. Labels are 0-indexed
//! throughout (classes `0..n`).
//!
//! Signals are drawn once per dataset and held fixed across epochs;
//! [`SecureDataset::resample`] exists for the opt-in variant that redraws
//! them between epochs.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which kind of signal protects the labels, and how it is encoded for the
/// network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalMode {
    /// One bit per sample, encoded as a constant vector of `cs_width`
    /// entries, all 0.0 or all 1.0.
    Binary { cs_width: usize },
    /// One offset in `0..n_classes` per sample, encoded one-hot.
    Offset { n_classes: usize },
}

impl SignalMode {
    pub(crate) fn validate(self) -> Result<()> {
        match self {
            SignalMode::Binary { cs_width: 0 } => {
                Err(Error::Contract("signal width must be positive".into()))
            }
            SignalMode::Offset { n_classes } if n_classes < 2 => Err(Error::Contract(format!(
                "offset mode needs at least 2 classes, got {n_classes}"
            ))),
            _ => Ok(()),
        }
    }

    /// Width of the encoded signal vector the network sees.
    pub fn encoded_width(self) -> usize {
        match self {
            SignalMode::Binary { cs_width } => cs_width,
            SignalMode::Offset { n_classes } => n_classes,
        }
    }

    /// Signal values are drawn uniformly from `0..this`.
    fn value_range(self) -> u32 {
        match self {
            SignalMode::Binary { .. } => 2,
            SignalMode::Offset { n_classes } => n_classes as u32,
        }
    }
}

/// Draws `m` seeded uniform signal values: bits for binary mode, offsets in
/// `0..n` for offset mode. Offset mode with `n = 2` draws the exact same
/// sequence as binary mode under the same seed.
pub fn gen_signals(m: usize, mode: SignalMode, seed: u64) -> Result<Vec<u32>> {
    if m == 0 {
        return Err(Error::Contract("cannot draw signals for zero samples".into()));
    }
    mode.validate()?;
    let range = mode.value_range();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m).map(|_| rng.random_range(0..range)).collect())
}

/// Flips each binary label exactly where its signal bit is set.
///
/// The branch table spells out all four (label, cs) cases; it coincides with
/// `label XOR cs`.
pub fn new_label(labels: &[u32], signals: &[u32]) -> Result<Vec<u32>> {
    if labels.len() != signals.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} signals",
            labels.len(),
            signals.len()
        )));
    }
    labels
        .iter()
        .zip(signals)
        .map(|(&l, &cs)| match (l, cs) {
            (1, 0) => Ok(1), // keep true
            (0, 0) => Ok(0), // keep false
            (1, 1) => Ok(0), // complement true
            (0, 1) => Ok(1), // complement false
            _ => Err(Error::Contract(format!(
                "binary labeling saw label {l} / signal {cs}, both must be 0 or 1"
            ))),
        })
        .collect()
}

/// Shifts each label by its offset modulo `n`.
pub fn new_label_n(labels: &[u32], offsets: &[u32], n: usize) -> Result<Vec<u32>> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "offset labeling needs at least 2 classes, got {n}"
        )));
    }
    if labels.len() != offsets.len() {
        return Err(Error::Contract(format!(
            "{} labels but {} offsets",
            labels.len(),
            offsets.len()
        )));
    }
    let n = n as u64;
    labels
        .iter()
        .zip(offsets)
        .map(|(&l, &o)| {
            if l as u64 >= n || o as u64 >= n {
                return Err(Error::Contract(format!(
                    "label {l} / offset {o} out of range for {n} classes"
                )));
            }
            Ok(((l as u64 + o as u64) % n) as u32)
        })
        .collect()
}

/// Undoes a binary complement: `received XOR cs`.
pub fn recover_output(received: u32, cs: u32) -> Result<u32> {
    if received > 1 || cs > 1 {
        return Err(Error::Contract(format!(
            "binary recovery saw label {received} / signal {cs}, both must be 0 or 1"
        )));
    }
    Ok(received ^ cs)
}

/// Undoes an offset shift: `(received − o) mod n`.
pub fn recover_output_n(received: u32, o: u32, n: usize) -> Result<u32> {
    if n < 2 {
        return Err(Error::Contract(format!(
            "offset recovery needs at least 2 classes, got {n}"
        )));
    }
    let n = n as u64;
    if received as u64 >= n || o as u64 >= n {
        return Err(Error::Contract(format!(
            "label {received} / offset {o} out of range for {n} classes"
        )));
    }
    Ok(((received as u64 + n - o as u64) % n) as u32)
}

/// Encodes one signal value as the vector the network consumes: a broadcast
/// constant for binary mode, a one-hot row for offset mode.
pub fn encode_signal<S: Scalar>(value: u32, mode: SignalMode) -> Result<Vec<S>> {
    mode.validate()?;
    match mode {
        SignalMode::Binary { cs_width } => {
            if value > 1 {
                return Err(Error::Contract(format!(
                    "binary signal must be 0 or 1, got {value}"
                )));
            }
            let v = if value == 1 { S::one() } else { S::zero() };
            Ok(vec![v; cs_width])
        }
        SignalMode::Offset { n_classes } => {
            if value as usize >= n_classes {
                return Err(Error::Contract(format!(
                    "offset signal {value} out of range for {n_classes} classes"
                )));
            }
            let mut v = vec![S::zero(); n_classes];
            v[value as usize] = S::one();
            Ok(v)
        }
    }
}

/// A dataset bound to its signal set and flipped labels.
///
/// Construction draws the signals, computes the flipped labels, and encodes
/// each signal for the network, so the three sequences can never drift out
/// of step. Training reads `new_labels`; recovery needs `signals`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecureDataset<S: Scalar> {
    base: Dataset<S>,
    mode: SignalMode,
    seed: u64,
    signals: Vec<u32>,
    new_labels: Vec<u32>,
    encoded: Vec<Vec<S>>,
}

type SignalTables<S> = (Vec<u32>, Vec<u32>, Vec<Vec<S>>);

fn derive_tables<S: Scalar>(
    base: &Dataset<S>,
    mode: SignalMode,
    seed: u64,
) -> Result<SignalTables<S>> {
    let signals = gen_signals(base.len(), mode, seed)?;
    let new_labels = match mode {
        SignalMode::Binary { .. } => new_label(&base.labels, &signals)?,
        SignalMode::Offset { n_classes } => new_label_n(&base.labels, &signals, n_classes)?,
    };
    let encoded = signals
        .iter()
        .map(|&s| encode_signal(s, mode))
        .collect::<Result<Vec<_>>>()?;
    for i in 0..base.len() {
        let recovered = match mode {
            SignalMode::Binary { .. } => recover_output(new_labels[i], signals[i])?,
            SignalMode::Offset { n_classes } => {
                recover_output_n(new_labels[i], signals[i], n_classes)?
            }
        };
        debug_assert_eq!(recovered, base.labels[i], "labeling must be recoverable");
    }
    Ok((signals, new_labels, encoded))
}

impl<S: Scalar> SecureDataset<S> {
    /// Draws signals for `base` with `seed` and computes the flipped labels.
    ///
    /// Binary mode requires a 2-class dataset; offset mode requires the mode's
    /// class count to match the dataset's.
    pub fn relabel(base: Dataset<S>, mode: SignalMode, seed: u64) -> Result<Self> {
        match mode {
            SignalMode::Binary { .. } if base.n_classes != 2 => {
                return Err(Error::Contract(format!(
                    "binary signals need a 2-class dataset, got {} classes",
                    base.n_classes
                )));
            }
            SignalMode::Offset { n_classes } if n_classes != base.n_classes => {
                return Err(Error::Contract(format!(
                    "offset mode claims {n_classes} classes but the dataset has {}",
                    base.n_classes
                )));
            }
            _ => {}
        }
        let (signals, new_labels, encoded) = derive_tables(&base, mode, seed)?;
        Ok(Self {
            base,
            mode,
            seed,
            signals,
            new_labels,
            encoded,
        })
    }

    /// Redraws the signal set with a new seed (the per-epoch augmentation
    /// variant), recomputing the flipped labels and encodings.
    pub fn resample(&mut self, seed: u64) -> Result<()> {
        let (signals, new_labels, encoded) = derive_tables(&self.base, self.mode, seed)?;
        self.seed = seed;
        self.signals = signals;
        self.new_labels = new_labels;
        self.encoded = encoded;
        Ok(())
    }

    pub fn base(&self) -> &Dataset<S> {
        &self.base
    }

    pub fn mode(&self) -> SignalMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw signal values (bits or offsets), one per sample.
    pub fn signals(&self) -> &[u32] {
        &self.signals
    }

    /// Flipped labels the secure model trains against.
    pub fn new_labels(&self) -> &[u32] {
        &self.new_labels
    }

    /// Encoded signal vector for sample `i`.
    pub fn encoded_signal(&self, i: usize) -> &[S] {
        &self.encoded[i]
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }
}
