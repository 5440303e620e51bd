//! The on-disk model container ("SDNN" files).
//!
//! One format carries full models and both partition halves. All multi-byte
//! integers are little-endian; floats are IEEE-754 f64 stored bit-exactly.
//!
//! ```text
//! magic "SDNN" | version u16 (=1) | role u8 (0 full, 1 client, 2 server)
//! | total_layers u16 | partition_k u16 (0 = unpartitioned)
//! | concat_layer u16 (0 = none) | cs_width u16 | n_classes u16
//! | layers_in_file u16
//! then per layer:
//! kind u8 (0 dense) | activation u8 (0 id, 1 relu, 2 sigmoid, 3 softmax)
//! | in_dim u32 | out_dim u32
//! | weights (out_dim·in_dim f64, row-major) | biases (out_dim f64)
//! ```
//!
//! A client file carries layers `1..=k` and must name a concat point at or
//! before `k`; a server file carries layers `k+1..=M` and never carries
//! concat metadata (the signal joins inside the client half). Layer indices
//! in the chain checks below are absolute positions in the original model,
//! so a fragment validates against the same rules as the whole.

use crate::error::{Error, Result};
use crate::nn::{Activation, ConcatSpec, DenseLayer, LayerSpec, Model};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::Cursor;
use std::path::Path;

const MAGIC: &[u8; 4] = b"SDNN";
const VERSION: u16 = 1;

/// Which part of a (possibly partitioned) model a file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Full,
    Client,
    Server,
}

impl ModelRole {
    fn code(self) -> u8 {
        match self {
            ModelRole::Full => 0,
            ModelRole::Client => 1,
            ModelRole::Server => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ModelRole::Full),
            1 => Ok(ModelRole::Client),
            2 => Ok(ModelRole::Server),
            other => Err(Error::Format(format!("unknown model role code {other}"))),
        }
    }
}

pub(crate) fn activation_code(a: Activation) -> u8 {
    match a {
        Activation::Identity => 0,
        Activation::Relu => 1,
        Activation::Sigmoid => 2,
        Activation::Softmax => 3,
    }
}

fn activation_from_code(code: u8) -> Result<Activation> {
    match code {
        0 => Ok(Activation::Identity),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Sigmoid),
        3 => Ok(Activation::Softmax),
        other => Err(Error::Format(format!("unknown activation code {other}"))),
    }
}

/// A validated in-memory image of one model file.
///
/// Construction checks every cross-field invariant the format demands, so a
/// value of this type always serializes to a well-formed file and every
/// well-formed file deserializes into one.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    role: ModelRole,
    total_layers: usize,
    partition_k: usize,
    concat: Option<ConcatSpec>,
    n_classes: usize,
    layers: Vec<DenseLayer<f64>>,
}

impl ModelFile {
    /// Validates and assembles a file image.
    ///
    /// `total_layers` is the layer count `M` of the original model;
    /// `partition_k` is 0 for full files and the split layer `k` otherwise.
    /// `layers` are the carried layers: all `M` for a full file, `1..=k` for
    /// a client file, `k+1..=M` for a server file.
    pub fn new(
        role: ModelRole,
        total_layers: usize,
        partition_k: usize,
        concat: Option<ConcatSpec>,
        n_classes: usize,
        layers: Vec<DenseLayer<f64>>,
    ) -> Result<Self> {
        if total_layers == 0 {
            return Err(Error::Consistency("model file needs at least one layer".into()));
        }
        if n_classes < 2 {
            return Err(Error::Consistency(format!(
                "model file needs at least 2 classes, got {n_classes}"
            )));
        }
        for (field, value) in [
            ("total_layers", total_layers),
            ("n_classes", n_classes),
            ("concat layer", concat.map_or(0, |c| c.layer)),
            ("cs width", concat.map_or(0, |c| c.cs_width)),
        ] {
            if value > u16::MAX as usize {
                return Err(Error::Format(format!(
                    "{field} {value} exceeds the format's u16 range"
                )));
            }
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_dim > u32::MAX as usize || layer.out_dim > u32::MAX as usize {
                return Err(Error::Format(format!(
                    "carried layer {} exceeds the format's u32 dimension range",
                    i + 1
                )));
            }
        }
        if let Some(c) = &concat {
            if c.layer == 0 || c.layer > total_layers {
                return Err(Error::Consistency(format!(
                    "concat layer {} out of range 1..={total_layers}",
                    c.layer
                )));
            }
            if c.cs_width == 0 {
                return Err(Error::Consistency(
                    "concat layer named but cs width is zero".into(),
                ));
            }
        }
        // Role-specific structure: which layers are carried, and whether
        // partition/concat metadata must be present or absent.
        let (base, expected_count) = match role {
            ModelRole::Full => {
                if partition_k != 0 {
                    return Err(Error::Consistency(format!(
                        "full-role file must not name a partition layer, got {partition_k}"
                    )));
                }
                (0, total_layers)
            }
            ModelRole::Client => {
                if partition_k == 0 || partition_k >= total_layers {
                    return Err(Error::Consistency(format!(
                        "client partition layer {partition_k} out of range 1..{total_layers}"
                    )));
                }
                let Some(c) = &concat else {
                    return Err(Error::Consistency(
                        "client-role file must name its concat point".into(),
                    ));
                };
                if c.layer > partition_k {
                    return Err(Error::Consistency(format!(
                        "concat layer {} lies beyond the client half 1..={partition_k}",
                        c.layer
                    )));
                }
                (0, partition_k)
            }
            ModelRole::Server => {
                if partition_k == 0 || partition_k >= total_layers {
                    return Err(Error::Consistency(format!(
                        "server partition layer {partition_k} out of range 1..{total_layers}"
                    )));
                }
                if concat.is_some() {
                    return Err(Error::Consistency(
                        "server-role file must not carry concat metadata".into(),
                    ));
                }
                (partition_k, total_layers - partition_k)
            }
        };
        if layers.len() != expected_count {
            return Err(Error::Consistency(format!(
                "{role:?}-role file must carry {expected_count} layers, got {}",
                layers.len()
            )));
        }
        // Chain compatibility at absolute layer indices. The first carried
        // layer's input width is free (raw input for full/client files, the
        // client-output vector for server files) unless the concat point
        // lands on it, in which case it must leave room for real inputs
        // beside the signal.
        for (off, layer) in layers.iter().enumerate() {
            let abs = base + off + 1;
            let extra = match &concat {
                Some(c) if c.layer == abs => c.cs_width,
                _ => 0,
            };
            if off == 0 {
                if extra > 0 && layer.in_dim <= extra {
                    return Err(Error::Consistency(format!(
                        "layer {abs} takes {} inputs, all consumed by the {extra}-wide signal",
                        layer.in_dim
                    )));
                }
            } else {
                let expected = layers[off - 1].out_dim + extra;
                if layer.in_dim != expected {
                    return Err(Error::Consistency(format!(
                        "layer {abs} expects {} inputs but the chain supplies {expected}",
                        layer.in_dim
                    )));
                }
            }
        }
        // Files that end at layer M end in the classifier.
        if matches!(role, ModelRole::Full | ModelRole::Server) {
            let last = layers.last().expect("count validated above");
            if last.out_dim != n_classes {
                return Err(Error::Consistency(format!(
                    "final layer emits {} values but the file claims {n_classes} classes",
                    last.out_dim
                )));
            }
            if last.activation != Activation::Softmax {
                return Err(Error::Consistency(
                    "final layer must be a softmax classifier".into(),
                ));
            }
        }
        Ok(Self {
            role,
            total_layers,
            partition_k,
            concat,
            n_classes,
            layers,
        })
    }

    /// Wraps a complete model as a full-role file.
    ///
    /// Fails on models containing convolution descriptors, which have no
    /// executable parameters to store.
    pub fn full(model: &Model<f64>) -> Result<Self> {
        let layers = model
            .layers()
            .iter()
            .enumerate()
            .map(|(i, layer)| match layer {
                LayerSpec::Dense(d) => Ok(d.clone()),
                LayerSpec::Conv(_) => Err(Error::UnsupportedLayer(format!(
                    "layer {} is a convolution descriptor and cannot be serialized",
                    i + 1
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            ModelRole::Full,
            model.layer_count(),
            0,
            model.concat(),
            model.n_classes(),
            layers,
        )
    }

    /// Reassembles the model from a full-role file.
    pub fn into_model(self) -> Result<Model<f64>> {
        if self.role != ModelRole::Full {
            return Err(Error::Contract(format!(
                "expected a full-role file, got {:?}",
                self.role
            )));
        }
        Model::new(
            self.layers.into_iter().map(LayerSpec::Dense).collect(),
            self.concat,
            self.n_classes,
        )
    }

    pub fn role(&self) -> ModelRole {
        self.role
    }

    pub fn total_layers(&self) -> usize {
        self.total_layers
    }

    /// Split layer `k`; 0 for full-role files.
    pub fn partition_k(&self) -> usize {
        self.partition_k
    }

    pub fn concat(&self) -> Option<ConcatSpec> {
        self.concat
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layers(&self) -> &[DenseLayer<f64>] {
        &self.layers
    }

    /// Consumes the file image, returning every field.
    pub fn into_parts(
        self,
    ) -> (
        ModelRole,
        usize,
        usize,
        Option<ConcatSpec>,
        usize,
        Vec<DenseLayer<f64>>,
    ) {
        (
            self.role,
            self.total_layers,
            self.partition_k,
            self.concat,
            self.n_classes,
            self.layers,
        )
    }
}

/// Encodes a file image; the inverse of [`deserialize_model`].
pub fn serialize_model(file: &ModelFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u16::<LittleEndian>(VERSION).unwrap();
    out.push(file.role.code());
    out.write_u16::<LittleEndian>(file.total_layers as u16).unwrap();
    out.write_u16::<LittleEndian>(file.partition_k as u16).unwrap();
    let (concat_layer, cs_width) = file.concat.map_or((0, 0), |c| (c.layer, c.cs_width));
    out.write_u16::<LittleEndian>(concat_layer as u16).unwrap();
    out.write_u16::<LittleEndian>(cs_width as u16).unwrap();
    out.write_u16::<LittleEndian>(file.n_classes as u16).unwrap();
    out.write_u16::<LittleEndian>(file.layers.len() as u16).unwrap();
    for layer in &file.layers {
        out.push(0); // kind: dense
        out.push(activation_code(layer.activation));
        out.write_u32::<LittleEndian>(layer.in_dim as u32).unwrap();
        out.write_u32::<LittleEndian>(layer.out_dim as u32).unwrap();
        for &w in &layer.weights {
            out.write_f64::<LittleEndian>(w).unwrap();
        }
        for &b in &layer.biases {
            out.write_f64::<LittleEndian>(b).unwrap();
        }
    }
    out
}

fn read_u16(cursor: &mut Cursor<&[u8]>, what: &str) -> Result<u16> {
    cursor
        .read_u16::<LittleEndian>()
        .map_err(|_| Error::Format(format!("model file truncated while reading {what}")))
}

fn read_u8(cursor: &mut Cursor<&[u8]>, what: &str) -> Result<u8> {
    cursor
        .read_u8()
        .map_err(|_| Error::Format(format!("model file truncated while reading {what}")))
}

fn read_u32(cursor: &mut Cursor<&[u8]>, what: &str) -> Result<u32> {
    cursor
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Format(format!("model file truncated while reading {what}")))
}

/// Decodes and fully validates a model file.
pub fn deserialize_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut cursor = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    std::io::Read::read_exact(&mut cursor, &mut magic)
        .map_err(|_| Error::Format("model file truncated while reading magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad model file magic {magic:02x?}, expected \"SDNN\""
        )));
    }
    let version = read_u16(&mut cursor, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported model file version {version}, expected {VERSION}"
        )));
    }
    let role = ModelRole::from_code(read_u8(&mut cursor, "role")?)?;
    let total_layers = read_u16(&mut cursor, "total layer count")? as usize;
    let partition_k = read_u16(&mut cursor, "partition layer")? as usize;
    let concat_layer = read_u16(&mut cursor, "concat layer")? as usize;
    let cs_width = read_u16(&mut cursor, "cs width")? as usize;
    let n_classes = read_u16(&mut cursor, "class count")? as usize;
    let layers_in_file = read_u16(&mut cursor, "carried layer count")? as usize;
    let concat = match (concat_layer, cs_width) {
        (0, 0) => None,
        (0, w) => {
            return Err(Error::Consistency(format!(
                "cs width {w} without a concat layer"
            )));
        }
        (layer, w) => Some(ConcatSpec { layer, cs_width: w }),
    };
    let mut layers = Vec::with_capacity(layers_in_file);
    for i in 1..=layers_in_file {
        let kind = read_u8(&mut cursor, "layer kind")?;
        if kind != 0 {
            return Err(Error::Format(format!(
                "unknown layer kind {kind} at carried layer {i}"
            )));
        }
        let activation = activation_from_code(read_u8(&mut cursor, "activation")?)?;
        let in_dim = read_u32(&mut cursor, "input dimension")? as usize;
        let out_dim = read_u32(&mut cursor, "output dimension")? as usize;
        // Check the remaining length before allocating, so a corrupt header
        // cannot demand gigabytes.
        let params = in_dim as u64 * out_dim as u64 + out_dim as u64;
        let needed = params.checked_mul(8).ok_or_else(|| {
            Error::Format(format!("carried layer {i} dimensions overflow"))
        })?;
        let remaining = bytes.len() as u64 - cursor.position();
        if remaining < needed {
            return Err(Error::Format(format!(
                "model file truncated in carried layer {i}: need {needed} bytes, have {remaining}"
            )));
        }
        let mut weights = vec![0.0f64; in_dim * out_dim];
        for w in &mut weights {
            *w = cursor.read_f64::<LittleEndian>().unwrap();
        }
        let mut biases = vec![0.0f64; out_dim];
        for b in &mut biases {
            *b = cursor.read_f64::<LittleEndian>().unwrap();
        }
        layers.push(DenseLayer::new(in_dim, out_dim, weights, biases, activation)?);
    }
    if cursor.position() != bytes.len() as u64 {
        return Err(Error::Format(format!(
            "model file has {} trailing bytes",
            bytes.len() as u64 - cursor.position()
        )));
    }
    ModelFile::new(role, total_layers, partition_k, concat, n_classes, layers)
}

/// Writes `file` to `path`.
pub fn write_model_file(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    std::fs::write(path, serialize_model(file))?;
    Ok(())
}

/// Reads and validates the model file at `path`.
pub fn read_model_file(path: impl AsRef<Path>) -> Result<ModelFile> {
    let bytes = std::fs::read(path)?;
    deserialize_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> DenseLayer<f64> {
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let biases = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseLayer::new(in_dim, out_dim, weights, biases, activation).unwrap()
    }

    /// A small full-role file: 3 → 2 relu, 2 → 2 softmax, no concat.
    fn tiny_full() -> ModelFile {
        let l1 = DenseLayer::new(
            3,
            2,
            vec![0.5, -1.0, 2.0, 0.0, 1.5, -0.25],
            vec![0.0, 1.0],
            Activation::Relu,
        )
        .unwrap();
        let l2 = DenseLayer::new(
            2,
            2,
            vec![1.0, 2.0, 3.0, 4.0],
            vec![-0.5, 0.5],
            Activation::Softmax,
        )
        .unwrap();
        ModelFile::new(ModelRole::Full, 2, 0, None, 2, vec![l1, l2]).unwrap()
    }

    /// A client-role file: total M=3, k=2, concat at layer 1 (width 1).
    fn tiny_client() -> ModelFile {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let l1 = dense(5, 4, Activation::Relu, &mut rng); // 4 inputs + 1 signal
        let l2 = dense(4, 3, Activation::Relu, &mut rng);
        ModelFile::new(
            ModelRole::Client,
            3,
            2,
            Some(ConcatSpec {
                layer: 1,
                cs_width: 1,
            }),
            2,
            vec![l1, l2],
        )
        .unwrap()
    }

    #[test]
    fn golden_bytes_match_the_documented_layout() {
        let file = tiny_full();
        let mut expected: Vec<u8> = Vec::new();
        expected.extend_from_slice(b"SDNN");
        expected.extend_from_slice(&1u16.to_le_bytes()); // version
        expected.push(0); // role: full
        expected.extend_from_slice(&2u16.to_le_bytes()); // total layers
        expected.extend_from_slice(&0u16.to_le_bytes()); // partition k
        expected.extend_from_slice(&0u16.to_le_bytes()); // concat layer
        expected.extend_from_slice(&0u16.to_le_bytes()); // cs width
        expected.extend_from_slice(&2u16.to_le_bytes()); // classes
        expected.extend_from_slice(&2u16.to_le_bytes()); // layers in file
        expected.push(0); // dense
        expected.push(1); // relu
        expected.extend_from_slice(&3u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        for w in [0.5f64, -1.0, 2.0, 0.0, 1.5, -0.25, 0.0, 1.0] {
            expected.extend_from_slice(&w.to_le_bytes());
        }
        expected.push(0); // dense
        expected.push(3); // softmax
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        for w in [1.0f64, 2.0, 3.0, 4.0, -0.5, 0.5] {
            expected.extend_from_slice(&w.to_le_bytes());
        }
        assert_eq!(serialize_model(&file), expected);
    }

    #[test]
    fn full_roundtrip_reconstructs_the_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layers = vec![
            dense(4, 3, Activation::Relu, &mut rng),
            dense(4, 2, Activation::Softmax, &mut rng), // 3 outputs + 1 signal
        ];
        let concat = Some(ConcatSpec {
            layer: 2,
            cs_width: 1,
        });
        let file = ModelFile::new(ModelRole::Full, 2, 0, concat, 2, layers).unwrap();
        let back = deserialize_model(&serialize_model(&file)).unwrap();
        assert_eq!(back, file);
        let model = back.into_model().unwrap();
        assert_eq!(model.layer_count(), 2);
        assert_eq!(model.concat(), concat);
    }

    #[test]
    fn roundtrip_preserves_exact_bit_patterns() {
        // Values whose identity is only visible at the bit level: a negative
        // zero and a subnormal.
        let l1 = DenseLayer::new(
            2,
            2,
            vec![-0.0, 4.9e-324, 1e-300, -1e308],
            vec![0.0, -0.0],
            Activation::Identity,
        )
        .unwrap();
        let l2 = DenseLayer::new(
            2,
            2,
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.0, 0.0],
            Activation::Softmax,
        )
        .unwrap();
        let file = ModelFile::new(ModelRole::Full, 2, 0, None, 2, vec![l1, l2]).unwrap();
        let back = deserialize_model(&serialize_model(&file)).unwrap();
        for (a, b) in file.layers().iter().zip(back.layers()) {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.biases.iter().zip(&b.biases) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn random_roundtrips_are_bitwise_across_all_roles() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..60 {
            let m = rng.random_range(2..=5usize);
            let mut fan: Vec<usize> = (0..m).map(|_| rng.random_range(1..=8)).collect();
            fan.push(rng.random_range(2..=6)); // class count
            let n_classes = fan[m];
            let concat = if rng.random_bool(0.7) {
                Some(ConcatSpec {
                    layer: rng.random_range(1..=m - 1),
                    cs_width: rng.random_range(1..=3),
                })
            } else {
                None
            };
            let build = |rng: &mut ChaCha8Rng| -> Vec<DenseLayer<f64>> {
                (0..m)
                    .map(|i| {
                        let extra = match &concat {
                            Some(c) if c.layer == i + 1 => c.cs_width,
                            _ => 0,
                        };
                        let act = if i == m - 1 {
                            Activation::Softmax
                        } else {
                            [Activation::Identity, Activation::Relu, Activation::Sigmoid]
                                [rng.random_range(0..3)]
                        };
                        dense(fan[i] + extra, fan[i + 1], act, rng)
                    })
                    .collect()
            };
            let layers = build(&mut rng);
            let file = match trial % 3 {
                0 => ModelFile::new(ModelRole::Full, m, 0, concat, n_classes, layers),
                1 => {
                    // Client files require a concat point; invent one at the
                    // input when the model was generated without.
                    let concat = concat.unwrap_or(ConcatSpec {
                        layer: 1,
                        cs_width: 1,
                    });
                    let k = rng.random_range(concat.layer..=m - 1);
                    let mut layers = layers;
                    layers.truncate(k);
                    let expected_in =
                        fan[0] + if concat.layer == 1 { concat.cs_width } else { 0 };
                    if layers[0].in_dim != expected_in {
                        let mut r = ChaCha8Rng::seed_from_u64(trial);
                        layers[0] = dense(expected_in, fan[1], Activation::Relu, &mut r);
                    }
                    ModelFile::new(ModelRole::Client, m, k, Some(concat), n_classes, layers)
                }
                _ => {
                    let k = rng.random_range(concat.map_or(1, |c| c.layer)..=m - 1);
                    let mut layers = layers;
                    layers.drain(..k);
                    ModelFile::new(ModelRole::Server, m, k, None, n_classes, layers)
                }
            }
            .unwrap();
            let bytes = serialize_model(&file);
            let back = deserialize_model(&bytes).unwrap();
            assert_eq!(back, file, "trial {trial}");
            for (a, b) in file.layers().iter().zip(back.layers()) {
                assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| x.to_bits()
                    == y.to_bits()));
                assert!(a.biases.iter().zip(&b.biases).all(|(x, y)| x.to_bits()
                    == y.to_bits()));
            }
        }
    }

    #[test]
    fn version_two_is_rejected() {
        let mut bytes = serialize_model(&tiny_full());
        bytes[4] = 2;
        assert!(matches!(deserialize_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = serialize_model(&tiny_full());
        bytes[0] = b'X';
        assert!(matches!(deserialize_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = serialize_model(&tiny_full());
        bytes.push(0);
        assert!(matches!(deserialize_model(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_rejected() {
        let bytes = serialize_model(&tiny_full());
        for cut in [3, 10, 19, 25, bytes.len() - 1] {
            assert!(
                matches!(deserialize_model(&bytes[..cut]), Err(Error::Format(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn unknown_codes_are_format_errors() {
        let valid = serialize_model(&tiny_full());
        let mut bad_role = valid.clone();
        bad_role[6] = 9;
        assert!(matches!(deserialize_model(&bad_role), Err(Error::Format(_))));
        let mut bad_kind = valid.clone();
        bad_kind[19] = 1; // first layer record starts right after the header
        assert!(matches!(deserialize_model(&bad_kind), Err(Error::Format(_))));
        let mut bad_act = valid;
        bad_act[20] = 7;
        assert!(matches!(deserialize_model(&bad_act), Err(Error::Format(_))));
    }

    #[test]
    fn cs_width_without_concat_layer_is_inconsistent() {
        let mut bytes = serialize_model(&tiny_full());
        bytes[13] = 1; // cs_width field, concat_layer still 0
        assert!(matches!(
            deserialize_model(&bytes),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn client_file_carrying_layers_beyond_k_is_inconsistent() {
        // Corrupt fixture: a valid client file (k=2 of 3) whose header is
        // patched to claim three carried layers, with a third layer appended.
        let file = tiny_client();
        let mut bytes = serialize_model(&file);
        bytes[17] = 3; // layers_in_file
        let extra = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            dense(3, 2, Activation::Softmax, &mut rng)
        };
        bytes.push(0);
        bytes.push(3);
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        for w in extra.weights.iter().chain(&extra.biases) {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        assert!(matches!(
            deserialize_model(&bytes),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn role_field_rules_are_enforced() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l1 = dense(5, 4, Activation::Relu, &mut rng);
        let l2 = dense(4, 3, Activation::Relu, &mut rng);
        let concat = Some(ConcatSpec {
            layer: 1,
            cs_width: 1,
        });
        // Full role must not name a partition layer.
        let softmax_pair = || {
            let mut r = ChaCha8Rng::seed_from_u64(12);
            vec![
                dense(3, 2, Activation::Relu, &mut r),
                dense(2, 2, Activation::Softmax, &mut r),
            ]
        };
        assert!(matches!(
            ModelFile::new(ModelRole::Full, 2, 1, None, 2, softmax_pair()),
            Err(Error::Consistency(_))
        ));
        // Client role requires a concat point at or before k.
        assert!(matches!(
            ModelFile::new(ModelRole::Client, 3, 2, None, 2, vec![l1.clone(), l2.clone()]),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            ModelFile::new(
                ModelRole::Client,
                3,
                1,
                Some(ConcatSpec {
                    layer: 2,
                    cs_width: 1
                }),
                2,
                vec![l1.clone()]
            ),
            Err(Error::Consistency(_))
        ));
        // Server role must not carry concat metadata and must end in softmax.
        assert!(matches!(
            ModelFile::new(ModelRole::Server, 3, 1, concat, 2, vec![l2.clone(), {
                let mut r = ChaCha8Rng::seed_from_u64(13);
                dense(3, 2, Activation::Softmax, &mut r)
            }]),
            Err(Error::Consistency(_))
        ));
        assert!(matches!(
            ModelFile::new(ModelRole::Server, 3, 2, None, 2, vec![l2]),
            Err(Error::Consistency(_))
        ));
        // k beyond the model is out of range for either half.
        assert!(matches!(
            ModelFile::new(ModelRole::Client, 2, 2, concat, 2, vec![l1]),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn chain_mismatch_is_inconsistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let l1 = dense(3, 4, Activation::Relu, &mut rng);
        let l2 = dense(5, 2, Activation::Softmax, &mut rng); // expects 4
        assert!(matches!(
            ModelFile::new(ModelRole::Full, 2, 0, None, 2, vec![l1, l2]),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn into_model_requires_the_full_role() {
        assert!(matches!(
            tiny_client().into_model(),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn full_wrapper_roundtrips_through_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layers = vec![
            LayerSpec::Dense(dense(4, 3, Activation::Relu, &mut rng)),
            LayerSpec::Dense(dense(3, 2, Activation::Softmax, &mut rng)),
        ];
        let model = Model::new(layers, None, 2).unwrap();
        let file = ModelFile::full(&model).unwrap();
        let back = deserialize_model(&serialize_model(&file))
            .unwrap()
            .into_model()
            .unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn file_io_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sdnn");
        let file = tiny_client();
        write_model_file(&path, &file).unwrap();
        assert_eq!(read_model_file(&path).unwrap(), file);
    }
}
