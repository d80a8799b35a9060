//! Dense feed-forward network with exact analytic backpropagation.
//!
//! The model is a stack of affine layers with ReLU between them and an
//! identity output, which keeps the gradient computation exact and easy to
//! verify against finite differences. The same `ParamSet` drives both the
//! live student and the frozen snapshot teachers, so deep copies must never
//! share storage (plain `Clone` guarantees that here).

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Magic bytes at the start of a serialized `ParamSet`.
pub const PARAMS_MAGIC: [u8; 4] = *b"MRKD";
/// Current `ParamSet` binary format version.
pub const PARAMS_VERSION: u32 = 1;

// Caps on declared sizes when reading untrusted parameter files; far above
// anything this crate trains but small enough to fail fast on garbage.
const MAX_LAYERS: usize = 1024;
const MAX_LAYER_ELEMENTS: usize = 100_000_000;

/// One affine layer: `weight` is `[out x in]`, `bias` has length `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Raw class scores from the output layer of a model, length >= 2, finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::InvalidData(format!(
                "logit vector needs at least 2 classes, got {}",
                z.len()
            )));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("logits must be finite".into()));
        }
        Ok(Self(z))
    }

    pub fn from_row(row: &[f64]) -> Result<Self> {
        Self::new(row.to_vec())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Parameters of a dense ReLU network. Layer shapes chain:
/// layer `k`'s output width equals layer `k+1`'s input width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layers: Vec<Layer>,
}

/// Per-layer pre- and post-activation values cached by [`forward`] for the
/// matching [`backward`] call. `inputs` keeps the batch that produced it.
#[derive(Debug, Clone)]
pub struct BatchActivations {
    inputs: Matrix,
    /// `pre[k]` holds layer `k`'s affine output before ReLU.
    pre: Vec<Matrix>,
    /// `post[k]` holds layer `k`'s output after its activation.
    post: Vec<Matrix>,
}

impl ParamSet {
    /// Seeded He-normal initialization: weights are drawn from
    /// `N(0, 2 / fan_in)`, biases start at zero. `topology` lists the widths
    /// `[input, hidden.., output]`, so it needs at least two entries.
    pub fn init(topology: &[usize], seed: u64) -> Result<Self> {
        if topology.len() < 2 {
            return Err(Error::InvalidConfig(
                "topology must list input and output widths".into(),
            ));
        }
        if topology.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(topology.len() - 1);
        for pair in topology.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is positive");
            let mut weight = Matrix::zeros(fan_out, fan_in);
            for w in weight.as_mut_slice() {
                *w = normal.sample(&mut rng);
            }
            layers.push(Layer {
                weight,
                bias: vec![0.0; fan_out],
            });
        }
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let set = Self { layers };
        set.validate()?;
        Ok(set)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    /// Widths `[input, hidden.., output]`.
    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.input_dim()];
        t.extend(self.layers.iter().map(|l| l.weight.rows()));
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("parameter set has no layers".into()));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {k}: bias length {} vs weight rows {}",
                    layer.bias.len(),
                    layer.weight.rows()
                )));
            }
            if !layer.weight.is_finite() || !layer.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} has non-finite values")));
            }
            if k > 0 && self.layers[k - 1].weight.rows() != layer.weight.cols() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {} outputs {} values but layer {k} expects {}",
                    k - 1,
                    self.layers[k - 1].weight.rows(),
                    layer.weight.cols()
                )));
            }
        }
        Ok(())
    }

    /// Same shapes, all values zero. Used for gradients and momentum buffers.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Visits every parameter of `self` and `other` pairwise.
    pub fn zip_apply(&mut self, other: &ParamSet, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        if self.topology() != other.topology() {
            return Err(Error::DimensionMismatch(
                "parameter sets have different topologies".into(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, &y) in a.weight.as_mut_slice().iter_mut().zip(b.weight.as_slice()) {
                f(x, y);
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                f(x, y);
            }
        }
        Ok(())
    }

    /// Flat view of all parameters, weights then bias per layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) for a matching topology.
    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let need: usize = self
            .layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum();
        if flat.len() != need {
            return Err(Error::DimensionMismatch(format!(
                "flat buffer has {} values, parameters need {need}",
                flat.len()
            )));
        }
        let mut i = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[i..i + w.len()]);
            i += w.len();
            let b = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + b]);
            i += b;
        }
        Ok(())
    }

    /// Writes the versioned binary layout: magic, version, layer count, then
    /// per layer `rows: u64, cols: u64`, row-major weights, biases, all
    /// little-endian `f64`. Round trips are bit-exact.
    pub fn to_writer<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&PARAMS_MAGIC)?;
        w.write_all(&PARAMS_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for layer in &self.layers {
            w.write_all(&(layer.weight.rows() as u64).to_le_bytes())?;
            w.write_all(&(layer.weight.cols() as u64).to_le_bytes())?;
            for v in layer.weight.as_slice() {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in &layer.bias {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("parameter file truncated before magic".into()))?;
        if magic != PARAMS_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {magic:?}, expected {PARAMS_MAGIC:?}"
            )));
        }
        let version = read_u32(r)?;
        if version != PARAMS_VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter format version {version}"
            )));
        }
        let count = read_u32(r)? as usize;
        if count == 0 {
            return Err(Error::Format("parameter file declares zero layers".into()));
        }
        if count > MAX_LAYERS {
            return Err(Error::Format(format!(
                "parameter file declares {count} layers, limit is {MAX_LAYERS}"
            )));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let elements = rows.checked_mul(cols).filter(|&n| n <= MAX_LAYER_ELEMENTS);
            let Some(elements) = elements else {
                return Err(Error::Format(format!(
                    "implausible layer shape {rows}x{cols}"
                )));
            };
            let mut weight = vec![0.0; elements];
            read_f64_into(r, &mut weight)?;
            let mut bias = vec![0.0; rows];
            read_f64_into(r, &mut bias)?;
            layers.push(Layer {
                weight: Matrix::from_vec(rows, cols, weight)?,
                bias,
            });
        }
        Self::from_layers(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut cursor = std::io::Cursor::new(&bytes);
        let set = Self::from_reader(&mut cursor)?;
        if cursor.position() != bytes.len() as u64 {
            return Err(Error::Format("trailing bytes after parameter data".into()));
        }
        Ok(set)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("parameter file truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("parameter file truncated".into()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64_into<R: Read>(r: &mut R, out: &mut [f64]) -> Result<()> {
    let mut buf = [0u8; 8];
    for v in out {
        r.read_exact(&mut buf)
            .map_err(|_| Error::Format("parameter file truncated".into()))?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}

impl BatchActivations {
    pub fn batch_size(&self) -> usize {
        self.inputs.rows()
    }

    pub fn logits(&self) -> &Matrix {
        &self.post[self.post.len() - 1]
    }
}

/// Runs the batch through the network: `z_k = a_{k-1} W_k^T + b_k`, ReLU
/// between layers, identity at the output. Returns the logits and the cache
/// needed by [`backward`].
pub fn forward(params: &ParamSet, inputs: &Matrix) -> Result<(Matrix, BatchActivations)> {
    params.validate()?;
    if inputs.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input width {} does not match first layer width {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    if inputs.rows() == 0 {
        return Err(Error::InvalidData("empty batch".into()));
    }

    let last = params.num_layers() - 1;
    let mut pre = Vec::with_capacity(params.num_layers());
    let mut post = Vec::with_capacity(params.num_layers());
    let mut current = inputs.clone();
    for (k, layer) in params.layers().iter().enumerate() {
        let mut z = current.mul_transpose_b(&layer.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                *v += b;
            }
        }
        pre.push(z.clone());
        if k < last {
            for v in z.as_mut_slice() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        post.push(z.clone());
        current = z;
    }

    let logits = post[last].clone();
    if !logits.is_finite() {
        return Err(Error::NonFinite("forward produced non-finite logits".into()));
    }
    Ok((
        logits,
        BatchActivations {
            inputs: inputs.clone(),
            pre,
            post,
        },
    ))
}

/// Backpropagates `d_logits` (one row per sample, `d loss_i / d z_i`) through
/// the cached activations and returns the gradient of the batch-mean loss for
/// every weight and bias. ReLU uses the zero subgradient at the kink.
pub fn backward(params: &ParamSet, cache: &BatchActivations, d_logits: &Matrix) -> Result<ParamSet> {
    let batch = cache.batch_size();
    let layer_count = params.num_layers();
    if cache.pre.len() != layer_count || cache.inputs.cols() != params.input_dim() {
        return Err(Error::DimensionMismatch(
            "activation cache does not match this parameter set".into(),
        ));
    }
    for (k, layer) in params.layers().iter().enumerate() {
        if cache.pre[k].rows() != batch || cache.pre[k].cols() != layer.weight.rows() {
            return Err(Error::DimensionMismatch(format!(
                "cached layer {k} activations have shape {}x{}, expected {}x{}",
                cache.pre[k].rows(),
                cache.pre[k].cols(),
                batch,
                layer.weight.rows()
            )));
        }
    }
    if d_logits.rows() != batch || d_logits.cols() != params.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "d_logits shape {}x{} does not match batch {batch} x outputs {}",
            d_logits.rows(),
            d_logits.cols(),
            params.output_dim()
        )));
    }

    let scale = 1.0 / batch as f64;
    let mut grads = params.zeros_like();
    let mut delta = d_logits.clone();
    for k in (0..layer_count).rev() {
        let layer_input = if k == 0 { &cache.inputs } else { &cache.post[k - 1] };

        // dW = delta^T * input / B, db = column means of delta
        let mut dw = delta.transpose_mul(layer_input)?;
        for v in dw.as_mut_slice() {
            *v *= scale;
        }
        let layer_grads = &mut grads.layers_mut()[k];
        layer_grads.weight = dw;
        for r in 0..batch {
            for (g, d) in layer_grads.bias.iter_mut().zip(delta.row(r)) {
                *g += d * scale;
            }
        }

        if k > 0 {
            let mut prev = delta.mul(&params.layers()[k].weight)?;
            let pre = &cache.pre[k - 1];
            for r in 0..batch {
                for (d, z) in prev.row_mut(r).iter_mut().zip(pre.row(r)) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = prev;
        }
    }
    Ok(grads)
}
