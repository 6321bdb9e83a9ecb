//! Small multilayer perceptrons: initialization, forward pass, analytic
//! backpropagation, Adam and the parameter wire format.
//!
//! Parameters are stored as `f32`. Dot products, batch sums and optimizer
//! moments are accumulated in `f64` and rounded when written back. Forward
//! caches keep their activations in `f64` so that gradients are not polluted
//! by intermediate rounding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("forward cache does not match these parameters")]
    StaleCache,
    #[error("non-finite gradient in layer {layer}")]
    NonFiniteGradient { layer: usize },
    #[error("non-finite value in batch")]
    NonFiniteBatch,
    #[error("batch must have at least one row")]
    EmptyBatch,
    #[error("parameter decode error: {0}")]
    Decode(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation's output value.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

/// Layer sizes and activations of a fully connected network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl MlpArch {
    pub fn new(
        input_dim: usize,
        hidden_layers: Vec<usize>,
        output_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let arch = Self {
            input_dim,
            hidden_layers,
            output_dim,
            hidden_activation,
            output_activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers.contains(&0) {
            return Err(NnError::InvalidArch(format!(
                "all dimensions must be >= 1 (got {} -> {:?} -> {})",
                self.input_dim, self.hidden_layers, self.output_dim
            )));
        }
        Ok(())
    }

    /// 64 -> 256 -> 256 -> 784, tanh throughout.
    pub fn generator_default() -> Self {
        Self {
            input_dim: 64,
            hidden_layers: vec![256, 256],
            output_dim: 784,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Tanh,
        }
    }

    /// Mirror of the default generator with a single sigmoid output.
    pub fn discriminator_default() -> Self {
        Self {
            input_dim: 784,
            hidden_layers: vec![256, 256],
            output_dim: 1,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Sigmoid,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.hidden_layers.len() + 1
    }

    /// `(rows, cols)` = `(fan_out, fan_in)` for each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layer_count() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }
}

/// One dense layer; `weights` is row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            biases: vec![0.0; rows],
        }
    }

    fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub arch: MlpArch,
    pub layers: Vec<Layer>,
}

/// Parameter gradients, shaped like [`MlpParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }
}

/// A row-major `rows x cols` matrix of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Batch {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 {
            return Err(NnError::EmptyBatch);
        }
        if data.len() != rows * cols {
            return Err(NnError::Dimension {
                what: "batch data",
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteBatch);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(NnError::Dimension {
                    what: "batch row",
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Stacks `other` below `self`.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        if self.cols != other.cols {
            return Err(NnError::Dimension {
                what: "batch concat",
                expected: self.cols,
                found: other.cols,
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Batch {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }
}

/// Activations retained by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    arch: MlpArch,
    rows: usize,
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Network output in full precision.
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Network output rounded to `f32`, as a batch.
    pub fn output_batch(&self) -> Batch {
        Batch {
            rows: self.rows,
            cols: self.arch.output_dim,
            data: self.output().iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    /// Batch-mean gradients of the parameters.
    pub grads: Gradients,
    /// Per-row gradient with respect to the network input.
    pub input_grad: Vec<f64>,
}

impl MlpParams {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn init(arch: &MlpArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let bound = 1.0 / (cols as f64).sqrt();
                let weights = (0..rows * cols)
                    .map(|_| rng.random_range(-bound..=bound) as f32)
                    .collect();
                Layer {
                    rows,
                    cols,
                    weights,
                    biases: vec![0.0; rows],
                }
            })
            .collect();
        Ok(Self {
            arch: arch.clone(),
            layers,
        })
    }

    pub fn zeros(arch: &MlpArch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch: arch.clone(),
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(r, c)| Layer::zeros(r, c))
                .collect(),
        })
    }

    /// Builds parameters from explicit layers, checking them against `arch`.
    pub fn from_layers(arch: MlpArch, layers: Vec<Layer>) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(NnError::Dimension {
                what: "layer count",
                expected: shapes.len(),
                found: layers.len(),
            });
        }
        for ((rows, cols), layer) in shapes.iter().zip(&layers) {
            if layer.rows != *rows || layer.cols != *cols {
                return Err(NnError::Dimension {
                    what: "layer shape",
                    expected: rows * cols,
                    found: layer.rows * layer.cols,
                });
            }
            if layer.weights.len() != rows * cols || layer.biases.len() != *rows {
                return Err(NnError::Dimension {
                    what: "layer storage",
                    expected: rows * cols + rows,
                    found: layer.len(),
                });
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    pub fn forward(&self, batch: &Batch) -> Result<ForwardCache> {
        if batch.cols != self.arch.input_dim {
            return Err(NnError::Dimension {
                what: "forward input width",
                expected: self.arch.input_dim,
                found: batch.cols,
            });
        }
        let rows = batch.rows;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.data.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>());
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.arch.activation(l);
            let input = &activations[l];
            let weights: Vec<f64> = layer.weights.iter().map(|&w| f64::from(w)).collect();
            let mut out = vec![0.0f64; rows * layer.rows];
            par::for_each_chunk_mut(&mut out, layer.rows, layer.rows * layer.cols, |r, out_row| {
                let x = &input[r * layer.cols..(r + 1) * layer.cols];
                for (o, y) in out_row.iter_mut().enumerate() {
                    let w = &weights[o * layer.cols..(o + 1) * layer.cols];
                    *y = act.apply(f64::from(layer.biases[o]) + dot(w, x));
                }
            });
            activations.push(out);
        }
        Ok(ForwardCache {
            arch: self.arch.clone(),
            rows,
            activations,
        })
    }

    /// Convenience wrapper returning only the rounded output.
    pub fn predict(&self, batch: &Batch) -> Result<Batch> {
        Ok(self.forward(batch)?.output_batch())
    }

    /// Backpropagates `output_grad` (per row, `rows x output_dim`): the
    /// derivative of each row's loss term with respect to that row's output.
    /// Parameter gradients are averaged over rows.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<Backprop> {
        if cache.arch != self.arch || cache.activations.len() != self.layers.len() + 1 {
            return Err(NnError::StaleCache);
        }
        let rows = cache.rows;
        if output_grad.len() != rows * self.arch.output_dim {
            return Err(NnError::Dimension {
                what: "output gradient",
                expected: rows * self.arch.output_dim,
                found: output_grad.len(),
            });
        }
        let inv_rows = 1.0 / rows as f64;
        let last = self.layers.len() - 1;
        let out_act = self.arch.activation(last);
        let mut delta: Vec<f64> = output_grad
            .iter()
            .zip(&cache.activations[last + 1])
            .map(|(&g, &y)| g * out_act.derivative_from_output(y))
            .collect();

        let mut grads = Gradients::zeros_like(self);
        let mut input_grad = Vec::new();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.activations[l];
            let g = &mut grads.layers[l];

            // d/dW[o][i] = mean_r delta[r][o] * x[r][i]; one chunk per output row.
            let mut wg = vec![0.0f32; layer.rows * layer.cols];
            par::for_each_chunk_mut(&mut wg, layer.cols, rows * layer.cols, |o, gw| {
                let mut acc = vec![0.0f64; layer.cols];
                for r in 0..rows {
                    let d = delta[r * layer.rows + o];
                    if d != 0.0 {
                        let xr = &x[r * layer.cols..(r + 1) * layer.cols];
                        for (a, &xi) in acc.iter_mut().zip(xr) {
                            *a += d * xi;
                        }
                    }
                }
                for (dst, a) in gw.iter_mut().zip(acc) {
                    *dst = (a * inv_rows) as f32;
                }
            });
            g.weights = wg;
            for o in 0..layer.rows {
                let s: f64 = (0..rows).map(|r| delta[r * layer.rows + o]).sum();
                g.biases[o] = (s * inv_rows) as f32;
            }

            // Propagate to this layer's input.
            let prev_act = if l > 0 {
                Some(self.arch.activation(l - 1))
            } else {
                None
            };
            let weights: Vec<f64> = layer.weights.iter().map(|&w| f64::from(w)).collect();
            let mut next = vec![0.0f64; rows * layer.cols];
            par::for_each_chunk_mut(&mut next, layer.cols, layer.rows * layer.cols, |r, nd| {
                let dr = &delta[r * layer.rows..(r + 1) * layer.rows];
                for (o, &d) in dr.iter().enumerate() {
                    if d != 0.0 {
                        let w = &weights[o * layer.cols..(o + 1) * layer.cols];
                        for (n, &wi) in nd.iter_mut().zip(w) {
                            *n += wi * d;
                        }
                    }
                }
                if let Some(act) = prev_act {
                    let xr = &x[r * layer.cols..(r + 1) * layer.cols];
                    for (n, &xi) in nd.iter_mut().zip(xr) {
                        *n *= act.derivative_from_output(xi);
                    }
                }
            });
            if l == 0 {
                input_grad = next;
            } else {
                delta = next;
            }
        }
        Ok(Backprop { grads, input_grad })
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(params: &MlpParams, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.layers.iter().map(|l| vec![0.0; l.len()]).collect();
        Self {
            lr,
            beta1: Self::DEFAULT_BETA1,
            beta2: Self::DEFAULT_BETA2,
            epsilon: Self::DEFAULT_EPSILON,
            t: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient entry
/// is non-finite.
pub fn adam_step(params: &mut MlpParams, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.layers.len() != params.layers.len() || state.first_moment.len() != params.layers.len() {
        return Err(NnError::Dimension {
            what: "adam layer count",
            expected: params.layers.len(),
            found: grads.layers.len(),
        });
    }
    for (i, (p, g)) in params.layers.iter().zip(&grads.layers).enumerate() {
        if g.weights.len() != p.weights.len()
            || g.biases.len() != p.biases.len()
            || state.first_moment[i].len() != p.len()
        {
            return Err(NnError::Dimension {
                what: "adam layer shape",
                expected: p.len(),
                found: g.len(),
            });
        }
        if !g.is_finite() {
            return Err(NnError::NonFiniteGradient { layer: i });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.lr);
    for (l, (p, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
        let m = &mut state.first_moment[l];
        let v = &mut state.second_moment[l];
        let values = p.weights.iter_mut().chain(p.biases.iter_mut());
        let gvals = g.weights.iter().chain(&g.biases);
        for (((w, &gi), mi), vi) in values.zip(gvals).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gi = f64::from(gi);
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = (f64::from(*w) - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
        }
    }
    Ok(())
}

/// Encodes parameters: u32 BE layer count, then per layer u32 BE rows and
/// cols followed by the row-major weights and the biases as `f32` LE.
pub fn serialize_params(params: &MlpParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + params.layers.len() * 8 + params.param_count() * 4);
    out.extend_from_slice(&(params.layers.len() as u32).to_be_bytes());
    for layer in &params.layers {
        out.extend_from_slice(&(layer.rows as u32).to_be_bytes());
        out.extend_from_slice(&(layer.cols as u32).to_be_bytes());
        for v in layer.weights.iter().chain(&layer.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decodes [`serialize_params`] output. The byte format carries shapes only,
/// so the caller supplies the activations for the network's role.
pub fn deserialize_params(
    bytes: &[u8],
    hidden_activation: Activation,
    output_activation: Activation,
) -> Result<MlpParams> {
    let decode_err = |m: String| NnError::Decode(m);
    let mut cursor = bytes;
    let take_u32 = |cursor: &mut &[u8], what: &str| -> Result<u32> {
        if cursor.len() < 4 {
            return Err(decode_err(format!("truncated while reading {what}")));
        }
        let (head, rest) = cursor.split_at(4);
        *cursor = rest;
        Ok(u32::from_be_bytes([head[0], head[1], head[2], head[3]]))
    };
    if bytes.is_empty() {
        return Err(NnError::Decode("empty payload".into()));
    }
    let count = take_u32(&mut cursor, "layer count")? as usize;
    if count == 0 {
        return Err(NnError::Decode("zero layers".into()));
    }
    let mut layers = Vec::with_capacity(count.min(64));
    for i in 0..count {
        let rows = take_u32(&mut cursor, "layer rows")? as usize;
        let cols = take_u32(&mut cursor, "layer cols")? as usize;
        if rows == 0 || cols == 0 {
            return Err(NnError::Decode(format!("layer {i} has a zero dimension")));
        }
        if let Some(prev) = layers.last() {
            let prev: &Layer = prev;
            if prev.rows != cols {
                return Err(NnError::Decode(format!(
                    "layer {i} expects {cols} inputs but previous layer has {} outputs",
                    prev.rows
                )));
            }
        }
        let elems = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_add(rows))
            .ok_or_else(|| NnError::Decode(format!("layer {i} element count overflows")))?;
        let nbytes = elems
            .checked_mul(4)
            .ok_or_else(|| NnError::Decode(format!("layer {i} byte count overflows")))?;
        if cursor.len() < nbytes {
            return Err(NnError::Decode(format!(
                "layer {i} declares {elems} elements ({nbytes} bytes) but only {} bytes remain",
                cursor.len()
            )));
        }
        let (body, rest) = cursor.split_at(nbytes);
        cursor = rest;
        let mut vals = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        let weights: Vec<f32> = vals.by_ref().take(rows * cols).collect();
        let biases: Vec<f32> = vals.collect();
        layers.push(Layer {
            rows,
            cols,
            weights,
            biases,
        });
    }
    if !cursor.is_empty() {
        return Err(NnError::Decode(format!("{} trailing bytes", cursor.len())));
    }
    let arch = MlpArch {
        input_dim: layers[0].cols,
        hidden_layers: layers[..count - 1].iter().map(|l| l.rows).collect(),
        output_dim: layers[count - 1].rows,
        hidden_activation,
        output_activation,
    };
    Ok(MlpParams { arch, layers })
}

/// Dot product with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_net(w: f32, b: f32, act: Activation) -> MlpParams {
        let arch = MlpArch::new(1, vec![], 1, act, act).unwrap();
        MlpParams::from_layers(
            arch,
            vec![Layer {
                rows: 1,
                cols: 1,
                weights: vec![w],
                biases: vec![b],
            }],
        )
        .unwrap()
    }

    fn one(x: f32) -> Batch {
        Batch::new(1, 1, vec![x]).unwrap()
    }

    #[test]
    fn init_bias_is_zero_and_deterministic() {
        let arch = MlpArch::new(1, vec![], 1, Activation::Linear, Activation::Linear).unwrap();
        let p = MlpParams::init(&arch, 7).unwrap();
        assert_eq!(p.layers[0].biases, vec![0.0]);
        let a = MlpParams::init(&MlpArch::generator_default(), 3).unwrap();
        let b = MlpParams::init(&MlpArch::generator_default(), 3).unwrap();
        assert_eq!(serialize_params(&a), serialize_params(&b));
    }

    #[test]
    fn default_generator_shapes() {
        let p = MlpParams::init(&MlpArch::generator_default(), 0).unwrap();
        let shapes: Vec<_> = p.layers.iter().map(|l| (l.rows, l.cols)).collect();
        assert_eq!(shapes, vec![(256, 64), (256, 256), (784, 256)]);
        assert_eq!(p.layers.len(), 3);
        for l in &p.layers {
            let bound = 1.0 / (l.cols as f32).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert_eq!(l.biases.len(), l.rows);
        }
    }

    #[test]
    fn invalid_arch_rejected() {
        assert!(MlpArch::new(0, vec![], 1, Activation::Tanh, Activation::Tanh).is_err());
        assert!(MlpArch::new(2, vec![3, 0], 1, Activation::Tanh, Activation::Tanh).is_err());
    }

    #[test]
    fn forward_scalar_cases() {
        let zero = MlpParams::zeros(
            &MlpArch::new(3, vec![4], 2, Activation::Tanh, Activation::Linear).unwrap(),
        )
        .unwrap();
        let out = zero.predict(&Batch::new(2, 3, vec![1.0; 6]).unwrap()).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let affine = scalar_net(2.0, 1.0, Activation::Linear);
        assert_eq!(affine.predict(&one(3.0)).unwrap().data(), &[7.0]);

        let t = scalar_net(1.0, 0.0, Activation::Tanh);
        let y = t.forward(&one(0.5)).unwrap().output()[0];
        assert!((y - 0.462_117_157_260_009_8).abs() < 1e-7);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let p = scalar_net(1.0, 0.0, Activation::Tanh);
        let err = p.forward(&Batch::new(1, 2, vec![0.0, 0.0]).unwrap()).unwrap_err();
        assert!(matches!(err, NnError::Dimension { .. }));
    }

    #[test]
    fn output_ranges() {
        let arch = MlpArch::new(3, vec![5], 4, Activation::Tanh, Activation::Sigmoid).unwrap();
        let p = MlpParams::init(&arch, 11).unwrap();
        let b = Batch::new(2, 3, vec![10.0, -10.0, 3.0, 0.1, 0.2, -7.0]).unwrap();
        let c = p.forward(&b).unwrap();
        assert!(c.output().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(c.activations[1].iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let arch = MlpArch::new(2, vec![3], 1, Activation::Tanh, Activation::Sigmoid).unwrap();
        let p = MlpParams::init(&arch, 1).unwrap();
        let b = Batch::new(2, 2, vec![0.3, -0.2, 0.9, 0.4]).unwrap();
        let c = p.forward(&b).unwrap();
        let bp = p.backward(&c, &[0.0, 0.0]).unwrap();
        assert!(bp
            .grads
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|&g| g == 0.0)));
    }

    #[test]
    fn duplicated_rows_match_single_row() {
        let arch = MlpArch::new(2, vec![3], 1, Activation::Tanh, Activation::Sigmoid).unwrap();
        let p = MlpParams::init(&arch, 5).unwrap();
        let single = Batch::new(1, 2, vec![0.7, -0.1]).unwrap();
        let double = Batch::new(2, 2, vec![0.7, -0.1, 0.7, -0.1]).unwrap();
        let g1 = p.backward(&p.forward(&single).unwrap(), &[0.8]).unwrap();
        let g2 = p.backward(&p.forward(&double).unwrap(), &[0.8, 0.8]).unwrap();
        assert_eq!(g1.grads, g2.grads);
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let a = MlpParams::init(
            &MlpArch::new(2, vec![3], 1, Activation::Tanh, Activation::Sigmoid).unwrap(),
            0,
        )
        .unwrap();
        let b = MlpParams::init(
            &MlpArch::new(2, vec![4], 1, Activation::Tanh, Activation::Sigmoid).unwrap(),
            0,
        )
        .unwrap();
        let cache = a.forward(&Batch::new(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(b.backward(&cache, &[1.0]).unwrap_err(), NnError::StaleCache);
        assert!(matches!(
            a.backward(&cache, &[1.0, 2.0]).unwrap_err(),
            NnError::Dimension { .. }
        ));
    }

    #[test]
    fn adam_first_step() {
        let mut p = scalar_net(0.0, 0.0, Activation::Linear);
        let mut s = AdamState::new(&p, 0.0002);
        let g = Gradients {
            layers: vec![Layer {
                rows: 1,
                cols: 1,
                weights: vec![1.0],
                biases: vec![0.0],
            }],
        };
        adam_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(s.t, 1);
        assert!((f64::from(p.layers[0].weights[0]) + 0.0002).abs() < 1e-9);
        assert_eq!(p.layers[0].biases[0], 0.0);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let arch = MlpArch::new(2, vec![3], 1, Activation::Tanh, Activation::Sigmoid).unwrap();
        let mut p = MlpParams::init(&arch, 9).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&p, 0.01);
        let zero = Gradients::zeros_like(&p);
        adam_step(&mut p, &zero, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_reversal_is_damped() {
        let mut p = scalar_net(0.0, 0.0, Activation::Linear);
        let mut s = AdamState::new(&p, 0.0002);
        for g in [1.0f32, -1.0] {
            let grads = Gradients {
                layers: vec![Layer {
                    rows: 1,
                    cols: 1,
                    weights: vec![g],
                    biases: vec![0.0],
                }],
            };
            adam_step(&mut p, &grads, &mut s).unwrap();
        }
        assert!(p.layers[0].weights[0].abs() < 0.0002);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let arch = MlpArch::new(1, vec![2], 1, Activation::Tanh, Activation::Linear).unwrap();
        let mut p = MlpParams::init(&arch, 0).unwrap();
        let before = p.clone();
        let mut s = AdamState::new(&p, 0.1);
        let mut g = Gradients::zeros_like(&p);
        g.layers[1].biases[0] = f32::NAN;
        assert_eq!(
            adam_step(&mut p, &g, &mut s).unwrap_err(),
            NnError::NonFiniteGradient { layer: 1 }
        );
        assert_eq!(p, before);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn decode_errors() {
        let act = Activation::Tanh;
        assert!(deserialize_params(&[], act, act).is_err());
        let p = MlpParams::init(
            &MlpArch::new(2, vec![3], 1, Activation::Tanh, Activation::Sigmoid).unwrap(),
            0,
        )
        .unwrap();
        let bytes = serialize_params(&p);
        assert!(deserialize_params(&bytes[..bytes.len() - 1], act, act).is_err());
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0, 0, 0, 0]);
        assert!(deserialize_params(&extra, act, act).is_err());
        let back = deserialize_params(&bytes, Activation::Tanh, Activation::Sigmoid).unwrap();
        assert_eq!(back, p);
    }
}
