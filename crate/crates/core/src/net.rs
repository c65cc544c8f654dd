//! Fully connected networks with a sinusoidal index embedding, reverse-mode
//! gradients, a heavy-ball optimizer and a flat checkpoint format.
//!
//! Parameters live in one flat vector. For every layer the weight matrix
//! (`out × in`, column-major) is followed by its bias (`out`). The input of
//! the first layer is `[x, embed(index)]`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DMatrixView, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EMBED_MAX_PERIOD: f64 = 100.0;
const CHECKPOINT_MAGIC: &str = "PDYNET1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub time_embed_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub rows: usize,
    pub cols: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl NetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.time_embed_dim == 0 {
            return Err(Error::InvalidParameter(format!("network dims must be >= 1: {self:?}")));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidParameter(
                "network needs at least one hidden layer of width >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut widths = vec![self.input_dim + self.time_embed_dim];
        widths.extend(&self.hidden_dims);
        widths.push(self.output_dim);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let l = LayerLayout {
                    rows,
                    cols,
                    weight_offset: offset,
                    bias_offset: offset + rows * cols,
                };
                offset += rows * cols + rows;
                l
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|l| l.rows * l.cols + l.rows).sum()
    }
}

/// Flat trainable parameters (or a gradient with the same layout).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub layout: Vec<LayerLayout>,
}

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        ParamVector {
            values: vec![0.0; spec.param_count()],
            layout: spec.layout(),
        }
    }

    /// Uniform `±√(6/(fan_in+fan_out))` weights, zero biases.
    pub fn init(spec: &NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut p = Self::zeros(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in p.layout.clone() {
            let bound = (6.0 / (l.rows + l.cols) as f64).sqrt();
            for w in &mut p.values[l.weight_offset..l.bias_offset] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn weight(&self, layer: usize) -> DMatrixView<'_, f64> {
        let l = &self.layout[layer];
        DMatrixView::from_slice(&self.values[l.weight_offset..l.bias_offset], l.rows, l.cols)
    }

    pub fn bias(&self, layer: usize) -> DVectorView<'_, f64> {
        let l = &self.layout[layer];
        DVectorView::from_slice(&self.values[l.bias_offset..l.bias_offset + l.rows], l.rows)
    }

    /// Mutable access to `W[row, col]` of one layer.
    pub fn weight_mut(&mut self, layer: usize, row: usize, col: usize) -> &mut f64 {
        let l = self.layout[layer];
        &mut self.values[l.weight_offset + col * l.rows + row]
    }

    pub fn bias_mut(&mut self, layer: usize, row: usize) -> &mut f64 {
        let l = self.layout[layer];
        &mut self.values[l.bias_offset + row]
    }

    pub fn add_assign(&mut self, other: &ParamVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Parameters under which a one-hidden-layer ReLU net of width `2 × input`
/// with `output = input` is the identity map: `relu(x) − relu(−x) = x`.
pub fn identity_params(spec: &NetSpec) -> Result<ParamVector> {
    spec.validate()?;
    let d = spec.input_dim;
    if spec.activation != Activation::Relu || spec.hidden_dims != [2 * d] || spec.output_dim != d {
        return Err(Error::InvalidParameter(
            "identity parameters need relu, one hidden layer of width 2·input and output = input".into(),
        ));
    }
    let mut p = ParamVector::zeros(spec);
    for j in 0..d {
        *p.weight_mut(0, j, j) = 1.0;
        *p.weight_mut(0, d + j, j) = -1.0;
        *p.weight_mut(1, j, j) = 1.0;
        *p.weight_mut(1, j, d + j) = -1.0;
    }
    Ok(p)
}

/// Sinusoidal features of a scalar index: `sin/cos(index · ω_j)`.
pub fn embed_index(index: f64, dim: usize) -> Vec<f64> {
    let half = dim.div_ceil(2).max(1) as f64;
    (0..dim)
        .map(|m| {
            let j = (m / 2) as f64;
            let freq = EMBED_MAX_PERIOD.powf(-j / half);
            if m % 2 == 0 {
                (index * freq).sin()
            } else {
                (index * freq).cos()
            }
        })
        .collect()
}

/// Primal values recorded by a forward pass; consumed by [`Tape::backward`].
#[derive(Debug)]
pub struct Tape {
    spec: NetSpec,
    layout: Vec<LayerLayout>,
    weights: Vec<DMatrix<f64>>,
    // activations[0] is the augmented input, activations[l+1] the output of layer l
    activations: Vec<DMatrix<f64>>,
    preacts: Vec<DMatrix<f64>>,
}

fn check_params(spec: &NetSpec, params: &ParamVector) -> Result<()> {
    spec.validate()?;
    let expected = spec.param_count();
    if params.len() != expected || params.layout != spec.layout() {
        return Err(Error::DimensionMismatch {
            context: "parameter vector",
            expected,
            actual: params.len(),
        });
    }
    Ok(())
}

/// Batched forward pass: `inputs` is `input_dim × batch`, one index per column.
pub fn forward_batch(
    spec: &NetSpec,
    params: &ParamVector,
    inputs: &DMatrix<f64>,
    indices: &[f64],
) -> Result<(DMatrix<f64>, Tape)> {
    check_params(spec, params)?;
    if inputs.nrows() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "network input",
            expected: spec.input_dim,
            actual: inputs.nrows(),
        });
    }
    if indices.len() != inputs.ncols() {
        return Err(Error::DimensionMismatch {
            context: "network index batch",
            expected: inputs.ncols(),
            actual: indices.len(),
        });
    }
    let batch = inputs.ncols();
    let mut a0 = DMatrix::zeros(spec.input_dim + spec.time_embed_dim, batch);
    a0.rows_mut(0, spec.input_dim).copy_from(inputs);
    for (b, &idx) in indices.iter().enumerate() {
        for (r, e) in embed_index(idx, spec.time_embed_dim).into_iter().enumerate() {
            a0[(spec.input_dim + r, b)] = e;
        }
    }

    let n_layers = params.layout.len();
    let mut weights = Vec::with_capacity(n_layers);
    let mut activations = vec![a0];
    let mut preacts = Vec::with_capacity(n_layers);
    for layer in 0..n_layers {
        let w = params.weight(layer).into_owned();
        let mut z = &w * activations.last().expect("non-empty");
        let bias = params.bias(layer);
        for mut col in z.column_iter_mut() {
            col += &bias;
        }
        let a = if layer + 1 < n_layers {
            z.map(|v| spec.activation.apply(v))
        } else {
            z.clone()
        };
        weights.push(w);
        preacts.push(z);
        activations.push(a);
    }
    let out = activations.last().expect("non-empty").clone();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network output"));
    }
    Ok((
        out,
        Tape {
            spec: spec.clone(),
            layout: params.layout.clone(),
            weights,
            activations,
            preacts,
        },
    ))
}

/// Single-sample forward pass.
pub fn forward(spec: &NetSpec, params: &ParamVector, input: &[f64], index: f64) -> Result<(Vec<f64>, Tape)> {
    let x = DMatrix::from_column_slice(input.len(), 1, input);
    let (out, tape) = forward_batch(spec, params, &x, &[index])?;
    Ok((out.as_slice().to_vec(), tape))
}

/// Output only, without keeping a tape.
pub fn predict(spec: &NetSpec, params: &ParamVector, input: &[f64], index: f64) -> Result<Vec<f64>> {
    Ok(forward(spec, params, input, index)?.0)
}

impl Tape {
    pub fn batch(&self) -> usize {
        self.activations[0].ncols()
    }

    /// Reverse pass for `⟨adjoint, output⟩` summed over the batch.
    ///
    /// Returns the parameter gradient and the gradient w.r.t. the
    /// (non-embedding) inputs, `input_dim × batch`.
    pub fn backward(self, output_adjoint: &DMatrix<f64>) -> Result<(ParamVector, DMatrix<f64>)> {
        let n_layers = self.layout.len();
        let out_shape = self.activations[n_layers].shape();
        if output_adjoint.shape() != out_shape {
            return Err(Error::DimensionMismatch {
                context: "output adjoint",
                expected: out_shape.0 * out_shape.1,
                actual: output_adjoint.len(),
            });
        }
        let mut grad = ParamVector {
            values: vec![0.0; self.layout.iter().map(|l| l.rows * l.cols + l.rows).sum()],
            layout: self.layout.clone(),
        };
        let mut delta = output_adjoint.clone();
        for layer in (0..n_layers).rev() {
            if layer + 1 < n_layers {
                let z = &self.preacts[layer];
                let a = &self.activations[layer + 1];
                for ((d, &zv), &av) in delta.iter_mut().zip(z.iter()).zip(a.iter()) {
                    *d *= self.spec.activation.derivative(zv, av);
                }
            }
            let l = self.layout[layer];
            let dw = &delta * self.activations[layer].transpose();
            grad.values[l.weight_offset..l.bias_offset].copy_from_slice(dw.as_slice());
            for (r, row) in delta.row_iter().enumerate() {
                grad.values[l.bias_offset + r] = row.sum();
            }
            delta = self.weights[layer].transpose() * &delta;
        }
        let input_grad = delta.rows(0, self.spec.input_dim).into_owned();
        Ok((grad, input_grad))
    }

    pub fn backward_single(self, output_adjoint: &[f64]) -> Result<(ParamVector, Vec<f64>)> {
        let adj = DMatrix::from_column_slice(output_adjoint.len(), 1, output_adjoint);
        let (g, x) = self.backward(&adj)?;
        Ok((g, x.as_slice().to_vec()))
    }
}

/// Heavy-ball SGD. The velocity starts at zero and lives alongside the params.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, n_params: usize) -> Result<Self> {
        if !(lr > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidParameter(format!(
                "sgd needs lr > 0 and 0 <= momentum < 1, got lr={lr}, momentum={momentum}"
            )));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: vec![0.0; n_params],
        })
    }

    /// `v ← m v − lr g; p ← p + v`. Non-finite gradients leave everything untouched.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if grad.len() != params.len() || grad.len() != self.velocity.len() {
            return Err(Error::DimensionMismatch {
                context: "sgd step",
                expected: params.len(),
                actual: grad.len(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        for ((p, v), g) in params.values.iter_mut().zip(&mut self.velocity).zip(&grad.values) {
            *v = self.momentum * *v - self.lr * g;
            *p += *v;
        }
        Ok(())
    }
}

/// One optimizer step on fresh state, for callers that keep no velocity.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64, momentum: f64) -> Result<ParamVector> {
    let mut opt = Sgd::new(lr, momentum, params.len())?;
    let mut next = params.clone();
    opt.step(&mut next, grad)?;
    Ok(next)
}

/// Rescales `grad` in place so its norm is at most `max_norm`.
pub fn clip_grad_norm(grad: &mut ParamVector, max_norm: f64) {
    let n = grad.norm();
    if n > max_norm && n.is_finite() {
        grad.scale(max_norm / n);
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    spec: NetSpec,
    param_count: usize,
}

/// Writes `PDYNET1 <json header>\n` followed by little-endian f64 parameters.
pub fn save_checkpoint(path: &Path, spec: &NetSpec, params: &ParamVector) -> Result<()> {
    check_params(spec, params)?;
    let header = CheckpointHeader {
        spec: spec.clone(),
        param_count: params.len(),
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(json.len() + 16 + 8 * params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    buf.push(b' ');
    buf.extend_from_slice(json.as_bytes());
    buf.push(b'\n');
    for v in &params.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(NetSpec, ParamVector)> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let rest = line
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| bad("missing PDYNET1 header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_str(rest.trim_end()).map_err(|e| bad(format!("header: {e}")))?;
    header.spec.validate()?;
    if header.param_count != header.spec.param_count() {
        return Err(bad(format!(
            "header declares {} params, spec needs {}",
            header.param_count,
            header.spec.param_count()
        )));
    }
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    if payload.len() != 8 * header.param_count {
        return Err(bad(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            8 * header.param_count
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite parameter".into()));
    }
    let layout = header.spec.layout();
    Ok((header.spec, ParamVector { values, layout }))
}
