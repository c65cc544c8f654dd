//! Stage one: the interpolator `I(x_t, x_{t+h}, i) ≈ x_{t+i}`, trained on the
//! reconstruction error plus a fractional-operator penalty on its output.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{check_consistent, windows, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Field, GridSpec};
use crate::net::{clip_grad_norm, forward_batch, Activation, NetSpec, ParamVector, Sgd};
use crate::spde::{EllipticOpParams, FractionalOperator};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpConfig {
    /// Weight λ of the operator penalty.
    pub lambda_reg: f64,
    pub op: EllipticOpParams,
    pub horizon: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub time_embed_dim: usize,
}

impl Default for InterpConfig {
    fn default() -> Self {
        InterpConfig {
            lambda_reg: 0.2,
            op: EllipticOpParams {
                l: 0.05,
                alpha: 2.0,
                bc: BoundaryCondition::Periodic,
            },
            horizon: 16,
            batch_size: 32,
            steps: 500,
            lr: 5e-3,
            momentum: 0.9,
            grad_clip: Some(10.0),
            hidden_dims: vec![128, 128],
            activation: Activation::Tanh,
            time_embed_dim: 16,
        }
    }
}

impl InterpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidParameter(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda_reg must be >= 0, got {}", self.lambda_reg)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        self.op.validate()
    }

    /// Network shape for a flattened state of dimension `d`: input `[x_t, x_{t+h}]`.
    pub fn net_spec(&self, d: usize) -> NetSpec {
        NetSpec {
            input_dim: 2 * d,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: d,
            activation: self.activation,
            time_embed_dim: self.time_embed_dim,
        }
    }
}

/// A trained (or initialized) interpolator network.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpolator {
    pub net: NetSpec,
    pub params: ParamVector,
    pub horizon: usize,
}

fn check_index(i: usize, horizon: usize) -> Result<()> {
    if i == 0 || i >= horizon {
        return Err(Error::IndexOutOfRange {
            index: i,
            lo: 1,
            hi: horizon - 1,
        });
    }
    Ok(())
}

impl Interpolator {
    pub fn new(net: NetSpec, params: ParamVector, horizon: usize) -> Result<Self> {
        net.validate()?;
        if net.input_dim != 2 * net.output_dim {
            return Err(Error::DimensionMismatch {
                context: "interpolator input (2 × state)",
                expected: 2 * net.output_dim,
                actual: net.input_dim,
            });
        }
        if params.len() != net.param_count() {
            return Err(Error::DimensionMismatch {
                context: "interpolator parameters",
                expected: net.param_count(),
                actual: params.len(),
            });
        }
        if horizon < 2 {
            return Err(Error::InvalidParameter("horizon must be >= 2".into()));
        }
        Ok(Interpolator { net, params, horizon })
    }

    pub fn state_dim(&self) -> usize {
        self.net.output_dim
    }

    /// Raw-value interpolation for `0 ≤ i < h`; `i = 0` returns `x_t` itself.
    pub fn interpolate_values(&self, x_t: &[f64], x_th: &[f64], i: usize) -> Result<Vec<f64>> {
        if i == 0 {
            return Ok(x_t.to_vec());
        }
        check_index(i, self.horizon)?;
        let d = self.state_dim();
        if x_t.len() != d || x_th.len() != d {
            return Err(Error::DimensionMismatch {
                context: "interpolator state",
                expected: d,
                actual: if x_t.len() != d { x_t.len() } else { x_th.len() },
            });
        }
        let input = DMatrix::from_iterator(2 * d, 1, x_t.iter().chain(x_th).copied());
        let (out, _) = forward_batch(&self.net, &self.params, &input, &[i as f64])?;
        Ok(out.as_slice().to_vec())
    }
}

/// `I(x_t, x_{t+h}, i)` for `1 ≤ i ≤ h − 1`.
pub fn interpolate(model: &Interpolator, x_t: &Field, x_th: &Field, i: usize) -> Result<Field> {
    check_index(i, model.horizon)?;
    if !x_t.same_layout(x_th) {
        return Err(Error::InvalidGrid("interpolation endpoints differ in layout".into()));
    }
    let values = model.interpolate_values(&x_t.values, &x_th.values, i)?;
    Ok(x_t.with_values(values))
}

/// One training example `(x_t, x_{t+i}, x_{t+h}, i)`.
#[derive(Debug, Clone)]
pub struct InterpSample {
    pub x_t: Field,
    pub x_ti: Field,
    pub x_th: Field,
    pub i: usize,
}

#[derive(Debug, Clone)]
pub struct InterpLoss {
    /// `recon + λ · pde`.
    pub total: f64,
    /// Batch mean of `‖I − x_{t+i}‖²`.
    pub recon: f64,
    /// Batch mean of the output's mean-square operator residual (unweighted).
    pub pde: f64,
    pub grad: ParamVector,
}

/// Loss and gradient on column-stacked inputs `[x_t; x_{t+h}]` and targets.
fn loss_columns(
    net: &NetSpec,
    params: &ParamVector,
    op: &FractionalOperator,
    lambda: f64,
    inputs: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    indices: &[f64],
) -> Result<InterpLoss> {
    let b = inputs.ncols() as f64;
    let (out, tape) = forward_batch(net, params, inputs, indices)?;
    let d = out.nrows();
    let mut adjoint = DMatrix::zeros(d, out.ncols());
    let (mut recon, mut pde) = (0.0, 0.0);
    for c in 0..out.ncols() {
        let y = out.column(c);
        let r = &y - targets.column(c);
        recon += r.norm_squared();
        let my = op.apply_values(y.as_slice(), 1);
        pde += my.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let mut adj = r * (2.0 / b);
        if lambda > 0.0 {
            // M is self-adjoint: d/dy mean((My)²) = (2/d) M² y
            let m2y = op.apply_values(&my, 1);
            for (a, v) in adj.iter_mut().zip(&m2y) {
                *a += 2.0 * lambda * v / (d as f64 * b);
            }
        }
        adjoint.set_column(c, &adj);
    }
    let (grad, _) = tape.backward(&adjoint)?;
    let (recon, pde) = (recon / b, pde / b);
    Ok(InterpLoss {
        total: recon + lambda * pde,
        recon,
        pde,
        grad,
    })
}

fn check_op_grid(spec: &GridSpec, cfg: &InterpConfig) -> Result<()> {
    if spec.bc != cfg.op.bc {
        return Err(Error::BoundaryMismatch {
            op: cfg.op.bc.to_string(),
            field: spec.bc.to_string(),
        });
    }
    Ok(())
}

/// Batch mean of `‖I(x_t, x_{t+h}, i) − x_{t+i}‖² + λ · pde_residual_sq(I(…))`
/// and its exact parameter gradient.
pub fn interp_loss(
    model: &Interpolator,
    batch: &[InterpSample],
    cfg: &InterpConfig,
) -> Result<InterpLoss> {
    cfg.validate()?;
    let first = batch
        .first()
        .ok_or_else(|| Error::InsufficientData("empty interpolator batch".into()))?;
    check_op_grid(&first.x_t.spec, cfg)?;
    let d = model.state_dim();
    let mut inputs = DMatrix::zeros(2 * d, batch.len());
    let mut targets = DMatrix::zeros(d, batch.len());
    let mut indices = Vec::with_capacity(batch.len());
    for (c, s) in batch.iter().enumerate() {
        check_index(s.i, model.horizon)?;
        for f in [&s.x_t, &s.x_ti, &s.x_th] {
            if !f.same_layout(&first.x_t) || f.values.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "interpolator sample",
                    expected: d,
                    actual: f.values.len(),
                });
            }
        }
        inputs.view_mut((0, c), (d, 1)).copy_from_slice(&s.x_t.values);
        inputs.view_mut((d, c), (d, 1)).copy_from_slice(&s.x_th.values);
        targets.view_mut((0, c), (d, 1)).copy_from_slice(&s.x_ti.values);
        indices.push(s.i as f64);
    }
    let op = FractionalOperator::new(&first.x_t.spec, cfg.op)?;
    loss_columns(&model.net, &model.params, &op, cfg.lambda_reg, &inputs, &targets, &indices)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterpLogRow {
    pub step: usize,
    pub recon_loss: f64,
    pub pde_loss: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedInterpolator {
    pub model: Interpolator,
    pub log: Vec<InterpLogRow>,
}

/// Minibatch SGD over random windows with `i ~ U{1, …, h − 1}`.
pub fn train_interpolator(data: &[Trajectory], cfg: &InterpConfig, seed: u64) -> Result<TrainedInterpolator> {
    cfg.validate()?;
    let (spec, channels) = check_consistent(data)?;
    check_op_grid(spec, cfg)?;
    let d = channels * spec.len();
    let net = cfg.net_spec(d);
    let params = ParamVector::init(&net, seed)?;
    let mut model = Interpolator::new(net, params, cfg.horizon)?;
    let pool = windows(data, cfg.horizon);
    if pool.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no trajectory has more than {} frames",
            cfg.horizon
        )));
    }
    let op = FractionalOperator::new(spec, cfg.op)?;
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, model.params.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a7e_4b0c);
    let mut log = Vec::with_capacity(cfg.steps);
    let mut inputs = DMatrix::zeros(2 * d, cfg.batch_size);
    let mut targets = DMatrix::zeros(d, cfg.batch_size);
    let mut indices = vec![0.0; cfg.batch_size];
    for step in 0..cfg.steps {
        for c in 0..cfg.batch_size {
            let (k, s) = pool[rng.random_range(0..pool.len())];
            let i = rng.random_range(1..cfg.horizon);
            let t = &data[k];
            inputs.view_mut((0, c), (d, 1)).copy_from_slice(&t.frames[s]);
            inputs.view_mut((d, c), (d, 1)).copy_from_slice(&t.frames[s + cfg.horizon]);
            targets.view_mut((0, c), (d, 1)).copy_from_slice(&t.frames[s + i]);
            indices[c] = i as f64;
        }
        let mut loss = loss_columns(&model.net, &model.params, &op, cfg.lambda_reg, &inputs, &targets, &indices)?;
        if let Some(max) = cfg.grad_clip {
            clip_grad_norm(&mut loss.grad, max);
        }
        opt.step(&mut model.params, &loss.grad)?;
        log.push(InterpLogRow {
            step,
            recon_loss: loss.recon,
            pde_loss: loss.pde,
            total: loss.total,
        });
    }
    Ok(TrainedInterpolator { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(bc: BoundaryCondition) -> (InterpConfig, GridSpec) {
        let cfg = InterpConfig {
            lambda_reg: 1.0,
            op: EllipticOpParams { l: 0.1, alpha: 2.0, bc },
            horizon: 4,
            hidden_dims: vec![6],
            time_embed_dim: 4,
            ..InterpConfig::default()
        };
        (cfg, GridSpec::line(5, 1.0, bc).unwrap())
    }

    #[test]
    fn zero_net_on_zero_dirichlet_target_has_zero_loss() {
        let (cfg, spec) = tiny(BoundaryCondition::Dirichlet);
        let net = cfg.net_spec(5);
        let model = Interpolator::new(net.clone(), ParamVector::zeros(&net), 4).unwrap();
        let x = Field::from_fn(spec.clone(), |p| p[0]);
        let s = InterpSample {
            x_t: x.clone(),
            x_ti: Field::zeros(spec, 1),
            x_th: x,
            i: 2,
        };
        let l = interp_loss(&model, &[s], &cfg).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(l.grad.norm(), 0.0);
    }

    #[test]
    fn index_and_bc_errors() {
        let (cfg, spec) = tiny(BoundaryCondition::Periodic);
        let net = cfg.net_spec(5);
        let model = Interpolator::new(net.clone(), ParamVector::init(&net, 1).unwrap(), 4).unwrap();
        let x = Field::zeros(spec.clone(), 1);
        assert!(interpolate(&model, &x, &x, 0).is_err());
        assert!(interpolate(&model, &x, &x, 4).is_err());
        assert!(interpolate(&model, &x, &x, 3).is_ok());
        let s = InterpSample {
            x_t: x.clone(),
            x_ti: x.clone(),
            x_th: x.clone(),
            i: 1,
        };
        let (dir_cfg, _) = tiny(BoundaryCondition::Dirichlet);
        assert!(matches!(
            interp_loss(&model, &[s.clone()], &dir_cfg),
            Err(Error::BoundaryMismatch { .. })
        ));
        let bad = InterpSample { i: 4, ..s };
        assert!(interp_loss(&model, &[bad], &cfg).is_err());
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let (mut cfg, spec) = tiny(BoundaryCondition::Periodic);
        cfg.steps = 0;
        let t = Trajectory::new(spec, 1, 0.1, vec![vec![0.5; 5]; 6]).unwrap();
        let out = train_interpolator(&[t], &cfg, 7).unwrap();
        let net = cfg.net_spec(5);
        assert_eq!(out.model.params, ParamVector::init(&net, 7).unwrap());
        assert!(out.log.is_empty());
    }
}
