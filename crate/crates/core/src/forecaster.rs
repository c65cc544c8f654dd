//! Stage two: the forecaster `F(x̂_{t+i_n}, i_n) ≈ x_{t+h}`, trained on the
//! terminal-state error plus the Gaussian likelihood of its unscented belief.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{check_consistent, windows, Trajectory};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::interpolator::Interpolator;
use crate::net::{clip_grad_norm, forward_batch, Activation, NetSpec, ParamVector, Sgd};
use crate::ukf::{predict, sigma_points, ukf_nll_parts, GaussianBelief, UkfParams};

/// Diffusion steps `n ↦ i_n` with `0 = i_0 < i_1 < … < i_{N−1} < h`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSchedule {
    pub horizon: usize,
    pub indices: Vec<usize>,
}

impl DiffusionSchedule {
    pub fn new(horizon: usize, indices: Vec<usize>) -> Result<Self> {
        let s = DiffusionSchedule { horizon, indices };
        s.validate()?;
        Ok(s)
    }

    /// `i_n = round(n·h/N)`.
    pub fn uniform(horizon: usize, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidParameter("schedule needs at least one step".into()));
        }
        let indices = (0..n_steps)
            .map(|n| ((n * horizon) as f64 / n_steps as f64).round() as usize)
            .collect();
        Self::new(horizon, indices)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidParameter(format!("horizon must be >= 2, got {}", self.horizon)));
        }
        if self.indices.first() != Some(&0) {
            return Err(Error::InvalidParameter("schedule must start at i_0 = 0".into()));
        }
        if self.indices.windows(2).any(|w| w[1] <= w[0]) || *self.indices.last().expect("non-empty") >= self.horizon {
            return Err(Error::InvalidParameter(format!(
                "schedule {:?} must be strictly increasing and below h = {}",
                self.indices, self.horizon
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        DiffusionSchedule::uniform(16, 4).expect("valid default schedule")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    pub schedule: DiffusionSchedule,
    pub ukf: UkfParams,
    pub use_ukf: bool,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub time_embed_dim: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            schedule: DiffusionSchedule::default(),
            ukf: UkfParams::default(),
            use_ukf: true,
            batch_size: 16,
            steps: 500,
            lr: 5e-3,
            momentum: 0.9,
            grad_clip: Some(0.3),
            hidden_dims: vec![128, 128],
            activation: Activation::Tanh,
            time_embed_dim: 16,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn net_spec(&self, d: usize) -> NetSpec {
        NetSpec {
            input_dim: d,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: d,
            activation: self.activation,
            time_embed_dim: self.time_embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecaster {
    pub net: NetSpec,
    pub params: ParamVector,
    pub schedule: DiffusionSchedule,
}

impl Forecaster {
    pub fn new(net: NetSpec, params: ParamVector, schedule: DiffusionSchedule) -> Result<Self> {
        net.validate()?;
        schedule.validate()?;
        if net.input_dim != net.output_dim {
            return Err(Error::DimensionMismatch {
                context: "forecaster output",
                expected: net.input_dim,
                actual: net.output_dim,
            });
        }
        if params.len() != net.param_count() {
            return Err(Error::DimensionMismatch {
                context: "forecaster parameters",
                expected: net.param_count(),
                actual: params.len(),
            });
        }
        Ok(Forecaster { net, params, schedule })
    }

    /// Glorot-initialized forecaster for a state of dimension `d`.
    pub fn init(d: usize, cfg: &ForecastConfig, seed: u64) -> Result<Self> {
        let net = cfg.net_spec(d);
        let params = ParamVector::init(&net, seed)?;
        Forecaster::new(net, params, cfg.schedule.clone())
    }

    pub fn state_dim(&self) -> usize {
        self.net.input_dim
    }

    fn check_step(&self, i_n: usize) -> Result<()> {
        if !self.schedule.contains(i_n) {
            return Err(Error::NotOnSchedule(i_n));
        }
        Ok(())
    }

    /// Forecasts every column of `xs` with the same schedule index.
    pub fn forecast_columns(&self, xs: &DMatrix<f64>, i_n: usize) -> Result<DMatrix<f64>> {
        self.check_step(i_n)?;
        let idx = vec![i_n as f64; xs.ncols()];
        Ok(forward_batch(&self.net, &self.params, xs, &idx)?.0)
    }

    pub fn forecast_values(&self, x: &[f64], i_n: usize) -> Result<Vec<f64>> {
        let xs = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.forecast_columns(&xs, i_n)?.as_slice().to_vec())
    }
}

/// Terminal-state prediction `F(x_in, i_n)`.
pub fn forecast(model: &Forecaster, x_in: &Field, i_n: usize) -> Result<Field> {
    Ok(x_in.with_values(model.forecast_values(&x_in.values, i_n)?))
}

/// Unscented belief over `x_{t+h}`: `N(x_in, P₀)` pushed through `F(·, i_n)`.
pub fn belief_from_input(model: &Forecaster, x_in: &[f64], i_n: usize, ukf: &UkfParams) -> Result<GaussianBelief> {
    model.check_step(i_n)?;
    let b0 = GaussianBelief::isotropic(x_in, ukf.p0_scale);
    predict(&b0, |xs: &DMatrix<f64>| model.forecast_columns(xs, i_n), ukf)
}

/// Belief from the input state `I(x_t, F(x_t, 0), i_n)` (or `x_t` when `i_n = 0`).
pub fn forecast_belief(
    model: &Forecaster,
    interp: &Interpolator,
    x_t: &Field,
    i_n: usize,
    cfg: &ForecastConfig,
) -> Result<GaussianBelief> {
    model.check_step(i_n)?;
    let x_in = if i_n == 0 {
        x_t.values.clone()
    } else {
        let x_h = model.forecast_values(&x_t.values, 0)?;
        interp.interpolate_values(&x_t.values, &x_h, i_n)?
    };
    belief_from_input(model, &x_in, i_n, &cfg.ukf)
}

/// One training pair with its schedule index.
#[derive(Debug, Clone)]
pub struct ForecastSample {
    pub x_t: Vec<f64>,
    pub x_th: Vec<f64>,
    pub i_n: usize,
}

#[derive(Debug, Clone)]
pub struct ForecastLoss {
    /// `mse + nll`.
    pub total: f64,
    /// Batch mean of `‖F(x̂_{t+i_n}, i_n) − x_{t+h}‖²`.
    pub mse: f64,
    /// Batch mean of the belief's negative log-likelihood (0 with the UKF off).
    pub nll: f64,
    pub grad: ParamVector,
}

/// The forecaster input `I(x_t, x_{t+h}, i_n)`, or `x_t` at `i_n = 0`.
fn input_state(interp: &Interpolator, s: &ForecastSample) -> Result<Vec<f64>> {
    interp.interpolate_values(&s.x_t, &s.x_th, s.i_n)
}

/// Batch loss and gradient. The likelihood gradient flows through the belief
/// mean `Σ w_m F(X_i)` into every sigma point; the covariance is held fixed.
pub fn forecaster_loss(
    model: &Forecaster,
    interp: &Interpolator,
    batch: &[ForecastSample],
    cfg: &ForecastConfig,
) -> Result<ForecastLoss> {
    if batch.is_empty() {
        return Err(Error::InsufficientData("empty forecaster batch".into()));
    }
    let d = model.state_dim();
    let b = batch.len() as f64;
    if !cfg.use_ukf {
        let mut xs = DMatrix::zeros(d, batch.len());
        let mut idx = Vec::with_capacity(batch.len());
        for (c, s) in batch.iter().enumerate() {
            model.check_step(s.i_n)?;
            xs.set_column(c, &DVector::from_vec(input_state(interp, s)?));
            idx.push(s.i_n as f64);
        }
        let (ys, tape) = forward_batch(&model.net, &model.params, &xs, &idx)?;
        let mut adjoint = DMatrix::zeros(d, batch.len());
        let mut mse = 0.0;
        for (c, s) in batch.iter().enumerate() {
            let r = ys.column(c) - DVector::from_column_slice(&s.x_th);
            mse += r.norm_squared();
            adjoint.set_column(c, &(r * (2.0 / b)));
        }
        let (grad, _) = tape.backward(&adjoint)?;
        let mse = mse / b;
        return Ok(ForecastLoss {
            total: mse,
            mse,
            nll: 0.0,
            grad,
        });
    }

    let per = 2 * d + 1;
    let mut xs = DMatrix::zeros(d, per * batch.len());
    let mut idx = Vec::with_capacity(per * batch.len());
    let mut sets = Vec::with_capacity(batch.len());
    for (e, s) in batch.iter().enumerate() {
        model.check_step(s.i_n)?;
        let b0 = GaussianBelief::isotropic(&input_state(interp, s)?, cfg.ukf.p0_scale);
        let sigma = sigma_points(&b0, &cfg.ukf)?;
        xs.columns_mut(e * per, per).copy_from(&sigma.points);
        idx.extend(std::iter::repeat_n(s.i_n as f64, per));
        sets.push(sigma);
    }
    let (ys, tape) = forward_batch(&model.net, &model.params, &xs, &idx)?;
    let mut adjoint = DMatrix::zeros(d, ys.ncols());
    let (mut mse, mut nll) = (0.0, 0.0);
    for (e, (s, sigma)) in batch.iter().zip(&sets).enumerate() {
        let block = ys.columns(e * per, per).into_owned();
        let target = DVector::from_column_slice(&s.x_th);
        // sigma point 0 is the input state itself
        let r = block.column(0) - &target;
        mse += r.norm_squared();
        let mut adj = adjoint.columns_mut(e * per, per);
        adj.column_mut(0).axpy(2.0 / b, &r, 0.0);

        let (mean, mut cov) = sigma.moments(&block);
        for i in 0..d {
            cov[(i, i)] += cfg.ukf.q_scale;
        }
        let belief = GaussianBelief::new(mean, cov)?;
        let parts = ukf_nll_parts(&s.x_th, &belief)?;
        nll += parts.value;
        // ∂/∂mean of ½ eᵀP⁻¹e is −P⁻¹e; the mean is Σ w_m Y_i
        for (i, w) in sigma.w_m.iter().enumerate() {
            adj.column_mut(i).axpy(-w / b, &parts.precision_error, 1.0);
        }
    }
    let (grad, _) = tape.backward(&adjoint)?;
    let (mse, nll) = (mse / b, nll / b);
    Ok(ForecastLoss {
        total: mse + nll,
        mse,
        nll,
        grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForecastLogRow {
    pub step: usize,
    pub mse: f64,
    pub nll: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedForecaster {
    pub model: Forecaster,
    pub log: Vec<ForecastLogRow>,
}

/// Minibatch SGD with a frozen interpolator; `n ~ U{0, …, N−1}` per element.
pub fn train_forecaster(
    data: &[Trajectory],
    init: Forecaster,
    interp: &Interpolator,
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<TrainedForecaster> {
    cfg.validate()?;
    let (spec, channels) = check_consistent(data)?;
    let d = channels * spec.len();
    if init.state_dim() != d || interp.state_dim() != d {
        return Err(Error::DimensionMismatch {
            context: "forecaster state",
            expected: d,
            actual: init.state_dim(),
        });
    }
    let h = cfg.schedule.horizon;
    if interp.horizon != h {
        return Err(Error::InvalidParameter(format!(
            "interpolator horizon {} differs from schedule horizon {h}",
            interp.horizon
        )));
    }
    let pool = windows(data, h);
    if pool.is_empty() {
        return Err(Error::InsufficientData(format!("no trajectory has more than {h} frames")));
    }
    let mut model = Forecaster { schedule: cfg.schedule.clone(), ..init };
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, model.params.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5f0c_a57e);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch: Vec<ForecastSample> = (0..cfg.batch_size)
            .map(|_| {
                let (k, s) = pool[rng.random_range(0..pool.len())];
                let n = rng.random_range(0..cfg.schedule.len());
                ForecastSample {
                    x_t: data[k].frames[s].clone(),
                    x_th: data[k].frames[s + h].clone(),
                    i_n: cfg.schedule.indices[n],
                }
            })
            .collect();
        let mut loss = forecaster_loss(&model, interp, &batch, cfg)?;
        if let Some(max) = cfg.grad_clip {
            clip_grad_norm(&mut loss.grad, max);
        }
        opt.step(&mut model.params, &loss.grad)?;
        log.push(ForecastLogRow {
            step,
            mse: loss.mse,
            nll: loss.nll,
            total: loss.total,
        });
    }
    Ok(TrainedForecaster { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::identity_params;

    #[test]
    fn schedule_construction() {
        assert_eq!(DiffusionSchedule::uniform(16, 4).unwrap().indices, vec![0, 4, 8, 12]);
        assert_eq!(DiffusionSchedule::uniform(5, 1).unwrap().indices, vec![0]);
        assert!(DiffusionSchedule::uniform(2, 3).is_err());
        assert!(DiffusionSchedule::new(8, vec![1, 2]).is_err());
        assert!(DiffusionSchedule::new(8, vec![0, 4, 4]).is_err());
        assert!(DiffusionSchedule::new(8, vec![0, 8]).is_err());
    }

    fn identity_forecaster(d: usize) -> Forecaster {
        let net = NetSpec {
            input_dim: d,
            hidden_dims: vec![2 * d],
            output_dim: d,
            activation: Activation::Relu,
            time_embed_dim: 2,
        };
        let params = identity_params(&net).unwrap();
        Forecaster::new(net, params, DiffusionSchedule::uniform(4, 2).unwrap()).unwrap()
    }

    #[test]
    fn zero_net_and_schedule_errors() {
        let cfg = ForecastConfig {
            hidden_dims: vec![4],
            schedule: DiffusionSchedule::uniform(4, 2).unwrap(),
            ..ForecastConfig::default()
        };
        let net = cfg.net_spec(3);
        let f = Forecaster::new(net.clone(), ParamVector::zeros(&net), cfg.schedule.clone()).unwrap();
        assert_eq!(f.forecast_values(&[1.0, 2.0, 3.0], 2).unwrap(), vec![0.0; 3]);
        assert!(matches!(f.forecast_values(&[1.0, 2.0, 3.0], 1), Err(Error::NotOnSchedule(1))));
    }

    #[test]
    fn identity_belief_is_p0_plus_q() {
        let f = identity_forecaster(3);
        let ukf = UkfParams::default();
        let b = belief_from_input(&f, &[0.5, -1.0, 2.0], 2, &ukf).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { ukf.p0_scale + ukf.q_scale } else { 0.0 };
                assert!((b.cov[(i, j)] - want).abs() < 1e-8);
            }
        }
        assert!((b.mean[1] + 1.0).abs() < 1e-12);
    }
}
