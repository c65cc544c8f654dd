//! Cold sampling: alternate terminal-state forecasts with interpolator
//! corrections along the diffusion schedule, chain windows autoregressively,
//! and build perturbation ensembles.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Trajectory;
use crate::error::{Error, Result};
use crate::forecaster::{DiffusionSchedule, Forecaster};
use crate::grid::Field;
use crate::interpolator::Interpolator;
use crate::ukf::{predict, update, GaussianBelief, UkfParams};

/// Inflation of the measurement noise for the inference-time correction.
pub const PSEUDO_MEASUREMENT_INFLATION: f64 = 10.0;

/// Anything that maps `(x_t, x_{t+h}, i)` to an intermediate state, with
/// `i = 0` returning `x_t`.
pub trait Interpolate: Sync {
    fn horizon(&self) -> usize;
    fn interpolate_values(&self, x_t: &[f64], x_th: &[f64], i: usize) -> Result<Vec<f64>>;
}

/// Anything that maps `(x̂_{t+i_n}, i_n)` to a terminal-state forecast.
pub trait Forecast: Sync {
    fn forecast_values(&self, x: &[f64], i_n: usize) -> Result<Vec<f64>>;

    /// Forecasts every column; override for batched evaluation.
    fn forecast_columns(&self, xs: &DMatrix<f64>, i_n: usize) -> Result<DMatrix<f64>> {
        let cols: Vec<Vec<f64>> = xs
            .column_iter()
            .map(|c| self.forecast_values(c.as_slice(), i_n))
            .collect::<Result<_>>()?;
        let rows = cols.first().map_or(0, Vec::len);
        Ok(DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r]))
    }
}

impl Interpolate for Interpolator {
    fn horizon(&self) -> usize {
        self.horizon
    }

    fn interpolate_values(&self, x_t: &[f64], x_th: &[f64], i: usize) -> Result<Vec<f64>> {
        Interpolator::interpolate_values(self, x_t, x_th, i)
    }
}

impl Forecast for Forecaster {
    fn forecast_values(&self, x: &[f64], i_n: usize) -> Result<Vec<f64>> {
        Forecaster::forecast_values(self, x, i_n)
    }

    fn forecast_columns(&self, xs: &DMatrix<f64>, i_n: usize) -> Result<DMatrix<f64>> {
        Forecaster::forecast_columns(self, xs, i_n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutConfig {
    pub schedule: DiffusionSchedule,
    pub ensemble_size: usize,
    pub input_noise_sigma: f64,
    pub ukf_correct: bool,
    pub windows: usize,
    pub ukf: UkfParams,
    /// Time step stamped on output trajectories.
    pub dt: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            schedule: DiffusionSchedule::default(),
            ensemble_size: 1,
            input_noise_sigma: 0.0,
            ukf_correct: false,
            windows: 1,
            ukf: UkfParams::default(),
            dt: 1.0,
        }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.ensemble_size == 0 || self.windows == 0 {
            return Err(Error::InvalidParameter("ensemble_size and windows must be >= 1".into()));
        }
        if !(self.input_noise_sigma >= 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidParameter("input_noise_sigma must be >= 0 and dt > 0".into()));
        }
        Ok(())
    }
}

fn check_horizon(interp: &impl Interpolate, schedule: &DiffusionSchedule) -> Result<()> {
    schedule.validate()?;
    if interp.horizon() != schedule.horizon {
        return Err(Error::InvalidParameter(format!(
            "interpolator horizon {} differs from schedule horizon {}",
            interp.horizon(),
            schedule.horizon
        )));
    }
    Ok(())
}

/// Result of one window: frames `x̂_t … x̂_{t+h}` and the input state of the
/// last forecast (`x̂_{t+i_{N−1}}`).
struct Window {
    frames: Vec<Vec<f64>>,
    last_input: Vec<f64>,
}

fn sample_window(
    forecaster: &impl Forecast,
    interp: &impl Interpolate,
    x_t: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Window> {
    let h = schedule.horizon;
    let idx = &schedule.indices;
    let mut frames: Vec<Option<Vec<f64>>> = vec![None; h + 1];
    frames[0] = Some(x_t.to_vec());
    let mut current = x_t.to_vec();
    let mut x_h = Vec::new();
    for n in 0..idx.len() {
        x_h = forecaster.forecast_values(&current, idx[n])?;
        if n + 1 < idx.len() {
            let next_i = interp.interpolate_values(x_t, &x_h, idx[n + 1])?;
            let this_i = interp.interpolate_values(x_t, &x_h, idx[n])?;
            for ((c, a), b) in current.iter_mut().zip(&next_i).zip(&this_i) {
                *c += a - b;
            }
            frames[idx[n + 1]] = Some(current.clone());
        }
    }
    let last_input = if idx.len() == 1 { x_t.to_vec() } else { current };
    for (i, slot) in frames.iter_mut().enumerate().take(h).skip(1) {
        if slot.is_none() {
            *slot = Some(interp.interpolate_values(x_t, &x_h, i)?);
        }
    }
    frames[h] = Some(x_h);
    Ok(Window {
        frames: frames.into_iter().map(|f| f.expect("every frame filled")).collect(),
        last_input,
    })
}

/// One cold-sampling window from raw values; returns `h + 1` frames.
pub fn cold_sample_values(
    forecaster: &impl Forecast,
    interp: &impl Interpolate,
    x_t: &[f64],
    schedule: &DiffusionSchedule,
) -> Result<Vec<Vec<f64>>> {
    check_horizon(interp, schedule)?;
    Ok(sample_window(forecaster, interp, x_t, schedule)?.frames)
}

pub fn cold_sample_window(
    forecaster: &impl Forecast,
    interp: &impl Interpolate,
    x_t: &Field,
    cfg: &RolloutConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let frames = cold_sample_values(forecaster, interp, &x_t.values, &cfg.schedule)?;
    Trajectory::new(x_t.spec.clone(), x_t.channels, cfg.dt, frames)
}

/// Corrects the window-end state with the interpolator's one-step
/// extrapolation `2 I(x_s, x̂, h−1) − I(x_s, x̂, h−2)` as a pseudo-measurement.
fn correct_boundary(
    forecaster: &impl Forecast,
    interp: &impl Interpolate,
    x_start: &[f64],
    w: &Window,
    cfg: &RolloutConfig,
) -> Result<Vec<f64>> {
    let h = cfg.schedule.horizon;
    let i_last = *cfg.schedule.indices.last().expect("non-empty schedule");
    let prior = GaussianBelief::isotropic(&w.last_input, cfg.ukf.p0_scale);
    let belief = predict(&prior, |xs: &DMatrix<f64>| forecaster.forecast_columns(xs, i_last), &cfg.ukf)?;
    let x_h = &w.frames[h];
    let a = interp.interpolate_values(x_start, x_h, h - 1)?;
    let b = interp.interpolate_values(x_start, x_h, h - 2)?;
    let z: Vec<f64> = a.iter().zip(&b).map(|(a, b)| 2.0 * a - b).collect();
    let mut noisy = cfg.ukf;
    noisy.r_scale *= PSEUDO_MEASUREMENT_INFLATION;
    let post = update(&belief, &z, |xs: &DMatrix<f64>| Ok(xs.clone()), &noisy)?;
    Ok(post.mean.as_slice().to_vec())
}

/// Autoregressive chain of `windows` cold-sampling windows from raw values.
pub fn rollout_values(
    forecaster: &impl Forecast,
    interp: &impl Interpolate,
    x0: &[f64],
    cfg: &RolloutConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_horizon(interp, &cfg.schedule)?;
    let h = cfg.schedule.horizon;
    let mut out = vec![x0.to_vec()];
    let mut start = x0.to_vec();
    for _ in 0..cfg.windows {
        let mut w = sample_window(forecaster, interp, &start, &cfg.schedule)?;
        if cfg.ukf_correct {
            w.frames[h] = correct_boundary(forecaster, interp, &start, &w, cfg)?;
        }
        start = w.frames[h].clone();
        out.extend(w.frames.into_iter().skip(1));
    }
    Ok(out)
}

/// `windows · h + 1` frames.
pub fn rollout(
    forecaster: &impl Forecast,
    interp: &impl Interpolate,
    x0: &Field,
    cfg: &RolloutConfig,
) -> Result<Trajectory> {
    let frames = rollout_values(forecaster, interp, &x0.values, cfg)?;
    Trajectory::new(x0.spec.clone(), x0.channels, cfg.dt, frames)
}

/// Member `e` starts from `x0 + σ ξ_e`; `ξ_e` comes from stream `e` of the seed.
pub fn ensemble(
    forecaster: &impl Forecast,
    interp: &impl Interpolate,
    x0: &Field,
    cfg: &RolloutConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(e as u64);
            let start: Vec<f64> = x0
                .values
                .iter()
                .map(|v| {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    v + cfg.input_noise_sigma * xi
                })
                .collect();
            let frames = rollout_values(forecaster, interp, &start, cfg)?;
            Trajectory::new(x0.spec.clone(), x0.channels, cfg.dt, frames)
        })
        .collect()
}
