//! 1D periodic wave equation `u_tt = c² u_xx` integrated with leapfrog.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaveParams {
    pub n_grid: usize,
    pub n_frames: usize,
    pub length: f64,
    pub c: f64,
    /// Time between stored frames.
    pub dt: f64,
    /// Leapfrog steps per stored frame.
    pub substeps: usize,
    /// Pulse width range as a fraction of the domain length.
    pub width: (f64, f64),
    pub amplitude: (f64, f64),
}

impl Default for WaveParams {
    fn default() -> Self {
        WaveParams {
            n_grid: 64,
            n_frames: 128,
            length: 1.0,
            c: 1.0,
            dt: 1.0 / 128.0,
            substeps: 4,
            width: (0.05, 0.12),
            amplitude: (0.5, 1.5),
        }
    }
}

impl WaveParams {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::line(self.n_grid, self.length, BoundaryCondition::Periodic)
    }

    /// Courant number of one leapfrog step.
    pub fn courant(&self) -> f64 {
        self.c * (self.dt / self.substeps.max(1) as f64) * self.n_grid as f64 / self.length
    }

    fn validate(&self) -> Result<()> {
        if self.substeps == 0 || !(self.dt > 0.0) || !(self.c >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "wave needs dt > 0, c >= 0 and at least one substep, got {self:?}"
            )));
        }
        if self.n_frames < 2 {
            return Err(Error::InvalidParameter("wave needs at least 2 frames".into()));
        }
        let courant = self.courant();
        if courant > 1.0 {
            return Err(Error::Cfl(courant));
        }
        Ok(())
    }
}

fn laplacian(u: &[f64], out: &mut [f64], inv_dx2: f64) {
    let n = u.len();
    for j in 0..n {
        let l = u[(j + n - 1) % n];
        let r = u[(j + 1) % n];
        out[j] = (l - 2.0 * u[j] + r) * inv_dx2;
    }
}

/// Discrete energy `Σ (u_t² + c² u_x²) dx` with `u_t` from the frame pair
/// `prev`/`next` around `u` and forward differences for `u_x`.
pub fn wave_energy(prev: &[f64], u: &[f64], next: &[f64], dt: f64, c: f64, dx: f64) -> f64 {
    let n = u.len();
    (0..n)
        .map(|j| {
            let ut = (next[j] - prev[j]) / (2.0 * dt);
            let ux = (u[(j + 1) % n] - u[j]) / dx;
            (ut * ut + c * c * ux * ux) * dx
        })
        .sum()
}

/// Integrates from an initial displacement and velocity.
///
/// Returns the trajectory and the energy at every stored frame, measured on
/// the leapfrog substep grid.
pub fn simulate_wave(p: &WaveParams, u0: &[f64], v0: &[f64]) -> Result<(Trajectory, Vec<f64>)> {
    p.validate()?;
    let spec = p.spec()?;
    let n = p.n_grid;
    if u0.len() != n || v0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "wave initial condition",
            expected: n,
            actual: u0.len().min(v0.len()),
        });
    }
    let dx = p.length / n as f64;
    let k = p.dt / p.substeps as f64;
    let inv_dx2 = 1.0 / (dx * dx);
    let c2k2 = p.c * p.c * k * k;

    let mut lap = vec![0.0; n];
    laplacian(u0, &mut lap, inv_dx2);
    let mut prev = u0.to_vec();
    let mut cur: Vec<f64> = (0..n).map(|j| u0[j] + k * v0[j] + 0.5 * c2k2 * lap[j]).collect();
    let mut next = vec![0.0; n];
    // energy at substep state `prev`, using the one step before it
    let step = |prev: &mut Vec<f64>, cur: &mut Vec<f64>, next: &mut Vec<f64>, lap: &mut Vec<f64>| {
        laplacian(cur, lap, inv_dx2);
        for j in 0..n {
            next[j] = 2.0 * cur[j] - prev[j] + c2k2 * lap[j];
        }
        std::mem::swap(prev, cur);
        std::mem::swap(cur, next);
    };

    // u^{-1} via the same Taylor start, for the first energy sample
    let before: Vec<f64> = (0..n).map(|j| u0[j] - k * v0[j] + 0.5 * c2k2 * lap[j]).collect();
    let mut frames = vec![u0.to_vec()];
    let mut energies = vec![wave_energy(&before, u0, &cur, k, p.c, dx)];
    for f in 1..p.n_frames {
        let mut last = prev.clone();
        for _ in 0..p.substeps {
            last.clone_from(&prev);
            step(&mut prev, &mut cur, &mut next, &mut lap);
        }
        if prev.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unstable { step: f });
        }
        energies.push(wave_energy(&last, &prev, &cur, k, p.c, dx));
        frames.push(prev.clone());
    }
    Ok((Trajectory::new(spec, 1, p.dt, frames)?, energies))
}

/// Periodic Gaussian pulse at rest with random center, width and amplitude:
/// `(u0, v0)`.
pub fn pulse_initial_condition(p: &WaveParams, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = p.length;
    let center = rng.random_range(0.0..l);
    let width = l * rng.random_range(p.width.0..=p.width.1);
    let amp = rng.random_range(p.amplitude.0..=p.amplitude.1);
    let xs = p.spec()?.coords(0);
    let wrap = |x: f64| {
        let d = (x - center).rem_euclid(l);
        if d > l / 2.0 {
            d - l
        } else {
            d
        }
    };
    let u0: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let d = wrap(x);
            amp * (-d * d / (2.0 * width * width)).exp()
        })
        .collect();
    let v0 = vec![0.0; u0.len()];
    Ok((u0, v0))
}

/// A pulse trajectory together with its per-frame energy.
pub fn gen_wave1d_with_energy(p: &WaveParams, seed: u64) -> Result<(Trajectory, Vec<f64>)> {
    p.validate()?;
    let (u0, v0) = pulse_initial_condition(p, seed)?;
    simulate_wave(p, &u0, &v0)
}

pub fn gen_wave1d(p: &WaveParams, seed: u64) -> Result<Trajectory> {
    Ok(gen_wave1d_with_energy(p, seed)?.0)
}
