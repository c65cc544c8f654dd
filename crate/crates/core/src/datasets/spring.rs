//! A k×k mesh of unit masses joined by linear springs to their four
//! neighbours, with a fixed outer ring. Displacement is out of plane.
//!
//! Frames carry two channels: displacement `x_n` and the velocity `v_n` that
//! produced it (`x_n = x_{n-1} + dt v_n`), i.e. the staggered half-step
//! velocity of symplectic Euler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, GridSpec};
use crate::spde::{sample_grf_with, MaternParams};
use crate::grid::SpectralBasis;

const BLOWUP: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpringParams {
    pub k: usize,
    pub n_frames: usize,
    pub stiffness: f64,
    pub damping: f64,
    pub dt: f64,
    pub substeps: usize,
    /// Length scale of the random initial displacement.
    pub init_rho: f64,
}

impl Default for SpringParams {
    fn default() -> Self {
        SpringParams {
            k: 6,
            n_frames: 128,
            stiffness: 1.0,
            damping: 0.0,
            dt: 0.05,
            substeps: 2,
            init_rho: 0.3,
        }
    }
}

impl SpringParams {
    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::square(self.k, 1.0, BoundaryCondition::Dirichlet)
    }

    fn step_dt(&self) -> f64 {
        self.dt / self.substeps.max(1) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.k < 2 || self.substeps == 0 || self.n_frames < 2 {
            return Err(Error::InvalidParameter(format!(
                "spring mesh needs k >= 2, substeps >= 1, n_frames >= 2, got {self:?}"
            )));
        }
        if !(self.stiffness > 0.0) || !(self.damping >= 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(
                "spring mesh needs stiffness > 0, damping >= 0, dt > 0".into(),
            ));
        }
        // the largest stiffness eigenvalue is below 8·stiffness
        let bound = 2.0 / (8.0 * self.stiffness).sqrt();
        if self.step_dt() >= bound {
            return Err(Error::InvalidParameter(format!(
                "step {} exceeds the stability bound {bound}",
                self.step_dt()
            )));
        }
        Ok(())
    }
}

/// `K x` for the fixed-ring mesh Laplacian scaled by `stiffness`.
fn stiffness_apply(x: &[f64], k: usize, stiffness: f64, out: &mut [f64]) {
    for i in 0..k {
        for j in 0..k {
            let at = |a: isize, b: isize| {
                if a < 0 || b < 0 || a >= k as isize || b >= k as isize {
                    0.0
                } else {
                    x[a as usize * k + b as usize]
                }
            };
            let (ii, jj) = (i as isize, j as isize);
            let nb = at(ii - 1, jj) + at(ii + 1, jj) + at(ii, jj - 1) + at(ii, jj + 1);
            out[i * k + j] = stiffness * (4.0 * x[i * k + j] - nb);
        }
    }
}

/// `v ← v − dt (K x + γ v)`, then `x ← x + dt v`.
fn step(x: &mut [f64], v: &mut [f64], kx: &mut [f64], p: &SpringParams, dt: f64) {
    stiffness_apply(x, p.k, p.stiffness, kx);
    for ((xi, vi), f) in x.iter_mut().zip(v.iter_mut()).zip(kx.iter()) {
        *vi -= dt * (f + p.damping * *vi);
        *xi += dt * *vi;
    }
}

/// Staggered energy `½ v_{n-½}·v_{n+½} + ½ xᵀK x`, evaluated at substep
/// resolution. Conserved exactly without damping and nonincreasing with it.
pub fn spring_energy(frame: &[f64], p: &SpringParams) -> f64 {
    let m = p.k * p.k;
    let (x, v) = frame.split_at(m);
    let mut kx = vec![0.0; m];
    stiffness_apply(x, p.k, p.stiffness, &mut kx);
    let dt = p.step_dt();
    let mut e = 0.0;
    for i in 0..m {
        let v_next = v[i] - dt * (kx[i] + p.damping * v[i]);
        e += 0.5 * v[i] * v_next + 0.5 * x[i] * kx[i];
    }
    e
}

pub fn simulate_springmesh(p: &SpringParams, x0: &[f64], v0: &[f64]) -> Result<Trajectory> {
    p.validate()?;
    let m = p.k * p.k;
    if x0.len() != m || v0.len() != m {
        return Err(Error::DimensionMismatch {
            context: "spring mesh initial condition",
            expected: m,
            actual: x0.len().min(v0.len()),
        });
    }
    let dt = p.step_dt();
    let (mut x, mut v) = (x0.to_vec(), v0.to_vec());
    let mut kx = vec![0.0; m];
    let frame = |x: &[f64], v: &[f64]| x.iter().chain(v).copied().collect::<Vec<f64>>();
    let mut frames = vec![frame(&x, &v)];
    for f in 1..p.n_frames {
        for _ in 0..p.substeps {
            step(&mut x, &mut v, &mut kx, p, dt);
        }
        if x.iter().chain(&v).any(|a| !a.is_finite() || a.abs() > BLOWUP) {
            return Err(Error::Unstable { step: f });
        }
        frames.push(frame(&x, &v));
    }
    Trajectory::new(p.spec()?, 2, p.dt, frames)
}

/// Random smooth initial displacement (Matérn ν = 3/2 field), at rest.
pub fn gen_springmesh(p: &SpringParams, seed: u64) -> Result<Trajectory> {
    p.validate()?;
    let spec = p.spec()?;
    let matern = MaternParams::new(1.0, 1.5, p.init_rho, 2)?;
    let basis = SpectralBasis::new(&spec)?;
    let x0 = sample_grf_with(&matern, &basis, &mut ChaCha8Rng::seed_from_u64(seed))?.values;
    simulate_springmesh(p, &x0, &vec![0.0; x0.len()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_state_is_static() {
        let p = SpringParams::default();
        let t = simulate_springmesh(&p, &[0.0; 36], &[0.0; 36]).unwrap();
        assert!(t.frames.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(t.channels, 2);
        assert_eq!(t.spec.bc, BoundaryCondition::Dirichlet);
    }

    #[test]
    fn undamped_energy_is_conserved() {
        let p = SpringParams {
            n_frames: 500,
            ..SpringParams::default()
        };
        let mut x0 = vec![0.0; 36];
        x0[14] = 1.0;
        let t = simulate_springmesh(&p, &x0, &[0.0; 36]).unwrap();
        let e0 = spring_energy(&t.frames[0], &p);
        for f in &t.frames {
            assert!(((spring_energy(f, &p) - e0) / e0).abs() < 1e-10);
        }
    }

    #[test]
    fn damped_energy_never_increases() {
        let p = SpringParams {
            damping: 0.2,
            n_frames: 300,
            ..SpringParams::default()
        };
        let t = gen_springmesh(&p, 9).unwrap();
        let e: Vec<f64> = t.frames.iter().map(|f| spring_energy(f, &p)).collect();
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-14 * w[0].abs());
        }
        assert!(e.last().unwrap() < &e[0]);
    }

    #[test]
    fn unstable_step_is_rejected() {
        let p = SpringParams {
            dt: 1.0,
            substeps: 1,
            ..SpringParams::default()
        };
        assert!(gen_springmesh(&p, 0).is_err());
    }
}
