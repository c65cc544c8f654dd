//! Matérn covariances, fractional elliptic operators and SPDE field sampling.
//!
//! The elliptic operator `(E - κ⁻²Δ)^{α/2}` with `κ = 1/l` acts on the
//! Laplacian eigenbasis as the multiplier `(1 + l² μ_j)^{α/2}`. Sampling a
//! Gaussian random field applies the inverse power to white-noise coefficients.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::{BoundaryCondition, Field, GridSpec, SpectralBasis};

/// Parameters of the Matérn covariance `C(r) = σ² M_ν(κ r)`, `κ = √(2ν)/ρ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub sigma2: f64,
    pub nu: f64,
    pub rho: f64,
    pub dim: usize,
}

impl MaternParams {
    pub fn new(sigma2: f64, nu: f64, rho: f64, dim: usize) -> Result<Self> {
        let p = MaternParams {
            sigma2,
            nu,
            rho,
            dim,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.nu > 0.0 && self.rho > 0.0) || self.dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "Matérn parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        (2.0 * self.nu).sqrt() / self.rho
    }

    /// SPDE exponent `α = ν + d/2`.
    pub fn alpha(&self) -> f64 {
        self.nu + self.dim as f64 / 2.0
    }

    /// Squared SPDE normalization `η² = σ²(4π)^{d/2} Γ(ν+d/2) / (κ^d Γ(ν))`.
    pub fn eta2(&self) -> f64 {
        let d = self.dim as f64;
        self.sigma2 * (4.0 * std::f64::consts::PI).powf(d / 2.0) * gamma(self.nu + d / 2.0)
            / (self.kappa().powf(d) * gamma(self.nu))
    }

    fn check_supported(&self) -> Result<()> {
        if [0.5, 1.5, 2.5].iter().any(|&v| (self.nu - v).abs() < 1e-12) {
            Ok(())
        } else {
            Err(Error::UnsupportedSmoothness(self.nu))
        }
    }
}

/// Unit Matérn function `M_ν(x)` for half-integer `ν ∈ {1/2, 3/2, 5/2}`.
pub fn unit_matern(nu: f64, x: f64) -> Result<f64> {
    let e = (-x).exp();
    if (nu - 0.5).abs() < 1e-12 {
        Ok(e)
    } else if (nu - 1.5).abs() < 1e-12 {
        Ok((1.0 + x) * e)
    } else if (nu - 2.5).abs() < 1e-12 {
        Ok((1.0 + x + x * x / 3.0) * e)
    } else {
        Err(Error::UnsupportedSmoothness(nu))
    }
}

pub fn matern_cov(r: f64, p: &MaternParams) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::InvalidParameter(format!("distance {r} must be >= 0")));
    }
    p.validate()?;
    Ok(p.sigma2 * unit_matern(p.nu, p.kappa() * r)?)
}

/// Matérn spectral density with `C(r) = (2π)^{-d} ∫ S(k) e^{ik·r} dk`.
pub fn matern_spectral_density(k_norm: f64, p: &MaternParams) -> f64 {
    let d = p.dim as f64;
    let kappa = p.kappa();
    let alpha = p.alpha();
    p.sigma2 * 2f64.powf(d) * std::f64::consts::PI.powf(d / 2.0) * gamma(alpha) * kappa.powf(2.0 * p.nu)
        / (gamma(p.nu) * (kappa * kappa + k_norm * k_norm).powf(alpha))
}

/// Parameters of the regularizing operator `(E - l²Δ)^{α/2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticOpParams {
    pub l: f64,
    pub alpha: f64,
    pub bc: BoundaryCondition,
}

impl EllipticOpParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.l.is_finite()) || !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "elliptic operator needs l > 0 and alpha >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Per-mode multiplier raised to `power` (1 for the operator itself).
    pub fn multiplier(&self, mu: f64, power: f64) -> f64 {
        (1.0 + self.l * self.l * mu).powf(power * self.alpha / 2.0)
    }
}

fn check_bc(spec: &GridSpec, p: &EllipticOpParams) -> Result<()> {
    if spec.bc != p.bc {
        return Err(Error::BoundaryMismatch {
            op: p.bc.to_string(),
            field: spec.bc.to_string(),
        });
    }
    Ok(())
}

/// The fractional operator bound to one grid, with its basis precomputed.
#[derive(Debug, Clone)]
pub struct FractionalOperator {
    basis: SpectralBasis,
    params: EllipticOpParams,
    multipliers: Vec<f64>,
}

impl FractionalOperator {
    pub fn new(spec: &GridSpec, params: EllipticOpParams) -> Result<Self> {
        params.validate()?;
        check_bc(spec, &params)?;
        let basis = SpectralBasis::new(spec)?;
        let multipliers = basis.eigenvalues().iter().map(|&mu| params.multiplier(mu, 1.0)).collect();
        Ok(FractionalOperator {
            basis,
            params,
            multipliers,
        })
    }

    pub fn params(&self) -> &EllipticOpParams {
        &self.params
    }

    pub fn spec(&self) -> &GridSpec {
        self.basis.spec()
    }

    /// Applies the operator `power` times to raw channel-major values.
    pub fn apply_values(&self, values: &[f64], power: i32) -> Vec<f64> {
        let m = self.basis.mode_count();
        let mut coeffs = vec![0.0; m];
        let mut out = vec![0.0; values.len()];
        for (chan_in, chan_out) in values.chunks(m).zip(out.chunks_mut(m)) {
            self.basis.forward_channel(chan_in, &mut coeffs);
            for (c, s) in coeffs.iter_mut().zip(&self.multipliers) {
                *c *= s.powi(power);
            }
            self.basis.inverse_channel(&coeffs, chan_out);
        }
        out
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        check_bc(&f.spec, &self.params)?;
        if f.spec != *self.basis.spec() {
            return Err(Error::InvalidGrid("field grid differs from operator grid".into()));
        }
        if !f.is_finite() {
            return Err(Error::NonFinite("fractional operator input"));
        }
        Field::new(f.spec.clone(), f.channels, self.apply_values(&f.values, 1))
    }

    /// Mean square of the operator applied to raw values.
    pub fn residual_sq_values(&self, values: &[f64]) -> f64 {
        let out = self.apply_values(values, 1);
        out.iter().map(|v| v * v).sum::<f64>() / out.len() as f64
    }
}

pub fn apply_fractional_op(f: &Field, p: &EllipticOpParams) -> Result<Field> {
    FractionalOperator::new(&f.spec, *p)?.apply(f)
}

/// Quadrature-weighted mean square of `(E - l²Δ)^{α/2} f`.
pub fn pde_residual_sq(f: &Field, p: &EllipticOpParams) -> Result<f64> {
    Ok(apply_fractional_op(f, p)?.mean_square())
}

/// Draws `u = η (E - κ⁻²Δ)^{-α/2} W` with spectral white noise `W`.
pub fn sample_grf(p: &MaternParams, spec: &GridSpec, seed: u64) -> Result<Field> {
    let basis = SpectralBasis::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_grf_with(p, &basis, &mut rng)
}

/// Same as [`sample_grf`] with a prebuilt basis and caller-owned generator.
pub fn sample_grf_with(p: &MaternParams, basis: &SpectralBasis, rng: &mut impl rand::Rng) -> Result<Field> {
    p.validate()?;
    if p.dim != basis.spec().ndim() {
        return Err(Error::DimensionMismatch {
            context: "Matérn dimension vs grid axes",
            expected: basis.spec().ndim(),
            actual: p.dim,
        });
    }
    let eta = p.eta2().sqrt();
    let kappa2 = p.kappa().powi(2);
    let alpha = p.alpha();
    let coeffs: Vec<f64> = basis
        .eigenvalues()
        .iter()
        .map(|&mu| {
            let xi: f64 = StandardNormal.sample(rng);
            eta * (1.0 + mu / kappa2).powf(-alpha / 2.0) * xi
        })
        .collect();
    basis.from_spectral(&coeffs, 1)
}

/// Smallest eigenvalue of the Matérn Gram matrix over `points`.
pub fn kernel_gram_psd_check(points: &[Vec<f64>], p: &MaternParams) -> Result<f64> {
    p.check_supported()?;
    if points.is_empty() || points.len() > 200 {
        return Err(Error::InvalidParameter(format!(
            "Gram check takes 1..=200 points, got {}",
            points.len()
        )));
    }
    let gram = gram_matrix(points, points, p)?;
    Ok(gram.symmetric_eigenvalues().min())
}

pub(crate) fn gram_matrix(a: &[Vec<f64>], b: &[Vec<f64>], p: &MaternParams) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(a.len(), b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            g[(i, j)] = matern_cov(euclidean(x, y), p)?;
        }
    }
    Ok(g)
}

pub(crate) fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
}
