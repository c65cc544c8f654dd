//! Numerical checks of the analytical results behind the method: the
//! regularizer's variance ordering and its MMD consequence, the log-det
//! integral identity, uniform spectral bounds, and the zero-loss and
//! covariance-collapse limits of the likelihood objective.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec, SpectralBasis};
use crate::metrics::mmd2;
use crate::spde::{EllipticOpParams, MaternParams};
use crate::ukf::{sigma_points, ukf_nll, GaussianBelief, UkfParams};

/// The resolvent filter `1 / (1 + λ μ)`.
pub fn resolvent_filter(lambda: f64, mu: f64) -> f64 {
    1.0 / (1.0 + lambda * mu)
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderingReport {
    pub lambda: f64,
    /// Every mode satisfies `v_j f_j² ≤ v_j`.
    pub variance_ordering: bool,
    /// Largest per-mode ratio `Σ_φ / Σ_base`.
    pub max_variance_ratio: f64,
    pub mmd_filtered: f64,
    pub mmd_base: f64,
    pub mmd_ordering: bool,
}

impl OrderingReport {
    pub fn passed(&self) -> bool {
        self.variance_ordering && self.mmd_ordering
    }
}

/// Variance and MMD ordering of filtered versus unfiltered noise around a
/// fixed smooth field `u`, with white spectral noise `v_j = noise_var`.
pub fn verify_theorem_ordering(
    spec: &GridSpec,
    op: &EllipticOpParams,
    lambda: f64,
    n_samples: usize,
    seed: u64,
) -> Result<OrderingReport> {
    verify_theorem_ordering_with(spec, op, lambda, n_samples, seed, resolvent_filter)
}

/// As [`verify_theorem_ordering`] with a caller-supplied mode filter.
pub fn verify_theorem_ordering_with(
    spec: &GridSpec,
    op: &EllipticOpParams,
    lambda: f64,
    n_samples: usize,
    seed: u64,
    filter: impl Fn(f64, f64) -> f64,
) -> Result<OrderingReport> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if n_samples == 0 {
        return Err(Error::InsufficientData("ordering check needs samples".into()));
    }
    if spec.bc != op.bc {
        return Err(Error::BoundaryMismatch {
            op: op.bc.to_string(),
            field: spec.bc.to_string(),
        });
    }
    let noise_var = 0.01;
    let basis = SpectralBasis::new(spec)?;
    let mus = basis.eigenvalues().to_vec();
    let gains: Vec<f64> = mus.iter().map(|&mu| filter(lambda, mu)).collect();
    let ratios: Vec<f64> = gains.iter().map(|g| g * g).collect();
    let max_variance_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let variance_ordering = ratios.iter().all(|&r| noise_var * r <= noise_var);

    let u = Field::from_fn(spec.clone(), |x| {
        x.iter()
            .zip(&spec.extent)
            .map(|(xi, l)| (std::f64::consts::PI * xi / l).sin())
            .product()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = basis.mode_count();
    let mut base = Vec::with_capacity(n_samples);
    let mut filtered = Vec::with_capacity(n_samples);
    let mut coeffs = vec![0.0; m];
    let mut out = vec![0.0; m];
    for _ in 0..n_samples {
        for c in coeffs.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *c = noise_var.sqrt() * xi;
        }
        basis.inverse_channel(&coeffs, &mut out);
        base.push(u.values.iter().zip(&out).map(|(a, b)| a + b).collect::<Vec<_>>());
        let f: Vec<f64> = coeffs.iter().zip(&gains).map(|(c, g)| c * g).collect();
        basis.inverse_channel(&f, &mut out);
        filtered.push(u.values.iter().zip(&out).map(|(a, b)| a + b).collect::<Vec<_>>());
    }
    // the reference distribution is the point mass at u; the kernel length
    // scale is the unfiltered noise's root-mean-square distance from u
    let rho = (base.iter().map(|x| crate::spde::euclidean(x, &u.values).powi(2)).sum::<f64>() / n_samples as f64)
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let kernel = MaternParams::new(1.0, 1.5, rho, 1)?;
    let truth = vec![u.values.clone()];
    let mmd_filtered = mmd2(&filtered, &truth, &kernel)?;
    let mmd_base = mmd2(&base, &truth, &kernel)?;
    Ok(OrderingReport {
        lambda,
        variance_ordering,
        max_variance_ratio,
        mmd_filtered,
        mmd_base,
        mmd_ordering: mmd_filtered <= mmd_base,
    })
}

/// Largest relative deviation of the filtered-to-base per-mode variance
/// ratio from `(1 + λ μ)⁻²` over the grid's Laplacian modes.
pub fn variance_ratio_error(spec: &GridSpec, lambda: f64) -> Result<f64> {
    let basis = SpectralBasis::new(spec)?;
    let noise_var = 0.01;
    Ok(basis
        .eigenvalues()
        .iter()
        .map(|&mu| {
            let g = resolvent_filter(lambda, mu);
            let ratio = (noise_var * g * g) / noise_var;
            let want = (1.0 + lambda * mu).powi(-2);
            ((ratio - want) / want).abs()
        })
        .fold(0.0, f64::max))
}

fn random_orthogonal(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    a.qr().q()
}

/// Random PD matrix with spectrum drawn uniformly from `[lo, hi]`.
fn random_pd(d: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    let q = random_orthogonal(d, rng);
    let eigs = DVector::from_fn(d, |_, _| rng.random_range(lo..=hi));
    &q * DMatrix::from_diagonal(&eigs) * q.transpose()
}

fn log_det(a: &DMatrix<f64>) -> Result<f64> {
    let c = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))?;
    Ok(2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

#[derive(Debug, Clone, Serialize)]
pub struct LogDetReport {
    pub dim: usize,
    pub direct: f64,
    pub quadrature: f64,
    pub abs_error: f64,
}

/// `log|A| − log|B|` against the quadrature of `tr[(B + s(A−B))⁻¹ (A−B)]`
/// over `s ∈ [0, 1]` with 64 two-point Gauss–Legendre panels.
pub fn verify_logdet_quadrature(d: usize, seed: u64) -> Result<LogDetReport> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_pd(d, 0.5, 2.0, &mut rng);
    let b = random_pd(d, 0.5, 2.0, &mut rng);
    let diff = &a - &b;
    let integrand = |s: f64| -> Result<f64> {
        let m = &b + &diff * s;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::Factorization("path matrix is not positive definite".into()))?;
        Ok(chol.solve(&diff).trace())
    };
    let panels = 64;
    let node = 0.5 / 3f64.sqrt();
    let mut quadrature = 0.0;
    for k in 0..panels {
        let h = 1.0 / panels as f64;
        let mid = (k as f64 + 0.5) * h;
        quadrature += 0.5 * h * (integrand(mid - node * h)? + integrand(mid + node * h)?);
    }
    let direct = log_det(&a)? - log_det(&b)?;
    Ok(LogDetReport {
        dim: d,
        direct,
        quadrature,
        abs_error: (direct - quadrature).abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralBoundReport {
    pub dim: usize,
    pub m: f64,
    pub big_m: f64,
    pub perturbation_norm: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub inside: bool,
}

/// Builds `Q` with spectrum in `[m, M]` and a symmetric perturbation of
/// spectral norm below `m/2`, then checks `spec(Q + E) ⊂ [m/2, 2M]`.
pub fn verify_spectral_bounds(d: usize, seed: u64) -> Result<SpectralBoundReport> {
    if d == 0 {
        return Err(Error::InvalidParameter("dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, big_m) = (rng.random_range(0.1..1.0), rng.random_range(2.0..5.0));
    let basis = random_orthogonal(d, &mut rng);
    let eigs = DVector::from_fn(d, |i, _| {
        if i == 0 {
            m
        } else if i == d - 1 {
            big_m
        } else {
            rng.random_range(m..big_m)
        }
    });
    let q = &basis * DMatrix::from_diagonal(&eigs) * basis.transpose();
    let raw: DMatrix<f64> = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let sym: DMatrix<f64> = (&raw + raw.transpose()) * 0.5;
    let norm = SymmetricEigen::new(sym.clone()).eigenvalues.abs().max();
    let target = rng.random_range(0.0..0.5) * m;
    let e = if norm > 0.0 { sym * (target / norm) } else { sym };
    let perturbation_norm = SymmetricEigen::new(e.clone()).eigenvalues.abs().max();
    let spec = SymmetricEigen::new(&q + &e).eigenvalues;
    let (min_eig, max_eig) = (spec.min(), spec.max());
    Ok(SpectralBoundReport {
        dim: d,
        m,
        big_m,
        perturbation_norm,
        min_eig,
        max_eig,
        inside: perturbation_norm < m / 2.0 && min_eig >= m / 2.0 && max_eig <= 2.0 * big_m,
    })
}

/// Loss of an exact predictor whose belief covariance is `(2π)⁻¹ I`, so that
/// `|P| = (2π)^{−d}`: both the squared error and the likelihood vanish.
pub fn zero_loss_value(d: usize) -> Result<f64> {
    let x = vec![0.25; d];
    let belief = GaussianBelief::isotropic(&x, 1.0 / (2.0 * std::f64::consts::PI));
    let mse: f64 = 0.0;
    Ok(mse + ukf_nll(&x, &belief)?)
}

/// Trace of the weighted sigma-point covariance after pushing a collapsed
/// belief through an exact (identity) predictor.
pub fn sigma_collapse_trace(d: usize) -> Result<f64> {
    let p = UkfParams {
        q_scale: f64::MIN_POSITIVE,
        p0_scale: f64::MIN_POSITIVE,
        ..UkfParams::default()
    };
    let b = GaussianBelief::new(DVector::from_element(d, 0.5), DMatrix::zeros(d, d))?;
    let sigma = sigma_points(&b, &p)?;
    let (_, cov) = sigma.moments(&sigma.points);
    Ok(cov.trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;

    #[test]
    fn single_mode_ratio_is_quarter() {
        let f = resolvent_filter(1.0, 1.0);
        assert_eq!(f * f, 0.25);
        assert_eq!(resolvent_filter(0.0, 123.0), 1.0);
    }

    #[test]
    fn identity_filter_gives_equal_mmd() {
        let spec = GridSpec::line(16, 1.0, BoundaryCondition::Periodic).unwrap();
        let op = EllipticOpParams { l: 0.05, alpha: 2.0, bc: BoundaryCondition::Periodic };
        let r = verify_theorem_ordering(&spec, &op, 0.0, 50, 1).unwrap();
        assert_eq!(r.mmd_base, r.mmd_filtered);
        assert_eq!(r.max_variance_ratio, 1.0);
    }

    #[test]
    fn limits_hold() {
        assert!(zero_loss_value(7).unwrap().abs() < 1e-10);
        assert!(sigma_collapse_trace(8).unwrap() < 1e-8);
        let r = verify_logdet_quadrature(4, 2).unwrap();
        assert!(r.abs_error < 1e-6, "{r:?}");
        assert!(verify_spectral_bounds(5, 3).unwrap().inside);
    }
}
