//! Unscented Kalman filter: sigma points, predict, update, and the Gaussian
//! negative log-likelihood used as a training loss.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest state dimension handled with a full covariance.
pub const MAX_STATE_DIM: usize = 256;

const CLAMP_REL: f64 = 1e-12;
const CLAMP_ABS: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub q_scale: f64,
    pub r_scale: f64,
    pub p0_scale: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        UkfParams {
            alpha: 0.5,
            beta: 2.0,
            kappa: 0.0,
            q_scale: 1e-4,
            r_scale: 1e-2,
            p0_scale: 1e-2,
        }
    }
}

impl UkfParams {
    /// `λ = α²(n + κ) − n`.
    pub fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(n as f64 + self.lambda(n) > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "n + lambda must be positive (n = {n}, lambda = {})",
                self.lambda(n)
            )));
        }
        if !(self.q_scale > 0.0 && self.r_scale > 0.0 && self.p0_scale > 0.0) {
            return Err(Error::InvalidParameter(
                "q_scale, r_scale and p0_scale must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Mean and covariance weights for `2n + 1` sigma points.
    pub fn weights(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let lambda = self.lambda(n);
        let spread = n as f64 + lambda;
        let wi = 1.0 / (2.0 * spread);
        let mut wm = vec![wi; 2 * n + 1];
        let mut wc = vec![wi; 2 * n + 1];
        wm[0] = lambda / spread;
        wc[0] = lambda / spread + (1.0 - self.alpha * self.alpha + self.beta);
        (wm, wc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "belief covariance",
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        Ok(GaussianBelief { mean, cov })
    }

    /// `N(mean, scale · I)`.
    pub fn isotropic(mean: &[f64], scale: f64) -> Self {
        let n = mean.len();
        GaussianBelief {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal_element(n, n, scale),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `2n + 1` sigma points (as matrix columns) with their weights.
#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub points: DMatrix<f64>,
    pub w_m: Vec<f64>,
    pub w_c: Vec<f64>,
}

impl SigmaSet {
    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    /// Weighted mean and covariance of transformed points `ys` (one per column).
    pub fn moments(&self, ys: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let mean = ys * DVector::from_column_slice(&self.w_m);
        let centered = DMatrix::from_fn(ys.nrows(), ys.ncols(), |r, c| (ys[(r, c)] - mean[r]) * self.w_c[c].abs().sqrt());
        // split by sign so a negative central weight is handled exactly
        let rest = centered.columns(1, ys.ncols() - 1);
        let mut cov = &rest * rest.transpose();
        let c0 = centered.column(0);
        let sign = self.w_c[0].signum();
        cov.ger(sign, &c0, &c0, 1.0);
        (mean, cov)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn clamp_floor(cov: &DMatrix<f64>) -> f64 {
    (CLAMP_REL * cov.trace().abs()).max(CLAMP_ABS)
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || m[(i, j)] == 0.0))
}

/// Symmetric PSD square root with eigenvalues clamped at `1e-12 · trace`.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let floor = clamp_floor(cov);
    if is_diagonal(cov) {
        return Ok(DMatrix::from_diagonal(&cov.diagonal().map(|d| d.max(floor).sqrt())));
    }
    let eig = SymmetricEigen::new(cov.clone());
    let tol = -1e-8 * cov.trace().abs().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < tol || !l.is_finite()) {
        return Err(Error::Factorization(format!(
            "covariance is indefinite (min eigenvalue {})",
            eig.eigenvalues.min()
        )));
    }
    let d = eig.eigenvalues.map(|l| l.max(floor).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Re-symmetrizes and clamps the spectrum from below at `1e-12 · trace`.
pub fn stabilize(cov: &mut DMatrix<f64>) {
    symmetrize(cov);
    let floor = clamp_floor(cov);
    if is_diagonal(cov) {
        for i in 0..cov.nrows() {
            cov[(i, i)] = cov[(i, i)].max(floor);
        }
        return;
    }
    let eig = SymmetricEigen::new(cov.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return;
    }
    let d = eig.eigenvalues.map(|l| l.max(floor));
    *cov = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
    symmetrize(cov);
}

pub fn sigma_points(b: &GaussianBelief, p: &UkfParams) -> Result<SigmaSet> {
    let n = b.dim();
    if n > MAX_STATE_DIM {
        return Err(Error::StateTooLarge {
            dim: n,
            cap: MAX_STATE_DIM,
        });
    }
    p.validate(n)?;
    let spread = n as f64 + p.lambda(n);
    let root = psd_sqrt(&b.cov)? * spread.sqrt();
    let mut points = DMatrix::zeros(n, 2 * n + 1);
    points.set_column(0, &b.mean);
    for i in 0..n {
        let col = root.column(i);
        points.set_column(1 + i, &(&b.mean + col));
        points.set_column(1 + n + i, &(&b.mean - col));
    }
    let (w_m, w_c) = p.weights(n);
    Ok(SigmaSet { points, w_m, w_c })
}

/// Applies a per-vector map to every column.
pub fn columnwise(
    mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>,
) -> impl FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>> {
    move |x: &DMatrix<f64>| {
        let cols: Vec<Vec<f64>> = x
            .column_iter()
            .map(|c| f(c.as_slice()))
            .collect::<Result<_>>()?;
        let rows = cols.first().map_or(0, Vec::len);
        Ok(DMatrix::from_fn(rows, cols.len(), |r, c| cols[c][r]))
    }
}

/// Propagates the belief through `f` (applied to all sigma points at once).
pub fn predict(
    b: &GaussianBelief,
    mut f: impl FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    p: &UkfParams,
) -> Result<GaussianBelief> {
    let sigma = sigma_points(b, p)?;
    let ys = f(&sigma.points)?;
    if ys.ncols() != sigma.len() {
        return Err(Error::DimensionMismatch {
            context: "transition output columns",
            expected: sigma.len(),
            actual: ys.ncols(),
        });
    }
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("state transition output"));
    }
    let (mean, mut cov) = sigma.moments(&ys);
    for i in 0..cov.nrows() {
        cov[(i, i)] += p.q_scale;
    }
    symmetrize(&mut cov);
    GaussianBelief::new(mean, cov)
}

/// Measurement update with `R = r_scale · I`.
pub fn update(
    b_pred: &GaussianBelief,
    z: &[f64],
    mut h: impl FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    p: &UkfParams,
) -> Result<GaussianBelief> {
    let sigma = sigma_points(b_pred, p)?;
    let zs = h(&sigma.points)?;
    if zs.nrows() != z.len() {
        return Err(Error::DimensionMismatch {
            context: "measurement",
            expected: zs.nrows(),
            actual: z.len(),
        });
    }
    if zs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement function output"));
    }
    let (z_hat, mut s) = sigma.moments(&zs);
    for i in 0..s.nrows() {
        s[(i, i)] += p.r_scale;
    }
    symmetrize(&mut s);

    let n = b_pred.dim();
    let mut pxz = DMatrix::zeros(n, z.len());
    for c in 0..sigma.len() {
        let dx = sigma.points.column(c) - &b_pred.mean;
        let dz = zs.column(c) - &z_hat;
        pxz.ger(sigma.w_c[c], &dx, &dz, 1.0);
    }
    let chol = Cholesky::new(s.clone())
        .ok_or_else(|| Error::Factorization("innovation covariance is not positive definite".into()))?;
    // G = Pxz S⁻¹  ⇔  S Gᵀ = Pxzᵀ
    let gain = chol.solve(&pxz.transpose()).transpose();
    let innovation = DVector::from_column_slice(z) - z_hat;
    let mean = &b_pred.mean + &gain * innovation;
    let mut cov = &b_pred.cov - &gain * &s * gain.transpose();
    stabilize(&mut cov);
    GaussianBelief::new(mean, cov)
}

/// Pieces of the Gaussian negative log-likelihood of `x_true` under a belief.
#[derive(Debug, Clone)]
pub struct Nll {
    pub value: f64,
    pub log_det: f64,
    pub mahalanobis: f64,
    /// `P⁻¹ e` with `e = x_true − mean`.
    pub precision_error: DVector<f64>,
}

pub fn ukf_nll_parts(x_true: &[f64], b: &GaussianBelief) -> Result<Nll> {
    let d = b.dim();
    if x_true.len() != d {
        return Err(Error::DimensionMismatch {
            context: "nll target",
            expected: d,
            actual: x_true.len(),
        });
    }
    let chol = match Cholesky::new(b.cov.clone()) {
        Some(c) => c,
        None => {
            let mut cov = b.cov.clone();
            stabilize(&mut cov);
            Cholesky::new(cov).ok_or_else(|| {
                Error::Factorization("covariance not positive definite after clamping".into())
            })?
        }
    };
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let e = DVector::from_column_slice(x_true) - &b.mean;
    let precision_error = chol.solve(&e);
    let mahalanobis = e.dot(&precision_error);
    let value = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det + 0.5 * mahalanobis;
    if !value.is_finite() {
        return Err(Error::NonFinite("negative log-likelihood"));
    }
    Ok(Nll {
        value,
        log_det,
        mahalanobis,
        precision_error,
    })
}

/// `d/2 log 2π + ½ log|P| + ½ eᵀP⁻¹e`.
pub fn ukf_nll(x_true: &[f64], b: &GaussianBelief) -> Result<f64> {
    Ok(ukf_nll_parts(x_true, b)?.value)
}
