//! Regular grids, fields, and the orthonormal Laplacian eigenbases.
//!
//! Every boundary condition gets the analytic eigenbasis of the continuum
//! Laplacian sampled on its node set:
//!
//! | bc        | nodes                  | modes                               |
//! |-----------|------------------------|-------------------------------------|
//! | Periodic  | `x_j = j L / n`        | constant, `cos/sin(2πkx/L)`, Nyquist |
//! | Dirichlet | `x_j = (j+1) L / (n+1)` | `sin(πkx/L)`, `k = 1..=n`           |
//! | Neumann   | `x_j = (j+½) L / n`    | `cos(πkx/L)`, `k = 0..n`            |
//!
//! Dirichlet grids store interior nodes only; the boundary values are the
//! implied zeros. Each sampled basis is exactly orthogonal under the uniform
//! node weight, so the transforms are unitary up to the quadrature scale and
//! fractional powers of `-Δ` become exact per-mode multipliers.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
    Periodic,
}

impl BoundaryCondition {
    pub const ALL: [BoundaryCondition; 3] = [
        BoundaryCondition::Dirichlet,
        BoundaryCondition::Neumann,
        BoundaryCondition::Periodic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryCondition::Dirichlet => "dirichlet",
            BoundaryCondition::Neumann => "neumann",
            BoundaryCondition::Periodic => "periodic",
        }
    }
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BoundaryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dirichlet" => Ok(BoundaryCondition::Dirichlet),
            "neumann" => Ok(BoundaryCondition::Neumann),
            "periodic" => Ok(BoundaryCondition::Periodic),
            other => Err(Error::InvalidGrid(format!("unknown boundary condition `{other}`"))),
        }
    }
}

/// Shape, physical size and boundary condition of a regular 1D or 2D grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: Vec<usize>,
    pub extent: Vec<f64>,
    pub bc: BoundaryCondition,
}

impl GridSpec {
    pub fn new(dims: Vec<usize>, extent: Vec<f64>, bc: BoundaryCondition) -> Result<Self> {
        let spec = GridSpec { dims, extent, bc };
        spec.validate()?;
        Ok(spec)
    }

    pub fn line(n: usize, length: f64, bc: BoundaryCondition) -> Result<Self> {
        Self::new(vec![n], vec![length], bc)
    }

    pub fn square(n: usize, length: f64, bc: BoundaryCondition) -> Result<Self> {
        Self::new(vec![n, n], vec![length, length], bc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "expected 1 or 2 axes, got {}",
                self.dims.len()
            )));
        }
        if self.extent.len() != self.dims.len() {
            return Err(Error::InvalidGrid(format!(
                "{} extents for {} axes",
                self.extent.len(),
                self.dims.len()
            )));
        }
        if let Some(&n) = self.dims.iter().find(|&&n| n < 2) {
            return Err(Error::InvalidGrid(format!("axis size {n} < 2")));
        }
        if let Some(&l) = self.extent.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidGrid(format!("axis extent {l} is not positive")));
        }
        Ok(())
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Number of grid nodes (also the number of spectral modes).
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        let n = self.dims[axis] as f64;
        match self.bc {
            BoundaryCondition::Dirichlet => self.extent[axis] / (n + 1.0),
            _ => self.extent[axis] / n,
        }
    }

    /// Quadrature weight of one node (product of the axis spacings).
    pub fn cell_weight(&self) -> f64 {
        (0..self.ndim()).map(|a| self.spacing(a)).product()
    }

    /// Node coordinates along `axis`.
    pub fn coords(&self, axis: usize) -> Vec<f64> {
        let n = self.dims[axis];
        let h = self.spacing(axis);
        (0..n)
            .map(|j| match self.bc {
                BoundaryCondition::Periodic => j as f64 * h,
                BoundaryCondition::Dirichlet => (j + 1) as f64 * h,
                BoundaryCondition::Neumann => (j as f64 + 0.5) * h,
            })
            .collect()
    }

    pub fn with_bc(&self, bc: BoundaryCondition) -> GridSpec {
        GridSpec {
            bc,
            ..self.clone()
        }
    }
}

/// A (possibly multi-channel) state sampled on a grid.
///
/// Values are channel-major, then row-major over the grid axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub spec: GridSpec,
    pub channels: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(spec: GridSpec, channels: usize, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if channels == 0 {
            return Err(Error::InvalidGrid("a field needs at least one channel".into()));
        }
        let expected = channels * spec.len();
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "field values",
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field values"));
        }
        Ok(Field {
            spec,
            channels,
            values,
        })
    }

    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        let n = spec.len() * channels;
        Field {
            spec,
            channels,
            values: vec![0.0; n],
        }
    }

    /// Samples `f(x)` (1D) or `f(x, y)` (2D, passed as a slice) on every node.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = match spec.ndim() {
            1 => spec.coords(0).iter().map(|&x| f(&[x])).collect(),
            _ => {
                let xs = spec.coords(0);
                let ys = spec.coords(1);
                xs.iter()
                    .flat_map(|&x| ys.iter().map(move |&y| (x, y)))
                    .map(|(x, y)| f(&[x, y]))
                    .collect()
            }
        };
        Field {
            spec,
            channels: 1,
            values,
        }
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spec.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &Field) -> bool {
        self.spec == other.spec && self.channels == other.channels
    }

    /// Mean of squared values (the uniform-quadrature mean square).
    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
    }

    pub fn with_values(&self, values: Vec<f64>) -> Field {
        debug_assert_eq!(values.len(), self.values.len());
        Field {
            spec: self.spec.clone(),
            channels: self.channels,
            values,
        }
    }
}

/// One axis of a separable basis: an orthonormal matrix (row = mode) and the
/// continuum eigenvalues of `-d²/dx²` for each mode.
#[derive(Debug, Clone)]
struct AxisBasis {
    n: usize,
    matrix: Vec<f64>,
    eigenvalues: Vec<f64>,
    sqrt_weight: f64,
}

impl AxisBasis {
    fn new(n: usize, length: f64, bc: BoundaryCondition, spacing: f64) -> Self {
        let nf = n as f64;
        let mut matrix = vec![0.0; n * n];
        let mut eigenvalues = vec![0.0; n];
        match bc {
            BoundaryCondition::Periodic => {
                // constant, (cos k, sin k) pairs, and the Nyquist mode for even n
                let norm = (2.0 / nf).sqrt();
                for j in 0..n {
                    matrix[j] = 1.0 / nf.sqrt();
                }
                let mut row = 1;
                let mut k = 1;
                while row < n {
                    let wave = 2.0 * PI * k as f64 / length;
                    if 2 * k == n {
                        for j in 0..n {
                            matrix[row * n + j] = if j % 2 == 0 { 1.0 } else { -1.0 } / nf.sqrt();
                        }
                        eigenvalues[row] = wave * wave;
                        row += 1;
                    } else {
                        for j in 0..n {
                            let theta = 2.0 * PI * (k * j) as f64 / nf;
                            matrix[row * n + j] = norm * theta.cos();
                            matrix[(row + 1) * n + j] = norm * theta.sin();
                        }
                        eigenvalues[row] = wave * wave;
                        eigenvalues[row + 1] = wave * wave;
                        row += 2;
                    }
                    k += 1;
                }
            }
            BoundaryCondition::Dirichlet => {
                let norm = (2.0 / (nf + 1.0)).sqrt();
                for k in 1..=n {
                    for j in 0..n {
                        let theta = PI * (k * (j + 1)) as f64 / (nf + 1.0);
                        matrix[(k - 1) * n + j] = norm * theta.sin();
                    }
                    let wave = PI * k as f64 / length;
                    eigenvalues[k - 1] = wave * wave;
                }
            }
            BoundaryCondition::Neumann => {
                for k in 0..n {
                    let norm = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    for j in 0..n {
                        let theta = PI * k as f64 * (j as f64 + 0.5) / nf;
                        matrix[k * n + j] = norm * theta.cos();
                    }
                    let wave = PI * k as f64 / length;
                    eigenvalues[k] = wave * wave;
                }
            }
        }
        AxisBasis {
            n,
            matrix,
            eigenvalues,
            sqrt_weight: spacing.sqrt(),
        }
    }

    /// `out[mode] = sqrt(w) Σ_j U[mode, j] x[j]`, strided.
    fn forward(&self, x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[k * self.n..(k + 1) * self.n];
            *o = self.sqrt_weight * row.iter().zip(x).map(|(u, v)| u * v).sum::<f64>();
        }
    }

    fn inverse(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, &ck) in c.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            let row = &self.matrix[k * self.n..(k + 1) * self.n];
            for (o, u) in out.iter_mut().zip(row) {
                *o += u * ck;
            }
        }
        let s = 1.0 / self.sqrt_weight;
        out.iter_mut().for_each(|o| *o *= s);
    }
}

/// Separable Laplacian eigenbasis for a grid.
///
/// Coefficients are L²-normalized: `Σ c² = w Σ f²` where `w` is the cell weight.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    spec: GridSpec,
    axes: Vec<AxisBasis>,
    eigenvalues: Vec<f64>,
}

impl SpectralBasis {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let axes: Vec<AxisBasis> = (0..spec.ndim())
            .map(|a| AxisBasis::new(spec.dims[a], spec.extent[a], spec.bc, spec.spacing(a)))
            .collect();
        let eigenvalues = match axes.as_slice() {
            [x] => x.eigenvalues.clone(),
            [x, y] => x
                .eigenvalues
                .iter()
                .flat_map(|&mx| y.eigenvalues.iter().map(move |&my| mx + my))
                .collect(),
            _ => unreachable!("validated to 1 or 2 axes"),
        };
        Ok(SpectralBasis {
            spec: spec.clone(),
            axes,
            eigenvalues,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Eigenvalues of `-Δ`, one per mode, in coefficient order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn mode_count(&self) -> usize {
        self.eigenvalues.len()
    }

    fn check_field(&self, f: &Field) -> Result<()> {
        if f.spec != self.spec {
            return Err(Error::InvalidGrid("field grid differs from basis grid".into()));
        }
        Ok(())
    }

    /// Forward transform of one channel (`x.len() == mode_count`).
    pub fn forward_channel(&self, x: &[f64], out: &mut [f64]) {
        match self.axes.as_slice() {
            [ax] => ax.forward(x, out),
            [ax0, ax1] => {
                let (n0, n1) = (ax0.n, ax1.n);
                // rows first (axis 1), then columns (axis 0)
                let mut tmp = vec![0.0; n0 * n1];
                for i in 0..n0 {
                    ax1.forward(&x[i * n1..(i + 1) * n1], &mut tmp[i * n1..(i + 1) * n1]);
                }
                let mut col = vec![0.0; n0];
                let mut col_out = vec![0.0; n0];
                for j in 0..n1 {
                    for i in 0..n0 {
                        col[i] = tmp[i * n1 + j];
                    }
                    ax0.forward(&col, &mut col_out);
                    for i in 0..n0 {
                        out[i * n1 + j] = col_out[i];
                    }
                }
            }
            _ => unreachable!(),
        }
    }

    pub fn inverse_channel(&self, c: &[f64], out: &mut [f64]) {
        match self.axes.as_slice() {
            [ax] => ax.inverse(c, out),
            [ax0, ax1] => {
                let (n0, n1) = (ax0.n, ax1.n);
                let mut tmp = vec![0.0; n0 * n1];
                let mut col = vec![0.0; n0];
                let mut col_out = vec![0.0; n0];
                for j in 0..n1 {
                    for i in 0..n0 {
                        col[i] = c[i * n1 + j];
                    }
                    ax0.inverse(&col, &mut col_out);
                    for i in 0..n0 {
                        tmp[i * n1 + j] = col_out[i];
                    }
                }
                for i in 0..n0 {
                    ax1.inverse(&tmp[i * n1..(i + 1) * n1], &mut out[i * n1..(i + 1) * n1]);
                }
            }
            _ => unreachable!(),
        }
    }

    /// Spectral coefficients of every channel, channel-major.
    pub fn to_spectral(&self, f: &Field) -> Result<Vec<f64>> {
        self.check_field(f)?;
        if !f.is_finite() {
            return Err(Error::NonFinite("to_spectral input"));
        }
        let m = self.mode_count();
        let mut out = vec![0.0; f.values.len()];
        for c in 0..f.channels {
            self.forward_channel(f.channel(c), &mut out[c * m..(c + 1) * m]);
        }
        Ok(out)
    }

    pub fn from_spectral(&self, coeffs: &[f64], channels: usize) -> Result<Field> {
        let m = self.mode_count();
        if channels == 0 || coeffs.len() != m * channels {
            return Err(Error::DimensionMismatch {
                context: "spectral coefficients",
                expected: m * channels.max(1),
                actual: coeffs.len(),
            });
        }
        let mut values = vec![0.0; coeffs.len()];
        for c in 0..channels {
            self.inverse_channel(&coeffs[c * m..(c + 1) * m], &mut values[c * m..(c + 1) * m]);
        }
        Field::new(self.spec.clone(), channels, values)
    }

    /// Multiplies every mode of every channel of `f` by `multiplier(μ)`.
    pub fn apply_multiplier(&self, f: &Field, multiplier: impl Fn(f64) -> f64) -> Result<Field> {
        let mut coeffs = self.to_spectral(f)?;
        let m = self.mode_count();
        let scale: Vec<f64> = self.eigenvalues.iter().map(|&mu| multiplier(mu)).collect();
        for chunk in coeffs.chunks_mut(m) {
            for (c, s) in chunk.iter_mut().zip(&scale) {
                *c *= s;
            }
        }
        self.from_spectral(&coeffs, f.channels)
    }
}

/// Forward transform with a freshly built basis.
pub fn to_spectral(f: &Field) -> Result<Vec<f64>> {
    SpectralBasis::new(&f.spec)?.to_spectral(f)
}

pub fn from_spectral(coeffs: &[f64], spec: &GridSpec, channels: usize) -> Result<Field> {
    SpectralBasis::new(spec)?.from_spectral(coeffs, channels)
}

/// Eigenvalues of `-Δ` under the grid's boundary condition, in mode order.
pub fn laplacian_eigenvalues(spec: &GridSpec) -> Result<Vec<f64>> {
    Ok(SpectralBasis::new(spec)?.eigenvalues)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den.max(1e-300)).sqrt()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        // small LCG; good enough for round-trip inputs
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::line(1, 1.0, BoundaryCondition::Periodic).is_err());
        assert!(GridSpec::line(8, 0.0, BoundaryCondition::Periodic).is_err());
        assert!(GridSpec::new(vec![4, 4, 4], vec![1.0; 3], BoundaryCondition::Periodic).is_err());
        assert!(GridSpec::new(vec![4, 4], vec![1.0], BoundaryCondition::Periodic).is_err());
        assert!("robin".parse::<BoundaryCondition>().is_err());
    }

    #[test]
    fn constant_is_null_mode_periodic() {
        let spec = GridSpec::line(8, 1.0, BoundaryCondition::Periodic).unwrap();
        let f = Field::new(spec, 1, vec![3.0; 8]).unwrap();
        let c = to_spectral(&f).unwrap();
        let eig = laplacian_eigenvalues(&f.spec).unwrap();
        for (k, (&ck, &mu)) in c.iter().zip(&eig).enumerate() {
            if mu == 0.0 {
                assert!(ck.abs() > 1.0, "mode {k}");
            } else {
                assert!(ck.abs() < 1e-12, "mode {k}: {ck}");
            }
        }
    }

    #[test]
    fn dirichlet_first_sine_is_single_mode() {
        let spec = GridSpec::line(31, 2.0, BoundaryCondition::Dirichlet).unwrap();
        let f = Field::from_fn(spec, |x| (PI * x[0] / 2.0).sin());
        let c = to_spectral(&f).unwrap();
        assert!(c[0].abs() > 0.5);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn eigenvalue_substitution() {
        let p = GridSpec::line(16, 2.0 * PI, BoundaryCondition::Periodic).unwrap();
        let eig = laplacian_eigenvalues(&p).unwrap();
        assert!((eig[1] - 1.0).abs() < 1e-12 && (eig[2] - 1.0).abs() < 1e-12);
        let d = GridSpec::line(16, 1.0, BoundaryCondition::Dirichlet).unwrap();
        let eig = laplacian_eigenvalues(&d).unwrap();
        assert!((eig[0] - PI * PI).abs() < 1e-12);
        assert!(eig.iter().all(|&m| m > 0.0));
        let n = GridSpec::line(16, 1.0, BoundaryCondition::Neumann).unwrap();
        let eig = laplacian_eigenvalues(&n).unwrap();
        assert_eq!(eig[0], 0.0);
        assert!((eig[1] - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn zero_coefficients_give_zero_field() {
        let spec = GridSpec::square(6, 1.0, BoundaryCondition::Neumann).unwrap();
        let f = from_spectral(&vec![0.0; 72], &spec, 2).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert!(from_spectral(&[0.0; 5], &spec, 1).is_err());
    }

    #[test]
    fn one_hot_is_sampled_eigenfunction() {
        let l = 1.5;
        let n = 12;
        for bc in BoundaryCondition::ALL {
            let spec = GridSpec::line(n, l, bc).unwrap();
            let xs = spec.coords(0);
            let idx = 3;
            let mut c = vec![0.0; n];
            c[idx] = 1.0;
            let f = from_spectral(&c, &spec, 1).unwrap();
            let expected: Vec<f64> = xs
                .iter()
                .map(|&x| match bc {
                    // mode 3 is cos(2π·2x/L) in the periodic ordering [1, c1, s1, c2, s2, ...]
                    BoundaryCondition::Periodic => (2.0 / l).sqrt() * (2.0 * PI * 2.0 * x / l).cos(),
                    BoundaryCondition::Dirichlet => (2.0 / l).sqrt() * (PI * 4.0 * x / l).sin(),
                    BoundaryCondition::Neumann => (2.0 / l).sqrt() * (PI * 3.0 * x / l).cos(),
                })
                .collect();
            assert!(rel_err(&f.values, &expected) < 1e-12, "{bc}");
        }
    }

    #[test]
    fn round_trip_and_parseval_all_bcs() {
        for bc in BoundaryCondition::ALL {
            for spec in [
                GridSpec::line(33, 1.3, bc).unwrap(),
                GridSpec::line(64, 2.0, bc).unwrap(),
                GridSpec::new(vec![8, 12], vec![1.0, 2.5], bc).unwrap(),
            ] {
                let basis = SpectralBasis::new(&spec).unwrap();
                let f = Field::new(spec.clone(), 2, pseudo_random(2 * spec.len(), 7)).unwrap();
                let c = basis.to_spectral(&f).unwrap();
                let back = basis.from_spectral(&c, 2).unwrap();
                assert!(rel_err(&back.values, &f.values) < 1e-10, "{bc} round trip");
                let energy: f64 = f.values.iter().map(|v| v * v).sum::<f64>() * spec.cell_weight();
                let coeff_energy: f64 = c.iter().map(|v| v * v).sum();
                assert!(((energy - coeff_energy) / energy).abs() < 1e-9, "{bc} parseval");
            }
        }
    }

    #[test]
    fn eigen_action_on_low_modes() {
        // -Δ sin(2πx) cos(πy) type modes, checked in 2D
        let spec = GridSpec::new(vec![16, 16], vec![1.0, 2.0], BoundaryCondition::Periodic).unwrap();
        let basis = SpectralBasis::new(&spec).unwrap();
        let f = Field::from_fn(spec.clone(), |p| (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1] / 2.0).cos());
        let lap = basis.apply_multiplier(&f, |mu| mu).unwrap();
        let mu = (2.0 * PI).powi(2) + PI.powi(2);
        let expected: Vec<f64> = f.values.iter().map(|v| mu * v).collect();
        assert!(rel_err(&lap.values, &expected) < 1e-10);
    }
}
