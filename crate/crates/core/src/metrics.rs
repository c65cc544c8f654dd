//! Probabilistic forecast scores (CRPS, MSE, SSR), the Matérn-kernel MMD and
//! the noise-injection trade-off curve.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::datasets::Trajectory;
use crate::error::{Error, Result};
use crate::spde::{euclidean, matern_cov, MaternParams};

/// Ensemble CRPS at one scalar location:
/// `(1/E) Σ|X_i − y| − (1/(2E²)) Σ_i Σ_j |X_i − X_j|`.
pub fn crps_scalar(members: &[f64], y: f64) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::InsufficientData("CRPS of an empty ensemble".into()));
    }
    let e = members.len() as f64;
    let skill = members.iter().map(|x| (x - y).abs()).sum::<f64>() / e;
    let mut sorted = members.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Σ_{i<j} (x_(j) − x_(i)) = Σ_k x_(k) (2k − E + 1)
    let pairs: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, x)| x * (2.0 * k as f64 - e + 1.0))
        .sum();
    Ok(skill - pairs / (e * e))
}

/// Members and truth over the same grid and times.
#[derive(Debug, Clone)]
pub struct EnsembleForecast {
    pub members: Vec<Trajectory>,
    pub truth: Trajectory,
}

impl EnsembleForecast {
    pub fn new(members: Vec<Trajectory>, truth: Trajectory) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InsufficientData("ensemble has no members".into()));
        }
        for m in &members {
            if m.spec != truth.spec || m.channels != truth.channels || m.len() != truth.len() {
                return Err(Error::DimensionMismatch {
                    context: "ensemble member frames",
                    expected: truth.len(),
                    actual: m.len(),
                });
            }
        }
        Ok(EnsembleForecast { members, truth })
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    fn frame_cells(&self) -> usize {
        self.truth.state_dim()
    }

    fn member_values(&self, frame: usize, cell: usize) -> Vec<f64> {
        self.members.iter().map(|m| m.frames[frame][cell]).collect()
    }

    fn mean_at(&self, frame: usize, cell: usize) -> f64 {
        self.members.iter().map(|m| m.frames[frame][cell]).sum::<f64>() / self.size() as f64
    }

    fn var_at(&self, frame: usize, cell: usize) -> f64 {
        let mean = self.mean_at(frame, cell);
        self.members
            .iter()
            .map(|m| (m.frames[frame][cell] - mean).powi(2))
            .sum::<f64>()
            / self.size() as f64
    }
}

/// Per-frame mean over (channel, space) cells of the per-cell CRPS.
pub fn crps_per_frame(f: &EnsembleForecast) -> Result<Vec<f64>> {
    let d = f.frame_cells();
    (0..f.truth.len())
        .into_par_iter()
        .map(|t| {
            let sum = (0..d)
                .map(|c| crps_scalar(&f.member_values(t, c), f.truth.frames[t][c]))
                .sum::<Result<f64>>()?;
            Ok(sum / d as f64)
        })
        .collect()
}

/// Mean over every (time, channel, space) cell of the per-cell CRPS.
pub fn crps(f: &EnsembleForecast) -> Result<f64> {
    let per = crps_per_frame(f)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Per-frame mean squared error of the ensemble mean.
pub fn mse_per_frame(f: &EnsembleForecast) -> Vec<f64> {
    let d = f.frame_cells();
    (0..f.truth.len())
        .map(|t| (0..d).map(|c| (f.mean_at(t, c) - f.truth.frames[t][c]).powi(2)).sum::<f64>() / d as f64)
        .collect()
}

/// Mean squared error of the ensemble mean over all cells.
pub fn mse(f: &EnsembleForecast) -> f64 {
    let per = mse_per_frame(f);
    per.iter().sum::<f64>() / per.len() as f64
}

/// The spread-skill ratio restricted to the listed frames.
pub fn ssr_over(f: &EnsembleForecast, frames: &[usize]) -> Result<f64> {
    if f.size() < 2 {
        return Err(Error::InsufficientData("SSR needs at least two members".into()));
    }
    if frames.is_empty() || frames.iter().any(|&t| t >= f.truth.len()) {
        return Err(Error::InvalidParameter("SSR frame selection is empty or out of range".into()));
    }
    let d = f.frame_cells();
    let n = (frames.len() * d) as f64;
    let (mut var, mut err) = (0.0, 0.0);
    for &t in frames {
        for c in 0..d {
            var += f.var_at(t, c);
            err += (f.mean_at(t, c) - f.truth.frames[t][c]).powi(2);
        }
    }
    let rmse = (err / n).sqrt();
    if rmse == 0.0 {
        return Err(Error::UndefinedMetric("SSR with zero RMSE (perfect ensemble mean)".into()));
    }
    Ok((var / n).sqrt() / rmse)
}

/// `√(mean ensemble variance) / RMSE(ensemble mean, truth)` over all cells,
/// with the population (1/E) variance.
pub fn ssr(f: &EnsembleForecast) -> Result<f64> {
    ssr_over(f, &(0..f.truth.len()).collect::<Vec<_>>())
}

/// The same ratio restricted to each frame; `None` where it is undefined.
pub fn ssr_per_frame(f: &EnsembleForecast) -> Result<Vec<Option<f64>>> {
    if f.size() < 2 {
        return Err(Error::InsufficientData("SSR needs at least two members".into()));
    }
    Ok((0..f.truth.len()).map(|t| ssr_over(f, &[t]).ok()).collect())
}

/// Biased V-statistic `mean k(P,P) + mean k(Q,Q) − 2 mean k(P,Q)` with a
/// Matérn kernel on Euclidean distances.
pub fn mmd2(p: &[Vec<f64>], q: &[Vec<f64>], kernel: &MaternParams) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InsufficientData("MMD of an empty sample set".into()));
    }
    kernel.validate()?;
    matern_cov(0.0, kernel)?;
    let mean_k = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let rows: Vec<f64> = a
            .par_iter()
            .map(|x| {
                b.iter()
                    .map(|y| matern_cov(euclidean(x, y), kernel).expect("validated kernel"))
                    .sum::<f64>()
            })
            .collect();
        rows.iter().sum::<f64>() / (a.len() * b.len()) as f64
    };
    Ok(mean_k(p, p) + mean_k(q, q) - 2.0 * mean_k(p, q))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffPoint {
    pub sigma: f64,
    pub mse: f64,
    pub abs_one_minus_ssr: f64,
}

/// Adds `N(0, σ² I)` noise to every predicted frame (all but frame 0) of each
/// member and recomputes MSE and `|1 − SSR|` per level.
pub fn tradeoff_curve(base: &EnsembleForecast, levels: &[f64], seed: u64) -> Result<Vec<TradeoffPoint>> {
    if levels.iter().any(|s| !(*s >= 0.0)) || levels.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("noise levels must be nonnegative and ascending".into()));
    }
    levels
        .iter()
        .enumerate()
        .map(|(k, &sigma)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let members = base
                .members
                .iter()
                .map(|m| {
                    let mut m = m.clone();
                    for frame in m.frames.iter_mut().skip(1) {
                        for v in frame.iter_mut() {
                            let xi: f64 = StandardNormal.sample(&mut rng);
                            *v += sigma * xi;
                        }
                    }
                    m
                })
                .collect();
            let f = EnsembleForecast::new(members, base.truth.clone())?;
            Ok(TradeoffPoint {
                sigma,
                mse: mse(&f),
                abs_one_minus_ssr: (1.0 - ssr(&f)?).abs(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundaryCondition, GridSpec};

    fn traj(frames: Vec<Vec<f64>>) -> Trajectory {
        let n = frames[0].len();
        Trajectory::new(GridSpec::line(n, 1.0, BoundaryCondition::Periodic).unwrap(), 1, 1.0, frames).unwrap()
    }

    #[test]
    fn crps_hand_values() {
        assert_eq!(crps_scalar(&[0.0, 0.0], 1.0).unwrap(), 1.0);
        assert_eq!(crps_scalar(&[0.0, 2.0], 1.0).unwrap(), 0.5);
        assert_eq!(crps_scalar(&[3.0], 1.0).unwrap(), 2.0);
        assert!(crps_scalar(&[], 1.0).is_err());
    }

    #[test]
    fn crps_matches_pairwise_enumeration() {
        let xs: [f64; 5] = [0.3, -1.2, 2.5, 0.3, 0.9];
        let y: f64 = 0.4;
        let e = xs.len() as f64;
        let a: f64 = xs.iter().map(|x| (x - y).abs()).sum::<f64>() / e;
        let b: f64 = xs.iter().flat_map(|x| xs.iter().map(move |z| (x - z).abs())).sum::<f64>();
        let want = a - b / (2.0 * e * e);
        assert!((crps_scalar(&xs, y).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn ssr_cases() {
        let truth = traj(vec![vec![1.0, 2.0]; 2]);
        let same = traj(vec![vec![1.5, 2.5]; 2]);
        let f = EnsembleForecast::new(vec![same.clone(), same], truth.clone()).unwrap();
        assert_eq!(ssr(&f).unwrap(), 0.0);
        // members {y, y + 2}: spread 1, ensemble-mean error 1
        let lo = traj(vec![vec![1.0, 2.0]; 2]);
        let hi = traj(vec![vec![3.0, 4.0]; 2]);
        let f = EnsembleForecast::new(vec![lo, hi], truth.clone()).unwrap();
        assert!((ssr(&f).unwrap() - 1.0).abs() < 1e-15);
        // symmetric members around the truth leave the ratio undefined
        let lo = traj(vec![vec![0.0, 1.0]; 2]);
        let hi = traj(vec![vec![2.0, 3.0]; 2]);
        let f = EnsembleForecast::new(vec![lo, hi], truth).unwrap();
        assert!(matches!(ssr(&f), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn mmd_hand_values() {
        let k = MaternParams::new(1.0, 0.5, 1.0, 1).unwrap();
        let p = vec![vec![0.0, 1.0], vec![2.0, -1.0]];
        assert!(mmd2(&p, &p, &k).unwrap().abs() < 1e-12);
        // k(x, y) = exp(−r/ρ) = 0.5 at r = ln 2
        let x = vec![vec![0.0]];
        let y = vec![vec![2f64.ln()]];
        assert!((mmd2(&x, &y, &k).unwrap() - 1.0).abs() < 1e-12);
        assert!(mmd2(&[], &y, &k).is_err());
    }
}
