//! Synthetic dynamics generators, trajectory files and dataset splits.

mod io;
mod spring;
mod vorticity;
mod wave;

pub use io::{load_trajectory, save_trajectory, TRAJECTORY_MAGIC};
pub use spring::{gen_springmesh, simulate_springmesh, spring_energy, SpringParams};
pub use vorticity::{gen_vorticity2d, simulate_vorticity, VorticityParams};
pub use wave::{gen_wave1d, gen_wave1d_with_energy, pulse_initial_condition, simulate_wave, wave_energy, WaveParams};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

/// A time-ordered sequence of states on one grid with a uniform step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub spec: GridSpec,
    pub channels: usize,
    pub dt: f64,
    /// Flattened frames, each `channels × spec.len()` values.
    pub frames: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(spec: GridSpec, channels: usize, dt: f64, frames: Vec<Vec<f64>>) -> Result<Self> {
        spec.validate()?;
        if channels == 0 {
            return Err(Error::InvalidGrid("a trajectory needs at least one channel".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
        }
        if frames.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a trajectory needs at least 2 frames, got {}",
                frames.len()
            )));
        }
        let d = channels * spec.len();
        for f in &frames {
            if f.len() != d {
                return Err(Error::DimensionMismatch {
                    context: "trajectory frame",
                    expected: d,
                    actual: f.len(),
                });
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trajectory frame"));
            }
        }
        Ok(Trajectory {
            spec,
            channels,
            dt,
            frames,
        })
    }

    /// Builds a trajectory from fields that must share one layout.
    pub fn from_fields(fields: &[Field], dt: f64) -> Result<Self> {
        let first = fields
            .first()
            .ok_or_else(|| Error::InsufficientData("no frames".into()))?;
        if let Some(bad) = fields.iter().find(|f| !f.same_layout(first)) {
            return Err(Error::InvalidGrid(format!(
                "frame layout {:?}×{} differs from {:?}×{}",
                bad.spec.dims, bad.channels, first.spec.dims, first.channels
            )));
        }
        Trajectory::new(
            first.spec.clone(),
            first.channels,
            dt,
            fields.iter().map(|f| f.values.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Flattened state dimension.
    pub fn state_dim(&self) -> usize {
        self.channels * self.spec.len()
    }

    pub fn frame(&self, k: usize) -> Field {
        Field {
            spec: self.spec.clone(),
            channels: self.channels,
            values: self.frames[k].clone(),
        }
    }
}

/// Checks that all trajectories share one grid and channel count.
pub fn check_consistent(data: &[Trajectory]) -> Result<(&GridSpec, usize)> {
    let first = data
        .first()
        .ok_or_else(|| Error::InsufficientData("empty trajectory set".into()))?;
    for t in data {
        if t.spec != first.spec || t.channels != first.channels {
            return Err(Error::InvalidGrid("trajectories do not share one grid".into()));
        }
    }
    Ok((&first.spec, first.channels))
}

/// Every `(trajectory, start)` pair whose window `start..=start + horizon` fits.
pub fn windows(data: &[Trajectory], horizon: usize) -> Vec<(usize, usize)> {
    data.iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.len().saturating_sub(horizon)).map(move |s| (k, s)))
        .collect()
}

/// Trajectory indices of a seed-deterministic 80/10/10 split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_indices(n: usize, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * 8) / 10;
    let n_val = n / 10;
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Split {
        train: idx,
        val,
        test,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;

    #[test]
    fn trajectory_validation() {
        let spec = GridSpec::line(4, 1.0, BoundaryCondition::Periodic).unwrap();
        assert!(Trajectory::new(spec.clone(), 1, 0.1, vec![vec![0.0; 4]]).is_err());
        assert!(Trajectory::new(spec.clone(), 1, 0.1, vec![vec![0.0; 4], vec![0.0; 3]]).is_err());
        assert!(Trajectory::new(spec.clone(), 1, 0.1, vec![vec![0.0; 4], vec![f64::NAN; 4]]).is_err());
        assert!(Trajectory::new(spec.clone(), 1, 0.0, vec![vec![0.0; 4]; 2]).is_err());
        let t = Trajectory::new(spec, 1, 0.1, vec![vec![0.0; 4]; 5]).unwrap();
        assert_eq!(windows(&[t.clone(), t], 3).len(), 4);
    }

    #[test]
    fn split_is_partition_and_deterministic() {
        let s = split_indices(200, 3);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (160, 20, 20));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert_eq!(s, split_indices(200, 3));
        assert_ne!(s, split_indices(200, 4));
    }
}
