//! Run configuration shared by every `pdy` subcommand.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datasets::{SpringParams, VorticityParams, WaveParams};
use crate::error::{Error, Result};
use crate::forecaster::ForecastConfig;
use crate::grid::BoundaryCondition;
use crate::interpolator::InterpConfig;
use crate::sampler::RolloutConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Wave,
    Spring,
    Vorticity,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Wave => "wave",
            DatasetKind::Spring => "spring",
            DatasetKind::Vorticity => "vorticity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub n_trajectories: usize,
    /// Trajectory `k` is generated from `seed · 1000 + k`; the split uses `seed`.
    pub seed: u64,
    pub wave: WaveParams,
    pub spring: SpringParams,
    pub vorticity: VorticityParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            kind: DatasetKind::Wave,
            n_trajectories: 250,
            seed: 0,
            wave: WaveParams::default(),
            spring: SpringParams::default(),
            vorticity: VorticityParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Interpolator, then forecaster.
    Both,
    Interpolator,
    /// Forecaster only, from an existing interpolator checkpoint.
    Forecaster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: Stage,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { stage: Stage::Both }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ensemble_size: usize,
    pub input_noise_sigma: f64,
    pub ukf_correct: bool,
    pub windows: usize,
    /// Frame of each test trajectory the rollout starts from.
    pub start_frame: usize,
    /// Number of test trajectories used; 0 means all.
    pub max_trajectories: usize,
    /// Writes per-timestep curve files next to the report.
    pub curves: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ensemble_size: 8,
            input_noise_sigma: 0.01,
            ukf_correct: false,
            windows: 2,
            start_frame: 0,
            max_trajectories: 0,
            curves: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    Lambda,
    Bc,
    Noise,
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Lambda => "lambda",
            AblationAxis::Bc => "bc",
            AblationAxis::Noise => "noise",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(AblationAxis::Lambda),
            "bc" => Ok(AblationAxis::Bc),
            "noise" => Ok(AblationAxis::Noise),
            other => Err(Error::Config {
                key: "axis".into(),
                reason: format!("unknown ablation axis `{other}`, expected lambda, bc or noise"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub lambda: Vec<f64>,
    pub bc: Vec<BoundaryCondition>,
    pub noise: Vec<f64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            lambda: vec![0.1, 0.2, 0.5, 1.0],
            bc: BoundaryCondition::ALL.to_vec(),
            noise: vec![0.0, 0.5, 1.0, 2.0, 3.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Random matrix pairs for the log-det and spectral-bound checks.
    pub n_pairs: usize,
    pub max_dim: usize,
    pub lambdas: Vec<f64>,
    pub n_seeds: u64,
    pub n_samples: usize,
    pub n_grid: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            n_pairs: 50,
            max_dim: 6,
            lambdas: vec![0.2, 1.0],
            n_seeds: 5,
            n_samples: 2000,
            n_grid: 64,
        }
    }
}

/// Every tunable of a run. Unknown keys are rejected and the resolved
/// config, defaults included, is written next to each artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub interp: InterpConfig,
    pub forecast: ForecastConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("pdy-out"),
            dataset: DatasetConfig::default(),
            interp: InterpConfig::default(),
            forecast: ForecastConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .map(|s| key_at(text, s.start))
                .unwrap_or_else(|| "<root>".into());
            Error::Config {
                key,
                reason: e.message().trim().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// The resolved configuration as TOML, with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: String| Error::Config {
            key: key.into(),
            reason,
        };
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required".into()));
        }
        if self.dataset.n_trajectories == 0 {
            return Err(bad("dataset.n_trajectories", "must be positive".into()));
        }
        if self.interp.horizon != self.forecast.schedule.horizon {
            return Err(bad(
                "forecast.schedule.horizon",
                format!(
                    "must equal interp.horizon ({} vs {})",
                    self.forecast.schedule.horizon, self.interp.horizon
                ),
            ));
        }
        self.interp.validate().map_err(|e| bad("interp", e.to_string()))?;
        self.forecast.validate().map_err(|e| bad("forecast", e.to_string()))?;
        self.rollout_config().validate().map_err(|e| bad("eval", e.to_string()))?;
        Ok(())
    }

    /// `dyffusion_baseline` without the operator penalty and the likelihood
    /// term, `pdyffusion` otherwise.
    pub fn method(&self) -> &'static str {
        if self.interp.lambda_reg == 0.0 && !self.forecast.use_ukf {
            "dyffusion_baseline"
        } else {
            "pdyffusion"
        }
    }

    pub fn frame_dt(&self) -> f64 {
        match self.dataset.kind {
            DatasetKind::Wave => self.dataset.wave.dt,
            DatasetKind::Spring => self.dataset.spring.dt,
            DatasetKind::Vorticity => self.dataset.vorticity.dt,
        }
    }

    pub fn rollout_config(&self) -> RolloutConfig {
        RolloutConfig {
            schedule: self.forecast.schedule.clone(),
            ensemble_size: self.eval.ensemble_size,
            input_noise_sigma: self.eval.input_noise_sigma,
            ukf_correct: self.eval.ukf_correct,
            windows: self.eval.windows,
            ukf: self.forecast.ukf,
            dt: self.frame_dt(),
        }
    }
}

/// Dotted key of the `key = value` line containing byte `pos`, prefixed by
/// the enclosing `[table]` header.
fn key_at(text: &str, pos: usize) -> String {
    let pos = pos.min(text.len());
    let mut table = String::new();
    let mut key = String::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if trimmed.starts_with('[') && !trimmed.starts_with("[[") {
            table = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = trimmed.split_once('=') {
            key = k.trim().to_string();
        }
        offset += line.len();
        if offset > pos {
            break;
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, true) => "<root>".into(),
        (true, false) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("lambda_reg"));
        assert!(text.contains("q_scale"));
    }

    #[test]
    fn bad_bc_names_the_key() {
        let err = RunConfig::from_toml("[interp.op]\nl = 0.05\nalpha = 2.0\nbc = \"toroidal\"\n").unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "interp.op.bc"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[eval]\nensemble = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key.starts_with("eval")), "{err}");
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn method_label_follows_the_reduction() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.method(), "pdyffusion");
        cfg.interp.lambda_reg = 0.0;
        cfg.forecast.use_ukf = false;
        assert_eq!(cfg.method(), "dyffusion_baseline");
    }

    #[test]
    fn horizon_mismatch_is_a_config_error() {
        let err = RunConfig::from_toml("[interp]\nhorizon = 8\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }
}
