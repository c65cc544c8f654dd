//! Data generation, training, evaluation, verification and ablation runs.
//!
//! Layout under the output directory:
//!
//! ```text
//! data/     traj_00000.pdyt …, manifest.json, config.toml
//! train/    seed-<s>/{interpolator,forecaster}.ckpt, *_log.csv; manifest.json, config.toml
//! eval/     report.csv, curves_seed<s>.csv, sample_seed<s>.csv; manifest.json, config.toml
//! ablate/   <axis>.csv; manifest.json, config.toml
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AblationAxis, DatasetConfig, DatasetKind, RunConfig, Stage};
use crate::datasets::{
    gen_springmesh, gen_vorticity2d, gen_wave1d, load_trajectory, save_trajectory, split_indices, Split, Trajectory,
};
use crate::error::{Error, Result};
use crate::forecaster::{train_forecaster, ForecastLogRow, Forecaster};
use crate::grid::{BoundaryCondition, GridSpec};
use crate::interpolator::{train_interpolator, InterpLogRow, Interpolator};
use crate::metrics::{crps_per_frame, mse_per_frame, ssr_over, tradeoff_curve, EnsembleForecast};
use crate::net::{load_checkpoint, save_checkpoint};
use crate::sampler::ensemble;
use crate::spde::EllipticOpParams;
use crate::verify::{
    sigma_collapse_trace, variance_ratio_error, verify_logdet_quadrature, verify_spectral_bounds,
    verify_theorem_ordering, zero_loss_value,
};

pub const DATA_DIR: &str = "data";
pub const TRAIN_DIR: &str = "train";
pub const EVAL_DIR: &str = "eval";
pub const ABLATE_DIR: &str = "ablate";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const INTERP_CKPT: &str = "interpolator.ckpt";
pub const FORECAST_CKPT: &str = "forecaster.ckpt";
pub const REPORT_FILE: &str = "report.csv";
/// Written in the SSR column when the ratio is undefined.
pub const UNDEFINED: &str = "NA";

/// Runs `f` on a rayon pool capped at `threads` workers (all cores if `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config {
                key: "threads".into(),
                reason: "must be at least 1".into(),
            });
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config {
        key: "threads".into(),
        reason: e.to_string(),
    })?;
    pool.install(f)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest serializes");
    write_file(path, text + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    write_file(path, text)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| v.to_string())
}

/// Writes the resolved config beside a command's artifacts.
fn write_config(dir: &Path, cfg: &RunConfig) -> Result<String> {
    let text = cfg.to_toml();
    write_file(&dir.join(CONFIG_FILE), &text)?;
    Ok(text)
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    /// Resolved run config, verbatim.
    pub config: String,
    pub dataset: String,
    pub files: Vec<String>,
    pub split: Split,
}

/// Trajectory `k` of the configured family, seeded with `seed · 1000 + k`.
pub fn generate_trajectory(cfg: &DatasetConfig, k: usize) -> Result<Trajectory> {
    let seed = cfg.seed.wrapping_mul(1000).wrapping_add(k as u64);
    match cfg.kind {
        DatasetKind::Wave => gen_wave1d(&cfg.wave, seed),
        DatasetKind::Spring => gen_springmesh(&cfg.spring, seed),
        DatasetKind::Vorticity => gen_vorticity2d(&cfg.vorticity, seed),
    }
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Vec<Trajectory>> {
    (0..cfg.n_trajectories)
        .into_par_iter()
        .map(|k| generate_trajectory(cfg, k))
        .collect()
}

/// Writes every trajectory plus a manifest listing the split. Refuses to
/// touch an existing dataset unless `force` is set.
pub fn cmd_gen(cfg: &RunConfig, out: &Path, force: bool) -> Result<DataManifest> {
    cfg.validate()?;
    let dir = out.join(DATA_DIR);
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::AlreadyExists(manifest_path));
    }
    create_dir(&dir)?;
    if force {
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.extension().is_some_and(|e| e == "pdyt") {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    let data = generate_dataset(&cfg.dataset)?;
    let mut files = Vec::with_capacity(data.len());
    for (k, t) in data.iter().enumerate() {
        let name = format!("traj_{k:05}.pdyt");
        save_trajectory(t, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = DataManifest {
        config: write_config(&dir, cfg)?,
        dataset: cfg.dataset.kind.as_str().into(),
        split: split_indices(data.len(), cfg.dataset.seed),
        files,
    };
    write_json(&manifest_path, &manifest)?;
    Ok(manifest)
}

/// The generated dataset under `out`, in manifest order.
pub fn load_dataset(out: &Path) -> Result<(DataManifest, Vec<Trajectory>)> {
    let dir = out.join(DATA_DIR);
    let manifest: DataManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let data = manifest
        .files
        .par_iter()
        .map(|f| load_trajectory(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, data))
}

/// The indexed trajectories on a grid carrying the regularizer's boundary
/// condition.
fn select(cfg: &RunConfig, data: &[Trajectory], idx: &[usize]) -> Vec<Trajectory> {
    let picked: Vec<Trajectory> = idx.iter().map(|&i| data[i].clone()).collect();
    relabel_bc(&picked, cfg.interp.op.bc)
}

/// Same values on a grid relabeled with `bc`, so the operator penalty uses
/// that boundary condition's eigenbasis whatever the generating physics.
pub fn relabel_bc(data: &[Trajectory], bc: BoundaryCondition) -> Vec<Trajectory> {
    data.iter()
        .map(|t| Trajectory {
            spec: t.spec.with_bc(bc),
            ..t.clone()
        })
        .collect()
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub interp: Interpolator,
    pub forecaster: Forecaster,
    pub interp_log: Vec<InterpLogRow>,
    pub forecast_log: Vec<ForecastLogRow>,
}

fn check_finite_logs(interp: &[InterpLogRow], forecast: &[ForecastLogRow]) -> Result<()> {
    if let Some(r) = interp.iter().find(|r| !r.total.is_finite()) {
        return Err(Error::Unstable { step: r.step });
    }
    if let Some(r) = forecast.iter().find(|r| !r.total.is_finite()) {
        return Err(Error::Unstable { step: r.step });
    }
    Ok(())
}

fn train_stage_two(
    cfg: &RunConfig,
    train: &[Trajectory],
    interp: &Interpolator,
    seed: u64,
) -> Result<(Forecaster, Vec<ForecastLogRow>)> {
    let init = Forecaster::init(interp.state_dim(), &cfg.forecast, seed.wrapping_add(1))?;
    let tf = train_forecaster(train, init, interp, &cfg.forecast, seed)?;
    Ok((tf.model, tf.log))
}

/// Both stages in order, in memory.
pub fn train_pair(cfg: &RunConfig, train: &[Trajectory], seed: u64) -> Result<TrainedPair> {
    let ti = train_interpolator(train, &cfg.interp, seed)?;
    let (forecaster, forecast_log) = train_stage_two(cfg, train, &ti.model, seed)?;
    check_finite_logs(&ti.log, &forecast_log)?;
    Ok(TrainedPair {
        interp: ti.model,
        forecaster,
        interp_log: ti.log,
        forecast_log,
    })
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(TRAIN_DIR).join(format!("seed-{seed}"))
}

fn load_interp(cfg: &RunConfig, dir: &Path) -> Result<Interpolator> {
    let path = dir.join(INTERP_CKPT);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let (net, params) = load_checkpoint(&path)?;
    Interpolator::new(net, params, cfg.interp.horizon)
}

fn load_forecaster(cfg: &RunConfig, dir: &Path) -> Result<Forecaster> {
    let path = dir.join(FORECAST_CKPT);
    if !path.exists() {
        return Err(Error::Missing(path));
    }
    let (net, params) = load_checkpoint(&path)?;
    Forecaster::new(net, params, cfg.forecast.schedule.clone())
}

/// Both checkpoints of one seed.
pub fn load_pair(cfg: &RunConfig, out: &Path, seed: u64) -> Result<(Interpolator, Forecaster)> {
    let dir = seed_dir(out, seed);
    Ok((load_interp(cfg, &dir)?, load_forecaster(cfg, &dir)?))
}

fn interp_log_rows(method: &str, seed: u64, log: &[InterpLogRow]) -> Vec<String> {
    log.iter()
        .map(|r| format!("{method},{seed},{},{},{},{}", r.step, r.recon_loss, r.pde_loss, r.total))
        .collect()
}

fn forecast_log_rows(method: &str, seed: u64, log: &[ForecastLogRow]) -> Vec<String> {
    log.iter()
        .map(|r| format!("{method},{seed},{},{},{},{}", r.step, r.mse, r.nll, r.total))
        .collect()
}

pub const INTERP_LOG_HEADER: &str = "method,seed,step,recon_loss,pde_loss,total";
pub const FORECAST_LOG_HEADER: &str = "method,seed,step,mse,nll,total";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainManifest {
    pub config: String,
    pub method: String,
    pub stage: String,
    pub seeds: Vec<u64>,
    pub files: Vec<String>,
}

fn train_seed(cfg: &RunConfig, train: &[Trajectory], out: &Path, seed: u64) -> Result<Vec<String>> {
    let dir = seed_dir(out, seed);
    create_dir(&dir)?;
    let method = cfg.method();
    let rel = |name: &str| format!("seed-{seed}/{name}");
    let mut files = Vec::new();
    let interp = match cfg.train.stage {
        Stage::Forecaster => load_interp(cfg, &dir)?,
        Stage::Both | Stage::Interpolator => {
            let ti = train_interpolator(train, &cfg.interp, seed)?;
            check_finite_logs(&ti.log, &[])?;
            save_checkpoint(&dir.join(INTERP_CKPT), &ti.model.net, &ti.model.params)?;
            write_csv(
                &dir.join("interp_log.csv"),
                INTERP_LOG_HEADER,
                &interp_log_rows(method, seed, &ti.log),
            )?;
            files.extend([rel(INTERP_CKPT), rel("interp_log.csv")]);
            ti.model
        }
    };
    if cfg.train.stage != Stage::Interpolator {
        let (forecaster, log) = train_stage_two(cfg, train, &interp, seed)?;
        check_finite_logs(&[], &log)?;
        save_checkpoint(&dir.join(FORECAST_CKPT), &forecaster.net, &forecaster.params)?;
        write_csv(
            &dir.join("forecast_log.csv"),
            FORECAST_LOG_HEADER,
            &forecast_log_rows(method, seed, &log),
        )?;
        files.extend([rel(FORECAST_CKPT), rel("forecast_log.csv")]);
    }
    Ok(files)
}

/// Trains every configured seed on the training split. The forecaster stage
/// needs the interpolator checkpoint of the same seed.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainManifest> {
    cfg.validate()?;
    let (manifest, data) = load_dataset(out)?;
    let train = select(cfg, &data, &manifest.split.train);
    let dir = out.join(TRAIN_DIR);
    create_dir(&dir)?;
    let files = cfg
        .seeds
        .par_iter()
        .map(|&s| train_seed(cfg, &train, out, s))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let manifest = TrainManifest {
        config: write_config(&dir, cfg)?,
        method: cfg.method().into(),
        stage: format!("{:?}", cfg.train.stage).to_lowercase(),
        seeds: cfg.seeds.clone(),
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

// ---------------------------------------------------------------- eval

/// Ensemble rollouts over a set of test trajectories, pooled frame-wise:
/// frame `k · steps + s` is step `s + 1` after the start of trajectory `k`.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub forecast: EnsembleForecast,
    pub steps: usize,
    pub crps: f64,
    pub mse: f64,
    /// `None` for a single member or a perfect ensemble mean.
    pub ssr: Option<f64>,
    /// MSE of repeating the start frame.
    pub persistence_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub crps: f64,
    pub mse: f64,
    pub ssr: Option<f64>,
}

fn ensemble_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k as u64)
}

/// Rolls out the configured ensemble from `start_frame` of each trajectory.
pub fn evaluate(
    cfg: &RunConfig,
    interp: &Interpolator,
    forecaster: &Forecaster,
    test: &[Trajectory],
    seed: u64,
) -> Result<EvalOutcome> {
    let rollout = cfg.rollout_config();
    let steps = rollout.windows * rollout.schedule.horizon;
    let start = cfg.eval.start_frame;
    let n = match cfg.eval.max_trajectories {
        0 => test.len(),
        m => m.min(test.len()),
    };
    if n == 0 {
        return Err(Error::InsufficientData("test split is empty".into()));
    }
    let test = &test[..n];
    for t in test {
        if t.state_dim() != forecaster.state_dim() || t.state_dim() != interp.state_dim() {
            return Err(Error::DimensionMismatch {
                context: "checkpoint state vs data grid",
                expected: t.state_dim(),
                actual: forecaster.state_dim(),
            });
        }
        if t.len() < start + steps + 1 {
            return Err(Error::InsufficientData(format!(
                "test trajectory has {} frames, rollout needs {}",
                t.len(),
                start + steps + 1
            )));
        }
    }
    let runs = test
        .par_iter()
        .enumerate()
        .map(|(k, t)| ensemble(forecaster, interp, &t.frame(start), &rollout, ensemble_seed(seed, k)))
        .collect::<Result<Vec<_>>>()?;
    let members = (0..rollout.ensemble_size)
        .map(|e| {
            let frames = runs.iter().flat_map(|r| r[e].frames[1..].iter().cloned()).collect();
            Trajectory::new(test[0].spec.clone(), test[0].channels, rollout.dt, frames)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth_frames = test
        .iter()
        .flat_map(|t| t.frames[start + 1..=start + steps].iter().cloned())
        .collect();
    let truth = Trajectory::new(test[0].spec.clone(), test[0].channels, rollout.dt, truth_frames)?;
    let persistence_mse = {
        let d = test[0].state_dim() as f64;
        let total: f64 = test
            .iter()
            .map(|t| {
                t.frames[start + 1..=start + steps]
                    .iter()
                    .map(|f| f.iter().zip(&t.frames[start]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / d)
                    .sum::<f64>()
            })
            .sum();
        total / (test.len() * steps) as f64
    };
    let forecast = EnsembleForecast::new(members, truth)?;
    let per_crps = crps_per_frame(&forecast)?;
    let per_mse = mse_per_frame(&forecast);
    let ssr = optional_ssr(&forecast, &(0..forecast.truth.len()).collect::<Vec<_>>())?;
    Ok(EvalOutcome {
        crps: per_crps.iter().sum::<f64>() / per_crps.len() as f64,
        mse: per_mse.iter().sum::<f64>() / per_mse.len() as f64,
        ssr,
        persistence_mse,
        steps,
        forecast,
    })
}

fn optional_ssr(f: &EnsembleForecast, frames: &[usize]) -> Result<Option<f64>> {
    if f.size() < 2 {
        return Ok(None);
    }
    match ssr_over(f, frames) {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-step scores averaged over the pooled trajectories.
pub fn curves(outcome: &EvalOutcome) -> Result<Vec<CurvePoint>> {
    let f = &outcome.forecast;
    let per_crps = crps_per_frame(f)?;
    let per_mse = mse_per_frame(f);
    let n_traj = f.truth.len() / outcome.steps;
    (0..outcome.steps)
        .map(|s| {
            let idx: Vec<usize> = (0..n_traj).map(|k| k * outcome.steps + s).collect();
            let mean = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / n_traj as f64;
            Ok(CurvePoint {
                step: s + 1,
                crps: mean(&per_crps),
                mse: mean(&per_mse),
                ssr: optional_ssr(f, &idx)?,
            })
        })
        .collect()
}

/// One line of the metric report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    pub crps: f64,
    pub mse: f64,
    pub ssr: Option<f64>,
    pub wallclock_s: f64,
}

pub const REPORT_HEADER: &str = "dataset,method,seed,CRPS,MSE,SSR,wallclock_s";

impl ReportRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.dataset,
            self.method,
            self.seed,
            self.crps,
            self.mse,
            fmt_opt(self.ssr),
            self.wallclock_s
        )
    }
}

fn write_curves(dir: &Path, seed: u64, outcome: &EvalOutcome) -> Result<Vec<String>> {
    let rows: Vec<String> = curves(outcome)?
        .iter()
        .map(|p| format!("{},{},{},{}", p.step, p.crps, p.mse, fmt_opt(p.ssr)))
        .collect();
    let curve_name = format!("curves_seed{seed}.csv");
    write_csv(&dir.join(&curve_name), "step,CRPS,MSE,SSR", &rows)?;
    // ensemble mean and truth of the first test trajectory
    let f = &outcome.forecast;
    let d = f.truth.state_dim();
    let e = f.size() as f64;
    let mut sample = Vec::with_capacity(outcome.steps * d);
    for s in 0..outcome.steps {
        for c in 0..d {
            let mean = f.members.iter().map(|m| m.frames[s][c]).sum::<f64>() / e;
            sample.push(format!("{},{c},{},{mean}", s + 1, f.truth.frames[s][c]));
        }
    }
    let sample_name = format!("sample_seed{seed}.csv");
    write_csv(&dir.join(&sample_name), "step,cell,truth,ensemble_mean", &sample)?;
    Ok(vec![curve_name, sample_name])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub config: String,
    pub files: Vec<String>,
}

/// Scores every trained seed on the test split; one report row per seed.
pub fn cmd_eval(cfg: &RunConfig, out: &Path) -> Result<Vec<ReportRow>> {
    cfg.validate()?;
    let (manifest, data) = load_dataset(out)?;
    let test = select(cfg, &data, &manifest.split.test);
    let dir = out.join(EVAL_DIR);
    create_dir(&dir)?;
    let mut rows = Vec::with_capacity(cfg.seeds.len());
    let mut files = vec![REPORT_FILE.to_string()];
    for &seed in &cfg.seeds {
        let (interp, forecaster) = load_pair(cfg, out, seed)?;
        let clock = Instant::now();
        let outcome = evaluate(cfg, &interp, &forecaster, &test, seed)?;
        let wallclock_s = clock.elapsed().as_secs_f64();
        if cfg.eval.curves {
            files.extend(write_curves(&dir, seed, &outcome)?);
        }
        rows.push(ReportRow {
            dataset: manifest.dataset.clone(),
            method: cfg.method().into(),
            seed,
            crps: outcome.crps,
            mse: outcome.mse,
            ssr: outcome.ssr,
            wallclock_s,
        });
    }
    let lines: Vec<String> = rows.iter().map(ReportRow::to_csv).collect();
    write_csv(&dir.join(REPORT_FILE), REPORT_HEADER, &lines)?;
    let manifest = EvalManifest {
        config: write_config(&dir, cfg)?,
        files,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(rows)
}

// ---------------------------------------------------------------- verify

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub tolerance: String,
    pub observed: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, tolerance: impl Into<String>, observed: f64, passed: bool) -> Self {
        Check {
            name: name.into(),
            tolerance: tolerance.into(),
            observed,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// The numerical verification suite.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport> {
    let v = &cfg.verify;
    if v.n_pairs == 0 || v.max_dim == 0 || v.n_seeds == 0 {
        return Err(Error::Config {
            key: "verify".into(),
            reason: "n_pairs, max_dim and n_seeds must be positive".into(),
        });
    }
    let mut checks = Vec::new();

    let dims = |k: usize| 1 + k % v.max_dim;
    let logdet = (0..v.n_pairs)
        .into_par_iter()
        .map(|k| verify_logdet_quadrature(dims(k), k as u64).map(|r| r.abs_error))
        .collect::<Result<Vec<_>>>()?;
    let worst = logdet.iter().copied().fold(0.0, f64::max);
    checks.push(Check::new("logdet_quadrature_max_abs_error", "<= 1e-6", worst, worst <= 1e-6));

    let bounds = (0..v.n_pairs)
        .into_par_iter()
        .map(|k| verify_spectral_bounds(dims(k), k as u64).map(|r| r.inside))
        .collect::<Result<Vec<_>>>()?;
    let outside = bounds.iter().filter(|&&b| !b).count();
    checks.push(Check::new("spectral_inclusion_failures", "== 0", outside as f64, outside == 0));

    let spec = GridSpec::line(v.n_grid, 1.0, cfg.interp.op.bc)?;
    let op = EllipticOpParams {
        bc: spec.bc,
        ..cfg.interp.op
    };
    let mut ratio_err: f64 = 0.0;
    for &lambda in &v.lambdas {
        ratio_err = ratio_err.max(variance_ratio_error(&spec, lambda)?);
    }
    checks.push(Check::new("per_mode_variance_ratio_rel_error", "<= 1e-14", ratio_err, ratio_err <= 1e-14));

    for &lambda in &v.lambdas {
        let reports = (0..v.n_seeds)
            .into_par_iter()
            .map(|s| verify_theorem_ordering(&spec, &op, lambda, v.n_samples, s))
            .collect::<Result<Vec<_>>>()?;
        let held = reports.iter().filter(|r| r.passed()).count();
        checks.push(Check::new(
            format!("mmd_ordering_lambda_{lambda}_seeds_held"),
            format!("== {}", v.n_seeds),
            held as f64,
            held as u64 == v.n_seeds,
        ));
    }

    let zero = zero_loss_value(v.n_grid)?;
    checks.push(Check::new("zero_loss_value_abs", "< 1e-10", zero.abs(), zero.abs() < 1e-10));
    let collapse = sigma_collapse_trace(v.n_grid)?;
    checks.push(Check::new("sigma_collapse_trace", "< 1e-8", collapse, collapse < 1e-8));
    Ok(VerifyReport { checks })
}

// ---------------------------------------------------------------- ablate

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub header: String,
    pub rows: Vec<String>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Trains and scores every seed per variant; one row per variant with
/// seed-averaged metrics.
fn sweep(
    cfg: &RunConfig,
    train: &[Trajectory],
    test: &[Trajectory],
    variants: Vec<(String, RunConfig)>,
) -> Result<Vec<String>> {
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(v, seed)| {
            let (_, c) = &variants[v];
            let bc = c.interp.op.bc;
            let pair = train_pair(c, &relabel_bc(train, bc), seed)?;
            evaluate(c, &pair.interp, &pair.forecaster, &relabel_bc(test, bc), seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let per = cfg.seeds.len();
    Ok(variants
        .iter()
        .enumerate()
        .map(|(v, (label, c))| {
            let group = &outcomes[v * per..(v + 1) * per];
            let ssr = group
                .iter()
                .map(|o| o.ssr)
                .collect::<Option<Vec<_>>>()
                .map(|s| mean(s.into_iter()));
            format!(
                "{label},{},{},{},{}",
                c.method(),
                mean(group.iter().map(|o| o.crps)),
                mean(group.iter().map(|o| o.mse)),
                fmt_opt(ssr)
            )
        })
        .collect())
}

fn empty_axis(axis: AblationAxis) -> Error {
    Error::Config {
        key: format!("ablate.{axis}"),
        reason: "ablation axis has no values".into(),
    }
}

/// Sweeps one axis and writes `ablate/<axis>.csv`.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path, axis: AblationAxis) -> Result<AblationReport> {
    cfg.validate()?;
    let a = &cfg.ablate;
    let len = match axis {
        AblationAxis::Lambda => a.lambda.len(),
        AblationAxis::Bc => a.bc.len(),
        AblationAxis::Noise => a.noise.len(),
    };
    if len == 0 {
        return Err(empty_axis(axis));
    }
    let (manifest, data) = load_dataset(out)?;
    let train = select(cfg, &data, &manifest.split.train);
    let test = select(cfg, &data, &manifest.split.test);
    let (header, rows) = match axis {
        AblationAxis::Lambda => {
            let variants = a
                .lambda
                .iter()
                .map(|&l| {
                    let mut c = cfg.clone();
                    c.interp.lambda_reg = l;
                    (l.to_string(), c)
                })
                .collect();
            ("lambda,method,CRPS,MSE,SSR", sweep(cfg, &train, &test, variants)?)
        }
        AblationAxis::Bc => {
            let variants = a
                .bc
                .iter()
                .map(|&bc| {
                    let mut c = cfg.clone();
                    c.interp.op.bc = bc;
                    (bc.to_string(), c)
                })
                .collect();
            ("bc,method,CRPS,MSE,SSR", sweep(cfg, &train, &test, variants)?)
        }
        AblationAxis::Noise => {
            let seed = cfg.seeds[0];
            let pair = train_pair(cfg, &train, seed)?;
            let outcome = evaluate(cfg, &pair.interp, &pair.forecaster, &test, seed)?;
            let rows = tradeoff_curve(&outcome.forecast, &a.noise, seed)?
                .iter()
                .map(|p| format!("{},{},{}", p.sigma, p.mse, p.abs_one_minus_ssr))
                .collect();
            ("sigma,MSE,abs_one_minus_SSR", rows)
        }
    };
    let dir = out.join(ABLATE_DIR);
    create_dir(&dir)?;
    let name = format!("{axis}.csv");
    write_csv(&dir.join(&name), header, &rows)?;
    let manifest = EvalManifest {
        config: write_config(&dir, cfg)?,
        files: vec![name],
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(AblationReport {
        axis,
        header: header.into(),
        rows,
    })
}

// ---------------------------------------------------------------- desk run

/// A freshly generated, trained and evaluated run.
#[derive(Debug, Clone)]
pub struct DeskOutcome {
    pub seed: u64,
    pub method: String,
    pub rollout_mse: f64,
    pub persistence_mse: f64,
    pub crps: f64,
    pub eval: EvalOutcome,
}

/// Generates the dataset with `seed`, trains both stages on its training
/// split and scores rollouts on its test split, all in memory.
pub fn desk_experiment(cfg: &RunConfig, seed: u64) -> Result<DeskOutcome> {
    cfg.validate()?;
    let mut c = cfg.clone();
    c.dataset.seed = seed;
    let data = generate_dataset(&c.dataset)?;
    let split = split_indices(data.len(), seed);
    let pair = train_pair(&c, &select(&c, &data, &split.train), seed)?;
    let eval = evaluate(&c, &pair.interp, &pair.forecaster, &select(&c, &data, &split.test), seed)?;
    Ok(DeskOutcome {
        seed,
        method: c.method().into(),
        rollout_mse: eval.mse,
        persistence_mse: eval.persistence_mse,
        crps: eval.crps,
        eval,
    })
}

/// Renders the verification report, one check per line.
pub fn format_verify(report: &VerifyReport) -> String {
    let mut s = String::new();
    for c in &report.checks {
        let _ = writeln!(
            s,
            "{} {:<42} tolerance {:<10} observed {:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.tolerance,
            c.observed
        );
    }
    s
}
