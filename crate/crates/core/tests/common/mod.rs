//! Small run configurations shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pdy_core::forecaster::DiffusionSchedule;
use pdy_core::harness::RunConfig;

/// A wave run small enough to generate, train and score in about a second.
pub fn tiny_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        seeds: vec![0, 1],
        output_dir: out.to_path_buf(),
        ..RunConfig::default()
    };
    cfg.dataset.n_trajectories = 10;
    cfg.dataset.wave.n_grid = 16;
    cfg.dataset.wave.n_frames = 20;
    cfg.interp.horizon = 4;
    cfg.interp.hidden_dims = vec![8];
    cfg.interp.time_embed_dim = 4;
    cfg.interp.steps = 20;
    cfg.interp.batch_size = 4;
    cfg.forecast.schedule = DiffusionSchedule::uniform(4, 2).unwrap();
    cfg.forecast.hidden_dims = vec![8];
    cfg.forecast.time_embed_dim = 4;
    cfg.forecast.steps = 20;
    cfg.forecast.batch_size = 4;
    cfg.eval.ensemble_size = 3;
    cfg.eval.windows = 2;
    cfg.ablate.noise = vec![0.0, 0.1];
    cfg
}

/// Every file under `root`, keyed by its relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

/// The report CSV with its trailing wallclock column removed.
pub fn strip_wallclock(report: &[u8]) -> String {
    String::from_utf8_lossy(report)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

/// Paths whose contents differ between two snapshots, comparing the report
/// without its timing column.
pub fn differing_files(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Vec<PathBuf> {
    let mut keys: Vec<&PathBuf> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| match (a.get(*k), b.get(*k)) {
            (Some(x), Some(y)) if k.ends_with("report.csv") => strip_wallclock(x) != strip_wallclock(y),
            (Some(x), Some(y)) => x != y,
            _ => true,
        })
        .cloned()
        .collect()
}
