//! `pdy`: generate data, train, evaluate, verify and run ablations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pdy_core::harness::{
    cmd_ablate, cmd_eval, cmd_gen, cmd_train, cmd_verify, format_verify, with_threads, AblationAxis, RunConfig,
    REPORT_HEADER,
};
use pdy_core::Result;

#[derive(Parser)]
#[command(name = "pdy", version, about = "Dynamics-informed diffusion forecasting runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, env = "PDY_THREADS")]
    threads: Option<usize>,
    /// Overwrite existing generated data.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate trajectory files and a split manifest.
    Gen(Common),
    /// Train the interpolator and forecaster for every seed.
    Train(Common),
    /// Score trained checkpoints on the test split.
    Eval(Common),
    /// Run the numerical verification suite.
    Verify(Common),
    /// Sweep one axis (lambda, bc or noise).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        axis: AblationAxis,
    },
}

impl Common {
    fn resolve(&self) -> Result<(RunConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        let out = cfg.output_dir.clone();
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (common, axis) = match &cli.command {
        Command::Gen(c) | Command::Train(c) | Command::Eval(c) | Command::Verify(c) => (c, None),
        Command::Ablate { common, axis } => (common, Some(*axis)),
    };
    let (cfg, out) = common.resolve()?;
    with_threads(common.threads, || match &cli.command {
        Command::Gen(_) => {
            let m = cmd_gen(&cfg, &out, common.force)?;
            println!(
                "wrote {} {} trajectories to {} (train {}, val {}, test {})",
                m.files.len(),
                m.dataset,
                out.join("data").display(),
                m.split.train.len(),
                m.split.val.len(),
                m.split.test.len()
            );
            Ok(true)
        }
        Command::Train(_) => {
            let m = cmd_train(&cfg, &out)?;
            println!("trained {} seed(s) as {}; {} files", m.seeds.len(), m.method, m.files.len());
            Ok(true)
        }
        Command::Eval(_) => {
            println!("{REPORT_HEADER}");
            for row in cmd_eval(&cfg, &out)? {
                println!("{}", row.to_csv());
            }
            Ok(true)
        }
        Command::Verify(_) => {
            let report = cmd_verify(&cfg)?;
            print!("{}", format_verify(&report));
            Ok(report.passed())
        }
        Command::Ablate { .. } => {
            let report = cmd_ablate(&cfg, &out, axis.expect("ablate has an axis"))?;
            println!("{}", report.header);
            for r in &report.rows {
                println!("{r}");
            }
            Ok(true)
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
