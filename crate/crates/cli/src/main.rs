use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use lrsense_cli::config::ExperimentConfig;
use lrsense_cli::experiments;
use lrsense_cli::output::{resolve_out_dir, write_figure, OUT_DIR_ENV};
use lrsense_cli::BenchError;

#[derive(Parser)]
#[command(name = "bench", version, about = "Monte-Carlo experiments for low-rank matrix sensing")]
struct Cli {
    #[command(subcommand)]
    figure: Figure,
}

#[derive(Subcommand)]
enum Figure {
    /// Optimal subspace dimension against noise level.
    FigOptimalD(Overrides),
    /// Two-step NMSE for several stage-one column counts.
    FigObservations(Overrides),
    /// Averaged mutual coherence, designed against Gaussian maps.
    FigCoherence(Overrides),
    /// Two-step method against nuclear-norm and factorisation baselines.
    FigBenchmark(Overrides),
    /// Two-step NMSE with true against estimated rank.
    FigRankMode(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "M")]
    m_rows: Option<usize>,
    #[arg(long = "N")]
    n_cols: Option<usize>,
    #[arg(long = "r")]
    rank: Option<usize>,
    /// Stage-one column count.
    #[arg(long = "m")]
    m: Option<usize>,
    /// Noise variances, comma separated.
    #[arg(long)]
    sigma2: Option<String>,
    /// Observation counts, comma separated.
    #[arg(long)]
    p: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, BenchError> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        let pairs = [
            ("M", self.m_rows.map(|v| v.to_string())),
            ("N", self.n_cols.map(|v| v.to_string())),
            ("r", self.rank.map(|v| v.to_string())),
            ("m", self.m.map(|v| v.to_string())),
            ("sigma2", self.sigma2.clone()),
            ("p", self.p.clone()),
            ("trials", self.trials.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(value) = value {
                cfg.set(key, &value)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(figure: Figure) -> Result<PathBuf, BenchError> {
    let (name, overrides) = match &figure {
        Figure::FigOptimalD(o) => ("fig_optimal_d", o),
        Figure::FigObservations(o) => ("fig_two_step_observations", o),
        Figure::FigCoherence(o) => ("fig_coherence", o),
        Figure::FigBenchmark(o) => ("fig_benchmark", o),
        Figure::FigRankMode(o) => ("fig_rank_mode", o),
    };
    let cfg = overrides.resolve()?;
    let env = std::env::var(OUT_DIR_ENV).ok();
    let dir = resolve_out_dir(overrides.out.as_deref(), env.as_deref(), &cfg);
    info!("running {name} with {} trials, seed {}", cfg.trials, cfg.seed);
    match figure {
        Figure::FigOptimalD(_) => write_figure(&dir, name, &experiments::fig_optimal_d(&cfg)?, &cfg),
        Figure::FigObservations(_) => write_figure(&dir, name, &experiments::fig_two_step_observations(&cfg)?, &cfg),
        Figure::FigCoherence(_) => write_figure(&dir, name, &experiments::fig_coherence(&cfg)?, &cfg),
        Figure::FigBenchmark(_) => write_figure(&dir, name, &experiments::fig_benchmark(&cfg)?, &cfg),
        Figure::FigRankMode(_) => write_figure(&dir, name, &experiments::fig_rank_mode(&cfg)?, &cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.figure) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
