//! `coldbias` command line front end.

mod commands;
mod workdir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coldbias_core::experiment::ExperimentConfig;
use coldbias_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "coldbias", version, about = "Popularity bias in cold-start recommendation and magnitude scaling")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base seed; every random choice derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Working / output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for ranking and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Ranking cutoff.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Scaling strength.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PoolArg {
    Val,
    Test,
}

impl PoolArg {
    pub fn name(self) -> &'static str {
        match self {
            PoolArg::Val => "val",
            PoolArg::Test => "test",
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset (interactions.tsv, features.emb).
    Generate,
    /// Split items into warm, cold-validation and cold-test pools.
    Split,
    /// Train the warm BPR model on the warm training interactions.
    TrainWarm,
    /// Fit the content encoder and generate cold item embeddings.
    TrainCold,
    /// Rescale generated cold embeddings towards the warm mean magnitude.
    Scale {
        #[arg(long, value_enum, default_value = "test")]
        pool: PoolArg,
    },
    /// Rank a cold pool for every evaluable user.
    Rank {
        #[arg(long, value_enum, default_value = "test")]
        pool: PoolArg,
        /// Use the scaled embeddings written by `scale`.
        #[arg(long)]
        scaled: bool,
        /// Explicit embedding file, rows aligned with the pool.
        #[arg(long, value_name = "PATH", conflicts_with = "scaled")]
        items: Option<PathBuf>,
    },
    /// Score a ranking file against the pool's holdout interactions.
    Evaluate {
        #[arg(long, value_enum, default_value = "test")]
        pool: PoolArg,
        #[arg(long, value_name = "PATH")]
        ranking: Option<PathBuf>,
    },
    /// Emit bias diagnostics for a ranking file.
    Analyze {
        #[arg(long, value_enum, default_value = "test")]
        pool: PoolArg,
        #[arg(long, value_name = "PATH")]
        ranking: Option<PathBuf>,
        /// Embeddings whose magnitudes are reported, rows aligned with the pool.
        #[arg(long, value_name = "PATH")]
        items: Option<PathBuf>,
    },
    /// Run the full multi-seed experiment.
    Pipeline,
    /// Welch-test two groups of per-run reports from a pipeline's metrics.json.
    Compare {
        #[arg(long, value_name = "PATH")]
        reports: Option<PathBuf>,
        /// Baseline rows as MODEL or MODEL@ALPHA (default: the encoder at alpha 0).
        #[arg(long)]
        base: Option<String>,
        /// Treated rows as MODEL or MODEL@ALPHA (default: the encoder at the selected alpha).
        #[arg(long)]
        treated: Option<String>,
        #[arg(long, value_enum, default_value = "test")]
        pool: PoolArg,
    },
}

fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    if let Some(k) = g.k {
        cfg.ks = vec![k];
        cfg.select_k = k;
    }
    if let Some(alpha) = g.alpha {
        cfg.scaling.alpha = alpha;
        cfg.scaling.sweep = if alpha > 0.0 { vec![alpha] } else { Vec::new() };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Generate => commands::generate(&cfg),
        Command::Split => commands::split(&cfg),
        Command::TrainWarm => commands::train_warm(&cfg),
        Command::TrainCold => commands::train_cold(&cfg),
        Command::Scale { pool } => commands::scale(&cfg, pool),
        Command::Rank { pool, scaled, items } => commands::rank(&cfg, pool, scaled, items, cli.global.k),
        Command::Evaluate { pool, ranking } => commands::evaluate(&cfg, pool, ranking, cli.global.k),
        Command::Analyze { pool, ranking, items } => commands::analyze(&cfg, pool, ranking, items, cli.global.k),
        Command::Pipeline => commands::pipeline(&cfg),
        Command::Compare { reports, base, treated, pool } => {
            commands::compare(&cfg, reports, base, treated, pool, cli.global.k)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.class().exit_code() as u8)
        }
    }
}
