//! `bcisim` — synthesize sessions, train decoders, run Grid-task
//! simulations, and reproduce the optimization/sweep/comparison protocols.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, RawConfig, ResolvedConfig};

#[derive(Parser)]
#[command(name = "bcisim", version, about = "Grid-task decoder comparison toolkit")]
struct Cli {
    /// Key = value config file; flags override file values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key, e.g. --set sweep.gain_count=20 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,

    /// Dataset manifest CSV
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    /// Output directory
    #[arg(long = "out", global = true)]
    out: Option<PathBuf>,

    /// Master seed; required by every run that writes results
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = available parallelism); results do not depend on this
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-session dataset in the documented CSV format
    Synth,
    /// Fit a Kalman or train an LSTM decoder and save the model file
    Train {
        #[arg(long)]
        decoder: String,
        #[arg(long)]
        test_session: Option<u32>,
        /// Prior sessions to include (defaults to d.kalman / d.rnn)
        #[arg(long)]
        d: Option<usize>,
    },
    /// Run repeated Grid-task simulations on a session's test blocks
    Simulate {
        /// kalman, rnn, oracle or null
        #[arg(long)]
        decoder: String,
        /// Model file (required for kalman/rnn)
        #[arg(long)]
        model: Option<PathBuf>,
        /// high-speed or high-accuracy
        #[arg(long)]
        preset: Option<String>,
        /// Override the decoder's output gain (oracle speed)
        #[arg(long)]
        gain: Option<f64>,
        #[arg(long)]
        test_session: Option<u32>,
        /// Also write a per-tick trajectory log for one run
        #[arg(long)]
        trajectory: bool,
    },
    /// Sweep gain (and smoothing) on a session's validation blocks
    Optimize {
        #[arg(long)]
        decoder: String,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        test_session: Option<u32>,
    },
    /// Training-set-size study: full pipeline at every D
    StudyD {
        /// Comma-separated decoder list (default kalman,rnn)
        #[arg(long)]
        decoders: Option<String>,
    },
    /// Grid-size sweep at the intermediate dwell time
    SweepGrid {
        #[arg(long)]
        decoders: Option<String>,
    },
    /// Head-to-head comparison with the session exclusion rule
    Compare {
        #[arg(long)]
        decoders: Option<String>,
    },
    /// Summarize the report CSVs in the output directory
    Report,
}

fn resolve(cli: &Cli) -> Result<ResolvedConfig, ConfigError> {
    let mut raw = match &cli.config {
        Some(path) => RawConfig::load(path)?,
        None => RawConfig::default(),
    };
    raw.apply_overrides(&cli.sets)?;
    if let Some(m) = &cli.manifest {
        raw.set("manifest", m.display().to_string());
    }
    if let Some(o) = &cli.out {
        raw.set("out_dir", o.display().to_string());
    }
    if let Some(s) = cli.seed {
        raw.set("seed", s.to_string());
    }
    if let Some(w) = cli.workers {
        raw.set("workers", w.to_string());
    }
    raw.resolve()
}

fn dispatch(command: &Command, cfg: &ResolvedConfig) -> anyhow::Result<()> {
    match command {
        Command::Synth => commands::synth(cfg),
        Command::Train { decoder, test_session, d } => {
            commands::train(cfg, decoder, *test_session, *d)
        }
        Command::Simulate { decoder, model, preset, gain, test_session, trajectory } => {
            commands::simulate(
                cfg,
                decoder,
                model.as_deref(),
                preset.as_deref(),
                *gain,
                *test_session,
                *trajectory,
            )
        }
        Command::Optimize { decoder, model, test_session } => {
            commands::optimize(cfg, decoder, model.as_deref(), *test_session)
        }
        Command::StudyD { decoders } => commands::study_d(cfg, decoders.as_deref()),
        Command::SweepGrid { decoders } => commands::sweep_grid(cfg, decoders.as_deref()),
        Command::Compare { decoders } => commands::compare(cfg, decoders.as_deref()),
        Command::Report => commands::report(cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();

    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("bcisim: {e}");
            return ExitCode::from(2);
        }
    };

    // one worker pool for the whole run; module code never spawns its own
    let threads = if cfg.workers == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cfg.workers
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("bcisim: cannot build worker pool: {e}");
            return ExitCode::from(1);
        }
    };

    match pool.install(|| dispatch(&cli.command, &cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.is::<ConfigError>() {
                eprintln!("bcisim: {e}");
                ExitCode::from(2)
            } else {
                eprintln!("bcisim: error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
