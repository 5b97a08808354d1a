//! Plain-text key-value experiment configuration with CLI overrides.
//!
//! Files hold `key = value` lines (`#` starts a comment; keys beginning with
//! `_` are informational and ignored on load). Flags win over file values.
//! The fully resolved configuration is echoed into each run's metadata file,
//! which is itself a loadable config, so any results file can be reproduced
//! from its metadata alone.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bcisim_core::experiments::{PipelineConfig, SweepSpec};
use bcisim_core::rnn::TrainConfig;
use bcisim_core::simulator::GridTaskConfig;
use bcisim_core::synthdata::{Nonlinearity, SynthConfig};

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Raw key-value store merged from file and `--set` overrides.
#[derive(Debug, Default, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<RawConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RawConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return err(format!("{}:{}: expected `key = value`", path.display(), lineno + 1));
            };
            let key = key.trim();
            if key.starts_with('_') {
                continue;
            }
            cfg.values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(cfg)
    }

    pub fn apply_overrides(&mut self, sets: &[String]) -> Result<(), ConfigError> {
        for s in sets {
            let Some((key, value)) = s.split_once('=') else {
                return err(format!("--set `{s}`: expected key=value"));
            };
            self.values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| ConfigError(format!("key `{key}` = `{raw}`: {e}"))),
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, ConfigError> {
        let defaults = SynthConfig::default();
        let sweep_defaults = SweepSpec::default();
        let train_defaults = TrainConfig::default();

        let nonlinearity_raw =
            self.get("synth.nonlinearity").unwrap_or("none").to_string();
        let Some(nonlinearity) = Nonlinearity::parse(&nonlinearity_raw) else {
            return err(format!(
                "synth.nonlinearity `{nonlinearity_raw}`: expected none, saturation or multiplicative-gain"
            ));
        };

        let preset = self.get("task.preset").unwrap_or("both").to_string();
        if !["both", "high-speed", "high-accuracy"].contains(&preset.as_str()) {
            return err(format!(
                "task.preset `{preset}`: expected both, high-speed or high-accuracy"
            ));
        }

        let test_sessions = match self.get("test_sessions") {
            None | Some("") | Some("all") => None,
            Some(raw) => {
                let mut out = Vec::new();
                for part in raw.split(',') {
                    match part.trim().parse::<u32>() {
                        Ok(v) => out.push(v),
                        Err(e) => return err(format!("test_sessions `{raw}`: {e}")),
                    }
                }
                Some(out)
            }
        };

        let cfg = ResolvedConfig {
            manifest: self.get("manifest").map(PathBuf::from),
            out_dir: self.get("out_dir").map(PathBuf::from),
            seed: match self.get("seed") {
                None => None,
                Some(raw) => Some(
                    raw.parse::<u64>()
                        .map_err(|e| ConfigError(format!("key `seed` = `{raw}`: {e}")))?,
                ),
            },
            workers: self.parse("workers", 0usize)?,
            test_sessions,
            synth_sessions: self.parse("synth.sessions", defaults.sessions)?,
            synth_blocks: self.parse("synth.blocks", defaults.blocks_per_session)?,
            synth_ticks: self.parse("synth.ticks", defaults.ticks_per_block)?,
            synth_features: self.parse("synth.features", defaults.feature_count)?,
            synth_baseline: self.parse("synth.baseline", defaults.baseline)?,
            synth_depth: self.parse("synth.depth", defaults.modulation_depth)?,
            synth_noise_std: self.parse("synth.noise_std", defaults.noise_std)?,
            synth_nonlinearity: nonlinearity,
            synth_drift_rate: self.parse("synth.drift_rate", defaults.drift_rate)?,
            synth_day_gap: self.parse("synth.day_gap", defaults.day_gap)?,
            task_preset: preset,
            run_duration_s: self.parse("task.run_duration_s", 120.0f64)?,
            gain_min: self.parse("sweep.gain_min", sweep_defaults.gain_min)?,
            gain_max: self.parse("sweep.gain_max", sweep_defaults.gain_max)?,
            gain_count: self.parse("sweep.gain_count", sweep_defaults.gain_count)?,
            opt_repeats: self.parse("sweep.opt_repeats", sweep_defaults.opt_repeats)?,
            eval_repeats: self.parse("sweep.eval_repeats", sweep_defaults.eval_repeats)?,
            opt_run_duration_s: self.parse("sweep.opt_run_duration_s", 120.0f64)?,
            d_max: self.parse("sweep.d_max", sweep_defaults.d_max)?,
            grid_min: self.parse("sweep.grid_min", sweep_defaults.grid_min)?,
            grid_max: self.parse("sweep.grid_max", sweep_defaults.grid_max)?,
            rnn_hidden: self.parse("rnn.hidden", train_defaults.hidden_units)?,
            rnn_batch: self.parse("rnn.batch", train_defaults.batch_size)?,
            rnn_learning_rate: self.parse("rnn.learning_rate", train_defaults.learning_rate)?,
            rnn_unroll: self.parse("rnn.unroll", train_defaults.unroll_steps)?,
            rnn_dropout: self.parse("rnn.dropout", train_defaults.dropout)?,
            rnn_epochs: self.parse("rnn.epochs", train_defaults.epochs)?,
            kalman_alpha0: self.parse("kalman.alpha0", 0.94f64)?,
            d_kalman: self.parse("d.kalman", 1usize)?,
            d_rnn: self.parse("d.rnn", 7usize)?,
            angle_bins: self.parse("bins.angle", 16usize)?,
            dist_bins: self.parse("bins.dist", 8usize)?,
        };
        Ok(cfg)
    }
}

/// Fully resolved configuration; one instance drives a whole subcommand run.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub test_sessions: Option<Vec<u32>>,

    pub synth_sessions: usize,
    pub synth_blocks: usize,
    pub synth_ticks: usize,
    pub synth_features: usize,
    pub synth_baseline: f64,
    pub synth_depth: f64,
    pub synth_noise_std: f64,
    pub synth_nonlinearity: Nonlinearity,
    pub synth_drift_rate: f64,
    pub synth_day_gap: i64,

    pub task_preset: String,
    pub run_duration_s: f64,

    pub gain_min: f64,
    pub gain_max: f64,
    pub gain_count: usize,
    pub opt_repeats: usize,
    pub eval_repeats: usize,
    pub opt_run_duration_s: f64,
    pub d_max: usize,
    pub grid_min: usize,
    pub grid_max: usize,

    pub rnn_hidden: usize,
    pub rnn_batch: usize,
    pub rnn_learning_rate: f64,
    pub rnn_unroll: usize,
    pub rnn_dropout: f64,
    pub rnn_epochs: usize,
    pub kalman_alpha0: f64,
    pub d_kalman: usize,
    pub d_rnn: usize,
    pub angle_bins: usize,
    pub dist_bins: usize,
}

impl ResolvedConfig {
    pub fn require_manifest(&self) -> Result<&Path, ConfigError> {
        match &self.manifest {
            Some(p) if p.exists() => Ok(p),
            Some(p) => err(format!("manifest `{}` does not exist", p.display())),
            None => err("`manifest` is required (file key or --manifest)"),
        }
    }

    pub fn require_out_dir(&self) -> Result<&Path, ConfigError> {
        match &self.out_dir {
            Some(p) => Ok(p),
            None => err("`out_dir` is required (file key or --out)"),
        }
    }

    pub fn require_seed(&self) -> Result<u64, ConfigError> {
        match self.seed {
            Some(s) => Ok(s),
            None => err("`seed` is required for runs that write results"),
        }
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            feature_count: self.synth_features,
            sessions: self.synth_sessions,
            blocks_per_session: self.synth_blocks,
            ticks_per_block: self.synth_ticks,
            baseline: self.synth_baseline,
            modulation_depth: self.synth_depth,
            noise_std: self.synth_noise_std,
            nonlinearity: self.synth_nonlinearity,
            drift_rate: self.synth_drift_rate,
            day_gap: self.synth_day_gap,
            seed,
            tuning: None,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            hidden_units: self.rnn_hidden,
            batch_size: self.rnn_batch,
            learning_rate: self.rnn_learning_rate,
            unroll_steps: self.rnn_unroll,
            dropout: self.rnn_dropout,
            epochs: self.rnn_epochs,
            ..TrainConfig::default()
        }
    }

    /// Assessment task list for the configured preset.
    pub fn tasks(&self) -> Vec<GridTaskConfig> {
        let with_duration = |t: GridTaskConfig| GridTaskConfig {
            run_duration_s: self.run_duration_s,
            ..t
        };
        match self.task_preset.as_str() {
            "high-speed" => vec![with_duration(GridTaskConfig::high_speed())],
            "high-accuracy" => vec![with_duration(GridTaskConfig::high_accuracy())],
            _ => vec![
                with_duration(GridTaskConfig::high_speed()),
                with_duration(GridTaskConfig::high_accuracy()),
            ],
        }
    }

    pub fn pipeline(&self, master_seed: u64) -> PipelineConfig {
        PipelineConfig {
            sweep: SweepSpec {
                gain_min: self.gain_min,
                gain_max: self.gain_max,
                gain_count: self.gain_count,
                alpha_values: bcisim_core::kalman::ALPHA_GRID.to_vec(),
                d_max: self.d_max,
                grid_min: self.grid_min,
                grid_max: self.grid_max,
                opt_repeats: self.opt_repeats,
                eval_repeats: self.eval_repeats,
            },
            tasks: self.tasks(),
            rnn_train: self.train_config(),
            kalman_alpha0: self.kalman_alpha0,
            angle_bins: self.angle_bins,
            dist_bins: self.dist_bins,
            sweep_template: GridTaskConfig {
                run_duration_s: self.run_duration_s,
                ..GridTaskConfig::sweep(2)
            },
            opt_run_duration_s: Some(self.opt_run_duration_s),
            master_seed,
        }
    }

    /// Every resolved key, as a loadable config document.
    pub fn to_document(&self, command: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "_artifact_version = {}", bcisim_core::version());
        let _ = writeln!(out, "_command = {command}");
        if let Some(m) = &self.manifest {
            let _ = writeln!(out, "manifest = {}", m.display());
        }
        if let Some(o) = &self.out_dir {
            let _ = writeln!(out, "out_dir = {}", o.display());
        }
        if let Some(s) = self.seed {
            let _ = writeln!(out, "seed = {s}");
        }
        let _ = writeln!(out, "workers = {}", self.workers);
        if let Some(ts) = &self.test_sessions {
            let list: Vec<String> = ts.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "test_sessions = {}", list.join(","));
        }
        let _ = writeln!(out, "synth.sessions = {}", self.synth_sessions);
        let _ = writeln!(out, "synth.blocks = {}", self.synth_blocks);
        let _ = writeln!(out, "synth.ticks = {}", self.synth_ticks);
        let _ = writeln!(out, "synth.features = {}", self.synth_features);
        let _ = writeln!(out, "synth.baseline = {}", self.synth_baseline);
        let _ = writeln!(out, "synth.depth = {}", self.synth_depth);
        let _ = writeln!(out, "synth.noise_std = {}", self.synth_noise_std);
        let _ = writeln!(out, "synth.nonlinearity = {}", self.synth_nonlinearity.name());
        let _ = writeln!(out, "synth.drift_rate = {}", self.synth_drift_rate);
        let _ = writeln!(out, "synth.day_gap = {}", self.synth_day_gap);
        let _ = writeln!(out, "task.preset = {}", self.task_preset);
        let _ = writeln!(out, "task.run_duration_s = {}", self.run_duration_s);
        let _ = writeln!(out, "sweep.gain_min = {}", self.gain_min);
        let _ = writeln!(out, "sweep.gain_max = {}", self.gain_max);
        let _ = writeln!(out, "sweep.gain_count = {}", self.gain_count);
        let _ = writeln!(out, "sweep.opt_repeats = {}", self.opt_repeats);
        let _ = writeln!(out, "sweep.eval_repeats = {}", self.eval_repeats);
        let _ = writeln!(out, "sweep.opt_run_duration_s = {}", self.opt_run_duration_s);
        let _ = writeln!(out, "sweep.d_max = {}", self.d_max);
        let _ = writeln!(out, "sweep.grid_min = {}", self.grid_min);
        let _ = writeln!(out, "sweep.grid_max = {}", self.grid_max);
        let _ = writeln!(out, "rnn.hidden = {}", self.rnn_hidden);
        let _ = writeln!(out, "rnn.batch = {}", self.rnn_batch);
        let _ = writeln!(out, "rnn.learning_rate = {}", self.rnn_learning_rate);
        let _ = writeln!(out, "rnn.unroll = {}", self.rnn_unroll);
        let _ = writeln!(out, "rnn.dropout = {}", self.rnn_dropout);
        let _ = writeln!(out, "rnn.epochs = {}", self.rnn_epochs);
        let _ = writeln!(out, "kalman.alpha0 = {}", self.kalman_alpha0);
        let _ = writeln!(out, "d.kalman = {}", self.d_kalman);
        let _ = writeln!(out, "d.rnn = {}", self.d_rnn);
        let _ = writeln!(out, "bins.angle = {}", self.angle_bins);
        let _ = writeln!(out, "bins.dist = {}", self.dist_bins);
        out
    }
}
