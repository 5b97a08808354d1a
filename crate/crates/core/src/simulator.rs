//! Grid-task state machine driven by sampled neural data and a decoder under
//! test. Trials advance in 20 ms ticks: sample by the instantaneous
//! cursor-to-target vector, decode a velocity, integrate, then apply the
//! dwell/timeout rules until two simulated minutes have elapsed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::decoder::{DecodeError, Decoder};
use crate::sampler::SampleIndex;
use crate::stats::median;
use crate::util::{derive_seed, stream_id};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid task config: {0}")]
    BadConfig(String),
    #[error("decoder expects {decoder} features but the index provides {index}")]
    FeatureMismatch { decoder: usize, index: usize },
    #[error("bitrate domain error: {0}")]
    Domain(String),
    #[error("decode failed at run tick {tick}: {source}")]
    Decode {
        tick: u64,
        #[source]
        source: DecodeError,
    },
}

/// Grid-task geometry and timing. The workspace is the square [-1, 1]^2
/// split into n x n adjacent square cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTaskConfig {
    pub n: usize,
    pub dwell_s: f64,
    pub timeout_s: f64,
    pub run_duration_s: f64,
    pub tick_s: f64,
}

impl GridTaskConfig {
    /// Small targets, long dwell: n = 15, dwell 2 s, timeout 10 s.
    pub fn high_accuracy() -> Self {
        GridTaskConfig { n: 15, dwell_s: 2.0, timeout_s: 10.0, run_duration_s: 120.0, tick_s: 0.02 }
    }

    /// Large targets, short dwell: n = 10, dwell 0.5 s, timeout 5 s.
    pub fn high_speed() -> Self {
        GridTaskConfig { n: 10, dwell_s: 0.5, timeout_s: 5.0, run_duration_s: 120.0, tick_s: 0.02 }
    }

    /// Grid-size sweep preset: intermediate dwell 1 s, timeout 5 s.
    pub fn sweep(n: usize) -> Self {
        GridTaskConfig { n, dwell_s: 1.0, timeout_s: 5.0, run_duration_s: 120.0, tick_s: 0.02 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "high-accuracy" => Some(Self::high_accuracy()),
            "high-speed" => Some(Self::high_speed()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n < 2 {
            return Err(SimError::BadConfig("grid size n must be >= 2".into()));
        }
        if !(self.dwell_s > 0.0) {
            return Err(SimError::BadConfig("dwell_s must be positive".into()));
        }
        if !(self.timeout_s > self.dwell_s) {
            return Err(SimError::BadConfig("timeout_s must exceed dwell_s".into()));
        }
        if !(self.tick_s > 0.0) || !(self.run_duration_s > 0.0) {
            return Err(SimError::BadConfig("tick_s and run_duration_s must be positive".into()));
        }
        Ok(())
    }

    pub fn symbols(&self) -> usize {
        self.n * self.n
    }

    /// Cell under a workspace point; total and unique for every point.
    pub fn cell_of(&self, p: [f64; 2]) -> u32 {
        let n = self.n as f64;
        let col = (((p[0] + 1.0) / 2.0 * n).floor() as i64).clamp(0, self.n as i64 - 1);
        let row = (((p[1] + 1.0) / 2.0 * n).floor() as i64).clamp(0, self.n as i64 - 1);
        (row * self.n as i64 + col) as u32
    }

    pub fn cell_center(&self, cell: u32) -> [f64; 2] {
        let n = self.n as f64;
        let col = (cell as usize % self.n) as f64;
        let row = (cell as usize / self.n) as f64;
        [-1.0 + (col + 0.5) * 2.0 / n, -1.0 + (row + 0.5) * 2.0 / n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrialOutcome {
    Correct,
    WrongSelect,
    Timeout,
}

impl TrialOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            TrialOutcome::Correct => "correct",
            TrialOutcome::WrongSelect => "wrong-select",
            TrialOutcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub target_cell: u32,
    pub outcome: TrialOutcome,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub trials: Vec<TrialRecord>,
    pub s_c: usize,
    pub s_i: usize,
    pub elapsed_s: f64,
    pub bitrate_bps: f64,
    pub mean_acq_time_s: Option<f64>,
}

/// Rate of communication in bits per second for `n_symbols` possible targets:
/// `log2(N - 1) * max(S_c - S_i, 0) / t`. Wrong selections cancel correct
/// ones, so 50% selection accuracy scores 0.
pub fn bitrate(n_symbols: usize, s_c: usize, s_i: usize, t: f64) -> Result<f64, SimError> {
    if n_symbols < 2 {
        return Err(SimError::Domain(format!("need at least 2 symbols, got {n_symbols}")));
    }
    if !(t > 0.0) {
        return Err(SimError::Domain(format!("time must be positive, got {t}")));
    }
    let net = s_c.saturating_sub(s_i) as f64;
    Ok(((n_symbols - 1) as f64).log2() * net / t)
}

/// Mean time to acquire a target over correct trials only; None when no trial
/// was correct.
pub fn acquisition_time(result: &SimulationResult) -> Option<f64> {
    let correct: Vec<f64> = result
        .trials
        .iter()
        .filter(|t| t.outcome == TrialOutcome::Correct)
        .map(|t| t.duration_s)
        .collect();
    if correct.is_empty() {
        None
    } else {
        Some(correct.iter().sum::<f64>() / correct.len() as f64)
    }
}

/// One per-tick row of the optional trajectory log.
#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub trial: u32,
    pub tick: u64,
    pub cursor: [f64; 2],
    pub target_cell: u32,
    pub event: Option<TrialOutcome>,
}

/// Runs one 2-minute Grid-task simulation. The cursor starts at the center
/// and persists across trials; decoder state resets at run start only; the
/// trial in progress when time expires is discarded from the counts.
pub fn run_grid_simulation(
    decoder: &Decoder,
    index: &SampleIndex,
    config: &GridTaskConfig,
    seed: u64,
) -> Result<SimulationResult, SimError> {
    run_grid_simulation_logged(decoder, index, config, seed, None)
}

pub fn run_grid_simulation_logged(
    decoder: &Decoder,
    index: &SampleIndex,
    config: &GridTaskConfig,
    seed: u64,
    mut log: Option<&mut Vec<TrajectoryRow>>,
) -> Result<SimulationResult, SimError> {
    config.validate()?;
    if let Some(expected) = decoder.feature_count() {
        if expected != index.feature_count() {
            return Err(SimError::FeatureMismatch { decoder: expected, index: index.feature_count() });
        }
    }

    let mut decoder = decoder.clone();
    decoder.reset();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let run_ticks = (config.run_duration_s / config.tick_s).ceil() as u64;
    let mut p = [0.0f64, 0.0f64];
    let mut trials: Vec<TrialRecord> = Vec::new();
    let mut trial_idx: u32 = 0;

    let mut target = spawn_target(config, p, &mut rng);
    let mut trial_ticks: u64 = 0;
    let mut dwell_ticks: u64 = 0;
    let mut current_cell = config.cell_of(p);

    for tick in 0..run_ticks {
        let target_center = config.cell_center(target);
        let ctt = [target_center[0] - p[0], target_center[1] - p[1]];
        let sample = index.draw(ctt, &mut rng);
        let v = decoder
            .step(index.features_of(sample), ctt)
            .map_err(|source| SimError::Decode { tick, source })?;
        p[0] = (p[0] + v[0] * config.tick_s).clamp(-1.0, 1.0);
        p[1] = (p[1] + v[1] * config.tick_s).clamp(-1.0, 1.0);
        trial_ticks += 1;

        // dwell clock: accumulate while the cell stays the same, reset on
        // any cell change
        let cell = config.cell_of(p);
        if cell != current_cell {
            current_cell = cell;
            dwell_ticks = 0;
        } else {
            dwell_ticks += 1;
        }

        let mut event: Option<TrialOutcome> = None;
        // selection takes precedence over timeout on the same tick
        if dwell_ticks as f64 * config.tick_s >= config.dwell_s {
            let outcome = if current_cell == target {
                TrialOutcome::Correct
            } else {
                TrialOutcome::WrongSelect
            };
            event = Some(outcome);
        } else if trial_ticks as f64 * config.tick_s >= config.timeout_s {
            event = Some(TrialOutcome::Timeout);
        }

        if let Some(rows) = log.as_deref_mut() {
            rows.push(TrajectoryRow { trial: trial_idx, tick, cursor: p, target_cell: target, event });
        }

        if let Some(outcome) = event {
            trials.push(TrialRecord {
                target_cell: target,
                outcome,
                duration_s: trial_ticks as f64 * config.tick_s,
            });
            trial_idx += 1;
            target = spawn_target(config, p, &mut rng);
            trial_ticks = 0;
            dwell_ticks = 0;
            current_cell = config.cell_of(p);
        }
    }

    let elapsed_s = run_ticks as f64 * config.tick_s;
    let s_c = trials.iter().filter(|t| t.outcome == TrialOutcome::Correct).count();
    let s_i = trials.iter().filter(|t| t.outcome == TrialOutcome::WrongSelect).count();
    let bitrate_bps = bitrate(config.symbols(), s_c, s_i, elapsed_s)?;
    let mut result = SimulationResult {
        trials,
        s_c,
        s_i,
        elapsed_s,
        bitrate_bps,
        mean_acq_time_s: None,
    };
    result.mean_acq_time_s = acquisition_time(&result);
    Ok(result)
}

/// Uniform target cell, excluding the cell currently under the cursor.
fn spawn_target<R: Rng>(config: &GridTaskConfig, cursor: [f64; 2], rng: &mut R) -> u32 {
    let cells = config.symbols() as u32;
    let under = config.cell_of(cursor);
    let raw = rng.random_range(0..cells - 1);
    if raw >= under {
        raw + 1
    } else {
        raw
    }
}

#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub results: Vec<SimulationResult>,
    pub median_bitrate: f64,
}

const REPEAT_STREAM: u64 = 21;

/// Runs the simulation `repeats` times on seeds derived from the master seed
/// and reports the median bitrate. Repeats run in parallel; results come back
/// in repeat order, so worker count never changes the outcome.
pub fn repeat_simulations(
    decoder: &Decoder,
    index: &SampleIndex,
    config: &GridTaskConfig,
    master_seed: u64,
    repeats: usize,
) -> Result<RepeatOutcome, SimError> {
    assert!(repeats >= 1, "repeats must be >= 1");
    let results: Result<Vec<SimulationResult>, SimError> = (0..repeats)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(master_seed, stream_id(&[REPEAT_STREAM, i as u64]));
            run_grid_simulation(decoder, index, config, seed)
        })
        .collect();
    let results = results?;
    let bitrates: Vec<f64> = results.iter().map(|r| r.bitrate_bps).collect();
    Ok(RepeatOutcome { median_bitrate: median(&bitrates), results })
}
