//! Format-compatible synthetic multi-session datasets.
//!
//! Channels follow a cosine tuning model driven by the cursor-to-target
//! vector of a simulated point-to-target trajectory, with optional planted
//! nonlinearity and a slow per-day tuning drift, so every downstream protocol
//! can run without real recordings.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::datamodel::{Block, LabeledSample, SessionData, TICK_MS};
use crate::util::{derive_seed, stream_id};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
}

/// Planted channel nonlinearity applied to the modulation term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    None,
    /// tanh of the modulation; compresses far-from-target responses.
    Saturation,
    /// Modulation scaled by (1 + distance); gain grows with distance.
    MultiplicativeGain,
}

impl Nonlinearity {
    pub fn parse(s: &str) -> Option<Nonlinearity> {
        match s {
            "none" => Some(Nonlinearity::None),
            "saturation" => Some(Nonlinearity::Saturation),
            "multiplicative-gain" => Some(Nonlinearity::MultiplicativeGain),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::None => "none",
            Nonlinearity::Saturation => "saturation",
            Nonlinearity::MultiplicativeGain => "multiplicative-gain",
        }
    }
}

/// Cosine tuning parameters for one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTuning {
    pub baseline: f64,
    pub depth: f64,
    /// Preferred direction, radians.
    pub preferred_direction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub feature_count: usize,
    pub sessions: usize,
    pub blocks_per_session: usize,
    pub ticks_per_block: usize,
    /// Mean baseline level; per-channel baselines jitter around it.
    pub baseline: f64,
    /// Typical modulation depth; per-channel depths jitter around it.
    pub modulation_depth: f64,
    pub noise_std: f64,
    pub nonlinearity: Nonlinearity,
    /// Per-calendar-day shift of each channel's operating point. The shift
    /// enters the modulation term before the nonlinearity: with no
    /// nonlinearity that is exactly an additive mean shift, while a planted
    /// saturation turns it into a tuning-curve distortion that per-block
    /// z-scoring cannot undo.
    pub drift_rate: f64,
    /// Calendar days between consecutive sessions.
    pub day_gap: i64,
    pub seed: u64,
    /// Explicit per-channel tuning; derived from the seed when empty.
    pub tuning: Option<Vec<ChannelTuning>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            feature_count: 384,
            sessions: 6,
            blocks_per_session: 6,
            ticks_per_block: 900,
            baseline: 2.0,
            modulation_depth: 1.0,
            noise_std: 0.4,
            nonlinearity: Nonlinearity::None,
            drift_rate: 0.0,
            day_gap: 1,
            seed: 0,
            tuning: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.feature_count == 0 {
            return Err(SynthError::InvalidConfig("feature_count must be positive".into()));
        }
        if self.sessions == 0 {
            return Err(SynthError::InvalidConfig("sessions must be positive".into()));
        }
        if self.blocks_per_session < 5 {
            return Err(SynthError::InvalidConfig(
                "blocks_per_session must be at least 5 so sessions are eligible test sessions"
                    .into(),
            ));
        }
        if self.ticks_per_block < 2 {
            return Err(SynthError::InvalidConfig("ticks_per_block must be at least 2".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(SynthError::InvalidConfig("noise_std must be >= 0".into()));
        }
        if self.day_gap < 0 {
            return Err(SynthError::InvalidConfig("day_gap must be >= 0".into()));
        }
        if let Some(t) = &self.tuning {
            if t.len() != self.feature_count {
                return Err(SynthError::InvalidConfig(format!(
                    "tuning has {} entries for {} channels",
                    t.len(),
                    self.feature_count
                )));
            }
        }
        Ok(())
    }
}

const TUNING_STREAM: u64 = 1;
const SESSION_STREAM: u64 = 2;

/// The per-channel tuning a config implies; planted coefficients for tests
/// and fitting oracles.
pub fn channel_tuning(config: &SynthConfig) -> Vec<ChannelTuning> {
    if let Some(t) = &config.tuning {
        return t.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, TUNING_STREAM));
    (0..config.feature_count)
        .map(|c| {
            let base_angle =
                2.0 * std::f64::consts::PI * c as f64 / config.feature_count as f64;
            let jitter = (rng.random::<f64>() - 0.5) * 0.2;
            ChannelTuning {
                baseline: config.baseline * (0.8 + 0.4 * rng.random::<f64>()),
                depth: config.modulation_depth * (0.6 + 0.8 * rng.random::<f64>()),
                preferred_direction: base_angle + jitter,
            }
        })
        .collect()
}

/// Raw (pre z-scoring) response of one channel to a cursor-to-target label,
/// before noise. `drift_shift` is drift_rate * calendar_day.
pub fn raw_feature(
    tuning: &ChannelTuning,
    label: [f64; 2],
    nonlinearity: Nonlinearity,
    drift_shift: f64,
) -> f64 {
    // d * cos(theta - pd) expands to dx*cos(pd) + dy*sin(pd)
    let modulation = tuning.depth
        * (label[0] * tuning.preferred_direction.cos()
            + label[1] * tuning.preferred_direction.sin());
    let arg = modulation + drift_shift;
    let transformed = match nonlinearity {
        Nonlinearity::None => arg,
        Nonlinearity::Saturation => arg.tanh(),
        Nonlinearity::MultiplicativeGain => {
            let d = (label[0] * label[0] + label[1] * label[1]).sqrt();
            arg * (1.0 + d)
        }
    };
    tuning.baseline + transformed
}

// Intent trajectory constants: approach rate per second, motion jitter,
// arrival radius and hold time before the next target spawns.
const APPROACH_RATE: f64 = 2.5;
const MOTION_JITTER: f64 = 0.15;
const ARRIVE_DIST: f64 = 0.04;
const HOLD_TICKS: usize = 12;

/// Generates all sessions for a config. Deterministic in the seed; sessions
/// are produced on independent RNG streams so parallel generation matches
/// serial generation byte for byte.
pub fn generate_dataset(config: &SynthConfig) -> Result<Vec<SessionData>, SynthError> {
    config.validate()?;
    let tuning = channel_tuning(config);
    let sessions: Vec<SessionData> = (0..config.sessions)
        .into_par_iter()
        .map(|s| generate_session(config, &tuning, s as u32))
        .collect();
    Ok(sessions)
}

fn generate_session(config: &SynthConfig, tuning: &[ChannelTuning], index: u32) -> SessionData {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        config.seed,
        stream_id(&[SESSION_STREAM, index as u64]),
    ));
    let calendar_day = index as i64 * config.day_gap;
    let drift_shift = config.drift_rate * calendar_day as f64;
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");

    let tick_s = TICK_MS as f64 / 1000.0;
    let mut blocks = Vec::with_capacity(config.blocks_per_session);
    for b in 0..config.blocks_per_session {
        let block_id = (b + 1) as u32;
        let mut cursor = [0.0f64, 0.0f64];
        let mut target = random_target(&mut rng);
        let mut hold = 0usize;
        let mut samples = Vec::with_capacity(config.ticks_per_block);
        for t in 0..config.ticks_per_block {
            let label = [target[0] - cursor[0], target[1] - cursor[1]];
            let features: Vec<f64> = tuning
                .iter()
                .map(|ch| {
                    let clean = raw_feature(ch, label, config.nonlinearity, drift_shift);
                    if config.noise_std > 0.0 {
                        clean + noise.sample(&mut rng)
                    } else {
                        clean
                    }
                })
                .collect();
            samples.push(LabeledSample {
                features,
                label,
                block_id,
                tick_ms: t as u32 * TICK_MS,
            });

            // intent model: move toward the target with speed proportional to
            // distance, plus jitter; dwell briefly at arrival, then retarget
            let dist = (label[0] * label[0] + label[1] * label[1]).sqrt();
            if dist < ARRIVE_DIST {
                hold += 1;
                if hold >= HOLD_TICKS {
                    target = random_target(&mut rng);
                    hold = 0;
                }
            } else {
                hold = 0;
            }
            for axis in 0..2 {
                let v = APPROACH_RATE * label[axis]
                    + MOTION_JITTER * (rng.random::<f64>() * 2.0 - 1.0);
                cursor[axis] = (cursor[axis] + v * tick_s).clamp(-1.0, 1.0);
            }
        }
        blocks.push(Block { block_id, samples });
    }

    SessionData {
        session_index: index,
        calendar_day,
        blocks,
        feature_count: config.feature_count,
        label_scale: 1.0,
    }
}

fn random_target(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0]
}
