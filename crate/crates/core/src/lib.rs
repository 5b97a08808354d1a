//! Core library for retrospective closed-loop cursor-decoder comparisons.
//!
//! The pipeline: load (or synthesize) labeled neural-feature sessions, z-score
//! features per block and normalize labels per session, build an angle-by-distance
//! sample index, fit a steady-state Kalman velocity decoder and train an LSTM
//! decoder, then replay both through a Grid-task simulator to measure bitrate and
//! target acquisition time under the standard assessment protocols.

pub mod datamodel;
pub mod decoder;
pub mod experiments;
pub mod kalman;
pub mod linalg;
pub mod rnn;
pub mod sampler;
pub mod simulator;
pub mod stats;
pub mod synthdata;
pub mod util;

pub use datamodel::{DataSplit, LabeledSample, SessionData};
pub use decoder::Decoder;
pub use kalman::{KalmanModel, KalmanState};
pub use rnn::{LstmState, LstmWeights, TrainConfig};
pub use sampler::SampleIndex;
pub use simulator::{GridTaskConfig, SimulationResult};
pub use synthdata::SynthConfig;

/// Crate version, recorded in run metadata so results stay traceable.
pub fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}
