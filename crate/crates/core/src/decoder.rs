//! Uniform step interface over the decoders the simulator can drive: the
//! fitted Kalman, the trained LSTM, plus oracle/null decoders used by
//! plumbing tests and oracle-based acceptance checks.

use std::collections::VecDeque;

use thiserror::Error;

use crate::kalman::{kalman_step, KalmanError, KalmanModel, KalmanState};
use crate::rnn::{decode_window_wx, input_projections, LstmWeights, RnnError, GATES};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Rnn(#[from] RnnError),
}

#[derive(Debug, Clone)]
pub struct KalmanDecoder {
    pub model: KalmanModel,
    state: KalmanState,
}

impl KalmanDecoder {
    pub fn new(model: KalmanModel) -> Self {
        KalmanDecoder { model, state: KalmanState::default() }
    }
}

/// LSTM decoder deployed the way it was trained: each tick decodes the most
/// recent `context` feature vectors from a zero state, so the cell never
/// leaves the state distribution the stateless training windows produced.
/// The ring buffer caches the per-tick input projections W_g x_t; only the
/// cheap recurrent algebra replays per tick.
#[derive(Debug, Clone)]
pub struct RnnDecoder {
    pub weights: LstmWeights,
    pub gain: f64,
    pub context: usize,
    wx_ring: VecDeque<[Vec<f64>; GATES]>,
}

impl RnnDecoder {
    pub fn new(weights: LstmWeights, gain: f64, context: usize) -> Self {
        assert!(context >= 1);
        RnnDecoder { weights, gain, context, wx_ring: VecDeque::with_capacity(context) }
    }
}

/// Decoder under test. Oracle outputs `speed * unit(cursor_to_target)` and
/// Null always outputs zero; both ignore the neural sample.
#[derive(Debug, Clone)]
pub enum Decoder {
    Kalman(KalmanDecoder),
    Rnn(RnnDecoder),
    Oracle { speed: f64 },
    Null,
}

impl Decoder {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Decoder::Kalman(_) => "kalman",
            Decoder::Rnn(_) => "rnn",
            Decoder::Oracle { .. } => "oracle",
            Decoder::Null => "null",
        }
    }

    /// Feature count the decoder expects; None when it ignores features.
    pub fn feature_count(&self) -> Option<usize> {
        match self {
            Decoder::Kalman(d) => Some(d.model.feature_count()),
            Decoder::Rnn(d) => Some(d.weights.feature_count),
            Decoder::Oracle { .. } | Decoder::Null => None,
        }
    }

    /// Resets internal state; called once at the start of each simulation run.
    pub fn reset(&mut self) {
        match self {
            Decoder::Kalman(d) => d.state = KalmanState::default(),
            Decoder::Rnn(d) => d.wx_ring.clear(),
            Decoder::Oracle { .. } | Decoder::Null => {}
        }
    }

    /// Decodes one tick into a velocity in workspace units per second.
    pub fn step(
        &mut self,
        features: &[f64],
        cursor_to_target: [f64; 2],
    ) -> Result<[f64; 2], DecodeError> {
        match self {
            Decoder::Kalman(d) => {
                let (v, next) = kalman_step(&d.model, &d.state, features)?;
                d.state = next;
                Ok(v)
            }
            Decoder::Rnn(d) => {
                let wx = input_projections(&d.weights, features)?;
                if d.wx_ring.len() == d.context {
                    d.wx_ring.pop_front();
                }
                d.wx_ring.push_back(wx);
                Ok(decode_window_wx(&d.weights, d.wx_ring.iter(), d.gain))
            }
            Decoder::Oracle { speed } => {
                let [dx, dy] = cursor_to_target;
                let dist = (dx * dx + dy * dy).sqrt();
                if dist < 1e-9 {
                    Ok([0.0, 0.0])
                } else {
                    Ok([*speed * dx / dist, *speed * dy / dist])
                }
            }
            Decoder::Null => Ok([0.0, 0.0]),
        }
    }

    /// The post-process gain (oracle speed plays that role).
    pub fn gain(&self) -> f64 {
        match self {
            Decoder::Kalman(d) => d.model.gain,
            Decoder::Rnn(d) => d.gain,
            Decoder::Oracle { speed } => *speed,
            Decoder::Null => 0.0,
        }
    }

    pub fn with_gain(&self, gain: f64) -> Decoder {
        match self {
            Decoder::Kalman(d) => Decoder::Kalman(KalmanDecoder::new(d.model.with_gain(gain))),
            Decoder::Rnn(d) => Decoder::Rnn(RnnDecoder::new(d.weights.clone(), gain, d.context)),
            Decoder::Oracle { .. } => Decoder::Oracle { speed: gain },
            Decoder::Null => Decoder::Null,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Decoder::Kalman(d) => Some(d.model.alpha),
            _ => None,
        }
    }

    /// Kalman only: swaps the smoothing factor and re-converges the gain
    /// matrix. Other decoders pass through unchanged.
    pub fn with_alpha(&self, alpha: f64) -> Result<Decoder, DecodeError> {
        match self {
            Decoder::Kalman(d) => {
                Ok(Decoder::Kalman(KalmanDecoder::new(d.model.with_alpha(alpha)?)))
            }
            other => Ok(other.clone()),
        }
    }
}
