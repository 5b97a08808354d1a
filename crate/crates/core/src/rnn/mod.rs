//! From-scratch LSTM decoder: a single forget-gate LSTM cell feeding three
//! dense heads — tanh heads for the x/y direction and a sigmoid head for
//! distance-to-target, which scales the direction vector like a speed.

mod train;

pub use train::{
    batch_gradient, batch_loss, build_windows, train_rnn, SequenceSet, TrainConfig, TrainedRnn,
};

use std::fs;
use std::path::Path;

use rand::Rng;
use thiserror::Error;

use crate::linalg::Mat;

/// Gate order used everywhere: forget, input, output, update.
pub const GATES: usize = 4;
pub const HEADS: usize = 3; // vx, vy, d

#[derive(Debug, Error)]
pub enum RnnError {
    #[error("feature vector length {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input to network")]
    NonFiniteInput,
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("model file {path}: {detail}")]
    BadModelFile { path: String, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub feature_count: usize,
    pub hidden: usize,
    /// Input weights per gate, hidden x features.
    pub w: [Mat; GATES],
    /// Recurrent weights per gate, hidden x hidden.
    pub u: [Mat; GATES],
    /// Biases per gate.
    pub b: [Vec<f64>; GATES],
    /// Dense head weights (vx, vy, d), each of length hidden.
    pub head_w: [Vec<f64>; HEADS],
    pub head_b: [f64; HEADS],
}

/// Hidden and cell state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }

    pub fn reset(&mut self) {
        self.h.iter_mut().for_each(|v| *v = 0.0);
        self.c.iter_mut().for_each(|v| *v = 0.0);
    }
}

impl LstmWeights {
    pub fn zeros(feature_count: usize, hidden: usize) -> Self {
        LstmWeights {
            feature_count,
            hidden,
            w: std::array::from_fn(|_| Mat::zeros(hidden, feature_count)),
            u: std::array::from_fn(|_| Mat::zeros(hidden, hidden)),
            b: std::array::from_fn(|_| vec![0.0; hidden]),
            head_w: std::array::from_fn(|_| vec![0.0; hidden]),
            head_b: [0.0; HEADS],
        }
    }

    /// Standard initialization: Glorot-uniform input and head weights,
    /// orthogonal recurrent weights, forget-gate bias +1.
    pub fn init<R: Rng>(feature_count: usize, hidden: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(feature_count, hidden);
        let limit_w = (6.0 / (feature_count + hidden) as f64).sqrt();
        for g in 0..GATES {
            for v in &mut out.w[g].data {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * limit_w;
            }
            out.u[g] = random_orthogonal(hidden, rng);
        }
        // forget bias +1 keeps early memory open
        out.b[0].iter_mut().for_each(|v| *v = 1.0);
        let limit_h = (6.0 / (hidden + 1) as f64).sqrt();
        for hw in &mut out.head_w {
            for v in hw.iter_mut() {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * limit_h;
            }
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_count, self.hidden)
    }

    /// Parameter tensors in a fixed order (w, u, b per gate, then heads);
    /// the optimizer, serializer and gradient checks all rely on this order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(GATES * 3 + HEADS + 1);
        for g in 0..GATES {
            out.push(&self.w[g].data);
        }
        for g in 0..GATES {
            out.push(&self.u[g].data);
        }
        for g in 0..GATES {
            out.push(&self.b[g]);
        }
        for h in 0..HEADS {
            out.push(&self.head_w[h]);
        }
        out.push(&self.head_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(GATES * 3 + HEADS + 1);
        let LstmWeights { w, u, b, head_w, head_b, .. } = self;
        for m in w.iter_mut() {
            out.push(&mut m.data);
        }
        for m in u.iter_mut() {
            out.push(&mut m.data);
        }
        for v in b.iter_mut() {
            out.push(v.as_mut_slice());
        }
        for v in head_w.iter_mut() {
            out.push(v.as_mut_slice());
        }
        out.push(head_b.as_mut_slice());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// grads-aware elementwise accumulate: self += alpha * other
    pub fn add_scaled(&mut self, other: &LstmWeights, alpha: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }
}

fn random_orthogonal<R: Rng>(n: usize, rng: &mut R) -> Mat {
    // Gram-Schmidt on a random Gaussian-ish matrix
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let proj = crate::linalg::dot(&rows[i], &rows[j]);
            let prev = rows[j].clone();
            crate::linalg::axpy(-proj, &prev, &mut rows[i]);
        }
        let norm = crate::linalg::dot(&rows[i], &rows[i]).sqrt();
        if norm > 1e-12 {
            rows[i].iter_mut().for_each(|v| *v /= norm);
        } else {
            // degenerate draw; fall back to a unit vector
            rows[i].iter_mut().for_each(|v| *v = 0.0);
            rows[i][i % n] = 1.0;
        }
    }
    Mat::from_rows(rows)
}

/// Per-step activations; the trainer caches one of these per unrolled step.
#[derive(Debug, Clone)]
pub(crate) struct StepActivations {
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

pub(crate) fn forward_step(
    weights: &LstmWeights,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
) -> StepActivations {
    let hidden = weights.hidden;
    let mut wx: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; hidden]);
    for g in 0..GATES {
        weights.w[g].matvec(x, &mut wx[g]);
    }
    let wx_slices = std::array::from_fn(|g| wx[g].as_slice());
    forward_step_from_wx(weights, h_prev, c_prev, wx_slices)
}

/// Forward step given precomputed input projections W_g x_t; the trainer
/// batches those over a whole window so each weight row is read once.
pub(crate) fn forward_step_from_wx(
    weights: &LstmWeights,
    h_prev: &[f64],
    c_prev: &[f64],
    wx: [&[f64]; GATES],
) -> StepActivations {
    let hidden = weights.hidden;
    let mut pre: [Vec<f64>; GATES] = std::array::from_fn(|g| wx[g].to_vec());
    for g in 0..GATES {
        let mut rec = vec![0.0; hidden];
        weights.u[g].matvec(h_prev, &mut rec);
        for ((p, r), bias) in pre[g].iter_mut().zip(&rec).zip(&weights.b[g]) {
            *p += r + bias;
        }
    }
    let f: Vec<f64> = pre[0].iter().map(|&a| sigmoid(a)).collect();
    let i: Vec<f64> = pre[1].iter().map(|&a| sigmoid(a)).collect();
    let o: Vec<f64> = pre[2].iter().map(|&a| sigmoid(a)).collect();
    let u: Vec<f64> = pre[3].iter().map(|&a| a.tanh()).collect();
    let c: Vec<f64> = f
        .iter()
        .zip(c_prev)
        .zip(i.iter().zip(&u))
        .map(|((ft, cp), (it, ut))| ft * cp + it * ut)
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(ot, tc)| ot * tc).collect();
    StepActivations { f, i, o, u, c, tanh_c, h }
}

/// One LSTM step: gates from sigmoid, candidate from tanh, then
/// `c_t = f . c_{t-1} + i . c_u` and `h_t = o . tanh(c_t)`.
pub fn lstm_step(
    weights: &LstmWeights,
    state: &LstmState,
    x: &[f64],
) -> Result<LstmState, RnnError> {
    if x.len() != weights.feature_count {
        return Err(RnnError::DimensionMismatch { expected: weights.feature_count, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RnnError::NonFiniteInput);
    }
    let act = forward_step(weights, &state.h, &state.c, x);
    Ok(LstmState { h: act.h, c: act.c })
}

/// Input projections W_g x for one tick, in gate order.
pub fn input_projections(
    weights: &LstmWeights,
    x: &[f64],
) -> Result<[Vec<f64>; GATES], RnnError> {
    if x.len() != weights.feature_count {
        return Err(RnnError::DimensionMismatch { expected: weights.feature_count, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RnnError::NonFiniteInput);
    }
    let mut wx: [Vec<f64>; GATES] = std::array::from_fn(|_| vec![0.0; weights.hidden]);
    for g in 0..GATES {
        weights.w[g].matvec(x, &mut wx[g]);
    }
    Ok(wx)
}

/// Runs the cell from a zero state over cached input projections (oldest
/// first) and decodes the heads at the final step. This is the deployment
/// path: decoding each tick over a sliding window of recent inputs keeps the
/// cell inside the state distribution its fixed-length training windows
/// produced.
pub fn decode_window_wx<'a, I>(weights: &LstmWeights, window: I, gain: f64) -> [f64; 2]
where
    I: Iterator<Item = &'a [Vec<f64>; GATES]>,
{
    let hidden = weights.hidden;
    let mut state = LstmState::zeros(hidden);
    for wx in window {
        let wx_slices = std::array::from_fn(|g| wx[g].as_slice());
        let act = forward_step_from_wx(weights, &state.h, &state.c, wx_slices);
        state.h = act.h;
        state.c = act.c;
    }
    decode_heads(weights, &state.h, gain)
}

/// Raw head outputs: (vx, vy, d) with tanh direction heads and a sigmoid
/// distance head.
pub fn head_outputs(weights: &LstmWeights, h: &[f64]) -> (f64, f64, f64) {
    let vx = (crate::linalg::dot(&weights.head_w[0], h) + weights.head_b[0]).tanh();
    let vy = (crate::linalg::dot(&weights.head_w[1], h) + weights.head_b[1]).tanh();
    let d = sigmoid(crate::linalg::dot(&weights.head_w[2], h) + weights.head_b[2]);
    (vx, vy, d)
}

/// Decoded velocity: `v = g * d * [vx, vy]`.
pub fn decode_heads(weights: &LstmWeights, h: &[f64], gain: f64) -> [f64; 2] {
    let (vx, vy, d) = head_outputs(weights, h);
    [gain * d * vx, gain * d * vy]
}

// ---- serialization (format v1) ----------------------------------------
//
// Little-endian binary: magic "BSR1", u32 feature count, u32 hidden units,
// f64 gain, then every parameter tensor in `tensors()` order. Round-trips
// bit-exactly.

const RNN_MAGIC: &[u8; 4] = b"BSR1";

pub fn save_rnn(weights: &LstmWeights, gain: f64, path: &Path) -> Result<(), RnnError> {
    let mut buf = Vec::with_capacity(4 + 8 + 8 + 8 * weights.param_count());
    buf.extend_from_slice(RNN_MAGIC);
    buf.extend_from_slice(&(weights.feature_count as u32).to_le_bytes());
    buf.extend_from_slice(&(weights.hidden as u32).to_le_bytes());
    buf.extend_from_slice(&gain.to_le_bytes());
    for t in weights.tensors() {
        for v in t {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| RnnError::Io { path: path.display().to_string(), source: e })
}

pub fn load_rnn(path: &Path) -> Result<(LstmWeights, f64), RnnError> {
    let bad = |detail: String| RnnError::BadModelFile { path: path.display().to_string(), detail };
    let buf =
        fs::read(path).map_err(|e| RnnError::Io { path: path.display().to_string(), source: e })?;
    if buf.len() < 20 || &buf[..4] != RNN_MAGIC {
        return Err(bad("missing BSR1 header".into()));
    }
    let features = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    let hidden = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let gain = f64::from_le_bytes(buf[12..20].try_into().unwrap());
    let mut weights = LstmWeights::zeros(features, hidden);
    let expected = 20 + 8 * weights.param_count();
    if buf.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", buf.len())));
    }
    let mut off = 20;
    for t in weights.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    Ok((weights, gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_state_gives_half_gates() {
        let w = LstmWeights::zeros(3, 4);
        let state = LstmState::zeros(4);
        let act = forward_step(&w, &state.h, &state.c, &[0.5, -0.5, 1.0]);
        for k in 0..4 {
            assert_eq!(act.f[k], 0.5);
            assert_eq!(act.i[k], 0.5);
            assert_eq!(act.o[k], 0.5);
            assert_eq!(act.c[k], 0.0);
            assert_eq!(act.h[k], 0.0);
        }
    }

    #[test]
    fn zero_weights_unit_cell_state_hand_value() {
        // c_t = 0.5 * 1 + 0.5 * 0 = 0.5; h = 0.5 * tanh(0.5) = 0.231059
        let w = LstmWeights::zeros(2, 1);
        let state = LstmState { h: vec![0.0], c: vec![1.0] };
        let next = lstm_step(&w, &state, &[0.0, 0.0]).unwrap();
        assert!((next.c[0] - 0.5).abs() < 1e-12);
        assert!((next.h[0] - 0.231_059).abs() < 1e-6);
    }

    #[test]
    fn saturated_forget_gate_preserves_memory() {
        let mut w = LstmWeights::zeros(2, 1);
        w.b[0][0] = 20.0;
        let state = LstmState { h: vec![0.0], c: vec![0.7] };
        let next = lstm_step(&w, &state, &[0.0, 0.0]).unwrap();
        assert!((next.c[0] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn hidden_output_bounded_by_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut w = LstmWeights::init(6, 5, &mut rng);
        // crank the weights up; |h| <= 1 must still hold
        for t in w.tensors_mut() {
            for v in t.iter_mut() {
                *v *= 50.0;
            }
        }
        let mut state = LstmState::zeros(5);
        for step in 0..30 {
            let x: Vec<f64> = (0..6).map(|i| ((step * 7 + i) as f64).sin() * 100.0).collect();
            state = lstm_step(&w, &state, &x).unwrap();
            for &h in &state.h {
                assert!(h.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn heads_zero_preactivation() {
        let w = LstmWeights::zeros(2, 3);
        let (vx, vy, d) = head_outputs(&w, &[0.4, -0.2, 0.9]);
        assert_eq!((vx, vy), (0.0, 0.0));
        assert_eq!(d, 0.5);
        assert_eq!(decode_heads(&w, &[0.4, -0.2, 0.9], 3.0), [0.0, 0.0]);
    }

    #[test]
    fn heads_hand_value() {
        // pre-activations (1, 0, 0), g = 2 -> v = (2 * 0.5 * tanh(1), 0)
        let mut w = LstmWeights::zeros(2, 1);
        w.head_w[0][0] = 1.0;
        let v = decode_heads(&w, &[1.0], 2.0);
        assert!((v[0] - 0.761_594).abs() < 1e-6);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn saturated_low_distance_head_stops_cursor() {
        let mut w = LstmWeights::zeros(2, 1);
        w.head_w[0][0] = 5.0; // strong direction signal
        w.head_b[2] = -30.0; // distance head pinned near zero
        for gain in [1.0, 10.0, 100.0] {
            let v = decode_heads(&w, &[1.0], gain);
            let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
            assert!(speed < 1e-12 * gain);
        }
    }

    #[test]
    fn dimension_mismatch_and_nan_rejected() {
        let w = LstmWeights::zeros(3, 2);
        let state = LstmState::zeros(2);
        assert!(matches!(
            lstm_step(&w, &state, &[1.0]),
            Err(RnnError::DimensionMismatch { expected: 3, got: 1 })
        ));
        assert!(matches!(
            lstm_step(&w, &state, &[1.0, f64::NAN, 0.0]),
            Err(RnnError::NonFiniteInput)
        ));
    }

    #[test]
    fn recurrent_init_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_orthogonal(8, &mut rng);
        for i in 0..8 {
            for j in 0..8 {
                let d = crate::linalg::dot(q.row(i), q.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weights_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = LstmWeights::init(7, 4, &mut rng);
        let dir = std::env::temp_dir().join("bcisim_rnn_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.bsr");
        save_rnn(&w, 2.75, &path).unwrap();
        let (loaded, gain) = load_rnn(&path).unwrap();
        assert_eq!(w, loaded);
        assert_eq!(gain, 2.75);
    }

    #[test]
    fn inference_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = LstmWeights::init(5, 4, &mut rng);
        let xs: Vec<Vec<f64>> =
            (0..20).map(|t| (0..5).map(|i| ((t * 3 + i) as f64 * 0.31).sin()).collect()).collect();
        let run = || {
            let mut state = LstmState::zeros(4);
            let mut out = Vec::new();
            for x in &xs {
                state = lstm_step(&w, &state, x).unwrap();
                out.push(decode_heads(&w, &state.h, 1.3));
            }
            out
        };
        assert_eq!(run(), run());
    }
}
