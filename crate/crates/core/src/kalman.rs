//! Steady-state velocity Kalman decoder.
//!
//! The observation model regresses each z-scored channel on the 2-D
//! normalized cursor-to-target label (ridge, 5-fold cross-validated lambda).
//! Iterating the discrete gain recursion to its fixed point reduces decoding
//! to one linear step per tick:
//!
//! `v_t = g [ alpha v_{t-1} + K (x_t - H alpha v_{t-1}) ]`
//!
//! The internal recursion carries the un-gained velocity, so sweeping `g`
//! reuses one fitted model.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::datamodel::{LabeledSample, TICK_MS};
use crate::linalg::{Mat, Mat2};

/// Lambda grid for the ridge fit: 8 log-spaced values, 1e-4 ..= 1e3.
pub const RIDGE_GRID: [f64; 8] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3];

/// Smoothing values swept during parameter optimization.
pub const ALPHA_GRID: [f64; 5] = [0.80, 0.90, 0.94, 0.97, 0.99];

pub const CV_FOLDS: usize = 5;

const GAIN_TOL: f64 = 1e-9;
const GAIN_MAX_ITERS: usize = 100_000;

#[derive(Debug, Error)]
pub enum KalmanError {
    #[error("insufficient training data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate regression: labels carry no variance")]
    DegenerateLabels,
    #[error("steady-state gain did not converge: last delta {last_delta:e}")]
    NoConvergence { last_delta: f64 },
    #[error("feature vector length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input to decoder")]
    NonFiniteInput,
    #[error("model file {path}: {detail}")]
    BadModelFile { path: String, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Fitted steady-state Kalman decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanModel {
    /// Observation matrix, features x 2.
    pub h: Mat,
    /// Converged gain, 2 x features.
    pub k: Mat,
    /// Smoothing factor; A = alpha * I.
    pub alpha: f64,
    /// Post-process output gain.
    pub gain: f64,
    /// State-noise covariance (from first differences of training labels).
    pub w: Mat2,
    /// Observation-noise variances, one per channel.
    pub q_diag: Vec<f64>,
    pub ridge_lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KalmanState {
    /// Un-gained velocity carried by the recursion.
    pub v_prev: [f64; 2],
}

impl KalmanModel {
    pub fn feature_count(&self) -> usize {
        self.h.rows
    }

    /// Replaces the smoothing factor and re-converges the gain.
    pub fn with_alpha(&self, alpha: f64) -> Result<KalmanModel, KalmanError> {
        let k = steady_state_gain(&self.h, &self.q_diag, self.w, alpha)?;
        Ok(KalmanModel { k, alpha, ..self.clone() })
    }

    pub fn with_gain(&self, gain: f64) -> KalmanModel {
        KalmanModel { gain, ..self.clone() }
    }
}

/// Output of the observation-model fit.
#[derive(Debug, Clone)]
pub struct ObservationFit {
    pub h: Mat,
    pub q_diag: Vec<f64>,
    pub w: Mat2,
    pub ridge_lambda: f64,
    /// Held-out CV mean squared error per lambda in `RIDGE_GRID` order.
    pub cv_mse: Vec<f64>,
}

/// Contiguous 5-fold assignment: sample i belongs to fold i*k/n.
pub fn cv_folds(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|i| i * k / n).collect()
}

/// Fits H by ridge regression of each channel on the 2-D label, selecting
/// lambda from `RIDGE_GRID` by 5-fold cross validation; Q is the diagonal of
/// the residual covariance and W the covariance of within-block first
/// differences of the labels.
pub fn fit_observation_model(samples: &[&LabeledSample]) -> Result<ObservationFit, KalmanError> {
    let n = samples.len();
    if n == 0 {
        return Err(KalmanError::InsufficientData { needed: 1, got: 0 });
    }
    let features = samples[0].features.len();
    let needed = 10 * features;
    if n < needed {
        return Err(KalmanError::InsufficientData { needed, got: n });
    }
    if samples.iter().all(|s| s.label[0] == 0.0 && s.label[1] == 0.0) {
        return Err(KalmanError::DegenerateLabels);
    }

    // per-fold partial sums of X^T X (2x2) and X^T Y (2 x features)
    let folds = cv_folds(n, CV_FOLDS);
    let mut xtx_fold = [Mat2::ZERO; CV_FOLDS];
    let mut xty_fold: Vec<Mat> = (0..CV_FOLDS).map(|_| Mat::zeros(2, features)).collect();
    for (s, &f) in samples.iter().zip(&folds) {
        let [lx, ly] = s.label;
        xtx_fold[f] = xtx_fold[f].add(&Mat2::new(lx * lx, lx * ly, lx * ly, ly * ly));
        let xty = &mut xty_fold[f];
        for (c, &v) in s.features.iter().enumerate() {
            xty.data[c] += lx * v;
            xty.data[features + c] += ly * v;
        }
    }
    let mut xtx_total = Mat2::ZERO;
    let mut xty_total = Mat::zeros(2, features);
    for f in 0..CV_FOLDS {
        xtx_total = xtx_total.add(&xtx_fold[f]);
        for i in 0..2 * features {
            xty_total.data[i] += xty_fold[f].data[i];
        }
    }

    let mut cv_mse = Vec::with_capacity(RIDGE_GRID.len());
    for &lambda in RIDGE_GRID.iter() {
        let mut sq_err = 0.0;
        for f in 0..CV_FOLDS {
            let xtx_train = xtx_total.sub(&xtx_fold[f]);
            let mut xty_train = xty_total.clone();
            for i in 0..2 * features {
                xty_train.data[i] -= xty_fold[f].data[i];
            }
            let h = ridge_solve(&xtx_train, &xty_train, lambda, features)?;
            for (s, &fold) in samples.iter().zip(&folds) {
                if fold != f {
                    continue;
                }
                for c in 0..features {
                    let pred = h.get(c, 0) * s.label[0] + h.get(c, 1) * s.label[1];
                    let e = s.features[c] - pred;
                    sq_err += e * e;
                }
            }
        }
        cv_mse.push(sq_err / (n * features) as f64);
    }
    let mut best = 0;
    for (i, &mse) in cv_mse.iter().enumerate() {
        if mse < cv_mse[best] {
            best = i;
        }
    }
    let ridge_lambda = RIDGE_GRID[best];

    let h = ridge_solve(&xtx_total, &xty_total, ridge_lambda, features)?;

    // Q: per-channel population variance of the regression residuals,
    // floored so zero-variance channels cannot poison Q^-1
    let mut sum = vec![0.0; features];
    let mut sumsq = vec![0.0; features];
    for s in samples {
        for c in 0..features {
            let r = s.features[c] - (h.get(c, 0) * s.label[0] + h.get(c, 1) * s.label[1]);
            sum[c] += r;
            sumsq[c] += r * r;
        }
    }
    let q_diag: Vec<f64> = (0..features)
        .map(|c| {
            let mean = sum[c] / n as f64;
            (sumsq[c] / n as f64 - mean * mean).max(1e-12)
        })
        .collect();

    // W: population covariance of within-block label first differences
    let mut diffs: Vec<[f64; 2]> = Vec::new();
    for pair in samples.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.block_id == b.block_id && b.tick_ms == a.tick_ms + TICK_MS {
            diffs.push([b.label[0] - a.label[0], b.label[1] - a.label[1]]);
        }
    }
    let w = if diffs.is_empty() {
        Mat2::ZERO
    } else {
        let nd = diffs.len() as f64;
        let mx = diffs.iter().map(|d| d[0]).sum::<f64>() / nd;
        let my = diffs.iter().map(|d| d[1]).sum::<f64>() / nd;
        let mut wxx = 0.0;
        let mut wxy = 0.0;
        let mut wyy = 0.0;
        for d in &diffs {
            wxx += (d[0] - mx) * (d[0] - mx);
            wxy += (d[0] - mx) * (d[1] - my);
            wyy += (d[1] - my) * (d[1] - my);
        }
        Mat2::new(wxx / nd, wxy / nd, wxy / nd, wyy / nd)
    };

    Ok(ObservationFit { h, q_diag, w, ridge_lambda, cv_mse })
}

fn ridge_solve(
    xtx: &Mat2,
    xty: &Mat,
    lambda: f64,
    features: usize,
) -> Result<Mat, KalmanError> {
    let inv = xtx
        .add(&Mat2::scale(lambda))
        .inverse()
        .ok_or(KalmanError::DegenerateLabels)?;
    // h_c = inv * xty[:, c], stored as rows of the features x 2 matrix
    let mut h = Mat::zeros(features, 2);
    for c in 0..features {
        let bx = xty.get(0, c);
        let by = xty.get(1, c);
        h.set(c, 0, inv.m[0] * bx + inv.m[1] * by);
        h.set(c, 1, inv.m[2] * bx + inv.m[3] * by);
    }
    Ok(h)
}

/// One step of the gain recursion in square-root form. Returns (K, new P).
///
/// K = G (I + G S G)^-1 G H^T Q^-1 with G = sqrt(P-), S = H^T Q^-1 H, which
/// equals P- H^T (H P- H^T + Q)^-1 without ever forming a features x features
/// matrix, and stays defined when P- is singular.
fn gain_step(h: &Mat, hq: &Mat, s: &Mat2, w: Mat2, alpha: f64, p: Mat2) -> (Mat, Mat2) {
    let p_minus = p.mul_scalar(alpha * alpha).add(&w);
    let g = p_minus.sqrt_psd();
    let m = Mat2::IDENTITY
        .add(&g.mul(s).mul(&g))
        .inverse()
        .expect("I + PSD is invertible");
    let p_post = g.mul(&m).mul(&g);
    // K = P_post * (H^T Q^-1)
    let features = h.rows;
    let mut k = Mat::zeros(2, features);
    for c in 0..features {
        let a = hq.get(0, c);
        let b = hq.get(1, c);
        k.set(0, c, p_post.m[0] * a + p_post.m[1] * b);
        k.set(1, c, p_post.m[2] * a + p_post.m[3] * b);
    }
    (k, p_post)
}

/// Iterates the gain recursion from P = I until the max-abs change in K
/// drops below 1e-9 (or errors after 1e5 iterations).
pub fn steady_state_gain(
    h: &Mat,
    q_diag: &[f64],
    w: Mat2,
    alpha: f64,
) -> Result<Mat, KalmanError> {
    steady_state_gain_from(h, q_diag, w, alpha, Mat2::IDENTITY)
}

/// Same recursion from an explicit P initialization (the fixed point is
/// initialization-independent; tests exercise that).
pub fn steady_state_gain_from(
    h: &Mat,
    q_diag: &[f64],
    w: Mat2,
    alpha: f64,
    p0: Mat2,
) -> Result<Mat, KalmanError> {
    assert_eq!(h.rows, q_diag.len(), "H rows must match Q length");
    assert!((0.0..1.0).contains(&alpha), "alpha must be in [0, 1)");
    let features = h.rows;
    // H^T Q^-1 (2 x features) and S = H^T Q^-1 H (2x2)
    let mut hq = Mat::zeros(2, features);
    let mut s = Mat2::ZERO;
    for c in 0..features {
        let hx = h.get(c, 0);
        let hy = h.get(c, 1);
        let iq = 1.0 / q_diag[c];
        hq.set(0, c, hx * iq);
        hq.set(1, c, hy * iq);
        s = s.add(&Mat2::new(hx * hx * iq, hx * hy * iq, hx * hy * iq, hy * hy * iq));
    }

    let mut p = p0;
    let mut k_prev: Option<Mat> = None;
    let mut last_delta = f64::INFINITY;
    for _ in 0..GAIN_MAX_ITERS {
        let (k, p_next) = gain_step(h, &hq, &s, w, alpha, p);
        p = p_next;
        if let Some(prev) = &k_prev {
            last_delta = k
                .data
                .iter()
                .zip(&prev.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if last_delta < GAIN_TOL {
                return Ok(k);
            }
        }
        k_prev = Some(k);
    }
    Err(KalmanError::NoConvergence { last_delta })
}

/// Fits the full model: observation fit, then the converged gain at `alpha`.
pub fn fit_kalman(
    samples: &[&LabeledSample],
    alpha: f64,
    gain: f64,
) -> Result<KalmanModel, KalmanError> {
    let fit = fit_observation_model(samples)?;
    let k = steady_state_gain(&fit.h, &fit.q_diag, fit.w, alpha)?;
    Ok(KalmanModel {
        h: fit.h,
        k,
        alpha,
        gain,
        w: fit.w,
        q_diag: fit.q_diag,
        ridge_lambda: fit.ridge_lambda,
    })
}

/// One decode tick; returns the gained velocity and the next state.
pub fn kalman_step(
    model: &KalmanModel,
    state: &KalmanState,
    x: &[f64],
) -> Result<([f64; 2], KalmanState), KalmanError> {
    if x.len() != model.feature_count() {
        return Err(KalmanError::DimensionMismatch { expected: model.feature_count(), got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) || state.v_prev.iter().any(|v| !v.is_finite()) {
        return Err(KalmanError::NonFiniteInput);
    }
    let av = [model.alpha * state.v_prev[0], model.alpha * state.v_prev[1]];
    // innovation = x - H (alpha v)
    let mut r0 = 0.0;
    let mut r1 = 0.0;
    for (c, &xc) in x.iter().enumerate() {
        let innov = xc - (model.h.get(c, 0) * av[0] + model.h.get(c, 1) * av[1]);
        r0 += model.k.get(0, c) * innov;
        r1 += model.k.get(1, c) * innov;
    }
    let raw = [av[0] + r0, av[1] + r1];
    let v = [model.gain * raw[0], model.gain * raw[1]];
    Ok((v, KalmanState { v_prev: raw }))
}

// ---- serialization (format v1) ----------------------------------------
//
// Little-endian binary: magic "BSK1", u32 feature count, then f64 fields
// alpha, gain, ridge_lambda, W (4), H (F x 2 row-major), K (2 x F row-major),
// Q diagonal (F). Round-trips bit-exactly.

const KALMAN_MAGIC: &[u8; 4] = b"BSK1";

pub fn save_kalman(model: &KalmanModel, path: &Path) -> Result<(), KalmanError> {
    let features = model.feature_count();
    let mut buf = Vec::with_capacity(4 + 4 + 8 * (7 + 5 * features));
    buf.extend_from_slice(KALMAN_MAGIC);
    buf.extend_from_slice(&(features as u32).to_le_bytes());
    let mut push = |v: f64| buf.extend_from_slice(&v.to_le_bytes());
    push(model.alpha);
    push(model.gain);
    push(model.ridge_lambda);
    for v in model.w.m {
        push(v);
    }
    for v in &model.h.data {
        push(*v);
    }
    for v in &model.k.data {
        push(*v);
    }
    for v in &model.q_diag {
        push(*v);
    }
    fs::write(path, buf).map_err(|e| KalmanError::Io { path: path.display().to_string(), source: e })
}

pub fn load_kalman(path: &Path) -> Result<KalmanModel, KalmanError> {
    let bad = |detail: &str| KalmanError::BadModelFile {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };
    let buf =
        fs::read(path).map_err(|e| KalmanError::Io { path: path.display().to_string(), source: e })?;
    if buf.len() < 8 || &buf[..4] != KALMAN_MAGIC {
        return Err(bad("missing BSK1 header"));
    }
    let features = u32::from_le_bytes(buf[4..8].try_into().unwrap()) as usize;
    // 3 scalars + W (4) + H (2F) + K (2F) + Q (F)
    let expected = 8 + 8 * (7 + 5 * features);
    if buf.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", buf.len())));
    }
    let mut off = 8;
    let mut next = || {
        let v = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
        off += 8;
        v
    };
    let alpha = next();
    let gain = next();
    let ridge_lambda = next();
    let w = Mat2::new(next(), next(), next(), next());
    let mut h = Mat::zeros(features, 2);
    for v in &mut h.data {
        *v = next();
    }
    let mut k = Mat::zeros(2, features);
    for v in &mut k.data {
        *v = next();
    }
    let q_diag: Vec<f64> = (0..features).map(|_| next()).collect();
    Ok(KalmanModel { h, k, alpha, gain, w, q_diag, ridge_lambda })
}
