//! Python bindings for the core toolkit: dataset synthesis and IO, decoder
//! fitting, and Grid-task simulation. All computation happens in Rust; the
//! Python surface mirrors the core types.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use bcisim_core::datamodel;
use bcisim_core::decoder::Decoder as CoreDecoder;
use bcisim_core::decoder::{KalmanDecoder as CoreKalman, RnnDecoder as CoreRnn};
use bcisim_core::experiments;
use bcisim_core::kalman;
use bcisim_core::rnn;
use bcisim_core::sampler::SampleIndex;
use bcisim_core::simulator;
use bcisim_core::synthdata;

fn to_py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

// ── Session ─────────────────────────────────────────────────────────

/// One recording session: ordered blocks of 20 ms labeled feature samples.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Session {
    inner: datamodel::SessionData,
}

#[pymethods]
impl Session {
    #[getter]
    fn session_index(&self) -> u32 {
        self.inner.session_index
    }
    #[getter]
    fn calendar_day(&self) -> i64 {
        self.inner.calendar_day
    }
    #[getter]
    fn feature_count(&self) -> usize {
        self.inner.feature_count
    }
    #[getter]
    fn label_scale(&self) -> f64 {
        self.inner.label_scale
    }
    #[getter]
    fn block_count(&self) -> usize {
        self.inner.blocks.len()
    }
    #[getter]
    fn sample_count(&self) -> usize {
        self.inner.sample_count()
    }

    /// (features, (label_dx, label_dy)) of one sample, for inspection.
    fn sample(&self, block: usize, tick: usize) -> PyResult<(Vec<f64>, (f64, f64))> {
        let b = self
            .inner
            .blocks
            .get(block)
            .ok_or_else(|| PyValueError::new_err(format!("no block {block}")))?;
        let s = b
            .samples
            .get(tick)
            .ok_or_else(|| PyValueError::new_err(format!("no tick {tick}")))?;
        Ok((s.features.clone(), (s.label[0], s.label[1])))
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        datamodel::write_session(&self.inner, &path).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Session(index={}, day={}, blocks={}, features={})",
            self.inner.session_index,
            self.inner.calendar_day,
            self.inner.blocks.len(),
            self.inner.feature_count
        )
    }
}

#[pyfunction]
fn load_session(path: PathBuf) -> PyResult<Session> {
    Ok(Session { inner: datamodel::load_session(&path).map_err(to_py_err)? })
}

#[pyfunction]
fn load_dataset(manifest: PathBuf) -> PyResult<Vec<Session>> {
    Ok(datamodel::load_dataset(&manifest)
        .map_err(to_py_err)?
        .into_iter()
        .map(|inner| Session { inner })
        .collect())
}

/// Per-block feature z-scoring plus per-session label normalization.
#[pyfunction]
fn normalize_dataset(sessions: Vec<Session>) -> PyResult<Vec<Session>> {
    let inner: Vec<datamodel::SessionData> = sessions.into_iter().map(|s| s.inner).collect();
    Ok(datamodel::normalize_dataset(inner)
        .map_err(to_py_err)?
        .into_iter()
        .map(|inner| Session { inner })
        .collect())
}

#[pyfunction]
fn zscore_block(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    datamodel::zscore_block(&rows).map_err(to_py_err)
}

// ── Synthetic data ──────────────────────────────────────────────────

/// Synthetic dataset configuration (cosine-tuned channels driven by a
/// simulated point-to-target trajectory).
#[pyclass(from_py_object)]
#[derive(Clone)]
struct SynthConfig {
    inner: synthdata::SynthConfig,
}

#[pymethods]
impl SynthConfig {
    #[new]
    #[pyo3(signature = (
        features = 384, sessions = 6, blocks = 6, ticks = 900, seed = 0,
        baseline = 2.0, depth = 1.0, noise_std = 0.4, nonlinearity = "none",
        drift_rate = 0.0, day_gap = 1
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        features: usize,
        sessions: usize,
        blocks: usize,
        ticks: usize,
        seed: u64,
        baseline: f64,
        depth: f64,
        noise_std: f64,
        nonlinearity: &str,
        drift_rate: f64,
        day_gap: i64,
    ) -> PyResult<Self> {
        let nl = synthdata::Nonlinearity::parse(nonlinearity).ok_or_else(|| {
            PyValueError::new_err(format!(
                "nonlinearity `{nonlinearity}`: expected none, saturation or multiplicative-gain"
            ))
        })?;
        let inner = synthdata::SynthConfig {
            feature_count: features,
            sessions,
            blocks_per_session: blocks,
            ticks_per_block: ticks,
            baseline,
            modulation_depth: depth,
            noise_std,
            nonlinearity: nl,
            drift_rate,
            day_gap,
            seed,
            tuning: None,
        };
        inner.validate().map_err(to_py_err)?;
        Ok(SynthConfig { inner })
    }
}

#[pyfunction]
fn generate_dataset(config: &SynthConfig) -> PyResult<Vec<Session>> {
    Ok(synthdata::generate_dataset(&config.inner)
        .map_err(to_py_err)?
        .into_iter()
        .map(|inner| Session { inner })
        .collect())
}

// ── Decoders ────────────────────────────────────────────────────────

/// Fitted steady-state Kalman decoder.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct KalmanDecoder {
    inner: CoreDecoder,
}

/// Trained LSTM decoder with distance-gated velocity heads.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct RnnDecoder {
    inner: CoreDecoder,
}

fn decoder_step(inner: &mut CoreDecoder, features: Vec<f64>) -> PyResult<(f64, f64)> {
    let v = inner.step(&features, [0.0, 0.0]).map_err(to_py_err)?;
    Ok((v[0], v[1]))
}

#[pymethods]
impl KalmanDecoder {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let model = kalman::load_kalman(&path).map_err(to_py_err)?;
        Ok(KalmanDecoder { inner: CoreDecoder::Kalman(CoreKalman::new(model)) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        match &self.inner {
            CoreDecoder::Kalman(k) => kalman::save_kalman(&k.model, &path).map_err(to_py_err),
            _ => unreachable!(),
        }
    }

    #[getter]
    fn gain(&self) -> f64 {
        self.inner.gain()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha().expect("kalman decoder has alpha")
    }

    #[getter]
    fn feature_count(&self) -> usize {
        self.inner.feature_count().expect("kalman decoder has features")
    }

    fn with_gain(&self, gain: f64) -> Self {
        KalmanDecoder { inner: self.inner.with_gain(gain) }
    }

    fn with_alpha(&self, alpha: f64) -> PyResult<Self> {
        Ok(KalmanDecoder { inner: self.inner.with_alpha(alpha).map_err(to_py_err)? })
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    /// Decode one 20 ms feature vector into a velocity.
    fn step(&mut self, features: Vec<f64>) -> PyResult<(f64, f64)> {
        decoder_step(&mut self.inner, features)
    }
}

#[pymethods]
impl RnnDecoder {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (weights, gain) = rnn::load_rnn(&path).map_err(to_py_err)?;
        Ok(RnnDecoder { inner: CoreDecoder::Rnn(CoreRnn::new(weights, gain)) })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        match &self.inner {
            CoreDecoder::Rnn(r) => rnn::save_rnn(&r.weights, r.gain, &path).map_err(to_py_err),
            _ => unreachable!(),
        }
    }

    #[getter]
    fn gain(&self) -> f64 {
        self.inner.gain()
    }

    #[getter]
    fn feature_count(&self) -> usize {
        self.inner.feature_count().expect("rnn decoder has features")
    }

    #[getter]
    fn hidden_units(&self) -> usize {
        match &self.inner {
            CoreDecoder::Rnn(r) => r.weights.hidden,
            _ => unreachable!(),
        }
    }

    fn with_gain(&self, gain: f64) -> Self {
        RnnDecoder { inner: self.inner.with_gain(gain) }
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    fn step(&mut self, features: Vec<f64>) -> PyResult<(f64, f64)> {
        decoder_step(&mut self.inner, features)
    }
}

fn extract_decoder(obj: &Bound<'_, PyAny>) -> PyResult<CoreDecoder> {
    if let Ok(k) = obj.extract::<KalmanDecoder>() {
        return Ok(k.inner);
    }
    if let Ok(r) = obj.extract::<RnnDecoder>() {
        return Ok(r.inner);
    }
    if let Ok(name) = obj.extract::<String>() {
        match name.as_str() {
            "oracle" => return Ok(CoreDecoder::Oracle { speed: 1.0 }),
            "null" => return Ok(CoreDecoder::Null),
            _ => {}
        }
    }
    Err(PyValueError::new_err(
        "decoder must be a KalmanDecoder, an RnnDecoder, \"oracle\" or \"null\"",
    ))
}

fn split_and_sessions(
    sessions: &[Session],
    test_session: u32,
    d: usize,
) -> PyResult<(Vec<datamodel::SessionData>, datamodel::DataSplit)> {
    let inner: Vec<datamodel::SessionData> = sessions.iter().map(|s| s.inner.clone()).collect();
    let split = datamodel::make_split(&inner, test_session, d).map_err(to_py_err)?;
    Ok((inner, split))
}

/// Fit a steady-state Kalman decoder on the training blocks of a split.
#[pyfunction]
#[pyo3(signature = (sessions, test_session, d = 1, alpha = 0.94, gain = 1.0))]
fn train_kalman(
    sessions: Vec<Session>,
    test_session: u32,
    d: usize,
    alpha: f64,
    gain: f64,
) -> PyResult<KalmanDecoder> {
    let (inner, split) = split_and_sessions(&sessions, test_session, d)?;
    let train = datamodel::gather(&inner, &split.train).map_err(to_py_err)?;
    let model = kalman::fit_kalman(&train, alpha, gain).map_err(to_py_err)?;
    Ok(KalmanDecoder { inner: CoreDecoder::Kalman(CoreKalman::new(model)) })
}

/// Train the LSTM decoder on the training blocks of a split.
#[pyfunction]
#[pyo3(signature = (sessions, test_session, d = 7, epochs = 10, hidden = 50, seed = 0, gain = 1.0, dropout = 0.5))]
#[allow(clippy::too_many_arguments)]
fn train_rnn(
    sessions: Vec<Session>,
    test_session: u32,
    d: usize,
    epochs: usize,
    hidden: usize,
    seed: u64,
    gain: f64,
    dropout: f64,
) -> PyResult<RnnDecoder> {
    let (inner, split) = split_and_sessions(&sessions, test_session, d)?;
    let config = rnn::TrainConfig {
        hidden_units: hidden,
        epochs,
        seed,
        dropout,
        ..rnn::TrainConfig::default()
    };
    let train = rnn::build_windows(&inner, &split.train, config.unroll_steps).map_err(to_py_err)?;
    let valid =
        rnn::build_windows(&inner, &split.validation, config.unroll_steps).map_err(to_py_err)?;
    let trained = rnn::train_rnn(&train, &valid, &config).map_err(to_py_err)?;
    Ok(RnnDecoder { inner: CoreDecoder::Rnn(CoreRnn::new(trained.weights, gain)) })
}

// ── Simulation ──────────────────────────────────────────────────────

/// Outcome of one 2-minute Grid-task simulation.
#[pyclass]
struct SimResult {
    inner: simulator::SimulationResult,
}

#[pymethods]
impl SimResult {
    #[getter]
    fn bitrate_bps(&self) -> f64 {
        self.inner.bitrate_bps
    }
    #[getter]
    fn s_c(&self) -> usize {
        self.inner.s_c
    }
    #[getter]
    fn s_i(&self) -> usize {
        self.inner.s_i
    }
    #[getter]
    fn elapsed_s(&self) -> f64 {
        self.inner.elapsed_s
    }
    #[getter]
    fn mean_acq_time_s(&self) -> Option<f64> {
        self.inner.mean_acq_time_s
    }
    /// List of (target_cell, outcome, duration_s).
    #[getter]
    fn trials(&self) -> Vec<(u32, String, f64)> {
        self.inner
            .trials
            .iter()
            .map(|t| (t.target_cell, t.outcome.name().to_string(), t.duration_s))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "SimResult(bitrate={:.3}, s_c={}, s_i={}, trials={})",
            self.inner.bitrate_bps,
            self.inner.s_c,
            self.inner.s_i,
            self.inner.trials.len()
        )
    }
}

fn task_config(preset: &str, n: Option<usize>, run_duration_s: Option<f64>) -> PyResult<simulator::GridTaskConfig> {
    let mut task = match (preset, n) {
        ("sweep", Some(n)) => simulator::GridTaskConfig::sweep(n),
        _ => simulator::GridTaskConfig::preset(preset).ok_or_else(|| {
            PyValueError::new_err(format!(
                "unknown preset `{preset}` (high-speed, high-accuracy, or sweep with n=...)"
            ))
        })?,
    };
    if let Some(d) = run_duration_s {
        task.run_duration_s = d;
    }
    task.validate().map_err(to_py_err)?;
    Ok(task)
}

fn test_index(sessions: &[Session], test_session: u32) -> PyResult<SampleIndex> {
    let (inner, split) = split_and_sessions(sessions, test_session, 0)?;
    SampleIndex::build(
        &inner,
        &split.test,
        bcisim_core::sampler::DEFAULT_ANGLE_BINS,
        bcisim_core::sampler::DEFAULT_DIST_BINS,
    )
    .map_err(to_py_err)
}

/// Run one simulation against the test blocks of `test_session`.
#[pyfunction]
#[pyo3(signature = (decoder, sessions, test_session, seed, preset = "high-speed", n = None, run_duration_s = None))]
fn simulate(
    decoder: &Bound<'_, PyAny>,
    sessions: Vec<Session>,
    test_session: u32,
    seed: u64,
    preset: &str,
    n: Option<usize>,
    run_duration_s: Option<f64>,
) -> PyResult<SimResult> {
    let dec = extract_decoder(decoder)?;
    let index = test_index(&sessions, test_session)?;
    let task = task_config(preset, n, run_duration_s)?;
    let result = simulator::run_grid_simulation(&dec, &index, &task, seed).map_err(to_py_err)?;
    Ok(SimResult { inner: result })
}

/// Repeat the simulation on derived seeds; returns (results, median_bitrate).
#[pyfunction]
#[pyo3(signature = (decoder, sessions, test_session, seed, repeats = 30, preset = "high-speed", n = None, run_duration_s = None))]
#[allow(clippy::too_many_arguments)]
fn repeat_simulations(
    decoder: &Bound<'_, PyAny>,
    sessions: Vec<Session>,
    test_session: u32,
    seed: u64,
    repeats: usize,
    preset: &str,
    n: Option<usize>,
    run_duration_s: Option<f64>,
) -> PyResult<(Vec<SimResult>, f64)> {
    let dec = extract_decoder(decoder)?;
    let index = test_index(&sessions, test_session)?;
    let task = task_config(preset, n, run_duration_s)?;
    let outcome =
        simulator::repeat_simulations(&dec, &index, &task, seed, repeats).map_err(to_py_err)?;
    Ok((
        outcome.results.into_iter().map(|inner| SimResult { inner }).collect(),
        outcome.median_bitrate,
    ))
}

// ── Metrics ─────────────────────────────────────────────────────────

/// Information throughput in bits per second for n_symbols possible targets.
#[pyfunction]
fn bitrate(n_symbols: usize, s_c: usize, s_i: usize, t: f64) -> PyResult<f64> {
    simulator::bitrate(n_symbols, s_c, s_i, t).map_err(to_py_err)
}

/// Two-sided Wilcoxon rank-sum test; returns (u_statistic, p_value).
#[pyfunction]
fn rank_sum(a: Vec<f64>, b: Vec<f64>) -> (f64, f64) {
    bcisim_core::stats::rank_sum_test(&a, &b)
}

/// Smallest D attaining the maximum of a (d, bitrate) curve.
#[pyfunction]
fn optimal_d(curve: Vec<(usize, f64)>) -> usize {
    experiments::optimal_d(&curve)
}

#[pyfunction]
fn version() -> &'static str {
    bcisim_core::version()
}

#[pymodule]
fn bcisim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Session>()?;
    m.add_class::<SynthConfig>()?;
    m.add_class::<KalmanDecoder>()?;
    m.add_class::<RnnDecoder>()?;
    m.add_class::<SimResult>()?;
    m.add_function(wrap_pyfunction!(load_session, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(zscore_block, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_kalman, m)?)?;
    m.add_function(wrap_pyfunction!(train_rnn, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(repeat_simulations, m)?)?;
    m.add_function(wrap_pyfunction!(bitrate, m)?)?;
    m.add_function(wrap_pyfunction!(rank_sum, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_d, m)?)?;
    m.add_function(wrap_pyfunction!(version, m)?)?;
    Ok(())
}
