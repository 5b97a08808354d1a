//! Subcommand implementations. Each run writes its CSV outputs plus a
//! `run_metadata.txt` snapshot of the resolved configuration into the output
//! directory; re-running with `--config run_metadata.txt` reproduces the
//! results byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bcisim_core::datamodel::{
    load_dataset, make_split, normalize_dataset, write_manifest, write_session, ManifestEntry,
    SessionData,
};
use bcisim_core::decoder::{Decoder, KalmanDecoder, RnnDecoder};
use bcisim_core::experiments::{
    apply_params, build_split_indexes, fit_decoder, grid_size_sweep, head_to_head, optimal_d,
    optimize_parameters, training_size_study, write_grid_sweep_csv, write_head_to_head_csv,
    write_training_size_csv, DecoderKind,
};
use bcisim_core::kalman::{load_kalman, save_kalman};
use bcisim_core::rnn::{load_rnn, save_rnn};
use bcisim_core::simulator::{run_grid_simulation_logged, GridTaskConfig, TrajectoryRow};
use bcisim_core::stats::median;
use bcisim_core::util::{derive_seed, fmt_f64, stream_id};

use crate::config::ResolvedConfig;

pub fn ensure_out_dir(cfg: &ResolvedConfig) -> Result<PathBuf> {
    let dir = cfg.require_out_dir()?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn write_metadata(dir: &Path, cfg: &ResolvedConfig, command: &str) -> Result<()> {
    let path = dir.join("run_metadata.txt");
    fs::write(&path, cfg.to_document(command))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_normalized(cfg: &ResolvedConfig) -> Result<Vec<SessionData>> {
    let manifest = cfg.require_manifest()?;
    let sessions = load_dataset(manifest)?;
    Ok(normalize_dataset(sessions)?)
}

fn eligible_sessions(sessions: &[SessionData], cfg: &ResolvedConfig) -> Result<Vec<u32>> {
    let eligible: Vec<u32> = sessions
        .iter()
        .filter(|s| s.blocks.len() >= 5)
        .map(|s| s.session_index)
        .collect();
    match &cfg.test_sessions {
        None => {
            if eligible.is_empty() {
                bail!("no eligible test sessions (need at least 5 blocks)");
            }
            Ok(eligible)
        }
        Some(requested) => {
            for r in requested {
                if !eligible.contains(r) {
                    bail!("requested test session {r} is missing or has fewer than 5 blocks");
                }
            }
            Ok(requested.clone())
        }
    }
}

fn default_test_session(sessions: &[SessionData], cfg: &ResolvedConfig) -> Result<u32> {
    Ok(*eligible_sessions(sessions, cfg)?.last().expect("nonempty"))
}

fn decoder_kind(name: &str) -> Result<DecoderKind> {
    DecoderKind::parse(name)
        .ok_or_else(|| anyhow!("unknown decoder `{name}` (kalman, rnn, oracle, null)"))
}

fn default_d(cfg: &ResolvedConfig, kind: DecoderKind) -> usize {
    match kind {
        DecoderKind::Kalman => cfg.d_kalman,
        DecoderKind::Rnn => cfg.d_rnn,
        _ => 0,
    }
}

fn parse_decoder_list(cfg: &ResolvedConfig, raw: Option<&str>) -> Result<Vec<(DecoderKind, usize)>> {
    let raw = raw.unwrap_or("kalman,rnn");
    let mut out = Vec::new();
    for part in raw.split(',') {
        let kind = decoder_kind(part.trim())?;
        out.push((kind, default_d(cfg, kind)));
    }
    if out.is_empty() {
        bail!("decoder list is empty");
    }
    Ok(out)
}

// ---- synth --------------------------------------------------------------

pub fn synth(cfg: &ResolvedConfig) -> Result<()> {
    let seed = cfg.require_seed()?;
    let dir = ensure_out_dir(cfg)?;
    let synth_cfg = cfg.synth_config(seed);
    let sessions = bcisim_core::synthdata::generate_dataset(&synth_cfg)?;

    let mut entries = Vec::with_capacity(sessions.len());
    for s in &sessions {
        let name = format!("session_{:03}.csv", s.session_index);
        write_session(s, &dir.join(&name))?;
        entries.push(ManifestEntry {
            session_index: s.session_index,
            calendar_day: s.calendar_day,
            path: name,
        });
    }
    write_manifest(&entries, &dir.join("manifest.csv"))?;
    write_metadata(&dir, cfg, "synth")?;
    println!(
        "synth: wrote {} sessions x {} blocks x {} ticks ({} features) to {}",
        sessions.len(),
        cfg.synth_blocks,
        cfg.synth_ticks,
        cfg.synth_features,
        dir.display()
    );
    Ok(())
}

// ---- train --------------------------------------------------------------

pub fn train(cfg: &ResolvedConfig, decoder: &str, test_session: Option<u32>, d: Option<usize>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let dir = ensure_out_dir(cfg)?;
    let kind = decoder_kind(decoder)?;
    if !matches!(kind, DecoderKind::Kalman | DecoderKind::Rnn) {
        bail!("`train` fits kalman or rnn decoders only");
    }
    let sessions = load_normalized(cfg)?;
    let session = match test_session {
        Some(s) => s,
        None => default_test_session(&sessions, cfg)?,
    };
    let d = d.unwrap_or_else(|| default_d(cfg, kind));
    let split = make_split(&sessions, session, d)?;
    let pipeline = cfg.pipeline(seed);
    let cell_seed = derive_seed(seed, stream_id(&[session as u64, d as u64]));
    let fitted = fit_decoder(kind, &sessions, &split, &pipeline, cell_seed)?;

    let path = match &fitted {
        Decoder::Kalman(k) => {
            let p = dir.join(format!("kalman_s{session}_d{d}.bsk"));
            save_kalman(&k.model, &p)?;
            p
        }
        Decoder::Rnn(r) => {
            let p = dir.join(format!("rnn_s{session}_d{d}.bsr"));
            save_rnn(&r.weights, r.gain, &p)?;
            p
        }
        _ => unreachable!(),
    };
    write_metadata(&dir, cfg, "train")?;
    println!("train: fitted {} on session {session} (d = {d}) -> {}", kind.name(), path.display());
    Ok(())
}

// ---- model loading shared by simulate/optimize ---------------------------

fn load_decoder(kind: DecoderKind, model: Option<&Path>, gain: Option<f64>) -> Result<Decoder> {
    let decoder = match kind {
        DecoderKind::Oracle => Decoder::Oracle { speed: gain.unwrap_or(1.0) },
        DecoderKind::Null => Decoder::Null,
        DecoderKind::Kalman => {
            let path = model.ok_or_else(|| anyhow!("--model is required for kalman"))?;
            Decoder::Kalman(KalmanDecoder::new(load_kalman(path)?))
        }
        DecoderKind::Rnn => {
            let path = model.ok_or_else(|| anyhow!("--model is required for rnn"))?;
            let (weights, g) = load_rnn(path)?;
            Decoder::Rnn(RnnDecoder::new(weights, g))
        }
    };
    Ok(match (gain, &decoder) {
        (Some(g), Decoder::Kalman(_) | Decoder::Rnn(_)) => decoder.with_gain(g),
        _ => decoder,
    })
}

// ---- simulate -------------------------------------------------------------

pub fn simulate(
    cfg: &ResolvedConfig,
    decoder: &str,
    model: Option<&Path>,
    preset: Option<&str>,
    gain: Option<f64>,
    test_session: Option<u32>,
    trajectory: bool,
) -> Result<()> {
    let seed = cfg.require_seed()?;
    let dir = ensure_out_dir(cfg)?;
    let kind = decoder_kind(decoder)?;
    let sessions = load_normalized(cfg)?;
    let session = match test_session {
        Some(s) => s,
        None => default_test_session(&sessions, cfg)?,
    };
    let split = make_split(&sessions, session, 0)?;
    let pipeline = cfg.pipeline(seed);
    let (_, test_index) = build_split_indexes(&sessions, &split, &pipeline)?;

    let task = match preset {
        Some(name) => GridTaskConfig {
            run_duration_s: cfg.run_duration_s,
            ..GridTaskConfig::preset(name).ok_or_else(|| anyhow!("unknown preset `{name}`"))?
        },
        None => cfg.tasks()[0],
    };
    let dec = load_decoder(kind, model, gain)?;

    let outcome = bcisim_core::simulator::repeat_simulations(
        &dec,
        &test_index,
        &task,
        seed,
        cfg.eval_repeats,
    )?;

    let mut csv = String::from("repeat,bitrate_bps,s_c,s_i,elapsed_s,mean_acq_time_s\n");
    for (i, r) in outcome.results.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            i,
            fmt_f64(r.bitrate_bps),
            r.s_c,
            r.s_i,
            fmt_f64(r.elapsed_s),
            r.mean_acq_time_s.map(fmt_f64).unwrap_or_default()
        );
    }
    fs::write(dir.join("simulate.csv"), csv)?;

    if trajectory {
        let mut rows: Vec<TrajectoryRow> = Vec::new();
        run_grid_simulation_logged(
            &dec,
            &test_index,
            &task,
            derive_seed(seed, stream_id(&[21, 0])),
            Some(&mut rows),
        )?;
        let mut traj = String::from("trial,tick,cursor_x,cursor_y,target_cell,event\n");
        for r in rows {
            let _ = writeln!(
                traj,
                "{},{},{},{},{},{}",
                r.trial,
                r.tick,
                fmt_f64(r.cursor[0]),
                fmt_f64(r.cursor[1]),
                r.target_cell,
                r.event.map(|e| e.name()).unwrap_or("")
            );
        }
        fs::write(dir.join("trajectory.csv"), traj)?;
    }

    write_metadata(&dir, cfg, "simulate")?;
    println!(
        "simulate: {} on session {session}, {} repeats, median bitrate {} bps",
        kind.name(),
        outcome.results.len(),
        fmt_f64(outcome.median_bitrate)
    );
    Ok(())
}

// ---- optimize --------------------------------------------------------------

pub fn optimize(
    cfg: &ResolvedConfig,
    decoder: &str,
    model: Option<&Path>,
    test_session: Option<u32>,
) -> Result<()> {
    let seed = cfg.require_seed()?;
    let dir = ensure_out_dir(cfg)?;
    let kind = decoder_kind(decoder)?;
    let sessions = load_normalized(cfg)?;
    let session = match test_session {
        Some(s) => s,
        None => default_test_session(&sessions, cfg)?,
    };
    let split = make_split(&sessions, session, 0)?;
    let pipeline = cfg.pipeline(seed);
    let (validation, _) = build_split_indexes(&sessions, &split, &pipeline)?;
    let dec = load_decoder(kind, model, None)?;

    let opt_tasks: Vec<GridTaskConfig> = cfg
        .tasks()
        .into_iter()
        .map(|t| GridTaskConfig { run_duration_s: cfg.opt_run_duration_s, ..t })
        .collect();
    let params = optimize_parameters(&dec, &validation, &opt_tasks, &pipeline.sweep, seed)?;

    let mut csv = String::from("decoder,gain,alpha,score,all_zero\n");
    let _ = writeln!(
        csv,
        "{},{},{},{},{}",
        kind.name(),
        fmt_f64(params.gain),
        params.alpha.map(fmt_f64).unwrap_or_default(),
        fmt_f64(params.score),
        params.all_zero
    );
    fs::write(dir.join("optimize.csv"), csv)?;

    // save the tuned model next to the report when one was loaded
    if let Some(path) = model {
        let tuned = apply_params(&dec, &params)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        match &tuned {
            Decoder::Kalman(k) => {
                save_kalman(&k.model, &dir.join(format!("{stem}_optimized.bsk")))?
            }
            Decoder::Rnn(r) => {
                save_rnn(&r.weights, r.gain, &dir.join(format!("{stem}_optimized.bsr")))?
            }
            _ => {}
        }
    }

    write_metadata(&dir, cfg, "optimize")?;
    println!(
        "optimize: {} session {session} -> gain {}{}, score {}",
        kind.name(),
        fmt_f64(params.gain),
        params.alpha.map(|a| format!(", alpha {a}")).unwrap_or_default(),
        fmt_f64(params.score)
    );
    Ok(())
}

// ---- study-d ---------------------------------------------------------------

pub fn study_d(cfg: &ResolvedConfig, decoders: Option<&str>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let dir = ensure_out_dir(cfg)?;
    let sessions = load_normalized(cfg)?;
    let tests = eligible_sessions(&sessions, cfg)?;
    let kinds: Vec<DecoderKind> =
        parse_decoder_list(cfg, decoders)?.into_iter().map(|(k, _)| k).collect();
    let pipeline = cfg.pipeline(seed);

    let curves = training_size_study(&sessions, &tests, &kinds, &pipeline)?;
    write_training_size_csv(&curves, &dir.join("training_size_curve.csv"))?;
    write_metadata(&dir, cfg, "study-d")?;

    for curve in &curves {
        let points = curve.curve();
        if points.is_empty() {
            println!("study-d: {} produced no usable cells", curve.decoder);
        } else {
            println!("study-d: {} optimal D = {}", curve.decoder, optimal_d(&points));
        }
    }
    Ok(())
}

// ---- sweep-grid -------------------------------------------------------------

pub fn sweep_grid(cfg: &ResolvedConfig, decoders: Option<&str>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let dir = ensure_out_dir(cfg)?;
    let sessions = load_normalized(cfg)?;
    let tests = eligible_sessions(&sessions, cfg)?;
    let specs = parse_decoder_list(cfg, decoders)?;
    let pipeline = cfg.pipeline(seed);

    let report = grid_size_sweep(&sessions, &tests, &specs, &pipeline)?;
    write_grid_sweep_csv(&report, &dir.join("grid_sweep.csv"))?;
    write_metadata(&dir, cfg, "sweep-grid")?;
    println!(
        "sweep-grid: {} grid sizes x {} decoders over {} sessions",
        pipeline.sweep.grid_values().len(),
        specs.len(),
        tests.len()
    );
    Ok(())
}

// ---- compare ----------------------------------------------------------------

pub fn compare(cfg: &ResolvedConfig, decoders: Option<&str>) -> Result<()> {
    let seed = cfg.require_seed()?;
    let dir = ensure_out_dir(cfg)?;
    let sessions = load_normalized(cfg)?;
    let tests = eligible_sessions(&sessions, cfg)?;
    let specs = parse_decoder_list(cfg, decoders)?;
    let pipeline = cfg.pipeline(seed);

    let report = head_to_head(&sessions, &tests, &specs, &pipeline)?;
    write_head_to_head_csv(&report, &dir.join("head_to_head.csv"))?;
    write_metadata(&dir, cfg, "compare")?;

    println!(
        "compare: {} sessions, {} included, {} excluded",
        report.sessions.len(),
        report.included(),
        report.excluded()
    );
    for agg in &report.aggregates {
        println!(
            "compare: {} / {} median bitrate {} bps",
            agg.task,
            agg.decoder,
            fmt_f64(agg.median_bitrate)
        );
    }
    Ok(())
}

// ---- report -----------------------------------------------------------------

fn read_csv(path: &Path) -> Option<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    lines.next()?;
    Some(
        lines
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').map(|s| s.to_string()).collect())
            .collect(),
    )
}

/// Renders a human-readable summary of whatever report CSVs the output
/// directory holds, and writes it to summary.txt.
pub fn report(cfg: &ResolvedConfig) -> Result<()> {
    let dir = cfg.require_out_dir()?.to_path_buf();
    let mut out = String::new();

    if let Some(rows) = read_csv(&dir.join("head_to_head.csv")) {
        let _ = writeln!(out, "head-to-head ({} rows):", rows.len());
        let mut sessions: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
        sessions.sort();
        sessions.dedup();
        let excluded: Vec<&Vec<String>> = rows.iter().filter(|r| r[4] == "true").collect();
        let mut excluded_sessions: Vec<&str> = excluded.iter().map(|r| r[0].as_str()).collect();
        excluded_sessions.sort();
        excluded_sessions.dedup();
        let _ = writeln!(
            out,
            "  sessions: {} total, {} excluded",
            sessions.len(),
            excluded_sessions.len()
        );
        let mut pairs: Vec<(String, String)> = rows
            .iter()
            .filter(|r| !r[1].is_empty())
            .map(|r| (r[1].clone(), r[2].clone()))
            .collect();
        pairs.sort();
        pairs.dedup();
        for (task, decoder) in pairs {
            let values: Vec<f64> = rows
                .iter()
                .filter(|r| r[1] == task && r[2] == decoder && r[4] == "false")
                .filter_map(|r| r[3].parse().ok())
                .collect();
            if !values.is_empty() {
                let _ = writeln!(
                    out,
                    "  {task} / {decoder}: median bitrate {} bps over {} included sessions",
                    fmt_f64(median(&values)),
                    values.len()
                );
            }
        }
    }

    if let Some(rows) = read_csv(&dir.join("training_size_curve.csv")) {
        let mut decoders: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
        decoders.sort();
        decoders.dedup();
        let _ = writeln!(out, "training-size study:");
        for d in decoders {
            let curve: Vec<(usize, f64)> = rows
                .iter()
                .filter(|r| r[0] == d)
                .filter_map(|r| Some((r[1].parse().ok()?, r[2].parse().ok()?)))
                .filter(|(_, v): &(usize, f64)| v.is_finite())
                .collect();
            if !curve.is_empty() {
                let best = optimal_d(&curve);
                let peak = curve.iter().find(|(x, _)| *x == best).unwrap().1;
                let _ = writeln!(
                    out,
                    "  {d}: optimal D = {best} (mean combined bitrate {})",
                    fmt_f64(peak)
                );
            }
        }
    }

    if let Some(rows) = read_csv(&dir.join("grid_sweep.csv")) {
        let _ = writeln!(out, "grid sweep ({} rows):", rows.len());
        let failures: Vec<usize> = rows.iter().filter_map(|r| r[4].parse().ok()).collect();
        if let (Some(lo), Some(hi)) = (failures.iter().min(), failures.iter().max()) {
            let _ = writeln!(out, "  failure counts range {lo}..{hi} across grid sizes");
        }
    }

    if let Some(rows) = read_csv(&dir.join("simulate.csv")) {
        let rates: Vec<f64> = rows.iter().filter_map(|r| r[1].parse().ok()).collect();
        if !rates.is_empty() {
            let _ = writeln!(
                out,
                "simulate: {} repeats, median bitrate {} bps",
                rates.len(),
                fmt_f64(median(&rates))
            );
        }
    }

    if out.is_empty() {
        bail!("no report CSVs found in {}", dir.display());
    }
    print!("{out}");
    fs::write(dir.join("summary.txt"), &out)?;
    Ok(())
}
