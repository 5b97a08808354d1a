//! Core session types, the documented CSV formats, and the feature/label
//! normalization pipeline.
//!
//! Session CSV: header `block_id,tick_ms,label_dx,label_dy,f0,...,f{F-1}`,
//! one row per 20 ms tick, floats serialized with 9 significant digits.
//! Manifest CSV: header `session_index,calendar_day,path` with paths resolved
//! relative to the manifest's directory.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::stats::percentile_linear;
use crate::util::fmt_f64;

pub const TICK_MS: u32 = 20;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("data row {row}: expected {expected} feature columns, found {found}")]
    RowLength { row: usize, expected: usize, found: usize },
    #[error("data row {row}: {detail}")]
    BadValue { row: usize, detail: String },
    #[error("data row {row}: tick_ms not strictly increasing by {TICK_MS} within block")]
    NonMonotoneTick { row: usize },
    #[error("data row {row}: block {block} reappears after a different block")]
    BlockReappears { row: usize, block: u32 },
    #[error("session has no samples")]
    EmptySession,
    #[error("degenerate block: z-scoring needs at least 2 rows, found {rows}")]
    DegenerateBlock { rows: usize },
    #[error("session {session} not found")]
    UnknownSession { session: u32 },
    #[error("session {session} has {blocks} blocks; test sessions need at least 5")]
    IneligibleSession { session: u32, blocks: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// One 20 ms tick: a neural feature vector plus its cursor-to-target label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub label: [f64; 2],
    pub block_id: u32,
    pub tick_ms: u32,
}

/// An ordered list of samples sharing a block id.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub block_id: u32,
    pub samples: Vec<LabeledSample>,
}

/// One recording session: ordered blocks plus normalization bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    pub session_index: u32,
    pub calendar_day: i64,
    pub blocks: Vec<Block>,
    pub feature_count: usize,
    /// Divisor applied to labels by `normalize_labels`; 1.0 while raw.
    pub label_scale: f64,
}

impl SessionData {
    pub fn sample_count(&self) -> usize {
        self.blocks.iter().map(|b| b.samples.len()).sum()
    }

    pub fn block(&self, block_id: u32) -> Option<&Block> {
        self.blocks.iter().find(|b| b.block_id == block_id)
    }

    pub fn samples(&self) -> impl Iterator<Item = &LabeledSample> {
        self.blocks.iter().flat_map(|b| b.samples.iter())
    }
}

/// A (session, block) reference used by data splits and index builders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRef {
    pub session_index: u32,
    pub block_id: u32,
}

/// Train / validation / test block assignment for one test session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<BlockRef>,
    pub validation: Vec<BlockRef>,
    pub test: Vec<BlockRef>,
}

/// Reads a session file. Features come back raw: z-scoring and label
/// normalization are explicit pipeline steps, not side effects of loading.
pub fn load_session(path: &Path) -> Result<SessionData, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_session(&text)
}

pub fn parse_session(text: &str) -> Result<SessionData, DataError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::MalformedHeader("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5
        || cols[0] != "block_id"
        || cols[1] != "tick_ms"
        || cols[2] != "label_dx"
        || cols[3] != "label_dy"
    {
        return Err(DataError::MalformedHeader(format!(
            "expected `block_id,tick_ms,label_dx,label_dy,f0,...`, got `{}`",
            header.chars().take(60).collect::<String>()
        )));
    }
    let feature_count = cols.len() - 4;
    for (i, name) in cols[4..].iter().enumerate() {
        if *name != format!("f{i}") {
            return Err(DataError::MalformedHeader(format!(
                "feature column {} named `{}`, expected `f{}`",
                i + 4,
                name,
                i
            )));
        }
    }

    let mut blocks: Vec<Block> = Vec::new();
    let mut seen_blocks: Vec<u32> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1; // 1-based data row, excluding the header
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let block_id: u32 = fields
            .next()
            .ok_or(DataError::RowLength { row, expected: feature_count, found: 0 })?
            .parse()
            .map_err(|e| DataError::BadValue { row, detail: format!("block_id: {e}") })?;
        let tick_ms: u32 = fields
            .next()
            .ok_or(DataError::RowLength { row, expected: feature_count, found: 0 })?
            .parse()
            .map_err(|e| DataError::BadValue { row, detail: format!("tick_ms: {e}") })?;
        if tick_ms % TICK_MS != 0 {
            return Err(DataError::BadValue {
                row,
                detail: format!("tick_ms {tick_ms} is not a multiple of {TICK_MS}"),
            });
        }
        let mut label = [0.0f64; 2];
        for (slot, name) in label.iter_mut().zip(["label_dx", "label_dy"]) {
            let raw = fields
                .next()
                .ok_or(DataError::RowLength { row, expected: feature_count, found: 0 })?;
            *slot = raw
                .parse()
                .map_err(|e| DataError::BadValue { row, detail: format!("{name}: {e}") })?;
            if !slot.is_finite() {
                return Err(DataError::BadValue { row, detail: format!("{name} not finite") });
            }
        }
        let mut features = Vec::with_capacity(feature_count);
        for raw in fields {
            let v: f64 = raw
                .parse()
                .map_err(|e| DataError::BadValue { row, detail: format!("feature: {e}") })?;
            if !v.is_finite() {
                return Err(DataError::BadValue { row, detail: "feature not finite".into() });
            }
            features.push(v);
        }
        if features.len() != feature_count {
            return Err(DataError::RowLength { row, expected: feature_count, found: features.len() });
        }

        let start_new_block = match blocks.last() {
            Some(b) => b.block_id != block_id,
            None => true,
        };
        if start_new_block {
            if seen_blocks.contains(&block_id) {
                return Err(DataError::BlockReappears { row, block: block_id });
            }
            seen_blocks.push(block_id);
            blocks.push(Block { block_id, samples: Vec::new() });
        } else if let Some(prev) = blocks.last().and_then(|b| b.samples.last()) {
            if tick_ms != prev.tick_ms + TICK_MS {
                return Err(DataError::NonMonotoneTick { row });
            }
        }
        blocks
            .last_mut()
            .expect("block pushed above")
            .samples
            .push(LabeledSample { features, label, block_id, tick_ms });
    }

    if blocks.is_empty() {
        return Err(DataError::EmptySession);
    }
    Ok(SessionData {
        session_index: 0,
        calendar_day: 0,
        blocks,
        feature_count,
        label_scale: 1.0,
    })
}

/// Writes the canonical session CSV; `load_session` then `write_session`
/// reproduces canonical files byte for byte.
pub fn write_session(session: &SessionData, path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    write_session_to(session, &mut w).map_err(|e| io_err(path, e))
}

fn write_session_to<W: Write>(session: &SessionData, w: &mut W) -> std::io::Result<()> {
    let mut header = String::from("block_id,tick_ms,label_dx,label_dy");
    for i in 0..session.feature_count {
        let _ = write!(header, ",f{i}");
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for block in &session.blocks {
        for s in &block.samples {
            line.clear();
            let _ = write!(
                line,
                "{},{},{},{}",
                s.block_id,
                s.tick_ms,
                fmt_f64(s.label[0]),
                fmt_f64(s.label[1])
            );
            for f in &s.features {
                line.push(',');
                line.push_str(&fmt_f64(*f));
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

pub fn session_to_string(session: &SessionData) -> String {
    let mut buf = Vec::new();
    write_session_to(session, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// One manifest row: where a session lives and when it was recorded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub session_index: u32,
    pub calendar_day: i64,
    pub path: String,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>, DataError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| DataError::MalformedHeader("empty manifest".into()))?;
    if header != "session_index,calendar_day,path" {
        return Err(DataError::MalformedHeader(format!(
            "expected `session_index,calendar_day,path`, got `{header}`"
        )));
    }
    let mut entries = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.splitn(3, ',').collect();
        if parts.len() != 3 {
            return Err(DataError::BadValue { row, detail: "manifest row needs 3 fields".into() });
        }
        entries.push(ManifestEntry {
            session_index: parts[0]
                .parse()
                .map_err(|e| DataError::BadValue { row, detail: format!("session_index: {e}") })?,
            calendar_day: parts[1]
                .parse()
                .map_err(|e| DataError::BadValue { row, detail: format!("calendar_day: {e}") })?,
            path: parts[2].to_string(),
        });
    }
    Ok(entries)
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<(), DataError> {
    let mut out = String::from("session_index,calendar_day,path\n");
    for e in entries {
        let _ = writeln!(out, "{},{},{}", e.session_index, e.calendar_day, e.path);
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

/// Loads every session listed in a manifest, stamping each with its
/// session_index and calendar_day. Relative paths resolve against the
/// manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Vec<SessionData>, DataError> {
    let entries = load_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut sessions = Vec::with_capacity(entries.len());
    for e in &entries {
        let p = base.join(&e.path);
        let mut s = load_session(&p)?;
        s.session_index = e.session_index;
        s.calendar_day = e.calendar_day;
        sessions.push(s);
    }
    sessions.sort_by_key(|s| s.session_index);
    Ok(sessions)
}

/// Z-scores one block's feature matrix (rows = ticks, columns = channels).
///
/// Population (divide-by-n) standard deviation; zero-variance columns map to
/// all-zeros so the channel count stays aligned.
pub fn zscore_block(rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, DataError> {
    if rows.len() < 2 {
        return Err(DataError::DegenerateBlock { rows: rows.len() });
    }
    let n = rows.len();
    let cols = rows[0].len();
    let mut mean = vec![0.0; cols];
    for row in rows {
        debug_assert_eq!(row.len(), cols);
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = vec![0.0; cols];
    for row in rows {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let inv_std: Vec<f64> = var
        .iter()
        .zip(&mean)
        .map(|(&s, &m)| {
            let std = (s / n as f64).sqrt();
            if std <= 1e-12 * (1.0 + m.abs()) {
                0.0
            } else {
                1.0 / std
            }
        })
        .collect();
    Ok(rows
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&inv_std)
                .map(|((v, m), is)| (v - m) * is)
                .collect()
        })
        .collect())
}

/// Z-scores every block of a session in place.
pub fn zscore_session(session: &mut SessionData) -> Result<(), DataError> {
    for block in &mut session.blocks {
        if block.samples.len() < 2 {
            return Err(DataError::DegenerateBlock { rows: block.samples.len() });
        }
        let rows: Vec<Vec<f64>> = block.samples.iter().map(|s| s.features.clone()).collect();
        let scored = zscore_block(&rows)?;
        for (sample, row) in block.samples.iter_mut().zip(scored) {
            sample.features = row;
        }
    }
    Ok(())
}

/// Divides every label by the 99th percentile of the session's pooled
/// absolute label components and records the divisor in `label_scale`.
/// All-zero labels pass through unchanged with scale 1.
pub fn normalize_labels(mut session: SessionData) -> Result<SessionData, DataError> {
    if session.sample_count() == 0 {
        return Err(DataError::EmptySession);
    }
    let comps: Vec<f64> = session
        .samples()
        .flat_map(|s| s.label.iter().map(|v| v.abs()))
        .collect();
    let scale = percentile_linear(&comps, 99.0);
    if scale <= 0.0 {
        session.label_scale = 1.0;
        return Ok(session);
    }
    for block in &mut session.blocks {
        for s in &mut block.samples {
            s.label[0] /= scale;
            s.label[1] /= scale;
        }
    }
    session.label_scale = scale;
    Ok(session)
}

/// Applies per-block feature z-scoring and per-session label normalization to
/// every session; this is the standard preparation step before any fitting or
/// index building.
pub fn normalize_dataset(sessions: Vec<SessionData>) -> Result<Vec<SessionData>, DataError> {
    sessions
        .into_iter()
        .map(|mut s| {
            zscore_session(&mut s)?;
            normalize_labels(s)
        })
        .collect()
}

/// Builds the block split for one test session.
///
/// Train: all test-session blocks except the last four, plus every block of
/// the `d` most recent prior sessions (clipped to what exists).
/// Validation: blocks b-3 and b-2. Test: blocks b-1 and b.
pub fn make_split(
    sessions: &[SessionData],
    test_session: u32,
    d: usize,
) -> Result<DataSplit, DataError> {
    let test = sessions
        .iter()
        .find(|s| s.session_index == test_session)
        .ok_or(DataError::UnknownSession { session: test_session })?;
    let b = test.blocks.len();
    if b < 5 {
        return Err(DataError::IneligibleSession { session: test_session, blocks: b });
    }

    let mut train: Vec<BlockRef> = Vec::new();
    let mut prior: Vec<&SessionData> = sessions
        .iter()
        .filter(|s| s.session_index < test_session)
        .collect();
    prior.sort_by_key(|s| s.session_index);
    let keep = prior.len().saturating_sub(d);
    for s in &prior[keep..] {
        for blk in &s.blocks {
            train.push(BlockRef { session_index: s.session_index, block_id: blk.block_id });
        }
    }
    let refs: Vec<BlockRef> = test
        .blocks
        .iter()
        .map(|blk| BlockRef { session_index: test_session, block_id: blk.block_id })
        .collect();
    train.extend_from_slice(&refs[..b - 4]);
    let validation = refs[b - 4..b - 2].to_vec();
    let test_refs = refs[b - 2..].to_vec();
    Ok(DataSplit { train, validation, test: test_refs })
}

/// Resolves block references to their samples, in reference order.
pub fn gather<'a>(
    sessions: &'a [SessionData],
    refs: &[BlockRef],
) -> Result<Vec<&'a LabeledSample>, DataError> {
    let mut out = Vec::new();
    for r in refs {
        let session = sessions
            .iter()
            .find(|s| s.session_index == r.session_index)
            .ok_or(DataError::UnknownSession { session: r.session_index })?;
        let block = session
            .block(r.block_id)
            .ok_or(DataError::UnknownSession { session: r.session_index })?;
        out.extend(block.samples.iter());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_session(blocks: usize, ticks: usize, features: usize) -> SessionData {
        let mut out = Vec::new();
        for b in 0..blocks {
            let block_id = (b + 1) as u32;
            let samples = (0..ticks)
                .map(|t| LabeledSample {
                    features: (0..features)
                        .map(|f| ((b * 31 + t * 7 + f * 3) % 17) as f64 * 0.25 - 2.0)
                        .collect(),
                    label: [
                        ((t * 13 + b) % 9) as f64 * 0.2 - 0.8,
                        ((t * 5 + b * 2) % 11) as f64 * 0.15 - 0.7,
                    ],
                    block_id,
                    tick_ms: (t as u32) * TICK_MS,
                })
                .collect();
            out.push(Block { block_id, samples });
        }
        SessionData {
            session_index: 0,
            calendar_day: 0,
            blocks: out,
            feature_count: features,
            label_scale: 1.0,
        }
    }

    #[test]
    fn roundtrip_two_block_file() {
        let session = toy_session(2, 4, 3);
        let text = session_to_string(&session);
        let parsed = parse_session(&text).unwrap();
        assert_eq!(parsed.blocks.len(), 2);
        assert_eq!(parsed.feature_count, 3);
        // byte-identical round trip for canonical files
        assert_eq!(session_to_string(&parsed), text);
    }

    #[test]
    fn short_row_cites_row_number() {
        let session = toy_session(1, 8, 4);
        let mut text = session_to_string(&session);
        // chop the last field off data row 7
        let lines: Vec<&str> = text.lines().collect();
        let mut row7 = lines[7].to_string();
        row7.truncate(row7.rfind(',').unwrap());
        let mut mutated: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        mutated[7] = row7;
        text = mutated.join("\n");
        text.push('\n');
        match parse_session(&text) {
            Err(DataError::RowLength { row, expected, found }) => {
                assert_eq!(row, 7);
                assert_eq!(expected, 4);
                assert_eq!(found, 3);
            }
            other => panic!("expected RowLength error, got {other:?}"),
        }
    }

    #[test]
    fn non_monotone_tick_rejected() {
        let mut session = toy_session(1, 3, 2);
        session.blocks[0].samples[2].tick_ms = 20; // repeats the previous tick
        let text = session_to_string(&session);
        match parse_session(&text) {
            Err(DataError::NonMonotoneTick { row }) => assert_eq!(row, 3),
            other => panic!("expected NonMonotoneTick, got {other:?}"),
        }
    }

    #[test]
    fn reappearing_block_rejected() {
        let session = toy_session(2, 2, 2);
        let mut text = session_to_string(&session);
        let again = session_to_string(&toy_session(1, 2, 2));
        let data_row = again.lines().nth(1).unwrap();
        text.push_str(data_row);
        text.push('\n');
        assert!(matches!(parse_session(&text), Err(DataError::BlockReappears { block: 1, .. })));
    }

    #[test]
    fn zscore_hand_computed_column() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let z = zscore_block(&rows).unwrap();
        // population std of {1,2,3} is sqrt(2/3)
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z[0][0] + expect).abs() < 1e-5);
        assert!((z[1][0]).abs() < 1e-12);
        assert!((z[2][0] - expect).abs() < 1e-5);
        assert!((z[2][0] - 1.22474487).abs() < 1e-5);
    }

    #[test]
    fn zscore_zero_variance_column() {
        let rows = vec![vec![5.0, 1.0], vec![5.0, 2.0], vec![5.0, 3.0]];
        let z = zscore_block(&rows).unwrap();
        for row in &z {
            assert_eq!(row[0], 0.0);
        }
    }

    #[test]
    fn zscore_idempotent() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| vec![(i as f64 * 0.7).sin() * 3.0 + 1.0, i as f64])
            .collect();
        let once = zscore_block(&rows).unwrap();
        let twice = zscore_block(&once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zscore_degenerate_block() {
        assert!(matches!(
            zscore_block(&[vec![1.0]]),
            Err(DataError::DegenerateBlock { rows: 1 })
        ));
    }

    #[test]
    fn normalize_all_zero_labels() {
        let mut session = toy_session(1, 5, 2);
        for s in &mut session.blocks[0].samples {
            s.label = [0.0, 0.0];
        }
        let out = normalize_labels(session).unwrap();
        assert_eq!(out.label_scale, 1.0);
        assert!(out.samples().all(|s| s.label == [0.0, 0.0]));
    }

    #[test]
    fn normalize_keeps_99_percent_within_unit_range() {
        // 100 samples whose component magnitudes are 1..200
        let mut session = toy_session(1, 100, 1);
        for (i, s) in session.blocks[0].samples.iter_mut().enumerate() {
            let a = (2 * i + 1) as f64;
            let b = (2 * i + 2) as f64;
            s.label = [if i % 2 == 0 { a } else { -a }, b];
        }
        let out = normalize_labels(session).unwrap();
        let comps: Vec<f64> = out
            .samples()
            .flat_map(|s| s.label.iter().map(|v| v.abs()))
            .collect();
        let within = comps.iter().filter(|v| **v <= 1.0).count();
        assert!(within as f64 / comps.len() as f64 >= 0.99);
    }

    #[test]
    fn normalize_single_sample_matches_percentile_oracle() {
        let mut session = toy_session(1, 2, 1);
        session.blocks[0].samples.truncate(1);
        session.blocks[0].samples[0].label = [3.0, -4.0];
        let out = normalize_labels(session).unwrap();
        // brute-force oracle over {3, 4}
        let rank = 0.99 * 1.0;
        let expect_scale = 3.0 + rank * (4.0 - 3.0);
        assert!((out.label_scale - expect_scale).abs() < 1e-12);
        let s = &out.blocks[0].samples[0];
        assert!((s.label[0] - 3.0 / expect_scale).abs() < 1e-12);
        assert!((s.label[1] + 4.0 / expect_scale).abs() < 1e-12);
    }

    #[test]
    fn normalize_preserves_direction() {
        let session = toy_session(2, 20, 1);
        let before: Vec<[f64; 2]> = session.samples().map(|s| s.label).collect();
        let out = normalize_labels(session).unwrap();
        for (b, a) in before.iter().zip(out.samples()) {
            // scaled label is a nonnegative multiple of the original
            let cross = b[0] * a.label[1] - b[1] * a.label[0];
            let dotp = b[0] * a.label[0] + b[1] * a.label[1];
            assert!(cross.abs() < 1e-9);
            assert!(dotp >= 0.0);
        }
    }

    fn sess_with_index(index: u32, day: i64, blocks: usize) -> SessionData {
        let mut s = toy_session(blocks, 3, 2);
        s.session_index = index;
        s.calendar_day = day;
        s
    }

    #[test]
    fn split_six_blocks_d0() {
        let sessions = vec![sess_with_index(3, 10, 6)];
        let split = make_split(&sessions, 3, 0).unwrap();
        let ids = |refs: &[BlockRef]| refs.iter().map(|r| r.block_id).collect::<Vec<_>>();
        assert_eq!(ids(&split.train), vec![1, 2]);
        assert_eq!(ids(&split.validation), vec![3, 4]);
        assert_eq!(ids(&split.test), vec![5, 6]);
    }

    #[test]
    fn split_d1_pulls_entire_prior_session() {
        let sessions = vec![
            sess_with_index(1, 0, 4),
            sess_with_index(2, 5, 3),
            sess_with_index(3, 10, 6),
        ];
        let split = make_split(&sessions, 3, 1).unwrap();
        let prior: Vec<BlockRef> = split
            .train
            .iter()
            .copied()
            .filter(|r| r.session_index == 2)
            .collect();
        assert_eq!(prior.len(), 3); // every block of the most recent prior session
        assert!(!split.train.iter().any(|r| r.session_index == 1));
        // d larger than available priors clips
        let split = make_split(&sessions, 3, 10).unwrap();
        assert_eq!(
            split.train.iter().filter(|r| r.session_index != 3).count(),
            7
        );
    }

    #[test]
    fn split_rejects_short_session() {
        let sessions = vec![sess_with_index(1, 0, 4)];
        assert!(matches!(
            make_split(&sessions, 1, 0),
            Err(DataError::IneligibleSession { session: 1, blocks: 4 })
        ));
    }

    #[test]
    fn split_parts_are_disjoint_and_cover() {
        let sessions = vec![sess_with_index(1, 0, 3), sess_with_index(2, 4, 7)];
        let split = make_split(&sessions, 2, 1).unwrap();
        let mut all: Vec<BlockRef> = split
            .train
            .iter()
            .chain(&split.validation)
            .chain(&split.test)
            .copied()
            .collect();
        let total = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), total, "splits overlap");
        assert_eq!(total, 3 + 7);
    }
}
