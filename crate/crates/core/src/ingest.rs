//! Trajectory datasets: JSONL and `VCEM1` binary readers/writers plus a
//! seeded synthetic generator.
//!
//! JSONL: one object per line with keys `id` (string), `embedding` (array of
//! numbers), and optional `losses` (array of numbers) and `difficulty`
//! (number). Blank lines are skipped but still count toward line numbers.
//!
//! `VCEM1`: the 5 ASCII bytes `VCEM1`, `n: u32 LE`, `d: u32 LE`, then `n*d`
//! row-major `f32 LE`. Ids are synthesized as the zero-padded row index
//! (`000000`, `000001`, ...).

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

pub const MATRIX_MAGIC: &[u8; 5] = b"VCEM1";
pub const MATRIX_HEADER_LEN: usize = 13;

/// Number of per-step losses drawn for each synthetic record.
pub const SYNTH_STEPS: usize = 8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed line {0}")]
    MalformedLine(usize),
    #[error("line {line}: embedding has dimension {got}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("non-finite value on line {0}")]
    NonFiniteValue(usize),
    #[error("negative loss on line {0}")]
    NegativeValue(usize),
    #[error("bad magic bytes, expected VCEM1")]
    BadMagic,
    #[error("truncated file: expected {expected} bytes, got {got}")]
    TruncatedFile { expected: u64, got: u64 },
    #[error("trailing bytes: expected {expected} bytes, got {got}")]
    TrailingBytes { expected: u64, got: u64 },
    #[error("non-finite value at row {row}, col {col}")]
    NonFiniteCell { row: usize, col: usize },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
}

pub type Result<T> = std::result::Result<T, IngestError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub embedding: Vec<f64>,
    #[serde(rename = "losses", default, skip_serializing_if = "Option::is_none")]
    pub step_losses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
}

/// Ordered, validated collection of records. Load order is the canonical
/// index used by every downstream module.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<TrajectoryRecord>,
    dim: usize,
}

impl Dataset {
    /// Validates ids, dimensions and values. `dim` is only consulted when
    /// `records` is empty.
    pub fn new(records: Vec<TrajectoryRecord>, dim: usize) -> Result<Self> {
        let dim = records.first().map_or(dim, |r| r.embedding.len());
        let mut seen = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let line = i + 1;
            check_record(r, line, dim)?;
            if !seen.insert(r.id.as_str()) {
                return Err(IngestError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Dataset { records, dim })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[TrajectoryRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &TrajectoryRecord {
        &self.records[i]
    }

    pub fn embedding(&self, i: usize) -> &[f64] {
        &self.records[i].embedding
    }

    pub fn into_records(self) -> Vec<TrajectoryRecord> {
        self.records
    }
}

fn check_record(r: &TrajectoryRecord, line: usize, dim: usize) -> Result<()> {
    if r.id.is_empty() {
        return Err(IngestError::MalformedLine(line));
    }
    if r.embedding.len() != dim {
        return Err(IngestError::DimensionMismatch {
            line,
            expected: dim,
            got: r.embedding.len(),
        });
    }
    if r.embedding.iter().any(|v| !v.is_finite()) {
        return Err(IngestError::NonFiniteValue(line));
    }
    if let Some(losses) = &r.step_losses {
        if losses.is_empty() {
            return Err(IngestError::MalformedLine(line));
        }
        if losses.iter().any(|v| !v.is_finite()) {
            return Err(IngestError::NonFiniteValue(line));
        }
        if losses.iter().any(|&v| v < 0.0) {
            return Err(IngestError::NegativeValue(line));
        }
    }
    if let Some(d) = r.difficulty {
        if !d.is_finite() {
            return Err(IngestError::NonFiniteValue(line));
        }
        if d < 0.0 {
            return Err(IngestError::NegativeValue(line));
        }
    }
    Ok(())
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    read_jsonl(BufReader::new(file))
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Dataset> {
    let mut records: Vec<TrajectoryRecord> = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|_| IngestError::MalformedLine(line_no))?;
        let d = *dim.get_or_insert(rec.embedding.len());
        check_record(&rec, line_no, d)?;
        if !seen.insert(rec.id.clone()) {
            return Err(IngestError::DuplicateId(rec.id));
        }
        records.push(rec);
    }
    Ok(Dataset {
        records,
        dim: dim.unwrap_or(0),
    })
}

pub fn save_jsonl(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_jsonl(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_jsonl(dataset: &Dataset, mut w: impl Write) -> Result<()> {
    for r in &dataset.records {
        serde_json::to_writer(&mut w, r).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_matrix(&fs::read(path)?)
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < MATRIX_MAGIC.len() || &bytes[..MATRIX_MAGIC.len()] != MATRIX_MAGIC {
        return Err(IngestError::BadMagic);
    }
    if bytes.len() < MATRIX_HEADER_LEN {
        return Err(IngestError::TruncatedFile {
            expected: MATRIX_HEADER_LEN as u64,
            got: bytes.len() as u64,
        });
    }
    let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    let expected = MATRIX_HEADER_LEN as u64 + 4 * n as u64 * d as u64;
    let got = bytes.len() as u64;
    if got < expected {
        return Err(IngestError::TruncatedFile { expected, got });
    }
    if got > expected {
        return Err(IngestError::TrailingBytes { expected, got });
    }
    let payload = &bytes[MATRIX_HEADER_LEN..];
    let mut records = Vec::with_capacity(n);
    for row in 0..n {
        let mut embedding = Vec::with_capacity(d);
        for col in 0..d {
            let off = 4 * (row * d + col);
            let v = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(IngestError::NonFiniteCell { row, col });
            }
            embedding.push(f64::from(v));
        }
        records.push(TrajectoryRecord {
            id: matrix_id(row),
            embedding,
            step_losses: None,
            difficulty: None,
        });
    }
    Ok(Dataset { records, dim: d })
}

/// Zero-padded row id used for matrix datasets.
pub fn matrix_id(row: usize) -> String {
    format!("{row:06}")
}

pub fn save_matrix(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_matrix(dataset)?)?;
    Ok(())
}

/// Embeddings are narrowed to `f32`; ids, losses and difficulties are not
/// representable in this format and are dropped.
pub fn encode_matrix(dataset: &Dataset) -> Result<Vec<u8>> {
    let n = u32::try_from(dataset.len())
        .map_err(|_| IngestError::InvalidArg("too many rows for VCEM1".into()))?;
    let d = u32::try_from(dataset.dim)
        .map_err(|_| IngestError::InvalidArg("dimension too large for VCEM1".into()))?;
    let mut out = Vec::with_capacity(MATRIX_HEADER_LEN + 4 * dataset.len() * dataset.dim);
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    for (row, r) in dataset.records.iter().enumerate() {
        for (col, &v) in r.embedding.iter().enumerate() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(IngestError::NonFiniteCell { row, col });
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

/// Deterministic clustered dataset.
///
/// Draw order from `rng::seeded(seed)`: all cluster centers (uniform in
/// `[-10, 10)^d`), then all per-cluster loss levels (uniform in
/// `[0.1, 2.0)`), then per record its embedding (`center + spread * N(0, 1)`
/// per coordinate) followed by its [`SYNTH_STEPS`] losses
/// (`|level + 0.1 * N(0, 1)|`). Record `i` belongs to cluster
/// `i % n_clusters`; its id is [`matrix_id`]`(i)`.
pub fn synth_dataset(
    seed: u64,
    n: usize,
    d: usize,
    n_clusters: usize,
    spread: f64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(IngestError::InvalidArg("n must be >= 1".into()));
    }
    if d == 0 {
        return Err(IngestError::InvalidArg("d must be >= 1".into()));
    }
    if n_clusters == 0 || n_clusters > n {
        return Err(IngestError::InvalidArg(format!(
            "n_clusters must be in [1, {n}], got {n_clusters}"
        )));
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err(IngestError::InvalidArg(format!(
            "spread must be finite and >= 0, got {spread}"
        )));
    }
    let mut rng = rng::seeded(seed);
    let centers: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect())
        .collect();
    let levels: Vec<f64> = (0..n_clusters).map(|_| rng.gen_range(0.1..2.0)).collect();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_clusters;
        let embedding: Vec<f64> = centers[c]
            .iter()
            .map(|&m| {
                let z: f64 = rng.sample(StandardNormal);
                m + spread * z
            })
            .collect();
        let losses: Vec<f64> = (0..SYNTH_STEPS)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (levels[c] + 0.1 * z).abs()
            })
            .collect();
        records.push(TrajectoryRecord {
            id: matrix_id(i),
            embedding,
            step_losses: Some(losses),
            difficulty: None,
        });
    }
    Dataset::new(records, d)
}
