//! On-disk formats.
//!
//! * FMAT matrices: `b"FMAT"`, `u32` LE rows, `u32` LE cols, then
//!   `rows * cols` little-endian `f32` values in row-major order.
//! * Labels CSV: `index,label` with 0-based class ids.
//! * Weights CSV: `source_id,alpha,scheme,param`.
//! * Scores CSV: `source_id,metric,representation,value,degenerate`.
//! * Model checkpoints: a directory holding `model.json` plus one FMAT file
//!   per weight matrix and bias vector.
//! * Universes, task specs and manifests: JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Activation, Dense, FeatureLayer, Mlp};
use crate::numerics::Matrix;
use crate::similarity::{Metric, RepresentationKind, SimilarityScore};
use crate::weighting::{Scheme, SourceWeights};

pub const FMAT_MAGIC: [u8; 4] = *b"FMAT";
const FMAT_HEADER: usize = 12;

/// Encodes a matrix as FMAT bytes. Values are narrowed to `f32`.
pub fn encode_fmat(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::InvalidArgument("too many rows for FMAT".into()))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::InvalidArgument("too many cols for FMAT".into()))?;
    let mut out = Vec::with_capacity(FMAT_HEADER + 4 * m.as_slice().len());
    out.extend_from_slice(&FMAT_MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.as_slice() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::NonFinite("matrix value out of f32 range"));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    Ok(out)
}

/// Decodes FMAT bytes; `path` only labels errors.
pub fn decode_fmat(bytes: &[u8], path: &Path) -> Result<Matrix> {
    if bytes.len() < 4 || bytes[..4] != FMAT_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < FMAT_HEADER {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected: FMAT_HEADER as u64,
            found: bytes.len() as u64,
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let payload = (rows as u64)
        .checked_mul(cols as u64)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or(Error::SizeOverflow { rows, cols })?;
    let found = (bytes.len() - FMAT_HEADER) as u64;
    if found < payload {
        return Err(Error::TruncatedPayload { path: path.to_path_buf(), expected: payload, found });
    }
    if found > payload {
        return Err(Error::Format { path: path.to_path_buf(), reason: format!("{} trailing bytes", found - payload) });
    }
    let data: Vec<f64> = bytes[FMAT_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Matrix::new(rows as usize, cols as usize, data).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn write_fmat(path: &Path, m: &Matrix) -> Result<()> {
    write_bytes(path, &encode_fmat(m)?)
}

pub fn read_fmat(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fmat(&bytes, path)
}

/// Rounds every value through `f32`, i.e. what a write/read cycle yields.
pub fn round_f32(m: &Matrix) -> Matrix {
    m.map(|v| v as f32 as f64)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

fn csv_bytes<F>(header: &[&str], fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    fill(&mut w)?;
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn csv_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format { path: path.to_path_buf(), reason: format!("{other:?}") },
    })?;
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(Error::Format { path: path.to_path_buf(), reason: format!("expected header {}", header.join(",")) });
    }
    r.records().map(|rec| rec.map_err(Error::from)).collect()
}

fn parse_field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::Format { path: path.to_path_buf(), reason: format!("bad field {i} in {rec:?}") })
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let bytes = csv_bytes(&["index", "label"], |w| {
        for (i, l) in labels.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        Ok(())
    })?;
    write_bytes(path, &bytes)
}

/// Reads `index,label`; indices must be `0..n` in order.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let rows = csv_rows(path, &["index", "label"])?;
    let mut labels = Vec::with_capacity(rows.len());
    for (expect, rec) in rows.iter().enumerate() {
        let idx: usize = parse_field(path, rec, 0)?;
        if idx != expect {
            return Err(Error::Format { path: path.to_path_buf(), reason: format!("index {idx} at row {expect}") });
        }
        labels.push(parse_field(path, rec, 1)?);
    }
    Ok(labels)
}

pub fn write_weights(path: &Path, ids: &[String], w: &SourceWeights) -> Result<()> {
    if ids.len() != w.len() {
        return Err(Error::LengthMismatch { left: ids.len(), right: w.len() });
    }
    let scheme = w.scheme();
    let bytes = csv_bytes(&["source_id", "alpha", "scheme", "param"], |wr| {
        for (id, a) in ids.iter().zip(w.alphas()) {
            wr.write_record([id.clone(), a.to_string(), scheme.name().to_string(), scheme.param()])?;
        }
        Ok(())
    })?;
    write_bytes(path, &bytes)
}

pub fn read_weights(path: &Path) -> Result<(Vec<String>, SourceWeights)> {
    let rows = csv_rows(path, &["source_id", "alpha", "scheme", "param"])?;
    let first = rows.first().ok_or_else(|| Error::Format { path: path.to_path_buf(), reason: "no rows".into() })?;
    let scheme = Scheme::from_parts(&first[2], &first[3])?;
    let mut ids = Vec::new();
    let mut alphas = Vec::new();
    for rec in &rows {
        ids.push(rec[0].to_string());
        alphas.push(parse_field(path, rec, 1)?);
    }
    Ok((ids, SourceWeights::new(alphas, scheme)?))
}

pub fn scores_csv(scores: &[SimilarityScore]) -> Result<Vec<u8>> {
    csv_bytes(&["source_id", "metric", "representation", "value", "degenerate"], |w| {
        for s in scores {
            w.write_record([
                s.source_id.clone(),
                s.metric.to_string(),
                s.representation.to_string(),
                s.value.to_string(),
                s.degenerate.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn write_scores(path: &Path, scores: &[SimilarityScore]) -> Result<()> {
    write_bytes(path, &scores_csv(scores)?)
}

pub fn read_scores(path: &Path) -> Result<Vec<SimilarityScore>> {
    let rows = csv_rows(path, &["source_id", "metric", "representation", "value", "degenerate"])?;
    rows.iter()
        .map(|rec| {
            Ok(SimilarityScore {
                source_id: rec[0].to_string(),
                metric: rec[1].parse::<Metric>()?,
                representation: rec[2].parse::<RepresentationKind>()?,
                value: parse_field(path, rec, 3)?,
                degenerate: parse_field(path, rec, 4)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerEntry {
    activation: Activation,
    weight: String,
    bias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadEntry {
    name: String,
    weight: String,
    bias: String,
}

/// `model.json` inside a checkpoint directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    format: String,
    version: u32,
    input_dim: usize,
    layers: Vec<LayerEntry>,
    heads: Vec<HeadEntry>,
}

const CHECKPOINT_FORMAT: &str = "mlp-fmat";
const CHECKPOINT_VERSION: u32 = 1;

fn bias_matrix(b: &[f64]) -> Matrix {
    Matrix::new(1, b.len(), b.to_vec()).expect("bias is non-empty and finite")
}

fn write_dense(dir: &Path, stem: &str, d: &Dense) -> Result<(String, String)> {
    let (w, b) = (format!("{stem}.weight.fmat"), format!("{stem}.bias.fmat"));
    write_fmat(&dir.join(&w), &d.weight)?;
    write_fmat(&dir.join(&b), &bias_matrix(&d.bias))?;
    Ok((w, b))
}

fn read_dense(dir: &Path, weight: &str, bias: &str) -> Result<Dense> {
    let w = read_fmat(&dir.join(weight))?;
    let b = read_fmat(&dir.join(bias))?;
    if b.rows() != 1 {
        return Err(Error::Format { path: dir.join(bias), reason: "bias must be a single row".into() });
    }
    Ok(Dense { weight: w, bias: b.into_vec() })
}

/// Writes `model.json` and the parameter files into `dir`.
pub fn save_checkpoint(dir: &Path, model: &Mlp) -> Result<()> {
    let mut layers = Vec::new();
    for (i, l) in model.layers().iter().enumerate() {
        let (weight, bias) = write_dense(dir, &format!("layer{i}"), &l.dense)?;
        layers.push(LayerEntry { activation: l.activation, weight, bias });
    }
    let mut heads = Vec::new();
    for (i, (name, d)) in model.heads().iter().enumerate() {
        let (weight, bias) = write_dense(dir, &format!("head{i}"), d)?;
        heads.push(HeadEntry { name: name.clone(), weight, bias });
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        input_dim: model.input_dim(),
        layers,
        heads,
    };
    write_json(&dir.join("model.json"), &header)
}

pub fn load_checkpoint(dir: &Path) -> Result<Mlp> {
    let path = dir.join("model.json");
    let header: CheckpointHeader = read_json(&path)?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path,
            reason: format!("unsupported checkpoint {} v{}", header.format, header.version),
        });
    }
    let layers = header
        .layers
        .iter()
        .map(|l| Ok(FeatureLayer { dense: read_dense(dir, &l.weight, &l.bias)?, activation: l.activation }))
        .collect::<Result<Vec<_>>>()?;
    let heads = header
        .heads
        .iter()
        .map(|h| Ok((h.name.clone(), read_dense(dir, &h.weight, &h.bias)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Mlp::from_parts(header.input_dim, layers, heads)
}

/// A model as it comes back from [`save_checkpoint`] + [`load_checkpoint`].
pub fn round_model_f32(model: &Mlp) -> Mlp {
    let round = |d: &Dense| Dense {
        weight: round_f32(&d.weight),
        bias: d.bias.iter().map(|&v| v as f32 as f64).collect(),
    };
    let layers = model
        .layers()
        .iter()
        .map(|l| FeatureLayer { dense: round(&l.dense), activation: l.activation })
        .collect();
    let heads = model.heads().iter().map(|(k, d)| (k.clone(), round(d))).collect();
    Mlp::from_parts(model.input_dim(), layers, heads).expect("same shapes")
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Per-stage record written next to a stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    /// The full effective configuration, so the stage can be re-run from
    /// this file alone.
    pub config: serde_json::Value,
    /// Input files with their SHA-256, relative to the run directory.
    pub inputs: BTreeMap<String, String>,
    /// Output files with their SHA-256, relative to the run directory.
    pub outputs: BTreeMap<String, String>,
}

/// Hashes each listed file (relative to `root`).
pub fn file_digests(root: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for rel in files {
        let full = root.join(rel);
        let bytes = fs::read(&full).map_err(|e| Error::io(&full, e))?;
        out.insert(rel.to_string_lossy().replace('\\', "/"), sha256_hex(&bytes));
    }
    Ok(out)
}
