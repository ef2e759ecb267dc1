//! Artifact files and their provenance sidecars. Every artifact `foo.ext`
//! gets a `foo.ext.meta.json` next to it recording the config digest it was
//! built under; stages verify the recorded digest against what the current
//! config implies before consuming anything.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;
use crate::core::decide::{AggregateLabel, PerRunSummary, Strategy};
use crate::core::prompts::PromptId;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {reason}")]
    BadLine { path: PathBuf, line: usize, reason: String },
    #[error("{path}: {reason}")]
    BadFile { path: PathBuf, reason: String },
    #[error("{path}: schema version {found}, this build reads {expected}")]
    SchemaVersion { path: PathBuf, found: u32, expected: u32 },
}

/// Provenance record stored beside each artifact. `config_digest` chains
/// the producing configuration to the parent artifact; `content_digest` is
/// a plain hash of the artifact bytes, which is what consumers of the root
/// artifact chain from (one-off flag overrides at synthesis time would
/// otherwise be unknowable downstream). `basis` says whether the config
/// digest is derivable from configuration alone or also covers external
/// input bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub artifact: String,
    pub config_digest: String,
    pub content_digest: String,
    pub basis: DigestBasis,
    pub schema_version: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DigestBasis {
    Config,
    External,
}

fn meta_path(artifact: &Path) -> PathBuf {
    let mut name = artifact
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".meta.json");
    artifact.with_file_name(name)
}

fn io_err(path: &Path, source: std::io::Error) -> ArtifactError {
    ArtifactError::Io { path: path.to_path_buf(), source }
}

pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let out = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Call after the artifact itself is written: the sidecar hashes the bytes
/// on disk.
pub fn write_meta(artifact: &Path, digest: &str, basis: DigestBasis) -> Result<(), ArtifactError> {
    let bytes = fs::read(artifact).map_err(|e| io_err(artifact, e))?;
    let meta = ArtifactMeta {
        artifact: artifact
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config_digest: digest.to_string(),
        content_digest: content_hash(&bytes),
        basis,
        schema_version: SCHEMA_VERSION,
    };
    let path = meta_path(artifact);
    let mut text = serde_json::to_string_pretty(&meta)
        .map_err(|e| ArtifactError::BadFile { path: path.clone(), reason: e.to_string() })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn read_meta(artifact: &Path) -> Result<ArtifactMeta, ConfigError> {
    let path = meta_path(artifact);
    let text = fs::read_to_string(&path).map_err(|_| ConfigError::MissingProvenance {
        artifact: artifact.display().to_string(),
    })?;
    let meta: ArtifactMeta =
        serde_json::from_str(&text).map_err(|_| ConfigError::MissingProvenance {
            artifact: artifact.display().to_string(),
        })?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(ConfigError::Invalid(format!(
            "{}: schema version {} unsupported",
            path.display(),
            meta.schema_version
        )));
    }
    Ok(meta)
}

/// The resume guard. Always checks the artifact bytes against the recorded
/// content hash; additionally checks the recorded config digest against
/// `expected` when the current configuration can recompute it (every
/// artifact below the record set). Returns the full sidecar so callers can
/// chain from either digest.
pub fn verify_meta(artifact: &Path, expected: Option<&str>) -> Result<ArtifactMeta, ConfigError> {
    let meta = read_meta(artifact)?;
    let bytes = fs::read(artifact).map_err(|_| ConfigError::MissingProvenance {
        artifact: artifact.display().to_string(),
    })?;
    if content_hash(&bytes) != meta.content_digest {
        return Err(ConfigError::ArtifactModified { artifact: artifact.display().to_string() });
    }
    if let Some(want) = expected {
        if meta.config_digest != want {
            return Err(ConfigError::DigestMismatch {
                artifact: artifact.display().to_string(),
                expected: want.to_string(),
                found: meta.config_digest,
            });
        }
    }
    Ok(meta)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ArtifactError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| ArtifactError::BadFile { path: path.to_path_buf(), reason: e.to_string() })?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&out).map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| ArtifactError::BadLine {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ArtifactError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| ArtifactError::BadFile { path: path.to_path_buf(), reason: e.to_string() })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| ArtifactError::BadFile { path: path.to_path_buf(), reason: e.to_string() })
}

/// The split manifest stores pseudonyms, not record copies: membership is
/// the decision worth freezing, the text lives in records.jsonl.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fraction: f64,
    pub test_pseudonyms: Vec<String>,
    /// Training survivors after majority-class downsampling. Equal to the
    /// full training set when balancing is off.
    pub balanced_train_pseudonyms: Vec<String>,
}

/// One aggregated verdict, with the per-run evidence it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub record: String,
    pub strategy: Strategy,
    pub label: AggregateLabel,
    pub chosen_run: Option<u32>,
    pub failsafe_applied: bool,
    pub per_run: Vec<PerRunSummary>,
}

/// One metrics.csv row. Metric cells are empty when the strategy was
/// degenerate on this slice (every decision abstained, say); the row still
/// appears so the gap is visible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub prompt: PromptId,
    pub strategy: Strategy,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub abstained: u64,
    pub retained_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub prompt: PromptId,
    pub strategy: Strategy,
    /// "exclusion" or "inclusion"; exclusion row first per pair.
    pub truth: String,
    pub predicted_exclusion: u64,
    pub predicted_inclusion: u64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)
            .map_err(|e| ArtifactError::BadFile { path: path.to_path_buf(), reason: e.to_string() })?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ArtifactError::BadFile { path: path.to_path_buf(), reason: e.to_string() })?;
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ArtifactError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    let mut r = csv::Reader::from_reader(text.as_bytes());
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e| ArtifactError::BadLine {
            path: path.to_path_buf(),
            line: i + 2,
            reason: e.to_string(),
        })?);
    }
    Ok(rows)
}
