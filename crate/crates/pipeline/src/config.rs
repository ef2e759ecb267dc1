//! Pipeline configuration: one JSON file, environment overrides, then
//! per-command flags, in that precedence order (flags win). Every stage
//! derives a content digest from the config sections it depends on; the
//! digests chain parent to child so a stale upstream artifact is caught
//! before a stage consumes it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::core::decide::Strategy;
use crate::core::inference::InferenceConfig;
use crate::core::mock::MockPolicy;
use crate::core::prompts::PromptId;
use crate::core::stats::Alternative;
use crate::core::synth::SynthConfig;
use crate::core::wire::Dialect;

#[derive(Debug, Clone, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("config {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("environment variable {name}: {reason}")]
    BadEnv { name: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{artifact} was produced under a different configuration (recorded digest {found}, current config implies {expected}); re-run the producing stage or restore the config")]
    DigestMismatch { artifact: String, expected: String, found: String },
    #[error("{artifact} no longer matches its recorded content digest; it was modified or truncated after production")]
    ArtifactModified { artifact: String },
    #[error("{artifact} has no provenance sidecar; re-run the stage that produces it")]
    MissingProvenance { artifact: String },
}

/// Where the backend for the `run` stage lives. `in_process` drives the
/// deterministic model directly and needs no server; `http` talks to
/// whatever `server.url` points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    InProcess,
    Http,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "in_process" => Ok(BackendKind::InProcess),
            "http" => Ok(BackendKind::Http),
            other => Err(format!("unknown backend {other:?}, expected in_process or http")),
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::InProcess => "in_process",
            BackendKind::Http => "http",
        })
    }
}

/// Which half of the split the `run` stage sends to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Test,
    Train,
    All,
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "test" => Ok(Subset::Test),
            "train" => Ok(Subset::Train),
            "all" => Ok(Subset::All),
            other => Err(format!("unknown subset {other:?}, expected test, train or all")),
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Test => "test",
            Subset::Train => "train",
            Subset::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Test fraction per class.
    pub fraction: f64,
    /// Downsample the training majority class after splitting.
    pub balance: bool,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection { fraction: 0.10, balance: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    /// Base URL the http backend talks to.
    pub url: String,
    /// Address `mock-serve` binds to.
    pub bind: String,
    pub dialect: Dialect,
    /// Model name stamped into chat-dialect requests.
    pub model: String,
    /// Worker threads for `mock-serve`.
    pub workers: usize,
    /// Artificial per-request latency, for load-shape experiments.
    pub delay_ms: u64,
}

impl Default for ServerSection {
    fn default() -> Self {
        ServerSection {
            url: "http://127.0.0.1:8077".into(),
            bind: "127.0.0.1:8077".into(),
            dialect: Dialect::Native,
            model: "mock-screener".into(),
            workers: 4,
            delay_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Which strategy's verdicts define correctness in the length study.
    pub strategy: Strategy,
    pub input_alternative: Alternative,
    pub output_alternative: Alternative,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        AnalyzeSection {
            strategy: Strategy::SelfConsistency,
            input_alternative: Alternative::Greater,
            output_alternative: Alternative::Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for the split and downsampling draws. Synthesis and inference
    /// carry their own seeds so the stages stay independently reproducible.
    pub seed: u64,
    pub results_dir: PathBuf,
    pub prompt: PromptId,
    pub strategies: Vec<Strategy>,
    pub split: SplitSection,
    pub synth: SynthConfig,
    pub inference: InferenceConfig,
    pub mock: MockPolicy,
    pub backend: BackendKind,
    pub subset: Subset,
    pub server: ServerSection,
    pub analyze: AnalyzeSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            results_dir: PathBuf::from("results"),
            prompt: PromptId::Sp,
            strategies: Strategy::ALL.to_vec(),
            split: SplitSection::default(),
            synth: SynthConfig::default(),
            inference: InferenceConfig::default(),
            mock: MockPolicy::default(),
            backend: BackendKind::InProcess,
            subset: Subset::Test,
            server: ServerSection::default(),
            analyze: AnalyzeSection::default(),
        }
    }
}

impl PipelineConfig {
    /// File, then environment, in that order. Flags are applied by the
    /// individual commands on top of the result.
    pub fn load(path: Option<&Path>) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Unreadable {
                    path: p.to_path_buf(),
                    reason: e.to_string(),
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Malformed {
                    path: p.to_path_buf(),
                    reason: e.to_string(),
                })?
            }
            None => PipelineConfig::default(),
        };
        cfg.apply_env()?;
        Ok(cfg)
    }

    fn apply_env(&mut self) -> Result<(), ConfigError> {
        fn parsed<T: FromStr>(name: &str) -> Result<Option<T>, ConfigError>
        where
            T::Err: fmt::Display,
        {
            match std::env::var(name) {
                Ok(v) => v.parse().map(Some).map_err(|e: T::Err| ConfigError::BadEnv {
                    name: name.into(),
                    reason: e.to_string(),
                }),
                Err(_) => Ok(None),
            }
        }
        if let Some(v) = parsed::<u64>("HIVSCREEN_SEED")? {
            self.seed = v;
        }
        if let Ok(v) = std::env::var("HIVSCREEN_RESULTS_DIR") {
            self.results_dir = PathBuf::from(v);
        }
        if let Some(v) = parsed::<PromptId>("HIVSCREEN_PROMPT")? {
            self.prompt = v;
        }
        if let Some(v) = parsed::<BackendKind>("HIVSCREEN_BACKEND")? {
            self.backend = v;
        }
        if let Ok(v) = std::env::var("HIVSCREEN_SERVER_URL") {
            self.server.url = v;
        }
        if let Some(v) = parsed::<f64>("HIVSCREEN_P_FLIP")? {
            self.mock.p_flip = v;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.strategies.is_empty() {
            return Err(ConfigError::Invalid("strategies list is empty".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(ConfigError::Invalid(format!("strategy {s} listed twice")));
            }
        }
        if !(self.split.fraction > 0.0 && self.split.fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "split.fraction {} outside (0, 1)",
                self.split.fraction
            )));
        }
        self.inference
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.mock
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Directory holding per-prompt artifacts (runs, decisions, analysis).
    pub fn prompt_dir(&self, prompt: PromptId) -> PathBuf {
        self.results_dir.join(prompt.as_str().to_ascii_lowercase())
    }

    pub fn records_path(&self) -> PathBuf {
        self.results_dir.join("records.jsonl")
    }

    pub fn split_path(&self) -> PathBuf {
        self.results_dir.join("split.json")
    }

    pub fn runs_path(&self, prompt: PromptId) -> PathBuf {
        self.prompt_dir(prompt).join("runs.jsonl")
    }

    pub fn decisions_path(&self, prompt: PromptId) -> PathBuf {
        self.prompt_dir(prompt).join("decisions.jsonl")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.results_dir.join("metrics.csv")
    }

    pub fn confusion_path(&self) -> PathBuf {
        self.results_dir.join("confusion.csv")
    }

    pub fn analysis_path(&self, prompt: PromptId) -> PathBuf {
        self.prompt_dir(prompt).join("analysis.json")
    }

    pub fn scatter_path(&self, prompt: PromptId) -> PathBuf {
        self.prompt_dir(prompt).join("scatter.csv")
    }
}

fn hex_digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Serialization is the canonical form: struct fields serialize in
/// declaration order, so equal configs give equal bytes.
fn json_of<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config sections serialize")
}

pub fn digest_records_synth(synth: &SynthConfig) -> String {
    hex_digest(&[b"records/synth\n", json_of(synth).as_bytes()])
}

/// Ingested corpora hash the raw export bytes; the config cannot predict
/// them, so consumers trust the recorded value.
pub fn digest_records_ingest(table_bytes: &[&[u8]]) -> String {
    let mut parts: Vec<Vec<u8>> = vec![b"records/ingest\n".to_vec()];
    for t in table_bytes {
        parts.push(hex_digest(&[t]).into_bytes());
        parts.push(b"\n".to_vec());
    }
    let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
    hex_digest(&refs)
}

pub fn digest_split(records_digest: &str, seed: u64, split: &SplitSection) -> String {
    hex_digest(&[
        records_digest.as_bytes(),
        b"\nsplit\n",
        json_of(&(seed, split)).as_bytes(),
    ])
}

pub fn digest_runs(split_digest: &str, cfg: &PipelineConfig, prompt: PromptId) -> String {
    let backend = match cfg.backend {
        BackendKind::InProcess => format!("in_process\n{}", json_of(&cfg.mock)),
        BackendKind::Http => {
            format!("http\n{}\n{}", cfg.server.model, json_of(&cfg.server.dialect))
        }
    };
    hex_digest(&[
        split_digest.as_bytes(),
        b"\nrun/",
        prompt.as_str().as_bytes(),
        b"/",
        json_of(&cfg.subset).as_bytes(),
        b"\n",
        json_of(&cfg.inference).as_bytes(),
        b"\n",
        backend.as_bytes(),
    ])
}

pub fn digest_decisions(runs_digest: &str, strategies: &[Strategy]) -> String {
    hex_digest(&[
        runs_digest.as_bytes(),
        b"\naggregate\n",
        json_of(&strategies).as_bytes(),
    ])
}

pub fn digest_metrics(decision_digests: &[String]) -> String {
    let mut sorted = decision_digests.to_vec();
    sorted.sort();
    let mut parts: Vec<&[u8]> = vec![b"evaluate\n"];
    for d in &sorted {
        parts.push(d.as_bytes());
        parts.push(b"\n");
    }
    hex_digest(&parts)
}

pub fn digest_analysis(decisions_digest: &str, analyze: &AnalyzeSection) -> String {
    hex_digest(&[
        decisions_digest.as_bytes(),
        b"\nanalyze\n",
        json_of(analyze).as_bytes(),
    ])
}
