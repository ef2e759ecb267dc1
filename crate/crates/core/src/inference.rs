//! Inference run configuration and bookkeeping.
//!
//! The transport itself lives in the companion crate; this module owns the
//! sampling configuration, the per-run seed policy, and the run record that
//! everything downstream consumes.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::wire::{CompletionRequest, TokenLogprob};

/// How the request seed varies across a record's runs. The default keeps the
/// three runs independent samples that are still reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SeedPolicy {
    Fixed { seed: u64 },
    PerRun { base_seed: u64 },
}

impl SeedPolicy {
    pub fn seed_for_run(&self, run_index: u32) -> u64 {
        match *self {
            SeedPolicy::Fixed { seed } => seed,
            SeedPolicy::PerRun { base_seed } => base_seed.wrapping_add(u64::from(run_index)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub min_p: f64,
    pub max_tokens: u32,
    pub n_runs: u32,
    pub seed_policy: SeedPolicy,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub parallelism: u32,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            temperature: 0.8,
            top_k: 64,
            top_p: 0.95,
            min_p: 0.0,
            max_tokens: 4096,
            n_runs: 3,
            seed_policy: SeedPolicy::PerRun { base_seed: 0 },
            timeout_ms: 30_000,
            max_retries: 2,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error("invalid inference config: {0}")]
    BadConfig(String),
    #[error("run {record}/{run_index}: {reason}")]
    BadRun { record: String, run_index: u32, reason: String },
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(InferenceError::BadConfig(alloc::format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.temperature < 0.0 {
            return Err(InferenceError::BadConfig(alloc::format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        if self.n_runs == 0 {
            return Err(InferenceError::BadConfig("n_runs must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(InferenceError::BadConfig("parallelism must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(InferenceError::BadConfig("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn request_for(&self, prompt: &str, run_index: u32) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: self.temperature,
            top_k: self.top_k,
            top_p: self.top_p,
            min_p: self.min_p,
            max_tokens: self.max_tokens,
            seed: self.seed_policy.seed_for_run(run_index),
            logprobs: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub record: String,
    pub run_index: u32,
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
    pub prompt_token_count: u32,
    pub completion_token_count: u32,
    pub status: RunStatus,
}

impl RunOutput {
    /// What the client stores after retries are exhausted.
    pub fn failed(record: &str, run_index: u32) -> RunOutput {
        RunOutput {
            record: record.into(),
            run_index,
            text: String::new(),
            tokens: Vec::new(),
            prompt_token_count: 0,
            completion_token_count: 0,
            status: RunStatus::Failed,
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |reason: String| InferenceError::BadRun {
            record: self.record.clone(),
            run_index: self.run_index,
            reason,
        };
        if self.status == RunStatus::Ok {
            if self.tokens.len() != self.completion_token_count as usize {
                return Err(bad(alloc::format!(
                    "token list length {} disagrees with count {}",
                    self.tokens.len(),
                    self.completion_token_count
                )));
            }
            if let Some(t) = self.tokens.iter().find(|t| t.lp > 0.0) {
                return Err(bad(alloc::format!("token {:?} has positive logprob {}", t.t, t.lp)));
            }
        }
        Ok(())
    }
}

/// Restores run order after out-of-order completion. Sorting is total on
/// (record, run_index), so the result never depends on arrival order.
pub fn sort_runs(runs: &mut [RunOutput]) {
    runs.sort_by(|a, b| a.record.cmp(&b.record).then(a.run_index.cmp(&b.run_index)));
}
