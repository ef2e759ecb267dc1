//! Completion backends for the run stage. `InProcess` calls the
//! deterministic model directly; `Http` speaks the wire dialects over a
//! real socket. Both produce the same `RunOutput` stream, so everything
//! downstream is transport-blind.

use std::sync::Mutex;
use std::time::Duration;

use crate::config::ServerSection;
use crate::core::inference::{InferenceConfig, RunOutput, RunStatus};
use crate::core::mock::MockModel;
use crate::core::wire::{self, CompletionRequest, Dialect};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("server {url} unreachable: {reason}")]
    Unreachable { url: String, reason: String },
    #[error("request failed: {0}")]
    Transport(String),
    #[error("server returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("bad response body: {0}")]
    Wire(#[from] wire::WireError),
}

pub enum Backend {
    InProcess(MockModel),
    Http {
        url: String,
        dialect: Dialect,
        model: String,
        agent: ureq::Agent,
    },
}

impl Backend {
    pub fn http(server: &ServerSection, timeout_ms: u64) -> Backend {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build();
        Backend::Http {
            url: server.url.trim_end_matches('/').to_string(),
            dialect: server.dialect,
            model: server.model.clone(),
            agent: config.new_agent(),
        }
    }

    /// Cheap liveness probe. The in-process backend is always alive.
    pub fn health_check(&self) -> Result<(), ClientError> {
        match self {
            Backend::InProcess(_) => Ok(()),
            Backend::Http { url, agent, .. } => {
                let probe = format!("{url}/healthz");
                let mut resp = agent
                    .get(&probe)
                    .call()
                    .map_err(|e| ClientError::Unreachable { url: probe.clone(), reason: e.to_string() })?;
                if resp.status().as_u16() != 200 {
                    return Err(ClientError::Unreachable {
                        url: probe,
                        reason: format!("status {}", resp.status()),
                    });
                }
                // drain so the connection can be reused
                let _ = resp.body_mut().read_to_vec();
                Ok(())
            }
        }
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<wire::CompletionResponse, ClientError> {
        match self {
            Backend::InProcess(model) => Ok(model.complete(req)),
            Backend::Http { url, dialect, model, agent } => {
                let path = match dialect {
                    Dialect::Native => "/v1/complete",
                    Dialect::OpenaiChat => "/v1/chat/completions",
                };
                let body = wire::encode_request(req, *dialect, model);
                let mut resp = agent
                    .post(format!("{url}{path}"))
                    .header("content-type", "application/json")
                    .send(&body[..])
                    .map_err(|e| ClientError::Transport(e.to_string()))?;
                let bytes = resp
                    .body_mut()
                    .read_to_vec()
                    .map_err(|e| ClientError::Transport(e.to_string()))?;
                if resp.status().as_u16() != 200 {
                    return Err(ClientError::Status {
                        status: resp.status().as_u16(),
                        body: String::from_utf8_lossy(&bytes).into_owned(),
                    });
                }
                Ok(wire::decode_response(&bytes, *dialect, req.logprobs)?)
            }
        }
    }
}

/// Work item: one record's prompt, already rendered.
pub struct PromptedRecord {
    pub pseudonym: String,
    pub prompt: String,
}

/// Runs every (record, run) pair against the backend with a bounded worker
/// pool. Failures burn `max_retries` retries and then land as
/// `RunStatus::Failed` rows rather than aborting the stage: one flaky
/// record must not cost the batch. Output is sorted, so bytes do not
/// depend on scheduling.
pub fn collect_runs(
    backend: &Backend,
    inference: &InferenceConfig,
    records: &[PromptedRecord],
) -> Vec<RunOutput> {
    let next = Mutex::new(0usize);
    let outputs = Mutex::new(Vec::with_capacity(records.len() * inference.n_runs as usize));
    let workers = (inference.parallelism.max(1) as usize).min(records.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(rec) = records.get(i) else { break };
                let mut rows = Vec::with_capacity(inference.n_runs as usize);
                for run_index in 0..inference.n_runs {
                    let req = inference.request_for(&rec.prompt, run_index);
                    rows.push(run_with_retries(backend, inference, &rec.pseudonym, run_index, &req));
                }
                outputs.lock().unwrap().extend(rows);
            });
        }
    });

    let mut runs = outputs.into_inner().unwrap();
    crate::core::inference::sort_runs(&mut runs);
    runs
}

fn run_with_retries(
    backend: &Backend,
    inference: &InferenceConfig,
    record: &str,
    run_index: u32,
    req: &CompletionRequest,
) -> RunOutput {
    let mut last_err = String::new();
    for attempt in 0..=inference.max_retries {
        match backend.complete(req) {
            Ok(resp) => {
                return RunOutput {
                    record: record.to_string(),
                    run_index,
                    text: resp.text,
                    tokens: resp.tokens,
                    prompt_token_count: resp.prompt_tokens,
                    completion_token_count: resp.completion_tokens,
                    status: RunStatus::Ok,
                };
            }
            Err(e) => {
                last_err = e.to_string();
                if attempt < inference.max_retries {
                    // linear backoff is enough at mock-server latencies
                    std::thread::sleep(Duration::from_millis(50 * u64::from(attempt + 1)));
                }
            }
        }
    }
    eprintln!("warning: {record} run {run_index} failed after retries: {last_err}");
    RunOutput::failed(record, run_index)
}
