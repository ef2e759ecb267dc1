//! Wire protocol for completion servers.
//!
//! Native dialect: POST /v1/complete with a flat JSON body
//! `{prompt, temperature, top_k, top_p, min_p, max_tokens, seed, logprobs}`,
//! answered by `{text, tokens: [{t, lp}], prompt_tokens, completion_tokens}`.
//! A second codec maps the same data onto an OpenAI-style chat-completions
//! schema for servers that only speak that. Decoding walks the JSON by hand
//! so schema violations name the offending field path.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dialect {
    Native,
    OpenaiChat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub min_p: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub logprobs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub t: String,
    pub lp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub tokens: Vec<TokenLogprob>,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("body is not JSON: {0}")]
    NotJson(String),
    #[error("missing field {path}")]
    MissingField { path: String },
    #[error("field {path}: {reason}")]
    BadField { path: String, reason: String },
}

fn get<'v>(v: &'v Value, path: &str, key: &str) -> Result<&'v Value, WireError> {
    v.get(key).ok_or_else(|| WireError::MissingField {
        path: if path.is_empty() { key.to_string() } else { format!("{path}.{key}") },
    })
}

fn as_str(v: &Value, path: &str) -> Result<String, WireError> {
    v.as_str().map(str::to_string).ok_or_else(|| WireError::BadField {
        path: path.to_string(),
        reason: "expected a string".to_string(),
    })
}

fn as_f64(v: &Value, path: &str) -> Result<f64, WireError> {
    v.as_f64().ok_or_else(|| WireError::BadField {
        path: path.to_string(),
        reason: "expected a number".to_string(),
    })
}

fn as_u64(v: &Value, path: &str) -> Result<u64, WireError> {
    v.as_u64().ok_or_else(|| WireError::BadField {
        path: path.to_string(),
        reason: "expected a non-negative integer".to_string(),
    })
}

fn as_u32(v: &Value, path: &str) -> Result<u32, WireError> {
    u32::try_from(as_u64(v, path)?).map_err(|_| WireError::BadField {
        path: path.to_string(),
        reason: "value exceeds u32".to_string(),
    })
}

fn as_bool(v: &Value, path: &str) -> Result<bool, WireError> {
    v.as_bool().ok_or_else(|| WireError::BadField {
        path: path.to_string(),
        reason: "expected a boolean".to_string(),
    })
}

fn parse_json(bytes: &[u8]) -> Result<Value, WireError> {
    serde_json::from_slice(bytes).map_err(|e| WireError::NotJson(e.to_string()))
}

/// `model` only matters for the chat dialect, which requires one on the wire.
pub fn encode_request(req: &CompletionRequest, dialect: Dialect, model: &str) -> Vec<u8> {
    let value = match dialect {
        Dialect::Native => serde_json::to_value(req).expect("request serializes"),
        Dialect::OpenaiChat => serde_json::json!({
            "model": model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "top_k": req.top_k,
            "top_p": req.top_p,
            "min_p": req.min_p,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
            "logprobs": req.logprobs,
        }),
    };
    serde_json::to_vec(&value).expect("value serializes")
}

/// Server-side decode of the native request body. Every field is required;
/// the encoder always writes all of them.
pub fn decode_request(bytes: &[u8]) -> Result<CompletionRequest, WireError> {
    let v = parse_json(bytes)?;
    Ok(CompletionRequest {
        prompt: as_str(get(&v, "", "prompt")?, "prompt")?,
        temperature: as_f64(get(&v, "", "temperature")?, "temperature")?,
        top_k: as_u32(get(&v, "", "top_k")?, "top_k")?,
        top_p: as_f64(get(&v, "", "top_p")?, "top_p")?,
        min_p: as_f64(get(&v, "", "min_p")?, "min_p")?,
        max_tokens: as_u32(get(&v, "", "max_tokens")?, "max_tokens")?,
        seed: as_u64(get(&v, "", "seed")?, "seed")?,
        logprobs: as_bool(get(&v, "", "logprobs")?, "logprobs")?,
    })
}

pub fn encode_response(resp: &CompletionResponse) -> Vec<u8> {
    serde_json::to_vec(resp).expect("response serializes")
}

fn decode_tokens(arr: &Value, path: &str, t_key: &str, lp_key: &str) -> Result<Vec<TokenLogprob>, WireError> {
    let items = arr.as_array().ok_or_else(|| WireError::BadField {
        path: path.to_string(),
        reason: "expected an array".to_string(),
    })?;
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let here = format!("{path}[{i}]");
        let t = as_str(get(item, &here, t_key)?, &format!("{here}.{t_key}"))?;
        let lp_path = format!("{here}.{lp_key}");
        let lp = as_f64(get(item, &here, lp_key)?, &lp_path)?;
        if lp > 0.0 {
            return Err(WireError::BadField {
                path: lp_path,
                reason: format!("logprob {lp} is positive"),
            });
        }
        out.push(TokenLogprob { t, lp });
    }
    Ok(out)
}

/// Client-side decode. With `expect_logprobs` the per-token stream must be
/// present and agree with the completion token count; without it the token
/// list may be absent or empty.
pub fn decode_response(
    bytes: &[u8],
    dialect: Dialect,
    expect_logprobs: bool,
) -> Result<CompletionResponse, WireError> {
    let v = parse_json(bytes)?;
    let resp = match dialect {
        Dialect::Native => {
            let tokens = match v.get("tokens") {
                Some(arr) => decode_tokens(arr, "tokens", "t", "lp")?,
                None if expect_logprobs => {
                    return Err(WireError::MissingField { path: "tokens".to_string() })
                }
                None => Vec::new(),
            };
            CompletionResponse {
                text: as_str(get(&v, "", "text")?, "text")?,
                tokens,
                prompt_tokens: as_u32(get(&v, "", "prompt_tokens")?, "prompt_tokens")?,
                completion_tokens: as_u32(
                    get(&v, "", "completion_tokens")?,
                    "completion_tokens",
                )?,
            }
        }
        Dialect::OpenaiChat => {
            let choices = get(&v, "", "choices")?;
            let choice = choices
                .as_array()
                .and_then(|a| a.first())
                .ok_or_else(|| WireError::BadField {
                    path: "choices".to_string(),
                    reason: "expected a non-empty array".to_string(),
                })?;
            let message = get(choice, "choices[0]", "message")?;
            let text = as_str(get(message, "choices[0].message", "content")?, "choices[0].message.content")?;
            let tokens = match choice.get("logprobs").and_then(|l| l.get("content")) {
                Some(arr) => decode_tokens(arr, "choices[0].logprobs.content", "token", "logprob")?,
                None if expect_logprobs => {
                    return Err(WireError::MissingField {
                        path: "choices[0].logprobs.content".to_string(),
                    })
                }
                None => Vec::new(),
            };
            let usage = get(&v, "", "usage")?;
            CompletionResponse {
                text,
                tokens,
                prompt_tokens: as_u32(get(usage, "usage", "prompt_tokens")?, "usage.prompt_tokens")?,
                completion_tokens: as_u32(
                    get(usage, "usage", "completion_tokens")?,
                    "usage.completion_tokens",
                )?,
            }
        }
    };
    if expect_logprobs && resp.tokens.len() != resp.completion_tokens as usize {
        return Err(WireError::BadField {
            path: "completion_tokens".to_string(),
            reason: format!(
                "count {} disagrees with {} streamed tokens",
                resp.completion_tokens,
                resp.tokens.len()
            ),
        });
    }
    Ok(resp)
}
