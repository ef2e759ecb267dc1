//! Deterministic stand-in for the language model. It answers a completion
//! request by parsing the fact tags out of the note embedded in the prompt,
//! running the rule engine, and emitting a step-line rationale that ends in
//! YES or NO, optionally flipped by seeded noise.
//!
//! All randomness derives from one hash of (server seed, request seed,
//! prompt digest), so identical request bytes against the same policy always
//! produce identical response bytes, and distinct runs of the same record
//! get independent coins through their request seeds.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::guideline::{decide, PatientFacts, RuleSet};
use crate::synth::parse_tags;
use crate::wire::{
    decode_request, encode_response, CompletionRequest, CompletionResponse, TokenLogprob,
    WireError,
};

/// Marker present only in the chain-of-thought template; its absence means
/// the request came from the short-prompt variant.
const CP_MARKER: &str = "Step 9 Final decision";

/// Words per completion never drop below this, whatever verbosity says.
const MIN_COMPLETION_TOKENS: f64 = 16.0;

const FILLER_WORDS: &[&str] = &[
    "de",
    "patient",
    "werd",
    "gezien",
    "op",
    "de",
    "polikliniek",
    "voor",
    "controle",
    "beloop",
    "stabiel",
    "geen",
    "nieuwe",
    "klachten",
    "medicatie",
    "ongewijzigd",
    "voortgezet",
    "laboratoriumuitslagen",
    "besproken",
    "met",
    "collega",
    "vervolgafspraak",
    "gepland",
    "conform",
    "protocol",
];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MockPolicy {
    /// Per-run probability of flipping the final decision token.
    pub p_flip: f64,
    /// Target mean completion length in tokens for short-prompt requests.
    pub verbosity_sp: f64,
    /// Same for chain-of-thought requests.
    pub verbosity_cp: f64,
    pub logprob_mean: f64,
    pub logprob_sd: f64,
    /// Subtracted from every token logprob of a flipped run; keeps flipped
    /// runs strictly less confident whenever it is positive.
    pub flip_penalty: f64,
    pub server_seed: u64,
}

impl Default for MockPolicy {
    fn default() -> MockPolicy {
        MockPolicy {
            p_flip: 0.0,
            verbosity_sp: 751.0,
            verbosity_cp: 1403.0,
            logprob_mean: -0.35,
            logprob_sd: 0.15,
            flip_penalty: 0.8,
            server_seed: 0,
        }
    }
}

impl MockPolicy {
    pub fn validate(&self) -> Result<(), MockError> {
        if !(0.0..=1.0).contains(&self.p_flip) {
            return Err(MockError::BadPolicy(format!("p_flip {} outside [0, 1]", self.p_flip)));
        }
        for (name, v) in [("verbosity_sp", self.verbosity_sp), ("verbosity_cp", self.verbosity_cp)]
        {
            if !v.is_finite() || v < MIN_COMPLETION_TOKENS {
                return Err(MockError::BadPolicy(format!("{name} {v} below minimum 16")));
            }
        }
        if !self.logprob_mean.is_finite() || self.logprob_mean > 0.0 {
            return Err(MockError::BadPolicy("logprob_mean must be <= 0".to_string()));
        }
        if !(self.logprob_sd >= 0.0) || !(self.flip_penalty >= 0.0) {
            return Err(MockError::BadPolicy(
                "logprob_sd and flip_penalty must be >= 0".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MockError {
    #[error("bad mock policy: {0}")]
    BadPolicy(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

pub struct MockModel {
    policy: MockPolicy,
    rules: RuleSet,
}

fn facts_empty(facts: &PatientFacts) -> bool {
    facts.ic_events.is_empty()
        && facts.virology.is_empty()
        && facts.medications.is_empty()
        && facts.immunosuppressive_diseases.is_empty()
        && facts.hiv_tests.is_empty()
}

/// One coin per (server, request): the low 8 bytes of
/// sha256(server_seed || request_seed || sha256(prompt)).
fn run_hash(server_seed: u64, request_seed: u64, prompt: &str) -> u64 {
    let prompt_digest = Sha256::digest(prompt.as_bytes());
    let mut hasher = Sha256::new();
    hasher.update(server_seed.to_le_bytes());
    hasher.update(request_seed.to_le_bytes());
    hasher.update(&prompt_digest);
    let out = hasher.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is 32 bytes"))
}

fn uniform_from(h: u64) -> f64 {
    // 53 mantissa bits give a clean uniform in [0, 1).
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

impl MockModel {
    pub fn new(policy: MockPolicy, rules: RuleSet) -> Result<MockModel, MockError> {
        policy.validate()?;
        Ok(MockModel { policy, rules })
    }

    pub fn policy(&self) -> &MockPolicy {
        &self.policy
    }

    /// Native-dialect bytes in, native-dialect bytes out.
    pub fn respond(&self, request_bytes: &[u8]) -> Result<Vec<u8>, WireError> {
        let req = decode_request(request_bytes)?;
        Ok(encode_response(&self.complete(&req)))
    }

    pub fn complete(&self, req: &CompletionRequest) -> CompletionResponse {
        let h = run_hash(self.policy.server_seed, req.seed, &req.prompt);
        let flip = uniform_from(h) < self.policy.p_flip;
        let mut rng = ChaCha20Rng::seed_from_u64(h);

        // A note with no usable tags mirrors Step 8 rule 3: nothing found,
        // nothing advised. A malformed tag is treated the same way; the mock
        // never errors on content, only on the wire format.
        let facts = parse_tags(&req.prompt).unwrap_or_default();
        let verdict = if facts_empty(&facts) { None } else { decide(&self.rules, &facts).ok() };
        let (oracle_yes, mut words): (bool, Vec<String>) = match verdict {
            Some(d) => {
                let mut words = Vec::new();
                for entry in &d.trace {
                    words.push("Step".to_string());
                    words.push(format!("{}:", entry.step));
                    words.extend(entry.outcome.split_whitespace().map(String::from));
                }
                (d.recommend, words)
            }
            None => (
                false,
                "Step 8: rule 3: no parseable clinical facts, no indicator condition present"
                    .split_whitespace()
                    .map(String::from)
                    .collect(),
            ),
        };

        let verbosity = if req.prompt.contains(CP_MARKER) {
            self.policy.verbosity_cp
        } else {
            self.policy.verbosity_sp
        };
        let sd = verbosity / 8.0;
        let drawn = Normal::new(verbosity, sd).expect("sd is positive").sample(&mut rng);
        let target =
            libm::round(drawn.clamp(MIN_COMPLETION_TOKENS, verbosity + 4.0 * sd)) as usize;
        while words.len() + 1 < target {
            words.push(FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())].to_string());
        }
        words.push(if oracle_yes != flip { "YES" } else { "NO" }.to_string());
        // max_tokens cuts the stream exactly where a real server would, even
        // if that truncates the decision token away.
        words.truncate(req.max_tokens as usize);

        let lp_noise =
            Normal::new(self.policy.logprob_mean, self.policy.logprob_sd).expect("sd >= 0");
        let penalty = if flip { self.policy.flip_penalty } else { 0.0 };
        let tokens: Vec<TokenLogprob> = words
            .iter()
            .map(|w| TokenLogprob {
                t: w.clone(),
                lp: lp_noise.sample(&mut rng).min(0.0) - penalty,
            })
            .collect();

        let completion_tokens = tokens.len() as u32;
        CompletionResponse {
            text: words.join(" "),
            tokens: if req.logprobs { tokens } else { Vec::new() },
            prompt_tokens: req.prompt.split_whitespace().count() as u32,
            completion_tokens,
        }
    }
}
