//! Model-backed operator clients (optimizer, generator, scorer).
//!
//! A client answers one [`ModelRequest`] with one [`ModelResponse`]. The same
//! request/response shapes are used on the wire by
//! [`crate::remote::HttpModelClient`]. Deterministic in-process defaults live
//! here so a search can run without any remote endpoint.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Sample;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClientRole {
    Optimizer,
    Generator,
    Scorer,
}

impl fmt::Display for ClientRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClientRole::Optimizer => "optimizer",
            ClientRole::Generator => "generator",
            ClientRole::Scorer => "scorer",
        })
    }
}

/// Which field a request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldMode {
    Question,
    Answer,
    Both,
}

impl fmt::Display for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldMode::Question => "question",
            FieldMode::Answer => "answer",
            FieldMode::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotPair {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub role: ClientRole,
    pub mode: FieldMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shots: Vec<ShotPair>,
    pub seed: u64,
}

impl ModelRequest {
    pub fn for_sample(role: ClientRole, mode: FieldMode, s: &Sample, seed: u64) -> Self {
        ModelRequest {
            role,
            mode,
            prompt: None,
            question: s.question.clone(),
            answer: s.answer.clone(),
            shots: Vec::new(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub status: ResponseStatus,
}

impl ModelResponse {
    pub fn text(t: impl Into<String>) -> Self {
        ModelResponse { text: Some(t.into()), score: None, status: ResponseStatus::Ok }
    }

    pub fn score(v: f64) -> Self {
        ModelResponse { text: None, score: Some(v), status: ResponseStatus::Ok }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("client reported failure: {0}")]
    Failed(String),
}

pub trait ModelClient: Send + Sync {
    fn role(&self) -> ClientRole;

    /// Stable identity, folded into cache keys.
    fn identity(&self) -> String;

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, ClientError>;
}

/// Bounded retry with exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, initial_backoff_ms: 200 }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, initial_backoff_ms: 0 }
    }

    pub fn run<T, E>(&self, mut f: impl FnMut() -> Result<T, E>) -> Result<T, E> {
        let attempts = self.max_attempts.max(1);
        let mut delay = self.initial_backoff_ms;
        let mut last = None;
        for attempt in 0..attempts {
            match f() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    last = Some(e);
                    if attempt + 1 < attempts && delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                        delay = delay.saturating_mul(2);
                    }
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

/// Calls `client` under `retry`, turning an error status into a `ClientError`.
pub fn call_with_retry(
    client: &dyn ModelClient,
    req: &ModelRequest,
    retry: &RetryPolicy,
) -> Result<ModelResponse, ClientError> {
    retry.run(|| {
        let resp = client.call(req)?;
        match resp.status {
            ResponseStatus::Ok => Ok(resp),
            ResponseStatus::Error => Err(ClientError::Failed(resp.text.unwrap_or_default())),
        }
    })
}

type ScriptFn = dyn Fn(&ModelRequest) -> Result<ModelResponse, ClientError> + Send + Sync;

/// Client backed by a closure, with a call counter. Used by tests and for
/// building hand-traceable scenarios.
#[derive(Clone)]
pub struct ScriptedClient {
    role: ClientRole,
    name: String,
    f: Arc<ScriptFn>,
    calls: Arc<AtomicUsize>,
}

impl ScriptedClient {
    pub fn new(
        role: ClientRole,
        name: impl Into<String>,
        f: impl Fn(&ModelRequest) -> Result<ModelResponse, ClientError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedClient {
            role,
            name: name.into(),
            f: Arc::new(f),
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Handle to the shared counter, readable after the client is boxed.
    pub fn counter(&self) -> Arc<AtomicUsize> {
        Arc::clone(&self.calls)
    }
}

impl fmt::Debug for ScriptedClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScriptedClient").field("role", &self.role).field("name", &self.name).finish()
    }
}

impl ModelClient for ScriptedClient {
    fn role(&self) -> ClientRole {
        self.role
    }

    fn identity(&self) -> String {
        format!("scripted:{}:{}", self.role, self.name)
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(req)
    }
}

/// Deterministic rewrite: strips markup, replaces special characters with
/// spaces and removes immediately repeated word chunks.
#[derive(Debug, Clone, Default)]
pub struct RuleOptimizer;

impl RuleOptimizer {
    pub fn rewrite(text: &str) -> String {
        let stripped = text::strip_noise_text(text);
        let plain: String = stripped
            .chars()
            .map(|c| if text::is_allowed_char(c) { c } else { ' ' })
            .collect();
        let words: Vec<&str> = plain.split_whitespace().collect();
        collapse_repeats(&words).join(" ")
    }
}

/// Drops the second copy of any chunk of up to eight words that immediately
/// repeats, until no such repeat remains.
fn collapse_repeats<'a>(words: &[&'a str]) -> Vec<&'a str> {
    let mut cur: Vec<&str> = words.to_vec();
    loop {
        let mut changed = false;
        for k in 1..=8usize {
            let mut out: Vec<&str> = Vec::with_capacity(cur.len());
            let mut i = 0;
            while i < cur.len() {
                out.push(cur[i]);
                i += 1;
                if out.len() >= 2 * k && out[out.len() - k..] == out[out.len() - 2 * k..out.len() - k] {
                    out.truncate(out.len() - k);
                    changed = true;
                }
            }
            cur = out;
        }
        if !changed {
            return cur;
        }
    }
}

impl ModelClient for RuleOptimizer {
    fn role(&self) -> ClientRole {
        ClientRole::Optimizer
    }

    fn identity(&self) -> String {
        "builtin:rule-optimizer:v1".into()
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, ClientError> {
        let src = match req.mode {
            FieldMode::Question => &req.question,
            FieldMode::Answer => &req.answer,
            FieldMode::Both => return Err(ClientError::Protocol("optimizer expects a single field".into())),
        };
        Ok(ModelResponse::text(Self::rewrite(src)))
    }
}

/// Deterministic field filler. A missing answer is written as the question
/// restated around the first shot's answer style; a missing question is
/// derived from the answer.
#[derive(Debug, Clone, Default)]
pub struct TemplateGenerator;

impl ModelClient for TemplateGenerator {
    fn role(&self) -> ClientRole {
        ClientRole::Generator
    }

    fn identity(&self) -> String {
        "builtin:template-generator:v1".into()
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, ClientError> {
        let shot_hint = req
            .shots
            .first()
            .map(|s| s.answer.split_whitespace().take(6).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        let text = match req.mode {
            FieldMode::Answer => {
                format!("Regarding the question {} the answer follows this pattern: {}.", req.question.trim(), shot_hint)
            }
            FieldMode::Question => {
                let head: Vec<&str> = req.answer.split_whitespace().take(24).collect();
                format!("Which explanation matches the following statement: {}?", head.join(" "))
            }
            FieldMode::Both => return Err(ClientError::Protocol("generator expects a single field".into())),
        };
        Ok(ModelResponse::text(text))
    }
}

/// Deterministic per-sample quality score in [0,1] from the same rules the
/// cleaning team and proxy evaluator apply.
#[derive(Debug, Clone)]
pub struct HeuristicScorer {
    pub config: crate::operators::OperatorConfig,
}

impl HeuristicScorer {
    pub fn new(config: crate::operators::OperatorConfig) -> Self {
        HeuristicScorer { config }
    }

    pub fn score_sample(&self, s: &Sample) -> f64 {
        let rules = if crate::operators::is_rule_clean(s, &self.config) { 1.0 } else { 0.0 };
        let complete = if s.question.is_empty() || s.answer.is_empty() { 0.0 } else { 1.0 };
        let adequacy = crate::eval::length_adequacy(s, &self.config);
        let special = 1.0 - text::special_char_ratio(&s.combined_text());
        0.4 * rules + 0.3 * complete + 0.2 * adequacy + 0.1 * special
    }
}

impl ModelClient for HeuristicScorer {
    fn role(&self) -> ClientRole {
        ClientRole::Scorer
    }

    fn identity(&self) -> String {
        "builtin:heuristic-scorer:v1".into()
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, ClientError> {
        let s = Sample::new("_", req.question.clone(), req.answer.clone());
        Ok(ModelResponse::score(self.score_sample(&s)))
    }
}
