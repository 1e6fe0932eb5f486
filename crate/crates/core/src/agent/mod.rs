//! The strategy-proposing side of the search: prompts, response parsing,
//! group-relative feedback and the round loop.

mod hill_climb;
mod prompt;
mod search;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::ClientError;
use crate::strategy::{parse_strategy, Strategy};

pub use hill_climb::HillClimbAgent;
pub use prompt::{
    build_initial_prompt, build_iteration_prompt, format_combinations, format_feedback, format_score, parse_feedback,
    parse_group_limit, PromptTemplates, TemplateError, BEST_TEAM_MARKER, NO_PROCESSING_MARKER,
};
pub use search::{run_search, select_best, PhaseTimings, SearchConfig, SearchEnv, SearchError, SearchResult, Termination};

pub const DEFAULT_TEMPERATURE: f64 = 0.6;
pub const DEFAULT_EPSILON: f64 = 0.005;
pub const DEFAULT_MAX_ROUNDS: u32 = 5;
pub const DEFAULT_INITIAL_GROUP_SIZE: usize = 4;
pub const MAX_GROUP_SIZE: usize = 6;

mod score_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let v = Vec::<Option<f64>>::deserialize(d)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

/// One evaluated group. Failed evaluations hold negative infinity and
/// serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: u32,
    pub strategies: Vec<Strategy>,
    #[serde(with = "score_serde")]
    pub scores: Vec<f64>,
    #[serde(with = "score_serde")]
    pub relative_scores: Vec<f64>,
    /// True where the score was echoed from an earlier evaluation.
    pub reused: Vec<bool>,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeedbackError {
    #[error("feedback needs finite scores (r_k = {score}, r_0 = {baseline})")]
    NonFinite { score: f64, baseline: f64 },
}

/// Score relative to the no-processing baseline.
pub fn compute_feedback(score: f64, baseline: f64) -> Result<f64, FeedbackError> {
    if !score.is_finite() || !baseline.is_finite() {
        return Err(FeedbackError::NonFinite { score, baseline });
    }
    Ok(score - baseline)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "strategies", rename_all = "snake_case")]
pub enum DecisionKind {
    ProposeGroup(Vec<Strategy>),
    BestTeam(Strategy),
    NoProcessing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentDecision {
    pub kind: DecisionKind,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no readable ###Combination[n]### block in agent response")]
    NoCombinations,
    #[error("{BEST_TEAM_MARKER} given without a readable combination")]
    BestTeamWithoutStrategy,
}

static HEADER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"###[^#\n]*###").unwrap());
static COMBINATION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^###\s*Combination\s*\[\s*\d+\s*\]\s*###$").unwrap());

struct Block {
    start: usize,
    strategy: Option<Strategy>,
}

fn first_strategy(text: &str) -> Option<Strategy> {
    let cleaned = text.replace(BEST_TEAM_MARKER, "\n");
    cleaned
        .lines()
        .map(|l| l.trim().trim_start_matches([':', '：']).trim())
        .filter(|l| !l.is_empty())
        .find_map(|l| parse_strategy(l).ok())
}

fn combination_blocks(text: &str) -> Vec<Block> {
    let headers: Vec<_> = HEADER_RE.find_iter(text).collect();
    let mut out = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if !COMBINATION_RE.is_match(h.as_str()) {
            continue;
        }
        let end = headers.get(i + 1).map_or(text.len(), |n| n.start());
        out.push(Block { start: h.start(), strategy: first_strategy(&text[h.end()..end]) });
    }
    out
}

/// Interprets an agent reply. The no-processing marker wins over everything,
/// then the best-team marker, then combination blocks.
pub fn parse_agent_response(text: &str) -> Result<AgentDecision, ParseError> {
    let rationale = text.to_string();
    if text.contains(NO_PROCESSING_MARKER) {
        return Ok(AgentDecision { kind: DecisionKind::NoProcessing, rationale });
    }
    let blocks = combination_blocks(text);
    if let Some(pos) = text.find(BEST_TEAM_MARKER) {
        let after = blocks.iter().filter(|b| b.start >= pos).find_map(|b| b.strategy.clone());
        let inline = || {
            let rest = &text[pos + BEST_TEAM_MARKER.len()..];
            let stop = HEADER_RE.find(rest).map_or(rest.len(), |m| m.start());
            first_strategy(&rest[..stop])
        };
        let before = || blocks.iter().rev().filter(|b| b.start < pos).find_map(|b| b.strategy.clone());
        return match after.or_else(inline).or_else(before) {
            Some(f) => Ok(AgentDecision { kind: DecisionKind::BestTeam(f), rationale }),
            None => Err(ParseError::BestTeamWithoutStrategy),
        };
    }
    let mut group: Vec<Strategy> = Vec::new();
    for b in &blocks {
        match &b.strategy {
            Some(f) if group.contains(f) => log::warn!("dropping duplicate combination {f}"),
            Some(f) => group.push(f.clone()),
            None => log::warn!("skipping unreadable combination block at byte {}", b.start),
        }
    }
    if group.is_empty() {
        return Err(ParseError::NoCombinations);
    }
    Ok(AgentDecision { kind: DecisionKind::ProposeGroup(group), rationale })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: ChatRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: u64,
}

pub trait AgentClient: Send + Sync {
    fn identity(&self) -> String;
    fn complete(&self, req: &AgentRequest) -> Result<String, ClientError>;
}

type AgentFn = dyn Fn(&AgentRequest) -> Result<String, ClientError> + Send + Sync;

/// Agent backed by a closure, for tests and embedding.
#[derive(Clone)]
pub struct ScriptedAgent {
    name: String,
    f: Arc<AgentFn>,
    calls: Arc<AtomicUsize>,
}

impl ScriptedAgent {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&AgentRequest) -> Result<String, ClientError> + Send + Sync + 'static,
    ) -> Self {
        ScriptedAgent { name: name.into(), f: Arc::new(f), calls: Arc::new(AtomicUsize::new(0)) }
    }

    /// Replies with `replies[i]` on the i-th call, repeating the last one.
    pub fn sequence(name: impl Into<String>, replies: Vec<String>) -> Self {
        assert!(!replies.is_empty(), "sequence needs at least one reply");
        let counter = Arc::new(AtomicUsize::new(0));
        let c = counter.clone();
        ScriptedAgent::new(name, move |_| {
            let i = c.fetch_add(1, Ordering::SeqCst);
            Ok(replies[i.min(replies.len() - 1)].clone())
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl AgentClient for ScriptedAgent {
    fn identity(&self) -> String {
        format!("scripted-agent:{}", self.name)
    }

    fn complete(&self, req: &AgentRequest) -> Result<String, ClientError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(req)
    }
}
