use std::collections::HashMap;
use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    build_initial_prompt, build_iteration_prompt, compute_feedback, parse_agent_response, AgentClient, AgentRequest,
    ChatMessage, DecisionKind, ParseError, PromptTemplates, Round, DEFAULT_INITIAL_GROUP_SIZE, DEFAULT_MAX_ROUNDS,
    DEFAULT_TEMPERATURE, MAX_GROUP_SIZE,
};
use crate::cache::StrategyCache;
use crate::clients::ClientError;
use crate::corpus::{Dataset, Digest};
use crate::dps::{stratified_sample, EmbeddingClient, SampleSummary, SamplingError};
use crate::eval::{EvalError, Evaluator};
use crate::operators::OperatorContext;
use crate::screener;
use crate::strategy::Strategy;

const REPROMPT: &str = "Your previous reply could not be read. Reply again using the required format: \
one ###Combination[n]### block per combination with the team names in working order, \
or one of the two termination markers.";

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub sampling_rate: f64,
    pub initial_group_size: usize,
    pub max_group_size: usize,
    pub max_rounds: u32,
    pub seed: u64,
    pub temperature: f64,
    pub templates: PromptTemplates,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            sampling_rate: 0.2,
            initial_group_size: DEFAULT_INITIAL_GROUP_SIZE,
            max_group_size: MAX_GROUP_SIZE,
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed: 0,
            temperature: DEFAULT_TEMPERATURE,
            templates: PromptTemplates::default(),
        }
    }
}

/// Everything the search talks to.
pub struct SearchEnv<'a> {
    pub agent: &'a dyn AgentClient,
    pub evaluator: &'a Evaluator,
    pub ctx: &'a OperatorContext,
    pub cache: &'a StrategyCache,
    pub embedder: &'a dyn EmbeddingClient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    BestTeam,
    NoProcessing,
    Budget,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::BestTeam => "best_team",
            Termination::NoProcessing => "no_processing",
            Termination::Budget => "budget",
        })
    }
}

/// Wall-clock time per phase. The phases never overlap, so their sum is at
/// most `total`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    pub sampling: Duration,
    pub screening: Duration,
    pub processing: Duration,
    pub evaluation: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best_strategy: Strategy,
    /// Feedback score of the returned strategy, when it was evaluated.
    pub best_score: Option<f64>,
    pub baseline_score: f64,
    pub rounds: Vec<Round>,
    /// Agent turns taken, including the final decision.
    pub rounds_executed: u32,
    pub termination: Termination,
    pub sample: SampleSummary,
    pub sampled_fingerprint: Digest,
    pub conversation: Vec<ChatMessage>,
    pub timings: PhaseTimings,
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("sampling: {0}")]
    Sampling(#[from] SamplingError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("agent: {0}")]
    Agent(#[from] ClientError),
    #[error("agent reply unreadable after one retry: {0}")]
    Parse(#[from] ParseError),
    #[error("baseline evaluation failed: {0}")]
    Baseline(String),
}

/// Highest feedback score across rounds; ties go to the earliest round, then
/// the lowest position in the group.
pub fn select_best(rounds: &[Round]) -> Option<(Strategy, f64)> {
    let mut best: Option<(&Strategy, f64)> = None;
    for r in rounds {
        for (f, s) in r.strategies.iter().zip(&r.relative_scores) {
            if best.is_none_or(|(_, b)| *s > b) {
                best = Some((f, *s));
            }
        }
    }
    best.map(|(f, s)| (f.clone(), s))
}

fn ask(env: &SearchEnv<'_>, cfg: &SearchConfig, messages: &[ChatMessage]) -> Result<String, ClientError> {
    let req = AgentRequest { messages: messages.to_vec(), temperature: cfg.temperature, seed: cfg.seed };
    env.ctx.retry.run(|| env.agent.complete(&req))
}

/// Samples the corpus once, scores the unprocessed sample once, then lets the
/// agent propose groups of strategies until it stops or the round budget runs
/// out.
pub fn run_search(base: &Dataset, cfg: &SearchConfig, env: &SearchEnv<'_>) -> Result<SearchResult, SearchError> {
    let started = Instant::now();
    let mut timings = PhaseTimings::default();
    let ctx = env.ctx;

    let t = Instant::now();
    screener::classify_all(base, ctx.screener.as_ref(), ctx.pool());
    timings.screening += t.elapsed();
    let t = Instant::now();
    let (sampled, summary) = stratified_sample(base, cfg.sampling_rate, ctx.screener.as_ref(), env.embedder)?;
    timings.sampling += t.elapsed();
    log::info!("sampled {} of {} samples ({} noisy)", summary.sampled, summary.input_samples, summary.sampled_noisy);

    let screen_before = ctx.screening_time();
    let mut processing = Duration::ZERO;

    let baseline = env.evaluator.evaluate_strategy(&Strategy::none(), &sampled, ctx, env.cache, 0)?;
    processing += baseline.processing;
    timings.evaluation += baseline.scoring;
    if !baseline.score.is_finite() {
        return Err(SearchError::Baseline(baseline.error.unwrap_or_else(|| "non-finite score".into())));
    }
    let r0 = baseline.score;
    log::info!("baseline score r0 = {r0:.6}");

    let mut scored: HashMap<Strategy, f64> = HashMap::from([(Strategy::none(), r0)]);
    let mut rounds: Vec<Round> = Vec::new();
    let mut conversation = vec![ChatMessage::user(build_initial_prompt(&cfg.templates, cfg.initial_group_size))];
    let mut turns = 0;
    let mut outcome: Option<(Strategy, Termination)> = None;

    while turns < cfg.max_rounds {
        turns += 1;
        let reply = ask(env, cfg, &conversation)?;
        conversation.push(ChatMessage::assistant(reply.clone()));
        let decision = match parse_agent_response(&reply) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("agent reply unreadable ({e}); asking once more");
                conversation.push(ChatMessage::user(REPROMPT));
                let retry = ask(env, cfg, &conversation)?;
                conversation.push(ChatMessage::assistant(retry.clone()));
                parse_agent_response(&retry)?
            }
        };
        let mut group = match decision.kind {
            DecisionKind::NoProcessing => {
                outcome = Some((Strategy::none(), Termination::NoProcessing));
                break;
            }
            DecisionKind::BestTeam(f) => {
                outcome = Some((f, Termination::BestTeam));
                break;
            }
            DecisionKind::ProposeGroup(g) => g,
        };
        if group.len() > cfg.max_group_size {
            log::warn!("agent proposed {} combinations; keeping the first {}", group.len(), cfg.max_group_size);
            group.truncate(cfg.max_group_size);
        }

        let mut round = Round { index: turns, strategies: Vec::new(), scores: Vec::new(), relative_scores: Vec::new(), reused: Vec::new() };
        for f in group {
            let (score, reused) = match scored.get(&f) {
                Some(&r) => (r, true),
                None => {
                    let ev = env.evaluator.evaluate_strategy(&f, &sampled, ctx, env.cache, turns)?;
                    processing += ev.processing;
                    timings.evaluation += ev.scoring;
                    if let Some(err) = &ev.error {
                        log::warn!("evaluation of {f} failed: {err}");
                    }
                    scored.insert(f.clone(), ev.score);
                    (ev.score, false)
                }
            };
            let rel = compute_feedback(score, r0).unwrap_or(f64::NEG_INFINITY);
            log::info!("round {turns}: {f} r = {score:.6} s = {rel:+.6}{}", if reused { " (echoed)" } else { "" });
            round.strategies.push(f);
            round.scores.push(score);
            round.relative_scores.push(rel);
            round.reused.push(reused);
        }
        rounds.push(round);
        conversation.push(ChatMessage::user(build_iteration_prompt(
            &cfg.templates,
            &rounds,
            turns + 1,
            cfg.max_group_size,
        )));
    }

    let (best_strategy, termination) = outcome.unwrap_or_else(|| {
        let best = select_best(&rounds).map_or_else(Strategy::none, |(f, _)| f);
        (best, Termination::Budget)
    });
    let best_score = scored.get(&best_strategy).and_then(|r| compute_feedback(*r, r0).ok());

    let pts_screening = ctx.screening_time().saturating_sub(screen_before);
    timings.screening += pts_screening;
    timings.processing = processing.saturating_sub(pts_screening);
    timings.total = started.elapsed();

    Ok(SearchResult {
        best_strategy,
        best_score,
        baseline_score: r0,
        rounds,
        rounds_executed: turns,
        termination,
        sample: summary,
        sampled_fingerprint: sampled.fingerprint(),
        conversation,
        timings,
    })
}
