mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use dpforge::agent::{
    format_combinations, run_search, AgentClient, HillClimbAgent, ScriptedAgent, SearchConfig, SearchEnv,
    SearchError, SearchResult, Termination, BEST_TEAM_MARKER, NO_PROCESSING_MARKER,
};
use dpforge::cache::StrategyCache;
use dpforge::clients::ClientError;
use dpforge::corpus::Dataset;
use dpforge::dps::HashingEmbedder;
use dpforge::eval::{EvalConfig, EvalMode, Evaluator, TrainerClient, TrainerRequest};
use dpforge::operators::{OperatorConfig, OperatorContext};
use dpforge::strategy::Strategy;

use common::corpus;

fn strategies(list: &[&str]) -> Vec<Strategy> {
    list.iter().map(|s| s.parse().unwrap()).collect()
}

fn propose(list: &[&str]) -> String {
    format!("Trying these next.\n{}", format_combinations(&strategies(list)))
}

struct Harness {
    dir: tempfile::TempDir,
    ctx: OperatorContext,
    evaluator: Evaluator,
}

impl Harness {
    fn new() -> Self {
        Harness {
            dir: tempfile::tempdir().unwrap(),
            ctx: OperatorContext::builtin(OperatorConfig::default(), 3),
            evaluator: Evaluator::proxy(EvalConfig::default()),
        }
    }

    fn run(&self, agent: &dyn AgentClient, base: &Dataset, cfg: &SearchConfig) -> Result<SearchResult, SearchError> {
        let cache = StrategyCache::open(self.dir.path().join("cache")).unwrap();
        let embedder = HashingEmbedder::default();
        let env = SearchEnv { agent, evaluator: &self.evaluator, ctx: &self.ctx, cache: &cache, embedder: &embedder };
        run_search(base, cfg, &env)
    }
}

fn cfg() -> SearchConfig {
    SearchConfig { seed: 3, sampling_rate: 0.5, ..SearchConfig::default() }
}

#[test]
fn recorded_feedback_is_score_minus_baseline() {
    let h = Harness::new();
    let agent = HillClimbAgent::default();
    let result = h.run(&agent, &corpus(120, 0.4, 1), &cfg()).unwrap();
    assert!(!result.rounds.is_empty());
    for round in &result.rounds {
        assert_eq!(round.strategies.len(), round.scores.len());
        assert_eq!(round.scores.len(), round.relative_scores.len());
        assert!((1..=6).contains(&round.strategies.len()));
        for (r, s) in round.scores.iter().zip(&round.relative_scores) {
            assert_eq!(*s, r - result.baseline_score);
        }
    }
}

#[test]
fn never_exceeds_the_round_budget() {
    for max_rounds in 1..=5 {
        let h = Harness::new();
        let agent = ScriptedAgent::new("forever", |req| {
            let t = req.messages.iter().filter(|m| m.role == dpforge::agent::ChatRole::Assistant).count();
            let space = dpforge::strategy::enumerate_space();
            Ok(format_combinations(&space[1 + 2 * t..3 + 2 * t]))
        });
        let result = h.run(&agent, &corpus(60, 0.3, 2), &SearchConfig { max_rounds, ..cfg() }).unwrap();
        assert_eq!(result.termination, Termination::Budget);
        assert_eq!(result.rounds_executed, max_rounds);
        assert_eq!(result.rounds.len(), max_rounds as usize);
        assert_eq!(agent.calls(), max_rounds as usize);
    }
}

#[test]
fn baseline_is_evaluated_once_and_repeats_are_echoed() {
    let h = Harness::new();
    let agent = ScriptedAgent::sequence(
        "repeat",
        vec![
            propose(&["Cleaning", "Selection"]),
            propose(&["Cleaning", "NONE", "Cleaning -> Selection"]),
            propose(&["Selection", "Cleaning -> Selection"]),
        ],
    );
    let result = h.run(&agent, &corpus(80, 0.3, 4), &SearchConfig { max_rounds: 3, ..cfg() }).unwrap();
    let records = h.evaluator.log().records();
    assert_eq!(records.iter().filter(|r| r.strategy.is_empty()).count(), 1);
    assert_eq!(records[0].round, 0);
    assert_eq!(records.len(), 4);
    let echoed: Vec<Vec<bool>> = result.rounds.iter().map(|r| r.reused.clone()).collect();
    assert_eq!(echoed, vec![vec![false, false], vec![true, true, false], vec![true, true]]);
    let none_pos = result.rounds[1].strategies.iter().position(Strategy::is_empty).unwrap();
    assert_eq!(result.rounds[1].relative_scores[none_pos], 0.0);
}

#[test]
fn log_has_one_line_per_evaluation() {
    let h = Harness::new();
    let agent = HillClimbAgent::default();
    let result = h.run(&agent, &corpus(120, 0.4, 5), &cfg()).unwrap();
    let records = h.evaluator.log().records();
    let mut seen: HashMap<(u32, Strategy), usize> = HashMap::new();
    for r in &records {
        *seen.entry((r.round, r.strategy.clone())).or_default() += 1;
        assert!(r.wall_ms >= 0.0);
    }
    assert!(seen.values().all(|&n| n == 1));
    let mut expected = vec![(0, Strategy::none())];
    for round in &result.rounds {
        for (f, reused) in round.strategies.iter().zip(&round.reused) {
            if !reused {
                expected.push((round.index, f.clone()));
            }
        }
    }
    let logged: Vec<(u32, Strategy)> = records.iter().map(|r| (r.round, r.strategy.clone())).collect();
    assert_eq!(logged, expected);
    for r in &records {
        let round_score = result
            .rounds
            .iter()
            .flat_map(|x| x.strategies.iter().zip(&x.scores))
            .find(|(f, _)| **f == r.strategy)
            .map(|(_, s)| *s)
            .unwrap_or(result.baseline_score);
        assert_eq!(r.score, Some(round_score));
    }
}

#[test]
fn identical_inputs_give_identical_results() {
    let base = corpus(150, 0.35, 6);
    let run = || {
        let h = Harness::new();
        let r = h.run(&HillClimbAgent::default(), &base, &cfg()).unwrap();
        (
            serde_json::to_string(&r.rounds).unwrap(),
            serde_json::to_string(&r.conversation).unwrap(),
            r.best_strategy,
            r.termination,
            r.baseline_score.to_bits(),
            r.sampled_fingerprint,
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn markers_end_the_search() {
    let base = corpus(60, 0.3, 7);
    let h = Harness::new();
    let agent = ScriptedAgent::sequence(
        "best",
        vec![
            propose(&["Cleaning", "Selection"]),
            format!("{BEST_TEAM_MARKER}\n{}", format_combinations(&strategies(&["Selection"]))),
        ],
    );
    let r = h.run(&agent, &base, &cfg()).unwrap();
    assert_eq!(r.termination, Termination::BestTeam);
    assert_eq!(r.best_strategy, "Selection".parse().unwrap());
    assert_eq!(r.rounds_executed, 2);
    assert_eq!(r.rounds.len(), 1);

    let h = Harness::new();
    let agent = ScriptedAgent::sequence("none", vec![format!("{NO_PROCESSING_MARKER}\n{BEST_TEAM_MARKER}")]);
    let r = h.run(&agent, &base, &cfg()).unwrap();
    assert_eq!(r.termination, Termination::NoProcessing);
    assert!(r.best_strategy.is_empty());
    assert_eq!(r.best_score, Some(0.0));
}

#[test]
fn one_reprompt_then_failure() {
    let base = corpus(60, 0.3, 8);
    let h = Harness::new();
    let agent = ScriptedAgent::sequence("recover", vec!["I am not sure.".into(), propose(&["Cleaning"]), NO_PROCESSING_MARKER.into()]);
    let r = h.run(&agent, &base, &cfg()).unwrap();
    assert_eq!(r.rounds.len(), 1);
    assert_eq!(agent.calls(), 3);

    let h = Harness::new();
    let agent = ScriptedAgent::sequence("hopeless", vec!["no idea".into()]);
    let err = h.run(&agent, &base, &cfg()).unwrap_err();
    assert!(matches!(err, SearchError::Parse(_)), "{err}");
    assert_eq!(agent.calls(), 2);
}

#[test]
fn oversized_groups_are_truncated() {
    let h = Harness::new();
    let all: Vec<&str> = vec![
        "Cleaning", "Selection", "Generation", "Optimization", "Cleaning -> Selection", "Selection -> Cleaning",
        "Generation -> Cleaning", "Optimization -> Cleaning",
    ];
    let agent = ScriptedAgent::sequence("wide", vec![propose(&all), NO_PROCESSING_MARKER.into()]);
    let r = h.run(&agent, &corpus(60, 0.3, 9), &cfg()).unwrap();
    assert_eq!(r.rounds[0].strategies, strategies(&all[..6]));
}

struct FlakyTrainer {
    calls: AtomicUsize,
}

impl TrainerClient for FlakyTrainer {
    fn identity(&self) -> String {
        "test:flaky-trainer".into()
    }

    fn train_and_score(&self, req: &TrainerRequest) -> Result<f64, ClientError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        let text = std::fs::read_to_string(&req.dataset_location).unwrap();
        match n {
            0 => Ok(0.5),
            1 => Err(ClientError::Transport("trainer went away".into())),
            _ => Ok(0.5 + text.lines().count() as f64 / 1000.0),
        }
    }
}

#[test]
fn failed_training_scores_negative_infinity_and_is_never_best() {
    let dir = tempfile::tempdir().unwrap();
    let trainer = Arc::new(FlakyTrainer { calls: AtomicUsize::new(0) });
    let mut h = Harness::new();
    let eval_cfg = EvalConfig { mode: EvalMode::Trainer, ..EvalConfig::default() };
    h.evaluator = Evaluator::proxy(eval_cfg).with_trainer(trainer.clone(), dir.path().join("staging"));
    let agent = ScriptedAgent::sequence("t", vec![propose(&["Cleaning", "Selection"])]);
    let r = h.run(&agent, &corpus(60, 0.3, 10), &SearchConfig { max_rounds: 1, ..cfg() }).unwrap();
    assert_eq!(r.rounds[0].scores[0], f64::NEG_INFINITY);
    assert_eq!(r.rounds[0].relative_scores[0], f64::NEG_INFINITY);
    assert!(r.rounds[0].scores[1].is_finite());
    assert_eq!(r.best_strategy, "Selection".parse().unwrap());
    assert_eq!(r.termination, Termination::Budget);
    let failed = h.evaluator.log().records().into_iter().find(|x| x.score.is_none()).unwrap();
    assert!(failed.error.unwrap().contains("trainer went away"));
    assert!(r.conversation.last().unwrap().content.contains("evaluation failed"));
}
