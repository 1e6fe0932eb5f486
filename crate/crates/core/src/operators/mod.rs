//! The four processing teams and their operators.
//!
//! Cleaning is rule-based and applied to the whole dataset. Optimization and
//! Generation call model clients, but only for samples the screener marks as
//! noisy; clean samples pass through byte-for-byte. Selection scores every
//! sample and keeps the top fraction.

mod minhash;
mod model_ops;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::clients::{
    ClientRole, FieldMode, HeuristicScorer, ModelClient, RetryPolicy, RuleOptimizer, TemplateGenerator,
};
use crate::corpus::{Dataset, Sample};
use crate::screener::{self, CachedScreener, HeuristicScreener, Screener};
use crate::strategy::Team;
use crate::text;

pub use minhash::{dedup_text, minhash_dedup, shingles, MinHasher};
pub use model_ops::{generate_missing, optimize_sample, select_high_quality, strip_noise};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinHashConfig {
    pub shingle_size: usize,
    pub num_permutations: usize,
    pub bands: usize,
    pub rows_per_band: usize,
    pub jaccard_threshold: f64,
}

impl Default for MinHashConfig {
    fn default() -> Self {
        MinHashConfig {
            shingle_size: 5,
            num_permutations: 128,
            bands: 16,
            rows_per_band: 8,
            jaccard_threshold: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRange {
    pub min: f64,
    pub max: f64,
}

impl RatioRange {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub fn contains(&self, v: usize) -> bool {
        v >= self.min && v <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NgramConfig {
    pub n: usize,
    pub max_repetition_ratio: f64,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig { n: 5, max_repetition_ratio: 0.3 }
    }
}

/// Thresholds and parameters for every operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    pub minhash: MinHashConfig,
    pub special_char_range: RatioRange,
    pub token_range: CountRange,
    pub ngram: NgramConfig,
    pub selection_keep_fraction: f64,
    pub optimize_mode: FieldMode,
    /// Maximum number of clean, complete samples handed to the generator as shots.
    pub generation_shots: usize,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            minhash: MinHashConfig::default(),
            special_char_range: RatioRange { min: 0.0, max: 0.25 },
            token_range: CountRange { min: 10, max: 4096 },
            ngram: NgramConfig::default(),
            selection_keep_fraction: 0.5,
            optimize_mode: FieldMode::Both,
            generation_shots: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorConfigError {
    #[error("bands x rows_per_band ({bands} x {rows}) must equal num_permutations ({perms})")]
    BandLayout { bands: usize, rows: usize, perms: usize },
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must lie in [0, 1]")]
    RatioOutOfRange(&'static str),
    #[error("{0}: lower bound exceeds upper bound")]
    InvertedRange(&'static str),
    #[error("selection_keep_fraction must lie in (0, 1]")]
    KeepFraction,
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<(), OperatorConfigError> {
        let m = &self.minhash;
        if m.shingle_size == 0 {
            return Err(OperatorConfigError::NonPositive("minhash.shingle_size"));
        }
        if m.num_permutations == 0 {
            return Err(OperatorConfigError::NonPositive("minhash.num_permutations"));
        }
        if m.bands * m.rows_per_band != m.num_permutations {
            return Err(OperatorConfigError::BandLayout {
                bands: m.bands,
                rows: m.rows_per_band,
                perms: m.num_permutations,
            });
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(m.jaccard_threshold) {
            return Err(OperatorConfigError::RatioOutOfRange("minhash.jaccard_threshold"));
        }
        let sc = self.special_char_range;
        if !unit(sc.min) || !unit(sc.max) {
            return Err(OperatorConfigError::RatioOutOfRange("special_char_range"));
        }
        if sc.min > sc.max {
            return Err(OperatorConfigError::InvertedRange("special_char_range"));
        }
        if self.token_range.min > self.token_range.max {
            return Err(OperatorConfigError::InvertedRange("token_range"));
        }
        if self.ngram.n == 0 {
            return Err(OperatorConfigError::NonPositive("ngram.n"));
        }
        if !unit(self.ngram.max_repetition_ratio) {
            return Err(OperatorConfigError::RatioOutOfRange("ngram.max_repetition_ratio"));
        }
        if !(self.selection_keep_fraction > 0.0 && self.selection_keep_fraction <= 1.0) {
            return Err(OperatorConfigError::KeepFraction);
        }
        Ok(())
    }

    /// Stable digest of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Which cleaning filter a sample violates, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterViolation {
    SpecialChars,
    TokenRange,
    NgramRepetition,
}

impl FilterViolation {
    pub fn reason(self) -> &'static str {
        match self {
            FilterViolation::SpecialChars => "special-chars",
            FilterViolation::TokenRange => "token-range",
            FilterViolation::NgramRepetition => "ngram-repetition",
        }
    }
}

/// Filter checks on the sample's combined question/answer text.
pub fn filter_violations(s: &Sample, cfg: &OperatorConfig) -> Vec<FilterViolation> {
    let combined = s.combined_text();
    let tokens = text::tokenize(&combined);
    let mut out = Vec::new();
    if !cfg.special_char_range.contains(text::special_char_ratio(&combined)) {
        out.push(FilterViolation::SpecialChars);
    }
    if !cfg.token_range.contains(tokens.len()) {
        out.push(FilterViolation::TokenRange);
    }
    if text::repetition_of_tokens(&tokens, cfg.ngram.n) > cfg.ngram.max_repetition_ratio {
        out.push(FilterViolation::NgramRepetition);
    }
    out
}

pub fn passes_filters(s: &Sample, cfg: &OperatorConfig) -> bool {
    filter_violations(s, cfg).is_empty()
}

/// A sample cleaning would leave untouched: no strippable noise and every filter passes.
pub fn is_rule_clean(s: &Sample, cfg: &OperatorConfig) -> bool {
    !text::has_noise(&s.question) && !text::has_noise(&s.answer) && passes_filters(s, cfg)
}

/// Dedup, then noise stripping, then the special-char/token/n-gram filters.
pub fn apply_cleaning(d: &Dataset, cfg: &OperatorConfig) -> Dataset {
    let deduped = minhash_dedup(d, &cfg.minhash);
    let kept: Vec<Sample> = deduped
        .into_samples()
        .into_iter()
        .map(|s| strip_noise(&s))
        .filter(|s| passes_filters(s, cfg))
        .collect();
    Dataset::from_samples_unchecked(kept)
}

/// Everything a team application needs: thresholds, clients, the screener and
/// the run seed.
#[derive(Clone)]
pub struct OperatorContext {
    pub config: OperatorConfig,
    pub optimizer: Arc<dyn ModelClient>,
    pub generator: Arc<dyn ModelClient>,
    pub scorer: Arc<dyn ModelClient>,
    pub screener: Arc<dyn Screener>,
    pub seed: u64,
    pub retry: RetryPolicy,
    pool: Arc<rayon::ThreadPool>,
    screening: Arc<Mutex<Duration>>,
}

impl std::fmt::Debug for OperatorContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorContext")
            .field("optimizer", &self.optimizer.identity())
            .field("generator", &self.generator.identity())
            .field("scorer", &self.scorer.identity())
            .field("screener", &self.screener.identity())
            .field("seed", &self.seed)
            .finish()
    }
}

pub const DEFAULT_MAX_IN_FLIGHT: usize = 8;

impl OperatorContext {
    /// Deterministic built-in clients and the heuristic screener.
    pub fn builtin(config: OperatorConfig, seed: u64) -> Self {
        let screener = Arc::new(CachedScreener::new(Arc::new(HeuristicScreener::new(config.clone()))));
        OperatorContext {
            optimizer: Arc::new(RuleOptimizer),
            generator: Arc::new(TemplateGenerator),
            scorer: Arc::new(HeuristicScorer::new(config.clone())),
            screener,
            config,
            seed,
            retry: RetryPolicy::default(),
            pool: Arc::new(build_pool(DEFAULT_MAX_IN_FLIGHT)),
            screening: Arc::new(Mutex::new(Duration::ZERO)),
        }
    }

    pub fn with_optimizer(mut self, c: Arc<dyn ModelClient>) -> Self {
        self.optimizer = c;
        self
    }

    pub fn with_generator(mut self, c: Arc<dyn ModelClient>) -> Self {
        self.generator = c;
        self
    }

    pub fn with_scorer(mut self, c: Arc<dyn ModelClient>) -> Self {
        self.scorer = c;
        self
    }

    pub fn with_screener(mut self, s: Arc<dyn Screener>) -> Self {
        self.screener = s;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Bound on concurrent per-sample client calls.
    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.pool = Arc::new(build_pool(n));
        self
    }

    pub(crate) fn pool(&self) -> &rayon::ThreadPool {
        &self.pool
    }

    /// Wall time spent screening samples inside team application. Shared by
    /// clones of this context.
    pub fn screening_time(&self) -> Duration {
        *self.screening.lock().unwrap()
    }

    fn timed_screen<T>(&self, f: impl FnOnce() -> T) -> T {
        let started = Instant::now();
        let out = f();
        *self.screening.lock().unwrap() += started.elapsed();
        out
    }

    /// Digest over the operator config and the identity of every client; part
    /// of each cache key so reuse only happens under identical operators.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.config.digest().as_bytes());
        for id in [
            self.optimizer.identity(),
            self.generator.identity(),
            self.scorer.identity(),
            self.screener.identity(),
        ] {
            h.update(b"|");
            h.update(id.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

fn build_pool(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .thread_name(|i| format!("dpforge-op-{i}"))
        .build()
        .expect("thread pool")
}

/// Applies one team. Optimization and Generation only touch screener-noisy samples.
pub fn apply_team(team: Team, d: &Dataset, ctx: &OperatorContext) -> Dataset {
    match team {
        Team::Cleaning => apply_cleaning(d, &ctx.config),
        Team::Selection => select_high_quality(d, ctx.scorer.as_ref(), ctx.config.selection_keep_fraction, ctx),
        Team::Optimization => {
            let mode = ctx.config.optimize_mode;
            process_noisy(d, ctx, |s, _| optimize_sample(s, mode, ctx.optimizer.as_ref(), ctx))
        }
        Team::Generation => {
            let shots = pick_shots(d, ctx);
            process_noisy(d, ctx, |s, _| generate_missing(s, &shots, ctx.generator.as_ref(), ctx))
        }
    }
}

fn process_noisy(
    d: &Dataset,
    ctx: &OperatorContext,
    op: impl Fn(&Sample, usize) -> Sample + Sync,
) -> Dataset {
    use rayon::prelude::*;
    let labels = ctx.timed_screen(|| screener::classify_all(d, ctx.screener.as_ref(), ctx.pool()));
    if labels.iter().all(|l| l.is_clean()) {
        return d.clone();
    }
    let out: Vec<Sample> = ctx.pool().install(|| {
        d.samples()
            .par_iter()
            .zip(labels.par_iter())
            .enumerate()
            .map(|(i, (s, label))| if label.is_clean() { s.clone() } else { op(s, i) })
            .collect()
    });
    Dataset::from_samples_unchecked(out)
}

/// Shots for generation: clean, complete samples first; any complete sample otherwise.
fn pick_shots(d: &Dataset, ctx: &OperatorContext) -> Vec<Sample> {
    let limit = ctx.config.generation_shots;
    let complete = |s: &&Sample| !s.question.is_empty() && !s.answer.is_empty();
    let clean: Vec<Sample> = ctx.timed_screen(|| {
        d.iter()
            .filter(complete)
            .filter(|s| ctx.screener.classify(s).label.is_clean())
            .take(limit)
            .cloned()
            .collect()
    });
    if !clean.is_empty() {
        return clean;
    }
    d.iter().filter(complete).take(limit).cloned().collect()
}

/// Role check used by the model-backed operators.
pub(crate) fn role_mismatch(client: &dyn ModelClient, expected: ClientRole) -> Option<String> {
    (client.role() != expected).then(|| format!("expected {expected} client, got {}", client.role()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn long_q(i: usize) -> String {
        format!("Question number {i} asks about the growth cycle of tomato plants in a warm greenhouse")
    }

    #[test]
    fn default_config_validates() {
        OperatorConfig::default().validate().unwrap();
    }

    #[test]
    fn band_layout_checked() {
        let mut c = OperatorConfig::default();
        c.minhash.bands = 10;
        assert!(matches!(c.validate(), Err(OperatorConfigError::BandLayout { .. })));
        let mut c = OperatorConfig::default();
        c.token_range = CountRange { min: 5, max: 1 };
        assert!(matches!(c.validate(), Err(OperatorConfigError::InvertedRange(_))));
        let mut c = OperatorConfig::default();
        c.selection_keep_fraction = 0.0;
        assert_eq!(c.validate(), Err(OperatorConfigError::KeepFraction));
    }

    #[test]
    fn cleaning_fixpoint_on_clean_data() {
        let topics = [
            ("How often should a young tomato plant be watered during a hot summer week", "Water deeply every two days and mulch to hold moisture."),
            ("Which rivers flow through the largest cities of central Europe today", "The Danube, the Vltava and the Rhine are the main ones."),
            ("Why does bread dough need to rest before it goes into the oven", "Resting lets gluten relax and yeast produce gas for rise."),
            ("What is the simplest way to explain compound interest to a child", "Money earns extra money, and that extra money earns more too."),
            ("When did people first begin using the printing press across Europe", "Movable type spread across Europe in the late fifteenth century."),
        ];
        let d = Dataset::new(
            topics.iter().enumerate().map(|(i, (q, a))| Sample::new(format!("{i}"), *q, *a)).collect(),
        )
        .unwrap();
        let out = apply_cleaning(&d, &OperatorConfig::default());
        assert_eq!(out, d);
    }

    #[test]
    fn cleaning_mixed_corpus_survivors() {
        let cfg = OperatorConfig::default();
        let good = Sample::new("good", long_q(1), "Keep the soil moist and give eight hours of light daily.");
        let dup = Sample::new("dup", long_q(1), "Keep the soil moist and give eight hours of light daily.");
        let markup = Sample::new(
            "markup",
            "<p>Why do leaves turn yellow in autumn when the days get shorter?</p>",
            "Chlorophyll breaks down &amp; other pigments show.",
        );
        let long = Sample::new("long", "word ".repeat(5000), "x");
        let d = Dataset::new(vec![good.clone(), dup, markup, long]).unwrap();
        let out = apply_cleaning(&d, &cfg);
        let ids: Vec<&str> = out.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["good", "markup"]);
        assert_eq!(out.samples()[1].question, "Why do leaves turn yellow in autumn when the days get shorter?");
        assert_eq!(out.samples()[1].answer, "Chlorophyll breaks down & other pigments show.");
    }

    #[test]
    fn cleaning_empty_dataset() {
        let ctx = OperatorContext::builtin(OperatorConfig::default(), 0);
        assert!(apply_team(Team::Cleaning, &Dataset::default(), &ctx).is_empty());
    }

    #[test]
    fn context_digest_tracks_clients_and_config() {
        let a = OperatorContext::builtin(OperatorConfig::default(), 0);
        let b = OperatorContext::builtin(OperatorConfig::default(), 0);
        assert_eq!(a.digest(), b.digest());
        let mut cfg = OperatorConfig::default();
        cfg.selection_keep_fraction = 0.3;
        assert_ne!(a.digest(), OperatorContext::builtin(cfg, 0).digest());
        let c = a.clone().with_optimizer(Arc::new(crate::clients::ScriptedClient::new(
            ClientRole::Optimizer,
            "x",
            |_| Ok(crate::clients::ModelResponse::text("")),
        )));
        assert_ne!(a.digest(), c.digest());
    }
}
