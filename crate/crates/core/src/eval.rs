//! Strategy evaluation: process the sampled dataset with a strategy, then score
//! the result either through a trainer client (fine-tune and validate) or with
//! the deterministic proxy scorer.
//!
//! The proxy is a stand-in for model training. It is a weighted sum of four
//! dataset-level components, each in [0, 1]:
//!
//! * `passing`: fraction of samples that cleaning would leave untouched
//!   (vacuously 1 for an empty dataset),
//! * `completeness`: fraction with both question and answer present,
//! * `uniqueness`: 1 minus the fraction of samples that duplicate an earlier
//!   sample by field-wise substring containment,
//! * `adequacy`: mean length adequacy against the token range.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheError, StrategyCache};
use crate::clients::ClientError;
use crate::corpus::{save_dataset, Dataset, Digest, Sample};
use crate::operators::{is_rule_clean, OperatorConfig, OperatorContext};
use crate::strategy::Strategy;
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Proxy,
    Trainer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub base_model: String,
    pub epochs: u32,
    pub validation_set: String,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig { base_model: String::new(), epochs: 3, validation_set: String::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyWeights {
    pub passing: f64,
    pub completeness: f64,
    pub uniqueness: f64,
    pub adequacy: f64,
}

impl Default for ProxyWeights {
    fn default() -> Self {
        ProxyWeights { passing: 0.4, completeness: 0.3, uniqueness: 0.2, adequacy: 0.1 }
    }
}

impl ProxyWeights {
    pub fn equal() -> Self {
        ProxyWeights { passing: 0.25, completeness: 0.25, uniqueness: 0.25, adequacy: 0.25 }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.passing, self.completeness, self.uniqueness, self.adequacy]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub trainer: TrainerConfig,
    pub proxy_weights: ProxyWeights,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { mode: EvalMode::Proxy, trainer: TrainerConfig::default(), proxy_weights: ProxyWeights::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalConfigError {
    #[error("proxy weights must be non-negative and sum to 1 (sum = {0})")]
    Weights(f64),
    #[error("trainer epochs must be at least 1")]
    Epochs,
    #[error("trainer mode requires trainer.base_model and trainer.validation_set")]
    TrainerFields,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalConfigError> {
        let w = self.proxy_weights.as_array();
        let sum: f64 = w.iter().sum();
        if w.iter().any(|x| *x < 0.0 || !x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(EvalConfigError::Weights(sum));
        }
        if self.trainer.epochs == 0 {
            return Err(EvalConfigError::Epochs);
        }
        if self.mode == EvalMode::Trainer
            && (self.trainer.base_model.is_empty() || self.trainer.validation_set.is_empty())
        {
            return Err(EvalConfigError::TrainerFields);
        }
        Ok(())
    }
}

/// Wire request to a trainer: fine-tune `base_model` on the dataset for
/// `epochs` and report the validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerRequest {
    pub dataset_location: String,
    pub base_model: String,
    pub epochs: u32,
    pub validation_set: String,
}

pub trait TrainerClient: Send + Sync {
    fn identity(&self) -> String;
    /// Validation score in [0, 1].
    fn train_and_score(&self, req: &TrainerRequest) -> Result<f64, ClientError>;
}

/// Per-sample length adequacy: 1 inside the token range, decaying linearly
/// below the minimum and as `max / tokens` above the maximum.
pub fn length_adequacy(s: &Sample, cfg: &OperatorConfig) -> f64 {
    let t = text::token_count(&s.combined_text());
    let r = cfg.token_range;
    if t == 0 {
        0.0
    } else if t < r.min {
        t as f64 / r.min as f64
    } else if t > r.max {
        r.max as f64 / t as f64
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyComponents {
    pub passing: f64,
    pub completeness: f64,
    pub uniqueness: f64,
    pub adequacy: f64,
}

fn contains_either(a: &str, b: &str) -> bool {
    if a.len() >= b.len() {
        a.contains(b)
    } else {
        b.contains(a)
    }
}

pub fn proxy_components(d: &Dataset, cfg: &OperatorConfig) -> ProxyComponents {
    let n = d.len();
    if n == 0 {
        return ProxyComponents { passing: 1.0, completeness: 0.0, uniqueness: 0.0, adequacy: 0.0 };
    }
    let nf = n as f64;
    let samples = d.samples();
    let passing = samples.iter().filter(|s| is_rule_clean(s, cfg)).count() as f64 / nf;
    let completeness = samples.iter().filter(|s| !s.question.is_empty() && !s.answer.is_empty()).count() as f64 / nf;
    let redundant = (1..n)
        .filter(|&j| {
            let sj = &samples[j];
            samples[..j]
                .iter()
                .any(|si| contains_either(&si.question, &sj.question) && contains_either(&si.answer, &sj.answer))
        })
        .count();
    let uniqueness = 1.0 - redundant as f64 / nf;
    let adequacy = samples.iter().map(|s| length_adequacy(s, cfg)).sum::<f64>() / nf;
    ProxyComponents { passing, completeness, uniqueness, adequacy }
}

/// Weighted proxy score in [0, 1]; an empty dataset scores 0.
pub fn proxy_score(d: &Dataset, weights: &ProxyWeights, cfg: &OperatorConfig) -> f64 {
    if d.is_empty() {
        return 0.0;
    }
    let c = proxy_components(d, cfg);
    let v = weights.passing * c.passing
        + weights.completeness * c.completeness
        + weights.uniqueness * c.uniqueness
        + weights.adequacy * c.adequacy;
    v.clamp(0.0, 1.0)
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub round: u32,
    pub strategy: Strategy,
    /// `None` when evaluation failed (scored as negative infinity).
    pub score: Option<f64>,
    pub fingerprint: Digest,
    pub samples: usize,
    pub wall_ms: f64,
    pub cache_hit: bool,
    pub teams_executed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Append-only evaluation log, optionally mirrored to a JSONL file.
#[derive(Default)]
pub struct RunLog {
    records: Mutex<Vec<EvalRecord>>,
    file: Option<PathBuf>,
}

impl RunLog {
    pub fn in_memory() -> Self {
        RunLog::default()
    }

    pub fn to_file(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        fs::write(&path, b"")?;
        Ok(RunLog { records: Mutex::new(Vec::new()), file: Some(path) })
    }

    pub fn append(&self, rec: EvalRecord) -> std::io::Result<()> {
        let mut records = self.records.lock().unwrap();
        if let Some(path) = &self.file {
            let mut f = OpenOptions::new().append(true).open(path)?;
            writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes"))?;
        }
        records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> Vec<EvalRecord> {
        self.records.lock().unwrap().clone()
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub strategy: Strategy,
    /// Negative infinity when the trainer failed.
    pub score: f64,
    pub dataset: Dataset,
    pub cache_hit: bool,
    pub teams_executed: usize,
    pub processing: Duration,
    pub scoring: Duration,
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("run log: {0}")]
    Log(#[from] std::io::Error),
    #[error("staging dataset for trainer: {0}")]
    Staging(#[from] crate::corpus::CorpusError),
}

pub struct Evaluator {
    config: EvalConfig,
    trainer: Option<Arc<dyn TrainerClient>>,
    staging_dir: Option<PathBuf>,
    log: RunLog,
}

impl Evaluator {
    pub fn proxy(config: EvalConfig) -> Self {
        Evaluator { config, trainer: None, staging_dir: None, log: RunLog::in_memory() }
    }

    /// Trainer mode needs a directory where processed datasets are written for
    /// the trainer to pick up.
    pub fn with_trainer(mut self, trainer: Arc<dyn TrainerClient>, staging_dir: impl Into<PathBuf>) -> Self {
        self.trainer = Some(trainer);
        self.staging_dir = Some(staging_dir.into());
        self
    }

    pub fn with_log(mut self, log: RunLog) -> Self {
        self.log = log;
        self
    }

    pub fn config(&self) -> &EvalConfig {
        &self.config
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    fn score(&self, d: &Dataset, ctx: &OperatorContext) -> Result<(f64, Option<String>), EvalError> {
        match (self.config.mode, &self.trainer, &self.staging_dir) {
            (EvalMode::Trainer, Some(trainer), Some(dir)) => {
                fs::create_dir_all(dir).map_err(EvalError::Log)?;
                let path = dir.join(format!("{}.jsonl", d.fingerprint().to_hex()));
                if !path.exists() {
                    save_dataset(d, &path)?;
                }
                let req = TrainerRequest {
                    dataset_location: absolute(&path),
                    base_model: self.config.trainer.base_model.clone(),
                    epochs: self.config.trainer.epochs,
                    validation_set: self.config.trainer.validation_set.clone(),
                };
                match trainer.train_and_score(&req) {
                    Ok(v) if (0.0..=1.0).contains(&v) => Ok((v, None)),
                    Ok(v) => Ok((f64::NEG_INFINITY, Some(format!("trainer score {v} outside [0, 1]")))),
                    Err(e) => Ok((f64::NEG_INFINITY, Some(e.to_string()))),
                }
            }
            (EvalMode::Trainer, _, _) => Ok((f64::NEG_INFINITY, Some("trainer mode without a trainer client".into()))),
            (EvalMode::Proxy, _, _) => Ok((proxy_score(d, &self.config.proxy_weights, &ctx.config), None)),
        }
    }

    /// Processes `base` with `f` through the cache and scores the result.
    pub fn evaluate_strategy(
        &self,
        f: &Strategy,
        base: &Dataset,
        ctx: &OperatorContext,
        cache: &StrategyCache,
        round: u32,
    ) -> Result<Evaluation, EvalError> {
        let started = Instant::now();
        let outcome = cache.apply_with_reuse(f, base, ctx, round)?;
        let processing = started.elapsed();
        let scoring_start = Instant::now();
        let (score, error) = self.score(&outcome.dataset, ctx)?;
        let scoring = scoring_start.elapsed();
        let cache_hit = !f.is_empty() && outcome.reused > 0;
        self.log.append(EvalRecord {
            round,
            strategy: f.clone(),
            score: score.is_finite().then_some(score),
            fingerprint: outcome.dataset.fingerprint(),
            samples: outcome.dataset.len(),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            cache_hit,
            teams_executed: outcome.executed,
            error: error.clone(),
        })?;
        Ok(Evaluation {
            strategy: f.clone(),
            score,
            dataset: outcome.dataset,
            cache_hit,
            teams_executed: outcome.executed,
            processing,
            scoring,
            error,
        })
    }
}

fn absolute(p: &Path) -> String {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string()
}
