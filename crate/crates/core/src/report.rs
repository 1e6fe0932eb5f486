//! Run reports.
//!
//! `report.json` holds only values that are a function of the configuration
//! and the seed, so repeated runs produce identical bytes. Wall-clock phase
//! timings go to a separate `timings.json`.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context as _;
use serde::{Deserialize, Serialize};

use crate::agent::{format_score, SearchResult, Termination};
use crate::cache::CacheStats;
use crate::corpus::{Dataset, Digest};
use crate::strategy::Strategy;

pub const REPORT_FILE: &str = "report.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub samples: usize,
    pub fingerprint: Digest,
}

impl DatasetInfo {
    pub fn of(d: &Dataset) -> Self {
        DatasetInfo { samples: d.len(), fingerprint: d.fingerprint() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingInfo {
    pub rate: f64,
    pub input_samples: usize,
    pub input_noisy: usize,
    pub sampled: usize,
    pub sampled_noisy: usize,
    pub fingerprint: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineInfo {
    pub strategy: Strategy,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryReport {
    pub strategy: Strategy,
    /// `None` when evaluation failed.
    pub score: Option<f64>,
    pub relative_score: Option<f64>,
    /// Score repeated from an earlier round rather than re-evaluated.
    pub echoed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub index: u32,
    pub entries: Vec<EntryReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestInfo {
    pub strategy: Strategy,
    pub relative_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientIdentities {
    pub agent: String,
    pub embedder: String,
    pub screener: String,
    pub optimizer: String,
    pub generator: String,
    pub scorer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trainer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub eval_mode: String,
    pub dataset: DatasetInfo,
    pub sampling: SamplingInfo,
    pub baseline: BaselineInfo,
    pub rounds: Vec<RoundReport>,
    pub best: BestInfo,
    pub termination: Termination,
    pub rounds_executed: u32,
    /// Distinct strategies evaluated, the baseline included.
    pub evaluations: usize,
    pub cache: CacheStats,
    pub final_dataset: DatasetInfo,
    pub clients: ClientIdentities,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl RunReport {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        result: &SearchResult,
        seed: u64,
        eval_mode: &str,
        rate: f64,
        input: &Dataset,
        final_dataset: &Dataset,
        cache: CacheStats,
        clients: ClientIdentities,
    ) -> Self {
        let rounds: Vec<RoundReport> = result
            .rounds
            .iter()
            .map(|r| RoundReport {
                index: r.index,
                entries: (0..r.strategies.len())
                    .map(|k| EntryReport {
                        strategy: r.strategies[k].clone(),
                        score: finite(r.scores[k]),
                        relative_score: finite(r.relative_scores[k]),
                        echoed: r.reused[k],
                    })
                    .collect(),
            })
            .collect();
        let evaluations = 1 + result
            .rounds
            .iter()
            .flat_map(|r| r.strategies.iter().zip(&r.reused))
            .filter(|(_, reused)| !**reused)
            .count();
        RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            eval_mode: eval_mode.to_string(),
            dataset: DatasetInfo::of(input),
            sampling: SamplingInfo {
                rate,
                input_samples: result.sample.input_samples,
                input_noisy: result.sample.input_noisy,
                sampled: result.sample.sampled,
                sampled_noisy: result.sample.sampled_noisy,
                fingerprint: result.sampled_fingerprint,
            },
            baseline: BaselineInfo { strategy: Strategy::none(), score: result.baseline_score },
            rounds,
            best: BestInfo { strategy: result.best_strategy.clone(), relative_score: result.best_score },
            termination: result.termination,
            rounds_executed: result.rounds_executed,
            evaluations,
            cache,
            final_dataset: DatasetInfo::of(final_dataset),
            clients,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Milliseconds per phase. Phases never overlap.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub sampling_ms: f64,
    pub screening_ms: f64,
    pub processing_ms: f64,
    pub evaluation_ms: f64,
    pub search_total_ms: f64,
    pub final_apply_ms: f64,
    pub run_total_ms: f64,
}

impl Timings {
    pub fn phase_sum_ms(&self) -> f64 {
        self.sampling_ms + self.screening_ms + self.processing_ms + self.evaluation_ms
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn opt_score(v: Option<f64>) -> String {
    v.map_or_else(|| format_score(f64::NEG_INFINITY), format_score)
}

/// Human-readable summary.
pub fn render_text(r: &RunReport, timings: Option<&Timings>) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "dpforge {} run, seed {}, {} evaluation", r.version, r.seed, r.eval_mode);
    let _ = writeln!(o, "dataset      {} samples ({})", r.dataset.samples, r.dataset.fingerprint.short());
    let _ = writeln!(
        o,
        "sample       {} of {} at rate {} ({} noisy of {} noisy)",
        r.sampling.sampled, r.sampling.input_samples, r.sampling.rate, r.sampling.sampled_noisy, r.sampling.input_noisy
    );
    let _ = writeln!(o, "baseline     r0 = {:.6}", r.baseline.score);
    for round in &r.rounds {
        let _ = writeln!(o, "\nround {}", round.index);
        let width = round.entries.iter().map(|e| e.strategy.to_string().len()).max().unwrap_or(0);
        for e in &round.entries {
            let raw = e.score.map_or_else(|| "failed".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                o,
                "  {:<width$}  r = {raw:<9}  s = {}{}",
                e.strategy.to_string(),
                opt_score(e.relative_score),
                if e.echoed { "  (echoed)" } else { "" }
            );
        }
    }
    let _ = writeln!(o);
    let _ = writeln!(o, "best         {} (s = {})", r.best.strategy, opt_score(r.best.relative_score));
    let _ = writeln!(o, "termination  {} after {} agent turns", r.termination, r.rounds_executed);
    let _ = writeln!(o, "evaluations  {}", r.evaluations);
    let _ = writeln!(
        o,
        "cache        {} entries, {} hits, {} team runs, {} team runs saved",
        r.cache.entries, r.cache.hits, r.cache.team_invocations, r.cache.team_invocations_saved
    );
    let _ = writeln!(o, "final        {} samples ({})", r.final_dataset.samples, r.final_dataset.fingerprint.short());
    if let Some(t) = timings {
        let _ = writeln!(o, "\nwall clock (ms)");
        for (name, v) in [
            ("sampling", t.sampling_ms),
            ("screening", t.screening_ms),
            ("processing", t.processing_ms),
            ("evaluation", t.evaluation_ms),
            ("search total", t.search_total_ms),
            ("final apply", t.final_apply_ms),
            ("run total", t.run_total_ms),
        ] {
            let _ = writeln!(o, "  {name:<13}{v:>12.1}");
        }
    }
    o
}
