//! Binary clean/noisy screening of samples.
//!
//! The heuristic screener shares its thresholds with the cleaning operators, so
//! every sample the cleaning filters would drop is classified noisy. A trained
//! model can be plugged in through [`Screener`]; [`CachedScreener`] memoizes
//! verdicts per sample fingerprint within a run.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Digest, Sample};
use crate::operators::{filter_violations, OperatorConfig};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// No further processing required (F(x) = 0).
    Clean,
    /// Further processing needed (F(x) = 1).
    Noisy,
}

impl Label {
    pub fn is_clean(self) -> bool {
        self == Label::Clean
    }

    /// Wire encoding: 0 clean, 1 noisy.
    pub fn as_bit(self) -> u8 {
        match self {
            Label::Clean => 0,
            Label::Noisy => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreenerVerdict {
    pub label: Label,
    pub reasons: Vec<String>,
    /// Set when a remote screener failed and the heuristic answered instead.
    #[serde(default)]
    pub fallback: bool,
}

impl ScreenerVerdict {
    pub fn clean() -> Self {
        ScreenerVerdict { label: Label::Clean, reasons: Vec::new(), fallback: false }
    }
}

pub trait Screener: Send + Sync {
    fn identity(&self) -> String;
    fn classify(&self, s: &Sample) -> ScreenerVerdict;
}

#[derive(Debug, Clone)]
pub struct HeuristicScreener {
    config: OperatorConfig,
}

impl HeuristicScreener {
    pub fn new(config: OperatorConfig) -> Self {
        HeuristicScreener { config }
    }
}

impl Screener for HeuristicScreener {
    fn identity(&self) -> String {
        format!("builtin:heuristic-screener:v1:{}", &self.config.digest()[..16])
    }

    fn classify(&self, s: &Sample) -> ScreenerVerdict {
        let mut reasons = Vec::new();
        if s.question.is_empty() {
            reasons.push("missing-question".to_string());
        }
        if s.answer.is_empty() {
            reasons.push("missing-answer".to_string());
        }
        if text::has_noise(&s.question) || text::has_noise(&s.answer) {
            reasons.push("markup".to_string());
        }
        reasons.extend(filter_violations(s, &self.config).into_iter().map(|v| v.reason().to_string()));
        let label = if reasons.is_empty() { Label::Clean } else { Label::Noisy };
        ScreenerVerdict { label, reasons, fallback: false }
    }
}

/// Memoizes another screener's verdicts by sample fingerprint and tracks the
/// time spent in the inner screener.
pub struct CachedScreener {
    inner: Arc<dyn Screener>,
    memo: Mutex<HashMap<Digest, ScreenerVerdict>>,
    inner_calls: AtomicUsize,
    busy: Mutex<Duration>,
}

impl CachedScreener {
    pub fn new(inner: Arc<dyn Screener>) -> Self {
        CachedScreener {
            inner,
            memo: Mutex::new(HashMap::new()),
            inner_calls: AtomicUsize::new(0),
            busy: Mutex::new(Duration::ZERO),
        }
    }

    /// Number of verdicts the wrapped screener actually computed.
    pub fn inner_calls(&self) -> usize {
        self.inner_calls.load(Ordering::SeqCst)
    }

    pub fn busy_time(&self) -> Duration {
        *self.busy.lock().unwrap()
    }
}

impl Screener for CachedScreener {
    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn classify(&self, s: &Sample) -> ScreenerVerdict {
        let key = s.fingerprint();
        if let Some(v) = self.memo.lock().unwrap().get(&key) {
            return v.clone();
        }
        let started = Instant::now();
        let v = self.inner.classify(s);
        *self.busy.lock().unwrap() += started.elapsed();
        self.inner_calls.fetch_add(1, Ordering::SeqCst);
        self.memo.lock().unwrap().insert(key, v.clone());
        v
    }
}

pub fn classify(s: &Sample, screener: &dyn Screener) -> ScreenerVerdict {
    screener.classify(s)
}

pub(crate) fn classify_all(d: &Dataset, screener: &dyn Screener, pool: &rayon::ThreadPool) -> Vec<Label> {
    use rayon::prelude::*;
    pool.install(|| d.samples().par_iter().map(|s| screener.classify(s).label).collect())
}

/// Splits `d` into (clean, noisy), keeping relative order within each part.
pub fn partition(d: &Dataset, screener: &dyn Screener) -> (Dataset, Dataset) {
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for s in d.iter() {
        match screener.classify(s).label {
            Label::Clean => clean.push(s.clone()),
            Label::Noisy => noisy.push(s.clone()),
        }
    }
    (Dataset::from_samples_unchecked(clean), Dataset::from_samples_unchecked(noisy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn good(i: usize) -> Sample {
        Sample::new(
            format!("g{i}"),
            format!("How should sample {i} be stored to keep it fresh for a week"),
            "Keep it sealed in a cool dry place away from sunlight.",
        )
    }

    fn screener() -> HeuristicScreener {
        HeuristicScreener::new(OperatorConfig::default())
    }

    #[test]
    fn missing_answer_is_noisy() {
        let v = screener().classify(&Sample::new("1", "q", ""));
        assert_eq!(v.label, Label::Noisy);
        assert!(v.reasons.contains(&"missing-answer".to_string()));
    }

    #[test]
    fn well_formed_is_clean() {
        assert_eq!(screener().classify(&good(0)), ScreenerVerdict::clean());
    }

    #[test]
    fn repetition_is_noisy() {
        // 40 tokens cycling through 3 words: 3 distinct 5-grams of 36 -> ratio ~0.917
        let words = ["alpha", "beta", "gamma"];
        let q: Vec<&str> = (0..40).map(|i| words[i % 3]).collect();
        let s = Sample::new("r", q.join(" "), "");
        let ratio = text::ngram_repetition_ratio(&s.combined_text(), 5);
        assert!(ratio > 0.9 - 1e-9, "{ratio}");
        let v = screener().classify(&s);
        assert_eq!(v.label, Label::Noisy);
        assert!(v.reasons.contains(&"ngram-repetition".to_string()));
    }

    #[test]
    fn partition_keeps_order() {
        let mut v: Vec<Sample> = (0..5).map(good).collect();
        v[1].answer.clear();
        v[3].question = "<b>bold</b> question text that is long enough to pass the filter".into();
        let d = Dataset::new(v).unwrap();
        let (clean, noisy) = partition(&d, &screener());
        let ids = |d: &Dataset| d.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&clean), ["g0", "g2", "g4"]);
        assert_eq!(ids(&noisy), ["g1", "g3"]);
    }

    #[test]
    fn partition_extremes() {
        let d = Dataset::new((0..3).map(good).collect()).unwrap();
        let (c, n) = partition(&d, &screener());
        assert_eq!(c, d);
        assert!(n.is_empty());
        let d = Dataset::new((0..3).map(|i| Sample::new(format!("{i}"), "", "")).collect()).unwrap();
        let (c, n) = partition(&d, &screener());
        assert!(c.is_empty());
        assert_eq!(n, d);
    }

    #[test]
    fn cached_screener_computes_once() {
        let c = CachedScreener::new(Arc::new(screener()));
        let s = good(1);
        let a = c.classify(&s);
        let b = c.classify(&s);
        assert_eq!(a, b);
        assert_eq!(c.inner_calls(), 1);
    }
}
