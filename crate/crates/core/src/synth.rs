//! Deterministic synthetic question-answer corpora with planted noise.
//!
//! Clean samples are random sentences over a fixed vocabulary, so two clean
//! samples are almost never near-duplicates. Each noisy sample carries a
//! `noise` meta entry naming the defect that was planted.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Sample};

pub const NOISE_META: &str = "noise";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Markup,
    MissingQuestion,
    MissingAnswer,
    Symbols,
    Repetition,
    NearDuplicate,
    TooShort,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 7] = [
        NoiseKind::Markup,
        NoiseKind::MissingQuestion,
        NoiseKind::MissingAnswer,
        NoiseKind::Symbols,
        NoiseKind::Repetition,
        NoiseKind::NearDuplicate,
        NoiseKind::TooShort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Markup => "markup",
            NoiseKind::MissingQuestion => "missing_question",
            NoiseKind::MissingAnswer => "missing_answer",
            NoiseKind::Symbols => "symbols",
            NoiseKind::Repetition => "repetition",
            NoiseKind::NearDuplicate => "near_duplicate",
            NoiseKind::TooShort => "too_short",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub samples: usize,
    /// Probability that a sample receives one planted defect.
    pub noise_rate: f64,
    pub kinds: Vec<NoiseKind>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { samples: 200, noise_rate: 0.3, kinds: NoiseKind::ALL.to_vec(), seed: 7 }
    }
}

const SUBJECTS: &[&str] = &[
    "river", "engine", "garden", "library", "planet", "recipe", "violin", "bridge", "forest", "market", "harbor",
    "glacier", "lantern", "orchard", "satellite", "cathedral", "compass", "volcano", "meadow", "telescope",
    "factory", "island", "museum", "tunnel", "canyon", "battery", "pharmacy", "festival", "desert", "airport",
];
const VERBS: &[&str] = &[
    "affect", "support", "change", "protect", "improve", "measure", "describe", "influence", "reduce", "explain",
    "connect", "shape", "limit", "predict", "balance", "repair",
];
const QUALIFIERS: &[&str] = &[
    "during winter", "in small towns", "over many decades", "for young students", "near the coast",
    "after heavy rain", "in modern cities", "on a tight budget", "without special tools", "at high altitude",
    "in early spring", "for busy families", "under bright light", "across the region", "in quiet villages",
];
const WORDS: &[&str] = &[
    "careful", "planning", "usually", "helps", "because", "local", "workers", "often", "notice", "steady",
    "improvement", "when", "simple", "routines", "are", "followed", "each", "season", "brings", "new",
    "challenges", "that", "require", "patience", "clear", "records", "make", "later", "decisions", "easier",
    "experts", "recommend", "checking", "conditions", "weekly", "while", "keeping", "costs", "under", "control",
    "most", "people", "find", "results", "visible", "within", "month", "small", "adjustments", "matter",
    "shared", "knowledge", "spreads", "quickly", "through", "community", "groups", "sturdy", "materials",
    "last", "longer", "than", "cheap", "alternatives", "regular", "maintenance", "prevents", "larger",
    "problems", "fresh", "water", "and", "good", "ventilation", "remain", "essential", "details",
];

fn sentence(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect();
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        s = first.to_uppercase() + &s[1..];
    }
    s
}

fn clean_pair(rng: &mut ChaCha8Rng) -> (String, String) {
    let q = format!(
        "How does the {} {} the {} {}, and what {} matter most?",
        SUBJECTS.choose(rng).expect("non-empty"),
        VERBS.choose(rng).expect("non-empty"),
        SUBJECTS.choose(rng).expect("non-empty"),
        QUALIFIERS.choose(rng).expect("non-empty"),
        WORDS.choose(rng).expect("non-empty"),
    );
    let a = format!("{}. {}.", sentence(rng, 8, 16), sentence(rng, 6, 14));
    (q, a)
}

fn plant(kind: NoiseKind, q: String, a: String, earlier: &[Sample], rng: &mut ChaCha8Rng) -> (String, String) {
    match kind {
        NoiseKind::Markup => (q, format!("<p>{a}</p> &amp; <b>note</b>")),
        NoiseKind::MissingQuestion => (String::new(), a),
        NoiseKind::MissingAnswer => (q, String::new()),
        NoiseKind::Symbols => {
            const GROUPS: [&str; 8] = ["###", "@@@", "$$$", "%%%", "^^^", "***", "+++", "~~~"];
            let target = q.len() + a.len();
            let mut junk = String::new();
            for g in GROUPS.iter().cycle() {
                if junk.len() >= target {
                    break;
                }
                junk.push_str(g);
                junk.push(' ');
            }
            (q, format!("{a} {}", junk.trim_end()))
        }
        NoiseKind::Repetition => {
            let phrase = sentence(rng, 3, 4).to_lowercase();
            (q, vec![phrase.as_str(); 8].join(" "))
        }
        NoiseKind::NearDuplicate => {
            let clean: Vec<&Sample> = earlier.iter().filter(|s| !s.meta.contains_key(NOISE_META)).collect();
            match clean.choose(rng) {
                Some(src) => (src.question.clone(), format!("{} Indeed.", src.answer)),
                None => (q, a),
            }
        }
        NoiseKind::TooShort => ("Why?".into(), "Because.".into()),
    }
}

/// Generates `cfg.samples` samples with ids `s0000`, `s0001`, ...
pub fn generate(cfg: &SynthConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out: Vec<Sample> = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let (q, a) = clean_pair(&mut rng);
        let noisy = !cfg.kinds.is_empty() && rng.random::<f64>() < cfg.noise_rate;
        let id = format!("s{i:04}");
        let sample = if noisy {
            let kind = *cfg.kinds.choose(&mut rng).expect("non-empty");
            let (q, a) = plant(kind, q, a, &out, &mut rng);
            Sample::new(id, q, a).with_meta(NOISE_META, kind.name())
        } else {
            Sample::new(id, q, a)
        };
        out.push(sample);
    }
    Dataset::new(out).expect("generated ids are unique")
}
