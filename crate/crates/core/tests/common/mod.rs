#![allow(dead_code)]

use std::sync::Arc;

use dpforge::cache::CacheEntry;
use dpforge::clients::{ClientRole, FieldMode, ModelResponse, ScriptedClient};
use dpforge::corpus::{Dataset, Digest, Sample};
use dpforge::operators::{apply_team, OperatorConfig, OperatorContext};
use dpforge::strategy::{Strategy, StrategyKey};
use dpforge::synth::{generate, SynthConfig};
use proptest::prelude::*;
use proptest::strategy::Strategy as _;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Synthetic corpus with planted noise.
pub fn corpus(samples: usize, noise_rate: f64, seed: u64) -> Dataset {
    generate(&SynthConfig { samples, noise_rate, seed, ..SynthConfig::default() })
}

/// Arbitrary text drawn from a mix of plain words, markup, symbols and CJK.
pub fn arb_text() -> impl proptest::strategy::Strategy<Value = String> {
    prop::collection::vec(
        prop_oneof![
            4 => "[a-z]{1,8}",
            1 => Just("<b>".to_string()),
            1 => Just("&amp;".to_string()),
            1 => "[#@$%^*]{1,3}",
            1 => Just("数据".to_string()),
            1 => Just("again again again".to_string()),
        ],
        0..30,
    )
    .prop_map(|w| w.join(" "))
}

pub fn arb_dataset(max: usize) -> impl proptest::strategy::Strategy<Value = Dataset> {
    prop::collection::vec((arb_text(), arb_text(), prop::option::of("[a-z]{1,6}")), 0..max).prop_map(|rows| {
        let samples = rows
            .into_iter()
            .enumerate()
            .map(|(i, (q, a, tag))| {
                let s = Sample::new(format!("id{i}"), q, a);
                match tag {
                    Some(t) => s.with_meta("tag", t),
                    None => s,
                }
            })
            .collect();
        Dataset::new(samples).unwrap()
    })
}

/// Whether the ids of `sub` appear in `full` in the same relative order.
pub fn is_id_subsequence(sub: &Dataset, full: &Dataset) -> bool {
    let mut it = full.iter();
    sub.iter().all(|s| it.any(|f| f.id == s.id))
}

/// Operator context whose model clients are deterministic closures, so
/// outputs are hand-traceable and independent of the built-in clients.
pub fn scripted_ctx(seed: u64) -> OperatorContext {
    let optimizer = ScriptedClient::new(ClientRole::Optimizer, "tidy", |req| {
        let text = if req.mode == FieldMode::Question { &req.question } else { &req.answer };
        let kept: String =
            text.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace() || ".,?".contains(*c)).collect();
        Ok(ModelResponse::text(kept.split_whitespace().collect::<Vec<_>>().join(" ")))
    });
    let generator = ScriptedClient::new(ClientRole::Generator, "fill", |req| {
        let shot = &req.shots[0];
        Ok(ModelResponse::text(match req.mode {
            FieldMode::Question => format!("Regarding this answer, {}", shot.question),
            _ => format!("A generated answer in the style of: {}", shot.answer),
        }))
    });
    let scorer = ScriptedClient::new(ClientRole::Scorer, "length", |req| {
        Ok(ModelResponse::score((req.question.len() + req.answer.len()) as f64 % 97.0))
    });
    OperatorContext::builtin(OperatorConfig::default(), seed)
        .with_optimizer(Arc::new(optimizer))
        .with_generator(Arc::new(generator))
        .with_scorer(Arc::new(scorer))
}

/// Applies each team in turn without any cache.
pub fn apply_from_scratch(f: &Strategy, d: &Dataset, ctx: &OperatorContext) -> Dataset {
    f.teams().iter().fold(d.clone(), |cur, t| apply_team(*t, &cur, ctx))
}

/// Length of the longest cached prefix of `f`, found by scanning every entry.
pub fn brute_force_prefix(entries: &[CacheEntry], f: &Strategy, base: Digest, digest: &str, seed: u64) -> Option<usize> {
    entries
        .iter()
        .filter(|e| e.base_fingerprint == base && e.key == StrategyKey::new(&e.strategy, digest, seed))
        .filter(|e| !e.strategy.is_empty() && e.strategy.is_prefix_of(f))
        .map(|e| e.strategy.len())
        .max()
}

/// A strategy that shares a prefix with `prev` about half of the time.
pub fn overlapping(prev: &Strategy, space: &[Strategy], rng: &mut ChaCha8Rng) -> Strategy {
    if prev.is_empty() || rng.random_bool(0.5) {
        return space.choose(rng).unwrap().clone();
    }
    let keep = rng.random_range(1..=prev.len());
    let candidates: Vec<&Strategy> =
        space.iter().filter(|f| f.len() > keep && f.teams()[..keep] == prev.teams()[..keep]).collect();
    candidates.choose(rng).map_or_else(|| prev.clone(), |f| (*f).clone())
}
