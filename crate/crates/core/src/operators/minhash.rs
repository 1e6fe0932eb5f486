//! MinHash signatures with banded LSH for near-duplicate removal.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MinHashConfig;
use crate::corpus::{Dataset, Sample};
use crate::text::strip_noise_text;

const MERSENNE_61: u64 = (1 << 61) - 1;
/// Permutation coefficients are fixed so signatures never depend on the run seed.
const PERMUTATION_SEED: u64 = 0x6d69_6e68_6173_6801;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `(a * x + b) mod (2^61 - 1)` for `a, x, b < 2^61 - 1`.
fn mod_mersenne(a: u64, x: u64, b: u64) -> u64 {
    let v = a as u128 * x as u128 + b as u128;
    let folded = (v & MERSENNE_61 as u128) + (v >> 61);
    let r = ((folded as u64) & MERSENNE_61) + ((folded >> 61) as u64);
    if r >= MERSENNE_61 {
        r - MERSENNE_61
    } else {
        r
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Character k-shingles of `text`. Text shorter than `k` (but non-empty) is one shingle.
pub fn shingles(text: &str, k: usize) -> HashSet<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = HashSet::new();
    if chars.is_empty() {
        return out;
    }
    if chars.len() < k {
        out.insert(text.to_string());
        return out;
    }
    for w in chars.windows(k) {
        out.insert(w.iter().collect());
    }
    out
}

/// Normalized text used for duplicate detection: noise stripped, lowercased.
pub fn dedup_text(s: &Sample) -> String {
    strip_noise_text(&s.combined_text()).to_lowercase()
}

#[derive(Debug, Clone)]
pub struct MinHasher {
    cfg: MinHashConfig,
    coeffs: Vec<(u64, u64)>,
}

impl MinHasher {
    pub fn new(cfg: &MinHashConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PERMUTATION_SEED);
        let coeffs = (0..cfg.num_permutations)
            .map(|_| (rng.random_range(1..MERSENNE_61), rng.random_range(0..MERSENNE_61)))
            .collect();
        MinHasher { cfg: cfg.clone(), coeffs }
    }

    pub fn signature(&self, text: &str) -> Vec<u64> {
        let mut sig = vec![u64::MAX; self.coeffs.len()];
        for sh in shingles(text, self.cfg.shingle_size) {
            let x = mix64(fnv1a(sh.as_bytes())) % MERSENNE_61;
            for (slot, &(a, b)) in sig.iter_mut().zip(&self.coeffs) {
                let h = mod_mersenne(a, x, b);
                if h < *slot {
                    *slot = h;
                }
            }
        }
        sig
    }

    /// Fraction of agreeing signature slots, the MinHash Jaccard estimate.
    pub fn estimate(a: &[u64], b: &[u64]) -> f64 {
        if a.is_empty() {
            return 0.0;
        }
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
        same as f64 / a.len() as f64
    }

    fn band_keys(&self, sig: &[u64]) -> Vec<(usize, u64)> {
        sig.chunks(self.cfg.rows_per_band)
            .take(self.cfg.bands)
            .enumerate()
            .map(|(band, rows)| {
                let mut h: u64 = band as u64;
                for r in rows {
                    h = mix64(h ^ r.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                }
                (band, h)
            })
            .collect()
    }

    fn is_duplicate(&self, a: &[u64], b: &[u64]) -> bool {
        Self::estimate(a, b) >= self.cfg.jaccard_threshold
    }

    /// All index pairs `(i, j)`, `i < j`, that collide in at least one band and
    /// whose signature estimate reaches the threshold.
    pub fn duplicate_pairs(&self, texts: &[String]) -> BTreeSet<(usize, usize)> {
        let sigs: Vec<Vec<u64>> = texts.iter().map(|t| self.signature(t)).collect();
        let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
        for (i, sig) in sigs.iter().enumerate() {
            for key in self.band_keys(sig) {
                buckets.entry(key).or_default().push(i);
            }
        }
        let mut candidates = BTreeSet::new();
        for members in buckets.values() {
            for (x, &i) in members.iter().enumerate() {
                for &j in &members[x + 1..] {
                    candidates.insert((i.min(j), i.max(j)));
                }
            }
        }
        candidates
            .into_iter()
            .filter(|&(i, j)| self.is_duplicate(&sigs[i], &sigs[j]))
            .collect()
    }
}

/// Removes near-duplicates, keeping the earliest sample of each group. A sample
/// is dropped when it is a duplicate of any earlier kept sample.
pub fn minhash_dedup(d: &Dataset, cfg: &MinHashConfig) -> Dataset {
    let hasher = MinHasher::new(cfg);
    let mut buckets: HashMap<(usize, u64), Vec<usize>> = HashMap::new();
    let mut kept_sigs: Vec<Vec<u64>> = Vec::new();
    let mut kept = Vec::new();
    for s in d.iter() {
        let sig = hasher.signature(&dedup_text(s));
        let keys = hasher.band_keys(&sig);
        let dup = keys.iter().any(|k| {
            buckets
                .get(k)
                .is_some_and(|idxs| idxs.iter().any(|&i| hasher.is_duplicate(&kept_sigs[i], &sig)))
        });
        if dup {
            continue;
        }
        let slot = kept_sigs.len();
        for k in keys {
            buckets.entry(k).or_default().push(slot);
        }
        kept_sigs.push(sig);
        kept.push(s.clone());
    }
    Dataset::from_samples_unchecked(kept)
}
