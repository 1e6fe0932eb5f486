//! Distribution-preserving sampling.
//!
//! Greedy selection repeatedly picks the still-unselected sample whose
//! embedding has the largest summed cosine similarity to all other unselected
//! samples. Sampling runs separately on the clean and noisy strata so the
//! subset keeps the corpus's noise proportion.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::ClientError;
use crate::corpus::{Dataset, Sample};
use crate::screener::{Label, Screener};

/// Scores within this absolute distance are treated as tied.
pub const TIE_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbeddingError {
    #[error("sample {id}: embedding contains non-finite values")]
    NonFinite { id: String },
    #[error("sample {id}: zero-norm embedding")]
    ZeroNorm { id: String },
    #[error("sample {id}: dimension {got}, expected {expected}")]
    Dimension { id: String, got: usize, expected: usize },
    #[error("sample {id}: embedding client failed: {source}")]
    Client { id: String, source: ClientError },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("sampling rate {0} outside (0, 1]")]
    Rate(f64),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Option<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm > 0.0).then_some(EmbeddingVector { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot / (self.norm * other.norm)
    }
}

pub trait EmbeddingClient: Send + Sync {
    fn identity(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError>;
}

/// Signed feature hashing of lowercased words and boundary-marked character
/// trigrams. Identical text gives identical vectors, and the boundary markers
/// keep even empty text off the zero vector.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0);
        HashingEmbedder { dim }
    }

    fn bump(&self, v: &mut [f64], feature: &str, weight: f64) {
        let h = feature
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3));
        let idx = (h % self.dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
        v[idx] += sign * weight;
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(256)
    }
}

impl EmbeddingClient for HashingEmbedder {
    fn identity(&self) -> String {
        format!("builtin:hashing-embedder:{}", self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let lower = text.to_lowercase();
        let mut v = vec![0.0; self.dim];
        for w in crate::text::tokenize(&lower) {
            self.bump(&mut v, &format!("w:{w}"), 1.0);
        }
        let marked: Vec<char> = std::iter::once('\u{2}').chain(lower.chars()).chain(std::iter::once('\u{3}')).collect();
        let grams: Vec<&[char]> = if marked.len() < 3 { vec![&marked[..]] } else { marked.windows(3).collect() };
        for g in grams {
            let s: String = g.iter().collect();
            self.bump(&mut v, &format!("c:{s}"), 0.5);
        }
        Ok(v)
    }
}

fn embed_text(s: &Sample) -> String {
    s.combined_text()
}

/// One vector per sample, index-aligned. Any failure aborts.
pub fn embed_all(d: &Dataset, client: &dyn EmbeddingClient) -> Result<Vec<EmbeddingVector>, EmbeddingError> {
    let expected = client.dimension();
    d.iter()
        .map(|s| {
            let raw = client
                .embed(&embed_text(s))
                .map_err(|source| EmbeddingError::Client { id: s.id.clone(), source })?;
            if raw.len() != expected {
                return Err(EmbeddingError::Dimension { id: s.id.clone(), got: raw.len(), expected });
            }
            if raw.iter().any(|v| !v.is_finite()) {
                return Err(EmbeddingError::NonFinite { id: s.id.clone() });
            }
            EmbeddingVector::new(raw).ok_or_else(|| EmbeddingError::ZeroNorm { id: s.id.clone() })
        })
        .collect()
}

/// Greedy max-similarity selection of `n` indices, in selection order.
///
/// Each candidate's running sum of cosines to the other unselected vectors is
/// kept and decremented as vectors leave the pool. Ties (within
/// [`TIE_EPSILON`]) go to the lowest index.
pub fn greedy_select(vectors: &[EmbeddingVector], n: usize) -> Vec<usize> {
    let m = vectors.len();
    assert!(n <= m, "cannot select {n} of {m}");
    if n == 0 {
        return Vec::new();
    }
    let unit: Vec<Vec<f64>> = vectors.iter().map(|v| v.values.iter().map(|x| x / v.norm).collect()).collect();
    let dot = |a: usize, b: usize| -> f64 { unit[a].iter().zip(&unit[b]).map(|(x, y)| x * y).sum() };

    let mut total = vec![0.0; unit.first().map_or(0, Vec::len)];
    for u in &unit {
        for (t, x) in total.iter_mut().zip(u) {
            *t += x;
        }
    }
    // sum over p != x of cos(x, p) = u_x . (sum of all u) - u_x . u_x
    let mut sums: Vec<f64> = (0..m)
        .map(|x| unit[x].iter().zip(&total).map(|(a, b)| a * b).sum::<f64>() - dot(x, x))
        .collect();
    let mut selected = vec![false; m];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for x in (0..m).filter(|&x| !selected[x]) {
            match best {
                None => best = Some(x),
                Some(b) if sums[x] > sums[b] + TIE_EPSILON => best = Some(x),
                _ => {}
            }
        }
        let pick = best.expect("candidates remain");
        selected[pick] = true;
        out.push(pick);
        for x in (0..m).filter(|&x| !selected[x]) {
            sums[x] -= dot(x, pick);
        }
    }
    out
}

/// Per-stratum sample counts: each stratum rounds half-up, and if the two
/// counts miss `round(rate * total)` by one the larger stratum absorbs it.
pub fn stratum_counts(clean: usize, noisy: usize, rate: f64) -> (usize, usize) {
    let round = |x: f64| (x + 0.5).floor() as usize;
    let target = round(rate * (clean + noisy) as f64);
    let mut c = round(rate * clean as f64).min(clean);
    let mut n = round(rate * noisy as f64).min(noisy);
    let sum = c + n;
    let (big, small) = if clean >= noisy { (&mut c, &mut n) } else { (&mut n, &mut c) };
    let (big_cap, small_cap) = if clean >= noisy { (clean, noisy) } else { (noisy, clean) };
    if sum + 1 == target {
        if *big < big_cap {
            *big += 1;
        } else if *small < small_cap {
            *small += 1;
        }
    } else if sum == target + 1 {
        if *big > 0 {
            *big -= 1;
        } else if *small > 0 {
            *small -= 1;
        }
    }
    (c, n)
}

/// Summary of one stratified draw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub input_samples: usize,
    pub input_noisy: usize,
    pub sampled: usize,
    pub sampled_noisy: usize,
}

/// Stratified greedy sample; output keeps the original dataset order.
pub fn stratified_sample(
    d: &Dataset,
    rate: f64,
    screener: &dyn Screener,
    embedder: &dyn EmbeddingClient,
) -> Result<(Dataset, SampleSummary), SamplingError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(SamplingError::Rate(rate));
    }
    let labels: Vec<Label> = d.iter().map(|s| screener.classify(s).label).collect();
    let clean_idx: Vec<usize> = (0..d.len()).filter(|&i| labels[i].is_clean()).collect();
    let noisy_idx: Vec<usize> = (0..d.len()).filter(|&i| !labels[i].is_clean()).collect();
    let (n_clean, n_noisy) = stratum_counts(clean_idx.len(), noisy_idx.len(), rate);

    let mut keep = vec![false; d.len()];
    for (idx, count) in [(&clean_idx, n_clean), (&noisy_idx, n_noisy)] {
        if count == 0 {
            continue;
        }
        if count == idx.len() {
            idx.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let stratum = Dataset::from_samples_unchecked(idx.iter().map(|&i| d.samples()[i].clone()).collect());
        let vectors = embed_all(&stratum, embedder)?;
        for local in greedy_select(&vectors, count) {
            keep[idx[local]] = true;
        }
    }
    let out: Vec<Sample> = d.iter().zip(&keep).filter(|(_, k)| **k).map(|(s, _)| s.clone()).collect();
    let summary = SampleSummary {
        input_samples: d.len(),
        input_noisy: noisy_idx.len(),
        sampled: out.len(),
        sampled_noisy: n_noisy,
    };
    Ok((Dataset::from_samples_unchecked(out), summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn greedy_small_example() {
        let vs = [v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
        // sums: 1 + 0, 1 + 0, 0 + 0 -> tie between 0 and 1 goes to 0
        assert_eq!(greedy_select(&vs, 1), vec![0]);
        assert_eq!(greedy_select(&vs, 0), Vec::<usize>::new());
        let mut all = greedy_select(&vs, 3);
        all.sort();
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn zero_vector_rejected() {
        assert!(EmbeddingVector::new(vec![0.0, 0.0]).is_none());
        assert!(EmbeddingVector::new(vec![f64::NAN, 1.0]).is_none());
    }

    #[test]
    fn counts_follow_rounding_rule() {
        assert_eq!(stratum_counts(6, 4, 0.5), (3, 2));
        assert_eq!(stratum_counts(10, 0, 0.2), (2, 0));
        assert_eq!(stratum_counts(0, 0, 0.2), (0, 0));
        // 0.2*5 = 1, 0.2*5 = 1, target round(2.0) = 2
        assert_eq!(stratum_counts(5, 5, 0.2), (1, 1));
        // clean 0.25*6 = 1.5 -> 2, noisy 0.25*2 = 0.5 -> 1, target 2: larger (clean) gives one back
        assert_eq!(stratum_counts(6, 2, 0.25), (1, 1));
    }

    #[test]
    fn hashing_embedder_is_deterministic_and_nonzero() {
        let e = HashingEmbedder::default();
        assert_eq!(e.embed("same text").unwrap(), e.embed("same text").unwrap());
        assert!(EmbeddingVector::new(e.embed("").unwrap()).is_some());
        assert!(EmbeddingVector::new(e.embed("\n").unwrap()).is_some());
    }

    #[test]
    fn embed_all_empty() {
        assert!(embed_all(&Dataset::default(), &HashingEmbedder::default()).unwrap().is_empty());
    }
}
