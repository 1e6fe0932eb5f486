//! Sample and dataset model, line-delimited record IO and content fingerprints.
//!
//! Every record is one JSON object per line with the fields `id`, `question`,
//! `answer` and `meta`. The canonical form emits keys in sorted order (meta is a
//! sorted map), so two files holding the same logical content fingerprint
//! identically regardless of how they were written.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Scalar metadata value. Nested values are rejected on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetaValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl From<&str> for MetaValue {
    fn from(s: &str) -> Self {
        MetaValue::Str(s.to_string())
    }
}

impl From<String> for MetaValue {
    fn from(s: String) -> Self {
        MetaValue::Str(s)
    }
}

impl From<bool> for MetaValue {
    fn from(b: bool) -> Self {
        MetaValue::Bool(b)
    }
}

impl From<i64> for MetaValue {
    fn from(v: i64) -> Self {
        MetaValue::Int(v)
    }
}

pub type Meta = BTreeMap<String, MetaValue>;

/// One question/answer record. Field order here is the canonical key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    #[serde(default)]
    pub answer: String,
    pub id: String,
    #[serde(default)]
    pub meta: Meta,
    #[serde(default)]
    pub question: String,
}

impl Sample {
    pub fn new(id: impl Into<String>, question: impl Into<String>, answer: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            question: question.into(),
            answer: answer.into(),
            meta: Meta::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<MetaValue>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Canonical single-line serialization (no trailing newline).
    pub fn canonical_line(&self) -> String {
        // Struct fields are declared in sorted order and meta is a BTreeMap, so
        // serde_json output is already canonical.
        serde_json::to_string(self).expect("sample serialization cannot fail")
    }

    pub fn fingerprint(&self) -> Digest {
        Digest::of(self.canonical_line().as_bytes())
    }

    /// Question and answer joined by a newline; the text that quality rules and
    /// embeddings look at.
    pub fn combined_text(&self) -> String {
        let mut s = String::with_capacity(self.question.len() + self.answer.len() + 1);
        s.push_str(&self.question);
        s.push('\n');
        s.push_str(&self.answer);
        s
    }
}

/// 256-bit SHA-256 content digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        let out = Sha256::digest(bytes);
        let mut d = [0u8; 32];
        d.copy_from_slice(&out);
        Digest(d)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    /// First 16 hex characters, for log lines.
    pub fn short(&self) -> String {
        self.to_hex()[..16].to_string()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("invalid digest hex"))
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: empty id")]
    EmptyId { line: usize },
    #[error("duplicate sample id {id:?}")]
    DuplicateId { id: String },
}

/// Ordered, immutable collection of samples with a cached fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    fingerprint: Digest,
}

impl Default for Dataset {
    fn default() -> Self {
        Dataset::from_samples_unchecked(Vec::new())
    }
}

impl Dataset {
    /// Builds a dataset, rejecting empty or duplicate ids.
    pub fn new(samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.id.is_empty() {
                return Err(CorpusError::EmptyId { line: i + 1 });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId { id: s.id.clone() });
            }
        }
        Ok(Self::from_samples_unchecked(samples))
    }

    /// For operators that only remove or rewrite samples of an already valid
    /// dataset, where id uniqueness is inherited.
    pub(crate) fn from_samples_unchecked(samples: Vec<Sample>) -> Self {
        let fingerprint = fingerprint_samples(&samples);
        Dataset { samples, fingerprint }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    pub fn fingerprint(&self) -> Digest {
        self.fingerprint
    }

    /// Canonical file bytes: one canonical line per sample, each newline-terminated.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in &self.samples {
            out.extend_from_slice(s.canonical_line().as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut samples = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if let Some(s) = parse_line(line, idx + 1)? {
                samples.push(s);
            }
        }
        Dataset::new(samples)
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Sample;
    type IntoIter = std::slice::Iter<'a, Sample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<Option<Sample>, CorpusError> {
    if line.trim().is_empty() {
        return Ok(None);
    }
    let sample: Sample = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
        line: lineno,
        message: e.to_string(),
    })?;
    if sample.id.is_empty() {
        return Err(CorpusError::EmptyId { line: lineno });
    }
    Ok(Some(sample))
}

/// Digest over the canonical serialization of `samples` in order.
pub fn fingerprint_samples(samples: &[Sample]) -> Digest {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.canonical_line().as_bytes());
        h.update(b"\n");
    }
    let mut d = [0u8; 32];
    d.copy_from_slice(&h.finalize());
    Digest(d)
}

pub fn fingerprint(d: &Dataset) -> Digest {
    d.fingerprint()
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, CorpusError> {
    let path = path.as_ref();
    let read_err = |source| CorpusError::Read {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::open(path).map_err(read_err)?;
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(read_err)?;
        if let Some(s) = parse_line(&line, idx + 1)? {
            if !seen.insert(s.id.clone()) {
                return Err(CorpusError::DuplicateId { id: s.id });
            }
            samples.push(s);
        }
    }
    Ok(Dataset::from_samples_unchecked(samples))
}

/// Writes the canonical form via a temp file and rename.
pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let write_err = |source| CorpusError::Write {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(write_err)?;
        f.write_all(&d.canonical_bytes()).map_err(write_err)?;
        f.sync_all().map_err(write_err)?;
    }
    fs::rename(&tmp, path).map_err(write_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        fs::write(&p, "\n  \n").unwrap();
        let d = load_dataset(&p).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.fingerprint(), Digest::of(b""));
    }

    #[test]
    fn order_is_preserved() {
        let d = Dataset::parse(
            "{\"id\":\"A\",\"question\":\"q\",\"answer\":\"a\",\"meta\":{}}\n\
             {\"id\":\"B\",\"question\":\"q\",\"answer\":\"a\",\"meta\":{}}\n",
        )
        .unwrap();
        let ids: Vec<_> = d.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["A", "B"]);
    }

    #[test]
    fn key_order_does_not_change_fingerprint() {
        let a = Dataset::parse(r#"{"id":"1","question":"q","answer":"a","meta":{"x":1,"b":"s"}}"#).unwrap();
        let b = Dataset::parse(r#"{"meta":{"b":"s","x":1},"answer":"a","question":"q","id":"1"}"#).unwrap();
        // Independent canonicalization: re-serialize through a sorted serde_json::Value.
        let canon = |line: &str| {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let sorted: BTreeMap<String, serde_json::Value> = serde_json::from_value(v).unwrap();
            serde_json::to_string(&sorted).unwrap()
        };
        assert_eq!(
            canon(r#"{"id":"1","question":"q","answer":"a","meta":{"x":1,"b":"s"}}"#),
            a.samples()[0].canonical_line()
        );
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn one_character_difference_changes_digest() {
        let a = Dataset::new(vec![Sample::new("1", "hello", "x")]).unwrap();
        let b = Dataset::new(vec![Sample::new("1", "hellp", "x")]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn order_is_part_of_fingerprint() {
        let s1 = Sample::new("1", "a", "b");
        let s2 = Sample::new("2", "c", "d");
        let a = Dataset::new(vec![s1.clone(), s2.clone()]).unwrap();
        let b = Dataset::new(vec![s2, s1]).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn different_construction_paths_agree() {
        let built = Dataset::new(vec![Sample::new("1", "q", "a").with_meta("k", "v")]).unwrap();
        let parsed = Dataset::parse(r#"{"id":"1","question":"q","answer":"a","meta":{"k":"v"}}"#).unwrap();
        assert_eq!(built.fingerprint(), parsed.fingerprint());
        assert_eq!(built, parsed);
    }

    #[test]
    fn newline_in_text_is_escaped_and_restored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.jsonl");
        let d = Dataset::new(vec![Sample::new("1", "line one\nline two", "tab\there")]).unwrap();
        save_dataset(&d, &p).unwrap();
        let raw = fs::read_to_string(&p).unwrap();
        assert_eq!(raw.lines().count(), 1);
        assert!(raw.contains(r"line one\nline two"));
        let back = load_dataset(&p).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let err = Dataset::parse("{\"id\":\"x\"}\n{\"id\":\"x\"}\n").unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { .. }));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "{\"id\":\"x\"}\n{\"id\":\"x\"}\n").unwrap();
        assert!(matches!(load_dataset(&p), Err(CorpusError::DuplicateId { .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = Dataset::parse("{\"id\":\"x\"}\n\nnot json\n").unwrap_err();
        match err {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nested_meta_rejected() {
        assert!(Dataset::parse(r#"{"id":"x","meta":{"a":[1,2]}}"#).is_err());
        assert!(Dataset::parse(r#"{"id":"x","meta":{"a":null}}"#).is_err());
    }

    #[test]
    fn missing_path_is_read_error() {
        assert!(matches!(
            load_dataset("/nonexistent/nowhere.jsonl"),
            Err(CorpusError::Read { .. })
        ));
    }
}
