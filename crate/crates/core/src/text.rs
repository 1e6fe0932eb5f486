//! Per-text quality measurements shared by the cleaning operators, the
//! heuristic screener and the proxy evaluator.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

static TAG_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?s)<!--.*?-->|</?[A-Za-z][A-Za-z0-9:-]*(?:\s[^<>]*)?/?>").unwrap()
});
static ENTITY_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"&(?:#[0-9]{1,7}|#[xX][0-9a-fA-F]{1,6}|[a-zA-Z]{2,8});").unwrap());
static WS_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s+").unwrap());

/// Punctuation outside letters/digits/whitespace that does not count as special.
const ALLOWED_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '\'', '"', '(', ')', '-'];

pub fn is_allowed_char(c: char) -> bool {
    c.is_alphabetic() || c.is_numeric() || c.is_whitespace() || ALLOWED_PUNCT.contains(&c)
}

/// Fraction of characters outside the allowed alphabet. Empty text is 0.
pub fn special_char_ratio(text: &str) -> f64 {
    let mut total = 0usize;
    let mut special = 0usize;
    for c in text.chars() {
        total += 1;
        if !is_allowed_char(c) {
            special += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        special as f64 / total as f64
    }
}

/// CJK ideographs, kana and hangul syllables; each is tokenized on its own.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2EBEF
        | 0x30000..=0x3134F)
}

/// Whitespace-separated words, with every CJK codepoint split out as its own token.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut start: Option<usize> = None;
        for (i, c) in word.char_indices() {
            if is_cjk(c) {
                if let Some(s) = start.take() {
                    out.push(&word[s..i]);
                }
                out.push(&word[i..i + c.len_utf8()]);
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            out.push(&word[s..]);
        }
    }
    out
}

pub fn token_count(text: &str) -> usize {
    tokenize(text).len()
}

/// `1 - distinct/total` over word n-grams; fewer than `n` words gives 0.
pub fn ngram_repetition_ratio(text: &str, n: usize) -> f64 {
    assert!(n >= 1, "n-gram size must be at least 1");
    let tokens = tokenize(text);
    repetition_of_tokens(&tokens, n)
}

pub(crate) fn repetition_of_tokens(tokens: &[&str], n: usize) -> f64 {
    if tokens.len() < n {
        return 0.0;
    }
    let total = tokens.len() - n + 1;
    let distinct: HashSet<&[&str]> = tokens.windows(n).collect();
    1.0 - distinct.len() as f64 / total as f64
}

fn decode_entity(ent: &str) -> Option<String> {
    let body = &ent[1..ent.len() - 1];
    let c = if let Some(hex) = body.strip_prefix("#x").or_else(|| body.strip_prefix("#X")) {
        char::from_u32(u32::from_str_radix(hex, 16).ok()?)?
    } else if let Some(dec) = body.strip_prefix('#') {
        char::from_u32(dec.parse().ok()?)?
    } else {
        match body {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            "nbsp" => ' ',
            _ => return None,
        }
    };
    Some(c.to_string())
}

fn strip_pass(text: &str) -> String {
    let no_tags = TAG_RE.replace_all(text, " ");
    let decoded = ENTITY_RE.replace_all(&no_tags, |caps: &regex::Captures<'_>| {
        decode_entity(&caps[0]).unwrap_or_else(|| caps[0].to_string())
    });
    let no_ctrl: String = decoded
        .chars()
        .filter(|c| !c.is_control() || c.is_whitespace())
        .collect();
    let collapsed = WS_RE.replace_all(&no_ctrl, |caps: &regex::Captures<'_>| {
        if caps[0].contains('\n') {
            "\n".to_string()
        } else {
            " ".to_string()
        }
    });
    collapsed.trim().to_string()
}

/// Removes markup tags, decodes entity escapes, drops control characters and
/// collapses whitespace runs (a run containing a newline becomes one newline).
/// Applied until the text stops changing, so the result is a fixpoint.
pub fn strip_noise_text(text: &str) -> String {
    let mut cur = strip_pass(text);
    loop {
        let next = strip_pass(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

/// True when the text contains markup, escapes, control characters or
/// irregular whitespace that `strip_noise_text` would change.
pub fn has_noise(text: &str) -> bool {
    strip_noise_text(text) != text
}
