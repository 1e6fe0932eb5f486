//! Teams, strategies (ordered duplicate-free team sequences) and the prefix
//! algebra the strategy cache relies on.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Processing team. Declaration order is the canonical enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Team {
    Cleaning,
    Optimization,
    Generation,
    Selection,
}

impl Team {
    pub const ALL: [Team; 4] = [Team::Cleaning, Team::Optimization, Team::Generation, Team::Selection];

    pub fn name(self) -> &'static str {
        match self {
            Team::Cleaning => "Cleaning",
            Team::Optimization => "Optimization",
            Team::Generation => "Generation",
            Team::Selection => "Selection",
        }
    }

    /// Long form used in agent prompts, e.g. "Data Cleaning Team".
    pub fn display_name(self) -> &'static str {
        match self {
            Team::Cleaning => "Data Cleaning Team",
            Team::Optimization => "Data Optimization Team",
            Team::Generation => "Data Generation Team",
            Team::Selection => "Data Selection Team",
        }
    }

    fn from_label(label: &str) -> Option<Team> {
        let norm: String = label
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .to_lowercase();
        let core = norm.strip_prefix("data ").unwrap_or(&norm);
        let core = core.strip_suffix(" team").unwrap_or(core);
        match core {
            "cleaning" | "clean" => Some(Team::Cleaning),
            "optimization" | "optimisation" | "optimize" => Some(Team::Optimization),
            "generation" | "generate" => Some(Team::Generation),
            "selection" | "select" => Some(Team::Selection),
            _ => None,
        }
    }
}

impl fmt::Display for Team {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const MAX_TEAMS: usize = 4;

/// Ordered sequence of distinct teams; the empty strategy means no processing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Strategy(Vec<Team>);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StrategyError {
    #[error("unknown team name {0:?}")]
    UnknownTeam(String),
    #[error("team {0} appears more than once")]
    DuplicateTeam(Team),
    #[error("strategy has {0} teams, at most four are allowed")]
    TooManyTeams(usize),
    #[error("empty strategy text")]
    Empty,
    #[error("split position {k} out of range for strategy of length {len}")]
    SplitOutOfRange { k: usize, len: usize },
}

impl Strategy {
    pub fn none() -> Self {
        Strategy(Vec::new())
    }

    pub fn new(teams: Vec<Team>) -> Result<Self, StrategyError> {
        if teams.len() > MAX_TEAMS {
            return Err(StrategyError::TooManyTeams(teams.len()));
        }
        for (i, t) in teams.iter().enumerate() {
            if teams[..i].contains(t) {
                return Err(StrategyError::DuplicateTeam(*t));
            }
        }
        Ok(Strategy(teams))
    }

    pub fn teams(&self) -> &[Team] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, team: Team) -> bool {
        self.0.contains(&team)
    }

    /// True iff `self` equals the first `self.len()` teams of `other`.
    pub fn is_prefix_of(&self, other: &Strategy) -> bool {
        is_prefix(self, other)
    }

    pub fn split_at(&self, k: usize) -> Result<(Strategy, Strategy), StrategyError> {
        split_at(self, k)
    }

    /// All non-empty prefixes, shortest first.
    pub fn prefixes(&self) -> impl Iterator<Item = Strategy> + '_ {
        (1..=self.0.len()).map(move |k| Strategy(self.0[..k].to_vec()))
    }

    /// Comma-separated long team names, the form agents are asked to emit.
    pub fn to_agent_list(&self) -> String {
        if self.is_empty() {
            return NO_PROCESSING_LABEL.to_string();
        }
        self.0.iter().map(|t| t.display_name()).collect::<Vec<_>>().join(", ")
    }

    pub(crate) fn push_unchecked(&self, team: Team) -> Strategy {
        let mut v = self.0.clone();
        v.push(team);
        Strategy(v)
    }

    pub(crate) fn from_vec_unchecked(v: Vec<Team>) -> Strategy {
        Strategy(v)
    }
}

pub const NONE_LABEL: &str = "NONE";
pub(crate) const NO_PROCESSING_LABEL: &str = "No processing";

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str(NONE_LABEL);
        }
        let names: Vec<&str> = self.0.iter().map(|t| t.name()).collect();
        f.write_str(&names.join(" -> "))
    }
}

impl FromStr for Strategy {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_strategy(s)
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_strategy(&s).map_err(serde::de::Error::custom)
    }
}

pub fn is_prefix(a: &Strategy, b: &Strategy) -> bool {
    a.0.len() <= b.0.len() && a.0[..] == b.0[..a.0.len()]
}

pub fn split_at(f: &Strategy, k: usize) -> Result<(Strategy, Strategy), StrategyError> {
    if k > f.0.len() {
        return Err(StrategyError::SplitOutOfRange { k, len: f.0.len() });
    }
    let (p, s) = f.0.split_at(k);
    Ok((Strategy(p.to_vec()), Strategy(s.to_vec())))
}

/// The full space: the empty strategy, then every ordered duplicate-free team
/// sequence of length 1..=4, by length and then lexicographically by team order.
pub fn enumerate_space() -> Vec<Strategy> {
    let mut out = vec![Strategy::none()];
    let mut frontier = vec![Strategy::none()];
    for _ in 0..MAX_TEAMS {
        let mut next = Vec::new();
        for s in &frontier {
            for t in Team::ALL {
                if !s.contains(t) {
                    next.push(s.push_unchecked(t));
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

static LEADER_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[•·*\-]+|\(?\d+[.)]|\d+\s*[:.])\s*").unwrap());
static SEP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*(?:-+>|→|,|，|、|;|；)\s*").unwrap());

/// Parses a team list such as `"Data Cleaning Team, Data Generation Team"` or
/// `"Cleaning -> Selection"`. Bullets and list numbering are ignored; `NONE`
/// parses to the empty strategy.
pub fn parse_strategy(text: &str) -> Result<Strategy, StrategyError> {
    let body = LEADER_RE.replace(text.trim(), "");
    let body = body.trim().trim_end_matches('.').trim();
    if body.is_empty() {
        return Err(StrategyError::Empty);
    }
    if body.eq_ignore_ascii_case(NONE_LABEL) || body.eq_ignore_ascii_case(NO_PROCESSING_LABEL) {
        return Ok(Strategy::none());
    }
    let mut teams = Vec::new();
    for part in SEP_RE.split(body) {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let team = Team::from_label(part).ok_or_else(|| StrategyError::UnknownTeam(part.to_string()))?;
        if teams.contains(&team) {
            return Err(StrategyError::DuplicateTeam(team));
        }
        teams.push(team);
    }
    if teams.is_empty() {
        return Err(StrategyError::Empty);
    }
    Strategy::new(teams)
}

/// Cache identity of a strategy: canonical strategy text bound to the digest
/// of the operator context and the run seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StrategyKey {
    pub strategy: String,
    pub config_digest: String,
    pub seed: u64,
}

impl StrategyKey {
    pub fn new(strategy: &Strategy, config_digest: &str, seed: u64) -> Self {
        StrategyKey {
            strategy: strategy.to_string(),
            config_digest: config_digest.to_string(),
            seed,
        }
    }

    pub fn canonical(&self) -> String {
        format!("{}|{}|{}", self.strategy, self.config_digest, self.seed)
    }

    pub fn digest_hex(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
