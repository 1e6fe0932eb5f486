//! Prompt templates and the feedback block format shared by prompt rendering
//! and the built-in agent.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use super::Round;
use crate::strategy::{parse_strategy, Strategy};

pub const BEST_TEAM_MARKER: &str = "【Best Team】";
pub const NO_PROCESSING_MARKER: &str = "【No Processing Required for Original Data】";

const DEFAULT_INITIAL: &str = include_str!("../../templates/initial.txt");
const DEFAULT_ITERATION: &str = include_str!("../../templates/iteration.txt");

const FAILED_SCORE: &str = "evaluation failed";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading template {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{which} template is missing the {placeholder} placeholder")]
    Placeholder { which: &'static str, placeholder: &'static str },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub initial: String,
    pub iteration: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates { initial: DEFAULT_INITIAL.to_string(), iteration: DEFAULT_ITERATION.to_string() }
    }
}

impl PromptTemplates {
    /// Loads overrides; a `None` path keeps the bundled template.
    pub fn load(initial: Option<&Path>, iteration: Option<&Path>) -> Result<Self, TemplateError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| TemplateError::Read { path: p.display().to_string(), source })
        };
        let mut t = PromptTemplates::default();
        if let Some(p) = initial {
            t.initial = read(p)?;
        }
        if let Some(p) = iteration {
            t.iteration = read(p)?;
        }
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let need = [
            ("initial", &self.initial, "{group_size_limit}"),
            ("iteration", &self.iteration, "{group_size_limit}"),
            ("iteration", &self.iteration, "{round}"),
            ("iteration", &self.iteration, "{combinations_with_scores}"),
        ];
        for (which, text, placeholder) in need {
            if !text.contains(placeholder) {
                return Err(TemplateError::Placeholder { which, placeholder });
            }
        }
        Ok(())
    }
}

fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

pub fn build_initial_prompt(templates: &PromptTemplates, group_size_limit: usize) -> String {
    render(&templates.initial, &[("group_size_limit", group_size_limit.to_string()), ("round", "1".into())])
}

/// Renders the iteration prompt for round `t`, injecting the most recent
/// round of `history` with its feedback scores.
///
/// # Panics
/// If `history` is empty.
pub fn build_iteration_prompt(
    templates: &PromptTemplates,
    history: &[Round],
    t: u32,
    group_size_limit: usize,
) -> String {
    let last = history.last().expect("iteration prompt needs at least one round");
    render(
        &templates.iteration,
        &[
            ("group_size_limit", group_size_limit.to_string()),
            ("round", t.to_string()),
            ("previous_round", last.index.to_string()),
            ("combinations_with_scores", format_feedback(&last.strategies, &last.relative_scores)),
        ],
    )
}

pub fn format_score(s: f64) -> String {
    if s.is_finite() {
        format!("{s:+.6}")
    } else {
        FAILED_SCORE.to_string()
    }
}

/// Numbered combination blocks, each followed by its feedback score.
pub fn format_feedback(strategies: &[Strategy], scores: &[f64]) -> String {
    let mut out = String::new();
    for (i, (f, s)) in strategies.iter().zip(scores).enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let n = i + 1;
        let _ = writeln!(out, "{n}. ###Combination[{n}]###");
        let _ = writeln!(out, "- {}", f.to_agent_list());
        let _ = writeln!(out, "Feedback Score: {}", format_score(*s));
    }
    out
}

/// Combination blocks without scores, the format agents reply in.
pub fn format_combinations(strategies: &[Strategy]) -> String {
    let mut out = String::new();
    for (i, f) in strategies.iter().enumerate() {
        let _ = writeln!(out, "###Combination[{}]###", i + 1);
        let _ = writeln!(out, "- {}\n", f.to_agent_list());
    }
    out
}

static FEEDBACK_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"###\s*Combination\s*\[\s*\d+\s*\]\s*###[ \t]*\r?\n([^\n]*)\r?\n\s*Feedback Score:\s*([^\n]+)").unwrap()
});

/// Reads back the (strategy, score) pairs injected by [`format_feedback`].
/// Failed evaluations come back as negative infinity.
pub fn parse_feedback(prompt: &str) -> Vec<(Strategy, f64)> {
    FEEDBACK_RE
        .captures_iter(prompt)
        .filter_map(|c| {
            let f = parse_strategy(&c[1]).ok()?;
            let raw = c[2].trim();
            let s = if raw == FAILED_SCORE { f64::NEG_INFINITY } else { raw.parse::<f64>().ok()? };
            Some((f, s))
        })
        .collect()
}

static LIMIT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"no more than (\d+)").unwrap());

/// The last "no more than N" group size limit stated in a prompt.
pub fn parse_group_limit(prompt: &str) -> Option<usize> {
    LIMIT_RE.captures_iter(prompt).last().and_then(|c| c[1].parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::Team;

    fn round(strategies: Vec<Strategy>, rel: Vec<f64>) -> Round {
        Round {
            index: 1,
            scores: rel.iter().map(|s| s + 0.5).collect(),
            relative_scores: rel,
            reused: vec![false; strategies.len()],
            strategies,
        }
    }

    fn overview(prompt: &str) -> &str {
        let start = prompt.find("### Available teams").unwrap();
        let end = prompt[start..].find("### How combinations work").unwrap();
        &prompt[start..start + end]
    }

    #[test]
    fn initial_prompt_names_each_team_once() {
        let p = build_initial_prompt(&PromptTemplates::default(), 4);
        for t in Team::ALL {
            assert_eq!(overview(&p).matches(t.display_name()).count(), 1, "{t:?}");
            assert_eq!(p.matches(t.display_name()).count(), 1, "{t:?}");
        }
        assert!(p.contains("###Combination["));
        assert!(p.contains("no more than 4"));
        assert!(p.contains(BEST_TEAM_MARKER) && p.contains(NO_PROCESSING_MARKER));
        assert!(!p.contains('{'), "unrendered placeholder");
    }

    #[test]
    fn initial_prompt_group_limit() {
        assert!(build_initial_prompt(&PromptTemplates::default(), 2).contains("no more than 2"));
    }

    #[test]
    fn iteration_prompt_injects_latest_round() {
        let fs: Vec<Strategy> = Team::ALL.iter().map(|t| Strategy::new(vec![*t]).unwrap()).collect();
        let r = round(fs.clone(), vec![0.12, -0.03, 0.0, f64::NEG_INFINITY]);
        let p = build_iteration_prompt(&PromptTemplates::default(), &[r], 2, 6);
        assert_eq!(p.matches("Feedback Score:").count(), 4);
        assert!(p.contains("Feedback Score: -0.030000"));
        assert!(p.contains("Feedback Score: +0.120000"));
        assert!(p.contains("Round 2"));
        assert!(p.contains("Round 1"));
        assert!(p.contains("negative values") || p.contains("Negative values"));
        assert!(p.contains("relative to one another"));
        assert!(p.contains(BEST_TEAM_MARKER) && p.contains(NO_PROCESSING_MARKER));
        assert!(!p.contains("{round}"));
        let back = parse_feedback(&p);
        assert_eq!(back.len(), 4);
        assert_eq!(back[0], (fs[0].clone(), 0.12));
        assert_eq!(back[1].1, -0.03);
        assert_eq!(back[3].1, f64::NEG_INFINITY);
        assert_eq!(parse_group_limit(&p), Some(6));
    }

    #[test]
    fn empty_strategy_round_trips_through_feedback() {
        let r = round(vec![Strategy::none()], vec![0.0]);
        let p = build_iteration_prompt(&PromptTemplates::default(), &[r], 2, 4);
        assert_eq!(parse_feedback(&p), vec![(Strategy::none(), 0.0)]);
    }

    #[test]
    fn template_validation() {
        let t = PromptTemplates { initial: "no placeholder".into(), ..PromptTemplates::default() };
        assert!(matches!(t.validate(), Err(TemplateError::Placeholder { which: "initial", .. })));
        PromptTemplates::default().validate().unwrap();
    }
}
