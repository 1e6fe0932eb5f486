use rayon::prelude::*;

use super::{role_mismatch, OperatorContext};
use crate::clients::{call_with_retry, ClientRole, FieldMode, ModelClient, ModelRequest, ShotPair};
use crate::corpus::{Dataset, MetaValue, Sample};
use crate::text::strip_noise_text;

pub const META_OPTIMIZED: &str = "optimized";
pub const META_OPTIMIZE_ERROR: &str = "optimize_error";
pub const META_GENERATED: &str = "generated";
pub const META_GENERATE_ERROR: &str = "generate_error";

/// Noise-stripped question and answer; id and meta untouched.
pub fn strip_noise(s: &Sample) -> Sample {
    Sample {
        id: s.id.clone(),
        question: strip_noise_text(&s.question),
        answer: strip_noise_text(&s.answer),
        meta: s.meta.clone(),
    }
}

fn flag_error(mut s: Sample, key: &str, msg: String) -> Sample {
    s.meta.insert(key.to_string(), MetaValue::Str(msg));
    s
}

/// Rewrites the targeted field(s) with the optimizer's output. Empty targeted
/// fields are skipped. Any client failure returns the input plus an error flag.
pub fn optimize_sample(s: &Sample, mode: FieldMode, client: &dyn ModelClient, ctx: &OperatorContext) -> Sample {
    if let Some(msg) = role_mismatch(client, ClientRole::Optimizer) {
        return flag_error(s.clone(), META_OPTIMIZE_ERROR, msg);
    }
    let fields: &[FieldMode] = match mode {
        FieldMode::Question => &[FieldMode::Question],
        FieldMode::Answer => &[FieldMode::Answer],
        FieldMode::Both => &[FieldMode::Question, FieldMode::Answer],
    };
    let mut out = s.clone();
    let mut touched = false;
    for &field in fields {
        let current = match field {
            FieldMode::Question => &s.question,
            _ => &s.answer,
        };
        if current.is_empty() {
            continue;
        }
        let req = ModelRequest::for_sample(ClientRole::Optimizer, field, s, ctx.seed);
        let text = match call_with_retry(client, &req, &ctx.retry) {
            Ok(resp) => match resp.text {
                Some(t) => t,
                None => return flag_error(s.clone(), META_OPTIMIZE_ERROR, "response missing text".into()),
            },
            Err(e) => return flag_error(s.clone(), META_OPTIMIZE_ERROR, e.to_string()),
        };
        match field {
            FieldMode::Question => out.question = text,
            _ => out.answer = text,
        }
        touched = true;
    }
    if touched {
        out.meta.insert(META_OPTIMIZED.into(), MetaValue::Str(mode.to_string()));
    }
    out
}

/// Fills empty fields from the generator. When both are empty the question is
/// generated first and the answer request carries it.
pub fn generate_missing(s: &Sample, shots: &[Sample], client: &dyn ModelClient, ctx: &OperatorContext) -> Sample {
    let need_q = s.question.is_empty();
    let need_a = s.answer.is_empty();
    if !need_q && !need_a {
        return s.clone();
    }
    if let Some(msg) = role_mismatch(client, ClientRole::Generator) {
        return flag_error(s.clone(), META_GENERATE_ERROR, msg);
    }
    if shots.is_empty() {
        return flag_error(s.clone(), META_GENERATE_ERROR, "no shots available".into());
    }
    let shot_pairs: Vec<ShotPair> = shots
        .iter()
        .map(|x| ShotPair { question: x.question.clone(), answer: x.answer.clone() })
        .collect();
    let mut out = s.clone();
    for (field, needed) in [(FieldMode::Question, need_q), (FieldMode::Answer, need_a)] {
        if !needed {
            continue;
        }
        let mut req = ModelRequest::for_sample(ClientRole::Generator, field, &out, ctx.seed);
        req.shots = shot_pairs.clone();
        let text = match call_with_retry(client, &req, &ctx.retry) {
            Ok(resp) => match resp.text {
                Some(t) => t,
                None => return flag_error(s.clone(), META_GENERATE_ERROR, "response missing text".into()),
            },
            Err(e) => return flag_error(s.clone(), META_GENERATE_ERROR, e.to_string()),
        };
        match field {
            FieldMode::Question => out.question = text,
            _ => out.answer = text,
        }
    }
    let which = match (need_q, need_a) {
        (true, true) => FieldMode::Both,
        (true, false) => FieldMode::Question,
        _ => FieldMode::Answer,
    };
    out.meta.insert(META_GENERATED.into(), MetaValue::Str(which.to_string()));
    out
}

/// Keeps the top `ceil(keep_fraction * n)` samples by score, ties to the
/// earlier position, in original order. Failed scores rank last.
pub fn select_high_quality(
    d: &Dataset,
    scorer: &dyn ModelClient,
    keep_fraction: f64,
    ctx: &OperatorContext,
) -> Dataset {
    assert!(keep_fraction > 0.0 && keep_fraction <= 1.0, "keep_fraction must lie in (0, 1]");
    let n = d.len();
    let keep = ((keep_fraction * n as f64).ceil() as usize).min(n);
    if keep == n {
        return d.clone();
    }
    let scores: Vec<f64> = if role_mismatch(scorer, ClientRole::Scorer).is_some() {
        vec![f64::NEG_INFINITY; n]
    } else {
        ctx.pool().install(|| {
            d.samples()
                .par_iter()
                .map(|s| {
                    let req = ModelRequest::for_sample(ClientRole::Scorer, FieldMode::Both, s, ctx.seed);
                    match call_with_retry(scorer, &req, &ctx.retry) {
                        Ok(resp) => resp.score.filter(|v| !v.is_nan()).unwrap_or(f64::NEG_INFINITY),
                        Err(_) => f64::NEG_INFINITY,
                    }
                })
                .collect()
        })
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen: Vec<usize> = order.into_iter().take(keep).collect();
    chosen.sort_unstable();
    Dataset::from_samples_unchecked(chosen.into_iter().map(|i| d.samples()[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{ClientError, ModelResponse, RetryPolicy, ScriptedClient};
    use crate::operators::OperatorConfig;
    use std::sync::Arc;

    fn ctx() -> OperatorContext {
        OperatorContext::builtin(OperatorConfig::default(), 7).with_retry(RetryPolicy::no_wait(2))
    }

    fn trimmer() -> ScriptedClient {
        ScriptedClient::new(ClientRole::Optimizer, "trim", |req| {
            let src = if req.mode == FieldMode::Question { &req.question } else { &req.answer };
            Ok(ModelResponse::text(src.trim()))
        })
    }

    fn answer_template() -> ScriptedClient {
        ScriptedClient::new(ClientRole::Generator, "template", |req| {
            Ok(match req.mode {
                FieldMode::Question => ModelResponse::text(format!("QUESTION({})", req.answer)),
                _ => ModelResponse::text(format!("ANSWER({})", req.question)),
            })
        })
    }

    #[test]
    fn optimize_question_only() {
        let s = Sample::new("1", "  q  ", "a");
        let out = optimize_sample(&s, FieldMode::Question, &trimmer(), &ctx());
        assert_eq!((out.question.as_str(), out.answer.as_str()), ("q", "a"));
        assert_eq!(out.id, "1");
        assert_eq!(out.meta.get(META_OPTIMIZED), Some(&MetaValue::Str("question".into())));
    }

    #[test]
    fn optimize_answer_leaves_question() {
        let s = Sample::new("1", "  q  ", "  a ");
        let out = optimize_sample(&s, FieldMode::Answer, &trimmer(), &ctx());
        assert_eq!(out.question, "  q  ");
        assert_eq!(out.answer, "a");
    }

    #[test]
    fn optimize_failure_passes_through_with_flag() {
        let c = ScriptedClient::new(ClientRole::Optimizer, "down", |_| Err(ClientError::Transport("refused".into())));
        let s = Sample::new("1", "q", "a");
        let out = optimize_sample(&s, FieldMode::Both, &c, &ctx());
        assert_eq!(c.calls(), 2, "bounded retries");
        let mut expected = s.clone();
        expected.meta.insert(META_OPTIMIZE_ERROR.into(), MetaValue::Str("transport: refused".into()));
        assert_eq!(out, expected);
    }

    #[test]
    fn generate_missing_answer() {
        let g = answer_template();
        let shots = [Sample::new("s", "sq", "sa")];
        let out = generate_missing(&Sample::new("1", "q", ""), &shots, &g, &ctx());
        assert_eq!((out.question.as_str(), out.answer.as_str()), ("q", "ANSWER(q)"));
        assert_eq!(g.calls(), 1);
    }

    #[test]
    fn generate_nothing_missing_makes_no_call() {
        let g = answer_template();
        let s = Sample::new("1", "q", "a");
        let out = generate_missing(&s, &[s.clone()], &g, &ctx());
        assert_eq!(out, s);
        assert_eq!(g.calls(), 0);
    }

    #[test]
    fn generate_both_question_first() {
        let g = answer_template();
        let out = generate_missing(&Sample::new("1", "", ""), &[Sample::new("s", "x", "y")], &g, &ctx());
        assert_eq!(out.question, "QUESTION()");
        assert_eq!(out.answer, "ANSWER(QUESTION())");
        assert_eq!(g.calls(), 2);
    }

    fn scored(scores: Vec<f64>) -> (Dataset, ScriptedClient) {
        let d = Dataset::new(
            (0..scores.len()).map(|i| Sample::new(format!("{i}"), format!("q{i}"), "a")).collect(),
        )
        .unwrap();
        let table = Arc::new(scores);
        let c = ScriptedClient::new(ClientRole::Scorer, "table", move |req| {
            let i: usize = req.question[1..].parse().unwrap();
            Ok(ModelResponse::score(table[i]))
        });
        (d, c)
    }

    fn ids(d: &Dataset) -> Vec<String> {
        d.iter().map(|s| s.id.clone()).collect()
    }

    #[test]
    fn selection_keep_all_is_identity() {
        let (d, c) = scored(vec![0.1, 0.2, 0.3]);
        assert_eq!(select_high_quality(&d, &c, 1.0, &ctx()), d);
    }

    #[test]
    fn selection_tie_breaks_by_position() {
        let (d, c) = scored(vec![0.9, 0.1, 0.5, 0.5]);
        let out = select_high_quality(&d, &c, 0.5, &ctx());
        // 0-based ids 0 and 2, i.e. the first and third samples.
        assert_eq!(ids(&out), ["0", "2"]);
    }

    #[test]
    fn selection_all_equal_keeps_first() {
        let (d, c) = scored(vec![0.3; 8]);
        assert_eq!(ids(&select_high_quality(&d, &c, 0.25, &ctx())), ["0", "1"]);
    }

    #[test]
    fn selection_failed_score_ranks_last() {
        let d = Dataset::new((0..3).map(|i| Sample::new(format!("{i}"), format!("q{i}"), "a")).collect()).unwrap();
        let c = ScriptedClient::new(ClientRole::Scorer, "flaky", |req| {
            if req.question == "q0" {
                Err(ClientError::Status(500))
            } else {
                Ok(ModelResponse::score(0.1))
            }
        });
        assert_eq!(ids(&select_high_quality(&d, &c, 0.6, &ctx())), ["1", "2"]);
    }
}
