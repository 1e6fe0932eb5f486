//! Deterministic local-search agent used when no remote agent is configured.
//!
//! It keeps no state of its own: every decision is derived from the feedback
//! blocks in the conversation so far. The first round proposes single teams.
//! Later rounds propose unevaluated neighbours of the best strategy found
//! (append, insert, adjacent swap, removal). It stops with the best strategy
//! once a round fails to improve on it, and declares that no processing is
//! needed when a whole round scores within `epsilon` of the baseline or
//! nothing beats the baseline by more than `epsilon`.

use super::{
    format_combinations, parse_feedback, parse_group_limit, AgentClient, AgentRequest, ChatRole, BEST_TEAM_MARKER,
    DEFAULT_EPSILON, DEFAULT_INITIAL_GROUP_SIZE, NO_PROCESSING_MARKER,
};
use crate::clients::ClientError;
use crate::strategy::{Strategy, Team};

#[derive(Debug, Clone, PartialEq)]
pub struct HillClimbAgent {
    pub group_size: usize,
    pub epsilon: f64,
}

impl Default for HillClimbAgent {
    fn default() -> Self {
        HillClimbAgent { group_size: DEFAULT_INITIAL_GROUP_SIZE, epsilon: DEFAULT_EPSILON }
    }
}

fn neighbours(best: &Strategy) -> Vec<Strategy> {
    let teams = best.teams();
    let mut out: Vec<Vec<Team>> = Vec::new();
    let missing: Vec<Team> = Team::ALL.into_iter().filter(|t| !best.contains(*t)).collect();
    for &t in &missing {
        let mut v = teams.to_vec();
        v.push(t);
        out.push(v);
    }
    for &t in &missing {
        for pos in 0..teams.len() {
            let mut v = teams.to_vec();
            v.insert(pos, t);
            out.push(v);
        }
    }
    for i in 0..teams.len().saturating_sub(1) {
        let mut v = teams.to_vec();
        v.swap(i, i + 1);
        out.push(v);
    }
    if teams.len() > 1 {
        for i in 0..teams.len() {
            let mut v = teams.to_vec();
            v.remove(i);
            out.push(v);
        }
    }
    out.into_iter().filter_map(|v| Strategy::new(v).ok()).collect()
}

impl HillClimbAgent {
    pub fn new(group_size: usize, epsilon: f64) -> Self {
        HillClimbAgent { group_size, epsilon }
    }

    /// Produces the reply for a conversation given as its user messages.
    pub fn decide(&self, user_messages: &[&str]) -> String {
        let limit = user_messages
            .last()
            .and_then(|m| parse_group_limit(m))
            .unwrap_or(self.group_size)
            .max(1);
        let rounds: Vec<Vec<(Strategy, f64)>> =
            user_messages.iter().map(|m| parse_feedback(m)).filter(|r| !r.is_empty()).collect();
        let Some(latest) = rounds.last() else {
            let singles: Vec<Strategy> =
                Team::ALL.iter().take(limit).map(|t| Strategy::new(vec![*t]).expect("single team")).collect();
            return format!("{}###Reasons for Different Combinations###\n- Measure each team alone first.\n", format_combinations(&singles));
        };
        if latest.iter().all(|(_, s)| s.abs() < self.epsilon) {
            return format!("{NO_PROCESSING_MARKER}\nEvery combination scored within {} of the original data.\n", self.epsilon);
        }

        let mut seen: Vec<(Strategy, f64)> = Vec::new();
        for (f, s) in rounds.iter().flatten() {
            if !seen.iter().any(|(g, _)| g == f) {
                seen.push((f.clone(), *s));
            }
        }
        let mut best = &seen[0];
        for e in &seen[1..] {
            if e.1 > best.1 {
                best = e;
            }
        }
        if best.1 <= self.epsilon {
            return format!("{NO_PROCESSING_MARKER}\nNo combination improved on the original data.\n");
        }
        let best_team_reply = |f: &Strategy| {
            format!("{BEST_TEAM_MARKER}\n{}", format_combinations(std::slice::from_ref(f)))
        };
        if rounds.len() >= 2 {
            let earlier = rounds[..rounds.len() - 1].iter().flatten().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            let recent = latest.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
            if recent <= earlier {
                return best_team_reply(&best.0);
            }
        }
        let mut proposals: Vec<Strategy> = Vec::new();
        for n in neighbours(&best.0) {
            if proposals.len() == limit {
                break;
            }
            if !seen.iter().any(|(g, _)| *g == n) && !proposals.contains(&n) {
                proposals.push(n);
            }
        }
        if proposals.is_empty() {
            return best_team_reply(&best.0);
        }
        format!(
            "{}###Reasons for Different Combinations###\n- Explore small changes around {}.\n",
            format_combinations(&proposals),
            best.0
        )
    }
}

impl AgentClient for HillClimbAgent {
    fn identity(&self) -> String {
        format!("builtin:hill-climb:v1:{}:{}", self.group_size, self.epsilon)
    }

    fn complete(&self, req: &AgentRequest) -> Result<String, ClientError> {
        let users: Vec<&str> =
            req.messages.iter().filter(|m| m.role == ChatRole::User).map(|m| m.content.as_str()).collect();
        Ok(self.decide(&users))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{parse_agent_response, DecisionKind};
    use crate::strategy::Team::*;

    fn s(v: &[Team]) -> Strategy {
        Strategy::new(v.to_vec()).unwrap()
    }

    fn feedback(pairs: &[(Strategy, f64)]) -> String {
        let (fs, ss): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        crate::agent::format_feedback(&fs, &ss)
    }

    fn decide(agent: &HillClimbAgent, msgs: &[String]) -> DecisionKind {
        let refs: Vec<&str> = msgs.iter().map(String::as_str).collect();
        parse_agent_response(&agent.decide(&refs)).unwrap().kind
    }

    #[test]
    fn starts_with_singletons() {
        let a = HillClimbAgent::default();
        let k = decide(&a, &["Propose no more than 4 combinations.".into()]);
        assert_eq!(k, DecisionKind::ProposeGroup(Team::ALL.iter().map(|t| s(&[*t])).collect()));
        let k = decide(&a, &["no more than 2".into()]);
        assert_eq!(k, DecisionKind::ProposeGroup(vec![s(&[Cleaning]), s(&[Optimization])]));
    }

    #[test]
    fn flat_round_means_no_processing() {
        let a = HillClimbAgent::default();
        let r1 = feedback(&[(s(&[Cleaning]), 0.001), (s(&[Selection]), -0.004)]);
        assert_eq!(decide(&a, &["init".into(), r1]), DecisionKind::NoProcessing);
    }

    #[test]
    fn harmful_round_means_no_processing() {
        let a = HillClimbAgent::default();
        let r1 = feedback(&[(s(&[Cleaning]), -0.2), (s(&[Selection]), 0.004)]);
        assert_eq!(decide(&a, &["init".into(), r1]), DecisionKind::NoProcessing);
    }

    #[test]
    fn climbs_then_stops() {
        let a = HillClimbAgent::default();
        let r1 = feedback(&[(s(&[Cleaning]), 0.1), (s(&[Optimization]), 0.02), (s(&[Generation]), 0.0), (s(&[Selection]), 0.05)]);
        let msgs = vec!["no more than 4".to_string(), r1];
        let k = decide(&a, &msgs);
        assert_eq!(
            k,
            DecisionKind::ProposeGroup(vec![
                s(&[Cleaning, Optimization]),
                s(&[Cleaning, Generation]),
                s(&[Cleaning, Selection]),
                s(&[Optimization, Cleaning]),
            ])
        );
        let r2 = feedback(&[(s(&[Cleaning, Selection]), 0.2), (s(&[Cleaning, Optimization]), 0.1)]);
        let mut msgs2 = msgs.clone();
        msgs2.push(r2);
        match decide(&a, &msgs2) {
            DecisionKind::ProposeGroup(g) => {
                assert_eq!(g[0], s(&[Cleaning, Selection, Optimization]));
                assert!(!g.contains(&s(&[Cleaning])), "evaluated strategies are not re-proposed");
            }
            other => panic!("{other:?}"),
        }
        let r3 = feedback(&[(s(&[Cleaning, Selection, Optimization]), 0.15)]);
        msgs2.push(r3);
        assert_eq!(decide(&a, &msgs2), DecisionKind::BestTeam(s(&[Cleaning, Selection])));
    }

    #[test]
    fn neighbours_of_full_strategy() {
        let n = neighbours(&s(&[Cleaning, Optimization, Generation, Selection]));
        // 3 swaps + 4 removals, nothing to add
        assert_eq!(n.len(), 7);
    }
}
