//! Agent-guided search over data-processing strategies for instruction-tuning
//! corpora.
//!
//! A strategy is an ordered sequence of processing teams (cleaning,
//! optimization, generation, selection). The search samples a representative
//! subset of the corpus, asks an agent to propose strategies, evaluates them
//! against a no-processing baseline, and feeds the relative scores back until
//! the agent settles on a best strategy.

pub mod agent;
pub mod cache;
pub mod cli;
pub mod clients;
pub mod config;
pub mod corpus;
pub mod dps;
pub mod eval;
pub mod operators;
pub mod remote;
pub mod report;
pub mod screener;
pub mod strategy;
pub mod synth;
pub mod text;
