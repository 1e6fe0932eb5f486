//! Run configuration: a TOML file plus environment overrides for endpoints,
//! credentials and the cache location.
//!
//! Relative paths in the file resolve against the file's directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentClient, HillClimbAgent, PromptTemplates, SearchConfig, TemplateError, MAX_GROUP_SIZE};
use crate::cache::CACHE_DIR_ENV;
use crate::clients::{ClientError, ClientRole};
use crate::dps::{EmbeddingClient, HashingEmbedder};
use crate::eval::{EvalConfig, EvalMode, TrainerClient};
use crate::operators::{OperatorConfig, OperatorContext};
use crate::remote::{
    HttpAgent, HttpEmbedder, HttpEndpoint, HttpModelClient, HttpScreener, HttpTrainer, ENV_AGENT_URL, ENV_API_KEY,
    ENV_EMBEDDER_URL, ENV_GENERATOR_URL, ENV_OPTIMIZER_URL, ENV_SCORER_URL, ENV_SCREENER_URL, ENV_TRAINER_URL,
};
use crate::screener::{CachedScreener, HeuristicScreener};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("parsing config {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dataset not found: {0}")]
    MissingDataset(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("building client: {0}")]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatePaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration: Option<PathBuf>,
}

/// Remote endpoints. Any endpoint left unset uses the built-in deterministic
/// implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedder: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub screener: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trainer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scorer: Option<String>,
    /// Vector length returned by a remote embedder.
    pub embedding_dimension: usize,
    pub timeout_secs: u64,
}

impl Default for Endpoints {
    fn default() -> Self {
        Endpoints {
            agent: None,
            embedder: None,
            screener: None,
            trainer: None,
            optimizer: None,
            generator: None,
            scorer: None,
            embedding_dimension: 256,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_root: Option<PathBuf>,
    pub seed: u64,
    pub sampling_rate: f64,
    pub initial_group_size: usize,
    pub max_group_size: usize,
    pub max_rounds: u32,
    pub epsilon: f64,
    pub temperature: f64,
    pub max_in_flight: usize,
    pub templates: TemplatePaths,
    pub operators: OperatorConfig,
    pub eval: EvalConfig,
    pub endpoints: Endpoints,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            output_dir: PathBuf::from("dpforge-run"),
            cache_root: None,
            seed: 0,
            sampling_rate: 0.2,
            initial_group_size: crate::agent::DEFAULT_INITIAL_GROUP_SIZE,
            max_group_size: MAX_GROUP_SIZE,
            max_rounds: crate::agent::DEFAULT_MAX_ROUNDS,
            epsilon: crate::agent::DEFAULT_EPSILON,
            temperature: crate::agent::DEFAULT_TEMPERATURE,
            max_in_flight: crate::operators::DEFAULT_MAX_IN_FLIGHT,
            templates: TemplatePaths::default(),
            operators: OperatorConfig::default(),
            eval: EvalConfig::default(),
            endpoints: Endpoints::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse { path: origin.to_string(), source })
    }

    /// Reads, resolves paths, applies environment overrides and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let mut cfg = RunConfig::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env(|k| std::env::var(k).ok());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset);
        resolve(base, &mut self.output_dir);
        if let Some(c) = &mut self.cache_root {
            resolve(base, c);
        }
        if let Some(p) = &mut self.templates.initial {
            resolve(base, p);
        }
        if let Some(p) = &mut self.templates.iteration {
            resolve(base, p);
        }
    }

    /// Environment variables take precedence over the file.
    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        let e = &mut self.endpoints;
        for (var, slot) in [
            (ENV_AGENT_URL, &mut e.agent),
            (ENV_EMBEDDER_URL, &mut e.embedder),
            (ENV_SCREENER_URL, &mut e.screener),
            (ENV_TRAINER_URL, &mut e.trainer),
            (ENV_OPTIMIZER_URL, &mut e.optimizer),
            (ENV_GENERATOR_URL, &mut e.generator),
            (ENV_SCORER_URL, &mut e.scorer),
        ] {
            if let Some(v) = get(var).filter(|v| !v.is_empty()) {
                *slot = Some(v);
            }
        }
        if let Some(v) = get(CACHE_DIR_ENV).filter(|v| !v.is_empty()) {
            self.cache_root = Some(PathBuf::from(v));
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.sampling_rate > 0.0 && self.sampling_rate <= 1.0) {
            return bad(format!("sampling_rate {} outside (0, 1]", self.sampling_rate));
        }
        if self.max_group_size == 0 || self.max_group_size > MAX_GROUP_SIZE {
            return bad(format!("max_group_size must be within 1..={MAX_GROUP_SIZE}"));
        }
        if self.initial_group_size == 0 || self.initial_group_size > self.max_group_size {
            return bad("initial_group_size must be within 1..=max_group_size".into());
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon {} must be a non-negative number", self.epsilon));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be a non-negative number", self.temperature));
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if self.endpoints.embedding_dimension == 0 {
            return bad("endpoints.embedding_dimension must be at least 1".into());
        }
        self.operators.validate().map_err(|e| ConfigError::Invalid(format!("operators: {e}")))?;
        self.eval.validate().map_err(|e| ConfigError::Invalid(format!("eval: {e}")))?;
        if self.eval.mode == EvalMode::Trainer && self.endpoints.trainer.is_none() {
            return bad("eval.mode = \"trainer\" needs endpoints.trainer".into());
        }
        if self.dataset.as_os_str().is_empty() {
            return bad("dataset path is required".into());
        }
        if !self.dataset.is_file() {
            return Err(ConfigError::MissingDataset(self.dataset.display().to_string()));
        }
        for p in [&self.templates.initial, &self.templates.iteration].into_iter().flatten() {
            if !p.is_file() {
                return bad(format!("template not found: {}", p.display()));
            }
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_root.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn search_config(&self) -> Result<SearchConfig, ConfigError> {
        Ok(SearchConfig {
            sampling_rate: self.sampling_rate,
            initial_group_size: self.initial_group_size,
            max_group_size: self.max_group_size,
            max_rounds: self.max_rounds,
            seed: self.seed,
            temperature: self.temperature,
            templates: PromptTemplates::load(self.templates.initial.as_deref(), self.templates.iteration.as_deref())?,
        })
    }

    /// Instantiates every client, remote where an endpoint is configured and
    /// built-in otherwise.
    pub fn build_clients(&self) -> Result<RunClients, ConfigError> {
        let e = &self.endpoints;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        let timeout = Duration::from_secs(e.timeout_secs);
        let endpoint = |url: &String| HttpEndpoint::new(url.clone(), key.clone(), timeout);

        let mut ctx = OperatorContext::builtin(self.operators.clone(), self.seed).with_max_in_flight(self.max_in_flight);
        if let Some(url) = &e.screener {
            let remote = HttpScreener::new(endpoint(url)?, HeuristicScreener::new(self.operators.clone()));
            ctx = ctx.with_screener(Arc::new(CachedScreener::new(Arc::new(remote))));
        }
        if let Some(url) = &e.optimizer {
            ctx = ctx.with_optimizer(Arc::new(HttpModelClient::new(ClientRole::Optimizer, endpoint(url)?)));
        }
        if let Some(url) = &e.generator {
            ctx = ctx.with_generator(Arc::new(HttpModelClient::new(ClientRole::Generator, endpoint(url)?)));
        }
        if let Some(url) = &e.scorer {
            ctx = ctx.with_scorer(Arc::new(HttpModelClient::new(ClientRole::Scorer, endpoint(url)?)));
        }
        let agent: Arc<dyn AgentClient> = match &e.agent {
            Some(url) => Arc::new(HttpAgent::new(endpoint(url)?)),
            None => Arc::new(HillClimbAgent::new(self.initial_group_size, self.epsilon)),
        };
        let embedder: Arc<dyn EmbeddingClient> = match &e.embedder {
            Some(url) => Arc::new(HttpEmbedder::new(endpoint(url)?, e.embedding_dimension)),
            None => Arc::new(HashingEmbedder::default()),
        };
        let trainer: Option<Arc<dyn TrainerClient>> = match &e.trainer {
            Some(url) => Some(Arc::new(HttpTrainer::new(endpoint(url)?))),
            None => None,
        };
        Ok(RunClients { agent, embedder, ctx, trainer })
    }
}

/// The clients a run talks to.
#[derive(Clone)]
pub struct RunClients {
    pub agent: Arc<dyn AgentClient>,
    pub embedder: Arc<dyn EmbeddingClient>,
    pub ctx: OperatorContext,
    pub trainer: Option<Arc<dyn TrainerClient>>,
}

impl RunClients {
    /// Built-in deterministic clients for `cfg`.
    pub fn builtin(cfg: &RunConfig) -> Self {
        RunClients {
            agent: Arc::new(HillClimbAgent::new(cfg.initial_group_size, cfg.epsilon)),
            embedder: Arc::new(HashingEmbedder::default()),
            ctx: OperatorContext::builtin(cfg.operators.clone(), cfg.seed).with_max_in_flight(cfg.max_in_flight),
            trainer: None,
        }
    }
}
