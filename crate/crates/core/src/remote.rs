//! HTTP implementations of the client traits.
//!
//! Every endpoint takes a JSON `POST` and answers with JSON. When an API key
//! is configured it is sent as a bearer token. The wire shapes are:
//!
//! | client    | request                                   | response                          |
//! |-----------|-------------------------------------------|-----------------------------------|
//! | model     | [`ModelRequest`]                          | [`ModelResponse`]                 |
//! | screener  | `{question, answer}`                      | `{label: 0 or 1, reasons?}`       |
//! | embedder  | `{text}`                                  | `{embedding: [f64]}`              |
//! | agent     | `{messages, temperature, seed}`           | `{content}`                       |
//! | trainer   | [`TrainerRequest`]                        | `{score}`                         |

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentClient, AgentRequest};
use crate::clients::{ClientError, ClientRole, ModelClient, ModelRequest, ModelResponse, ResponseStatus};
use crate::corpus::Sample;
use crate::dps::EmbeddingClient;
use crate::eval::{TrainerClient, TrainerRequest};
use crate::screener::{HeuristicScreener, Label, Screener, ScreenerVerdict};

pub const ENV_AGENT_URL: &str = "DPFORGE_AGENT_URL";
pub const ENV_EMBEDDER_URL: &str = "DPFORGE_EMBEDDER_URL";
pub const ENV_SCREENER_URL: &str = "DPFORGE_SCREENER_URL";
pub const ENV_TRAINER_URL: &str = "DPFORGE_TRAINER_URL";
pub const ENV_OPTIMIZER_URL: &str = "DPFORGE_OPTIMIZER_URL";
pub const ENV_GENERATOR_URL: &str = "DPFORGE_GENERATOR_URL";
pub const ENV_SCORER_URL: &str = "DPFORGE_SCORER_URL";
pub const ENV_API_KEY: &str = "DPFORGE_API_KEY";

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// A JSON-over-HTTP endpoint.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(HttpEndpoint { url: url.into(), api_key, client })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn post<Req: Serialize + ?Sized, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ClientError> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ClientError::Status(status.as_u16()));
        }
        resp.json::<Resp>().map_err(|e| ClientError::Protocol(e.to_string()))
    }
}

pub struct HttpModelClient {
    role: ClientRole,
    endpoint: HttpEndpoint,
}

impl HttpModelClient {
    pub fn new(role: ClientRole, endpoint: HttpEndpoint) -> Self {
        HttpModelClient { role, endpoint }
    }
}

impl ModelClient for HttpModelClient {
    fn role(&self) -> ClientRole {
        self.role
    }

    fn identity(&self) -> String {
        format!("http:{}:{}", self.role, self.endpoint.url())
    }

    fn call(&self, req: &ModelRequest) -> Result<ModelResponse, ClientError> {
        let resp: ModelResponse = self.endpoint.post(req)?;
        if resp.status == ResponseStatus::Error {
            return Err(ClientError::Failed(resp.text.unwrap_or_default()));
        }
        Ok(resp)
    }
}

#[derive(Serialize)]
struct ScreenRequest<'a> {
    question: &'a str,
    answer: &'a str,
}

#[derive(Deserialize)]
struct ScreenResponse {
    label: u8,
    #[serde(default)]
    reasons: Vec<String>,
}

/// Remote screener that falls back to the heuristic when the endpoint fails.
pub struct HttpScreener {
    endpoint: HttpEndpoint,
    fallback: HeuristicScreener,
}

impl HttpScreener {
    pub fn new(endpoint: HttpEndpoint, fallback: HeuristicScreener) -> Self {
        HttpScreener { endpoint, fallback }
    }

    fn remote(&self, s: &Sample) -> Result<ScreenerVerdict, ClientError> {
        let r: ScreenResponse = self.endpoint.post(&ScreenRequest { question: &s.question, answer: &s.answer })?;
        let label = match r.label {
            0 => Label::Clean,
            1 => Label::Noisy,
            other => return Err(ClientError::Protocol(format!("label must be 0 or 1, got {other}"))),
        };
        Ok(ScreenerVerdict { label, reasons: r.reasons, fallback: false })
    }
}

impl Screener for HttpScreener {
    fn identity(&self) -> String {
        format!("http:screener:{}", self.endpoint.url())
    }

    fn classify(&self, s: &Sample) -> ScreenerVerdict {
        match self.remote(s) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("screener endpoint failed for sample {} ({e}); using heuristic", s.id);
                let mut v = self.fallback.classify(s);
                v.fallback = true;
                v
            }
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
    dimension: usize,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint, dimension: usize) -> Self {
        HttpEmbedder { endpoint, dimension }
    }
}

impl EmbeddingClient for HttpEmbedder {
    fn identity(&self) -> String {
        format!("http:embedder:{}:{}", self.endpoint.url(), self.dimension)
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, ClientError> {
        let r: EmbedResponse = self.endpoint.post(&EmbedRequest { text })?;
        Ok(r.embedding)
    }
}

#[derive(Deserialize)]
struct AgentResponse {
    content: String,
}

pub struct HttpAgent {
    endpoint: HttpEndpoint,
}

impl HttpAgent {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpAgent { endpoint }
    }
}

impl AgentClient for HttpAgent {
    fn identity(&self) -> String {
        format!("http:agent:{}", self.endpoint.url())
    }

    fn complete(&self, req: &AgentRequest) -> Result<String, ClientError> {
        let r: AgentResponse = self.endpoint.post(req)?;
        Ok(r.content)
    }
}

#[derive(Deserialize)]
struct TrainerResponse {
    score: f64,
}

pub struct HttpTrainer {
    endpoint: HttpEndpoint,
}

impl HttpTrainer {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpTrainer { endpoint }
    }
}

impl TrainerClient for HttpTrainer {
    fn identity(&self) -> String {
        format!("http:trainer:{}", self.endpoint.url())
    }

    fn train_and_score(&self, req: &TrainerRequest) -> Result<f64, ClientError> {
        let r: TrainerResponse = self.endpoint.post(req)?;
        Ok(r.score)
    }
}
