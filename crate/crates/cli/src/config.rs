//! TOML configuration with flag and environment overrides. Unknown keys are
//! rejected; flags win over environment, environment over file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use layergraph::decompose::{
    ChatClient, Decomposer, HttpChatClient, RecordingChatClient, ReplayChatClient,
};
use layergraph::embed::{
    Embedder, HashEmbedder, ServiceEmbedder, DEFAULT_DIMENSION, DEFAULT_INDEX_SEED,
    DEFAULT_SIGN_SEED,
};
use layergraph::eval::EvalParams;
use layergraph::retrieval::{RetrievalMode, TraversalParams};
use serde::Deserialize;

pub const EMBED_URL_ENV: &str = "LAYERGRAPH_EMBED_URL";
pub const LLM_URL_ENV: &str = "LAYERGRAPH_LLM_URL";

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub embedder: EmbedderSection,
    pub decomposer: DecomposerSection,
    pub retrieval: RetrievalSection,
    pub eval: EvalSection,
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderSection {
    pub backend: String,
    pub dimension: usize,
    pub index_seed: u64,
    pub sign_seed: u64,
    pub service_url: String,
    pub timeout_ms: u64,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self {
            backend: "hash".into(),
            dimension: DEFAULT_DIMENSION,
            index_seed: DEFAULT_INDEX_SEED,
            sign_seed: DEFAULT_SIGN_SEED,
            service_url: String::new(),
            timeout_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecomposerSection {
    pub backend: String,
    pub llm_url: String,
    pub llm_model: String,
    pub llm_timeout_ms: u64,
    /// Optional template overrides; built-in templates otherwise.
    pub decompose_prompt: Option<PathBuf>,
    pub modality_prompt: Option<PathBuf>,
    /// Playback file: answer llm calls from recorded exchanges.
    pub replay_path: Option<PathBuf>,
    /// Record llm exchanges to this file.
    pub record_path: Option<PathBuf>,
}

impl Default for DecomposerSection {
    fn default() -> Self {
        Self {
            backend: "rule".into(),
            llm_url: String::new(),
            llm_model: String::new(),
            llm_timeout_ms: 30_000,
            decompose_prompt: None,
            modality_prompt: None,
            replay_path: None,
            record_path: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub beam_width: usize,
    pub iterations: usize,
    pub n_ret: usize,
    pub mode: String,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            beam_width: 30,
            iterations: 1,
            n_ret: 10,
            mode: "full".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub recall_k: usize,
    pub mrr_k: usize,
    pub hit_rate: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            recall_k: 3,
            mrr_k: 10,
            hit_rate: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub corpus: PathBuf,
    pub index: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub report: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            corpus: "corpus.jsonl".into(),
            index: "index".into(),
            queries: "queries.jsonl".into(),
            qrels: "queries.jsonl".into(),
            report: "report.json".into(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))
            }
        }
    }

    pub fn parse_mode(mode: &str) -> Result<RetrievalMode> {
        match mode {
            "full" => Ok(RetrievalMode::Full),
            "no_qd" => Ok(RetrievalMode::NoQd),
            "knn" => Ok(RetrievalMode::Knn),
            other => bail!("unknown retrieval mode {other:?} (expected full, no_qd, or knn)"),
        }
    }

    pub fn traversal_params(&self) -> Result<TraversalParams> {
        Ok(TraversalParams {
            beam_width: self.retrieval.beam_width,
            iterations: self.retrieval.iterations,
            n_ret: self.retrieval.n_ret,
            mode: Self::parse_mode(&self.retrieval.mode)?,
        })
    }

    pub fn eval_params(&self) -> EvalParams {
        EvalParams {
            recall_k: self.eval.recall_k,
            mrr_k: self.eval.mrr_k,
            hit_rate: self.eval.hit_rate,
        }
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>> {
        if self.embedder.dimension < 8 {
            bail!("embedder.dimension must be at least 8");
        }
        match self.embedder.backend.as_str() {
            "hash" => Ok(Box::new(HashEmbedder {
                dimension: self.embedder.dimension,
                index_seed: self.embedder.index_seed,
                sign_seed: self.embedder.sign_seed,
            })),
            "service" => {
                let url = std::env::var(EMBED_URL_ENV)
                    .ok()
                    .filter(|u| !u.is_empty())
                    .unwrap_or_else(|| self.embedder.service_url.clone());
                if url.is_empty() {
                    bail!("service embedder needs embedder.service_url or {EMBED_URL_ENV}");
                }
                Ok(Box::new(ServiceEmbedder::new(
                    url,
                    self.embedder.dimension,
                    Duration::from_millis(self.embedder.timeout_ms),
                )?))
            }
            other => bail!("unknown embedder backend {other:?} (expected hash or service)"),
        }
    }

    pub fn build_decomposer(&self) -> Result<Decomposer> {
        let decomposer = match self.decomposer.backend.as_str() {
            "rule" => Decomposer::rule(),
            "none" => Decomposer::whole_query(),
            "llm" => {
                let chat: Box<dyn ChatClient> = match &self.decomposer.replay_path {
                    Some(replay) => Box::new(
                        ReplayChatClient::from_file(replay)
                            .with_context(|| format!("loading replay {}", replay.display()))?,
                    ),
                    None => {
                        let url = std::env::var(LLM_URL_ENV)
                            .ok()
                            .filter(|u| !u.is_empty())
                            .unwrap_or_else(|| self.decomposer.llm_url.clone());
                        if url.is_empty() {
                            bail!("llm decomposer needs decomposer.llm_url or {LLM_URL_ENV}");
                        }
                        let http = HttpChatClient::new(
                            url,
                            self.decomposer.llm_model.clone(),
                            Duration::from_millis(self.decomposer.llm_timeout_ms),
                        )?;
                        match &self.decomposer.record_path {
                            Some(record) => Box::new(RecordingChatClient::new(http, record)?),
                            None => Box::new(http),
                        }
                    }
                };
                Decomposer::llm(chat)
            }
            other => bail!("unknown decomposer backend {other:?} (expected rule, llm, or none)"),
        };
        match (&self.decomposer.decompose_prompt, &self.decomposer.modality_prompt) {
            (None, None) => Ok(decomposer),
            (decompose, modality) => {
                let read = |path: &Option<PathBuf>, fallback: &str| -> Result<String> {
                    match path {
                        Some(p) => std::fs::read_to_string(p)
                            .with_context(|| format!("reading prompt {}", p.display())),
                        None => Ok(fallback.to_string()),
                    }
                };
                Ok(decomposer.with_prompts(
                    read(decompose, layergraph::decompose::DEFAULT_DECOMPOSE_PROMPT)?,
                    read(modality, layergraph::decompose::DEFAULT_MODALITY_PROMPT)?,
                ))
            }
        }
    }
}
