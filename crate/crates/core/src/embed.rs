//! Text encoders behind a pluggable [`Embedder`] trait: a deterministic
//! feature-hash backend and an HTTP service client, plus the cosine
//! similarity used everywhere downstream.

use serde::{Deserialize, Serialize};
use std::time::Duration;

use crate::error::{Error, Result};

/// Default embedding dimension.
pub const DEFAULT_DIMENSION: usize = 256;
/// Fixed bucket-hash seed (golden-ratio constant); recorded in the index
/// manifest so a loaded index can reject a mismatched embedder config.
pub const DEFAULT_INDEX_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
/// Fixed sign-hash seed (splitmix64 constant).
pub const DEFAULT_SIGN_SEED: u64 = 0xbf58_476d_1ce4_e5b9;

/// Modality instruction passed to the encoder alongside the content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Instruction {
    Text,
    Table,
    Image,
    #[default]
    None,
}

impl Instruction {
    /// Label used on the wire; the empty string means "no instruction".
    pub fn wire_label(self) -> &'static str {
        match self {
            Instruction::Text => "text",
            Instruction::Table => "table",
            Instruction::Image => "image",
            Instruction::None => "",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedRequest {
    pub content: String,
    pub instruction: Instruction,
}

impl EmbedRequest {
    pub fn new(content: impl Into<String>, instruction: Instruction) -> Self {
        Self {
            content: content.into(),
            instruction,
        }
    }
}

/// A fixed-length vector; either all-zero or L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn zeros(d: usize) -> Self {
        Embedding(vec![0.0; d])
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }

    /// Dot product in f64. Equals cosine for normalized vectors, which is
    /// all the graph ever stores; zero vectors yield 0.
    pub fn sim(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum()
    }

    fn normalized(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Embedding(values.iter().map(|_| 0.0).collect());
        }
        Embedding(values.iter().map(|v| (v / norm) as f32).collect())
    }
}

/// Full cosine similarity; zero vectors compare as 0.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    Ok(u.sim(v) / (nu * nv))
}

/// Seeded FNV-1a over the token bytes, finalized with an avalanche mix.
/// The mix matters: raw FNV low bits depend only on an 8-bit byte-wise
/// state, so reducing mod a power of two would collide structured token
/// families wholesale.
fn fnv1a(token: &str, seed: u64) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for byte in token.as_bytes() {
        hash ^= *byte as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash ^= hash >> 33;
    hash = hash.wrapping_mul(0xff51_afd7_ed55_8ccd);
    hash ^= hash >> 33;
    hash = hash.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    hash ^ (hash >> 33)
}

fn tokenize(content: &str) -> impl Iterator<Item = String> + '_ {
    content
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Deterministic sign-hash embedding: every token contributes ±1 to one of
/// `d` buckets; the modality instruction is prepended as a `mod:<label>`
/// token; the result is L2-normalized (empty token set gives the zero
/// vector).
pub fn hash_embed(request: &EmbedRequest, d: usize, index_seed: u64, sign_seed: u64) -> Embedding {
    debug_assert!(d >= 8);
    let mut acc = vec![0.0f64; d];
    let mut bump = |token: &str| {
        let bucket = (fnv1a(token, index_seed) % d as u64) as usize;
        let sign = if fnv1a(token, sign_seed) & 1 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign;
    };
    if request.instruction != Instruction::None {
        bump(&format!("mod:{}", request.instruction.wire_label()));
    }
    for token in tokenize(&request.content) {
        bump(&token);
    }
    Embedding::normalized(acc)
}

/// Identifying parameters of an embedder, stamped into the index manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderInfo {
    pub id: String,
    pub dimension: usize,
    pub index_seed: u64,
    pub sign_seed: u64,
}

pub trait Embedder: Send + Sync {
    fn info(&self) -> EmbedderInfo;

    fn dimension(&self) -> usize {
        self.info().dimension
    }

    /// Embed a batch; output order matches input order and every vector
    /// satisfies the [`Embedding`] invariants.
    fn embed_batch(&self, requests: &[EmbedRequest]) -> Result<Vec<Embedding>>;

    fn embed(&self, request: &EmbedRequest) -> Result<Embedding> {
        let mut out = self.embed_batch(std::slice::from_ref(request))?;
        out.pop().ok_or_else(|| Error::EmbeddingBackend {
            request_index: Some(0),
            message: "backend returned no vector".into(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dimension: usize,
    pub index_seed: u64,
    pub sign_seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            index_seed: DEFAULT_INDEX_SEED,
            sign_seed: DEFAULT_SIGN_SEED,
        }
    }
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ..Self::default()
        }
    }
}

impl Embedder for HashEmbedder {
    fn info(&self) -> EmbedderInfo {
        EmbedderInfo {
            id: "hash-v1".into(),
            dimension: self.dimension,
            index_seed: self.index_seed,
            sign_seed: self.sign_seed,
        }
    }

    fn embed_batch(&self, requests: &[EmbedRequest]) -> Result<Vec<Embedding>> {
        Ok(requests
            .iter()
            .map(|r| hash_embed(r, self.dimension, self.index_seed, self.sign_seed))
            .collect())
    }
}

/// Validate and re-normalize raw vectors returned by an embedding service.
/// Exposed for the service client and its tests.
pub fn ingest_service_vectors(
    raw: Vec<Vec<f32>>,
    expected: usize,
    dimension: usize,
) -> Result<Vec<Embedding>> {
    if raw.len() != expected {
        return Err(Error::EmbeddingBackend {
            request_index: None,
            message: format!("service returned {} vectors for {} requests", raw.len(), expected),
        });
    }
    raw.into_iter()
        .enumerate()
        .map(|(i, values)| {
            if values.len() != dimension {
                return Err(Error::EmbeddingBackend {
                    request_index: Some(i),
                    message: format!("vector has dimension {}, expected {dimension}", values.len()),
                });
            }
            Ok(Embedding::normalized(values.iter().map(|v| *v as f64).collect()))
        })
        .collect()
}

/// Client for the HTTP embedding service: POST `{url}` with
/// `{"items": [{"content", "instruction"}]}` and read back
/// `{"vectors": [[f32, ...], ...]}` in the same order.
pub struct ServiceEmbedder {
    url: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct ServiceResponse {
    vectors: Vec<Vec<f32>>,
}

impl ServiceEmbedder {
    pub fn new(url: impl Into<String>, dimension: usize, timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::EmbeddingBackend {
                request_index: None,
                message: format!("client init: {e}"),
            })?;
        Ok(Self {
            url: url.into(),
            dimension,
            client,
        })
    }
}

impl Embedder for ServiceEmbedder {
    fn info(&self) -> EmbedderInfo {
        EmbedderInfo {
            id: format!("service:{}", self.url),
            dimension: self.dimension,
            index_seed: DEFAULT_INDEX_SEED,
            sign_seed: DEFAULT_SIGN_SEED,
        }
    }

    fn embed_batch(&self, requests: &[EmbedRequest]) -> Result<Vec<Embedding>> {
        let items: Vec<serde_json::Value> = requests
            .iter()
            .map(|r| {
                serde_json::json!({
                    "content": r.content,
                    "instruction": r.instruction.wire_label(),
                })
            })
            .collect();
        let response = self
            .client
            .post(&self.url)
            .json(&serde_json::json!({ "items": items }))
            .send()
            .map_err(|e| Error::EmbeddingBackend {
                request_index: None,
                message: format!("transport: {e}"),
            })?;
        if !response.status().is_success() {
            return Err(Error::EmbeddingBackend {
                request_index: None,
                message: format!("service status {}", response.status()),
            });
        }
        let body: ServiceResponse = response.json().map_err(|e| Error::EmbeddingBackend {
            request_index: None,
            message: format!("bad response body: {e}"),
        })?;
        ingest_service_vectors(body.vectors, requests.len(), self.dimension)
    }
}
