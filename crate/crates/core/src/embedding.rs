//! Embedding providers, cosine similarity and the exact flat vector index.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::http::{HttpConfig, HttpError, JsonClient};

pub const DEFAULT_MOCK_DIMENSION: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("duplicate id {0} in index")]
    DuplicateId(u64),
    #[error("embedding provider failed: {0}")]
    Transport(#[from] HttpError),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl Embedding {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::DimensionMismatch { expected: 1, actual: 0 });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        Ok(Self {
            values,
            model_id: model_id.into(),
        })
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

/// Text embedding backend. Implementations must be deterministic for a
/// fixed model when used in reproducible builds.
pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError>;

    fn embed(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let mut out = self.embed_batch(&[text.to_string()])?;
        out.pop()
            .ok_or_else(|| EmbeddingError::BadResponse("empty batch result".into()))
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        (**self).embed_batch(texts)
    }
}

fn check_text(text: &str) -> Result<&str, EmbeddingError> {
    let t = text.trim();
    if t.is_empty() {
        Err(EmbeddingError::EmptyText)
    } else {
        Ok(t)
    }
}

/// Deterministic offline embedder: signed feature hashing of tokens into
/// `dimension` buckets, then L2 normalization.
///
/// Features are the whole `name/argc` tokens, call names, dotted name
/// segments and adjacent-call bigrams, so sequences sharing calls land
/// close together.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    dimension: usize,
    model_id: String,
}

impl MockEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self {
            dimension,
            model_id: format!("mock-hash-{dimension}"),
        }
    }

    fn features(text: &str) -> Vec<(String, f64)> {
        let calls: Vec<&str> = text
            .split("->")
            .flat_map(|part| part.split_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let mut feats = Vec::new();
        for token in &calls {
            feats.push((format!("t:{token}"), 1.0));
            let name = token.rsplit_once('/').map_or(*token, |(n, _)| n);
            feats.push((format!("n:{}", name.to_lowercase()), 1.0));
            for seg in name.split('.') {
                feats.push((format!("s:{}", seg.to_lowercase()), 0.5));
            }
        }
        for pair in calls.windows(2) {
            feats.push((format!("b:{}|{}", pair[0], pair[1]), 0.5));
        }
        feats
    }

    fn embed_one(&self, text: &str) -> Result<Embedding, EmbeddingError> {
        let text = check_text(text)?;
        let mut values = vec![0.0f64; self.dimension];
        let mut feats = Self::features(text);
        if feats.is_empty() {
            feats.push((format!("raw:{text}"), 1.0));
        }
        for (feat, weight) in feats {
            let digest = Sha256::digest(feat.as_bytes());
            let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign * weight;
        }
        let mut norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Features cancelled out; fall back to the raw-text bucket.
            let digest = Sha256::digest(text.as_bytes());
            let h = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            values[(h % self.dimension as u64) as usize] = 1.0;
            norm = 1.0;
        }
        for v in &mut values {
            *v /= norm;
        }
        Embedding::new(values, self.model_id.clone())
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIMENSION)
    }
}

impl Embedder for MockEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Returns fixed vectors for known texts and defers to a fallback for the
/// rest. Used to inject embeddings in retrieval benchmarks.
pub struct InjectedEmbedder {
    table: HashMap<String, Vec<f64>>,
    fallback: Arc<dyn Embedder>,
    model_id: String,
}

impl InjectedEmbedder {
    pub fn new(fallback: Arc<dyn Embedder>) -> Self {
        let model_id = format!("injected+{}", fallback.model_id());
        Self {
            table: HashMap::new(),
            fallback,
            model_id,
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, values: Vec<f64>) -> Result<(), EmbeddingError> {
        if values.len() != self.fallback.dimension() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.fallback.dimension(),
                actual: values.len(),
            });
        }
        self.table.insert(text.into().trim().to_string(), values);
        Ok(())
    }
}

impl Embedder for InjectedEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn dimension(&self) -> usize {
        self.fallback.dimension()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        texts
            .iter()
            .map(|t| {
                let key = check_text(t)?;
                match self.table.get(key) {
                    Some(v) => Embedding::new(v.clone(), self.model_id.clone()),
                    None => self.fallback.embed(key),
                }
            })
            .collect()
    }
}

/// Remote provider settings. The API key is read from `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    #[serde(flatten)]
    pub http: HttpConfig,
    pub model: String,
    pub dimension: usize,
    pub batch_size: usize,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        Self {
            http: HttpConfig::default(),
            model: "text-embedding-3-large".into(),
            dimension: 3072,
            batch_size: 64,
        }
    }
}

/// OpenAI-compatible `/embeddings` client.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    client: JsonClient,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, EmbeddingError> {
        let client = JsonClient::new(config.http.clone())?;
        Ok(Self { config, client })
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            let inputs = chunk
                .iter()
                .map(|t| check_text(t).map(str::to_string))
                .collect::<Result<Vec<_>, _>>()?;
            let body = serde_json::json!({ "model": self.config.model, "input": inputs });
            let resp: EmbeddingResponse = self.client.post_json("embeddings", &body)?;
            let mut data = resp.data;
            if data.len() != chunk.len() {
                return Err(EmbeddingError::BadResponse(format!(
                    "expected {} embeddings, got {}",
                    chunk.len(),
                    data.len()
                )));
            }
            data.sort_by_key(|d| d.index);
            for d in data {
                if d.embedding.len() != self.config.dimension {
                    return Err(EmbeddingError::DimensionMismatch {
                        expected: self.config.dimension,
                        actual: d.embedding.len(),
                    });
                }
                out.push(Embedding::new(d.embedding, self.config.model.clone())?);
            }
        }
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity `dot(a, b) / (|a| |b|)`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: u64,
    pub score: f64,
}

/// Exact linear-scan cosine index over `(id, vector)` entries.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    dimension: usize,
    ids: Vec<u64>,
    seen: HashSet<u64>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl FlatIndex {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            ids: Vec::new(),
            seen: HashSet::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: u64, values: &[f64]) -> Result<(), EmbeddingError> {
        if values.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
        let n = norm(values);
        if n == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        if !self.seen.insert(id) {
            return Err(EmbeddingError::DuplicateId(id));
        }
        self.ids.push(id);
        self.vectors.push(values.to_vec());
        self.norms.push(n);
        Ok(())
    }

    /// The `min(k, len)` most similar entries, scores non-increasing, ties by
    /// ascending id.
    pub fn query_topk(&self, query: &[f64], k: usize) -> Result<Vec<Hit>, EmbeddingError> {
        if k == 0 {
            return Err(EmbeddingError::InvalidK);
        }
        if query.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: self.dimension,
                actual: query.len(),
            });
        }
        let qn = norm(query);
        if qn == 0.0 {
            return Err(EmbeddingError::ZeroVector);
        }
        let mut hits: Vec<Hit> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .zip(&self.norms)
            .map(|((&id, v), &n)| Hit {
                id,
                score: dot(query, v) / (qn * n),
            })
            .collect();
        let order = |a: &Hit, b: &Hit| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id));
        let k = k.min(hits.len());
        if k < hits.len() {
            hits.select_nth_unstable_by(k, order);
            hits.truncate(k);
        }
        hits.sort_by(order);
        Ok(hits)
    }
}
