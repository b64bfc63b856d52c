//! The curated single-API mapping pool: records, LLM-assisted drafting,
//! review, persistence and per-call top-n retrieval.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding, EmbeddingError, FlatIndex};
use crate::llm::{ChatProvider, Message};
use crate::model::{ApiSequence, Language};

pub const POOL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MappingError {
    #[error("record {id} ({source_api}): {reason}")]
    Validation {
        id: u64,
        source_api: String,
        reason: String,
    },
    #[error("duplicate source api `{0}` in pool")]
    DuplicateSource(String),
    #[error("duplicate record id {0} in pool")]
    DuplicateId(u64),
    #[error("record {id} is {status:?}; only reviewed records may be stored without allow_draft")]
    Unreviewed { id: u64, status: ReviewStatus },
    #[error("cannot review record {0}: already reviewed")]
    AlreadyReviewed(u64),
    #[error("mapping pool is empty")]
    EmptyPool,
    #[error("n must be at least 1")]
    InvalidN,
    #[error("sequence language {actual} does not match pool source language {expected}")]
    DirectionMismatch { expected: Language, actual: Language },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewStatus {
    Draft,
    Reviewed,
    Revised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiMappingRecord {
    pub id: u64,
    pub source_api: String,
    pub source_embedding: Embedding,
    pub target_apis: Vec<String>,
    pub description: String,
    pub caveats: String,
    pub review_status: ReviewStatus,
    /// Problems found while drafting; a non-empty list marks the record
    /// as malformed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<String>,
}

impl ApiMappingRecord {
    pub fn draft(
        id: u64,
        source_api: impl Into<String>,
        source_embedding: Embedding,
        target_apis: Vec<String>,
        description: impl Into<String>,
        caveats: impl Into<String>,
    ) -> Self {
        Self {
            id,
            source_api: source_api.into(),
            source_embedding,
            target_apis,
            description: description.into(),
            caveats: caveats.into(),
            review_status: ReviewStatus::Draft,
            issues: Vec::new(),
        }
    }

    pub fn is_malformed(&self) -> bool {
        !self.issues.is_empty()
    }

    fn invalid(&self, reason: impl Into<String>) -> MappingError {
        MappingError::Validation {
            id: self.id,
            source_api: self.source_api.clone(),
            reason: reason.into(),
        }
    }

    /// Checks that all four content parts are present.
    pub fn validate_content(&self) -> Result<(), MappingError> {
        if normalize_api(&self.source_api).is_empty() {
            return Err(self.invalid("source api is empty"));
        }
        if self.target_apis.is_empty() || self.target_apis.iter().any(|t| t.trim().is_empty()) {
            return Err(self.invalid("target apis are empty"));
        }
        if self.description.trim().is_empty() {
            return Err(self.invalid("description is empty"));
        }
        if self.caveats.trim().is_empty() {
            return Err(self.invalid("caveats are empty"));
        }
        Ok(())
    }
}

fn normalize_api(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Approve,
    Revise {
        target_apis: Vec<String>,
        description: String,
        caveats: String,
    },
}

/// Applies a reviewer verdict. Approving requires complete content;
/// revising replaces the content and clears drafting issues.
pub fn review(mut record: ApiMappingRecord, verdict: Verdict) -> Result<ApiMappingRecord, MappingError> {
    if record.review_status == ReviewStatus::Reviewed {
        return Err(MappingError::AlreadyReviewed(record.id));
    }
    match verdict {
        Verdict::Approve => {
            record.validate_content()?;
            record.review_status = ReviewStatus::Reviewed;
            record.issues.clear();
        }
        Verdict::Revise {
            target_apis,
            description,
            caveats,
        } => {
            record.target_apis = target_apis;
            record.description = description;
            record.caveats = caveats;
            record.issues.clear();
            record.review_status = ReviewStatus::Revised;
        }
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub format_version: u32,
    pub source_lang: Language,
    pub target_lang: Language,
    pub dimension: usize,
    pub count: usize,
}

/// Mapping records for one translation direction with an exact cosine
/// index over their source embeddings.
#[derive(Debug, Clone)]
pub struct MappingPool {
    source_lang: Language,
    target_lang: Language,
    records: Vec<ApiMappingRecord>,
    by_id: HashMap<u64, usize>,
    sources: HashSet<String>,
    index: Option<FlatIndex>,
}

impl MappingPool {
    pub fn new(source_lang: Language, target_lang: Language) -> Self {
        Self {
            source_lang,
            target_lang,
            records: Vec::new(),
            by_id: HashMap::new(),
            sources: HashSet::new(),
            index: None,
        }
    }

    pub fn source_lang(&self) -> Language {
        self.source_lang
    }

    pub fn target_lang(&self) -> Language {
        self.target_lang
    }

    pub fn records(&self) -> &[ApiMappingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.index.as_ref().map(FlatIndex::dimension)
    }

    pub fn get(&self, id: u64) -> Option<&ApiMappingRecord> {
        self.by_id.get(&id).map(|&i| &self.records[i])
    }

    pub fn next_id(&self) -> u64 {
        self.records.iter().map(|r| r.id + 1).max().unwrap_or(0)
    }

    pub fn insert(&mut self, record: ApiMappingRecord) -> Result<(), MappingError> {
        let key = normalize_api(&record.source_api);
        if self.sources.contains(&key) {
            return Err(MappingError::DuplicateSource(key));
        }
        if self.by_id.contains_key(&record.id) {
            return Err(MappingError::DuplicateId(record.id));
        }
        let dim = record.source_embedding.dimension();
        let index = self.index.get_or_insert_with(|| FlatIndex::new(dim));
        index.insert(record.id, &record.source_embedding.values)?;
        self.sources.insert(key);
        self.by_id.insert(record.id, self.records.len());
        self.records.push(record);
        Ok(())
    }

    /// Replaces a record with the same id, keeping its embedding slot.
    pub fn replace(&mut self, record: ApiMappingRecord) -> Result<(), MappingError> {
        let Some(&pos) = self.by_id.get(&record.id) else {
            return Err(MappingError::Validation {
                id: record.id,
                source_api: record.source_api,
                reason: "no such record".into(),
            });
        };
        let old = &self.records[pos];
        if normalize_api(&old.source_api) != normalize_api(&record.source_api)
            || old.source_embedding != record.source_embedding
        {
            return Err(record.invalid("source api and embedding cannot change"));
        }
        self.records[pos] = record;
        Ok(())
    }

    pub fn header(&self) -> PoolHeader {
        PoolHeader {
            format_version: POOL_FORMAT_VERSION,
            source_lang: self.source_lang,
            target_lang: self.target_lang,
            dimension: self.dimension().unwrap_or(0),
            count: self.records.len(),
        }
    }

    fn check_reviewed(record: &ApiMappingRecord, allow_draft: bool) -> Result<(), MappingError> {
        if !allow_draft {
            if record.review_status != ReviewStatus::Reviewed {
                return Err(MappingError::Unreviewed {
                    id: record.id,
                    status: record.review_status,
                });
            }
            record.validate_content()?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self, allow_draft: bool) -> Result<String, MappingError> {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            Self::check_reviewed(r, allow_draft)?;
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes the pool atomically. Without `allow_draft`, every record must
    /// be reviewed.
    pub fn save(&self, path: &Path, allow_draft: bool) -> crate::Result<()> {
        let text = self.to_jsonl(allow_draft)?;
        crate::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path, allow_draft: bool) -> crate::Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| crate::Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| crate::Error::format(path, "missing header"))?
            .map_err(|e| crate::Error::io(path, e))?;
        let header: PoolHeader =
            serde_json::from_str(&header_line).map_err(|e| crate::Error::format(path, format!("header: {e}")))?;
        if header.format_version != POOL_FORMAT_VERSION {
            return Err(crate::Error::format(
                path,
                format!("unsupported format version {}", header.format_version),
            ));
        }
        let mut pool = Self::new(header.source_lang, header.target_lang);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| crate::Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ApiMappingRecord =
                serde_json::from_str(&line).map_err(|e| crate::Error::format(path, format!("line {}: {e}", i + 2)))?;
            Self::check_reviewed(&record, allow_draft)?;
            if record.source_embedding.dimension() != header.dimension {
                return Err(crate::Error::format(
                    path,
                    format!(
                        "line {}: dimension {} != header {}",
                        i + 2,
                        record.source_embedding.dimension(),
                        header.dimension
                    ),
                ));
            }
            pool.insert(record)?;
        }
        if pool.len() != header.count {
            return Err(crate::Error::format(
                path,
                format!("header count {} but {} records", header.count, pool.len()),
            ));
        }
        Ok(pool)
    }
}

/// Drops repeated record ids, keeping the first occurrence.
pub fn unique(records: Vec<ApiMappingRecord>) -> Vec<ApiMappingRecord> {
    let mut seen = HashSet::new();
    records.into_iter().filter(|r| seen.insert(r.id)).collect()
}

/// Per-call top-n records in sequence order, before deduplication.
pub fn retrieve_mappings_raw(
    api_x: &ApiSequence,
    pool: &MappingPool,
    embedder: &dyn Embedder,
    n: usize,
) -> Result<Vec<ApiMappingRecord>, MappingError> {
    if api_x.is_empty() {
        return Ok(Vec::new());
    }
    if n == 0 {
        return Err(MappingError::InvalidN);
    }
    if api_x.language != pool.source_lang {
        return Err(MappingError::DirectionMismatch {
            expected: pool.source_lang,
            actual: api_x.language,
        });
    }
    let index = pool.index.as_ref().ok_or(MappingError::EmptyPool)?;
    let names: Vec<String> = api_x.calls.iter().map(|c| c.qualified_name.clone()).collect();
    let queries = embedder.embed_batch(&names)?;
    let mut out = Vec::with_capacity(names.len() * n);
    for q in &queries {
        for hit in index.query_topk(&q.values, n)? {
            out.push(pool.get(hit.id).expect("index ids come from the pool").clone());
        }
    }
    Ok(out)
}

/// Top-n mappings for every call of `api_x`, concatenated then made unique.
pub fn retrieve_mappings(
    api_x: &ApiSequence,
    pool: &MappingPool,
    embedder: &dyn Embedder,
    n: usize,
) -> Result<Vec<ApiMappingRecord>, MappingError> {
    retrieve_mappings_raw(api_x, pool, embedder, n).map(unique)
}

fn drafting_prompt(api: &str, source_lang: Language, target_lang: Language) -> String {
    format!(
        "Map the {src} API `{api}` to its {tgt} equivalent.\n\
         Reply with a single JSON object with the keys:\n\
         \"target_apis\": list of equivalent {tgt} APIs,\n\
         \"description\": what the API does,\n\
         \"caveats\": usage limitations and behavioural discrepancies between the two.",
        src = source_lang.display_name(),
        tgt = target_lang.display_name(),
    )
}

#[derive(Deserialize, Default)]
struct DraftReply {
    #[serde(default)]
    target_apis: Option<Vec<String>>,
    #[serde(default)]
    description: Option<String>,
    #[serde(default)]
    caveats: Option<String>,
}

fn parse_draft_reply(text: &str) -> (DraftReply, Vec<String>) {
    let start = text.find('{');
    let end = text.rfind('}');
    let parsed = match (start, end) {
        (Some(s), Some(e)) if s < e => serde_json::from_str::<DraftReply>(&text[s..=e]).ok(),
        _ => None,
    };
    let Some(reply) = parsed else {
        return (DraftReply::default(), vec!["response is not a JSON object".into()]);
    };
    let mut issues = Vec::new();
    match &reply.target_apis {
        Some(t) if !t.is_empty() && t.iter().all(|s| !s.trim().is_empty()) => {}
        _ => issues.push("missing target_apis".into()),
    }
    if reply.description.as_deref().is_none_or(|d| d.trim().is_empty()) {
        issues.push("missing description".into());
    }
    if reply.caveats.as_deref().is_none_or(|d| d.trim().is_empty()) {
        issues.push("missing caveats".into());
    }
    (reply, issues)
}

#[derive(Debug, Default)]
pub struct DraftOutcome {
    pub records: Vec<ApiMappingRecord>,
    pub errors: Vec<(String, crate::Error)>,
}

/// Asks the LLM for one mapping per API. Malformed replies become flagged
/// drafts; provider or embedding failures are collected and skipped.
pub fn draft_mappings(
    api_names: &[String],
    llm: &dyn ChatProvider,
    embedder: &dyn Embedder,
    source_lang: Language,
    target_lang: Language,
    first_id: u64,
) -> DraftOutcome {
    let mut outcome = DraftOutcome::default();
    let mut id = first_id;
    for api in api_names {
        let prompt = match Message::user(drafting_prompt(api, source_lang, target_lang)) {
            Ok(m) => m,
            Err(e) => {
                outcome.errors.push((api.clone(), e.into()));
                continue;
            }
        };
        let reply = match llm.complete(std::slice::from_ref(&prompt)) {
            Ok(r) => r,
            Err(e) => {
                outcome.errors.push((api.clone(), e.into()));
                continue;
            }
        };
        let embedding = match embedder.embed(api) {
            Ok(e) => e,
            Err(e) => {
                outcome.errors.push((api.clone(), e.into()));
                continue;
            }
        };
        let (parsed, issues) = parse_draft_reply(&reply);
        let mut record = ApiMappingRecord::draft(
            id,
            api.trim(),
            embedding,
            parsed.target_apis.unwrap_or_default(),
            parsed.description.unwrap_or_default(),
            parsed.caveats.unwrap_or_default(),
        );
        record.issues = issues;
        outcome.records.push(record);
        id += 1;
    }
    outcome
}
