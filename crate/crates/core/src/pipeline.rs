//! The translate / test / retrieve / re-translate loop.
//!
//! A task is translated once with the plain prompt and tested. Only when
//! that fails is API knowledge retrieved: similar target-language call
//! sequences from the index, their back-translations into the source
//! language, and single-API mappings from the pool. One augmented
//! translation follows, and its test verdict is final.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{SequenceIndex, SequenceRecord};
use crate::embedding::Embedder;
use crate::extractor::extract_from_program;
use crate::llm::{
    parse_code_response, render_prompt1, render_prompt2, render_prompt3, ChatProvider, Conversation, Message,
};
use crate::mappings::{retrieve_mappings, ApiMappingRecord, MappingPool};
use crate::model::{ApiSequence, FaultPattern, Language, TranslationTask};
use crate::testkit::{
    computational_accuracy, execute, generate_harness, FailureKind, TestReport, TestkitError, Toolchains,
    DEFAULT_TIMEOUT_SECS,
};

pub const DEFAULT_K: usize = 1;
pub const DEFAULT_N: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no sequence index configured for {0}")]
    MissingIndex(Language),
    #[error("no mapping pool configured for {from} to {to}")]
    MissingPool { from: Language, to: Language },
    #[error("failed to load {path}: {message}")]
    Resource { path: PathBuf, message: String },
    #[error("task list is empty")]
    EmptyBatch,
    #[error("task {task}: {message}")]
    Task { task: String, message: String },
}

struct Lazy<T> {
    path: Option<PathBuf>,
    cell: OnceLock<Result<Arc<T>, String>>,
}

impl<T> Lazy<T> {
    fn from_path(path: PathBuf) -> Self {
        Self {
            path: Some(path),
            cell: OnceLock::new(),
        }
    }

    fn loaded(value: T) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(Ok(Arc::new(value)));
        Self { path: None, cell }
    }

    fn get(&self, load: impl FnOnce(&Path) -> crate::Result<T>) -> Result<Arc<T>, PipelineError> {
        let path = self.path.clone().unwrap_or_default();
        self.cell
            .get_or_init(|| load(&path).map(Arc::new).map_err(|e| e.to_string()))
            .clone()
            .map_err(|message| PipelineError::Resource { path, message })
    }
}

/// Sequence indexes and mapping pools, loaded on first use and shared
/// read-only between tasks. Every lookup is counted.
pub struct KnowledgeBase {
    indexes: BTreeMap<Language, Lazy<SequenceIndex>>,
    pools: BTreeMap<(Language, Language), Lazy<MappingPool>>,
    allow_draft: bool,
    accesses: AtomicUsize,
}

impl Default for KnowledgeBase {
    fn default() -> Self {
        Self::new()
    }
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self {
            indexes: BTreeMap::new(),
            pools: BTreeMap::new(),
            allow_draft: false,
            accesses: AtomicUsize::new(0),
        }
    }

    /// Accept pools holding unreviewed records.
    pub fn allow_draft(mut self, allow: bool) -> Self {
        self.allow_draft = allow;
        self
    }

    pub fn with_index_path(mut self, language: Language, path: impl Into<PathBuf>) -> Self {
        self.indexes.insert(language, Lazy::from_path(path.into()));
        self
    }

    pub fn with_index(mut self, index: SequenceIndex) -> Self {
        self.indexes.insert(index.header().language, Lazy::loaded(index));
        self
    }

    pub fn with_pool_path(mut self, source: Language, target: Language, path: impl Into<PathBuf>) -> Self {
        self.pools.insert((source, target), Lazy::from_path(path.into()));
        self
    }

    pub fn with_pool(mut self, pool: MappingPool) -> Self {
        self.pools
            .insert((pool.source_lang(), pool.target_lang()), Lazy::loaded(pool));
        self
    }

    pub fn index(&self, language: Language) -> Result<Arc<SequenceIndex>, PipelineError> {
        self.accesses.fetch_add(1, Ordering::SeqCst);
        self.indexes
            .get(&language)
            .ok_or(PipelineError::MissingIndex(language))?
            .get(SequenceIndex::load)
    }

    pub fn pool(&self, source: Language, target: Language) -> Result<Arc<MappingPool>, PipelineError> {
        self.accesses.fetch_add(1, Ordering::SeqCst);
        let allow_draft = self.allow_draft;
        self.pools
            .get(&(source, target))
            .ok_or(PipelineError::MissingPool {
                from: source,
                to: target,
            })?
            .get(|p| MappingPool::load(p, allow_draft))
    }

    /// Number of index and pool lookups so far.
    pub fn accesses(&self) -> usize {
        self.accesses.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
pub struct PipelineConfig {
    pub k: usize,
    pub n: usize,
    pub timeout: Duration,
    pub llm: Arc<dyn ChatProvider>,
    pub embedder: Arc<dyn Embedder>,
    pub knowledge: Arc<KnowledgeBase>,
    pub toolchains: Toolchains,
}

impl PipelineConfig {
    pub fn new(llm: Arc<dyn ChatProvider>, embedder: Arc<dyn Embedder>, knowledge: Arc<KnowledgeBase>) -> Self {
        Self {
            k: DEFAULT_K,
            n: DEFAULT_N,
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            llm,
            embedder,
            knowledge,
            toolchains: Toolchains::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::InvalidConfig("k must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(PipelineError::InvalidConfig("n must be at least 1".into()));
        }
        if self.timeout.is_zero() {
            return Err(PipelineError::InvalidConfig("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSequence {
    pub record: SequenceRecord,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedKnowledge {
    /// Calls extracted from the source program.
    pub api_x: ApiSequence,
    pub target_sequences: Vec<ScoredSequence>,
    /// One back-translation per entry of `target_sequences`.
    pub back_translations: Vec<String>,
    pub api_mappings: Vec<ApiMappingRecord>,
}

impl RetrievedKnowledge {
    fn empty(api_x: ApiSequence) -> Self {
        Self {
            api_x,
            target_sequences: Vec::new(),
            back_translations: Vec::new(),
            api_mappings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    InitialPass,
    AugmentedPass,
    Failed,
}

impl Stage {
    pub fn passed(self) -> bool {
        self != Stage::Failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationOutcome {
    pub task: TranslationTask,
    pub initial_code: String,
    pub initial_report: TestReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knowledge: Option<RetrievedKnowledge>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_report: Option<TestReport>,
    pub stage: Stage,
    pub conversation: Conversation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_labels: Option<Vec<FaultPattern>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl TranslationOutcome {
    /// The code whose test verdict decides the task.
    pub fn final_verdict_code(&self) -> &str {
        self.final_code.as_deref().unwrap_or(&self.initial_code)
    }
}

fn assistant(reply: &str) -> Message {
    let text = if reply.is_empty() { "(empty response)" } else { reply };
    Message::assistant(text).expect("non-empty")
}

fn task_error(task: &TranslationTask, message: impl ToString) -> crate::Error {
    PipelineError::Task {
        task: task.id.clone(),
        message: message.to_string(),
    }
    .into()
}

/// Tests candidate code. Problems attributable to the candidate become
/// failing reports; anything else is an environment error.
fn run_tests(task: &TranslationTask, code: Option<&str>, config: &PipelineConfig) -> crate::Result<TestReport> {
    let expected = task.metadata.expected_lines();
    let Some(code) = code else {
        return Ok(TestReport::all_failed(
            &expected,
            FailureKind::CompileError,
            "response contained no code",
        ));
    };
    let harness = match generate_harness(&task.metadata, code, task.target_lang) {
        Ok(h) => h,
        Err(e @ TestkitError::MissingFunction { .. }) => {
            return Ok(TestReport::all_failed(
                &expected,
                FailureKind::CompileError,
                &e.to_string(),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    Ok(execute(&harness, &config.toolchains, config.timeout)?)
}

fn extract_code(reply: &str, language: Language) -> Option<String> {
    parse_code_response(reply, language).ok()
}

/// Retrieves knowledge for `task`, appending one back-translation exchange
/// per retrieved sequence to `history`. Each back-translation request is
/// sent with the history so far as context.
pub fn retrieve_knowledge_into(
    task: &TranslationTask,
    config: &PipelineConfig,
    llm: &dyn ChatProvider,
    history: &mut Conversation,
) -> crate::Result<RetrievedKnowledge> {
    config.validate()?;
    let api_x = extract_from_program(&task.source_code, task.source_lang)?;
    if api_x.is_empty() {
        return Ok(RetrievedKnowledge::empty(api_x));
    }
    let index = config.knowledge.index(task.target_lang)?;
    let hits = index.query_sequence(&api_x, config.embedder.as_ref(), config.k)?;
    let mut knowledge = RetrievedKnowledge::empty(api_x);
    for (record, score) in hits {
        let prompt = render_prompt2(&record.sequence, task.source_lang, task.target_lang)?;
        let reply = llm.complete(&history.with(prompt.clone()))?;
        history.push(prompt)?;
        history.push(assistant(&reply))?;
        knowledge.back_translations.push(reply);
        knowledge.target_sequences.push(ScoredSequence { record, score });
    }
    let pool = config.knowledge.pool(task.source_lang, task.target_lang)?;
    knowledge.api_mappings = retrieve_mappings(&knowledge.api_x, &pool, config.embedder.as_ref(), config.n)?;
    Ok(knowledge)
}

/// Retrieves knowledge for `task` with a fresh conversation.
pub fn retrieve_knowledge(task: &TranslationTask, config: &PipelineConfig) -> crate::Result<RetrievedKnowledge> {
    let llm = config.llm.scoped(&task.id).unwrap_or_else(|| Arc::clone(&config.llm));
    retrieve_knowledge_into(task, config, llm.as_ref(), &mut Conversation::new())
}

/// Runs the full flow for one task. Failing tests are reported in the
/// outcome; only environment problems are errors.
pub fn translate(task: &TranslationTask, config: &PipelineConfig) -> crate::Result<TranslationOutcome> {
    config.validate()?;
    task.validate()?;
    let llm = config.llm.scoped(&task.id).unwrap_or_else(|| Arc::clone(&config.llm));
    let mut conversation = Conversation::new();

    let prompt1 = render_prompt1(task);
    let reply = llm.complete(&conversation.with(prompt1.clone()))?;
    conversation.push(prompt1)?;
    conversation.push(assistant(&reply))?;
    let initial = extract_code(&reply, task.target_lang);
    let initial_report = run_tests(task, initial.as_deref(), config)?;
    let initial_code = initial.unwrap_or_default();
    tracing::debug!(task = %task.id, pass = initial_report.pass_all, "initial translation tested");

    if initial_report.pass_all {
        return Ok(TranslationOutcome {
            task: task.clone(),
            initial_code,
            initial_report,
            knowledge: None,
            final_code: None,
            final_report: None,
            stage: Stage::InitialPass,
            conversation,
            fault_labels: None,
            notes: Vec::new(),
        });
    }

    let knowledge = retrieve_knowledge_into(task, config, llm.as_ref(), &mut conversation)?;
    let mut notes = Vec::new();
    if knowledge.api_x.is_empty() {
        notes.push("source program has no API calls; augmented round used history only".to_string());
    }
    let messages = render_prompt3(&conversation, &knowledge.api_mappings, task)?;
    let reply = llm.complete(&messages)?;
    conversation.push(messages.last().expect("prompt 3 appended").clone())?;
    conversation.push(assistant(&reply))?;
    let final_code = extract_code(&reply, task.target_lang);
    let final_report = run_tests(task, final_code.as_deref(), config)?;
    let stage = if final_report.pass_all {
        Stage::AugmentedPass
    } else {
        Stage::Failed
    };
    tracing::debug!(task = %task.id, ?stage, "augmented translation tested");

    Ok(TranslationOutcome {
        task: task.clone(),
        initial_code,
        initial_report,
        knowledge: Some(knowledge),
        final_code: Some(final_code.unwrap_or_default()),
        final_report: Some(final_report),
        stage,
        conversation,
        fault_labels: None,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BatchEntry {
    Done(Box<TranslationOutcome>),
    Error { task_id: String, message: String },
}

impl BatchEntry {
    pub fn task_id(&self) -> &str {
        match self {
            BatchEntry::Done(o) => &o.task.id,
            BatchEntry::Error { task_id, .. } => task_id,
        }
    }

    pub fn passed(&self) -> bool {
        matches!(self, BatchEntry::Done(o) if o.stage.passed())
    }

    pub fn outcome(&self) -> Option<&TranslationOutcome> {
        match self {
            BatchEntry::Done(o) => Some(o),
            BatchEntry::Error { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub ca: f64,
    pub total: usize,
    pub initial_pass: usize,
    pub augmented_pass: usize,
    pub failed: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub entries: Vec<BatchEntry>,
    pub summary: BatchSummary,
}

pub fn summarize(entries: &[BatchEntry]) -> Result<BatchSummary, TestkitError> {
    let verdicts: Vec<bool> = entries.iter().map(BatchEntry::passed).collect();
    let count = |stage: Stage| {
        entries
            .iter()
            .filter(|e| e.outcome().is_some_and(|o| o.stage == stage))
            .count()
    };
    Ok(BatchSummary {
        ca: computational_accuracy(&verdicts)?,
        total: entries.len(),
        initial_pass: count(Stage::InitialPass),
        augmented_pass: count(Stage::AugmentedPass),
        failed: count(Stage::Failed),
        errors: entries.iter().filter(|e| e.outcome().is_none()).count(),
    })
}

/// Translates every task on a pool of `parallelism` workers. Per-task
/// errors are recorded and counted as failures.
pub fn translate_batch(
    tasks: &[TranslationTask],
    config: &PipelineConfig,
    parallelism: usize,
) -> crate::Result<BatchResult> {
    if tasks.is_empty() {
        return Err(PipelineError::EmptyBatch.into());
    }
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let entries: Vec<BatchEntry> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| match translate(task, config) {
                Ok(outcome) => BatchEntry::Done(Box::new(outcome)),
                Err(e) => {
                    tracing::error!(task = %task.id, error = %e, "task aborted");
                    BatchEntry::Error {
                        task_id: task.id.clone(),
                        message: task_error(task, e).to_string(),
                    }
                }
            })
            .collect()
    });
    let summary = summarize(&entries)?;
    Ok(BatchResult { entries, summary })
}

fn file_stem_for(task_id: &str) -> String {
    task_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `<task id>.json` per entry and `summary.json` into `dir`.
pub fn write_archive(dir: &Path, result: &BatchResult) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    for entry in &result.entries {
        let path = dir.join(format!("{}.json", file_stem_for(entry.task_id())));
        let text = serde_json::to_string_pretty(entry).expect("outcome serializes");
        crate::write_atomic(&path, text.as_bytes())?;
    }
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    crate::write_atomic(&path, text.as_bytes())
}
