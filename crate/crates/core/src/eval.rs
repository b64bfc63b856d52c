//! Retrieval precision, computational-accuracy benchmarks, single-axis
//! parameter sweeps and fault-pattern distributions.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SequenceIndex, SequenceRecord};
use crate::embedding::Embedder;
use crate::model::{
    parse_sequence, serialize_sequence, ApiSequence, FaultCategory, FaultPattern, Language, TranslationTask,
};
use crate::pipeline::{
    translate_batch, write_archive, BatchResult, BatchSummary, PipelineConfig, Stage, TranslationOutcome,
};
use crate::testkit::load_metadata;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("metric undefined: no {0}")]
    Undefined(&'static str),
    #[error("invalid retrieval pair on line {line}: {reason}")]
    InvalidPair { line: usize, reason: String },
    #[error("dataset {0} contains no usable problems")]
    EmptyDataset(PathBuf),
    #[error("sweep values must be non-empty, at least 1 and strictly increasing; got {0:?}")]
    InvalidSweep(Vec<usize>),
    #[error("label for task {0}: {1}")]
    InvalidLabel(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetrievalPair {
    pub source_sequence: ApiSequence,
    pub gold_target_sequence: ApiSequence,
}

impl RetrievalPair {
    pub fn new(source_sequence: ApiSequence, gold_target_sequence: ApiSequence) -> Result<Self, String> {
        if source_sequence.is_empty() || gold_target_sequence.is_empty() {
            return Err("sequences must be non-empty".into());
        }
        if source_sequence.language == gold_target_sequence.language {
            return Err("source and gold languages must differ".into());
        }
        Ok(Self {
            source_sequence,
            gold_target_sequence,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PairLine {
    source_lang: Language,
    target_lang: Language,
    source_seq: String,
    gold_seq: String,
}

pub fn parse_pairs(text: &str) -> Result<Vec<RetrievalPair>, EvalError> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| EvalError::InvalidPair { line: i + 1, reason };
        let raw: PairLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let src = parse_sequence(&raw.source_seq, raw.source_lang).map_err(|e| bad(e.to_string()))?;
        let gold = parse_sequence(&raw.gold_seq, raw.target_lang).map_err(|e| bad(e.to_string()))?;
        pairs.push(RetrievalPair::new(src, gold).map_err(bad)?);
    }
    Ok(pairs)
}

pub fn pairs_to_jsonl(pairs: &[RetrievalPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        let line = PairLine {
            source_lang: p.source_sequence.language,
            target_lang: p.gold_target_sequence.language,
            source_seq: serialize_sequence(&p.source_sequence),
            gold_seq: serialize_sequence(&p.gold_target_sequence),
        };
        out.push_str(&serde_json::to_string(&line).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn load_pairs(path: &Path) -> crate::Result<Vec<RetrievalPair>> {
    let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    Ok(parse_pairs(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateUniverse {
    /// Only the distinct gold targets are indexed.
    Golds,
    /// A prebuilt index that must already contain every gold.
    Index,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub source: String,
    pub gold: String,
    pub top1: Option<String>,
    pub score: Option<f64>,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub precision_at_1: f64,
    pub pairs: usize,
    pub hits: usize,
    pub universe: CandidateUniverse,
    pub index_size: usize,
    pub embed_model_id: String,
    pub results: Vec<PairResult>,
}

/// Index holding each distinct gold target once, in first-seen order.
pub fn gold_index(pairs: &[RetrievalPair], embedder: &dyn Embedder) -> crate::Result<SequenceIndex> {
    let mut seen = HashSet::new();
    let golds: Vec<&ApiSequence> = pairs
        .iter()
        .map(|p| &p.gold_target_sequence)
        .filter(|g| seen.insert(g.canonical_text().to_string()))
        .collect();
    let texts: Vec<String> = golds.iter().map(|g| serialize_sequence(g)).collect();
    let embeddings = embedder.embed_batch(&texts)?;
    let records = golds
        .into_iter()
        .zip(embeddings)
        .enumerate()
        .map(|(i, (seq, embedding))| SequenceRecord {
            id: i as u64,
            sequence: seq.clone(),
            embedding,
        })
        .collect();
    let language = pairs
        .first()
        .map_or(Language::Python, |p| p.gold_target_sequence.language);
    SequenceIndex::from_records(language, embedder.model_id(), 0, records)
}

/// Fraction of pairs whose top-1 hit has the gold's canonical text. Uses a
/// golds-only index unless `index` is given.
pub fn precision_at_1(
    pairs: &[RetrievalPair],
    index: Option<&SequenceIndex>,
    embedder: &dyn Embedder,
) -> crate::Result<RetrievalReport> {
    if pairs.is_empty() {
        return Err(EvalError::Undefined("retrieval pairs").into());
    }
    let built;
    let (index, universe) = match index {
        Some(i) => (i, CandidateUniverse::Index),
        None => {
            built = gold_index(pairs, embedder)?;
            (&built, CandidateUniverse::Golds)
        }
    };
    let mut results = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let top = index.query_sequence(&pair.source_sequence, embedder, 1)?;
        let top1 = top.first();
        let gold = pair.gold_target_sequence.canonical_text().to_string();
        let hit = top1.is_some_and(|(r, _)| r.sequence.canonical_text() == gold);
        results.push(PairResult {
            source: pair.source_sequence.canonical_text().to_string(),
            gold,
            top1: top1.map(|(r, _)| r.sequence.canonical_text().to_string()),
            score: top1.map(|(_, s)| *s),
            hit,
        });
    }
    let hits = results.iter().filter(|r| r.hit).count();
    Ok(RetrievalReport {
        precision_at_1: hits as f64 / pairs.len() as f64,
        pairs: pairs.len(),
        hits,
        universe,
        index_size: index.len(),
        embed_model_id: embedder.model_id().to_string(),
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    pub source: Language,
    pub target: Language,
}

impl Direction {
    pub fn new(source: Language, target: Language) -> Self {
        Self { source, target }
    }

    pub fn label(&self) -> String {
        format!("{}-to-{}", self.source.id(), self.target.id())
    }

    pub fn both() -> Vec<Direction> {
        vec![
            Direction::new(Language::Python, Language::Java),
            Direction::new(Language::Java, Language::Python),
        ]
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once("-to-")
            .or_else(|| s.split_once(':'))
            .ok_or_else(|| format!("expected SOURCE-to-TARGET, got `{s}`"))?;
        let d = Direction::new(
            a.parse().map_err(|e| format!("{e}"))?,
            b.parse().map_err(|e| format!("{e}"))?,
        );
        if d.source == d.target {
            return Err(format!("direction `{s}` has the same source and target"));
        }
        Ok(d)
    }
}

/// Loads `<dir>/<problem>/{metadata.json, source.<ext>}` tasks for one
/// direction, sorted by problem name. Incomplete problems are skipped.
pub fn load_tasks(dataset_dir: &Path, direction: Direction) -> crate::Result<Vec<TranslationTask>> {
    let entries = fs::read_dir(dataset_dir).map_err(|e| crate::Error::io(dataset_dir, e))?;
    let mut problems: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    problems.sort();
    let mut tasks = Vec::new();
    for dir in problems {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().to_string();
        let source_path = dir.join(format!("source.{}", direction.source.file_extension()));
        if !source_path.exists() {
            tracing::warn!(problem = %name, "no {} source; skipping", direction.source);
            continue;
        }
        let metadata = match load_metadata(&dir.join("metadata.json")) {
            Ok(m) => m,
            Err(e) => {
                tracing::warn!(problem = %name, error = %e, "bad metadata; skipping");
                continue;
            }
        };
        let source_code = match fs::read_to_string(&source_path) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(problem = %name, error = %e, "unreadable source; skipping");
                continue;
            }
        };
        tasks.push(TranslationTask {
            id: format!("{name}-{}", direction.label()),
            source_lang: direction.source,
            target_lang: direction.target,
            source_code,
            metadata,
        });
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaRow {
    pub direction: String,
    #[serde(flatten)]
    pub summary: BatchSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaTable {
    pub dataset: String,
    pub k: usize,
    pub n: usize,
    pub rows: Vec<CaRow>,
}

impl CaTable {
    pub fn render(&self) -> String {
        let header = ["direction", "CA", "total", "initial", "augmented", "failed", "errors"];
        let rows: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.direction.clone(),
                    format!("{:.1}%", r.summary.ca * 100.0),
                    r.summary.total.to_string(),
                    r.summary.initial_pass.to_string(),
                    r.summary.augmented_pass.to_string(),
                    r.summary.failed.to_string(),
                    r.summary.errors.to_string(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        let line = |cells: Vec<&str>, out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec(), &mut out);
        for row in &rows {
            line(row.iter().map(String::as_str).collect(), &mut out);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaBenchmark {
    pub table: CaTable,
    pub results: BTreeMap<String, BatchResult>,
}

/// Translates every problem in each direction and tabulates CA. When
/// `archive` is set, outcomes go to `<archive>/<direction>/`.
pub fn run_ca_benchmark(
    dataset_dir: &Path,
    directions: &[Direction],
    config: &PipelineConfig,
    parallelism: usize,
    archive: Option<&Path>,
) -> crate::Result<CaBenchmark> {
    let mut rows = Vec::new();
    let mut results = BTreeMap::new();
    for &direction in directions {
        let tasks = load_tasks(dataset_dir, direction)?;
        if tasks.is_empty() {
            tracing::warn!(direction = %direction.label(), "no problems for direction");
            continue;
        }
        let result = translate_batch(&tasks, config, parallelism)?;
        if let Some(dir) = archive {
            write_archive(&dir.join(direction.label()), &result)?;
        }
        rows.push(CaRow {
            direction: direction.label(),
            summary: result.summary.clone(),
        });
        results.insert(direction.label(), result);
    }
    if rows.is_empty() {
        return Err(EvalError::EmptyDataset(dataset_dir.to_path_buf()).into());
    }
    Ok(CaBenchmark {
        table: CaTable {
            dataset: dataset_dir.display().to_string(),
            k: config.k,
            n: config.n,
            rows,
        },
        results,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    K,
    N,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "k" | "K" => Ok(Axis::K),
            "n" | "N" => Ok(Axis::N),
            other => Err(format!("unknown axis `{other}` (expected k or n)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub ca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: Axis,
    pub points: Vec<SweepPoint>,
    pub direction: String,
    pub dataset: String,
}

/// One CA per value of `axis`, holding the other parameter at its default
/// (k = 1 while sweeping n, n = 5 while sweeping k).
pub fn parameter_sweep(
    dataset_dir: &Path,
    direction: Direction,
    axis: Axis,
    values: &[usize],
    config: &PipelineConfig,
    parallelism: usize,
) -> crate::Result<SweepResult> {
    let increasing = values.windows(2).all(|w| w[0] < w[1]);
    if values.is_empty() || values[0] == 0 || !increasing {
        return Err(EvalError::InvalidSweep(values.to_vec()).into());
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut cfg = config.clone();
        match axis {
            Axis::K => {
                cfg.k = value;
                cfg.n = crate::pipeline::DEFAULT_N;
            }
            Axis::N => {
                cfg.k = crate::pipeline::DEFAULT_K;
                cfg.n = value;
            }
        }
        let bench = run_ca_benchmark(dataset_dir, &[direction], &cfg, parallelism, None)?;
        tracing::info!(?axis, value, ca = bench.table.rows[0].summary.ca, "sweep point");
        points.push(SweepPoint {
            value,
            ca: bench.table.rows[0].summary.ca,
        });
    }
    Ok(SweepResult {
        axis,
        points,
        direction: direction.label(),
        dataset: dataset_dir.display().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FaultDistribution {
    /// Total label occurrences; the denominator of every fraction.
    pub labels: usize,
    pub labeled_tasks: usize,
    pub by_pattern: BTreeMap<FaultPattern, Share>,
    pub by_category: BTreeMap<FaultCategory, Share>,
}

/// Counts manually assigned fault labels. Labels may only refer to
/// outcomes that failed.
pub fn fault_report(
    outcomes: &[TranslationOutcome],
    labels: &BTreeMap<String, Vec<FaultPattern>>,
) -> Result<FaultDistribution, EvalError> {
    let stages: BTreeMap<&str, Stage> = outcomes.iter().map(|o| (o.task.id.as_str(), o.stage)).collect();
    let mut pattern_counts: BTreeMap<FaultPattern, usize> = BTreeMap::new();
    let mut category_counts: BTreeMap<FaultCategory, usize> = BTreeMap::new();
    let mut total = 0;
    let mut labeled_tasks = 0;
    for (task, patterns) in labels {
        match stages.get(task.as_str()) {
            None => return Err(EvalError::InvalidLabel(task.clone(), "no such outcome".into())),
            Some(stage) if stage.passed() => {
                return Err(EvalError::InvalidLabel(task.clone(), "outcome passed".into()));
            }
            Some(_) => {}
        }
        if !patterns.is_empty() {
            labeled_tasks += 1;
        }
        for &p in patterns {
            *pattern_counts.entry(p).or_default() += 1;
            *category_counts.entry(p.category()).or_default() += 1;
            total += 1;
        }
    }
    let share = |count: usize| Share {
        count,
        fraction: count as f64 / total as f64,
    };
    Ok(FaultDistribution {
        labels: total,
        labeled_tasks,
        by_pattern: pattern_counts.into_iter().map(|(k, c)| (k, share(c))).collect(),
        by_category: category_counts.into_iter().map(|(k, c)| (k, share(c))).collect(),
    })
}
