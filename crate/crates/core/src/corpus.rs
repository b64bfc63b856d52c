//! Offline construction of the target-language API sequence index.
//!
//! Files listed in a manifest are segmented into functions, each function
//! is reduced to its call sequence, empty and duplicate sequences are
//! dropped, a seeded sample is taken and embedded, and the result is
//! written as JSONL: one header line followed by one record per line.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, Embedding, EmbeddingError, FlatIndex};
use crate::extractor::{extract_api_sequence, segment_functions_with_stats, ExtractionStats};
use crate::model::{serialize_sequence, ApiSequence, Language};

pub const INDEX_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_SAMPLE_SIZE: usize = 200_000;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("manifest has no entries")]
    EmptyManifest,
    #[error("sample size must be at least 1")]
    InvalidSampleSize,
    #[error("no non-empty API sequences found in {files} file(s)")]
    EmptyCorpus { files: usize },
    #[error("embedding failed after {completed} record(s); rerun to resume: {source}")]
    Embedding {
        completed: usize,
        #[source]
        source: EmbeddingError,
    },
    #[error("index dimension {index} does not match embedder dimension {embedder}")]
    DimensionMismatch { index: usize, embedder: usize },
    #[error("k must be at least 1")]
    InvalidK,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub language: Language,
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub provenance: String,
}

impl CorpusManifest {
    /// Reads a manifest; relative entry paths resolve against its directory.
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
        let mut manifest: CorpusManifest = serde_json::from_str(&text).map_err(|e| crate::Error::format(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for entry in &mut manifest.entries {
            if entry.path.is_relative() {
                entry.path = base.join(&entry.path);
            }
        }
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: u64,
    pub sequence: ApiSequence,
    pub embedding: Embedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub format_version: u32,
    pub language: Language,
    pub dimension: usize,
    pub embed_model_id: String,
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub sample_size: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            sample_size: DEFAULT_SAMPLE_SIZE,
            seed: 0,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildReport {
    pub stats: ExtractionStats,
    pub unique_sequences: usize,
    pub records: usize,
    pub resumed: usize,
}

/// Keeps the first occurrence of every canonical text, in input order.
pub fn dedup(sequences: Vec<ApiSequence>) -> Vec<ApiSequence> {
    let mut seen = HashSet::new();
    sequences
        .into_iter()
        .filter(|s| seen.insert(s.canonical_text().to_string()))
        .collect()
}

/// Uniform sample of `min(size, len)` items without replacement, in their
/// original order.
pub fn seeded_sample<T>(items: Vec<T>, size: usize, seed: u64) -> Vec<T> {
    if items.len() <= size {
        return items;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), size).into_vec();
    picked.sort_unstable();
    let mut keep = vec![false; items.len()];
    for i in picked {
        keep[i] = true;
    }
    items
        .into_iter()
        .zip(keep)
        .filter_map(|(item, k)| k.then_some(item))
        .collect()
}

/// Segments and extracts every manifest file, in manifest order.
pub fn extract_manifest(manifest: &CorpusManifest) -> crate::Result<(Vec<ApiSequence>, ExtractionStats)> {
    let lang = manifest.language;
    let per_file: Vec<crate::Result<(Vec<ApiSequence>, ExtractionStats)>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let text = fs::read_to_string(&entry.path).map_err(|e| crate::Error::io(&entry.path, e))?;
            let path = entry.path.to_string_lossy();
            let (snippets, mut stats) = match segment_functions_with_stats(&text, lang, &entry.source_id, &path) {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(path = %path, error = %e, "skipping unparseable file");
                    let stats = ExtractionStats {
                        files_seen: 1,
                        ..Default::default()
                    };
                    return Ok((Vec::new(), stats));
                }
            };
            let mut seqs = Vec::with_capacity(snippets.len());
            for snippet in &snippets {
                match extract_api_sequence(snippet) {
                    Ok(seq) if !seq.is_empty() => seqs.push(seq),
                    Ok(_) => {}
                    Err(e) => tracing::warn!(
                        path = %path,
                        function = %snippet.origin.function_name,
                        error = %e,
                        "skipping function"
                    ),
                }
            }
            stats.sequences_nonempty = seqs.len();
            Ok((seqs, stats))
        })
        .collect();

    let mut all = Vec::new();
    let mut stats = ExtractionStats::default();
    for r in per_file {
        let (seqs, s) = r?;
        stats.merge(&s);
        all.extend(seqs);
    }
    Ok((all, stats))
}

fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out.with_file_name(name)
}

/// Number of leading records in an existing partial file that agree with
/// the planned build; 0 when the file is absent or from a different build.
fn resumable_prefix(partial: &Path, header: &IndexHeader, planned: &[ApiSequence]) -> usize {
    let Ok(file) = File::open(partial) else {
        return 0;
    };
    let mut lines = BufReader::new(file).lines();
    let same_header = lines
        .next()
        .and_then(|l| l.ok())
        .and_then(|l| serde_json::from_str::<IndexHeader>(&l).ok())
        .is_some_and(|h| &h == header);
    if !same_header {
        return 0;
    }
    let mut done = 0;
    for line in lines {
        let Some(rec) = line.ok().and_then(|l| serde_json::from_str::<SequenceRecord>(&l).ok()) else {
            break;
        };
        let matches = rec.id == done as u64
            && planned.get(done).is_some_and(|p| p == &rec.sequence)
            && rec.embedding.dimension() == header.dimension;
        if !matches {
            break;
        }
        done += 1;
    }
    done
}

/// Rewrites the partial file keeping only its first `keep` records, so a
/// torn final line never survives a resume.
fn truncate_partial(partial: &Path, keep: usize) -> crate::Result<()> {
    let text = fs::read_to_string(partial).map_err(|e| crate::Error::io(partial, e))?;
    let mut out = String::with_capacity(text.len());
    for line in text.lines().take(keep + 1) {
        out.push_str(line);
        out.push('\n');
    }
    crate::write_atomic(partial, out.as_bytes())
}

/// Builds the sequence index at `out`.
///
/// Records are appended to `<out>.partial` as batches finish and the file
/// is renamed into place at the end. A failed build leaves the partial
/// file behind; rerunning with the same inputs resumes after the last
/// complete record.
pub fn build_corpus(
    manifest: &CorpusManifest,
    options: &BuildOptions,
    embedder: &dyn Embedder,
    out: &Path,
) -> crate::Result<BuildReport> {
    if manifest.entries.is_empty() {
        return Err(CorpusError::EmptyManifest.into());
    }
    if options.sample_size == 0 {
        return Err(CorpusError::InvalidSampleSize.into());
    }
    let (sequences, stats) = extract_manifest(manifest)?;
    let unique = dedup(sequences);
    if unique.is_empty() {
        return Err(CorpusError::EmptyCorpus {
            files: stats.files_seen,
        }
        .into());
    }
    let unique_count = unique.len();
    let planned = seeded_sample(unique, options.sample_size, options.seed);
    tracing::info!(
        files = stats.files_seen,
        functions = stats.functions_found,
        unique = unique_count,
        sampled = planned.len(),
        "extraction finished"
    );

    let header = IndexHeader {
        format_version: INDEX_FORMAT_VERSION,
        language: manifest.language,
        dimension: embedder.dimension(),
        embed_model_id: embedder.model_id().to_string(),
        seed: options.seed,
        count: planned.len(),
    };
    let partial = partial_path(out);
    let resumed = resumable_prefix(&partial, &header, &planned);
    if resumed > 0 {
        tracing::info!(resumed, "resuming from partial index");
        truncate_partial(&partial, resumed)?;
    } else {
        let mut text = serde_json::to_string(&header).expect("header serializes");
        text.push('\n');
        fs::write(&partial, text).map_err(|e| crate::Error::io(&partial, e))?;
    }
    let mut file = OpenOptions::new()
        .append(true)
        .open(&partial)
        .map_err(|e| crate::Error::io(&partial, e))?;

    let batch_size = options.batch_size.max(1);
    let wave = batch_size * rayon::current_num_threads().max(1);
    let mut completed = resumed;
    for wave_start in (resumed..planned.len()).step_by(wave) {
        let wave_end = (wave_start + wave).min(planned.len());
        let texts: Vec<String> = planned[wave_start..wave_end].iter().map(serialize_sequence).collect();
        let results: Vec<Result<Vec<Embedding>, EmbeddingError>> = texts
            .par_chunks(batch_size)
            .map(|chunk| embedder.embed_batch(chunk))
            .collect();
        let mut lines = String::new();
        let mut failure = None;
        let mut next = wave_start;
        for batch in results {
            let embeddings = match batch.and_then(|b| check_batch(b, header.dimension)) {
                Ok(b) => b,
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            };
            for embedding in embeddings {
                let record = SequenceRecord {
                    id: next as u64,
                    sequence: planned[next].clone(),
                    embedding,
                };
                lines.push_str(&serde_json::to_string(&record).expect("record serializes"));
                lines.push('\n');
                next += 1;
            }
        }
        file.write_all(lines.as_bytes())
            .map_err(|e| crate::Error::io(&partial, e))?;
        completed = next;
        if let Some(source) = failure {
            file.sync_all().map_err(|e| crate::Error::io(&partial, e))?;
            return Err(CorpusError::Embedding { completed, source }.into());
        }
    }
    file.sync_all().map_err(|e| crate::Error::io(&partial, e))?;
    drop(file);
    fs::rename(&partial, out).map_err(|e| crate::Error::io(out, e))?;
    Ok(BuildReport {
        stats,
        unique_sequences: unique_count,
        records: completed,
        resumed,
    })
}

fn check_batch(batch: Vec<Embedding>, dimension: usize) -> Result<Vec<Embedding>, EmbeddingError> {
    for e in &batch {
        if e.dimension() != dimension {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dimension,
                actual: e.dimension(),
            });
        }
        if e.values.iter().any(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite);
        }
    }
    Ok(batch)
}

/// A loaded sequence index ready for top-k queries.
#[derive(Debug, Clone)]
pub struct SequenceIndex {
    header: IndexHeader,
    records: Vec<SequenceRecord>,
    index: FlatIndex,
}

impl SequenceIndex {
    pub fn from_records(
        language: Language,
        embed_model_id: impl Into<String>,
        seed: u64,
        records: Vec<SequenceRecord>,
    ) -> crate::Result<Self> {
        let dimension = records.first().map_or(0, |r| r.embedding.dimension());
        let header = IndexHeader {
            format_version: INDEX_FORMAT_VERSION,
            language,
            dimension,
            embed_model_id: embed_model_id.into(),
            seed,
            count: records.len(),
        };
        Self::assemble(header, records)
    }

    fn assemble(header: IndexHeader, records: Vec<SequenceRecord>) -> crate::Result<Self> {
        let mut index = FlatIndex::new(header.dimension);
        for r in &records {
            index.insert(r.id, &r.embedding.values)?;
        }
        Ok(Self { header, records, index })
    }

    pub fn load(path: &Path) -> crate::Result<Self> {
        let file = File::open(path).map_err(|e| crate::Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header: IndexHeader = match lines.next() {
            Some(line) => {
                let line = line.map_err(|e| crate::Error::io(path, e))?;
                serde_json::from_str(&line).map_err(|e| crate::Error::format(path, format!("header: {e}")))?
            }
            None => return Err(crate::Error::format(path, "missing header")),
        };
        if header.format_version != INDEX_FORMAT_VERSION {
            return Err(crate::Error::format(
                path,
                format!("unsupported format version {}", header.format_version),
            ));
        }
        let mut records = Vec::with_capacity(header.count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| crate::Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SequenceRecord =
                serde_json::from_str(&line).map_err(|e| crate::Error::format(path, format!("line {}: {e}", i + 2)))?;
            if rec.sequence.language != header.language {
                return Err(crate::Error::format(path, format!("line {}: wrong language", i + 2)));
            }
            records.push(rec);
        }
        if records.len() != header.count {
            return Err(crate::Error::format(
                path,
                format!("header count {} but {} records", header.count, records.len()),
            ));
        }
        Self::assemble(header, records).map_err(|e| crate::Error::format(path, e))
    }

    pub fn header(&self) -> &IndexHeader {
        &self.header
    }

    pub fn records(&self) -> &[SequenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Top-k records by cosine with scores, best first; k is clamped to
    /// the index size.
    pub fn query(&self, query: &[f64], k: usize) -> crate::Result<Vec<(SequenceRecord, f64)>> {
        if k == 0 {
            return Err(CorpusError::InvalidK.into());
        }
        let hits = self.index.query_topk(query, k)?;
        Ok(hits
            .into_iter()
            .map(|h| {
                let rec = self
                    .records
                    .iter()
                    .find(|r| r.id == h.id)
                    .expect("index ids come from records");
                (rec.clone(), h.score)
            })
            .collect())
    }

    /// Embeds the serialized sequence and queries the index.
    pub fn query_sequence(
        &self,
        sequence: &ApiSequence,
        embedder: &dyn Embedder,
        k: usize,
    ) -> crate::Result<Vec<(SequenceRecord, f64)>> {
        if embedder.dimension() != self.header.dimension {
            return Err(CorpusError::DimensionMismatch {
                index: self.header.dimension,
                embedder: embedder.dimension(),
            }
            .into());
        }
        let q = embedder.embed(&serialize_sequence(sequence))?;
        self.query(&q.values, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEmbedder;
    use crate::model::ApiCall;
    use proptest::prelude::*;

    fn seq(names: &[&str]) -> ApiSequence {
        ApiSequence::new(
            Language::Python,
            names.iter().map(|n| ApiCall::new(*n, 1).unwrap()).collect(),
        )
    }

    #[test]
    fn dedup_examples() {
        let (s1, s2) = (seq(&["a"]), seq(&["b"]));
        assert_eq!(
            dedup(vec![s1.clone(), s1.clone(), s2.clone()]),
            vec![s1.clone(), s2.clone()]
        );
        assert_eq!(dedup(vec![s2.clone(), s1.clone()]), vec![s2, s1]);
    }

    #[test]
    fn sample_keeps_order_and_clamps() {
        let items: Vec<u32> = (0..50).collect();
        assert_eq!(seeded_sample(items.clone(), 200_000, 1), items);
        let s = seeded_sample(items.clone(), 10, 7);
        assert_eq!(s.len(), 10);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, seeded_sample(items.clone(), 10, 7));
        assert_ne!(s, seeded_sample(items, 10, 8));
    }

    fn write_manifest(dir: &Path, files: &[(&str, &str)]) -> CorpusManifest {
        let mut entries = Vec::new();
        for (name, body) in files {
            fs::write(dir.join(name), body).unwrap();
            entries.push(ManifestEntry {
                source_id: name.to_string(),
                path: dir.join(name),
            });
        }
        CorpusManifest {
            language: Language::Python,
            entries,
            provenance: "test".into(),
        }
    }

    #[test]
    fn duplicate_functions_collapse_to_one_record() {
        let dir = tempfile::tempdir().unwrap();
        let body = "def f(x):\n    print(len(x))\n";
        let m = write_manifest(dir.path(), &[("a.py", &body.repeat(3))]);
        let out = dir.path().join("idx.jsonl");
        let opts = BuildOptions {
            sample_size: 10,
            seed: 1,
            ..Default::default()
        };
        let report = build_corpus(&m, &opts, &MockEmbedder::new(8), &out).unwrap();
        assert_eq!(report.records, 1);
        assert_eq!(report.stats.functions_found, 3);
        let idx = SequenceIndex::load(&out).unwrap();
        assert_eq!(idx.header().count, 1);
        assert_eq!(idx.records()[0].sequence.canonical_text(), "print/1 -> len/1");
        assert!(!partial_path(&out).exists());
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_manifest(dir.path(), &[("a.py", "def f():\n    return 1\n")]);
        let err = build_corpus(
            &m,
            &BuildOptions::default(),
            &MockEmbedder::new(8),
            &dir.path().join("o"),
        );
        assert!(matches!(
            err,
            Err(crate::Error::Corpus(CorpusError::EmptyCorpus { files: 1 }))
        ));
    }

    struct FailAfter {
        inner: MockEmbedder,
        budget: std::sync::atomic::AtomicUsize,
    }

    impl Embedder for FailAfter {
        fn model_id(&self) -> &str {
            self.inner.model_id()
        }
        fn dimension(&self) -> usize {
            self.inner.dimension()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
            use std::sync::atomic::Ordering;
            let left = self.budget.load(Ordering::SeqCst);
            if left < texts.len() {
                return Err(EmbeddingError::BadResponse("quota".into()));
            }
            self.budget.fetch_sub(texts.len(), Ordering::SeqCst);
            self.inner.embed_batch(texts)
        }
    }

    #[test]
    fn failed_build_resumes_to_identical_index() {
        let dir = tempfile::tempdir().unwrap();
        let src: String = (0..12)
            .map(|i| format!("def f{i}(x):\n    print(x)\n    f{i}(x)\n"))
            .collect();
        let m = write_manifest(dir.path(), &[("a.py", &src)]);
        let opts = BuildOptions {
            sample_size: 100,
            seed: 3,
            batch_size: 2,
        };
        let reference = dir.path().join("ref.jsonl");
        build_corpus(&m, &opts, &MockEmbedder::new(8), &reference).unwrap();

        let out = dir.path().join("out.jsonl");
        let flaky = FailAfter {
            inner: MockEmbedder::new(8),
            budget: 4.into(),
        };
        let err = build_corpus(&m, &opts, &flaky, &out).unwrap_err();
        let crate::Error::Corpus(CorpusError::Embedding { completed, .. }) = err else {
            panic!("unexpected error {err}");
        };
        assert!(completed <= 4);
        assert!(!out.exists());
        let report = build_corpus(&m, &opts, &MockEmbedder::new(8), &out).unwrap();
        assert_eq!(report.resumed, completed);
        assert_eq!(fs::read(&out).unwrap(), fs::read(&reference).unwrap());
    }

    #[test]
    fn query_clamps_k() {
        let emb = MockEmbedder::new(16);
        let rec = SequenceRecord {
            id: 0,
            sequence: seq(&["print"]),
            embedding: emb.embed("print/1").unwrap(),
        };
        let idx = SequenceIndex::from_records(Language::Python, emb.model_id(), 0, vec![rec]).unwrap();
        let hits = idx.query_sequence(&seq(&["print"]), &emb, 2).unwrap();
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-9);
        assert!(idx.query_sequence(&seq(&["print"]), &emb, 0).is_err());
    }

    fn arb_seqs() -> impl Strategy<Value = Vec<ApiSequence>> {
        proptest::collection::vec(proptest::collection::vec(0usize..4, 1..3), 0..40).prop_map(|v| {
            v.into_iter()
                .map(|ids| {
                    let names: Vec<&str> = ids.iter().map(|&i| ["a", "b", "c", "d"][i]).collect();
                    seq(&names)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent_and_matches_oracle(seqs in arb_seqs()) {
            let once = dedup(seqs.clone());
            prop_assert_eq!(dedup(once.clone()), once.clone());
            let mut seen = Vec::<String>::new();
            for s in &seqs {
                if !seen.contains(&s.canonical_text().to_string()) {
                    seen.push(s.canonical_text().to_string());
                }
            }
            let got: Vec<String> = once.iter().map(|s| s.canonical_text().to_string()).collect();
            prop_assert_eq!(got, seen);
        }
    }
}
