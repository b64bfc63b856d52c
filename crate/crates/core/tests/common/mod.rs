#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use apirag_core::corpus::{SequenceIndex, SequenceRecord};
use apirag_core::embedding::{Embedder, Embedding, EmbeddingError, InjectedEmbedder, MockEmbedder};
use apirag_core::eval::RetrievalPair;
use apirag_core::mappings::{ApiMappingRecord, MappingPool, ReviewStatus};
use apirag_core::model::parse_sequence;
use apirag_core::pipeline::KnowledgeBase;
use apirag_core::testkit::{load_metadata, TestMetadata};
use apirag_core::{Language, TranslationTask};

pub const HARNESS_FIXTURES: [&str; 5] = ["add", "halve", "even", "words", "counts"];

pub fn fixtures() -> PathBuf {
    // Resolves from either the core crate or a sibling crate.
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

pub fn harness_fixture(name: &str) -> (TestMetadata, PathBuf) {
    let dir = fixtures().join("harness").join(name);
    (load_metadata(&dir.join("metadata.json")).unwrap(), dir)
}

pub fn read(dir: &std::path::Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

/// Counts every embedding request.
pub struct CountingEmbedder {
    inner: MockEmbedder,
    calls: AtomicUsize,
}

impl CountingEmbedder {
    pub fn new(dimension: usize) -> Self {
        Self {
            inner: MockEmbedder::new(dimension),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Embedder for CountingEmbedder {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Embedding>, EmbeddingError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed_batch(texts)
    }
}

pub const DIM: usize = 64;

/// `max(a, b)` in Java, to be translated to Python.
pub fn max_task(id: &str) -> TranslationTask {
    let metadata: TestMetadata = serde_json::from_value(serde_json::json!({
        "function_name": "solve",
        "params": [{"name": "a", "type": "int"}, {"name": "b", "type": "int"}],
        "return_type": "int",
        "cases": [
            {"inputs": [1, 2], "expected": 2},
            {"inputs": [5, 3], "expected": 5}
        ]
    }))
    .unwrap();
    TranslationTask {
        id: id.into(),
        source_lang: Language::Java,
        target_lang: Language::Python,
        source_code: "class Main {\n    static int solve(int a, int b) {\n        return Math.max(a, b);\n    }\n}\n"
            .into(),
        metadata,
    }
}

pub const GOOD_PY: &str = "```python\ndef solve(a, b):\n    return max(a, b)\n```\n# |End-of-Code|";
pub const BAD_PY: &str = "def solve(a, b):\n    return min(a, b)\n# |End-of-Code|";

pub fn record(id: u64, seq: &str, lang: Language, embedder: &dyn Embedder) -> SequenceRecord {
    let sequence = parse_sequence(seq, lang).unwrap();
    SequenceRecord {
        id,
        embedding: embedder.embed(sequence.canonical_text()).unwrap(),
        sequence,
    }
}

pub fn python_index(embedder: &dyn Embedder, seqs: &[&str]) -> SequenceIndex {
    let records = seqs
        .iter()
        .enumerate()
        .map(|(i, s)| record(i as u64, s, Language::Python, embedder))
        .collect();
    SequenceIndex::from_records(Language::Python, embedder.model_id(), 0, records).unwrap()
}

pub fn reviewed(id: u64, source: &str, targets: &[&str], embedder: &dyn Embedder) -> ApiMappingRecord {
    let mut r = ApiMappingRecord::draft(
        id,
        source,
        embedder.embed(source).unwrap(),
        targets.iter().map(|t| t.to_string()).collect(),
        format!("{source} equivalent"),
        "argument order and overflow behaviour may differ",
    );
    r.review_status = ReviewStatus::Reviewed;
    r
}

pub fn java_to_python_pool(embedder: &dyn Embedder) -> MappingPool {
    let mut pool = MappingPool::new(Language::Java, Language::Python);
    for (i, (src, tgt)) in [
        ("Math.max", "max"),
        ("Math.min", "min"),
        ("Integer.parseInt", "int"),
        ("System.out.println", "print"),
        ("nextInt", "int(input())"),
        ("String.valueOf", "str"),
    ]
    .iter()
    .enumerate()
    {
        pool.insert(reviewed(i as u64, src, &[tgt], embedder)).unwrap();
    }
    pool
}

pub fn knowledge(embedder: &dyn Embedder) -> Arc<KnowledgeBase> {
    Arc::new(
        KnowledgeBase::new()
            .with_index(python_index(
                embedder,
                &["max/2", "print/1 -> len/1", "sorted/1 -> reversed/1"],
            ))
            .with_pool(java_to_python_pool(embedder)),
    )
}

pub fn dataset() -> PathBuf {
    fixtures().join("dataset")
}

pub const GOOD_TARGETS: [&str; 3] = ["max/2", "abs/1", "join/1"];
pub const POISONED_TARGETS: [&str; 3] = [
    "max/2 -> poison.sink/2",
    "abs/1 -> poison.sink/1",
    "join/1 -> poison.sink/1",
];

/// Index over good and poisoned Python sequences for the dataset fixture.
pub fn dataset_knowledge(embedder: &dyn Embedder) -> Arc<KnowledgeBase> {
    let all: Vec<&str> = GOOD_TARGETS.iter().chain(POISONED_TARGETS.iter()).copied().collect();
    Arc::new(
        KnowledgeBase::new()
            .with_index(python_index(embedder, &all))
            .with_pool(java_to_python_pool(embedder)),
    )
}

pub fn scripted(file: &str) -> Arc<apirag_core::llm::ScriptedProvider> {
    Arc::new(apirag_core::llm::ScriptedProvider::from_file(&fixtures().join("llm").join(file)).unwrap())
}

pub fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Ten pairs whose gold is nearest to the query for exactly `hits` pairs.
pub fn constructed_pairs(hits: usize) -> (Vec<RetrievalPair>, InjectedEmbedder) {
    let dim = 16;
    let mut emb = InjectedEmbedder::new(Arc::new(MockEmbedder::new(dim)));
    let mut pairs = Vec::new();
    for i in 0..10 {
        let src = parse_sequence(&format!("Src{i}.call/0"), Language::Java).unwrap();
        let gold = parse_sequence(&format!("gold{i}/1"), Language::Python).unwrap();
        emb.insert(gold.canonical_text(), basis(dim, i)).unwrap();
        let target = if i < hits { i } else { (i + 1) % 10 };
        emb.insert(src.canonical_text(), basis(dim, target)).unwrap();
        pairs.push(RetrievalPair::new(src, gold).unwrap());
    }
    (pairs, emb)
}
