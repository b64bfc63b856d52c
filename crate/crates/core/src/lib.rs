//! Retrieval-augmented code translation between Python and Java.
//!
//! The crate extracts API call sequences from source programs, retrieves
//! target-language API knowledge (similar call sequences, their
//! back-translations and curated single-API mappings) from flat vector
//! stores, and drives a two-round LLM translation whose output is checked
//! by generated test harnesses.
//!
//! Module map:
//! - [`model`]: shared domain types and the canonical sequence text form
//! - [`extractor`]: function segmentation and call extraction
//! - [`corpus`]: offline construction of the sequence index
//! - [`embedding`]: embedding providers and the exact cosine index
//! - [`mappings`]: the single-API mapping pool
//! - [`llm`]: chat providers, prompt templates, response parsing
//! - [`testkit`]: harness generation, execution, computational accuracy
//! - [`pipeline`]: the translate / retrieve / re-translate loop
//! - [`eval`]: retrieval precision, accuracy benchmarks, parameter sweeps

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod extractor;
pub mod http;
pub mod llm;
pub mod mappings;
pub mod model;
pub mod pipeline;
pub mod testkit;

use std::path::{Path, PathBuf};

pub use model::{ApiCall, ApiSequence, CodeSnippet, FaultCategory, FaultPattern, Language, TranslationTask};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Extract(#[from] extractor::ExtractError),
    #[error(transparent)]
    Embedding(#[from] embedding::EmbeddingError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Mapping(#[from] mappings::MappingError),
    #[error(transparent)]
    Llm(#[from] llm::LlmError),
    #[error(transparent)]
    Testkit(#[from] testkit::TestkitError),
    #[error(transparent)]
    Pipeline(#[from] pipeline::PipelineError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn format(path: impl AsRef<Path>, message: impl ToString) -> Self {
        Error::Format {
            path: path.as_ref().to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Writes `contents` next to `path` and renames it into place.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
