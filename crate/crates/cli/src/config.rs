//! TOML configuration file. Every setting is optional; command-line flags
//! take precedence. Relative paths resolve against the file's directory.
//!
//! ```toml
//! k = 1
//! n = 5
//! timeout_secs = 10
//! jobs = 4
//! allow_draft = false
//!
//! [indexes]
//! python = "indexes/python.jsonl"
//!
//! [[pools]]
//! source = "java"
//! target = "python"
//! path = "pools/java-python.jsonl"
//!
//! [embedder]
//! kind = "mock"        # or "remote"
//! dimension = 256
//!
//! [llm]
//! kind = "scripted"    # or "remote"
//! fixtures = "fixtures/replies.json"
//!
//! [toolchains.languages.python]
//! compile_cmd = ["python3", "-m", "py_compile", "{file}"]
//! run_cmd = ["python3", "{file}"]
//! file_name = "main.py"
//! ```
//!
//! Remote providers read their key from the environment variable named by
//! `api_key_env` (default `OPENAI_API_KEY`); `base_url` and `model` may be
//! set in the `[embedder]` and `[llm]` tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use apirag_core::testkit::Toolchains;
use apirag_core::Language;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    Scripted,
    Remote,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub source: Language,
    pub target: Language,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    pub kind: Option<EmbedderKind>,
    pub dimension: Option<usize>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSection {
    pub kind: Option<LlmKind>,
    pub fixtures: Option<PathBuf>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub k: Option<usize>,
    pub n: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub jobs: Option<usize>,
    pub allow_draft: Option<bool>,
    pub indexes: BTreeMap<Language, PathBuf>,
    pub pools: Vec<PoolEntry>,
    pub embedder: EmbedderSection,
    pub llm: LlmSection,
    pub toolchains: Option<Toolchains>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Config =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.indexes.values_mut().for_each(join);
        self.pools.iter_mut().for_each(|p| join(&mut p.path));
        if let Some(f) = self.llm.fixtures.as_mut() {
            join(f);
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        for (name, value) in [("k", self.k), ("n", self.n), ("jobs", self.jobs)] {
            if value == Some(0) {
                return Err(CliError::Usage(format!("config: {name} must be at least 1")));
            }
        }
        if self.timeout_secs == Some(0) {
            return Err(CliError::Usage("config: timeout_secs must be positive".into()));
        }
        let paths = self
            .indexes
            .values()
            .chain(self.pools.iter().map(|p| &p.path))
            .chain(self.llm.fixtures.iter());
        for p in paths {
            if !p.exists() {
                return Err(CliError::Usage(format!("config: {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}
