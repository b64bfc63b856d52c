use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use apirag_core::corpus::{build_corpus, BuildOptions, CorpusManifest, SequenceIndex};
use apirag_core::embedding::{Embedder, MockEmbedder, RemoteEmbedder, RemoteEmbedderConfig};
use apirag_core::eval::{load_pairs, parameter_sweep, precision_at_1, run_ca_benchmark, Direction};
use apirag_core::extractor::{extract_api_sequence, extract_from_program, segment_functions_with_stats};
use apirag_core::llm::{ChatProvider, RemoteChatConfig, RemoteChatProvider, ScriptedProvider};
use apirag_core::mappings::{draft_mappings, retrieve_mappings, review, MappingPool, ReviewStatus, Verdict};
use apirag_core::model::{parse_sequence, serialize_sequence};
use apirag_core::pipeline::{translate_batch, write_archive, KnowledgeBase, PipelineConfig};
use apirag_core::{Language, TranslationTask};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::{info, warn};

use crate::config::{Config, EmbedderKind, LlmKind};
use crate::{
    BuildIndexArgs, BuildMappingsArgs, Cli, CliError, Command, EmbedArgs, EvalCaArgs, EvalRetrievalArgs, ExtractArgs,
    KnowledgeArgs, LlmArgs, RetrieveArgs, ReviewArgs, SweepArgs, TranslateArgs,
};

const DEFAULT_MOCK_DIMENSION: usize = 256;

struct Context {
    config: Config,
    jobs: usize,
    out: Option<PathBuf>,
    allow_draft: bool,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let jobs = cli.jobs.or(config.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let ctx = Context {
        allow_draft: cli.allow_draft || config.allow_draft.unwrap_or(false),
        config,
        jobs,
        out: cli.out,
    };
    match cli.command {
        Command::Extract(a) => extract(&ctx, a),
        Command::BuildIndex(a) => build_index(&ctx, a),
        Command::BuildMappings(a) => build_mappings(&ctx, a),
        Command::ReviewMappings(a) => review_mappings(&ctx, a),
        Command::Retrieve(a) => retrieve(&ctx, a),
        Command::Translate(a) => translate(&ctx, a),
        Command::EvalCa(a) => eval_ca(&ctx, a),
        Command::EvalRetrieval(a) => eval_retrieval(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
    }
}

impl Context {
    fn emit<T: Serialize>(&self, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Environment(e.to_string()))?;
        text.push('\n');
        match &self.out {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| CliError::Environment(format!("cannot write {}: {e}", path.display()))),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(text.as_bytes())
                    .map_err(|e| CliError::Environment(e.to_string()))
            }
        }
    }

    fn embedder(&self, args: &EmbedArgs) -> Result<Arc<dyn Embedder>, CliError> {
        let section = &self.config.embedder;
        let kind = args.embedder.or(section.kind).unwrap_or(EmbedderKind::Mock);
        match kind {
            EmbedderKind::Mock => {
                let dim = args.dim.or(section.dimension).unwrap_or(DEFAULT_MOCK_DIMENSION);
                if dim == 0 {
                    return Err(CliError::Usage("--dim must be at least 1".into()));
                }
                Ok(Arc::new(MockEmbedder::new(dim)))
            }
            EmbedderKind::Remote => {
                let mut cfg = RemoteEmbedderConfig::default();
                if let Some(m) = &section.model {
                    cfg.model = m.clone();
                }
                if let Some(d) = args.dim.or(section.dimension) {
                    cfg.dimension = d;
                }
                if let Some(b) = section.batch_size {
                    cfg.batch_size = b;
                }
                if let Some(k) = &section.api_key_env {
                    cfg.http.api_key_env = k.clone();
                }
                if let Some(u) = std::env::var("APIRAG_EMBED_BASE_URL")
                    .ok()
                    .or_else(|| section.base_url.clone())
                {
                    cfg.http.base_url = u;
                }
                Ok(Arc::new(RemoteEmbedder::new(cfg)?))
            }
        }
    }

    fn llm(&self, args: &LlmArgs) -> Result<Arc<dyn ChatProvider>, CliError> {
        let section = &self.config.llm;
        let kind = args.llm.or(section.kind).unwrap_or(LlmKind::Scripted);
        match kind {
            LlmKind::Scripted => {
                let path = args
                    .fixtures
                    .as_ref()
                    .or(section.fixtures.as_ref())
                    .ok_or_else(|| CliError::Usage("--llm scripted needs --fixtures".into()))?;
                Ok(Arc::new(ScriptedProvider::from_file(path)?))
            }
            LlmKind::Remote => {
                let mut cfg = RemoteChatConfig::default();
                if let Some(m) = &section.model {
                    cfg.model = m.clone();
                }
                if let Some(k) = &section.api_key_env {
                    cfg.http.api_key_env = k.clone();
                }
                if let Some(u) = std::env::var("APIRAG_CHAT_BASE_URL")
                    .ok()
                    .or_else(|| section.base_url.clone())
                {
                    cfg.http.base_url = u;
                }
                Ok(Arc::new(RemoteChatProvider::new(cfg)?))
            }
        }
    }

    fn knowledge(&self, args: &KnowledgeArgs) -> Result<Arc<KnowledgeBase>, CliError> {
        let mut kb = KnowledgeBase::new().allow_draft(self.allow_draft);
        for (lang, path) in &self.config.indexes {
            kb = kb.with_index_path(*lang, path.clone());
        }
        for p in &self.config.pools {
            kb = kb.with_pool_path(p.source, p.target, p.path.clone());
        }
        for spec in &args.indexes {
            let (lang, path) = split_assignment(spec, "--index")?;
            kb = kb.with_index_path(parse_language(lang)?, path);
        }
        for spec in &args.pools {
            let (pair, path) = split_assignment(spec, "--pool")?;
            let (src, tgt) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("--pool expects SRC:TGT=PATH, got `{spec}`")))?;
            kb = kb.with_pool_path(parse_language(src)?, parse_language(tgt)?, path);
        }
        Ok(Arc::new(kb))
    }

    fn pipeline(
        &self,
        embed: &EmbedArgs,
        llm: &LlmArgs,
        knowledge: &KnowledgeArgs,
    ) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig::new(self.llm(llm)?, self.embedder(embed)?, self.knowledge(knowledge)?);
        if let Some(k) = knowledge.k.or(self.config.k) {
            cfg.k = k;
        }
        if let Some(n) = knowledge.n.or(self.config.n) {
            cfg.n = n;
        }
        if let Some(t) = knowledge.timeout.or(self.config.timeout_secs) {
            cfg.timeout = Duration::from_secs(t);
        }
        if let Some(t) = &self.config.toolchains {
            cfg.toolchains = t.clone();
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn split_assignment<'a>(spec: &'a str, flag: &str) -> Result<(&'a str, PathBuf), CliError> {
    spec.split_once('=')
        .map(|(k, v)| (k, PathBuf::from(v)))
        .ok_or_else(|| CliError::Usage(format!("{flag} expects KEY=PATH, got `{spec}`")))
}

fn parse_language(s: &str) -> Result<Language, CliError> {
    s.parse()
        .map_err(|e: apirag_core::model::ModelError| CliError::Usage(e.to_string()))
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

#[derive(Serialize)]
struct ExtractedSequence {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    function: Option<String>,
    sequence: String,
}

fn extract(ctx: &Context, args: ExtractArgs) -> Result<(), CliError> {
    let mut out = Vec::new();
    for file in &args.files {
        let text = read_file(file)?;
        let path = file.display().to_string();
        if args.program {
            let seq = extract_from_program(&text, args.lang)?;
            out.push(ExtractedSequence {
                path,
                function: None,
                sequence: serialize_sequence(&seq),
            });
            continue;
        }
        let (snippets, stats) = segment_functions_with_stats(&text, args.lang, "cli", &path)?;
        info!(file = %path, found = stats.functions_found, parsed = stats.functions_parsed, "segmented");
        for snippet in &snippets {
            let seq = extract_api_sequence(snippet)?;
            out.push(ExtractedSequence {
                path: path.clone(),
                function: Some(snippet.origin.function_name.clone()),
                sequence: serialize_sequence(&seq),
            });
        }
    }
    ctx.emit(&out)
}

fn build_index(ctx: &Context, args: BuildIndexArgs) -> Result<(), CliError> {
    let manifest = CorpusManifest::load(&args.manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(lang) = args.lang {
        if lang != manifest.language {
            return Err(CliError::Usage(format!(
                "manifest language is {}, not {}",
                manifest.language.id(),
                lang.id()
            )));
        }
    }
    let embedder = ctx.embedder(&args.embed)?;
    let opts = BuildOptions {
        sample_size: args.sample_size,
        seed: args.seed,
        batch_size: args.batch_size,
    };
    let report = build_corpus(&manifest, &opts, embedder.as_ref(), &args.index)?;
    info!(records = report.records, path = %args.index.display(), "index written");
    ctx.emit(&json!({ "index": args.index, "report": report }))
}

fn build_mappings(ctx: &Context, args: BuildMappingsArgs) -> Result<(), CliError> {
    let names: Vec<String> = read_file(&args.apis)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    let mut pool = if args.pool.exists() {
        MappingPool::load(&args.pool, true)?
    } else {
        MappingPool::new(args.source, args.target)
    };
    if (pool.source_lang(), pool.target_lang()) != (args.source, args.target) {
        return Err(CliError::Usage(format!(
            "{} maps {} to {}",
            args.pool.display(),
            pool.source_lang().id(),
            pool.target_lang().id()
        )));
    }
    let known: std::collections::HashSet<&str> = pool.records().iter().map(|r| r.source_api.as_str()).collect();
    let fresh: Vec<String> = names.iter().filter(|n| !known.contains(n.as_str())).cloned().collect();
    let skipped = names.len() - fresh.len();

    let llm = ctx.llm(&args.llm)?;
    let embedder = ctx.embedder(&args.embed)?;
    let drafted = draft_mappings(
        &fresh,
        llm.as_ref(),
        embedder.as_ref(),
        args.source,
        args.target,
        pool.next_id(),
    );
    let mut flagged = Vec::new();
    let mut added = 0;
    let mut errors: Vec<serde_json::Value> = Vec::new();
    for record in drafted.records {
        if record.is_malformed() {
            flagged.push(record.id);
        }
        let api = record.source_api.clone();
        match pool.insert(record) {
            Ok(()) => added += 1,
            Err(e) => errors.push(json!({ "api": api, "error": e.to_string() })),
        }
    }
    for (api, e) in &drafted.errors {
        warn!(%api, error = %e, "drafting failed");
        errors.push(json!({ "api": api, "error": e.to_string() }));
    }
    pool.save(&args.pool, true)?;
    ctx.emit(&json!({
        "pool": args.pool,
        "drafted": added,
        "skipped_existing": skipped,
        "flagged": flagged,
        "errors": errors,
        "count": pool.len(),
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictLine {
    id: u64,
    verdict: Verdict,
}

fn review_mappings(ctx: &Context, args: ReviewArgs) -> Result<(), CliError> {
    let mut pool = MappingPool::load(&args.pool, true)?;
    let mut applied = Vec::new();
    let mut rejected = Vec::new();
    for (i, line) in std::io::stdin().lock().lines().enumerate() {
        let line = line.map_err(|e| CliError::Environment(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: VerdictLine =
            serde_json::from_str(&line).map_err(|e| CliError::Usage(format!("verdict line {}: {e}", i + 1)))?;
        let record = pool
            .get(v.id)
            .cloned()
            .ok_or_else(|| CliError::Usage(format!("verdict line {}: no record {}", i + 1, v.id)))?;
        match review(record, v.verdict) {
            Ok(updated) => {
                pool.replace(updated)?;
                applied.push(v.id);
            }
            Err(e) => rejected.push(json!({ "id": v.id, "error": e.to_string() })),
        }
    }
    pool.save(&args.pool, true)?;
    let pending: Vec<u64> = pool
        .records()
        .iter()
        .filter(|r| r.review_status != ReviewStatus::Reviewed)
        .map(|r| r.id)
        .collect();
    let publish_error = match &args.publish {
        Some(path) if pending.is_empty() => {
            pool.save(path, false)?;
            None
        }
        Some(_) => Some(format!("{} record(s) still need review", pending.len())),
        None => None,
    };
    ctx.emit(&json!({
        "pool": args.pool,
        "applied": applied,
        "rejected": rejected,
        "pending": pending,
        "published": args.publish.is_some() && publish_error.is_none(),
    }))?;
    match publish_error {
        Some(e) => Err(CliError::Domain(e)),
        None => Ok(()),
    }
}

fn retrieve(ctx: &Context, args: RetrieveArgs) -> Result<(), CliError> {
    let Direction { source, target } = args.direction;
    let api_x = match (&args.seq, &args.code) {
        (Some(s), _) => parse_sequence(s, source).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, Some(path)) => extract_from_program(&read_file(path)?, source)?,
        (None, None) => unreachable!("clap requires --seq or --code"),
    };
    let embedder = ctx.embedder(&args.embed)?;
    let kb = ctx.knowledge(&args.knowledge)?;
    let k = args.knowledge.k.or(ctx.config.k).unwrap_or(1);
    let n = args.knowledge.n.or(ctx.config.n).unwrap_or(5);
    if k == 0 || n == 0 {
        return Err(CliError::Usage("k and n must be at least 1".into()));
    }
    let sequences: Vec<serde_json::Value> = if api_x.is_empty() {
        Vec::new()
    } else {
        kb.index(target)?
            .query_sequence(&api_x, embedder.as_ref(), k)?
            .into_iter()
            .map(|(r, score)| json!({ "id": r.id, "sequence": serialize_sequence(&r.sequence), "score": score }))
            .collect()
    };
    let pool = kb.pool(source, target)?;
    let mappings: Vec<serde_json::Value> = retrieve_mappings(&api_x, &pool, embedder.as_ref(), n)?
        .into_iter()
        .map(|r| {
            json!({
                "id": r.id,
                "source_api": r.source_api,
                "target_apis": r.target_apis,
                "description": r.description,
                "caveats": r.caveats,
            })
        })
        .collect();
    ctx.emit(&json!({
        "api_x": serialize_sequence(&api_x),
        "sequences": sequences,
        "mappings": mappings,
    }))
}

fn load_task(path: &Path) -> Result<TranslationTask, CliError> {
    let task: TranslationTask = serde_json::from_str(&read_file(path)?)
        .map_err(|e| CliError::Usage(format!("invalid task {}: {e}", path.display())))?;
    task.validate()
        .map_err(|e| CliError::Usage(format!("invalid task {}: {e}", path.display())))?;
    Ok(task)
}

fn translate(ctx: &Context, args: TranslateArgs) -> Result<(), CliError> {
    let tasks = args.tasks.iter().map(|p| load_task(p)).collect::<Result<Vec<_>, _>>()?;
    let cfg = ctx.pipeline(&args.embed, &args.llm, &args.knowledge)?;
    let result = translate_batch(&tasks, &cfg, ctx.jobs)?;
    if let Some(dir) = &args.archive {
        write_archive(dir, &result)?;
    }
    if let [entry] = result.entries.as_slice() {
        match entry.outcome() {
            Some(outcome) => ctx.emit(outcome)?,
            None => ctx.emit(entry)?,
        }
    } else {
        ctx.emit(&result)?;
    }
    let passed = result.entries.iter().filter(|e| e.passed()).count();
    info!(passed, total = result.entries.len(), "translation finished");
    if args.strict && passed < result.entries.len() {
        return Err(CliError::Domain(format!(
            "{passed}/{} task(s) passed",
            result.entries.len()
        )));
    }
    Ok(())
}

fn eval_ca(ctx: &Context, args: EvalCaArgs) -> Result<(), CliError> {
    let directions = if args.directions.is_empty() {
        Direction::both()
    } else {
        args.directions.clone()
    };
    let cfg = ctx.pipeline(&args.embed, &args.llm, &args.knowledge)?;
    let bench = run_ca_benchmark(&args.dataset, &directions, &cfg, ctx.jobs, args.archive.as_deref())?;
    if args.table {
        print!("{}", bench.table.render());
        if ctx.out.is_some() {
            ctx.emit(&bench)?;
        }
        Ok(())
    } else {
        ctx.emit(&bench)
    }
}

fn eval_retrieval(ctx: &Context, args: EvalRetrievalArgs) -> Result<(), CliError> {
    let pairs = load_pairs(&args.pairs).map_err(|e| CliError::Usage(e.to_string()))?;
    let embedder = ctx.embedder(&args.embed)?;
    let index = args.against.as_deref().map(SequenceIndex::load).transpose()?;
    let report = precision_at_1(&pairs, index.as_ref(), embedder.as_ref())?;
    ctx.emit(&report)
}

fn sweep(ctx: &Context, args: SweepArgs) -> Result<(), CliError> {
    let cfg = ctx.pipeline(&args.embed, &args.llm, &args.knowledge)?;
    let result = parameter_sweep(&args.dataset, args.direction, args.axis, &args.values, &cfg, ctx.jobs)?;
    ctx.emit(&result)
}
