use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use apirag_core::embedding::{cosine, Embedder, MockEmbedder};
use apirag_core::eval::load_pairs;
use serde_json::Value;

fn demo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

fn apirag(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_apirag"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn apirag_stdin(args: &[&str], cwd: &Path, stdin: &str) -> Output {
    use std::io::Write;
    let mut child = Command::new(env!("CARGO_BIN_EXE_apirag"))
        .args(args)
        .current_dir(cwd)
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: {}\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SUBCOMMANDS: [&str; 9] = [
    "extract",
    "build-index",
    "build-mappings",
    "review-mappings",
    "retrieve",
    "translate",
    "eval-ca",
    "eval-retrieval",
    "sweep",
];

#[test]
fn help_exits_zero_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(apirag(&["--help"], dir.path()).status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let out = apirag(&[sub, "--help"], dir.path());
        assert_eq!(out.status.code(), Some(0), "{sub}");
        assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"), "{sub}");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["translate", "--bogus"],
        &["sweep", "--axis", "q"],
        &[],
    ] {
        let out = apirag(args, dir.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let missing = apirag(&["--config", "nope.toml", "eval-retrieval", "--pairs", "x"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.toml"), "k = 0\n").unwrap();
    let bad = apirag(&["--config", "bad.toml", "eval-retrieval", "--pairs", "x"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    std::fs::write(dir.path().join("gone.toml"), "[indexes]\npython = \"absent.jsonl\"\n").unwrap();
    let gone = apirag(&["--config", "gone.toml", "eval-retrieval", "--pairs", "x"], dir.path());
    assert_eq!(gone.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&gone.stderr).contains("absent.jsonl"));
}

#[test]
fn build_index_respects_sample_size_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = demo().join("corpus/manifest.json");
    let build = |name: &str| {
        let out = apirag(
            &[
                "build-index",
                "--manifest",
                path(&manifest),
                "--lang",
                "python",
                "--sample-size",
                "3",
                "--seed",
                "7",
                "--embedder",
                "mock",
                "--dim",
                "16",
                "--index",
                name,
            ],
            dir.path(),
        );
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read_to_string(dir.path().join(name)).unwrap()
    };
    let a = build("a.jsonl");
    let header: Value = serde_json::from_str(a.lines().next().unwrap()).unwrap();
    assert!(header["count"].as_u64().unwrap() <= 3);
    assert_eq!(header["seed"], 7);
    assert_eq!(a, build("b.jsonl"));

    let wrong = apirag(
        &[
            "build-index",
            "--manifest",
            path(&manifest),
            "--lang",
            "java",
            "--index",
            "c.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn extract_lists_function_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let out = apirag(
        &["extract", "--lang", "python", path(&demo().join("corpus/solutions.py"))],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let report = v
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["function"] == "report")
        .unwrap();
    assert_eq!(report["sequence"], "print/1 -> join/1 -> map/2 -> sorted/1");

    let program = apirag(
        &[
            "extract",
            "--lang",
            "java",
            "--program",
            path(&demo().join("dataset/clamp/source.java")),
        ],
        dir.path(),
    );
    assert_eq!(json(&program)[0]["sequence"], "Math.max/2 -> Math.min/2");
}

#[test]
fn translate_pass_first_emits_outcome() {
    let d = demo();
    let out = apirag(
        &["--config", "config.toml", "translate", "--task", "tasks/clamp.json"],
        &d,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["stage"], "initial_pass");
    assert!(v["knowledge"].is_null());
    assert_eq!(v["initial_report"]["pass_all"], true);
}

#[test]
fn translate_strict_fails_on_failed_task() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("replies.json");
    let bad = "```python\ndef clamp(x, lo, hi):\n    return x\n```";
    std::fs::write(&fixture, serde_json::to_string(&[bad, "bt", bad]).unwrap()).unwrap();
    let d = demo();
    let args = |strict: bool| {
        let mut a = vec![
            "--config",
            "config.toml",
            "translate",
            "--task",
            "tasks/clamp.json",
            "--fixtures",
            path(&fixture),
        ];
        if strict {
            a.push("--strict");
        }
        a.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let run = |strict: bool| {
        let a = args(strict);
        apirag(&a.iter().map(String::as_str).collect::<Vec<_>>(), &d)
    };
    let lenient = run(false);
    assert_eq!(lenient.status.code(), Some(0));
    assert_eq!(json(&lenient)["stage"], "failed");
    assert_eq!(run(true).status.code(), Some(1));
}

#[test]
fn batch_translation_and_ca_are_byte_identical_across_runs() {
    let d = demo();
    let run = |jobs: &str| {
        apirag(
            &[
                "--config",
                "config.toml",
                "--jobs",
                jobs,
                "eval-ca",
                "--dataset",
                "dataset",
                "--direction",
                "java-to-python",
            ],
            &d,
        )
    };
    let first = run("1");
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    let v = json(&first);
    assert_eq!(v["table"]["rows"][0]["ca"], 1.0);
    let strip = |mut v: Value| {
        // Wall-clock durations are the only nondeterministic fields.
        fn walk(v: &mut Value) {
            match v {
                Value::Object(m) => {
                    m.remove("duration_ms");
                    m.values_mut().for_each(walk);
                }
                Value::Array(a) => a.iter_mut().for_each(walk),
                _ => {}
            }
        }
        walk(&mut v);
        v
    };
    assert_eq!(strip(v), strip(json(&run("2"))));

    let table = apirag(
        &[
            "--config",
            "config.toml",
            "eval-ca",
            "--dataset",
            "dataset",
            "--direction",
            "java-to-python",
            "--table",
        ],
        &d,
    );
    assert!(String::from_utf8_lossy(&table.stdout).contains("100.0%"));
}

#[test]
fn eval_retrieval_matches_hand_computed_cosines() {
    let pairs_path = demo().join("pairs.jsonl");
    let dir = tempfile::tempdir().unwrap();
    let out = apirag(
        &[
            "eval-retrieval",
            "--pairs",
            path(&pairs_path),
            "--embedder",
            "mock",
            "--dim",
            "64",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let p = v["precision_at_1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));

    let embedder = MockEmbedder::new(64);
    let pairs = load_pairs(&pairs_path).unwrap();
    let golds: Vec<(String, Vec<f64>)> = pairs
        .iter()
        .map(|p| {
            let t = p.gold_target_sequence.canonical_text().to_string();
            let e = embedder.embed(&t).unwrap().values;
            (t, e)
        })
        .collect();
    let mut hits = 0;
    for pair in &pairs {
        let q = embedder.embed(pair.source_sequence.canonical_text()).unwrap().values;
        let mut best = (f64::NEG_INFINITY, "");
        for (text, e) in &golds {
            let s = cosine(&q, e).unwrap();
            if s > best.0 {
                best = (s, text);
            }
        }
        if best.1 == pair.gold_target_sequence.canonical_text() {
            hits += 1;
        }
    }
    assert_eq!(p, hits as f64 / pairs.len() as f64);
}

#[test]
fn mapping_curation_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = demo();
    std::fs::write(dir.path().join("apis.txt"), "Math.max\nMath.min\n").unwrap();
    let drafts = serde_json::to_string(&[
        r#"{"target_apis": ["max"], "description": "larger", "caveats": "none"}"#,
        "I am not sure.",
    ])
    .unwrap();
    std::fs::write(dir.path().join("drafts.json"), drafts).unwrap();
    let out = apirag(
        &[
            "build-mappings",
            "--apis",
            "apis.txt",
            "--source",
            "java",
            "--target",
            "python",
            "--pool",
            "pool.jsonl",
            "--llm",
            "scripted",
            "--fixtures",
            "drafts.json",
            "--dim",
            "64",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["drafted"], 2);
    assert_eq!(v["flagged"], serde_json::json!([1]));

    let index = format!("python={}", path(&d.join("python.index.jsonl")));
    let retrieve = |pool: &str, extra: &[&str]| {
        let pool = format!("java:python={pool}");
        let mut args = vec![
            "retrieve",
            "--direction",
            "java-to-python",
            "--seq",
            "Math.min/2",
            "--dim",
            "64",
        ];
        args.extend(["--pool", pool.as_str(), "--index", index.as_str()]);
        args.extend(extra);
        apirag(&args, dir.path())
    };
    assert_eq!(retrieve("pool.jsonl", &[]).status.code(), Some(2));
    assert_eq!(retrieve("pool.jsonl", &["--allow-draft"]).status.code(), Some(0));

    let review = [
        "review-mappings",
        "--pool",
        "pool.jsonl",
        "--publish",
        "published.jsonl",
    ];
    let partial = apirag_stdin(&review, dir.path(), "{\"id\": 0, \"verdict\": \"approve\"}\n");
    assert_eq!(partial.status.code(), Some(1));
    assert!(!dir.path().join("published.jsonl").exists());
    let rest = concat!(
        "{\"id\": 1, \"verdict\": {\"revise\": {\"target_apis\": [\"min\"], \"description\": \"smaller\", \"caveats\": \"none\"}}}\n",
        "{\"id\": 1, \"verdict\": \"approve\"}\n"
    );
    let done = apirag_stdin(&review, dir.path(), rest);
    assert_eq!(done.status.code(), Some(0), "{}", String::from_utf8_lossy(&done.stderr));
    assert!(dir.path().join("published.jsonl").exists());

    let retrieved = retrieve("published.jsonl", &[]);
    assert_eq!(
        retrieved.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&retrieved.stderr)
    );
    let v = json(&retrieved);
    assert_eq!(v["mappings"][0]["source_api"], "Math.min");
    assert_eq!(v["sequences"].as_array().unwrap().len(), 1);
}

#[test]
fn out_flag_writes_file_instead_of_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let out = apirag(
        &[
            "--out",
            "seqs.json",
            "extract",
            "--lang",
            "python",
            path(&demo().join("corpus/solutions.py")),
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("seqs.json")).unwrap()).unwrap();
    assert!(v.as_array().unwrap().len() >= 5);
}
