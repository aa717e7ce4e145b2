mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use devassist::artifact::file_sha256;
use devassist::cli::RunManifest;
use devassist::corpus::{Task, TaskInstance};
use devassist::instruct::render_instruction;
use devassist::mockmodel::{MockKind, MockMode, MockServer, ServerOptions};
use devassist::parse::PredictionRecord;

fn devassist(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devassist"))
        .args(args)
        .env_remove("DEVASSIST_API_KEY")
        .env("RUST_LOG", "error")
        .output()
        .expect("run devassist")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// The trailing `key=path` lines.
fn artifacts(o: &Output) -> Vec<(String, PathBuf)> {
    let text = stdout(o);
    let mut out: Vec<(String, PathBuf)> = text
        .lines()
        .rev()
        .map_while(|l| l.split_once('=').map(|(k, v)| (k.to_string(), PathBuf::from(v))))
        .collect();
    out.reverse();
    out
}

fn artifact(o: &Output, key: &str) -> PathBuf {
    artifacts(o)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no `{key}` in {}", stdout(o)))
        .1
}

fn line_count(p: &Path) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn mix_workspace(dir: &Path) -> PathBuf {
    let mut entries = Vec::new();
    let files: Vec<String> = common::MIX_DATASETS.iter().map(|(n, _)| format!("{n}.jsonl")).collect();
    for ((name, task), file) in common::MIX_DATASETS.iter().zip(&files) {
        common::write_corpus(dir, file, &common::mix_fixture(name, *task, 30));
        entries.push((*name, *task, file.as_str()));
    }
    common::write_config(dir, &entries, "[mix]\nper_dataset_cap = 5\n")
}

#[test]
fn build_dataset_writes_capped_mix_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = mix_workspace(dir.path());
    let out = devassist(&["build-dataset", "--config", s(&config)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("total records: 40"));
    assert!(text.contains("DistALANER"));
    let train = artifact(&out, "train");
    assert_eq!(train, dir.path().join("out/train.jsonl"));
    assert_eq!(line_count(&train), 40);
    let tc = fs::read_to_string(artifact(&out, "training_config")).unwrap();
    assert!(tc.contains("learning_rate=2e-4"));

    let keys: Vec<String> = artifacts(&out).into_iter().map(|(k, _)| k).collect();
    assert_eq!(keys.last().map(String::as_str), Some("manifest"));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(artifact(&out, "manifest")).unwrap()).unwrap();
    assert_eq!(manifest.command, "build-dataset");
    assert_eq!(manifest.seed, 11);
    assert_eq!(manifest.inputs.len(), 9);
    assert_eq!(manifest.outputs["train"], file_sha256(&train).unwrap());
    assert!(manifest.inputs.values().all(|d| d.len() == 64));

    let again = devassist(&["build-dataset", "--config", s(&config)]);
    let second: RunManifest =
        serde_json::from_str(&fs::read_to_string(artifact(&again, "manifest")).unwrap()).unwrap();
    assert_eq!(manifest.outputs, second.outputs);

    let reseeded = devassist(&["build-dataset", "--config", s(&config), "--seed", "12", "--out", s(&dir.path().join("o2"))]);
    let third: RunManifest =
        serde_json::from_str(&fs::read_to_string(artifact(&reseeded, "manifest")).unwrap()).unwrap();
    assert_ne!(manifest.outputs["train"], third.outputs["train"]);
}

#[test]
fn missing_corpus_exits_one_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::write_config(dir.path(), &[("BLANCA-L", Task::Lp, "absent.jsonl")], "");
    let out = devassist(&["build-dataset", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("absent.jsonl"), "{}", stderr(&out));
}

#[test]
fn bad_config_exits_one_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(&config, "seed = 1\n[mix]\nper_dataset_cap = \"lots\"\n").unwrap();
    let out = devassist(&["build-dataset", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

fn start_mock(rt: &tokio::runtime::Runtime, kind: MockKind, instances: &[TaskInstance]) -> MockServer {
    let records: Vec<_> = instances.iter().map(|i| render_instruction(i, "x").unwrap()).collect();
    let mode = MockMode::new(kind, 3).unwrap().with_records(&records, "mock-model", 0.0);
    rt.block_on(MockServer::start(mode, ServerOptions::default())).unwrap()
}

fn eval_workspace(dir: &Path, base_url: &str) -> PathBuf {
    common::write_corpus(dir, "ner.jsonl", &common::fixture(Task::Ner, "ner", 30));
    common::write_corpus(dir, "far.jsonl", &common::fixture(Task::Far, "far", 30));
    let endpoint = format!(
        "[endpoint]\nbase_url = \"{base_url}\"\nmodel = \"mock-model\"\nmax_retries = 1\nbackoff_base_ms = 1\n"
    );
    common::write_config(
        dir,
        &[("WikiSER", Task::Ner, "ner.jsonl"), ("BLANCA-R", Task::Far, "far.jsonl")],
        &endpoint,
    )
}

#[test]
fn evaluate_score_report_against_oracle() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut all = common::fixture(Task::Ner, "ner", 30);
    all.extend(common::fixture(Task::Far, "far", 30));
    let server = start_mock(&rt, MockKind::Oracle, &all);
    let dir = tempfile::tempdir().unwrap();
    let config = eval_workspace(dir.path(), &server.base_url());
    let cache = dir.path().join("cache");

    let eval = devassist(&[
        "evaluate", "--config", s(&config), "--dataset", "WikiSER", "--task", "ner",
        "--per-split", "10", "--cache-dir", s(&cache),
    ]);
    assert!(eval.status.success(), "{}", stderr(&eval));
    assert!(stdout(&eval).contains("unparseable rate: 0/30"), "{}", stdout(&eval));
    let preds: Vec<PathBuf> = (1..=3).map(|k| artifact(&eval, &format!("split{k}.predictions"))).collect();
    let gold: Vec<PathBuf> = (1..=3).map(|k| artifact(&eval, &format!("split{k}.gold"))).collect();
    for p in &preds {
        assert_eq!(line_count(p), 10);
        for line in fs::read_to_string(p).unwrap().lines() {
            let rec: PredictionRecord = serde_json::from_str(line).unwrap();
            assert!(!rec.prediction.is_unparseable());
        }
    }
    assert!(preds[0].starts_with(dir.path().join("out/WikiSER")));

    // Warm cache: same predictions, no network, even with the server gone.
    let digests: Vec<String> = preds.iter().map(|p| file_sha256(p).unwrap()).collect();
    drop(server);
    let rerun = devassist(&[
        "evaluate", "--config", s(&config), "--dataset", "WikiSER",
        "--per-split", "10", "--cache-dir", s(&cache),
    ]);
    assert!(rerun.status.success(), "{}", stderr(&rerun));
    assert!(stdout(&rerun).contains("network calls: 0"));
    let again: Vec<String> = preds.iter().map(|p| file_sha256(p).unwrap()).collect();
    assert_eq!(digests, again);

    let out_dir = dir.path().join("scores");
    let mut args = vec!["score"];
    args.extend(preds.iter().map(|p| s(p)));
    args.push("--gold");
    args.extend(gold.iter().map(|p| s(p)));
    args.extend(["--model", "Oracle", "--out", s(&out_dir)]);
    let score = devassist(&args);
    assert!(score.status.success(), "{}", stderr(&score));
    assert!(stdout(&score).contains("mean macro_f1 = 1.000"), "{}", stdout(&score));
    let md = fs::read_to_string(artifact(&score, "markdown")).unwrap();
    assert!(md.contains("| Oracle | — | — | — | 1.000 | — | — |"), "{md}");
    let score_json = artifact(&score, "score");
    assert!(artifact(&score, "csv").is_file());

    let report = devassist(&["report", s(&score_json), "--out", s(&out_dir)]);
    assert!(report.status.success(), "{}", stderr(&report));
    let text = fs::read_to_string(artifact(&report, "report")).unwrap();
    assert!(text.contains("DistALANER | StackOverflow | GitHub | WikiSER"));
    assert!(!text.contains("BLANCA-R"));
}

#[test]
fn score_rejects_misaligned_ids() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut all = common::fixture(Task::Ner, "ner", 30);
    all.extend(common::fixture(Task::Far, "far", 30));
    let server = start_mock(&rt, MockKind::Oracle, &all);
    let dir = tempfile::tempdir().unwrap();
    let config = eval_workspace(dir.path(), &server.base_url());
    let a = devassist(&["evaluate", "--config", s(&config), "--dataset", "WikiSER", "--splits", "1", "--per-split", "5"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = devassist(&["evaluate", "--config", s(&config), "--dataset", "BLANCA-R", "--splits", "1", "--per-split", "5"]);
    assert!(b.status.success(), "{}", stderr(&b));
    let out = devassist(&[
        "score",
        s(&artifact(&a, "split1.predictions")),
        "--gold",
        s(&artifact(&b, "split1.gold")),
        "--out",
        s(&dir.path().join("s")),
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    let err = stderr(&out);
    assert!(err.contains("IdMismatch") && err.contains("missing") && err.contains("extra"), "{err}");
}

#[test]
fn all_requests_failing_exits_two() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    // The mock knows no prompts, so every request gets a non-retryable 422.
    let server = start_mock(&rt, MockKind::Oracle, &[]);
    let dir = tempfile::tempdir().unwrap();
    let config = eval_workspace(dir.path(), &server.base_url());
    let out = devassist(&["evaluate", "--config", s(&config), "--dataset", "BLANCA-R", "--splits", "1", "--per-split", "4"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn unknown_dataset_and_task_mismatch_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = eval_workspace(dir.path(), "http://127.0.0.1:9/v1");
    let out = devassist(&["evaluate", "--config", s(&config), "--dataset", "Nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("WikiSER"));
    let out = devassist(&["evaluate", "--config", s(&config), "--dataset", "WikiSER", "--task", "far"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn report_needs_valid_score_files() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("x.json");
    fs::write(&bogus, "{\"hello\": 1}").unwrap();
    let out = devassist(&["report", s(&bogus), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("SchemaMismatch"));
    let out = devassist(&["report"]);
    assert_eq!(out.status.code(), Some(1));
}
