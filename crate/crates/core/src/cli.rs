//! Command-line front end.
//!
//! Exit codes: 0 success, 1 input or configuration error, 2 runtime or
//! endpoint error. Every command writes a `<command>.manifest.json` run
//! manifest into its output directory and prints the artifacts it wrote as
//! `key=path` lines at the end of stdout.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{file_sha256, write_bytes, write_json_lines};
use crate::corpus::{load_dataset, split_sample, DatasetManifest, Task, TaskInstance};
use crate::evalclient::{ClientError, CompletionRecord, EndpointConfig, EvalClient, ResponseCache};
use crate::instruct::{self, render_instruction, MixSpec};
use crate::metrics::{score_pairs, MetricReport};
use crate::mockmodel::{MockKind, MockMode, MockServer, ServerOptions};
use crate::negsample;
use crate::parse::{parse_for_instance, Prediction, PredictionRecord};
use crate::report::{self, ScoreFile};

pub const DEFAULT_SPLITS: usize = 3;
pub const DEFAULT_PER_SPLIT: usize = 1000;
const DEFAULT_OUT: &str = "out";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad config, unreadable or invalid input files, misaligned ids.
    #[error("{0:#}")]
    Input(anyhow::Error),
    /// Endpoint failures and other problems while running.
    #[error("{0:#}")]
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn input(e: impl Into<anyhow::Error>) -> Self {
        CliError::Input(e.into())
    }

    fn runtime(e: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::InvalidConfig(_) | ClientError::MixedTasks => CliError::input(e),
            other => CliError::runtime(other),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "devassist", version, about = "Build, evaluate and score software-domain instruction data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mix the configured datasets into a training JSONL
    BuildDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query an endpoint on random splits of one dataset
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Dataset name from the config
        #[arg(long)]
        dataset: String,
        /// Fail unless the dataset has this task
        #[arg(long)]
        task: Option<Task>,
        /// Base URL of a chat-completions endpoint, e.g. http://host:8000/v1
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        splits: Option<usize>,
        #[arg(long)]
        per_split: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score prediction files against gold files (paired in order)
    Score {
        #[arg(required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long, required = true, num_args = 1..)]
        gold: Vec<PathBuf>,
        #[arg(long, default_value = "model")]
        model: String,
        /// Defaults to the directory name of the first gold file
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge score files into the comparison tables
    Report {
        #[arg(required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a deterministic mock endpoint for the configured datasets
    MockServe {
        #[arg(long)]
        config: PathBuf,
        /// oracle, adversarial, noisy:<p> or malformed:<p>
        #[arg(long, default_value = "oracle")]
        kind: MockKind,
        /// Restrict gold answers to these datasets (default: all)
        #[arg(long)]
        dataset: Vec<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildDataset { .. } => "build-dataset",
            Command::Evaluate { .. } => "evaluate",
            Command::Score { .. } => "score",
            Command::Report { .. } => "report",
            Command::MockServe { .. } => "mock-serve",
        }
    }
}

// ---------------------------------------------------------------------------
// Config

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub mix: MixSection,
    #[serde(default)]
    pub negatives: NegativeSection,
    #[serde(default)]
    pub datasets: Vec<DatasetManifest>,
    pub endpoint: Option<EndpointSection>,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSection {
    #[serde(default = "default_cap")]
    pub per_dataset_cap: usize,
}

impl Default for MixSection {
    fn default() -> Self {
        MixSection {
            per_dataset_cap: instruct::DEFAULT_PER_DATASET_CAP,
        }
    }
}

fn default_cap() -> usize {
    instruct::DEFAULT_PER_DATASET_CAP
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegativeSection {
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_refusal")]
    pub refusal_text: String,
    /// One out-of-domain question per line; the bundled list when absent.
    pub questions_path: Option<PathBuf>,
}

impl Default for NegativeSection {
    fn default() -> Self {
        NegativeSection {
            ratio: negsample::DEFAULT_RATIO,
            refusal_text: negsample::DEFAULT_REFUSAL.to_string(),
            questions_path: None,
        }
    }
}

fn default_ratio() -> f64 {
    negsample::DEFAULT_RATIO
}

fn default_refusal() -> String {
    negsample::DEFAULT_REFUSAL.to_string()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointSection {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub timeout_secs: Option<u64>,
    pub max_parallel: Option<usize>,
    pub max_retries: Option<u32>,
    pub backoff_base_ms: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub splits: Option<usize>,
    pub per_split: Option<usize>,
    pub cache_dir: Option<PathBuf>,
}

impl Config {
    /// Reads a TOML config. Relative paths inside it are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> CliResult<Config> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(CliError::input)?;
        let mut cfg: Config = toml::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))
            .map_err(CliError::input)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut cfg.datasets {
            resolve(&mut d.path);
        }
        if let Some(p) = cfg.out_dir.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.negatives.questions_path.as_mut() {
            resolve(p);
        }
        if let Some(p) = cfg.eval.cache_dir.as_mut() {
            resolve(p);
        }
        let mut seen = HashSet::new();
        for d in &cfg.datasets {
            if !seen.insert(d.name.to_lowercase()) {
                return Err(CliError::input(anyhow!(
                    "{}: dataset `{}` listed twice",
                    path.display(),
                    d.name
                )));
            }
        }
        Ok(cfg)
    }

    fn dataset(&self, name: &str) -> CliResult<&DatasetManifest> {
        self.datasets
            .iter()
            .find(|d| d.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let known: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
                CliError::input(anyhow!(
                    "dataset `{name}` not in config (known: {})",
                    known.join(", ")
                ))
            })
    }

    fn out_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn endpoint(&self, url: Option<String>, model: Option<String>) -> CliResult<EndpointConfig> {
        let sec = self.endpoint.clone().unwrap_or_default();
        let url = url.or(sec.base_url).ok_or_else(|| {
            CliError::input(anyhow!("no endpoint: set [endpoint] base_url or pass --endpoint"))
        })?;
        let model = model.or(sec.model).ok_or_else(|| {
            CliError::input(anyhow!("no model: set [endpoint] model or pass --model"))
        })?;
        let mut cfg = EndpointConfig::new(url, model);
        if let Some(t) = sec.temperature {
            cfg.temperature = t;
        }
        if let Some(m) = sec.max_tokens {
            cfg.max_tokens = m;
        }
        if let Some(s) = sec.timeout_secs {
            cfg.timeout = Duration::from_secs(s);
        }
        if let Some(p) = sec.max_parallel {
            cfg.max_parallel = p;
        }
        if let Some(r) = sec.max_retries {
            cfg.max_retries = r;
        }
        if let Some(b) = sec.backoff_base_ms {
            cfg.backoff_base = Duration::from_millis(b);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub seed: u64,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    /// sha256 of every input file, keyed by path.
    pub inputs: BTreeMap<String, String>,
    /// sha256 of every output file, keyed by artifact name.
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

struct Run {
    manifest: RunManifest,
    artifacts: Vec<(String, PathBuf)>,
}

impl Run {
    fn new(command: &str, config: Option<&Path>, seed: u64) -> Run {
        Run {
            manifest: RunManifest {
                command: command.to_string(),
                config_path: config.map(|p| p.display().to_string()).unwrap_or_default(),
                seed,
                started_unix_ms: unix_ms(),
                finished_unix_ms: 0,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            artifacts: Vec::new(),
        }
    }

    fn input(&mut self, path: &Path) -> CliResult<()> {
        let digest = file_sha256(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(CliError::input)?;
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    fn output(&mut self, key: impl Into<String>, path: &Path, sha256: String) {
        let key = key.into();
        self.manifest.outputs.insert(key.clone(), sha256);
        self.artifacts.push((key, path.to_path_buf()));
    }

    /// Writes the manifest and returns every artifact, the manifest last.
    fn finish(mut self, dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
        self.manifest.finished_unix_ms = unix_ms();
        let path = dir.join(format!("{}.manifest.json", self.manifest.command));
        let body = serde_json::to_vec_pretty(&self.manifest).map_err(CliError::runtime)?;
        write_bytes(&path, &body, 1)
            .with_context(|| format!("cannot write {}", path.display()))
            .map_err(CliError::runtime)?;
        self.artifacts.push(("manifest".into(), path));
        Ok(self.artifacts)
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<String> {
    write_bytes(path, text.as_bytes(), text.lines().count())
        .map(|s| s.sha256)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::runtime)
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> CliResult<String> {
    write_json_lines(path, items)
        .map(|s| s.sha256)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(CliError::runtime)
}

// ---------------------------------------------------------------------------
// Entry points

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(artifacts) => {
            for (key, path) in artifacts {
                println!("{key}={}", path.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<Vec<(String, PathBuf)>> {
    let name = command.name();
    log::debug!("running {name}");
    match command {
        Command::BuildDataset { config, seed, out } => build_dataset(&config, seed, out),
        Command::Evaluate {
            config,
            dataset,
            task,
            endpoint,
            model,
            splits,
            per_split,
            seed,
            cache_dir,
            out,
        } => {
            let opts = EvaluateOptions {
                dataset,
                task,
                endpoint,
                model,
                splits,
                per_split,
                seed,
                cache_dir,
                out,
            };
            evaluate(&config, opts)
        }
        Command::Score {
            predictions,
            gold,
            model,
            dataset,
            config,
            out,
        } => score(&predictions, &gold, &model, dataset, config.as_deref(), out),
        Command::Report { scores, config, out } => report_cmd(&scores, config.as_deref(), out),
        Command::MockServe {
            config,
            kind,
            dataset,
            model,
            seed,
            port,
            delay_ms,
            out,
        } => mock_serve(&config, kind, &dataset, model, seed, port, delay_ms, out),
    }
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CliError::runtime)
}

// ---------------------------------------------------------------------------
// build-dataset

fn build_dataset(
    config_path: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> CliResult<Vec<(String, PathBuf)>> {
    let cfg = Config::load(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let out = cfg.out_dir(out);
    let mut run = Run::new("build-dataset", Some(config_path), seed);
    run.input(config_path)?;
    if cfg.datasets.is_empty() {
        return Err(CliError::input(anyhow!(
            "{}: no [[datasets]] entries",
            config_path.display()
        )));
    }
    for d in &cfg.datasets {
        run.input(&d.path)?;
    }

    let mut spec = MixSpec::new(seed, cfg.datasets.clone());
    spec.per_dataset_cap = cfg.mix.per_dataset_cap;
    spec.negative_ratio = cfg.negatives.ratio;
    spec.refusal_text = cfg.negatives.refusal_text.clone();
    if let Some(q) = &cfg.negatives.questions_path {
        run.input(q)?;
        spec.ood_questions = negsample::load_questions(q)
            .with_context(|| format!("cannot read {}", q.display()))
            .map_err(CliError::input)?;
    }
    let outcome = instruct::mix(&spec).map_err(CliError::input)?;

    println!(
        "{:<20} {:<4} {:>8} {:>9} {:>7} {:>11}",
        "dataset", "task", "loaded", "negatives", "skipped", "contributed"
    );
    for c in &outcome.contributions {
        println!(
            "{:<20} {:<4} {:>8} {:>9} {:>7} {:>11}",
            c.name, c.task, c.loaded, c.negatives, c.skipped_negatives, c.contributed
        );
        for w in &c.warnings {
            println!("  warning: {w}");
        }
    }
    println!("total records: {}", outcome.records.len());

    let train = out.join("train.jsonl");
    let sha = write_lines(&train, &outcome.records)?;
    run.output("train", &train, sha);
    let tc = out.join("training_config.txt");
    let sha = write_text(&tc, &instruct::training_config_text())?;
    run.output("training_config", &tc, sha);
    let contrib = out.join("contributions.json");
    let body = serde_json::to_string_pretty(&outcome.contributions).map_err(CliError::runtime)?;
    let sha = write_text(&contrib, &body)?;
    run.output("contributions", &contrib, sha);
    run.finish(&out)
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateOptions {
    dataset: String,
    task: Option<Task>,
    endpoint: Option<String>,
    model: Option<String>,
    splits: Option<usize>,
    per_split: Option<usize>,
    seed: Option<u64>,
    cache_dir: Option<PathBuf>,
    out: Option<PathBuf>,
}

fn evaluate(config_path: &Path, opts: EvaluateOptions) -> CliResult<Vec<(String, PathBuf)>> {
    let cfg = Config::load(config_path)?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let manifest = cfg.dataset(&opts.dataset)?.clone();
    if let Some(t) = opts.task {
        if t != manifest.task {
            return Err(CliError::input(anyhow!(
                "dataset `{}` is a {} dataset, not {t}",
                manifest.name,
                manifest.task
            )));
        }
    }
    let endpoint = cfg.endpoint(opts.endpoint, opts.model)?;
    let n_splits = opts.splits.or(cfg.eval.splits).unwrap_or(DEFAULT_SPLITS);
    let per_split = opts.per_split.or(cfg.eval.per_split).unwrap_or(DEFAULT_PER_SPLIT);
    let out = cfg.out_dir(opts.out).join(&manifest.name);
    let cache_dir = opts.cache_dir.or(cfg.eval.cache_dir.clone());

    let mut run = Run::new("evaluate", Some(config_path), seed);
    run.input(config_path)?;
    run.input(&manifest.path)?;

    let loaded = load_dataset(&manifest)
        .with_context(|| format!("dataset `{}`", manifest.name))
        .map_err(CliError::input)?;
    for w in &loaded.warnings {
        log::warn!("{}: {w}", manifest.name);
    }
    let splits = split_sample(&loaded.instances, per_split, n_splits, seed)
        .with_context(|| format!("dataset `{}`", manifest.name))
        .map_err(CliError::input)?;

    let cache = cache_dir.map(ResponseCache::open).transpose()?;
    let client = EvalClient::new(endpoint, cache)?;
    let rt = runtime()?;

    let mut total = 0usize;
    let mut total_unparseable = 0usize;
    for (k, split) in splits.iter().enumerate() {
        let k = k + 1;
        let eval = rt.block_on(client.run_eval(split))?;
        let mut predictions = Vec::with_capacity(eval.results.len());
        let mut completions: Vec<CompletionRecord> = Vec::with_capacity(eval.results.len());
        for (inst, completion) in &eval.results {
            predictions.push(PredictionRecord {
                id: inst.id().to_string(),
                task: inst.task(),
                prediction: parse_for_instance(inst, &completion.raw),
                raw: completion.raw.clone(),
            });
            completions.push(completion.clone());
        }
        let unparseable = predictions.iter().filter(|p| p.prediction.is_unparseable()).count();
        total += predictions.len();
        total_unparseable += unparseable;
        println!(
            "split {k}: {} instances, {} failed requests, {} cached, unparseable {}/{} ({:.1}%)",
            predictions.len(),
            eval.failed,
            eval.cached,
            unparseable,
            predictions.len(),
            percent(unparseable, predictions.len())
        );

        let stem = format!("split{k}");
        let p = out.join(format!("{stem}.predictions.jsonl"));
        let sha = write_lines(&p, &predictions)?;
        run.output(format!("{stem}.predictions"), &p, sha);
        let c = out.join(format!("{stem}.completions.jsonl"));
        let sha = write_lines(&c, &completions)?;
        run.output(format!("{stem}.completions"), &c, sha);
        let g = out.join(format!("{stem}.gold.jsonl"));
        let gold: String = split.iter().map(|i| i.to_json() + "\n").collect();
        let sha = write_text(&g, &gold)?;
        run.output(format!("{stem}.gold"), &g, sha);
    }
    println!(
        "unparseable rate: {total_unparseable}/{total} ({:.1}%)",
        percent(total_unparseable, total)
    );
    println!("network calls: {}", client.network_calls());
    run.finish(&out)
}

fn percent(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

// ---------------------------------------------------------------------------
// score

fn read_predictions(path: &Path) -> CliResult<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::input)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(line)
            .with_context(|| format!("{} line {}", path.display(), i + 1))
            .map_err(CliError::input)?;
        out.push(rec);
    }
    Ok(out)
}

fn read_gold(path: &Path, predictions: &[PredictionRecord]) -> CliResult<Vec<TaskInstance>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::input)?;
    let ids = gold_ids(path, &text)?;
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    check_ids(&ids, predictions).map_err(CliError::input)?;
    let task = predictions.first().map_or(Task::Ner, |p| p.task);
    crate::corpus::parse_jsonl(task, &text)
        .with_context(|| format!("{}", path.display()))
        .map_err(CliError::input)
}

fn preview(ids: &[&str]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(&format!(", … ({} total)", ids.len()));
    }
    s
}

/// Fails with an IdMismatch listing missing and extra ids unless both sides
/// hold exactly the same ids, each prediction id once.
pub fn check_ids(gold_ids: &[&str], predictions: &[PredictionRecord]) -> anyhow::Result<()> {
    let mut pred_ids = HashSet::new();
    for p in predictions {
        if !pred_ids.insert(p.id.as_str()) {
            bail!("duplicate prediction id `{}`", p.id);
        }
    }
    let gold_set: HashSet<&str> = gold_ids.iter().copied().collect();
    let missing: Vec<&str> = gold_ids
        .iter()
        .copied()
        .filter(|id| !pred_ids.contains(id))
        .collect();
    let extra: Vec<&str> = predictions
        .iter()
        .map(|p| p.id.as_str())
        .filter(|id| !gold_set.contains(id))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        bail!(
            "IdMismatch: {} missing [{}]; {} extra [{}]",
            missing.len(),
            preview(&missing),
            extra.len(),
            preview(&extra)
        );
    }
    Ok(())
}

/// Pairs gold instances with predictions by id.
pub fn align(
    gold: &[TaskInstance],
    predictions: &[PredictionRecord],
) -> anyhow::Result<Vec<(TaskInstance, Prediction)>> {
    let ids: Vec<&str> = gold.iter().map(|g| g.id()).collect();
    check_ids(&ids, predictions)?;
    let by_id: HashMap<&str, &PredictionRecord> =
        predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    gold.iter()
        .map(|g| {
            let p = by_id[g.id()];
            if p.task != g.task() {
                bail!("prediction `{}` is for task {}, gold is {}", p.id, p.task, g.task());
            }
            Ok((g.clone(), p.prediction.clone()))
        })
        .collect()
}

#[derive(Deserialize)]
struct IdOnly {
    id: String,
}

/// Ids of a gold file, read without knowing its task.
fn gold_ids(path: &Path, text: &str) -> CliResult<Vec<String>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str::<IdOnly>(l)
                .map(|r| r.id)
                .with_context(|| format!("{} line {}", path.display(), i + 1))
                .map_err(CliError::input)
        })
        .collect()
}

fn file_stem_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn optional_config(path: Option<&Path>) -> CliResult<Config> {
    path.map(Config::load).transpose().map(Option::unwrap_or_default)
}

fn score(
    predictions: &[PathBuf],
    gold: &[PathBuf],
    model: &str,
    dataset: Option<String>,
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> CliResult<Vec<(String, PathBuf)>> {
    let cfg = optional_config(config)?;
    let out = cfg.out_dir(out);
    let mut run = Run::new("score", config, cfg.seed);
    if predictions.len() != gold.len() {
        return Err(CliError::input(anyhow!(
            "{} prediction files but {} gold files",
            predictions.len(),
            gold.len()
        )));
    }
    let dataset = match dataset {
        Some(d) => d,
        None => gold[0]
            .parent()
            .and_then(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .filter(|n| !n.is_empty())
            .ok_or_else(|| CliError::input(anyhow!("cannot infer dataset name; pass --dataset")))?,
    };

    let mut splits: Vec<MetricReport> = Vec::new();
    for (p_path, g_path) in predictions.iter().zip(gold) {
        run.input(p_path)?;
        run.input(g_path)?;
        let preds = read_predictions(p_path)?;
        if preds.is_empty() {
            return Err(CliError::input(anyhow!("{}: no predictions", p_path.display())));
        }
        let gold = read_gold(g_path, &preds)
            .map_err(|e| CliError::input(anyhow!("{} vs {}: {e}", p_path.display(), g_path.display())))?;
        let pairs = align(&gold, &preds)
            .with_context(|| format!("{} vs {}", p_path.display(), g_path.display()))
            .map_err(CliError::input)?;
        let report = score_pairs(&pairs)
            .with_context(|| format!("{}", p_path.display()))
            .map_err(CliError::input)?;
        splits.push(report.with_dataset(dataset.clone()));
    }
    let score = ScoreFile::from_splits(model, dataset.clone(), splits).map_err(CliError::input)?;
    let table = report::render_markdown(std::slice::from_ref(&score)).map_err(CliError::input)?;
    let split_table = report::render_split_markdown(&score);
    println!("{split_table}");
    println!("mean {} = {:.3}", score.score_name, score.mean);

    let stem = format!("{}.{}", file_stem_safe(model), file_stem_safe(&dataset));
    let json_path = out.join(format!("{stem}.score.json"));
    let body = serde_json::to_string_pretty(&score).map_err(CliError::runtime)?;
    let sha = write_text(&json_path, &body)?;
    run.output("score", &json_path, sha);
    let md_path = out.join(format!("{stem}.score.md"));
    let sha = write_text(&md_path, &format!("{split_table}\n{table}"))?;
    run.output("markdown", &md_path, sha);
    let csv_path = out.join(format!("{stem}.score.csv"));
    let csv = report::render_csv(std::slice::from_ref(&score)).map_err(CliError::input)?;
    let sha = write_text(&csv_path, &csv)?;
    run.output("csv", &csv_path, sha);
    run.finish(&out)
}

// ---------------------------------------------------------------------------
// report

fn report_cmd(
    scores: &[PathBuf],
    config: Option<&Path>,
    out: Option<PathBuf>,
) -> CliResult<Vec<(String, PathBuf)>> {
    let cfg = optional_config(config)?;
    let out = cfg.out_dir(out);
    let mut run = Run::new("report", config, cfg.seed);
    let mut files = Vec::with_capacity(scores.len());
    for path in scores {
        run.input(path)?;
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))
            .map_err(CliError::input)?;
        let score: ScoreFile = serde_json::from_str(&text)
            .with_context(|| format!("SchemaMismatch: {} is not a score file", path.display()))
            .map_err(CliError::input)?;
        files.push(score);
    }
    let md = report::render_markdown(&files).map_err(CliError::input)?;
    let csv = report::render_csv(&files).map_err(CliError::input)?;
    print!("{md}");
    let md_path = out.join("report.md");
    let sha = write_text(&md_path, &md)?;
    run.output("report", &md_path, sha);
    let csv_path = out.join("report.csv");
    let sha = write_text(&csv_path, &csv)?;
    run.output("csv", &csv_path, sha);
    run.finish(&out)
}

// ---------------------------------------------------------------------------
// mock-serve

#[allow(clippy::too_many_arguments)]
fn mock_serve(
    config_path: &Path,
    kind: MockKind,
    datasets: &[String],
    model: Option<String>,
    seed: Option<u64>,
    port: u16,
    delay_ms: u64,
    out: Option<PathBuf>,
) -> CliResult<Vec<(String, PathBuf)>> {
    let cfg = Config::load(config_path)?;
    let seed = seed.unwrap_or(cfg.seed);
    let out = cfg.out_dir(out);
    let endpoint = cfg.endpoint(Some("http://127.0.0.1".into()), model)?;
    let mut run = Run::new("mock-serve", Some(config_path), seed);
    run.input(config_path)?;

    let chosen: Vec<&DatasetManifest> = if datasets.is_empty() {
        cfg.datasets.iter().collect()
    } else {
        datasets.iter().map(|d| cfg.dataset(d)).collect::<CliResult<_>>()?
    };
    let mut records = Vec::new();
    for m in chosen {
        run.input(&m.path)?;
        let loaded = load_dataset(m)
            .with_context(|| format!("dataset `{}`", m.name))
            .map_err(CliError::input)?;
        for inst in &loaded.instances {
            records.push(render_instruction(inst, &m.name).map_err(CliError::input)?);
        }
    }
    let mode = MockMode::new(kind, seed)
        .map_err(CliError::input)?
        .with_records_for(&records, &endpoint);
    let artifacts = run.finish(&out)?;

    let rt = runtime()?;
    rt.block_on(async {
        let addr = format!("127.0.0.1:{port}").parse().map_err(CliError::input)?;
        let options = ServerOptions {
            delay: Duration::from_millis(delay_ms),
            required_api_key: None,
        };
        let server = MockServer::bind(addr, mode, options)
            .await
            .map_err(CliError::runtime)?;
        println!("serving {} gold answers for model `{}`", records.len(), endpoint.model_name);
        for (key, path) in &artifacts {
            println!("{key}={}", path.display());
        }
        println!("base_url={}", server.base_url());
        std::future::pending::<()>().await;
        Ok::<_, CliError>(())
    })?;
    Ok(Vec::new())
}
