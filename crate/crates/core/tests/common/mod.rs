//! Fixture corpora and an independent brute-force metric oracle shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use devassist::corpus::{
    write_jsonl, FarInstance, LpInstance, NerInstance, QaDomain, QaInstance, ReInstance,
    SourceDataset, Task, TaskInstance, RELATION_LABELS,
};
use devassist::parse::Prediction;

// ---------------------------------------------------------------------------
// Fixture corpora

const NER_WORDS: [&str; 8] = ["zlib", "nginx", "kestrel", "ubuntu", "gradle", "redis", "ext4", "qemu"];

/// NER fixture: every instance names two entities of one type, cycling through
/// the source's label set.
pub fn ner(prefix: &str, n: usize, source: SourceDataset) -> Vec<TaskInstance> {
    let types = source.label_set();
    (0..n)
        .map(|i| {
            let a = format!("{}{i}", NER_WORDS[i % NER_WORDS.len()]);
            let b = format!("{}{i}x", NER_WORDS[(i + 3) % NER_WORDS.len()]);
            TaskInstance::Ner(NerInstance {
                id: format!("{prefix}-{i}"),
                text: format!("While testing build {i} we saw {a} fail next to {b} during startup."),
                entity_type: types[i % types.len()].to_string(),
                gold_entities: vec![a, b],
                source_dataset: source,
                is_negative: false,
            })
        })
        .collect()
}

pub fn re(prefix: &str, n: usize) -> Vec<TaskInstance> {
    (0..n)
        .map(|i| {
            TaskInstance::Re(ReInstance {
                id: format!("{prefix}-{i}"),
                text: format!("Component c{i} calls module m{i} when the cache is cold."),
                head_entity: format!("c{i}"),
                tail_entity: format!("m{i}"),
                gold_relation: RELATION_LABELS[i % RELATION_LABELS.len()].to_string(),
            })
        })
        .collect()
}

pub fn lp(prefix: &str, n: usize) -> Vec<TaskInstance> {
    (0..n)
        .map(|i| {
            TaskInstance::Lp(LpInstance {
                id: format!("{prefix}-{i}"),
                question_a: format!("How do I configure proxy settings for tool {i}?"),
                question_b: if i % 2 == 0 {
                    format!("Where does tool {i} read its proxy configuration from?")
                } else {
                    format!("Why is my laptop battery draining fast, case {i}?")
                },
                label: i % 2 == 0,
            })
        })
        .collect()
}

/// FAR fixture with 3, 4 or 5 answers per question.
pub fn far(prefix: &str, n: usize) -> Vec<TaskInstance> {
    (0..n)
        .map(|i| {
            let n_answers = 3 + i % 3;
            TaskInstance::Far(FarInstance {
                id: format!("{prefix}-{i}"),
                question: format!("How can I speed up the test suite of project {i}?"),
                answers: (0..n_answers)
                    .map(|j| format!("Answer {j}: cache the build outputs of step {j} for project {i}."))
                    .collect(),
                best_index: (i * 7) % n_answers,
            })
        })
        .collect()
}

pub fn qa(prefix: &str, n: usize) -> Vec<TaskInstance> {
    let domains = [QaDomain::ServerFault, QaDomain::AskUbuntu, QaDomain::Android];
    (0..n)
        .map(|i| {
            TaskInstance::Qa(QaInstance {
                id: format!("{prefix}-{i}"),
                question: format!("How do I rotate the logs of service number {i}?"),
                reference_answer: format!(
                    "Configure logrotate with a daily rule for service {i} and compress old archives."
                ),
                domain: domains[i % domains.len()],
                in_domain: true,
            })
        })
        .collect()
}

/// Fixture of `n` instances for `task`.
pub fn fixture(task: Task, prefix: &str, n: usize) -> Vec<TaskInstance> {
    match task {
        Task::Ner => ner(prefix, n, SourceDataset::WikiSer),
        Task::Re => re(prefix, n),
        Task::Lp => lp(prefix, n),
        Task::Far => far(prefix, n),
        Task::Qa => qa(prefix, n),
    }
}

pub fn write_corpus(dir: &Path, file: &str, instances: &[TaskInstance]) -> PathBuf {
    let path = dir.join(file);
    write_jsonl(instances, &path).expect("write fixture corpus");
    path
}

/// The eight source datasets of the instruction mix.
pub const MIX_DATASETS: [(&str, Task); 8] = [
    ("DistALANER", Task::Ner),
    ("StackOverflow", Task::Ner),
    ("GitHub", Task::Ner),
    ("WikiSER", Task::Ner),
    ("DistALARE", Task::Re),
    ("BLANCA-L", Task::Lp),
    ("BLANCA-R", Task::Far),
    ("askUbuntu", Task::Qa),
];

pub fn mix_fixture(name: &str, task: Task, n: usize) -> Vec<TaskInstance> {
    match task {
        Task::Ner => ner(name, n, name.parse().expect("NER source name")),
        other => fixture(other, name, n),
    }
}

/// Writes a TOML config listing `datasets` (name, task, file relative to `dir`).
pub fn write_config(dir: &Path, datasets: &[(&str, Task, &str)], extra: &str) -> PathBuf {
    let mut s = String::from("seed = 11\nout_dir = \"out\"\n");
    s.push_str(extra);
    s.push('\n');
    for (name, task, file) in datasets {
        s.push_str(&format!(
            "\n[[datasets]]\nname = \"{name}\"\ntask = \"{task}\"\npath = \"{file}\"\n"
        ));
    }
    let path = dir.join("devassist.toml");
    fs::write(&path, s).expect("write config");
    path
}

// ---------------------------------------------------------------------------
// Brute-force metric oracle
//
// Written from the metric definitions, sharing no code with the library:
// explicit confusion matrices and exhaustive counting.

fn f1_from(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp + fp + fn_ == 0 {
        return 1.0;
    }
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn norm(e: &str) -> String {
    e.trim().to_lowercase()
}

/// Macro-F1 over entity types present in the gold instances.
pub fn oracle_ner(pairs: &[(NerInstance, Prediction)]) -> f64 {
    let mut per_type: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for (inst, pred) in pairs {
        let mut gold: Vec<String> = inst.gold_entities.iter().map(|e| norm(e)).collect();
        gold.sort();
        gold.dedup();
        let mut predicted: Vec<String> = match pred {
            Prediction::EntityList(items) => items.iter().map(|e| norm(e)).collect(),
            _ => vec![],
        };
        predicted.sort();
        predicted.dedup();
        let mut candidates: Vec<&String> = gold.iter().chain(predicted.iter()).collect();
        candidates.sort();
        candidates.dedup();
        let c = per_type.entry(inst.entity_type.as_str()).or_insert([0; 3]);
        for cand in candidates {
            match (gold.contains(cand), predicted.contains(cand)) {
                (true, true) => c[0] += 1,
                (false, true) => c[1] += 1,
                (true, false) => c[2] += 1,
                (false, false) => unreachable!(),
            }
        }
    }
    let f1s: Vec<f64> = per_type.values().map(|c| f1_from(c[0], c[1], c[2])).collect();
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

/// One-vs-rest macro-F1 via a confusion matrix with an extra "unparseable"
/// column; mean over classes with at least one gold instance.
pub fn oracle_classification(gold: &[usize], pred: &[Option<usize>], n_labels: usize) -> f64 {
    let mut m = vec![vec![0usize; n_labels + 1]; n_labels];
    for (g, p) in gold.iter().zip(pred) {
        m[*g][p.unwrap_or(n_labels)] += 1;
    }
    let mut f1s = Vec::new();
    for c in 0..n_labels {
        let support: usize = m[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = m[c][c];
        let fp: usize = (0..n_labels).filter(|&g| g != c).map(|g| m[g][c]).sum();
        let fn_ = support - tp;
        f1s.push(f1_from(tp, fp, fn_));
    }
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

/// Reciprocal rank by sorting options on their assigned rank; a missing or
/// wrong-length ranking puts the gold-best last.
pub fn oracle_mrr(pairs: &[(FarInstance, Prediction)]) -> f64 {
    let total: f64 = pairs
        .iter()
        .map(|(inst, pred)| {
            let n = inst.answers.len();
            let position = match pred {
                Prediction::Ranking(ranks) if ranks.len() == n => {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by_key(|&i| ranks[i]);
                    order.iter().position(|&i| i == inst.best_index).unwrap() + 1
                }
                _ => n,
            };
            1.0 / position as f64
        })
        .sum();
    total / pairs.len() as f64
}

// ---------------------------------------------------------------------------
// Randomized oracle comparison

use devassist::corpus::labels::RELEVANCE_LABELS;
use devassist::metrics::{classification_macro_f1, mrr, ner_macro_f1};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TYPES: [&str; 3] = ["library", "language", "device"];
const ENTITIES: [&str; 4] = ["x", "y", "Z", "z"];

fn random_ner_trial(rng: &mut ChaCha8Rng) -> Vec<(NerInstance, Prediction)> {
    let n = rng.random_range(1..=4);
    let n_types = rng.random_range(1..=3);
    (0..n)
        .map(|i| {
            let k = rng.random_range(0..=3);
            let gold: Vec<String> = ENTITIES
                .choose_multiple(rng, k)
                .map(|s| s.to_string())
                .collect();
            let inst = NerInstance {
                id: format!("t{i}"),
                text: "x y z".into(),
                entity_type: TYPES[rng.random_range(0..n_types)].into(),
                gold_entities: gold,
                source_dataset: SourceDataset::WikiSer,
                is_negative: false,
            };
            let pred = if rng.random_bool(0.15) {
                Prediction::Unparseable {
                    raw: String::new(),
                    reason: "trial".into(),
                }
            } else {
                let k = rng.random_range(0..=3);
                Prediction::EntityList(
                    (0..k)
                        .map(|_| ENTITIES[rng.random_range(0..ENTITIES.len())].to_string())
                        .collect(),
                )
            };
            (inst, pred)
        })
        .collect()
}

fn random_classification_trial(
    rng: &mut ChaCha8Rng,
    labels: &[&str],
) -> (Vec<usize>, Vec<Option<usize>>) {
    let n = rng.random_range(1..=4);
    let used = rng.random_range(1..=labels.len().min(3));
    let gold: Vec<usize> = (0..n).map(|_| rng.random_range(0..used)).collect();
    let pred: Vec<Option<usize>> = (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                None
            } else {
                Some(rng.random_range(0..used))
            }
        })
        .collect();
    (gold, pred)
}

fn random_far_trial(rng: &mut ChaCha8Rng) -> Vec<(FarInstance, Prediction)> {
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|i| {
            let n_answers = rng.random_range(3..=4);
            let inst = FarInstance {
                id: format!("f{i}"),
                question: "q".into(),
                answers: (0..n_answers).map(|j| format!("a{j}")).collect(),
                best_index: rng.random_range(0..n_answers),
            };
            let pred = if rng.random_bool(0.15) {
                Prediction::Unparseable {
                    raw: String::new(),
                    reason: "trial".into(),
                }
            } else {
                let mut ranks: Vec<u32> = (1..=n_answers as u32).collect();
                ranks.shuffle(rng);
                Prediction::Ranking(ranks)
            };
            (inst, pred)
        })
        .collect()
}

/// Runs `trials` random instances per metric and returns the largest
/// absolute difference between library and oracle scores.
pub fn metric_oracle_max_diff(trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let pairs = random_ner_trial(&mut rng);
        let lib = ner_macro_f1(&pairs).unwrap().score;
        worst = worst.max((lib - oracle_ner(&pairs)).abs());

        for (task, labels) in [(Task::Re, &RELATION_LABELS[..]), (Task::Lp, &RELEVANCE_LABELS[..])] {
            let (gold, pred) = random_classification_trial(&mut rng, labels);
            let named: Vec<(String, Option<String>)> = gold
                .iter()
                .zip(&pred)
                .map(|(g, p)| (labels[*g].to_string(), p.map(|p| labels[p].to_string())))
                .collect();
            let lib = classification_macro_f1(task, &named, labels).unwrap().score;
            worst = worst.max((lib - oracle_classification(&gold, &pred, labels.len())).abs());
        }

        let pairs = random_far_trial(&mut rng);
        let lib = mrr(&pairs).unwrap().score;
        worst = worst.max((lib - oracle_mrr(&pairs)).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// Parser fixtures

use devassist::parse::{format_ranking, parse_entities, parse_ranking, parse_relation, parse_relevance};

/// Prose with no template keywords: no digits, brackets, "option", "rank",
/// "relevant" or relation labels.
pub const PROSE: [&str; 6] = [
    "Sure! Here is my answer.",
    "After reading the text carefully, this is what I found:",
    "Let me think about this step by step. The inputs look like a typical developer forum post, so here goes.",
    "Hope this helps, let me know if you need anything else!",
    "Note: I relied only on the provided context and did not use outside knowledge about the software involved.",
    "",
];

fn parse_key(p: &Prediction) -> String {
    serde_json::to_string(p).unwrap()
}

type Parser = Box<dyn Fn(&str) -> Prediction>;

/// Payloads paired with the parser that reads them.
fn robustness_payloads() -> Vec<(String, Parser)> {
    vec![
        ("OPTION 1: Rank 3\nOPTION 2: Rank 1\nOPTION 3: Rank 2".into(), Box::new(|s: &str| parse_ranking(s, 3))),
        ("Option [2] - Rank [1]\noption 1: rank 2".into(), Box::new(|s: &str| parse_ranking(s, 2))),
        ("1".into(), Box::new(parse_relevance)),
        ("0".into(), Box::new(parse_relevance)),
        ("cause and effect".into(), Box::new(|s: &str| parse_relation(s, &RELATION_LABELS))),
        ("affected version".into(), Box::new(|s: &str| parse_relation(s, &RELATION_LABELS))),
        (r#"["apt", "dpkg"]"#.into(), Box::new(parse_entities)),
        ("[libssl, openssl]".into(), Box::new(parse_entities)),
    ]
}

/// Wraps every payload in every prefix/suffix combination; returns the
/// number checked and the combinations whose parse differs from the bare
/// payload's.
pub fn prose_robustness_failures() -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut failures = Vec::new();
    for (payload, parser) in robustness_payloads() {
        let bare = parser(&payload);
        assert!(!bare.is_unparseable(), "fixture payload must parse: {payload}");
        for pre in PROSE {
            for post in PROSE {
                let wrapped = format!("{pre}\n{payload}\n{post}");
                checked += 1;
                let got = parser(&wrapped);
                if got != bare {
                    failures.push(format!("{wrapped:?} -> {}", parse_key(&got)));
                }
            }
        }
    }
    (checked, failures)
}

/// Ranking texts that assign one rank twice.
pub const DUPLICATE_RANK_FIXTURES: [(&str, usize); 4] = [
    ("OPTION 1: Rank 1\nOPTION 2: Rank 1", 2),
    ("OPTION 1: Rank 2\nOPTION 2: Rank 2\nOPTION 3: Rank 1", 3),
    ("option 1: rank 3\noption 2: rank 1\noption 3: rank 3\noption 4: rank 2", 4),
    ("Here you go.\nOPTION [1]: Rank [1]\nOPTION [2]: Rank [2]\nOPTION [3]: Rank [2]", 3),
];

/// Number of random permutations (n <= 8) that fail format -> parse identity.
pub fn ranking_roundtrip_failures(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .filter(|_| {
            let n = rng.random_range(2..=8u32);
            let mut ranks: Vec<u32> = (1..=n).collect();
            ranks.shuffle(&mut rng);
            parse_ranking(&format_ranking(&ranks), n as usize) != Prediction::Ranking(ranks)
        })
        .count()
}
