use serde::{Deserialize, Serialize};

use super::{render_instruction, InstructError, InstructionRecord};
use crate::corpus::{load_dataset, DatasetManifest, Task};
use crate::negsample::{self, NegativePolicy};
use crate::rng::{derive_seed, shuffled};

pub const DEFAULT_PER_DATASET_CAP: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub per_dataset_cap: usize,
    pub seed: u64,
    /// Fraction of negatives added to NER and QA datasets before capping.
    pub negative_ratio: f64,
    pub refusal_text: String,
    /// Out-of-domain question pool; the bundled list when empty.
    #[serde(default)]
    pub ood_questions: Vec<String>,
    pub datasets: Vec<DatasetManifest>,
}

impl MixSpec {
    pub fn new(seed: u64, datasets: Vec<DatasetManifest>) -> Self {
        MixSpec {
            per_dataset_cap: DEFAULT_PER_DATASET_CAP,
            seed,
            negative_ratio: negsample::DEFAULT_RATIO,
            refusal_text: negsample::DEFAULT_REFUSAL.to_string(),
            ood_questions: Vec::new(),
            datasets,
        }
    }

    fn check(&self) -> Result<(), InstructError> {
        if self.per_dataset_cap < 1 {
            return Err(InstructError::InvalidSpec("per_dataset_cap must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.negative_ratio) {
            return Err(InstructError::InvalidSpec(format!(
                "negative_ratio {} outside [0, 1]",
                self.negative_ratio
            )));
        }
        Ok(())
    }

    fn policy_for(&self, dataset: &str) -> Result<NegativePolicy, InstructError> {
        let wrap = |source| InstructError::Negative {
            name: dataset.to_string(),
            source,
        };
        let policy = NegativePolicy::new(
            self.negative_ratio,
            self.refusal_text.clone(),
            derive_seed(self.seed, &format!("{dataset}#negatives")),
        )
        .map_err(wrap)?;
        if self.ood_questions.is_empty() {
            Ok(policy)
        } else {
            policy.with_questions(self.ood_questions.clone()).map_err(wrap)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetContribution {
    pub name: String,
    pub task: Task,
    pub loaded: usize,
    pub negatives: usize,
    pub skipped_negatives: usize,
    pub contributed: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MixOutcome {
    pub records: Vec<InstructionRecord>,
    pub contributions: Vec<DatasetContribution>,
}

/// Builds the instruction set.
///
/// For each dataset: load, inject negatives (NER and QA only), shuffle with
/// `derive_seed(seed, name)`, keep the first `per_dataset_cap`, render. The
/// concatenation is shuffled once more with `seed`.
pub fn mix(spec: &MixSpec) -> Result<MixOutcome, InstructError> {
    spec.check()?;
    let mut all = Vec::new();
    let mut contributions = Vec::with_capacity(spec.datasets.len());
    for manifest in &spec.datasets {
        let name = manifest.name.as_str();
        let loaded = load_dataset(manifest).map_err(|source| InstructError::Corpus {
            name: name.to_string(),
            source,
        })?;
        let n_loaded = loaded.instances.len();
        let (instances, negatives, skipped) =
            if matches!(manifest.task, Task::Ner | Task::Qa) && spec.negative_ratio > 0.0 {
                let policy = spec.policy_for(name)?;
                let inj = negsample::inject(&loaded.instances, &policy, None).map_err(|source| {
                    InstructError::Negative {
                        name: name.to_string(),
                        source,
                    }
                })?;
                (inj.instances, inj.injected, inj.skipped)
            } else {
                (loaded.instances, 0, 0)
            };
        let mut picked = shuffled(instances, derive_seed(spec.seed, name));
        picked.truncate(spec.per_dataset_cap);
        for inst in &picked {
            all.push(render_instruction(inst, name)?);
        }
        contributions.push(DatasetContribution {
            name: name.to_string(),
            task: manifest.task,
            loaded: n_loaded,
            negatives,
            skipped_negatives: skipped,
            contributed: picked.len(),
            warnings: loaded.warnings,
        });
    }
    Ok(MixOutcome {
        records: shuffled(all, spec.seed),
        contributions,
    })
}
