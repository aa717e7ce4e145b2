//! Label sets for the source corpora.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// DistALANER bug-report entity types.
pub const DISTALANER_TYPES: [&str; 9] = [
    "packages",
    "operating system",
    "organization",
    "commands",
    "error",
    "file extension",
    "peripheral",
    "software component",
    "computer architecture",
];

/// WikiSER software entity types.
pub const WIKISER_TYPES: [&str; 12] = [
    "algorithm",
    "application",
    "architecture",
    "data structure",
    "device",
    "error name",
    "general concept",
    "language",
    "library",
    "license",
    "operating system",
    "protocol",
];

/// StackOverflow / GitHub NER types: 8 code entities followed by 12 natural-language entities.
pub const SOFTWARE_QA_TYPES: [&str; 20] = [
    "class",
    "variable",
    "in line code",
    "function",
    "library",
    "value",
    "data type",
    "html xml tag",
    "application",
    "user interface element",
    "language",
    "data structure",
    "algorithm",
    "file type",
    "file name",
    "version",
    "device",
    "operating system",
    "website",
    "user name",
];

/// The five relation labels of the bug-report relation corpus.
pub const RELATION_LABELS: [&str; 5] = [
    "dependency",
    "conflict",
    "affected version",
    "cause and effect",
    "interaction/control",
];

/// Labels used for link prediction ("0" unrelated, "1" related).
pub const RELEVANCE_LABELS: [&str; 2] = ["0", "1"];

/// NER source corpora.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SourceDataset {
    #[serde(rename = "DistALANER", alias = "DistAlaner", alias = "distalaner")]
    DistAlaner,
    #[serde(rename = "StackOverflow", alias = "stackoverflow")]
    StackOverflow,
    #[serde(rename = "GitHub", alias = "Github", alias = "github")]
    GitHub,
    #[serde(rename = "WikiSER", alias = "wikiser")]
    WikiSer,
}

impl SourceDataset {
    pub const ALL: [SourceDataset; 4] = [
        SourceDataset::DistAlaner,
        SourceDataset::StackOverflow,
        SourceDataset::GitHub,
        SourceDataset::WikiSer,
    ];

    pub fn label_set(self) -> &'static [&'static str] {
        match self {
            SourceDataset::DistAlaner => &DISTALANER_TYPES,
            SourceDataset::WikiSer => &WIKISER_TYPES,
            SourceDataset::StackOverflow | SourceDataset::GitHub => &SOFTWARE_QA_TYPES,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceDataset::DistAlaner => "DistALANER",
            SourceDataset::StackOverflow => "StackOverflow",
            SourceDataset::GitHub => "GitHub",
            SourceDataset::WikiSer => "WikiSER",
        }
    }

    /// Resolves `label` against this source's label set, ignoring case,
    /// underscores and hyphens. Returns the canonical spelling.
    pub fn canonical_label(self, label: &str) -> Option<&'static str> {
        canonical_in(self.label_set(), label)
    }
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceDataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        SourceDataset::ALL
            .into_iter()
            .find(|d| d.as_str().to_ascii_lowercase() == key)
            .ok_or_else(|| format!("unknown NER source dataset `{s}`"))
    }
}

/// Lowercases, maps `_`/`-` to spaces and collapses whitespace.
pub fn label_key(label: &str) -> String {
    let replaced: String = label
        .chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect();
    replaced
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

pub fn canonical_in<'a>(set: &[&'a str], label: &str) -> Option<&'a str> {
    let key = label_key(label);
    set.iter().copied().find(|l| label_key(l) == key)
}

/// Entity normalization used for duplicate detection: lowercase plus trim.
pub fn normalize_entity(entity: &str) -> String {
    entity.trim().to_lowercase()
}
