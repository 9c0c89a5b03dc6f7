//! Ranked recommender output and the shared lexicographic ranking helper.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::similarity::{MetricKind, SimilarityError};

/// Errors shared by every recommender.
#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("unknown product `{0}`")]
    UnknownProduct(String),
    #[error("variety `{variety}` has {size} products, at least {required} required")]
    VarietyTooSmall {
        variety: String,
        size: usize,
        required: usize,
    },
    #[error("product `{0}` has no servings")]
    MissingServings(String),
    #[error("product `{0}` lacks required nutrition values")]
    MissingNutrition(String),
    #[error("product `{0}` has no usable price")]
    MissingPrice(String),
    #[error("product `{0}` has no embedding vector")]
    MissingVector(String),
    #[error("no candidate for `{source_ean}` survives the {filter} filter")]
    EmptyPool { source_ean: String, filter: String },
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    ProCom,
    PkBd,
    HthBd,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::ProCom => "pro_com",
            Approach::PkBd => "pk_bd",
            Approach::HthBd => "hth_bd",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Approach {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "pro_com" => Ok(Approach::ProCom),
            "pk_bd" => Ok(Approach::PkBd),
            "hth_bd" => Ok(Approach::HthBd),
            other => Err(format!("unknown approach `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Bag-of-words matrix recommenders.
    Rscf,
    /// Embedding recommenders.
    Rsnn,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Rscf => "rscf",
            Family::Rsnn => "rsnn",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "rscf" => Ok(Family::Rscf),
            "rsnn" => Ok(Family::Rsnn),
            other => Err(format!("unknown family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub ean: String,
    /// Per-criterion values that produced the rank.
    pub scores: BTreeMap<String, f64>,
    /// Candidates with equal ranking keys share a group; groups count up
    /// from 0 in rank order.
    pub tie_group: u32,
}

/// A candidate left out of the ranking and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub ean: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAlternatives {
    pub source: String,
    pub family: Family,
    pub approach: Approach,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metric: Option<MetricKind>,
    pub candidates: Vec<RankedCandidate>,
    #[serde(default)]
    pub excluded: Vec<Exclusion>,
}

impl RankedAlternatives {
    pub fn eans(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.ean.as_str()).collect()
    }

    pub fn tie_groups(&self) -> Vec<u32> {
        self.candidates.iter().map(|c| c.tie_group).collect()
    }
}

/// Ascending EAN order. All-digit codes compare numerically, anything else
/// falls back to byte order.
pub fn ean_cmp(a: &str, b: &str) -> Ordering {
    let numeric = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
    if numeric(a) && numeric(b) {
        let ta = a.trim_start_matches('0');
        let tb = b.trim_start_matches('0');
        ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb)).then_with(|| a.cmp(b))
    } else {
        a.cmp(b)
    }
}

/// A candidate with its ranking key and reported breakdown.
#[derive(Debug, Clone)]
pub(crate) struct Keyed<K> {
    pub ean: String,
    pub key: K,
    pub scores: BTreeMap<String, f64>,
}

/// Sorts by `cmp`, then by ascending EAN; assigns tie groups over the full
/// order and keeps the first `k` (all when `None`).
pub(crate) fn rank_keyed<K>(
    mut items: Vec<Keyed<K>>,
    cmp: impl Fn(&K, &K) -> Ordering,
    k: Option<usize>,
) -> Vec<RankedCandidate> {
    items.sort_by(|a, b| cmp(&a.key, &b.key).then_with(|| ean_cmp(&a.ean, &b.ean)));
    let mut out = Vec::with_capacity(items.len());
    let mut group = 0u32;
    for i in 0..items.len() {
        if i > 0 && cmp(&items[i - 1].key, &items[i].key) != Ordering::Equal {
            group += 1;
        }
        out.push(group);
    }
    let limit = k.unwrap_or(items.len());
    items
        .into_iter()
        .zip(out)
        .take(limit)
        .map(|(item, tie_group)| RankedCandidate {
            ean: item.ean,
            scores: item.scores,
            tie_group,
        })
        .collect()
}
