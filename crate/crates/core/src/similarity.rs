//! Pairwise measures used by the embedding recommenders.
//!
//! Cosine, Euclidean and Manhattan act on dense vectors. Jaccard acts on
//! token sets, since set intersection over real-valued vectors is not
//! defined.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("vector lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine is undefined for a zero vector")]
    ZeroVector,
    #[error("metric {0} needs {1} operands")]
    WrongOperand(MetricKind, &'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Cosine,
    Jaccard,
    Euclidean,
    Manhattan,
}

/// Similarity (larger is closer) or distance (smaller is closer).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricFamily {
    /// Cosine and Jaccard.
    #[serde(rename = "CJ")]
    Cj,
    /// Euclidean and Manhattan.
    #[serde(rename = "EM")]
    Em,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Cosine,
        MetricKind::Jaccard,
        MetricKind::Euclidean,
        MetricKind::Manhattan,
    ];

    pub fn family(self) -> MetricFamily {
        match self {
            MetricKind::Cosine | MetricKind::Jaccard => MetricFamily::Cj,
            MetricKind::Euclidean | MetricKind::Manhattan => MetricFamily::Em,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Cosine => "cosine",
            MetricKind::Jaccard => "jaccard",
            MetricKind::Euclidean => "euclidean",
            MetricKind::Manhattan => "manhattan",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(MetricKind::Cosine),
            "jaccard" | "jac" => Ok(MetricKind::Jaccard),
            "euclidean" => Ok(MetricKind::Euclidean),
            "manhattan" => Ok(MetricKind::Manhattan),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<(), SimilarityError> {
    if a.len() != b.len() {
        return Err(SimilarityError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn manhattan(a: &[f64], b: &[f64]) -> Result<f64, SimilarityError> {
    check_dims(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// `|A ∩ B| / |A ∪ B|`; two empty sets are taken as identical.
pub fn jaccard<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let sa: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let sb: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// What a product contributes to a pairwise comparison.
#[derive(Debug, Clone, Copy)]
pub enum Repr<'a> {
    Vector(&'a [f64]),
    Tokens(&'a [String]),
}

pub fn pairwise(metric: MetricKind, p: Repr<'_>, q: Repr<'_>) -> Result<f64, SimilarityError> {
    match (metric, p, q) {
        (MetricKind::Jaccard, Repr::Tokens(a), Repr::Tokens(b)) => Ok(jaccard(a, b)),
        (MetricKind::Jaccard, _, _) => Err(SimilarityError::WrongOperand(metric, "token set")),
        (m, Repr::Vector(a), Repr::Vector(b)) => match m {
            MetricKind::Cosine => cosine(a, b),
            MetricKind::Euclidean => euclidean(a, b),
            MetricKind::Manhattan => manhattan(a, b),
            MetricKind::Jaccard => unreachable!(),
        },
        (m, _, _) => Err(SimilarityError::WrongOperand(m, "vector")),
    }
}
