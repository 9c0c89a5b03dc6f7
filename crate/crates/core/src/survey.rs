//! Questionnaire generation and an append-only response store.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::eval::{SurveyQuestion, SurveyResponse, TieShape};
use crate::ranking::{Approach, Family, RankedAlternatives, RecommendError};
use crate::rscf::{RsCfEngine, MIN_VARIETY_SIZE};
use crate::rsnn::{scope_size, RsNn};
use crate::similarity::MetricKind;

pub const BLOCK_APPROACHES: [Approach; 3] = [Approach::ProCom, Approach::PkBd, Approach::HthBd];
pub const QUESTIONS_PER_BLOCK: usize = 10;
pub const OPTIONS_PER_QUESTION: usize = 3;

/// What a survey needs from a recommender family.
pub trait Recommender {
    fn family(&self) -> Family;

    fn metric(&self) -> Option<MetricKind> {
        None
    }

    /// Whether `ean` may be asked about for `approach` (scope size check).
    fn eligible(&self, catalog: &Catalog, approach: Approach, ean: &str) -> bool;

    fn recommend(&self, approach: Approach, ean: &str, k: Option<usize>) -> Result<RankedAlternatives, RecommendError>;
}

impl Recommender for RsCfEngine {
    fn family(&self) -> Family {
        Family::Rscf
    }

    fn eligible(&self, catalog: &Catalog, _approach: Approach, ean: &str) -> bool {
        catalog
            .get(ean)
            .is_some_and(|p| catalog.variety_size(&p.variety) >= MIN_VARIETY_SIZE)
    }

    fn recommend(&self, approach: Approach, ean: &str, k: Option<usize>) -> Result<RankedAlternatives, RecommendError> {
        RsCfEngine::recommend(self, approach, ean, k)
    }
}

impl Recommender for RsNn<'_> {
    fn family(&self) -> Family {
        Family::Rsnn
    }

    fn metric(&self) -> Option<MetricKind> {
        Some(self.config.metric)
    }

    fn eligible(&self, catalog: &Catalog, approach: Approach, ean: &str) -> bool {
        catalog
            .get(ean)
            .is_some_and(|p| scope_size(catalog, p) >= self.config.thresholds.for_approach(approach))
    }

    fn recommend(&self, approach: Approach, ean: &str, k: Option<usize>) -> Result<RankedAlternatives, RecommendError> {
        RsNn::recommend(self, approach, ean, None, k)
    }
}

#[derive(Debug, Error)]
pub enum SurveyError {
    #[error("only {found} of {needed} {approach} questions could be built")]
    InsufficientEligibleProducts {
        approach: Approach,
        needed: usize,
        found: usize,
    },
    #[error("unknown question `{0}`")]
    UnknownQuestion(String),
    #[error("choice {0} is not 1, 2 or 3")]
    InvalidChoice(u8),
    #[error("store line {line}: {source}")]
    Corrupt { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyBlock {
    pub approach: Approach,
    pub questions: Vec<SurveyQuestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyBundle {
    pub id: String,
    pub seed: u64,
    pub family: Family,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    /// Catalog (and model, when used) the questions were drawn from.
    pub provenance: String,
    pub blocks: Vec<SurveyBlock>,
}

impl SurveyBundle {
    pub fn questions(&self) -> impl Iterator<Item = &SurveyQuestion> {
        self.blocks.iter().flat_map(|b| b.questions.iter())
    }

    pub fn all_questions(&self) -> Vec<SurveyQuestion> {
        self.questions().cloned().collect()
    }

    pub fn question(&self, id: &str) -> Option<&SurveyQuestion> {
        self.questions().find(|q| q.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SurveyError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SurveyBundle, SurveyError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn block_seed(seed: u64, block: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D).wrapping_add(block as u64 + 1)
}

/// Three blocks of ten questions, one block per approach. Sources are drawn
/// in a seeded random order from the products eligible for the approach;
/// sources with fewer than three alternatives are passed over.
pub fn build_survey(
    id: impl Into<String>,
    catalog: &Catalog,
    recommender: &dyn Recommender,
    seed: u64,
    provenance: impl Into<String>,
) -> Result<SurveyBundle, SurveyError> {
    let mut blocks = Vec::with_capacity(BLOCK_APPROACHES.len());
    for (bi, &approach) in BLOCK_APPROACHES.iter().enumerate() {
        let mut eligible: Vec<&str> = catalog
            .products()
            .iter()
            .map(|p| p.ean.as_str())
            .filter(|e| recommender.eligible(catalog, approach, e))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(block_seed(seed, bi));
        eligible.shuffle(&mut rng);
        let mut questions = Vec::with_capacity(QUESTIONS_PER_BLOCK);
        for ean in eligible {
            if questions.len() == QUESTIONS_PER_BLOCK {
                break;
            }
            let Ok(ranked) = recommender.recommend(approach, ean, Some(OPTIONS_PER_QUESTION)) else {
                continue;
            };
            let Some(tie_shape) = TieShape::from_tie_groups(&ranked.tie_groups()) else {
                continue;
            };
            questions.push(SurveyQuestion {
                id: format!("{}-{:02}", approach.as_str(), questions.len() + 1),
                family: recommender.family(),
                approach,
                source: ean.to_string(),
                options: ranked.eans().iter().map(|s| s.to_string()).collect(),
                tie_shape,
            });
        }
        if questions.len() < QUESTIONS_PER_BLOCK {
            return Err(SurveyError::InsufficientEligibleProducts {
                approach,
                needed: QUESTIONS_PER_BLOCK,
                found: questions.len(),
            });
        }
        blocks.push(SurveyBlock { approach, questions });
    }
    Ok(SurveyBundle {
        id: id.into(),
        seed,
        family: recommender.family(),
        metric: recommender.metric(),
        provenance: provenance.into(),
        blocks,
    })
}

/// Outcome of an append.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Appended {
    Stored,
    /// A record with the same idempotency key exists; nothing was written.
    Duplicate(SurveyResponse),
}

/// Newline-delimited JSON file of responses. Records are only ever appended.
#[derive(Debug)]
pub struct ResponseStore {
    path: PathBuf,
    records: Vec<SurveyResponse>,
    keys: HashSet<String>,
}

impl ResponseStore {
    /// Opens (or creates) the store and reads existing records.
    pub fn open(path: impl Into<PathBuf>) -> Result<ResponseStore, SurveyError> {
        let path = path.into();
        let records = if path.exists() {
            read_responses(&path)?
        } else {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            File::create(&path)?;
            Vec::new()
        };
        let keys = records.iter().filter_map(|r| r.idempotency_key.clone()).collect();
        Ok(ResponseStore { path, records, keys })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn records(&self) -> &[SurveyResponse] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Validates against `survey` and appends.
    pub fn append(&mut self, survey: &SurveyBundle, response: SurveyResponse) -> Result<Appended, SurveyError> {
        if survey.question(&response.question).is_none() {
            return Err(SurveyError::UnknownQuestion(response.question));
        }
        if !(1..=3).contains(&response.choice) {
            return Err(SurveyError::InvalidChoice(response.choice));
        }
        if let Some(key) = &response.idempotency_key {
            if self.keys.contains(key) {
                let prior = self
                    .records
                    .iter()
                    .find(|r| r.idempotency_key.as_ref() == Some(key))
                    .cloned()
                    .expect("key index matches records");
                return Ok(Appended::Duplicate(prior));
            }
        }
        let mut line = serde_json::to_string(&response)?;
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        if let Some(key) = &response.idempotency_key {
            self.keys.insert(key.clone());
        }
        self.records.push(response);
        Ok(Appended::Stored)
    }
}

pub fn read_responses(path: impl AsRef<Path>) -> Result<Vec<SurveyResponse>, SurveyError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| SurveyError::Corrupt { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_synthetic_catalog, SyntheticSpec};
    use crate::textprep::TextPipeline;

    fn engine() -> RsCfEngine {
        let cat = generate_synthetic_catalog(&SyntheticSpec::default());
        RsCfEngine::build(cat, &TextPipeline::default()).unwrap()
    }

    #[test]
    fn bundle_shape_and_determinism() {
        let e = engine();
        let a = build_survey("s1", &e.catalog, &e, 11, "synthetic").unwrap();
        let b = build_survey("s1", &e.catalog, &e, 11, "synthetic").unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.blocks.len(), 3);
        assert_eq!(a.questions().count(), 30);
        assert!(a.questions().all(|q| q.options.len() == 3 && !q.options.contains(&q.source)));
        let c = build_survey("s1", &e.catalog, &e, 12, "synthetic").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_products() {
        let e = engine();
        let small: Vec<_> = e.catalog.products().iter().take(9).cloned().collect();
        let cat = Catalog::new(small, e.catalog.schema(), "t");
        let e = RsCfEngine::build(cat, &TextPipeline::default()).unwrap();
        assert!(matches!(
            build_survey("s", &e.catalog, &e, 1, "t"),
            Err(SurveyError::InsufficientEligibleProducts { found: 9, .. })
        ));
    }

    #[test]
    fn store_is_append_only_and_idempotent() {
        let e = engine();
        let survey = build_survey("s1", &e.catalog, &e, 3, "t").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r").join("responses.ndjson");
        let mut store = ResponseStore::open(&path).unwrap();
        let q = survey.blocks[0].questions[0].id.clone();
        let resp = SurveyResponse {
            respondent: "anon".into(),
            question: q.clone(),
            choice: 2,
            timestamp: 5,
            idempotency_key: Some("k1".into()),
        };
        assert_eq!(store.append(&survey, resp.clone()).unwrap(), Appended::Stored);
        let again = SurveyResponse { choice: 3, ..resp.clone() };
        assert_eq!(store.append(&survey, again).unwrap(), Appended::Duplicate(resp.clone()));
        assert!(matches!(
            store.append(&survey, SurveyResponse { question: "nope".into(), ..resp.clone() }),
            Err(SurveyError::UnknownQuestion(_))
        ));
        assert!(matches!(
            store.append(&survey, SurveyResponse { choice: 0, idempotency_key: None, ..resp.clone() }),
            Err(SurveyError::InvalidChoice(0))
        ));
        drop(store);
        let reopened = ResponseStore::open(&path).unwrap();
        assert_eq!(reopened.records(), [resp]);
    }
}
