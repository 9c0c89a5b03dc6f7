//! Bag-of-words recommenders.
//!
//! * PRO-COM ranks the source's variety by L1 distance between binary
//!   product-matrix rows.
//! * PK-BD sorts by (content distance, servings distance).
//! * HTH-BD sorts by (allergen-claim compatibility desc, fat + sugar asc,
//!   number of health claims desc, ingredient token count asc).
//!
//! Every approach breaks remaining ties by ascending EAN.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bow::{self, BowError, ProductMatrix, Vocabulary};
use crate::catalog::{Catalog, Product};
use crate::ranking::{rank_keyed, Approach, Exclusion, Family, Keyed, RankedAlternatives, RecommendError};
use crate::textprep::{build_without_vocabulary, DescriptorMode, DescriptorSet, TextPipeline, WithoutVocabulary};

/// Smallest variety that still leaves three alternatives.
pub const MIN_VARIETY_SIZE: usize = 4;

/// Number of alternatives shown per question by default.
pub const DEFAULT_K: usize = 3;

fn variety_members<'a>(catalog: &'a Catalog, ean: &str) -> Result<(&'a Product, Vec<&'a Product>), RecommendError> {
    let source = catalog
        .get(ean)
        .ok_or_else(|| RecommendError::UnknownProduct(ean.to_string()))?;
    let size = catalog.variety_size(&source.variety);
    if size < MIN_VARIETY_SIZE {
        return Err(RecommendError::VarietyTooSmall {
            variety: source.variety.clone(),
            size,
            required: MIN_VARIETY_SIZE,
        });
    }
    let members = catalog
        .in_variety(&source.variety)
        .filter(|q| q.ean != source.ean)
        .collect();
    Ok((source, members))
}

fn matrix_row(matrix: &ProductMatrix, ean: &str) -> Result<usize, RecommendError> {
    matrix
        .row_of(ean)
        .ok_or_else(|| RecommendError::UnknownProduct(ean.to_string()))
}

fn distance(matrix: &ProductMatrix, i: usize, j: usize) -> u32 {
    match matrix.l1_distance(i, j) {
        Ok(d) => d,
        Err(BowError::RowOutOfRange { .. }) | Err(BowError::EmptyCorpus) => unreachable!("rows come from row_of"),
    }
}

fn scores(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// PRO-COM: ascending content distance to the source.
pub fn recommend_pro_com(
    matrix: &ProductMatrix,
    catalog: &Catalog,
    ean: &str,
    k: Option<usize>,
) -> Result<RankedAlternatives, RecommendError> {
    let (source, members) = variety_members(catalog, ean)?;
    let src_row = matrix_row(matrix, &source.ean)?;
    let mut excluded = Vec::new();
    let mut items = Vec::with_capacity(members.len());
    for q in members {
        let Some(row) = matrix.row_of(&q.ean) else {
            excluded.push(Exclusion {
                ean: q.ean.clone(),
                reason: "not in product matrix".into(),
            });
            continue;
        };
        let d = distance(matrix, src_row, row);
        items.push(Keyed {
            ean: q.ean.clone(),
            key: d,
            scores: scores(&[("content_distance", d as f64)]),
        });
    }
    Ok(RankedAlternatives {
        source: source.ean.clone(),
        family: Family::Rscf,
        approach: Approach::ProCom,
        metric: None,
        candidates: rank_keyed(items, |a, b| a.cmp(b), k),
        excluded,
    })
}

/// PK-BD: (content distance, |servings difference|), both ascending.
pub fn recommend_pk_bd(
    matrix: &ProductMatrix,
    catalog: &Catalog,
    ean: &str,
    k: Option<usize>,
) -> Result<RankedAlternatives, RecommendError> {
    let (source, members) = variety_members(catalog, ean)?;
    let src_row = matrix_row(matrix, &source.ean)?;
    let src_servings = source
        .servings
        .ok_or_else(|| RecommendError::MissingServings(source.ean.clone()))?;
    let mut excluded = Vec::new();
    let mut items = Vec::with_capacity(members.len());
    for q in members {
        let Some(servings) = q.servings else {
            excluded.push(Exclusion {
                ean: q.ean.clone(),
                reason: "missing servings".into(),
            });
            continue;
        };
        let Some(row) = matrix.row_of(&q.ean) else {
            excluded.push(Exclusion {
                ean: q.ean.clone(),
                reason: "not in product matrix".into(),
            });
            continue;
        };
        let d = distance(matrix, src_row, row);
        let ds = (src_servings - servings).abs();
        items.push(Keyed {
            ean: q.ean.clone(),
            key: (d, ds),
            scores: scores(&[("content_distance", d as f64), ("servings_distance", ds)]),
        });
    }
    Ok(RankedAlternatives {
        source: source.ean.clone(),
        family: Family::Rscf,
        approach: Approach::PkBd,
        metric: None,
        candidates: rank_keyed(
            items,
            |a: &(u32, f64), b: &(u32, f64)| a.0.cmp(&b.0).then_with(|| a.1.total_cmp(&b.1)),
            k,
        ),
        excluded,
    })
}

/// 1 when every allergen claim of `p` is also claimed by `q`; vacuously 1
/// when `p` makes no allergen claim.
pub fn allergen_claim_similarity(p: &str, q: &str, vocab: &WithoutVocabulary) -> u8 {
    let q_claims = vocab.claims_of(q);
    vocab
        .allergen_claims_of(p)
        .iter()
        .all(|claim| q_claims.iter().any(|c| c == claim)) as u8
}

/// Health criteria of one candidate against the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthProfile {
    pub ean: String,
    pub allergen_similarity: u8,
    /// Fat plus sugar in grams.
    pub fat_sugar: f64,
    pub healthy_features: usize,
    /// Ingredient token count.
    pub processing_level: usize,
}

pub fn health_profile(
    source: &str,
    candidate: &Product,
    vocab: &WithoutVocabulary,
    ingredients: &DescriptorSet,
) -> Option<HealthProfile> {
    Some(HealthProfile {
        ean: candidate.ean.clone(),
        allergen_similarity: allergen_claim_similarity(source, &candidate.ean, vocab),
        fat_sugar: candidate.nutrition.fat_plus_sugar()?,
        healthy_features: vocab.claims_of(&candidate.ean).len(),
        processing_level: ingredients.get(&candidate.ean).map_or(0, |d| d.tokens.len()),
    })
}

fn health_cmp(a: &HealthProfile, b: &HealthProfile) -> Ordering {
    b.allergen_similarity
        .cmp(&a.allergen_similarity)
        .then_with(|| a.fat_sugar.total_cmp(&b.fat_sugar))
        .then_with(|| b.healthy_features.cmp(&a.healthy_features))
        .then_with(|| a.processing_level.cmp(&b.processing_level))
}

/// HTH-BD over the source's variety. `ingredients` should hold
/// ingredient-only descriptors.
pub fn recommend_hth_bd(
    catalog: &Catalog,
    vocab: &WithoutVocabulary,
    ingredients: &DescriptorSet,
    ean: &str,
    k: Option<usize>,
) -> Result<RankedAlternatives, RecommendError> {
    let (source, members) = variety_members(catalog, ean)?;
    if source.nutrition.fat_plus_sugar().is_none() {
        return Err(RecommendError::MissingNutrition(source.ean.clone()));
    }
    let mut excluded = Vec::new();
    let mut items = Vec::with_capacity(members.len());
    for q in members {
        let Some(profile) = health_profile(&source.ean, q, vocab, ingredients) else {
            excluded.push(Exclusion {
                ean: q.ean.clone(),
                reason: "missing fat or sugar".into(),
            });
            continue;
        };
        items.push(Keyed {
            ean: q.ean.clone(),
            scores: scores(&[
                ("allergen_similarity", profile.allergen_similarity as f64),
                ("fat_sugar", profile.fat_sugar),
                ("healthy_features", profile.healthy_features as f64),
                ("processing_level", profile.processing_level as f64),
            ]),
            key: profile,
        });
    }
    Ok(RankedAlternatives {
        source: source.ean.clone(),
        family: Family::Rscf,
        approach: Approach::HthBd,
        metric: None,
        candidates: rank_keyed(items, health_cmp, k),
        excluded,
    })
}

/// Everything the three bag-of-words recommenders need, built once from a
/// cleaned catalog.
#[derive(Debug, Clone)]
pub struct RsCfEngine {
    pub catalog: Catalog,
    pub descriptors: DescriptorSet,
    pub ingredients: DescriptorSet,
    pub vocabulary: Vocabulary,
    pub matrix: ProductMatrix,
    pub without: WithoutVocabulary,
}

impl RsCfEngine {
    pub fn build(catalog: Catalog, pipeline: &TextPipeline) -> Result<Self, BowError> {
        let descriptors = pipeline.build_descriptors(&catalog, DescriptorMode::CfFull);
        let ingredients = pipeline.build_descriptors(&catalog, DescriptorMode::CfIngredients);
        let vocabulary = bow::build_vocabulary(descriptors.items())?;
        let matrix = bow::vectorize(descriptors.items(), &vocabulary);
        let without = build_without_vocabulary(&catalog);
        Ok(RsCfEngine {
            catalog,
            descriptors,
            ingredients,
            vocabulary,
            matrix,
            without,
        })
    }

    pub fn recommend(&self, approach: Approach, ean: &str, k: Option<usize>) -> Result<RankedAlternatives, RecommendError> {
        match approach {
            Approach::ProCom => recommend_pro_com(&self.matrix, &self.catalog, ean, k),
            Approach::PkBd => recommend_pk_bd(&self.matrix, &self.catalog, ean, k),
            Approach::HthBd => recommend_hth_bd(&self.catalog, &self.without, &self.ingredients, ean, k),
        }
    }
}
