//! Embedding recommenders.
//!
//! Each query works on a candidate pool: the source's variety (its
//! subcategory for the catch-all "other" variety), restricted to the same
//! brand attribute and to products whose allergens are a subset of the
//! source's. Scores are chained in stages:
//!
//! ```text
//! d_base  pairwise measure (similarity for cosine/jaccard, distance otherwise)
//! d_r     cosine/jaccard: d_base · ratio       others: ratio / max(d_base, ε)
//!         ratio = min(price_p, price_q) / max(price_p, price_q)
//! d_m     d_r · w(pos)
//! d_h     h(q) / max(d_m, ε)
//! d_se    servings ratio / max(d_h, ε)
//! ```
//!
//! PRO-COM ranks by d_m descending, HTH-BD by d_h ascending and PK-BD by
//! d_se descending; ties go to the smaller EAN.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, NutritionFacts, Product};
use crate::embed::EmbeddingModel;
use crate::ranking::{rank_keyed, Approach, Exclusion, Family, Keyed, RankedAlternatives, RecommendError};
use crate::similarity::{pairwise, MetricFamily, MetricKind, Repr};
use crate::textprep::DescriptorSet;

pub const DEFAULT_EPS: f64 = 1e-9;

/// Source of dense product vectors.
pub trait ProductVectors {
    fn vector_of(&self, ean: &str) -> Option<Vec<f64>>;
}

impl ProductVectors for EmbeddingModel {
    fn vector_of(&self, ean: &str) -> Option<Vec<f64>> {
        self.doc_vector_by_ref(ean)
            .map(|v| v.iter().map(|&x| x as f64).collect())
    }
}

/// A frozen table, e.g. random vectors for tests.
impl ProductVectors for HashMap<String, Vec<f64>> {
    fn vector_of(&self, ean: &str) -> Option<Vec<f64>> {
        self.get(ean).cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolScope {
    Variety,
    Subcategory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub source: String,
    pub members: Vec<String>,
    pub scope: PoolScope,
    pub filters_applied: Vec<String>,
}

pub const FILTER_SCOPE: &str = "variety";
pub const FILTER_SUBCATEGORY: &str = "subcategory";
pub const FILTER_BRAND_ATTRIBUTE: &str = "brand_attribute";
pub const FILTER_ALLERGENS: &str = "allergens";

fn scope_of(p: &Product) -> PoolScope {
    if p.in_other_variety() {
        PoolScope::Subcategory
    } else {
        PoolScope::Variety
    }
}

fn same_scope(scope: PoolScope, p: &Product, q: &Product) -> bool {
    match scope {
        PoolScope::Variety => q.variety == p.variety,
        PoolScope::Subcategory => q.subcategory == p.subcategory,
    }
}

/// Number of catalog products (source included) in the source's scope.
pub fn scope_size(catalog: &Catalog, p: &Product) -> usize {
    let scope = scope_of(p);
    catalog.products().iter().filter(|q| same_scope(scope, p, q)).count()
}

pub fn candidate_pool(catalog: &Catalog, ean: &str) -> Result<CandidatePool, RecommendError> {
    let p = catalog
        .get(ean)
        .ok_or_else(|| RecommendError::UnknownProduct(ean.to_string()))?;
    let scope = scope_of(p);
    let empty = |filter: &str| RecommendError::EmptyPool {
        source_ean: p.ean.clone(),
        filter: filter.to_string(),
    };
    let scope_filter = match scope {
        PoolScope::Variety => FILTER_SCOPE,
        PoolScope::Subcategory => FILTER_SUBCATEGORY,
    };

    let mut members: Vec<&Product> = catalog
        .products()
        .iter()
        .filter(|q| q.ean != p.ean && same_scope(scope, p, q))
        .collect();
    if members.is_empty() {
        return Err(empty(scope_filter));
    }
    members.retain(|q| q.brand_attribute == p.brand_attribute);
    if members.is_empty() {
        return Err(empty(FILTER_BRAND_ATTRIBUTE));
    }
    members.retain(|q| q.allergens.is_subset_of(p.allergens));
    if members.is_empty() {
        return Err(empty(FILTER_ALLERGENS));
    }
    Ok(CandidatePool {
        source: p.ean.clone(),
        members: members.into_iter().map(|q| q.ean.clone()).collect(),
        scope,
        filters_applied: vec![
            scope_filter.to_string(),
            FILTER_BRAND_ATTRIBUTE.to_string(),
            FILTER_ALLERGENS.to_string(),
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BrandPos {
    /// Brand and brand type both match.
    Pos1,
    /// Exactly one matches.
    Pos2,
    /// Neither matches.
    Pos3,
}

impl BrandPos {
    pub fn of(p: &Product, q: &Product) -> BrandPos {
        match (p.brand == q.brand, p.brand_type == q.brand_type) {
            (true, true) => BrandPos::Pos1,
            (false, false) => BrandPos::Pos3,
            _ => BrandPos::Pos2,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            BrandPos::Pos1 => 1,
            BrandPos::Pos2 => 2,
            BrandPos::Pos3 => 3,
        }
    }
}

/// Brand weights for the distance family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrandWeightMode {
    /// (100, 10, 1) for both families, so a brand match always helps.
    #[default]
    Uniform,
    /// (1, 10, 100) for euclidean/manhattan.
    Literal,
}

pub fn brand_weight(metric: MetricKind, pos: BrandPos, mode: BrandWeightMode) -> f64 {
    let w = [100.0, 10.0, 1.0];
    let i = pos.index() as usize - 1;
    match (mode, metric.family()) {
        (BrandWeightMode::Literal, MetricFamily::Em) => w[2 - i],
        _ => w[i],
    }
}

/// Minimum scope size per approach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarietyThresholds {
    pub pro_com: usize,
    pub pk_bd: usize,
    pub hth_bd: usize,
}

impl Default for VarietyThresholds {
    fn default() -> Self {
        VarietyThresholds {
            pro_com: 15,
            pk_bd: 4,
            hth_bd: 4,
        }
    }
}

impl VarietyThresholds {
    pub fn for_approach(&self, approach: Approach) -> usize {
        match approach {
            Approach::ProCom => self.pro_com,
            Approach::PkBd => self.pk_bd,
            Approach::HthBd => self.hth_bd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsNnConfig {
    pub metric: MetricKind,
    pub brand_weights: BrandWeightMode,
    pub eps: f64,
    pub thresholds: VarietyThresholds,
}

impl Default for RsNnConfig {
    fn default() -> Self {
        RsNnConfig {
            metric: MetricKind::Cosine,
            brand_weights: BrandWeightMode::Uniform,
            eps: DEFAULT_EPS,
            thresholds: VarietyThresholds::default(),
        }
    }
}

/// Weighted nutrition score with gram conversions of the percentage fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NutritionScore {
    pub h: f64,
    pub good_fat_g: f64,
    pub dietary_fiber_g: f64,
}

pub fn nutrition_score(n: &NutritionFacts) -> Option<NutritionScore> {
    let f = n.fat_g?;
    let carbs = n.carbs_g?;
    let gf_g = n.good_fat_pct? / 100.0 * f;
    let df_g = n.dietary_fiber_pct? / 100.0 * carbs;
    let h = n.protein_g? * 100.0
        + gf_g * 200.0
        + df_g * 300.0
        + n.salt_g? * 400.0
        + n.sugar_g? * 500.0
        + carbs * 600.0
        + n.saturated_fat_g? * 700.0
        + f * 800.0;
    Some(NutritionScore {
        h,
        good_fat_g: gf_g,
        dietary_fiber_g: df_g,
    })
}

/// `min(a, b) / max(a, b)` for positive inputs.
pub fn min_max_ratio(a: f64, b: f64) -> f64 {
    a.min(b) / a.max(b)
}

/// Stage values of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub d_base: f64,
    pub d_r: f64,
    pub d_m: f64,
    pub pos: BrandPos,
    pub h: Option<f64>,
    pub d_h: Option<f64>,
    pub d_se: Option<f64>,
}

impl ScoredCandidate {
    fn scores(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        m.insert("d_base".to_string(), self.d_base);
        m.insert("d_r".to_string(), self.d_r);
        m.insert("d_m".to_string(), self.d_m);
        m.insert("pos".to_string(), self.pos.index() as f64);
        for (k, v) in [("h", self.h), ("d_h", self.d_h), ("d_se", self.d_se)] {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        }
        m
    }
}

fn usable_price(p: &Product) -> Option<f64> {
    p.price.filter(|&x| x > 0.0 && x.is_finite())
}

/// Scored members plus the ones left out.
type ScoredPool = (Vec<(String, ScoredCandidate)>, Vec<Exclusion>);

/// Embedding recommenders over one catalog.
pub struct RsNn<'a> {
    pub catalog: &'a Catalog,
    pub vectors: &'a dyn ProductVectors,
    /// Token sets for the jaccard measure.
    pub tokens: Option<&'a DescriptorSet>,
    pub config: RsNnConfig,
}

enum Skip {
    Exclude(&'static str),
    Fail(RecommendError),
}

impl<'a> RsNn<'a> {
    pub fn new(catalog: &'a Catalog, vectors: &'a dyn ProductVectors, config: RsNnConfig) -> Self {
        RsNn {
            catalog,
            vectors,
            tokens: None,
            config,
        }
    }

    pub fn with_tokens(mut self, tokens: &'a DescriptorSet) -> Self {
        self.tokens = Some(tokens);
        self
    }

    fn product(&self, ean: &str) -> Result<&'a Product, RecommendError> {
        self.catalog
            .get(ean)
            .ok_or_else(|| RecommendError::UnknownProduct(ean.to_string()))
    }

    fn base(&self, metric: MetricKind, p: &Product, q: &Product) -> Result<f64, Skip> {
        if metric == MetricKind::Jaccard {
            let tokens = self.tokens.ok_or(Skip::Exclude("no token set"))?;
            let a = tokens.get(&p.ean).ok_or(Skip::Exclude("no token set"))?;
            let b = tokens.get(&q.ean).ok_or(Skip::Exclude("no token set"))?;
            return pairwise(metric, Repr::Tokens(&a.tokens), Repr::Tokens(&b.tokens))
                .map_err(|e| Skip::Fail(e.into()));
        }
        let a = self
            .vectors
            .vector_of(&p.ean)
            .ok_or_else(|| Skip::Fail(RecommendError::MissingVector(p.ean.clone())))?;
        let b = self.vectors.vector_of(&q.ean).ok_or(Skip::Exclude("no embedding vector"))?;
        pairwise(metric, Repr::Vector(&a), Repr::Vector(&b)).map_err(|e| Skip::Fail(e.into()))
    }

    /// d_base, d_r and d_m for one pair.
    pub fn score_pro_com(&self, metric: MetricKind, p: &str, q: &str) -> Result<ScoredCandidate, RecommendError> {
        let p = self.product(p)?;
        let q = self.product(q)?;
        self.score_pair(metric, p, q).map_err(|s| match s {
            Skip::Fail(e) => e,
            Skip::Exclude("missing price") => RecommendError::MissingPrice(q.ean.clone()),
            Skip::Exclude(_) => RecommendError::MissingVector(q.ean.clone()),
        })
    }

    fn score_pair(&self, metric: MetricKind, p: &Product, q: &Product) -> Result<ScoredCandidate, Skip> {
        let pr_p = usable_price(p).ok_or_else(|| Skip::Fail(RecommendError::MissingPrice(p.ean.clone())))?;
        let pr_q = usable_price(q).ok_or(Skip::Exclude("missing price"))?;
        let d_base = self.base(metric, p, q)?;
        let ratio = min_max_ratio(pr_p, pr_q);
        let d_r = match metric.family() {
            MetricFamily::Cj => d_base * ratio,
            MetricFamily::Em => ratio / d_base.max(self.config.eps),
        };
        let pos = BrandPos::of(p, q);
        let d_m = d_r * brand_weight(metric, pos, self.config.brand_weights);
        Ok(ScoredCandidate {
            d_base,
            d_r,
            d_m,
            pos,
            h: None,
            d_h: None,
            d_se: None,
        })
    }

    fn prepare(&self, approach: Approach, ean: &str) -> Result<(&'a Product, Vec<&'a Product>), RecommendError> {
        let p = self.product(ean)?;
        let required = self.config.thresholds.for_approach(approach);
        let size = scope_size(self.catalog, p);
        if size < required {
            return Err(RecommendError::VarietyTooSmall {
                variety: p.variety.clone(),
                size,
                required,
            });
        }
        let pool = candidate_pool(self.catalog, ean)?;
        let members = pool.members.iter().map(|e| self.product(e)).collect::<Result<_, _>>()?;
        Ok((p, members))
    }

    fn score_pool(
        &self,
        approach: Approach,
        metric: MetricKind,
        ean: &str,
    ) -> Result<ScoredPool, RecommendError> {
        let (p, members) = self.prepare(approach, ean)?;
        let eps = self.config.eps;
        let servings_p = if approach == Approach::PkBd {
            Some(p.servings.ok_or_else(|| RecommendError::MissingServings(p.ean.clone()))?)
        } else {
            None
        };
        let mut scored = Vec::with_capacity(members.len());
        let mut excluded = Vec::new();
        for q in members {
            let exclude = |reason: &str, excluded: &mut Vec<Exclusion>| {
                excluded.push(Exclusion {
                    ean: q.ean.clone(),
                    reason: reason.to_string(),
                })
            };
            let mut s = match self.score_pair(metric, p, q) {
                Ok(s) => s,
                Err(Skip::Exclude(r)) => {
                    exclude(r, &mut excluded);
                    continue;
                }
                Err(Skip::Fail(e)) => return Err(e),
            };
            if approach != Approach::ProCom {
                let Some(ns) = nutrition_score(&q.nutrition) else {
                    exclude("missing nutrition", &mut excluded);
                    continue;
                };
                let d_h = ns.h / s.d_m.max(eps);
                s.h = Some(ns.h);
                s.d_h = Some(d_h);
                if let Some(sp) = servings_p {
                    let Some(sq) = q.servings else {
                        exclude("missing servings", &mut excluded);
                        continue;
                    };
                    s.d_se = Some(min_max_ratio(sp, sq) / d_h.max(eps));
                }
            }
            scored.push((q.ean.clone(), s));
        }
        Ok((scored, excluded))
    }

    pub fn recommend(
        &self,
        approach: Approach,
        ean: &str,
        metric: Option<MetricKind>,
        k: Option<usize>,
    ) -> Result<RankedAlternatives, RecommendError> {
        let metric = metric.unwrap_or(self.config.metric);
        let (scored, excluded) = self.score_pool(approach, metric, ean)?;
        let key_of = |s: &ScoredCandidate| match approach {
            Approach::ProCom => s.d_m,
            Approach::HthBd => s.d_h.expect("set for health ranking"),
            Approach::PkBd => s.d_se.expect("set for package ranking"),
        };
        let items = scored
            .into_iter()
            .map(|(ean, s)| Keyed {
                ean,
                key: key_of(&s),
                scores: s.scores(),
            })
            .collect();
        let cmp: fn(&f64, &f64) -> Ordering = match approach {
            Approach::HthBd => |a, b| a.total_cmp(b),
            _ => |a, b| b.total_cmp(a),
        };
        Ok(RankedAlternatives {
            source: ean.to_string(),
            family: Family::Rsnn,
            approach,
            metric: Some(metric),
            candidates: rank_keyed(items, cmp, k),
            excluded,
        })
    }

    pub fn recommend_pro_com_nn(&self, metric: MetricKind, ean: &str, k: Option<usize>) -> Result<RankedAlternatives, RecommendError> {
        self.recommend(Approach::ProCom, ean, Some(metric), k)
    }

    pub fn recommend_hth_bd_nn(&self, metric: MetricKind, ean: &str, k: Option<usize>) -> Result<RankedAlternatives, RecommendError> {
        self.recommend(Approach::HthBd, ean, Some(metric), k)
    }

    pub fn recommend_pk_bd_nn(&self, metric: MetricKind, ean: &str, k: Option<usize>) -> Result<RankedAlternatives, RecommendError> {
        self.recommend(Approach::PkBd, ean, Some(metric), k)
    }
}
