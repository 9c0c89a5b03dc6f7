//! Brute-force reference implementations shared by the integration tests.
//! They share no ranking or scoring code with the library.

#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::HashMap;

use altrec_core::catalog::{Allergen, Catalog, Product};
use altrec_core::textprep::{Descriptor, WithoutVocabulary};
use altrec_core::Approach;

pub fn ean_key(e: &str) -> (u128, String) {
    (e.parse::<u128>().unwrap_or(u128::MAX), e.to_string())
}

/// Stable sort by `cmp`, then EAN; tie groups by `cmp` equality.
pub fn sort_with_groups<T>(mut items: Vec<(String, T)>, cmp: impl Fn(&T, &T) -> Ordering) -> Vec<(String, T, u32)> {
    items.sort_by(|a, b| cmp(&a.1, &b.1).then_with(|| ean_key(&a.0).cmp(&ean_key(&b.0))));
    let mut out: Vec<(String, T, u32)> = Vec::new();
    let mut group = 0u32;
    for (i, (e, k)) in items.into_iter().enumerate() {
        if i > 0 && cmp(&out[i - 1].1, &k) != Ordering::Equal {
            group += 1;
        }
        out.push((e, k, group));
    }
    out
}

// ---- bag-of-words family ----

pub struct DenseMatrix {
    rows: HashMap<String, Vec<u8>>,
}

impl DenseMatrix {
    pub fn new(descs: &[Descriptor]) -> Self {
        let mut vocab: Vec<&str> = Vec::new();
        for d in descs {
            for t in &d.tokens {
                if !vocab.contains(&t.as_str()) {
                    vocab.push(t);
                }
            }
        }
        let rows = descs
            .iter()
            .map(|d| {
                let row = vocab.iter().map(|v| d.tokens.iter().any(|t| t == v) as u8).collect();
                (d.product_ref.clone(), row)
            })
            .collect();
        DenseMatrix { rows }
    }

    /// Σ_k |X[i,k] − X[j,k]|
    pub fn l1(&self, a: &str, b: &str) -> u32 {
        let (x, y) = (&self.rows[a], &self.rows[b]);
        x.iter().zip(y).map(|(&p, &q)| (p as i32 - q as i32).unsigned_abs()).sum()
    }
}

fn variety_peers<'a>(cat: &'a Catalog, src: &'a Product) -> impl Iterator<Item = &'a Product> + 'a {
    cat.products().iter().filter(move |q| q.variety == src.variety && q.ean != src.ean)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CfKey {
    Content(u32),
    Package(u32, f64),
    Health { d_a: u8, c: f64, n_h: usize, n_pl: usize },
}

fn allergen_similarity(w: &WithoutVocabulary, p: &str, q: &str) -> u8 {
    let wp = w.per_product.get(p).cloned().unwrap_or_default();
    let wq = w.per_product.get(q).cloned().unwrap_or_default();
    for a in &w.allergen_subset {
        if wp.contains(a) && !wq.contains(a) {
            return 0;
        }
    }
    1
}

pub fn rscf_oracle(
    cat: &Catalog,
    matrix: &DenseMatrix,
    without: &WithoutVocabulary,
    ingredients: &[Descriptor],
    src: &str,
    approach: Approach,
) -> Vec<(String, CfKey, u32)> {
    let p = cat.products().iter().find(|x| x.ean == src).unwrap();
    let mut items = Vec::new();
    for q in variety_peers(cat, p) {
        let key = match approach {
            Approach::ProCom => CfKey::Content(matrix.l1(&p.ean, &q.ean)),
            Approach::PkBd => {
                let Some(sq) = q.servings else { continue };
                CfKey::Package(matrix.l1(&p.ean, &q.ean), (p.servings.unwrap() - sq).abs())
            }
            Approach::HthBd => {
                let (Some(f), Some(s)) = (q.nutrition.fat_g, q.nutrition.sugar_g) else { continue };
                CfKey::Health {
                    d_a: allergen_similarity(without, &p.ean, &q.ean),
                    c: f + s,
                    n_h: without.per_product.get(&q.ean).map_or(0, Vec::len),
                    n_pl: ingredients.iter().find(|d| d.product_ref == q.ean).map_or(0, |d| d.tokens.len()),
                }
            }
        };
        items.push((q.ean.clone(), key));
    }
    sort_with_groups(items, |a, b| match (a, b) {
        (CfKey::Content(x), CfKey::Content(y)) => x.cmp(y),
        (CfKey::Package(x1, x2), CfKey::Package(y1, y2)) => x1.cmp(y1).then(x2.partial_cmp(y2).unwrap()),
        (
            CfKey::Health { d_a: a1, c: c1, n_h: h1, n_pl: l1 },
            CfKey::Health { d_a: a2, c: c2, n_h: h2, n_pl: l2 },
        ) => a2
            .cmp(a1)
            .then(c1.partial_cmp(c2).unwrap())
            .then(h2.cmp(h1))
            .then(l1.cmp(l2)),
        _ => unreachable!(),
    })
}

// ---- embedding family ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Cosine,
    Jaccard,
    Euclidean,
    Manhattan,
}

pub const MEASURES: [Measure; 4] = [Measure::Cosine, Measure::Jaccard, Measure::Euclidean, Measure::Manhattan];

impl Measure {
    pub fn is_similarity(self) -> bool {
        matches!(self, Measure::Cosine | Measure::Jaccard)
    }
}

pub fn o_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn o_euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s.sqrt()
}

pub fn o_manhattan(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).abs();
    }
    s
}

pub fn o_jaccard(a: &[String], b: &[String]) -> f64 {
    let mut inter = 0usize;
    let mut union: Vec<&String> = Vec::new();
    for x in a.iter().chain(b) {
        if !union.contains(&x) {
            union.push(x);
        }
    }
    for x in &union {
        if a.contains(x) && b.contains(x) {
            inter += 1;
        }
    }
    if union.is_empty() {
        1.0
    } else {
        inter as f64 / union.len() as f64
    }
}

fn allergen_subset(q: &Product, p: &Product) -> bool {
    Allergen::ALL.iter().all(|&a| !q.allergens.contains(a) || p.allergens.contains(a))
}

pub fn nn_pool<'a>(cat: &'a Catalog, p: &Product) -> Vec<&'a Product> {
    let other = p.variety.trim().eq_ignore_ascii_case("other");
    cat.products()
        .iter()
        .filter(|q| q.ean != p.ean)
        .filter(|q| if other { q.subcategory == p.subcategory } else { q.variety == p.variety })
        .filter(|q| q.brand_attribute == p.brand_attribute)
        .filter(|q| allergen_subset(q, p))
        .collect()
}

pub fn o_nutrition(p: &Product) -> f64 {
    let n = &p.nutrition;
    let f = n.fat_g.unwrap();
    let carbs = n.carbs_g.unwrap();
    let gf = (n.good_fat_pct.unwrap() / 100.0) * f;
    let df = (n.dietary_fiber_pct.unwrap() / 100.0) * carbs;
    n.protein_g.unwrap() * 100.0
        + gf * 200.0
        + df * 300.0
        + n.salt_g.unwrap() * 400.0
        + n.sugar_g.unwrap() * 500.0
        + carbs * 600.0
        + n.saturated_fat_g.unwrap() * 700.0
        + f * 800.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnStages {
    pub d_base: f64,
    pub d_r: f64,
    pub d_m: f64,
    pub d_h: f64,
    pub d_se: f64,
}

pub const EPS: f64 = 1e-9;

pub fn nn_stages(
    p: &Product,
    q: &Product,
    m: Measure,
    vectors: &HashMap<String, Vec<f64>>,
    tokens: &HashMap<String, Vec<String>>,
) -> NnStages {
    let d_base = match m {
        Measure::Cosine => o_cosine(&vectors[&p.ean], &vectors[&q.ean]),
        Measure::Euclidean => o_euclidean(&vectors[&p.ean], &vectors[&q.ean]),
        Measure::Manhattan => o_manhattan(&vectors[&p.ean], &vectors[&q.ean]),
        Measure::Jaccard => o_jaccard(&tokens[&p.ean], &tokens[&q.ean]),
    };
    let (pp, pq) = (p.price.unwrap(), q.price.unwrap());
    let ratio = if pp <= pq { pp / pq } else { pq / pp };
    let d_r = if m.is_similarity() {
        d_base * ratio
    } else {
        ratio / if d_base > EPS { d_base } else { EPS }
    };
    let brand = p.brand == q.brand;
    let btype = p.brand_type == q.brand_type;
    let w = if brand && btype {
        100.0
    } else if brand || btype {
        10.0
    } else {
        1.0
    };
    let d_m = d_r * w;
    let d_h = o_nutrition(q) / if d_m > EPS { d_m } else { EPS };
    let (sp, sq) = (p.servings.unwrap(), q.servings.unwrap());
    let sratio = if sp <= sq { sp / sq } else { sq / sp };
    let d_se = sratio / if d_h > EPS { d_h } else { EPS };
    NnStages { d_base, d_r, d_m, d_h, d_se }
}

pub fn rsnn_oracle(
    cat: &Catalog,
    src: &str,
    approach: Approach,
    m: Measure,
    vectors: &HashMap<String, Vec<f64>>,
    tokens: &HashMap<String, Vec<String>>,
) -> Vec<(String, NnStages, u32)> {
    let p = cat.products().iter().find(|x| x.ean == src).unwrap();
    let items: Vec<(String, NnStages)> = nn_pool(cat, p)
        .into_iter()
        .map(|q| (q.ean.clone(), nn_stages(p, q, m, vectors, tokens)))
        .collect();
    match approach {
        Approach::ProCom => sort_with_groups(items, |a, b| b.d_m.partial_cmp(&a.d_m).unwrap()),
        Approach::HthBd => sort_with_groups(items, |a, b| a.d_h.partial_cmp(&b.d_h).unwrap()),
        Approach::PkBd => sort_with_groups(items, |a, b| b.d_se.partial_cmp(&a.d_se).unwrap()),
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
