//! Product data model, CSV ingestion, cleaning rules and a seeded synthetic
//! catalog generator.
//!
//! Two tabular layouts are understood. The base layout (`DS1`) carries the
//! taxonomy, the label texts, servings, package size and fat/sugar. The
//! extended layout (`DS2`) adds brand type and attribute, price, the rest
//! of the nutrition table and one 0/1 column per allergen.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MESSAGE_COLUMNS: usize = 13;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header does not match schema {schema}: expected `{expected}`, found `{found}`")]
    HeaderMismatch {
        schema: SchemaVersion,
        expected: String,
        found: String,
    },
    #[error("line {line}, column {column}: {message}")]
    Malformed {
        line: u64,
        column: String,
        message: String,
    },
    #[error("line {line}: unknown unit `{value}`")]
    UnknownUnit { line: u64, value: String },
    #[error("line {line}, column {column}: negative value {value}")]
    NegativeValue {
        line: u64,
        column: String,
        value: f64,
    },
    #[error("every variety was filtered out (threshold {threshold})")]
    NoVarietySurvives { threshold: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemaVersion {
    #[serde(rename = "DS1")]
    Ds1,
    #[serde(rename = "DS2")]
    Ds2,
}

impl fmt::Display for SchemaVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaVersion::Ds1 => f.write_str("DS1"),
            SchemaVersion::Ds2 => f.write_str("DS2"),
        }
    }
}

impl std::str::FromStr for SchemaVersion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "DS1" => Ok(SchemaVersion::Ds1),
            "DS2" => Ok(SchemaVersion::Ds2),
            other => Err(format!("unknown schema version `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    G,
    Ml,
    Units,
}

impl Unit {
    pub fn as_str(self) -> &'static str {
        match self {
            Unit::G => "g",
            Unit::Ml => "ml",
            Unit::Units => "units",
        }
    }

    pub fn parse(s: &str) -> Option<Unit> {
        match s {
            "g" => Some(Unit::G),
            "ml" => Some(Unit::Ml),
            "units" => Some(Unit::Units),
            _ => None,
        }
    }
}

/// Nutrition table. Each field is optional because the base layout only
/// carries fat and sugar.
///
/// `dietary_fiber_pct` is a percentage of carbohydrates and `good_fat_pct`
/// a percentage of fat, both as stored in the source data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NutritionFacts {
    pub fat_g: Option<f64>,
    pub sugar_g: Option<f64>,
    pub carbs_g: Option<f64>,
    pub dietary_fiber_pct: Option<f64>,
    pub saturated_fat_g: Option<f64>,
    pub good_fat_pct: Option<f64>,
    pub protein_g: Option<f64>,
    pub salt_g: Option<f64>,
}

impl NutritionFacts {
    /// Fat plus sugar, when both are known.
    pub fn fat_plus_sugar(&self) -> Option<f64> {
        Some(self.fat_g? + self.sugar_g?)
    }

    pub fn is_complete(&self) -> bool {
        [
            self.fat_g,
            self.sugar_g,
            self.carbs_g,
            self.dietary_fiber_pct,
            self.saturated_fat_g,
            self.good_fat_pct,
            self.protein_g,
            self.salt_g,
        ]
        .iter()
        .all(Option::is_some)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allergen {
    Nuts,
    Egg,
    Hazelnuts,
    Fish,
    Sulfates,
    Peanuts,
    Mollusks,
    Lupine,
    Gluten,
    Mustard,
    Soy,
    Crustaceans,
    MilkLactose,
    SunflowerSeeds,
    Sesame,
    Celery,
}

impl Allergen {
    pub const ALL: [Allergen; 16] = [
        Allergen::Nuts,
        Allergen::Egg,
        Allergen::Hazelnuts,
        Allergen::Fish,
        Allergen::Sulfates,
        Allergen::Peanuts,
        Allergen::Mollusks,
        Allergen::Lupine,
        Allergen::Gluten,
        Allergen::Mustard,
        Allergen::Soy,
        Allergen::Crustaceans,
        Allergen::MilkLactose,
        Allergen::SunflowerSeeds,
        Allergen::Sesame,
        Allergen::Celery,
    ];

    /// CSV column header.
    pub fn column(self) -> &'static str {
        match self {
            Allergen::Nuts => "Nuts",
            Allergen::Egg => "Egg",
            Allergen::Hazelnuts => "Hazelnuts",
            Allergen::Fish => "Fish",
            Allergen::Sulfates => "Sulfates",
            Allergen::Peanuts => "Peanuts",
            Allergen::Mollusks => "Mollusks",
            Allergen::Lupine => "Lupine",
            Allergen::Gluten => "Gluten",
            Allergen::Mustard => "Mustard",
            Allergen::Soy => "Soy",
            Allergen::Crustaceans => "Crustaceans",
            Allergen::MilkLactose => "MilkLactose",
            Allergen::SunflowerSeeds => "SunflowerSeeds",
            Allergen::Sesame => "Sesame",
            Allergen::Celery => "Celery",
        }
    }

    /// Plain-words label, used when allergen features are folded into text.
    pub fn label(self) -> &'static str {
        match self {
            Allergen::Nuts => "nuts",
            Allergen::Egg => "egg",
            Allergen::Hazelnuts => "hazelnuts",
            Allergen::Fish => "fish",
            Allergen::Sulfates => "sulfates",
            Allergen::Peanuts => "peanuts",
            Allergen::Mollusks => "mollusks",
            Allergen::Lupine => "lupine",
            Allergen::Gluten => "gluten",
            Allergen::Mustard => "mustard",
            Allergen::Soy => "soy",
            Allergen::Crustaceans => "crustaceans",
            Allergen::MilkLactose => "milk lactose",
            Allergen::SunflowerSeeds => "sunflower seeds",
            Allergen::Sesame => "sesame",
            Allergen::Celery => "celery",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

/// Set of allergens a product contains.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct AllergenFlags(u16);

impl AllergenFlags {
    pub fn empty() -> Self {
        AllergenFlags(0)
    }

    pub fn from_bits(bits: u16) -> Self {
        AllergenFlags(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, allergen: Allergen) -> bool {
        self.0 & allergen.bit() != 0
    }

    pub fn insert(&mut self, allergen: Allergen) {
        self.0 |= allergen.bit();
    }

    pub fn with(mut self, allergen: Allergen) -> Self {
        self.insert(allergen);
        self
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_subset_of(self, other: AllergenFlags) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Allergen> {
        Allergen::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Allergen> for AllergenFlags {
    fn from_iter<I: IntoIterator<Item = Allergen>>(iter: I) -> Self {
        let mut flags = AllergenFlags::empty();
        for a in iter {
            flags.insert(a);
        }
        flags
    }
}

impl Serialize for AllergenFlags {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for AllergenFlags {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let items = Vec::<Allergen>::deserialize(deserializer)?;
        Ok(items.into_iter().collect())
    }
}

/// One catalog row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub ean: String,
    pub category: String,
    pub subcategory: String,
    pub variety: String,
    pub brand: String,
    pub brand_type: Option<String>,
    pub brand_attribute: Option<String>,
    pub name: String,
    pub legal_name: String,
    pub ingredients: String,
    /// Number of persons the package serves.
    pub servings: Option<f64>,
    pub size: Option<f64>,
    pub unit: Option<Unit>,
    pub price: Option<f64>,
    pub nutrition: NutritionFacts,
    /// Non-empty package messages, at most [`MESSAGE_COLUMNS`].
    pub messages: Vec<String>,
    pub allergens: AllergenFlags,
}

impl Product {
    /// A product with only the identifying fields set; handy for fixtures.
    pub fn new(ean: impl Into<String>, variety: impl Into<String>) -> Self {
        Product {
            ean: ean.into(),
            category: String::new(),
            subcategory: String::new(),
            variety: variety.into(),
            brand: String::new(),
            brand_type: None,
            brand_attribute: None,
            name: String::new(),
            legal_name: String::new(),
            ingredients: String::new(),
            servings: None,
            size: None,
            unit: None,
            price: None,
            nutrition: NutritionFacts::default(),
            messages: Vec::new(),
            allergens: AllergenFlags::empty(),
        }
    }

    /// Whether this product sits in the catch-all variety, in which case
    /// alternatives are drawn from the whole subcategory.
    pub fn in_other_variety(&self) -> bool {
        self.variety.trim().eq_ignore_ascii_case("other")
    }
}

/// An ordered product collection tagged with its source layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    products: Vec<Product>,
    schema: SchemaVersion,
    provenance: String,
    index: HashMap<String, usize>,
}

impl Catalog {
    pub fn new(products: Vec<Product>, schema: SchemaVersion, provenance: impl Into<String>) -> Self {
        let mut index = HashMap::with_capacity(products.len());
        for (i, p) in products.iter().enumerate() {
            index.entry(p.ean.clone()).or_insert(i);
        }
        Catalog {
            products,
            schema,
            provenance: provenance.into(),
            index,
        }
    }

    pub fn products(&self) -> &[Product] {
        &self.products
    }

    pub fn schema(&self) -> SchemaVersion {
        self.schema
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    /// First product carrying `ean`.
    pub fn get(&self, ean: &str) -> Option<&Product> {
        self.index.get(ean).map(|&i| &self.products[i])
    }

    pub fn position(&self, ean: &str) -> Option<usize> {
        self.index.get(ean).copied()
    }

    pub fn variety_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for p in &self.products {
            *counts.entry(p.variety.as_str()).or_insert(0) += 1;
        }
        counts
    }

    pub fn variety_size(&self, variety: &str) -> usize {
        self.products.iter().filter(|p| p.variety == variety).count()
    }

    pub fn in_variety<'a>(&'a self, variety: &'a str) -> impl Iterator<Item = &'a Product> + 'a {
        self.products.iter().filter(move |p| p.variety == variety)
    }

    pub fn into_products(self) -> Vec<Product> {
        self.products
    }
}

fn base_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "EAN",
        "Category",
        "Subcategory",
        "Variety",
        "Brand",
        "Name",
        "LegalName",
        "Ingredients",
        "Servings",
        "Size",
        "Unit",
        "Fat",
        "Sugar",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((1..=MESSAGE_COLUMNS).map(|i| format!("Message{i}")));
    cols
}

/// Header row for a schema version.
pub fn header(schema: SchemaVersion) -> Vec<String> {
    let mut cols = base_columns();
    if schema == SchemaVersion::Ds2 {
        cols.extend(
            [
                "BrandType",
                "BrandAttribute",
                "Price",
                "Carbs",
                "DietaryFiberPct",
                "SaturatedFat",
                "GoodFatPct",
                "Protein",
                "Salt",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        cols.extend(Allergen::ALL.iter().map(|a| a.column().to_string()));
    }
    cols
}

struct RowReader<'r> {
    record: &'r csv::StringRecord,
    header: &'r [String],
    line: u64,
}

impl RowReader<'_> {
    fn text(&self, idx: usize) -> &str {
        self.record.get(idx).unwrap_or("")
    }

    fn opt_text(&self, idx: usize) -> Option<String> {
        let s = self.text(idx);
        (!s.is_empty()).then(|| s.to_string())
    }

    fn number(&self, idx: usize) -> Result<Option<f64>, CatalogError> {
        let raw = self.text(idx);
        if raw.is_empty() {
            return Ok(None);
        }
        let value: f64 = raw.parse().map_err(|_| CatalogError::Malformed {
            line: self.line,
            column: self.header[idx].clone(),
            message: format!("`{raw}` is not a number"),
        })?;
        if !value.is_finite() {
            return Err(CatalogError::Malformed {
                line: self.line,
                column: self.header[idx].clone(),
                message: format!("`{raw}` is not finite"),
            });
        }
        if value < 0.0 {
            return Err(CatalogError::NegativeValue {
                line: self.line,
                column: self.header[idx].clone(),
                value,
            });
        }
        Ok(Some(value))
    }

    fn positive(&self, idx: usize) -> Result<Option<f64>, CatalogError> {
        let value = self.number(idx)?;
        if value == Some(0.0) {
            return Err(CatalogError::Malformed {
                line: self.line,
                column: self.header[idx].clone(),
                message: "must be greater than zero".into(),
            });
        }
        Ok(value)
    }

    fn percent(&self, idx: usize) -> Result<Option<f64>, CatalogError> {
        let value = self.number(idx)?;
        if value.is_some_and(|v| v > 100.0) {
            return Err(CatalogError::Malformed {
                line: self.line,
                column: self.header[idx].clone(),
                message: "percentage above 100".into(),
            });
        }
        Ok(value)
    }

    fn flag(&self, idx: usize) -> Result<bool, CatalogError> {
        match self.text(idx) {
            "" | "0" => Ok(false),
            "1" => Ok(true),
            other => Err(CatalogError::Malformed {
                line: self.line,
                column: self.header[idx].clone(),
                message: format!("expected 0 or 1, found `{other}`"),
            }),
        }
    }
}

/// Parses a catalog from CSV text whose header must match `schema` exactly.
pub fn read_catalog<R: Read>(
    reader: R,
    schema: SchemaVersion,
    provenance: impl Into<String>,
) -> Result<Catalog, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let expected = header(schema);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(CatalogError::HeaderMismatch {
            schema,
            expected: expected.join(","),
            found: found.join(","),
        });
    }

    let mut products = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row = RowReader {
            record: &record,
            header: &expected,
            line,
        };
        products.push(parse_row(&row, schema)?);
    }
    Ok(Catalog::new(products, schema, provenance))
}

fn parse_row(row: &RowReader<'_>, schema: SchemaVersion) -> Result<Product, CatalogError> {
    let unit = match row.text(10) {
        "" => None,
        raw => Some(Unit::parse(raw).ok_or_else(|| CatalogError::UnknownUnit {
            line: row.line,
            value: raw.to_string(),
        })?),
    };
    let messages = (0..MESSAGE_COLUMNS)
        .map(|i| row.text(13 + i))
        .filter(|m| !m.is_empty())
        .map(str::to_string)
        .collect();

    let mut product = Product {
        ean: row.text(0).to_string(),
        category: row.text(1).to_string(),
        subcategory: row.text(2).to_string(),
        variety: row.text(3).to_string(),
        brand: row.text(4).to_string(),
        brand_type: None,
        brand_attribute: None,
        name: row.text(5).to_string(),
        legal_name: row.text(6).to_string(),
        ingredients: row.text(7).to_string(),
        servings: row.positive(8)?,
        size: row.positive(9)?,
        unit,
        price: None,
        nutrition: NutritionFacts {
            fat_g: row.number(11)?,
            sugar_g: row.number(12)?,
            ..NutritionFacts::default()
        },
        messages,
        allergens: AllergenFlags::empty(),
    };

    if schema == SchemaVersion::Ds2 {
        let base = 13 + MESSAGE_COLUMNS;
        product.brand_type = row.opt_text(base);
        product.brand_attribute = row.opt_text(base + 1);
        product.price = row.number(base + 2)?;
        product.nutrition.carbs_g = row.number(base + 3)?;
        product.nutrition.dietary_fiber_pct = row.percent(base + 4)?;
        product.nutrition.saturated_fat_g = row.number(base + 5)?;
        product.nutrition.good_fat_pct = row.percent(base + 6)?;
        product.nutrition.protein_g = row.number(base + 7)?;
        product.nutrition.salt_g = row.number(base + 8)?;
        for (i, allergen) in Allergen::ALL.iter().enumerate() {
            if row.flag(base + 9 + i)? {
                product.allergens.insert(*allergen);
            }
        }
    }
    Ok(product)
}

pub fn load_catalog(path: impl AsRef<Path>, schema: SchemaVersion) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_catalog(file, schema, path.display().to_string())
}

/// Schema whose header the file carries.
pub fn detect_schema(path: impl AsRef<Path>) -> Result<SchemaVersion, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    for schema in [SchemaVersion::Ds1, SchemaVersion::Ds2] {
        if found == header(schema) {
            return Ok(schema);
        }
    }
    Err(CatalogError::HeaderMismatch {
        schema: SchemaVersion::Ds2,
        expected: header(SchemaVersion::Ds2).join(","),
        found: found.join(","),
    })
}

/// [`load_catalog`] with the schema taken from the header.
pub fn load_catalog_auto(path: impl AsRef<Path>) -> Result<Catalog, CatalogError> {
    let schema = detect_schema(&path)?;
    load_catalog(path, schema)
}

fn fmt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the canonical CSV form of a catalog in its own schema.
pub fn write_catalog<W: Write>(catalog: &Catalog, writer: W) -> Result<(), CatalogError> {
    let schema = catalog.schema();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(header(schema))?;
    for p in catalog.products() {
        let mut row: Vec<String> = vec![
            p.ean.clone(),
            p.category.clone(),
            p.subcategory.clone(),
            p.variety.clone(),
            p.brand.clone(),
            p.name.clone(),
            p.legal_name.clone(),
            p.ingredients.clone(),
            fmt_num(p.servings),
            fmt_num(p.size),
            p.unit.map(|u| u.as_str().to_string()).unwrap_or_default(),
            fmt_num(p.nutrition.fat_g),
            fmt_num(p.nutrition.sugar_g),
        ];
        for i in 0..MESSAGE_COLUMNS {
            row.push(p.messages.get(i).cloned().unwrap_or_default());
        }
        if schema == SchemaVersion::Ds2 {
            let n = &p.nutrition;
            row.push(p.brand_type.clone().unwrap_or_default());
            row.push(p.brand_attribute.clone().unwrap_or_default());
            row.push(fmt_num(p.price));
            for v in [
                n.carbs_g,
                n.dietary_fiber_pct,
                n.saturated_fat_g,
                n.good_fat_pct,
                n.protein_g,
                n.salt_g,
            ] {
                row.push(fmt_num(v));
            }
            for a in Allergen::ALL {
                row.push(if p.allergens.contains(a) { "1" } else { "0" }.to_string());
            }
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn catalog_to_csv(catalog: &Catalog) -> Vec<u8> {
    let mut buf = Vec::new();
    write_catalog(catalog, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn blank(s: &str) -> bool {
    s.trim().is_empty()
}

fn blank_opt(s: &Option<String>) -> bool {
    s.as_deref().is_none_or(blank)
}

/// Removes incomplete and duplicate rows.
///
/// Base layout: rows with an empty name or no servings are dropped. Extended
/// layout: rows with an empty name, brand, brand type, brand attribute,
/// variety, ingredients or legal name are dropped, as are rows repeating an
/// earlier (name, brand) pair. In both layouts rows with an empty EAN or an
/// empty variety are dropped and a repeated EAN keeps its first occurrence.
pub fn clean_catalog(catalog: &Catalog) -> Catalog {
    let schema = catalog.schema();
    let mut seen_ean = HashSet::new();
    let mut seen_name_brand = HashSet::new();
    let products = catalog
        .products()
        .iter()
        .filter(|p| {
            if blank(&p.ean) || blank(&p.variety) || blank(&p.name) {
                return false;
            }
            match schema {
                SchemaVersion::Ds1 => p.servings.is_some(),
                SchemaVersion::Ds2 => {
                    !(blank(&p.brand)
                        || blank_opt(&p.brand_type)
                        || blank_opt(&p.brand_attribute)
                        || blank(&p.ingredients)
                        || blank(&p.legal_name))
                }
            }
        })
        .filter(|p| seen_ean.insert(p.ean.clone()))
        .filter(|p| schema == SchemaVersion::Ds1 || seen_name_brand.insert((p.name.clone(), p.brand.clone())))
        .cloned()
        .collect();
    Catalog::new(products, schema, catalog.provenance())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarietyPolicy {
    /// Drop varieties with fewer than this many products.
    MinCount(usize),
    /// Drop varieties below the nearest-rank 25th percentile of per-variety
    /// product counts.
    FirstQuartile,
}

#[derive(Debug, Clone)]
pub struct VarietySelection {
    pub catalog: Catalog,
    pub threshold: usize,
    pub surviving_varieties: usize,
}

/// Nearest-rank percentile of a list of counts; `pct` in (0, 100].
pub fn nearest_rank_percentile(counts: &[usize], pct: f64) -> Option<usize> {
    if counts.is_empty() {
        return None;
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn select_varieties(catalog: &Catalog, policy: VarietyPolicy) -> Result<VarietySelection, CatalogError> {
    let counts = catalog.variety_counts();
    let threshold = match policy {
        VarietyPolicy::MinCount(n) => n,
        VarietyPolicy::FirstQuartile => {
            let values: Vec<usize> = counts.values().copied().collect();
            nearest_rank_percentile(&values, 25.0).unwrap_or(0)
        }
    };
    let keep: HashSet<&str> = counts
        .iter()
        .filter(|(_, &c)| c >= threshold)
        .map(|(v, _)| *v)
        .collect();
    if keep.is_empty() {
        return Err(CatalogError::NoVarietySurvives { threshold });
    }
    let products = catalog
        .products()
        .iter()
        .filter(|p| keep.contains(p.variety.as_str()))
        .cloned()
        .collect();
    Ok(VarietySelection {
        catalog: Catalog::new(products, catalog.schema(), catalog.provenance()),
        threshold,
        surviving_varieties: keep.len(),
    })
}

/// Parameters of the synthetic catalog generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_varieties: usize,
    pub products_per_variety: usize,
    /// Words private to each variety's ingredient vocabulary.
    pub variety_pool_size: usize,
    /// Words shared by every variety.
    pub shared_pool_size: usize,
    pub words_per_product: usize,
    /// Probability that a product carries each of its variety's allergens.
    pub allergen_probability: f64,
    /// Probability of each package message slot being filled.
    pub message_probability: f64,
    pub n_brands: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_varieties: 6,
            products_per_variety: 20,
            variety_pool_size: 24,
            shared_pool_size: 12,
            words_per_product: 8,
            allergen_probability: 0.35,
            message_probability: 0.3,
            n_brands: 6,
            seed: 7,
        }
    }
}

const SYLLABLES: [&str; 30] = [
    "ba", "ke", "lo", "mi", "nu", "ra", "se", "ti", "vo", "za", "pe", "qui", "do", "fa", "gu", "ha",
    "je", "ly", "mo", "ne", "po", "ri", "su", "to", "ve", "wa", "xo", "ce", "bri", "sta",
];

const BRAND_TYPES: [&str; 3] = ["manufacturer", "white", "premium"];

const PACKAGE_MESSAGES: [&str; 14] = [
    "Without gluten",
    "without lactose",
    "Without Sugar. ",
    "without preservatives",
    "without nuts, may contain traces",
    "without egg",
    "low fat",
    "high protein",
    "without palm oil",
    "without soy",
    "without milk and its derivatives",
    "Room temperature",
    "Keep refrigerated",
    "without colorings",
];

fn pseudo_word(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let word: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if crate::textprep::Language::English.stopwords().contains(&word) {
            continue;
        }
        if used.insert(word.clone()) {
            return word;
        }
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Generates an extended-layout catalog. Deterministic given `spec.seed`.
///
/// Products of a variety draw their ingredient words mostly from the
/// variety's private pool, so intra-variety texts overlap. Prices are
/// synthetic.
pub fn generate_synthetic_catalog(spec: &SyntheticSpec) -> Catalog {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used = HashSet::new();
    let shared: Vec<String> = (0..spec.shared_pool_size).map(|_| pseudo_word(&mut rng, &mut used)).collect();
    let brands: Vec<String> = (0..spec.n_brands.max(1))
        .map(|_| {
            let w = pseudo_word(&mut rng, &mut used);
            let mut c = w.chars();
            c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or(w)
        })
        .collect();

    let mut products = Vec::with_capacity(spec.n_varieties * spec.products_per_variety);
    let mut serial: u64 = 0;
    for v in 0..spec.n_varieties {
        let pool: Vec<String> = (0..spec.variety_pool_size.max(1))
            .map(|_| pseudo_word(&mut rng, &mut used))
            .collect();
        let mut allergens_pool: Vec<Allergen> = Allergen::ALL.to_vec();
        allergens_pool.shuffle(&mut rng);
        allergens_pool.truncate(3);
        let liquid = rng.random_bool(0.5);
        let subcategory = format!("Subcategory {}", v / 3);
        let category = format!("Category {}", v / 6);
        let variety = format!("Variety {v:02}");

        for _ in 0..spec.products_per_variety {
            let ean = format!("{}", 84_000_000 + serial * 37 + rng.random_range(0..37u64));
            serial += 1;
            let pick = |rng: &mut ChaCha8Rng| -> String {
                if !shared.is_empty() && rng.random_bool(0.2) {
                    shared.choose(rng).expect("non-empty").clone()
                } else {
                    pool.choose(rng).expect("non-empty").clone()
                }
            };
            let mut ingredients: Vec<String> = (0..spec.words_per_product.max(1)).map(|_| pick(&mut rng)).collect();
            if rng.random_bool(0.3) {
                let pct = rng.random_range(1..60);
                if let Some(last) = ingredients.last_mut() {
                    *last = format!("{last} ({pct}%)");
                }
            }
            let name = format!("{} {}", pick(&mut rng), pick(&mut rng));
            let legal_name = format!("{} {}", pick(&mut rng), pick(&mut rng));

            let mut allergens = AllergenFlags::empty();
            for a in &allergens_pool {
                if spec.allergen_probability > 0.0 && rng.random_bool(spec.allergen_probability.min(1.0)) {
                    allergens.insert(*a);
                }
            }
            let mut messages = Vec::new();
            for _ in 0..3 {
                if spec.message_probability > 0.0 && rng.random_bool(spec.message_probability.min(1.0)) {
                    let m = PACKAGE_MESSAGES.choose(&mut rng).expect("non-empty").to_string();
                    if !messages.contains(&m) {
                        messages.push(m);
                    }
                }
            }
            let fat = round2(rng.random_range(0.0..30.0));
            let carbs = round2(rng.random_range(0.0..60.0));
            let sugar = round2(rng.random_range(0.0..carbs.max(0.01)));
            let brand_attribute = if rng.random_bool(0.2) { "without gluten" } else { "standard" };

            products.push(Product {
                ean,
                category: category.clone(),
                subcategory: subcategory.clone(),
                variety: variety.clone(),
                brand: brands.choose(&mut rng).expect("non-empty").clone(),
                brand_type: Some(BRAND_TYPES.choose(&mut rng).expect("non-empty").to_string()),
                brand_attribute: Some(brand_attribute.to_string()),
                name,
                legal_name,
                ingredients: ingredients.join(", "),
                servings: Some(rng.random_range(1..=6) as f64),
                size: Some(*[100.0, 250.0, 330.0, 500.0, 750.0, 1000.0].choose(&mut rng).expect("non-empty")),
                unit: Some(if liquid { Unit::Ml } else { Unit::G }),
                price: Some(round2(rng.random_range(0.5..12.0))),
                nutrition: NutritionFacts {
                    fat_g: Some(fat),
                    sugar_g: Some(sugar),
                    carbs_g: Some(carbs),
                    dietary_fiber_pct: Some(round2(rng.random_range(0.0..40.0))),
                    saturated_fat_g: Some(round2(rng.random_range(0.0..fat.max(0.01)))),
                    good_fat_pct: Some(round2(rng.random_range(0.0..100.0))),
                    protein_g: Some(round2(rng.random_range(0.0..25.0))),
                    salt_g: Some(round2(rng.random_range(0.0..3.0))),
                },
                messages,
                allergens,
            });
        }
    }
    Catalog::new(products, SchemaVersion::Ds2, format!("synthetic(seed={})", spec.seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds1_csv(rows: &[&str]) -> String {
        let mut s = header(SchemaVersion::Ds1).join(",");
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn ds1_row(ean: &str, variety: &str, name: &str, servings: &str, unit: &str) -> String {
        let mut cells = vec![
            ean.to_string(),
            "Fresh".into(),
            "Fish".into(),
            variety.into(),
            "Generic".into(),
            name.into(),
            "Legal".into(),
            "\"water, salt\"".into(),
            servings.into(),
            "330".into(),
            unit.into(),
            "2.8".into(),
            "0".into(),
        ];
        cells.push("without sugar".into());
        cells.extend(std::iter::repeat_n(String::new(), MESSAGE_COLUMNS - 1));
        cells.join(",")
    }

    #[test]
    fn loads_four_row_ds1_fixture() {
        let rows: Vec<String> = (0..4).map(|i| ds1_row(&format!("{}", 100 + i), "Other", "Congrio", "1", "ml")).collect();
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let cat = read_catalog(ds1_csv(&refs).as_bytes(), SchemaVersion::Ds1, "fixture").unwrap();
        assert_eq!(cat.len(), 4);
        let p = cat.get("101").unwrap();
        assert_eq!(p.unit, Some(Unit::Ml));
        assert_eq!(p.nutrition.fat_g, Some(2.8));
        assert_eq!(p.messages, vec!["without sugar".to_string()]);
        assert_eq!(p.price, None);
    }

    #[test]
    fn unknown_unit_is_rejected() {
        let row = ds1_row("1", "Lager", "Beer", "3", "kg");
        let err = read_catalog(ds1_csv(&[&row]).as_bytes(), SchemaVersion::Ds1, "x").unwrap_err();
        assert!(matches!(err, CatalogError::UnknownUnit { line: 2, ref value } if value == "kg"));
    }

    #[test]
    fn negative_and_malformed_numbers_report_column() {
        let row = ds1_row("1", "Lager", "Beer", "-3", "g");
        let err = read_catalog(ds1_csv(&[&row]).as_bytes(), SchemaVersion::Ds1, "x").unwrap_err();
        assert!(matches!(err, CatalogError::NegativeValue { ref column, .. } if column == "Servings"));

        let row = ds1_row("1", "Lager", "Beer", "three", "g");
        let err = read_catalog(ds1_csv(&[&row]).as_bytes(), SchemaVersion::Ds1, "x").unwrap_err();
        assert!(matches!(err, CatalogError::Malformed { line: 2, ref column, .. } if column == "Servings"));
    }

    #[test]
    fn header_must_match_schema() {
        let row = ds1_row("1", "Lager", "Beer", "3", "g");
        let err = read_catalog(ds1_csv(&[&row]).as_bytes(), SchemaVersion::Ds2, "x").unwrap_err();
        assert!(matches!(err, CatalogError::HeaderMismatch { .. }));
    }

    #[test]
    fn ds2_allergen_columns_populate_flags() {
        let mut cat = generate_synthetic_catalog(&SyntheticSpec {
            n_varieties: 1,
            products_per_variety: 3,
            ..SyntheticSpec::default()
        })
        .into_products();
        cat[0].allergens = AllergenFlags::empty().with(Allergen::Nuts).with(Allergen::Celery);
        cat[1].allergens = AllergenFlags::empty();
        cat[2].allergens = AllergenFlags::empty().with(Allergen::MilkLactose);
        let csv = catalog_to_csv(&Catalog::new(cat, SchemaVersion::Ds2, "f"));
        let text = String::from_utf8(csv.clone()).unwrap();
        // hand-read: the last 16 cells of the first data row
        let first_row = text.lines().nth(1).unwrap();
        let flags: Vec<&str> = first_row.rsplit(',').take(16).collect();
        assert_eq!(flags[0], "1"); // Celery is the last column
        assert_eq!(flags[15], "1"); // Nuts is the first allergen column
        let loaded = read_catalog(csv.as_slice(), SchemaVersion::Ds2, "f").unwrap();
        let got: Vec<Vec<Allergen>> = loaded.products().iter().map(|p| p.allergens.iter().collect()).collect();
        assert_eq!(
            got,
            vec![vec![Allergen::Nuts, Allergen::Celery], vec![], vec![Allergen::MilkLactose]]
        );
    }

    #[test]
    fn clean_dedups_by_ean_keeping_first() {
        let mut products: Vec<Product> = (0..5)
            .map(|i| {
                let mut p = Product::new(format!("{i}"), "V");
                p.name = format!("n{i}");
                p.servings = Some(1.0);
                p
            })
            .collect();
        products[3].ean = "1".into();
        products[3].name = "dup".into();
        let cleaned = clean_catalog(&Catalog::new(products, SchemaVersion::Ds1, "t"));
        assert_eq!(cleaned.len(), 4);
        assert_eq!(cleaned.get("1").unwrap().name, "n1");
    }

    #[test]
    fn ds2_clean_drops_empty_ingredients_and_name_brand_duplicates() {
        let mut products = generate_synthetic_catalog(&SyntheticSpec {
            n_varieties: 1,
            products_per_variety: 6,
            ..SyntheticSpec::default()
        })
        .into_products();
        products[1].ingredients.clear();
        products[4].name = products[2].name.clone();
        products[4].brand = products[2].brand.clone();
        products[5].brand_type = None;
        let cleaned = clean_catalog(&Catalog::new(products.clone(), SchemaVersion::Ds2, "t"));
        let eans: Vec<&str> = cleaned.products().iter().map(|p| p.ean.as_str()).collect();
        assert_eq!(eans, vec![&products[0].ean, &products[2].ean, &products[3].ean]);
    }

    #[test]
    fn ds1_clean_drops_missing_name_or_servings() {
        let mut a = Product::new("1", "V");
        a.name = "x".into();
        a.servings = Some(2.0);
        let mut b = a.clone();
        b.ean = "2".into();
        b.servings = None;
        let mut c = a.clone();
        c.ean = "3".into();
        c.name = "  ".into();
        let cleaned = clean_catalog(&Catalog::new(vec![a, b, c], SchemaVersion::Ds1, "t"));
        assert_eq!(cleaned.len(), 1);
    }

    fn catalog_with_counts(counts: &[usize]) -> Catalog {
        let mut products = Vec::new();
        for (v, &n) in counts.iter().enumerate() {
            for i in 0..n {
                products.push(Product::new(format!("{v}-{i}"), format!("v{v}")));
            }
        }
        Catalog::new(products, SchemaVersion::Ds1, "t")
    }

    #[test]
    fn min_count_policy() {
        let cat = catalog_with_counts(&[2, 3, 10, 12]);
        let sel = select_varieties(&cat, VarietyPolicy::MinCount(4)).unwrap();
        assert_eq!(sel.surviving_varieties, 2);
        assert_eq!(sel.catalog.len(), 22);
        assert_eq!(sel.threshold, 4);
    }

    #[test]
    fn first_quartile_policy_nearest_rank() {
        // ceil(0.25 * 4) = 1 -> the smallest count
        let cat = catalog_with_counts(&[4, 8, 12, 16]);
        let sel = select_varieties(&cat, VarietyPolicy::FirstQuartile).unwrap();
        assert_eq!(sel.threshold, 4);
        assert_eq!(sel.surviving_varieties, 4);
        // ceil(0.25 * 5) = 2 -> second smallest
        let cat = catalog_with_counts(&[1, 5, 9, 20, 30]);
        let sel = select_varieties(&cat, VarietyPolicy::FirstQuartile).unwrap();
        assert_eq!(sel.threshold, 5);
        assert_eq!(sel.surviving_varieties, 4);
    }

    #[test]
    fn empty_selection_is_distinct_error() {
        let cat = catalog_with_counts(&[1, 2]);
        let err = select_varieties(&cat, VarietyPolicy::MinCount(4)).unwrap_err();
        assert!(matches!(err, CatalogError::NoVarietySurvives { threshold: 4 }));
    }

    #[test]
    fn synthetic_shape_and_determinism() {
        let spec = SyntheticSpec {
            n_varieties: 3,
            products_per_variety: 10,
            ..SyntheticSpec::default()
        };
        let a = generate_synthetic_catalog(&spec);
        let b = generate_synthetic_catalog(&spec);
        assert_eq!(a.len(), 30);
        assert_eq!(a.variety_counts().len(), 3);
        assert_eq!(catalog_to_csv(&a), catalog_to_csv(&b));
        let eans: HashSet<&str> = a.products().iter().map(|p| p.ean.as_str()).collect();
        assert_eq!(eans.len(), 30);
    }

    #[test]
    fn zero_allergen_probability_yields_empty_flags() {
        let cat = generate_synthetic_catalog(&SyntheticSpec {
            allergen_probability: 0.0,
            ..SyntheticSpec::default()
        });
        assert!(cat.products().iter().all(|p| p.allergens.is_empty()));
    }
}
