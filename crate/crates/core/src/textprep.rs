//! Text preprocessing: the bag-of-words cleaning pipeline, the tagged
//! document pipeline used for embeddings, and extraction of "without ..."
//! health claims from package messages.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, Product};

static EN_STOPWORDS: &str = include_str!("../data/stopwords/en.txt");
static ES_STOPWORDS: &str = include_str!("../data/stopwords/es.txt");

/// Claims from package messages that concern allergens.
pub const ALLERGEN_CLAIMS: [&str; 19] = [
    "without allergens",
    "without allergen",
    "without gluten",
    "without crustaceans",
    "without egg",
    "without fish",
    "without peanuts",
    "without soy",
    "without milk and its derivatives",
    "without lactose",
    "without nuts",
    "without celery",
    "without mustard",
    "without sesame",
    "without sulphites",
    "without sulfites",
    "without lupins",
    "without molluscs",
    "without mollusks",
];

/// Health claims kept even though they do not start with "without".
/// They never count as allergen claims.
pub const HEALTH_WHITELIST: [&str; 5] = ["low fat", "low in energy", "high protein", "starch free", "celery free"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    English,
    Spanish,
}

impl Language {
    pub fn from_code(code: &str) -> Option<Language> {
        match code.to_ascii_lowercase().as_str() {
            "en" | "english" => Some(Language::English),
            "es" | "spanish" => Some(Language::Spanish),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Language::English => "en",
            Language::Spanish => "es",
        }
    }

    /// The stopword list shipped for this language.
    pub fn stopwords(self) -> &'static HashSet<String> {
        static EN: OnceLock<HashSet<String>> = OnceLock::new();
        static ES: OnceLock<HashSet<String>> = OnceLock::new();
        match self {
            Language::English => EN.get_or_init(|| parse_stopwords(EN_STOPWORDS)),
            Language::Spanish => ES.get_or_init(|| parse_stopwords(ES_STOPWORDS)),
        }
    }

    fn stemmer(self) -> Algorithm {
        match self {
            Language::English => Algorithm::English,
            Language::Spanish => Algorithm::Spanish,
        }
    }
}

/// Parses a one-token-per-line stopword list. Blank lines and `#` comments
/// are skipped.
pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DescriptorMode {
    /// Name, legal name and ingredients through the cleaning pipeline.
    CfFull,
    /// Ingredients only, through the cleaning pipeline.
    CfIngredients,
    /// Name, brand, ingredients, legal name and allergen labels, tokenized,
    /// stemmed and tagged with the document id.
    NnTagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Descriptor {
    pub product_ref: String,
    pub tokens: Vec<String>,
    pub mode: DescriptorMode,
    pub tag: Option<u32>,
}

/// Stopword list plus stemmer language.
#[derive(Debug, Clone)]
pub struct TextPipeline {
    language: Language,
    stopwords: HashSet<String>,
}

impl Default for TextPipeline {
    fn default() -> Self {
        TextPipeline::new(Language::English)
    }
}

impl TextPipeline {
    pub fn new(language: Language) -> Self {
        TextPipeline {
            language,
            stopwords: language.stopwords().clone(),
        }
    }

    pub fn with_stopwords(language: Language, stopwords: HashSet<String>) -> Self {
        TextPipeline { language, stopwords }
    }

    pub fn from_stopword_file(language: Language, path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(TextPipeline::with_stopwords(language, parse_stopwords(&text)))
    }

    pub fn language(&self) -> Language {
        self.language
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    /// Bag-of-words cleaning: parentheses become spaces; tokens carrying a
    /// digit, punctuation, stopwords and extra whitespace are removed; the
    /// rest is lowercased and deduplicated keeping first occurrences.
    pub fn clean_tokens(&self, raw: &str) -> Vec<String> {
        let spaced: String = raw
            .chars()
            .map(|c| if matches!(c, '(' | ')' | '[' | ']' | '{' | '}') { ' ' } else { c })
            .collect();
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for chunk in spaced.split_whitespace() {
            if chunk.chars().any(|c| c.is_ascii_digit() || c.is_numeric()) {
                continue;
            }
            for piece in chunk.split(|c: char| !c.is_alphabetic()) {
                if piece.is_empty() {
                    continue;
                }
                let token = piece.to_lowercase();
                if self.is_stopword(&token) {
                    continue;
                }
                if seen.insert(token.clone()) {
                    out.push(token);
                }
            }
        }
        out
    }

    /// Tagged-document pipeline: tokenize and lowercase, drop stopwords and
    /// numbers, stem, then deduplicate keeping first occurrences.
    pub fn document_tokens(&self, raw: &str) -> Vec<String> {
        let stemmer = Stemmer::create(self.language.stemmer());
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for piece in raw.split(|c: char| !c.is_alphanumeric()) {
            if piece.is_empty() || piece.chars().any(char::is_numeric) {
                continue;
            }
            let token = piece.to_lowercase();
            if self.is_stopword(&token) {
                continue;
            }
            let stem = stemmer.stem(&token).into_owned();
            if stem.is_empty() || self.is_stopword(&stem) {
                continue;
            }
            if seen.insert(stem.clone()) {
                out.push(stem);
            }
        }
        out
    }

    pub fn build_descriptor(&self, product: &Product, mode: DescriptorMode, tag: Option<u32>) -> Descriptor {
        let tokens = match mode {
            DescriptorMode::CfFull => {
                let text = format!("{} {} {}", product.name, product.legal_name, product.ingredients);
                self.clean_tokens(&text)
            }
            DescriptorMode::CfIngredients => self.clean_tokens(&product.ingredients),
            DescriptorMode::NnTagged => {
                let mut text = format!(
                    "{} {} {} {}",
                    product.name, product.brand, product.ingredients, product.legal_name
                );
                for allergen in product.allergens.iter() {
                    text.push(' ');
                    text.push_str(allergen.label());
                }
                self.document_tokens(&text)
            }
        };
        Descriptor {
            product_ref: product.ean.clone(),
            tokens,
            mode,
            tag: if mode == DescriptorMode::NnTagged { tag } else { None },
        }
    }

    /// Descriptors for every product; tagged documents get the zero-based
    /// row number as tag.
    pub fn build_descriptors(&self, catalog: &Catalog, mode: DescriptorMode) -> DescriptorSet {
        let items = catalog
            .products()
            .iter()
            .enumerate()
            .map(|(i, p)| self.build_descriptor(p, mode, Some(i as u32)))
            .collect();
        DescriptorSet::new(mode, items)
    }
}

/// Descriptors of a catalog, addressable by EAN.
#[derive(Debug, Clone)]
pub struct DescriptorSet {
    mode: DescriptorMode,
    items: Vec<Descriptor>,
    index: HashMap<String, usize>,
}

impl DescriptorSet {
    pub fn new(mode: DescriptorMode, items: Vec<Descriptor>) -> Self {
        let mut index = HashMap::with_capacity(items.len());
        for (i, d) in items.iter().enumerate() {
            index.entry(d.product_ref.clone()).or_insert(i);
        }
        DescriptorSet { mode, items, index }
    }

    pub fn mode(&self) -> DescriptorMode {
        self.mode
    }

    pub fn get(&self, ean: &str) -> Option<&Descriptor> {
        self.index.get(ean).map(|&i| &self.items[i])
    }

    pub fn items(&self) -> &[Descriptor] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn is_health_claim(s: &str) -> bool {
    s.starts_with("without ") || HEALTH_WHITELIST.contains(&s)
}

fn well_formed(s: &str) -> bool {
    is_health_claim(s) && s.chars().all(|c| c.is_alphabetic() || c == ' ' || c == '\'' || c == '-')
}

/// Health and allergen claims on a product's package messages.
///
/// Blank messages are dropped, only messages that start with "without " or
/// are whitelisted health claims are kept, everything is lowercased,
/// messages are split on ". ", the part after a comma is cut, control
/// characters and trailing full stops are stripped and malformed strings
/// are dropped. Duplicates keep their first occurrence.
pub fn extract_health_messages(product: &Product) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for message in &product.messages {
        let lowered = message.trim().to_lowercase();
        let claim_like = lowered.starts_with("without ") || HEALTH_WHITELIST.iter().any(|w| lowered.starts_with(w));
        if !claim_like {
            continue;
        }
        for part in lowered.split(". ") {
            let head = part.split(',').next().unwrap_or("");
            let scrubbed: String = head.chars().filter(|c| !c.is_control()).collect();
            let normalized = scrubbed.split_whitespace().collect::<Vec<_>>().join(" ");
            let feature = normalized.trim_end_matches('.').trim_end().to_string();
            if well_formed(&feature) && seen.insert(feature.clone()) {
                out.push(feature);
            }
        }
    }
    out
}

/// Catalog-wide health-claim vocabulary and its per-product assignment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WithoutVocabulary {
    /// Every distinct claim, in first-occurrence order.
    pub all_features: Vec<String>,
    /// Claims that concern allergens; a subset of `all_features`.
    pub allergen_subset: Vec<String>,
    pub per_product: BTreeMap<String, Vec<String>>,
}

impl WithoutVocabulary {
    pub fn claims_of(&self, ean: &str) -> &[String] {
        self.per_product.get(ean).map_or(&[], Vec::as_slice)
    }

    /// The allergen-relevant claims of a product.
    pub fn allergen_claims_of(&self, ean: &str) -> Vec<&str> {
        self.claims_of(ean)
            .iter()
            .filter(|c| self.allergen_subset.contains(c))
            .map(String::as_str)
            .collect()
    }
}

pub fn build_without_vocabulary(catalog: &Catalog) -> WithoutVocabulary {
    let mut vocab = WithoutVocabulary::default();
    let mut seen = HashSet::new();
    for product in catalog.products() {
        let claims = extract_health_messages(product);
        for c in &claims {
            if seen.insert(c.clone()) {
                vocab.all_features.push(c.clone());
            }
        }
        vocab.per_product.entry(product.ean.clone()).or_insert(claims);
    }
    vocab.allergen_subset = vocab
        .all_features
        .iter()
        .filter(|f| ALLERGEN_CLAIMS.contains(&f.as_str()))
        .cloned()
        .collect();
    vocab
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Allergen, SchemaVersion};

    fn en() -> TextPipeline {
        TextPipeline::new(Language::English)
    }

    #[test]
    fn clean_tokens_examples() {
        let p = en();
        assert!(p.clean_tokens("").is_empty());
        assert_eq!(p.clean_tokens("Conger (conger) 330"), vec!["conger"]);
        assert_eq!(p.clean_tokens("Beer. 5.4% vol. alc."), vec!["beer", "vol", "alc"]);
        assert_eq!(p.clean_tokens("Sugar, water AND salt (4%)"), vec!["sugar", "water", "salt"]);
    }

    #[test]
    fn tagged_pipeline_matches_wine_example() {
        let raw = ["Wine", "White", "Sauvignon", "Blanc", "Type", "Grape", "Sauvignon", "Blanc", "13", "Vol", "Alc"].join(" ");
        assert_eq!(
            en().document_tokens(&raw),
            vec!["wine", "white", "sauvignon", "blanc", "type", "grape", "vol", "alc"]
        );
    }

    #[test]
    fn stemmer_reduces_inflections() {
        assert_eq!(en().document_tokens("running trucks"), vec!["run", "truck"]);
    }

    #[test]
    fn identical_name_and_legal_name_appear_once() {
        let mut product = Product::new("1", "V");
        product.name = "Olive oil".into();
        product.legal_name = "Olive oil".into();
        product.ingredients = "olive oil, salt".into();
        let d = en().build_descriptor(&product, DescriptorMode::CfFull, None);
        assert_eq!(d.tokens, vec!["olive", "oil", "salt"]);
        assert_eq!(d.tag, None);
    }

    #[test]
    fn tagged_descriptor_includes_brand_and_allergens() {
        let mut product = Product::new("1", "V");
        product.name = "Cookies".into();
        product.brand = "Facundo".into();
        product.ingredients = "flour, sugar".into();
        product.allergens.insert(Allergen::MilkLactose);
        let d = en().build_descriptor(&product, DescriptorMode::NnTagged, Some(4));
        assert_eq!(d.tokens, vec!["cooki", "facundo", "flour", "sugar", "milk", "lactos"]);
        assert_eq!(d.tag, Some(4));
        let cat = Catalog::new(vec![product.clone(), Product::new("2", "V")], SchemaVersion::Ds2, "t");
        let set = en().build_descriptors(&cat, DescriptorMode::NnTagged);
        assert_eq!(set.get("2").unwrap().tag, Some(1));
    }

    fn with_messages(ean: &str, messages: &[&str]) -> Product {
        let mut p = Product::new(ean, "V");
        p.messages = messages.iter().map(|s| s.to_string()).collect();
        p
    }

    #[test]
    fn health_message_examples() {
        assert!(extract_health_messages(&with_messages("1", &["Room temperature"])).is_empty());
        assert_eq!(extract_health_messages(&with_messages("1", &["Without Sugar. "])), vec!["without sugar"]);
        assert_eq!(
            extract_health_messages(&with_messages("1", &["without gluten, traces possible"])),
            vec!["without gluten"]
        );
        assert_eq!(
            extract_health_messages(&with_messages("1", &["", "low fat", "without\r\n egg.", "WITHOUT EGG", "without"])),
            vec!["low fat", "without egg"]
        );
        assert_eq!(
            extract_health_messages(&with_messages("1", &["without salt. without fat"])),
            vec!["without salt", "without fat"]
        );
    }

    #[test]
    fn without_vocabulary_union_and_allergen_subset() {
        let cat = Catalog::new(
            vec![
                with_messages("1", &["without gluten"]),
                with_messages("2", &["low fat", "Room temperature"]),
                with_messages("3", &["Without gluten."]),
            ],
            SchemaVersion::Ds1,
            "t",
        );
        let vocab = build_without_vocabulary(&cat);
        assert_eq!(vocab.all_features, vec!["without gluten", "low fat"]);
        assert_eq!(vocab.allergen_subset, vec!["without gluten"]);
        assert_eq!(vocab.claims_of("2"), ["low fat".to_string()]);
        assert_eq!(vocab.allergen_claims_of("3"), vec!["without gluten"]);

        let empty = Catalog::new(vec![Product::new("1", "V")], SchemaVersion::Ds1, "t");
        let vocab = build_without_vocabulary(&empty);
        assert!(vocab.all_features.is_empty() && vocab.allergen_subset.is_empty());
    }

    #[test]
    fn language_codes_select_lists() {
        assert_eq!(Language::from_code("es"), Some(Language::Spanish));
        assert!(Language::Spanish.stopwords().contains("de"));
        assert!(Language::English.stopwords().contains("the"));
        assert!(Language::from_code("fr").is_none());
    }
}
