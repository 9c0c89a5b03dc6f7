//! Alternative-product recommendation for grocery catalogs.
//!
//! Given a product that is out of stock, the recommenders in this crate rank
//! substitutes from the same catalog using only product characteristics:
//! taxonomy position, ingredient text, nutrition table, allergens, package
//! and brand. Two families are provided:
//!
//! * [`rscf`]: bag-of-words ranking over a binary product matrix
//!   (composition, package and health criteria).
//! * [`rsnn`]: ranking over paragraph-vector embeddings trained by
//!   [`embed`], with allergen preconditions, brand/price weighting and a
//!   weighted nutrition score.
//!
//! [`survey`] and [`eval`] cover producing questionnaires from recommender
//! output and scoring the collected answers.

pub mod bow;
pub mod catalog;
pub mod embed;
pub mod eval;
pub mod ranking;
pub mod report;
pub mod rscf;
pub mod rsnn;
pub mod similarity;
pub mod survey;
pub mod textprep;

pub use catalog::{Allergen, AllergenFlags, Catalog, NutritionFacts, Product, SchemaVersion, Unit};
pub use ranking::{Approach, Family, RankedAlternatives, RankedCandidate, RecommendError};
pub use similarity::{MetricFamily, MetricKind};
