//! Python bindings. Structured results cross the boundary as plain dicts.

use std::sync::Arc;

use altrec_core::catalog::{self as cat, SyntheticSpec, VarietyPolicy};
use altrec_core::embed::{self, TrainingConfig};
use altrec_core::eval::{self, Group, SurveyQuestion, SurveyResponse};
use altrec_core::report::export_report as core_export_report;
use altrec_core::rscf::{RsCfEngine, DEFAULT_K};
use altrec_core::rsnn::{self, BrandWeightMode, RsNnConfig};
use altrec_core::similarity::{self as sim, MetricKind, Repr};
use altrec_core::survey::{self, SurveyBundle};
use altrec_core::textprep::{DescriptorMode, DescriptorSet, Language, TextPipeline};
use altrec_core::{Approach, RecommendError, SchemaVersion};
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn recommend_err(e: RecommendError) -> PyErr {
    match e {
        RecommendError::UnknownProduct(_) => PyKeyError::new_err(e.to_string()),
        other => value_err(other),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn pipeline(language: &str) -> PyResult<TextPipeline> {
    Language::from_code(language)
        .map(TextPipeline::new)
        .ok_or_else(|| value_err(format!("unknown language `{language}`")))
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(value_err)
}

#[pyclass(name = "Catalog", module = "altrec", frozen)]
struct PyCatalog {
    inner: cat::Catalog,
}

#[pymethods]
impl PyCatalog {
    /// Reads a catalog file; the layout is taken from the header.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        cat::load_catalog_auto(path)
            .map(|inner| PyCatalog { inner })
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[staticmethod]
    #[pyo3(signature = (text, schema = "DS2"))]
    fn from_csv(text: &str, schema: &str) -> PyResult<Self> {
        let schema: SchemaVersion = parse(schema)?;
        cat::read_catalog(text.as_bytes(), schema, "python")
            .map(|inner| PyCatalog { inner })
            .map_err(value_err)
    }

    #[staticmethod]
    #[pyo3(signature = (seed, n_varieties = 6, products_per_variety = 20, n_brands = 6))]
    fn synthetic(seed: u64, n_varieties: usize, products_per_variety: usize, n_brands: usize) -> Self {
        let spec = SyntheticSpec { n_varieties, products_per_variety, n_brands, seed, ..SyntheticSpec::default() };
        PyCatalog { inner: cat::generate_synthetic_catalog(&spec) }
    }

    fn clean(&self) -> Self {
        PyCatalog { inner: cat::clean_catalog(&self.inner) }
    }

    /// Keeps varieties with at least `min_count` products, or those at or
    /// above the first quartile of variety sizes when `min_count` is None.
    #[pyo3(signature = (min_count = None))]
    fn select_varieties(&self, min_count: Option<usize>) -> PyResult<Self> {
        let policy = min_count.map_or(VarietyPolicy::FirstQuartile, VarietyPolicy::MinCount);
        cat::select_varieties(&self.inner, policy)
            .map(|s| PyCatalog { inner: s.catalog })
            .map_err(value_err)
    }

    #[getter]
    fn schema(&self) -> String {
        self.inner.schema().to_string()
    }

    fn eans(&self) -> Vec<String> {
        self.inner.products().iter().map(|p| p.ean.clone()).collect()
    }

    fn varieties(&self) -> std::collections::BTreeMap<String, usize> {
        self.inner.variety_counts().into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    fn product<'py>(&self, py: Python<'py>, ean: &str) -> PyResult<Bound<'py, PyAny>> {
        let p = self
            .inner
            .get(ean)
            .ok_or_else(|| PyKeyError::new_err(format!("unknown product `{ean}`")))?;
        to_py(py, p)
    }

    fn to_csv(&self) -> String {
        String::from_utf8(cat::catalog_to_csv(&self.inner)).expect("csv is utf-8")
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, cat::catalog_to_csv(&self.inner)).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Catalog({} products, {})", self.inner.len(), self.inner.schema())
    }
}

#[pyclass(name = "EmbeddingModel", module = "altrec", frozen)]
struct PyModel {
    inner: Arc<embed::EmbeddingModel>,
}

#[pymethods]
impl PyModel {
    /// Trains over the catalog's tagged documents. Returns the model and the
    /// per-epoch mean losses.
    #[staticmethod]
    #[pyo3(signature = (catalog, seed = 42, dim = 50, epochs = 40, min_count = 2, window = 2, negative_samples = 5, learning_rate = 0.025, min_learning_rate = 0.0001, language = "en"))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        catalog: &PyCatalog,
        seed: u64,
        dim: usize,
        epochs: u32,
        min_count: u32,
        window: usize,
        negative_samples: usize,
        learning_rate: f64,
        min_learning_rate: f64,
        language: &str,
    ) -> PyResult<(Self, Vec<f64>)> {
        let config = TrainingConfig { dim, epochs, min_count, window, negative_samples, learning_rate, min_learning_rate, seed };
        let docs = pipeline(language)?.build_descriptors(&catalog.inner, DescriptorMode::NnTagged);
        let (model, report) = py.detach(|| embed::train(docs.items(), &config)).map_err(value_err)?;
        Ok((PyModel { inner: Arc::new(model) }, report.epoch_losses))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        embed::EmbeddingModel::load(path)
            .map(|m| PyModel { inner: Arc::new(m) })
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn n_docs(&self) -> usize {
        self.inner.n_docs()
    }

    #[getter]
    fn vocab(&self) -> Vec<String> {
        self.inner.vocab().tokens().to_vec()
    }

    fn doc_vector(&self, ean: &str) -> Option<Vec<f32>> {
        self.inner.doc_vector_by_ref(ean).map(<[f32]>::to_vec)
    }

    fn __repr__(&self) -> String {
        format!("EmbeddingModel(dim={}, docs={}, vocab={})", self.inner.dim(), self.inner.n_docs(), self.inner.vocab().len())
    }
}

/// Bag-of-words recommender.
#[pyclass(name = "RsCf", module = "altrec", frozen)]
struct PyRsCf {
    inner: RsCfEngine,
}

#[pymethods]
impl PyRsCf {
    #[new]
    #[pyo3(signature = (catalog, language = "en"))]
    fn new(catalog: &PyCatalog, language: &str) -> PyResult<Self> {
        RsCfEngine::build(catalog.inner.clone(), &pipeline(language)?)
            .map(|inner| PyRsCf { inner })
            .map_err(value_err)
    }

    #[pyo3(signature = (ean, approach = "pro_com", k = Some(DEFAULT_K)))]
    fn recommend<'py>(&self, py: Python<'py>, ean: &str, approach: &str, k: Option<usize>) -> PyResult<Bound<'py, PyAny>> {
        let ranked = self.inner.recommend(parse(approach)?, ean, k).map_err(recommend_err)?;
        to_py(py, &ranked)
    }

    #[pyo3(signature = (id, seed, provenance = "python"))]
    fn build_survey<'py>(&self, py: Python<'py>, id: &str, seed: u64, provenance: &str) -> PyResult<Bound<'py, PyAny>> {
        let bundle = survey::build_survey(id, &self.inner.catalog, &self.inner, seed, provenance).map_err(value_err)?;
        to_py(py, &bundle)
    }
}

/// Embedding recommender.
#[pyclass(name = "RsNn", module = "altrec", frozen)]
struct PyRsNn {
    catalog: cat::Catalog,
    model: Arc<embed::EmbeddingModel>,
    tokens: DescriptorSet,
    config: RsNnConfig,
}

impl PyRsNn {
    fn with<T>(&self, f: impl FnOnce(&rsnn::RsNn<'_>) -> T) -> T {
        let rs = rsnn::RsNn::new(&self.catalog, &*self.model, self.config).with_tokens(&self.tokens);
        f(&rs)
    }
}

#[pymethods]
impl PyRsNn {
    #[new]
    #[pyo3(signature = (catalog, model, metric = "cosine", brand_weights = "uniform", language = "en"))]
    fn new(catalog: &PyCatalog, model: &PyModel, metric: &str, brand_weights: &str, language: &str) -> PyResult<Self> {
        let brand_weights = match brand_weights {
            "uniform" => BrandWeightMode::Uniform,
            "literal" => BrandWeightMode::Literal,
            other => return Err(value_err(format!("unknown brand weight mode `{other}`"))),
        };
        let config = RsNnConfig { metric: parse(metric)?, brand_weights, ..RsNnConfig::default() };
        Ok(PyRsNn {
            tokens: pipeline(language)?.build_descriptors(&catalog.inner, DescriptorMode::NnTagged),
            catalog: catalog.inner.clone(),
            model: model.inner.clone(),
            config,
        })
    }

    #[pyo3(signature = (ean, approach = "pro_com", metric = None, k = Some(DEFAULT_K)))]
    fn recommend<'py>(
        &self,
        py: Python<'py>,
        ean: &str,
        approach: &str,
        metric: Option<&str>,
        k: Option<usize>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let approach: Approach = parse(approach)?;
        let metric = metric.map(parse::<MetricKind>).transpose()?;
        let ranked = self.with(|rs| rs.recommend(approach, ean, metric, k)).map_err(recommend_err)?;
        to_py(py, &ranked)
    }

    fn candidate_pool<'py>(&self, py: Python<'py>, ean: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &rsnn::candidate_pool(&self.catalog, ean).map_err(recommend_err)?)
    }

    #[pyo3(signature = (id, seed, provenance = "python"))]
    fn build_survey<'py>(&self, py: Python<'py>, id: &str, seed: u64, provenance: &str) -> PyResult<Bound<'py, PyAny>> {
        let bundle = self
            .with(|rs| survey::build_survey(id, &self.catalog, rs, seed, provenance))
            .map_err(value_err)?;
        to_py(py, &bundle)
    }
}

/// Cosine, euclidean or manhattan over vectors; jaccard over token lists.
#[pyfunction]
fn similarity(metric: &str, a: Bound<'_, PyAny>, b: Bound<'_, PyAny>) -> PyResult<f64> {
    let metric: MetricKind = parse(metric)?;
    if metric == MetricKind::Jaccard {
        let (a, b): (Vec<String>, Vec<String>) = (a.extract()?, b.extract()?);
        return Ok(sim::jaccard(&a, &b));
    }
    let (a, b): (Vec<f64>, Vec<f64>) = (a.extract()?, b.extract()?);
    sim::pairwise(metric, Repr::Vector(&a), Repr::Vector(&b)).map_err(value_err)
}

/// Weighted nutrition score from a nutrition dict; None when incomplete.
#[pyfunction]
fn nutrition_score(py: Python<'_>, nutrition: Bound<'_, PyAny>) -> PyResult<Option<f64>> {
    let facts: cat::NutritionFacts = from_py(py, &nutrition)?;
    Ok(rsnn::nutrition_score(&facts).map(|s| s.h))
}

#[pyfunction]
fn mse_by_group(py: Python<'_>, responses: Bound<'_, PyAny>, questions: Bound<'_, PyAny>, group: u8) -> PyResult<f64> {
    let responses: Vec<SurveyResponse> = from_py(py, &responses)?;
    let questions: Vec<SurveyQuestion> = from_py(py, &questions)?;
    let group = Group::from_number(group).ok_or_else(|| value_err(format!("no group {group}")))?;
    eval::mse_by_group(&responses, &questions, group).map_err(value_err)
}

#[pyfunction]
fn accuracy_group3(py: Python<'_>, responses: Bound<'_, PyAny>, questions: Bound<'_, PyAny>) -> PyResult<f64> {
    let responses: Vec<SurveyResponse> = from_py(py, &responses)?;
    let questions: Vec<SurveyQuestion> = from_py(py, &questions)?;
    eval::accuracy_group3(&responses, &questions).map_err(value_err)
}

/// Metrics report for responses against a survey dict.
#[pyfunction]
fn export_report<'py>(py: Python<'py>, responses: Bound<'py, PyAny>, survey: Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let responses: Vec<SurveyResponse> = from_py(py, &responses)?;
    let bundle: SurveyBundle = from_py(py, &survey)?;
    to_py(py, &core_export_report(&responses, &bundle))
}

#[pymodule]
fn altrec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCatalog>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyRsCf>()?;
    m.add_class::<PyRsNn>()?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    m.add_function(wrap_pyfunction!(nutrition_score, m)?)?;
    m.add_function(wrap_pyfunction!(mse_by_group, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy_group3, m)?)?;
    m.add_function(wrap_pyfunction!(export_report, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
