//! HTTP service and file layout shared by the `altrec` binary.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use altrec_core::embed::EmbeddingModel;
use altrec_core::eval::SurveyResponse;
use altrec_core::report::export_report;
use altrec_core::rscf::{RsCfEngine, DEFAULT_K};
use altrec_core::rsnn::{RsNn, RsNnConfig};
use altrec_core::survey::{Appended, ResponseStore, SurveyBundle, SurveyError};
use altrec_core::textprep::{DescriptorMode, DescriptorSet, TextPipeline};
use altrec_core::{Approach, Catalog, Family, MetricKind, RankedAlternatives, RecommendError};
use anyhow::Context;
use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};

pub const TOKEN_HEADER: &str = "x-survey-token";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// Where things live under the data directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub data_dir: PathBuf,
}

impl Layout {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Layout { data_dir: data_dir.into() }
    }

    pub fn catalog(&self) -> PathBuf {
        self.data_dir.join("catalog.csv")
    }

    pub fn model(&self) -> PathBuf {
        self.data_dir.join("model.pvdm")
    }

    pub fn survey(&self, id: &str) -> PathBuf {
        self.data_dir.join("surveys").join(format!("{id}.json"))
    }

    pub fn responses(&self, id: &str) -> PathBuf {
        self.data_dir.join("responses").join(format!("{id}.ndjson"))
    }
}

/// Survey ids become file names, so keep them to a safe alphabet.
pub fn valid_survey_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub layout: Layout,
    pub catalog_path: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub survey_token: Option<String>,
    pub rsnn: RsNnConfig,
    pub pipeline: TextPipeline,
}

/// Read-mostly state behind the router.
pub struct AppState {
    layout: Layout,
    catalog: Catalog,
    rscf: RsCfEngine,
    model: Option<EmbeddingModel>,
    nn_tokens: DescriptorSet,
    rsnn: RsNnConfig,
    survey_token: Option<String>,
    surveys: RwLock<HashMap<String, Arc<SurveyBundle>>>,
    // One lock for every store: appends are serialized.
    stores: Mutex<HashMap<String, ResponseStore>>,
}

impl AppState {
    pub fn new(
        layout: Layout,
        catalog: Catalog,
        model: Option<EmbeddingModel>,
        rsnn: RsNnConfig,
        pipeline: &TextPipeline,
        survey_token: Option<String>,
    ) -> anyhow::Result<AppState> {
        let nn_tokens = pipeline.build_descriptors(&catalog, DescriptorMode::NnTagged);
        let rscf = RsCfEngine::build(catalog.clone(), pipeline).context("building the bag-of-words matrix")?;
        Ok(AppState {
            layout,
            catalog,
            rscf,
            model,
            nn_tokens,
            rsnn,
            survey_token,
            surveys: RwLock::new(HashMap::new()),
            stores: Mutex::new(HashMap::new()),
        })
    }

    pub fn load(config: &ServeConfig) -> anyhow::Result<AppState> {
        let catalog_path = config.catalog_path.clone().unwrap_or_else(|| config.layout.catalog());
        let catalog = altrec_core::catalog::load_catalog_auto(&catalog_path)
            .with_context(|| format!("loading catalog {}", catalog_path.display()))?;
        let model = match &config.model_path {
            Some(p) => Some(EmbeddingModel::load(p).with_context(|| format!("loading model {}", p.display()))?),
            None => {
                let p = config.layout.model();
                if p.exists() {
                    Some(EmbeddingModel::load(&p).with_context(|| format!("loading model {}", p.display()))?)
                } else {
                    None
                }
            }
        };
        AppState::new(
            config.layout.clone(),
            catalog,
            model,
            config.rsnn,
            &config.pipeline,
            config.survey_token.clone(),
        )
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn has_model(&self) -> bool {
        self.model.is_some()
    }

    fn survey(&self, id: &str) -> Result<Arc<SurveyBundle>, ApiError> {
        if !valid_survey_id(id) {
            return Err(ApiError::not_found("UnknownSurvey", format!("unknown survey `{id}`")));
        }
        if let Some(s) = self.surveys.read().expect("survey cache lock").get(id) {
            return Ok(s.clone());
        }
        let path = self.layout.survey(id);
        if !path.exists() {
            return Err(ApiError::not_found("UnknownSurvey", format!("unknown survey `{id}`")));
        }
        let bundle = Arc::new(SurveyBundle::load(&path).map_err(ApiError::internal)?);
        self.surveys
            .write()
            .expect("survey cache lock")
            .insert(id.to_string(), bundle.clone());
        Ok(bundle)
    }

    fn with_store<T>(
        &self,
        id: &str,
        f: impl FnOnce(&mut ResponseStore) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let mut stores = self.stores.lock().expect("store lock");
        if !stores.contains_key(id) {
            let store = ResponseStore::open(self.layout.responses(id)).map_err(ApiError::internal)?;
            stores.insert(id.to_string(), store);
        }
        f(stores.get_mut(id).expect("just inserted"))
    }

    /// The ranking the `/v1/recommend` endpoint serves.
    pub fn recommend(
        &self,
        family: Family,
        approach: Approach,
        ean: &str,
        metric: Option<MetricKind>,
        k: Option<usize>,
    ) -> Result<RankedAlternatives, ApiError> {
        match family {
            Family::Rscf => {
                if metric.is_some() {
                    return Err(ApiError::bad_request("the rscf family takes no metric"));
                }
                self.rscf.recommend(approach, ean, k).map_err(ApiError::from)
            }
            Family::Rsnn => {
                let model = self.model.as_ref().ok_or_else(|| ApiError {
                    status: StatusCode::SERVICE_UNAVAILABLE,
                    code: "ModelUnavailable",
                    message: "no embedding model is loaded".into(),
                })?;
                RsNn::new(&self.catalog, model, self.rsnn)
                    .with_tokens(&self.nn_tokens)
                    .recommend(approach, ean, metric, k)
                    .map_err(ApiError::from)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
    message: &'a str,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::BAD_REQUEST, code: "BadRequest", message: message.into() }
    }

    fn not_found(code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::NOT_FOUND, code, message: message.into() }
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status: StatusCode::UNPROCESSABLE_ENTITY, code, message: message.into() }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, code: "Internal", message: e.to_string() }
    }
}

impl From<RecommendError> for ApiError {
    fn from(e: RecommendError) -> Self {
        let code = match &e {
            RecommendError::UnknownProduct(_) => return ApiError::not_found("UnknownProduct", e.to_string()),
            RecommendError::VarietyTooSmall { .. } => "VarietyTooSmall",
            RecommendError::MissingServings(_) => "MissingServings",
            RecommendError::MissingNutrition(_) => "MissingNutrition",
            RecommendError::MissingPrice(_) => "MissingPrice",
            RecommendError::MissingVector(_) => "MissingVector",
            RecommendError::EmptyPool { .. } => "EmptyPool",
            RecommendError::Similarity(_) => "Similarity",
        };
        ApiError::unprocessable(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::to_vec(&ErrorBody { error: self.code, message: &self.message }).expect("serializes");
        json_bytes(self.status, body)
    }
}

fn json_bytes(status: StatusCode, body: Vec<u8>) -> Response {
    (status, [(header::CONTENT_TYPE, HeaderValue::from_static("application/json"))], body).into_response()
}

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    json_bytes(status, serde_json::to_vec(value).expect("serializes"))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/products/{ean}", get(get_product))
        .route("/v1/recommend", get(recommend))
        .route("/v1/survey/{id}", get(get_survey))
        .route("/v1/survey/{id}/responses", axum::routing::post(post_responses))
        .route("/v1/reports/{id}", get(get_report))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    json(
        StatusCode::OK,
        &serde_json::json!({
            "status": "ok",
            "products": state.catalog.len(),
            "model": state.has_model(),
        }),
    )
}

async fn get_product(State(state): State<Arc<AppState>>, UrlPath(ean): UrlPath<String>) -> Response {
    match state.catalog.get(&ean) {
        Some(p) => json(StatusCode::OK, p),
        None => ApiError::not_found("UnknownProduct", format!("unknown product `{ean}`")).into_response(),
    }
}

/// Query string of `/v1/recommend`. Everything but `ean` has a default.
#[derive(Debug, Default, Deserialize)]
pub struct RecommendQuery {
    pub ean: Option<String>,
    pub family: Option<String>,
    pub approach: Option<String>,
    pub metric: Option<String>,
    pub k: Option<String>,
}

fn parse_param<T: std::str::FromStr<Err = String>>(raw: Option<&str>, default: T) -> Result<T, ApiError> {
    raw.map_or(Ok(default), |s| s.parse().map_err(ApiError::bad_request))
}

async fn recommend(State(state): State<Arc<AppState>>, Query(q): Query<RecommendQuery>) -> Response {
    let run = || -> Result<Response, ApiError> {
        let ean = q.ean.as_deref().ok_or_else(|| ApiError::bad_request("missing `ean`"))?;
        let family = parse_param(q.family.as_deref(), Family::Rscf)?;
        let approach = parse_param(q.approach.as_deref(), Approach::ProCom)?;
        let metric = q
            .metric
            .as_deref()
            .map(str::parse::<MetricKind>)
            .transpose()
            .map_err(ApiError::bad_request)?;
        let k = match q.k.as_deref() {
            None => DEFAULT_K,
            Some(s) => s.parse().map_err(|_| ApiError::bad_request(format!("`k` must be a count, got `{s}`")))?,
        };
        let ranked = state.recommend(family, approach, ean, metric, Some(k))?;
        Ok(json(StatusCode::OK, &ranked))
    };
    run().unwrap_or_else(IntoResponse::into_response)
}

async fn get_survey(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    match state.survey(&id) {
        Ok(s) => json(StatusCode::OK, &*s),
        Err(e) => e.into_response(),
    }
}

/// One response as posted; the server fills in a missing timestamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResponseInput {
    pub respondent: String,
    pub question: String,
    pub choice: u8,
    #[serde(default)]
    pub timestamp: Option<u64>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ResponseBody {
    One(ResponseInput),
    Many(Vec<ResponseInput>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AppendResult {
    /// `stored` or `duplicate`.
    pub status: String,
    pub record: SurveyResponse,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn check_token(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let Some(expected) = &state.survey_token else { return Ok(()) };
    match headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok()) {
        Some(t) if t == expected => Ok(()),
        _ => Err(ApiError {
            status: StatusCode::UNAUTHORIZED,
            code: "BadSurveyToken",
            message: format!("missing or wrong `{TOKEN_HEADER}` header"),
        }),
    }
}

fn survey_error(index: Option<usize>, e: SurveyError) -> ApiError {
    let at = index.map(|i| format!("response {i}: ")).unwrap_or_default();
    match e {
        SurveyError::UnknownQuestion(_) => ApiError::unprocessable("UnknownQuestion", format!("{at}{e}")),
        SurveyError::InvalidChoice(_) => ApiError::unprocessable("InvalidChoice", format!("{at}{e}")),
        other => ApiError::internal(other),
    }
}

async fn post_responses(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let run = || -> Result<Response, ApiError> {
        check_token(&state, &headers)?;
        let survey = state.survey(&id)?;
        let parsed: ResponseBody = serde_json::from_slice(&body)
            .map_err(|e| ApiError::bad_request(format!("response body: {e}")))?;
        let header_key = headers
            .get(IDEMPOTENCY_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let (inputs, single) = match parsed {
            ResponseBody::One(mut r) => {
                if r.idempotency_key.is_none() {
                    r.idempotency_key = header_key;
                }
                (vec![r], true)
            }
            ResponseBody::Many(rs) => (rs, false),
        };
        if inputs.is_empty() {
            return Err(ApiError::bad_request("empty batch"));
        }
        // Validate the whole batch before writing any of it.
        for (i, r) in inputs.iter().enumerate() {
            let idx = (!single).then_some(i);
            if survey.question(&r.question).is_none() {
                return Err(survey_error(idx, SurveyError::UnknownQuestion(r.question.clone())));
            }
            if !(1..=3).contains(&r.choice) {
                return Err(survey_error(idx, SurveyError::InvalidChoice(r.choice)));
            }
        }
        let ts = now();
        let results = state.with_store(&id, |store| {
            let mut out = Vec::with_capacity(inputs.len());
            for r in inputs {
                let record = SurveyResponse {
                    respondent: r.respondent,
                    question: r.question,
                    choice: r.choice,
                    timestamp: r.timestamp.unwrap_or(ts),
                    idempotency_key: r.idempotency_key,
                };
                out.push(match store.append(&survey, record.clone()).map_err(|e| survey_error(None, e))? {
                    Appended::Stored => AppendResult { status: "stored".into(), record },
                    Appended::Duplicate(prior) => AppendResult { status: "duplicate".into(), record: prior },
                });
            }
            Ok(out)
        })?;
        let status = if results.iter().any(|r| r.status == "stored") {
            StatusCode::CREATED
        } else {
            StatusCode::OK
        };
        Ok(if single {
            json(status, &results[0])
        } else {
            json(status, &serde_json::json!({ "results": results }))
        })
    };
    run().unwrap_or_else(IntoResponse::into_response)
}

async fn get_report(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Response {
    let run = || -> Result<Response, ApiError> {
        let survey = state.survey(&id)?;
        let report = state.with_store(&id, |store| Ok(export_report(store.records(), &survey)))?;
        Ok(json(StatusCode::OK, &report))
    };
    run().unwrap_or_else(IntoResponse::into_response)
}

/// Binds and serves until ctrl-c.
pub async fn serve(state: AppState, port: u16) -> anyhow::Result<()> {
    let app = router(Arc::new(state));
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
        .await
        .with_context(|| format!("binding port {port}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir),
        _ => Ok(()),
    }
}
