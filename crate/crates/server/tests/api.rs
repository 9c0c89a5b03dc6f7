use std::sync::{Arc, OnceLock};

use altrec_core::catalog::{generate_synthetic_catalog, SyntheticSpec};
use altrec_core::embed::{train, EmbeddingModel, TrainingConfig};
use altrec_core::eval::SurveyResponse;
use altrec_core::report::export_report;
use altrec_core::rscf::RsCfEngine;
use altrec_core::rsnn::{RsNn, RsNnConfig};
use altrec_core::survey::{build_survey, read_responses, SurveyBundle};
use altrec_core::textprep::{DescriptorMode, TextPipeline};
use altrec_core::{Approach, Catalog, MetricKind};
use altrec_server::{router, AppState, Layout, IDEMPOTENCY_HEADER, TOKEN_HEADER};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tempfile::TempDir;
use tower::ServiceExt;

const TOKEN: &str = "letmein";

fn catalog() -> &'static Catalog {
    static CAT: OnceLock<Catalog> = OnceLock::new();
    CAT.get_or_init(|| {
        generate_synthetic_catalog(&SyntheticSpec {
            n_varieties: 4,
            products_per_variety: 22,
            seed: 21,
            ..SyntheticSpec::default()
        })
    })
}

fn model() -> &'static EmbeddingModel {
    static MODEL: OnceLock<EmbeddingModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let docs = TextPipeline::default().build_descriptors(catalog(), DescriptorMode::NnTagged);
        let config = TrainingConfig { dim: 16, epochs: 5, seed: 3, ..TrainingConfig::default() };
        train(docs.items(), &config).unwrap().0
    })
}

struct Fixture {
    dir: TempDir,
    app: Router,
    survey: SurveyBundle,
}

fn fixture(with_model: bool, token: Option<&str>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let engine = RsCfEngine::build(catalog().clone(), &TextPipeline::default()).unwrap();
    let survey = build_survey("s1", catalog(), &engine, 11, "fixture").unwrap();
    std::fs::create_dir_all(dir.path().join("surveys")).unwrap();
    survey.save(layout.survey("s1")).unwrap();
    let state = AppState::new(
        layout,
        catalog().clone(),
        with_model.then(|| model().clone()),
        RsNnConfig::default(),
        &TextPipeline::default(),
        token.map(str::to_string),
    )
    .unwrap();
    Fixture { dir, app: router(Arc::new(state)), survey }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Vec<u8>) {
    send(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, uri: &str, body: Value, headers: &[(&str, &str)]) -> (StatusCode, Value) {
    let mut b = Request::builder().method(Method::POST).uri(uri).header("content-type", "application/json");
    for (k, v) in headers {
        b = b.header(*k, *v);
    }
    let (s, bytes) = send(app, b.body(Body::from(body.to_string())).unwrap()).await;
    (s, serde_json::from_slice(&bytes).unwrap())
}

fn as_json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn stored(f: &Fixture) -> Vec<SurveyResponse> {
    let p = Layout::new(f.dir.path()).responses("s1");
    if p.exists() {
        read_responses(p).unwrap()
    } else {
        Vec::new()
    }
}

#[tokio::test]
async fn recommend_matches_direct_library_calls() {
    let f = fixture(true, None);
    let pipe = TextPipeline::default();
    let engine = RsCfEngine::build(catalog().clone(), &pipe).unwrap();
    let tokens = pipe.build_descriptors(catalog(), DescriptorMode::NnTagged);
    let nn = RsNn::new(catalog(), model(), RsNnConfig::default()).with_tokens(&tokens);
    for p in catalog().products().iter().step_by(11) {
        for approach in [Approach::ProCom, Approach::PkBd, Approach::HthBd] {
            let (s, body) = get(&f.app, &format!("/v1/recommend?ean={}&approach={approach}&family=rscf&k=3", p.ean)).await;
            assert_eq!(s, StatusCode::OK);
            let direct = engine.recommend(approach, &p.ean, Some(3)).unwrap();
            assert_eq!(body, serde_json::to_vec(&direct).unwrap());

            for metric in MetricKind::ALL {
                let uri = format!("/v1/recommend?ean={}&approach={approach}&family=rsnn&metric={metric}&k=3", p.ean);
                let (s, body) = get(&f.app, &uri).await;
                match nn.recommend(approach, &p.ean, Some(metric), Some(3)) {
                    Ok(direct) => {
                        assert_eq!(s, StatusCode::OK);
                        assert_eq!(body, serde_json::to_vec(&direct).unwrap());
                    }
                    Err(_) => assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY),
                }
            }
        }
    }
}

#[tokio::test]
async fn recommend_defaults_and_errors() {
    let f = fixture(false, None);
    let ean = &catalog().products()[0].ean;

    let (s, body) = get(&f.app, "/v1/recommend?ean=0000&approach=pro_com").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(as_json(&body)["error"], "UnknownProduct");

    let (s, body) = get(&f.app, &format!("/v1/recommend?ean={ean}")).await;
    assert_eq!(s, StatusCode::OK);
    let v = as_json(&body);
    assert_eq!(v["family"], "rscf");
    assert_eq!(v["approach"], "pro_com");
    assert_eq!(v["candidates"].as_array().unwrap().len(), 3);

    for bad in ["approach=fast", "family=knn", "k=-1", "metric=hamming&family=rsnn", "metric=cosine"] {
        let (s, body) = get(&f.app, &format!("/v1/recommend?ean={ean}&{bad}")).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(as_json(&body)["error"], "BadRequest");
    }
    let (s, _) = get(&f.app, "/v1/recommend").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, body) = get(&f.app, &format!("/v1/recommend?ean={ean}&family=rsnn")).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(as_json(&body)["error"], "ModelUnavailable");
}

#[tokio::test]
async fn products_and_surveys_are_served() {
    let f = fixture(false, None);
    let p = &catalog().products()[5];
    let (s, body) = get(&f.app, &format!("/v1/products/{}", p.ean)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, serde_json::to_vec(p).unwrap());
    let (s, _) = get(&f.app, "/v1/products/nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, body) = get(&f.app, "/v1/survey/s1").await;
    assert_eq!(s, StatusCode::OK);
    let bundle: SurveyBundle = serde_json::from_slice(&body).unwrap();
    assert_eq!(bundle, f.survey);
    assert_eq!(bundle.questions().count(), 30);
    for id in ["missing", "..%2Fsurveys%2Fs1", "a.b"] {
        let (s, body) = get(&f.app, &format!("/v1/survey/{id}")).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{id}");
        assert_eq!(as_json(&body)["error"], "UnknownSurvey");
    }
}

#[tokio::test]
async fn responses_are_appended_once_per_key() {
    let f = fixture(false, Some(TOKEN));
    let q = f.survey.blocks[0].questions[0].id.clone();
    let uri = "/v1/survey/s1/responses";
    let body = json!({ "respondent": "r1", "question": q, "choice": 2, "timestamp": 100 });

    let (s, v) = post(&f.app, uri, body.clone(), &[]).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(v["error"], "BadSurveyToken");
    let (s, _) = post(&f.app, uri, body.clone(), &[(TOKEN_HEADER, "wrong")]).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert!(stored(&f).is_empty());

    let auth = [(TOKEN_HEADER, TOKEN), (IDEMPOTENCY_HEADER, "k-1")];
    let (s, v) = post(&f.app, uri, body.clone(), &auth).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["status"], "stored");
    assert_eq!(v["record"]["idempotency_key"], "k-1");
    let first = stored(&f);
    assert_eq!(first.len(), 1);
    assert_eq!(first[0].choice, 2);
    assert_eq!(first[0].timestamp, 100);

    // Same key with a different choice: nothing changes, prior record comes back.
    let changed = json!({ "respondent": "r1", "question": q, "choice": 3 });
    let (s, v) = post(&f.app, uri, changed, &auth).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "duplicate");
    assert_eq!(v["record"]["choice"], 2);
    assert_eq!(stored(&f), first);

    let (s, _) = post(&f.app, uri, body, &[(TOKEN_HEADER, TOKEN)]).await;
    assert_eq!(s, StatusCode::CREATED);
    let after = stored(&f);
    assert_eq!(after.len(), 2);
    assert_eq!(after[0], first[0]);
}

#[tokio::test]
async fn invalid_responses_are_rejected_whole() {
    let f = fixture(false, None);
    let uri = "/v1/survey/s1/responses";
    let q = f.survey.blocks[1].questions[3].id.clone();

    let (s, v) = post(&f.app, uri, json!({ "respondent": "r", "question": q, "choice": 4 }), &[]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "InvalidChoice");
    let (s, v) = post(&f.app, uri, json!({ "respondent": "r", "question": "zz-99", "choice": 1 }), &[]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "UnknownQuestion");
    let (s, _) = post(&f.app, uri, json!({ "respondent": "r" }), &[]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = post(&f.app, "/v1/survey/other/responses", json!({ "respondent": "r", "question": q, "choice": 1 }), &[]).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let batch = json!([
        { "respondent": "r", "question": q, "choice": 1 },
        { "respondent": "r", "question": q, "choice": 0 },
    ]);
    let (s, v) = post(&f.app, uri, batch, &[]).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(v["message"].as_str().unwrap().starts_with("response 1"));
    assert!(stored(&f).is_empty());
}

#[tokio::test]
async fn full_session_batch_then_report() {
    let f = fixture(false, None);
    let uri = "/v1/survey/s1/responses";
    let session: Vec<Value> = f
        .survey
        .questions()
        .enumerate()
        .map(|(i, q)| json!({ "respondent": "anon-7", "question": q.id, "choice": (i % 3) + 1, "timestamp": i, "idempotency_key": format!("anon-7/{}", q.id) }))
        .collect();
    let (s, v) = post(&f.app, uri, Value::Array(session.clone()), &[]).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["results"].as_array().unwrap().len(), 30);
    assert_eq!(stored(&f).len(), 30);

    // A resubmitted session leaves the store as it was.
    let (s, v) = post(&f.app, uri, Value::Array(session), &[]).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["results"].as_array().unwrap().iter().all(|r| r["status"] == "duplicate"));
    assert_eq!(stored(&f).len(), 30);

    let (s, body) = get(&f.app, "/v1/reports/s1").await;
    assert_eq!(s, StatusCode::OK);
    let direct = export_report(&stored(&f), &f.survey);
    assert_eq!(body, serde_json::to_vec(&direct).unwrap());
    let (_, again) = get(&f.app, "/v1/reports/s1").await;
    assert_eq!(body, again);
    let (s, _) = get(&f.app, "/v1/reports/nope").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn empty_report_lists_empty_groups() {
    let f = fixture(false, None);
    let (s, body) = get(&f.app, "/v1/reports/s1").await;
    assert_eq!(s, StatusCode::OK);
    let v = as_json(&body);
    assert_eq!(v["responses"], 0);
    assert_eq!(v["metrics"]["all"]["acc"]["error"], "EmptyGroup(3)");
    assert_eq!(v["metrics"]["pro_com"]["mse"]["group1"]["error"], "EmptyGroup(1)");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_are_serialized() {
    let f = fixture(false, None);
    let qs: Vec<String> = f.survey.questions().map(|q| q.id.clone()).collect();
    let mut handles = Vec::new();
    for i in 0..40 {
        let app = f.app.clone();
        let q = qs[i % qs.len()].clone();
        handles.push(tokio::spawn(async move {
            // Every key is posted twice.
            let body = json!({ "respondent": format!("r{}", i % 20), "question": q, "choice": 1, "idempotency_key": format!("key-{}", i % 20) });
            post(&app, "/v1/survey/s1/responses", body, &[]).await.0
        }));
    }
    let mut created = 0;
    for h in handles {
        let s = h.await.unwrap();
        assert!(s == StatusCode::CREATED || s == StatusCode::OK);
        created += (s == StatusCode::CREATED) as usize;
    }
    assert_eq!(created, 20);
    let rows = stored(&f);
    assert_eq!(rows.len(), 20);
    let text = std::fs::read_to_string(Layout::new(f.dir.path()).responses("s1")).unwrap();
    assert_eq!(text.lines().count(), 20);
}

#[test]
fn startup_reports_missing_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = altrec_server::ServeConfig {
        layout: Layout::new(dir.path()),
        catalog_path: None,
        model_path: Some(dir.path().join("absent.pvdm")),
        survey_token: None,
        rsnn: RsNnConfig::default(),
        pipeline: TextPipeline::default(),
    };
    let err = AppState::load(&config).err().expect("no catalog on disk");
    assert!(format!("{err:#}").contains("catalog.csv"), "{err:#}");

    let cat_path = dir.path().join("catalog.csv");
    std::fs::write(&cat_path, altrec_core::catalog::catalog_to_csv(catalog())).unwrap();
    let err = AppState::load(&config).err().expect("model path is absent");
    assert!(format!("{err:#}").contains("absent.pvdm"), "{err:#}");

    let config = altrec_server::ServeConfig { model_path: None, ..config };
    let state = AppState::load(&config).unwrap();
    assert!(!state.has_model());
    assert_eq!(state.catalog().len(), catalog().len());
}
