use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use sdf_forge_core::config::PipelineConfig;
use sdf_forge_core::pipeline::run_pipeline;
use sdf_forge_core::review::DecisionLog;
use sdf_forge_cli::serve::{router, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn build(root: &Path) {
    let mut c = PipelineConfig::default();
    c.sim.videos = 2;
    c.sim.steps = 39;
    c.sim.width = 64;
    c.sim.height = 64;
    c.sft.counts.dynamic_perception = 2;
    c.sft.counts.sdf_cot = 2;
    c.sft.counts.nfs = 2;
    c.sft.counts.tcv = 2;
    run_pipeline(root, &c, false).unwrap();
}

fn app(root: &Path) -> Router {
    router(Arc::new(AppState::load(root).unwrap()))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body, ctype)
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b, _) = call(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, serde_json::from_slice(&b).unwrap())
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b, _) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

#[tokio::test]
async fn listing_and_detail() {
    let dir = tempfile::tempdir().unwrap();
    build(dir.path());
    let app = app(dir.path());

    let (s, all) = get(&app, "/api/items?task=nfs&per_page=5").await;
    assert_eq!(s, StatusCode::OK);
    let total = all["total"].as_u64().unwrap() as usize;
    assert!(total > 5, "{total}");
    let items = all["items"].as_array().unwrap();
    assert_eq!(items.len(), 5);
    assert!(items.iter().all(|i| i["task"] == "nfs" && i.get("answer").is_none()));
    assert!(items[0]["frames"][0].as_str().unwrap().starts_with("/frames/frames/"));

    let last_page = total.div_ceil(5);
    let (_, tail) = get(&app, &format!("/api/items?task=nfs&per_page=5&page={last_page}")).await;
    assert_eq!(tail["items"].as_array().unwrap().len(), total - 5 * (last_page - 1));

    let (_, strided) = get(&app, "/api/items?task=tcv&stride=4&per_page=200").await;
    assert!(strided["items"].as_array().unwrap().iter().all(|i| i["stride"] == 4 && i.get("label").is_none()));

    let (_, sft) = get(&app, "/api/items?task=sdf_cot").await;
    assert_eq!(sft["total"], 2);

    let id = items[0]["id"].as_str().unwrap();
    let (s, one) = get(&app, &format!("/api/items/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(one.get("answer").is_none());
    let (_, revealed) = get(&app, &format!("/api/items/{id}?reveal=true")).await;
    assert!(["A", "B", "C", "D"].contains(&revealed["answer"].as_str().unwrap()));

    let (s, e) = get(&app, "/api/items/nope").await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
    let (s, _) = get(&app, "/api/items?task=bogus").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = get(&app, "/api/items?page=0").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn decisions_and_export() {
    let dir = tempfile::tempdir().unwrap();
    build(dir.path());
    let app = app(dir.path());
    let (_, list) = get(&app, "/api/items?task=nfs&per_page=3").await;
    let ids: Vec<String> = list["items"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap().into()).collect();
    let decide = |id: &str| format!("/api/items/{id}/decision");

    let (s, d) = post(&app, &decide(&ids[0]), json!({"verdict": "reject", "annotator": "ann"})).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!((d["item"].as_str(), d["verdict"].as_str()), (Some(ids[0].as_str()), Some("reject")));

    let (s, e) = post(&app, &decide(&ids[1]), json!({"verdict": "flag_ethics", "annotator": "ann"})).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_decision")));
    let (s, _) = post(&app, &decide(&ids[1]), json!({"verdict": "accept", "annotator": ""})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, e) = post(&app, &decide(&ids[1]), json!({"verdict": "maybe", "annotator": "ann"})).await;
    assert_eq!((s, e["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_body")));
    let (s, _) = post(&app, &decide("nope"), json!({"verdict": "accept", "annotator": "ann"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // the later decision wins, both stay in the log
    post(&app, &decide(&ids[2]), json!({"verdict": "reject", "annotator": "ann"})).await;
    post(&app, &decide(&ids[2]), json!({"verdict": "accept", "annotator": "ann"})).await;
    let (_, item) = get(&app, &format!("/api/items/{}", ids[2])).await;
    assert_eq!(item["decisions"].as_array().unwrap().len(), 1);
    assert_eq!(item["decisions"][0]["verdict"], "accept");
    assert_eq!(DecisionLog::at_root(dir.path()).read().unwrap().len(), 3);

    let (_, ex) = get(&app, "/api/export").await;
    let exported: Vec<&str> = ex["nfs"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
    assert!(!exported.contains(&ids[0].as_str()));
    assert!(exported.contains(&ids[2].as_str()));
    assert_eq!(ex["excluded"], json!([ids[0]]));

    let (_, undecided) = get(&app, "/api/items?task=nfs&undecided_only=true&per_page=200").await;
    assert_eq!(undecided["total"].as_u64().unwrap() + 2, list["total"].as_u64().unwrap());

    // a fresh state replays the log
    let (_, again) = get(&self::app(dir.path()), "/api/export").await;
    assert_eq!(again, ex);
}

#[tokio::test]
async fn frame_files() {
    let dir = tempfile::tempdir().unwrap();
    build(dir.path());
    let app = app(dir.path());
    let (s, body, ctype) = call(&app, Request::get("/frames/frames/sim000/0001.png").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    assert_eq!(body, std::fs::read(dir.path().join("frames/sim000/0001.png")).unwrap());

    for bad in ["/frames/frames/../../etc/passwd", "/frames/bench/nfs.jsonl", "/frames/frames/%2E%2E/stages"] {
        let (s, b, _) = call(&app, Request::get(bad).body(Body::empty()).unwrap()).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["error"], "bad_path");
    }
    let (s, _, _) = call(&app, Request::get("/frames/sdf/sim000/9999.png").body(Body::empty()).unwrap()).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
