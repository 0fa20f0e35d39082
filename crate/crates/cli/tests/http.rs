use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tooluse::domains::{instantiate_goal, sample_scene, DomainCatalog};
use tooluse::oracle::{group_of, plan, DemonstrationTrace, PlannerConfig, Provenance, TraceRecord};
use tooluse::policy::{Policy, PolicyConfig};
use tooluse::session::{SessionConfig, SessionService};
use tooluse_cli::server::router;
use tower::ServiceExt;

fn app(out: Option<&std::path::Path>, policy: bool) -> Router {
    let mut svc = SessionService::new(SessionConfig { out_dir: out.map(Into::into), ..Default::default() });
    if policy {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let cfg = PolicyConfig { hidden: 8, ggcn_layers: 1, head_layers: 1, embed: tooluse::embed::EmbedConfig { dim: 12, ..Default::default() }, ..Default::default() };
        svc.add_policy("mini-home", Policy::new(&c, cfg));
    }
    router(Arc::new(svc), None)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn create(app: &Router) -> Value {
    let (s, v) = call(app, "POST", "/sessions", Some(json!({"domain": "mini-home", "scene_seed": 1, "goal_id": "cube-in-box"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    v
}

fn oracle_trace() -> DemonstrationTrace {
    let c = DomainCatalog::builtin("mini-home").unwrap();
    let s = sample_scene(&c, 1).unwrap();
    let g = instantiate_goal(c.goal("cube-in-box").unwrap(), &s).unwrap();
    let p = plan(&s, &g, &PlannerConfig::default()).unwrap();
    DemonstrationTrace::record("mini-home", 1, "cube-in-box", g, group_of("cube-in-box", 1), s, p, Provenance::Oracle, 0).unwrap()
}

#[tokio::test]
async fn created_view_describes_the_scene() {
    let app = app(None, false);
    let v = create(&app).await;
    assert_eq!(v["status"], "active");
    assert!(!v["goal_text"].as_str().unwrap().is_empty());
    assert!(v["objects"].as_array().unwrap().iter().all(|o| o["class"].is_string() && o["xy"].is_array() && o["states"].is_array()));
    assert!(!v["relations"].as_array().unwrap().is_empty());
    let id = v["id"].as_str().unwrap();
    let (s, again) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(again["objects"], v["objects"]);
}

#[tokio::test]
async fn move_to_is_applied_and_shows_a_near_edge() {
    let app = app(None, false);
    let v = create(&app).await;
    let id = v["id"].as_str().unwrap();
    let robot = v["robot"].as_str().unwrap();
    let cube = v["objects"].as_array().unwrap().iter().find(|o| o["class"] == "cube").unwrap()["name"].as_str().unwrap().to_string();
    let (s, out) = call(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({"name": "moveTo", "args": [cube]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["status"], "Applied");
    let near = out["view"]["relations"].as_array().unwrap().iter().any(|r| r["relation"] == "Near" && r["subject"] == robot && r["object"] == cube);
    assert!(near);
}

#[tokio::test]
async fn errors_map_to_status_codes() {
    let app = app(None, false);
    let v = create(&app).await;
    let id = v["id"].as_str().unwrap();
    let robot = v["robot"].as_str().unwrap();
    let (s, out) = call(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({"name": "drop", "args": [robot]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(out["status"], "Rejected");
    assert!(out["reason"].is_string() && out["message"].is_string());
    let (s, out) = call(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({"name": "teleport", "args": [robot]}))).await;
    assert_eq!((s, out["error"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedAction")));
    let (s, out) = call(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({"verb": "pick"}))).await;
    assert_eq!((s, out["error"].as_str()), (StatusCode::BAD_REQUEST, Some("MalformedAction")));
    let (s, out) = call(&app, "GET", "/sessions/none", None).await;
    assert_eq!((s, out["error"].as_str()), (StatusCode::NOT_FOUND, Some("UnknownSession")));
    let (s, _) = call(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&app, "POST", "/sessions", Some(json!({"domain": "mini-home", "scene_seed": 1, "goal_id": "nope"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = call(&app, "GET", "/catalog/atlantis", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn catalog_and_index_are_served() {
    let app = app(None, false);
    let (s, c) = call(&app, "GET", "/catalog/mini-home", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(c["name"], "mini-home");
    assert!(c["interactions"].as_array().unwrap().iter().any(|i| i["name"] == "placeInside" && i["arity"] == 2));
    let resp = app.clone().oneshot(Request::builder().uri("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
}

#[tokio::test]
async fn suggestions_list_top_three() {
    let app = app(None, true);
    let v = create(&app).await;
    let id = v["id"].as_str().unwrap();
    let (s, out) = call(&app, "GET", &format!("/sessions/{id}/suggestions"), None).await;
    assert_eq!(s, StatusCode::OK);
    let list = out.as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert!(list.iter().all(|x| x["action"]["name"].is_string() && x["score"].is_number()));
}

#[tokio::test]
async fn teaching_round_trip_matches_the_oracle_trace() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(Some(dir.path()), false);
    let v = create(&app).await;
    let id = v["id"].as_str().unwrap().to_string();
    let oracle = oracle_trace();
    let mut reached = false;
    for (s, a) in oracle.steps() {
        let (code, out) = call(&app, "POST", &format!("/sessions/{id}/actions"), Some(serde_json::to_value(a.to_wire(&s)).unwrap())).await;
        assert_eq!(code, StatusCode::OK);
        assert_eq!(out["status"], "Applied");
        reached = out["goal_reached"].as_bool().unwrap();
    }
    assert!(reached);
    let (s, out) = call(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({"name": "moveTo", "args": [v["robot"]]}))).await;
    assert_eq!((s, out["error"].as_str()), (StatusCode::CONFLICT, Some("StatusConflict")));
    let (s, done) = call(&app, "POST", &format!("/sessions/{id}/finish"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(done["trace"]["provenance"], "human-ui");
    assert!(done["trace"]["meta"]["timer_secs"].as_u64() == Some(600));
    let path = done["path"].as_str().unwrap();
    let mut rec: TraceRecord = serde_json::from_str(std::fs::read_to_string(path).unwrap().trim()).unwrap();
    rec.provenance = Provenance::Oracle;
    rec.meta = Value::Null;
    assert_eq!(serde_json::to_string(&rec).unwrap(), oracle.to_json_line());
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_tooluse")).args(["replay", path]).output().unwrap();
    assert!(status.status.success());
    assert!(String::from_utf8_lossy(&status.stdout).contains("goal reached"));
}

#[tokio::test]
async fn concurrent_sessions_stay_independent() {
    let app = app(None, false);
    let mut handles = Vec::new();
    for k in 0..8u64 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let (_, v) = call(&app, "POST", "/sessions", Some(json!({"domain": "mini-home", "scene_seed": k % 2, "goal_id": "cube-in-box"}))).await;
            let id = v["id"].as_str().unwrap().to_string();
            let target = v["objects"][1]["name"].clone();
            let mut applied = 0;
            for _ in 0..=k {
                let (_, out) = call(&app, "POST", &format!("/sessions/{id}/actions"), Some(json!({"name": "moveTo", "args": [target]}))).await;
                applied += u64::from(out["status"] != "Rejected");
            }
            (id, applied)
        }));
    }
    let mut ids = std::collections::BTreeSet::new();
    for h in handles {
        let (id, applied) = h.await.unwrap();
        let (_, v) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
        assert_eq!(v["step"].as_u64().unwrap(), applied);
        assert!(applied >= 1);
        ids.insert(id);
    }
    assert_eq!(ids.len(), 8);
}
