mod common;

use std::collections::HashMap;
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use reweighter::server::{router, state_hash, AppState, BODY_LIMIT, CONTRIBUTORS_K};
use reweighter_core::session::Session;
use serde_json::{json, Value};
use tower::ServiceExt;

fn schemas() -> &'static HashMap<String, jsonschema::Validator> {
    static CELL: OnceLock<HashMap<String, jsonschema::Validator>> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/api");
        std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.to_string_lossy().ends_with(".schema.json"))
            .map(|p| {
                let name = p.file_name().unwrap().to_string_lossy().trim_end_matches(".schema.json").to_string();
                let doc: Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
                (name, jsonschema::validator_for(&doc).unwrap_or_else(|e| panic!("{}: {e}", p.display())))
            })
            .collect()
    })
}

fn conforms(schema: &str, v: &Value) {
    let validator = schemas().get(schema).unwrap_or_else(|| panic!("no schema {schema}"));
    let errors: Vec<String> = validator.iter_errors(v).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{schema}: {errors:#?}\n{v}");
}

struct Api {
    app: Router,
    session: Session,
}

impl Api {
    fn new(session: Session) -> Self {
        Api { app: router(AppState::new(session.clone()), None), session }
    }

    async fn raw(&self, method: &str, uri: &str, body: Body, content_type: &str) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri).header("content-type", content_type).body(body).unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| panic!("{method} {uri}: non-JSON body {:?}", String::from_utf8_lossy(&bytes)));
        if !status.is_success() {
            conforms("error", &v);
        }
        (status, v)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.raw("GET", uri, Body::empty(), "application/json").await
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.raw("POST", uri, Body::from(body.to_string()), "application/json").await
    }

    async fn ok(&self, method: &str, uri: &str, body: Value, schema: &str) -> Value {
        let (status, v) = if method == "GET" { self.get(uri).await } else { self.post(uri, body).await };
        assert_eq!(status, StatusCode::OK, "{method} {uri}: {v}");
        conforms(schema, &v);
        v
    }

    async fn hash(&self) -> String {
        self.ok("GET", "/api/statehash", Value::Null, "statehash").await["statehash"].as_str().unwrap().to_string()
    }

    async fn expect_error(&self, method: &str, uri: &str, body: Value, status: StatusCode, code: &str) {
        let before = self.hash().await;
        let (s, v) = if method == "GET" { self.get(uri).await } else { self.post(uri, body).await };
        assert_eq!((s, v["code"].as_str().unwrap()), (status, code), "{method} {uri}: {v}");
        assert_eq!(self.hash().await, before, "{method} {uri} changed the state");
    }
}

fn api() -> Api {
    Api::new(common::small_session(11))
}

#[tokio::test]
async fn read_endpoints_conform_and_are_idempotent() {
    let api = api();
    assert_eq!(api.ok("GET", "/api/health", Value::Null, "health").await, json!({"status": "ok"}));
    for (uri, schema) in [("/api/graph", "graph"), ("/api/clusters", "clusters"), ("/api/layout", "layout"), ("/api/log", "log"), ("/api/recompute/status", "recompute_status")] {
        let a = api.ok("GET", uri, Value::Null, schema).await;
        let b = api.ok("GET", uri, Value::Null, schema).await;
        assert_eq!(a, b, "{uri}");
    }
    let graph = api.ok("GET", "/api/graph", Value::Null, "graph").await;
    assert_eq!(graph["m"], api.session.state.graph.m());
    assert_eq!(graph["n"], api.session.state.graph.n());
    assert_eq!(api.hash().await, state_hash(&api.session));
}

#[tokio::test]
async fn every_cluster_lists_samples_within_budget() {
    let api = api();
    let cc = &api.session.state.leaf_clustering;
    let ids = (0..cc.k()).map(|k| format!("v{k}")).chain((0..cc.l()).map(|k| format!("t{k}")));
    for id in ids {
        let v = api.ok("GET", &format!("/api/cluster/{id}/samples?budget=4"), Value::Null, "cluster_samples").await;
        let n = v["samples"].as_array().unwrap().len();
        assert_eq!(n, v["size"].as_u64().unwrap().min(4) as usize, "{id}");
        assert_eq!(api.get(&format!("/api/cluster/{id}/samples?budget=4")).await.1, v, "sampling is not reproducible");
    }
}

#[tokio::test]
async fn select_returns_bounded_contributors() {
    let api = api();
    let g = &api.session.state.graph;
    let v = api.ok("POST", "/api/select", json!({"sample_ids": g.train_ids[..5], "side": "training"}), "select").await;
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for r in rows {
        assert!(r["positive"].as_array().unwrap().len() <= CONTRIBUTORS_K);
        assert!(r["negative"].as_array().unwrap().len() <= CONTRIBUTORS_K);
        assert!(r["glyph"].is_string());
    }
    let v = api.ok("POST", "/api/select", json!({"sample_ids": [g.val_ids[0]], "side": "validation"}), "select").await;
    assert!(v["rows"][0]["positive"].as_array().unwrap().len() <= CONTRIBUTORS_K);
}

#[tokio::test]
async fn staged_adjustments_wait_for_recompute() {
    let api = api();
    let g = &api.session.state.graph;
    let body = json!([
        {"kind": "VERIFY_QUALITY", "targets": [g.train_ids[0]], "verdict": "high"},
        {"kind": "DRAG_WEIGHT", "targets": [g.val_ids[0]], "direction": "up"}
    ]);
    conforms("adjustments.request", &body);
    let layout = api.ok("GET", "/api/layout", Value::Null, "layout").await;
    let before = api.hash().await;
    let v = api.ok("POST", "/api/adjustments", body, "adjustments").await;
    assert_eq!((v["applied"].as_bool(), v["pending"].as_u64()), (Some(false), Some(2)));
    assert_eq!(api.ok("GET", "/api/layout", Value::Null, "layout").await, layout);
    assert_ne!(api.hash().await, before);
    let log = api.ok("GET", "/api/log", Value::Null, "log").await;
    assert_eq!(log["pending"].as_array().unwrap().len(), 2);

    api.expect_error("GET", "/api/diff", Value::Null, StatusCode::NOT_FOUND, "no_snapshot").await;
    let r = api.ok("POST", "/api/recompute", Value::Null, "recompute").await;
    assert_eq!(r["epoch"].as_u64().unwrap(), layout["epoch"].as_u64().unwrap() + 1);
    let status = api.ok("GET", "/api/recompute/status", Value::Null, "recompute_status").await;
    assert_eq!((status["running"].as_bool(), status["last"]["epoch"].clone()), (Some(false), r["epoch"].clone()));
    let after = api.ok("GET", "/api/layout", Value::Null, "layout").await;
    assert_eq!(after["epoch"], r["epoch"]);

    let d = api.ok("GET", "/api/diff", Value::Null, "diff").await;
    let n = api.session.state.graph.n();
    assert_eq!(d["flagged"].as_array().unwrap().len(), n.div_ceil(10));
    let d = api.ok("GET", "/api/diff?pct=25", Value::Null, "diff").await;
    assert_eq!(d["flagged"].as_array().unwrap().len(), (n as f64 * 0.25).ceil() as usize);
}

#[tokio::test]
async fn immediate_apply_and_undo() {
    let api = api();
    let g = &api.session.state.graph;
    let h0 = api.hash().await;
    let v = api
        .ok("POST", "/api/adjustments?apply=immediate", json!({"adjustments": [{"kind": "RELABEL_VALIDATION", "targets": [g.val_ids[1]], "label": 2}]}), "adjustments")
        .await;
    assert_eq!(v["applied"], true);
    let h1 = api.hash().await;
    assert_ne!(h0, h1);
    api.ok("POST", "/api/adjustments?apply=immediate", json!([{"kind": "ADD_VALIDATION", "targets": [g.train_ids[3]]}]), "adjustments").await;
    let graph = api.ok("GET", "/api/graph", Value::Null, "graph").await;
    assert_eq!(graph["m"].as_u64().unwrap() as usize, g.m() + 1);
    api.ok("POST", "/api/undo", Value::Null, "epoch").await;
    api.ok("POST", "/api/undo", Value::Null, "epoch").await;
    let log = api.ok("GET", "/api/log", Value::Null, "log").await;
    assert_eq!(log["events"].as_array().unwrap().len(), 4);
    let graph = api.ok("GET", "/api/graph", Value::Null, "graph").await;
    assert_eq!(graph["m"].as_u64().unwrap() as usize, g.m());
}

#[tokio::test]
async fn finetune_and_refresh() {
    let api = api();
    api.ok("POST", "/api/recompute", Value::Null, "recompute").await;
    let v = api.ok("POST", "/api/finetune", Value::Null, "finetune").await;
    assert!(v["metrics"]["test_accuracy"].as_f64().unwrap() > 0.5);
    let before = api.ok("GET", "/api/graph", Value::Null, "graph").await["epoch"].as_u64().unwrap();
    let v = api.ok("POST", "/api/refresh", Value::Null, "epoch").await;
    assert_eq!(v["epoch"].as_u64().unwrap(), before + 1);
}

#[tokio::test]
async fn session_round_trip_keeps_the_hash() {
    let api = api();
    let g = &api.session.state.graph;
    api.ok("POST", "/api/adjustments?apply=immediate", json!([{"kind": "VERIFY_QUALITY", "targets": [g.train_ids[2]], "verdict": "low"}]), "adjustments").await;
    api.ok("POST", "/api/recompute", Value::Null, "recompute").await;
    let doc = api.ok("GET", "/api/session", Value::Null, "session").await;
    let hash = api.hash().await;
    let fresh = Api::new(common::small_session(12));
    for mode in ["restore", "replay", "verify"] {
        let (s, v) = fresh.raw("POST", &format!("/api/session?mode={mode}"), Body::from(doc.to_string()), "application/json").await;
        assert_eq!(s, StatusCode::OK, "{mode}: {v}");
        conforms("session_load", &v);
        assert_eq!(v["statehash"], hash.as_str(), "{mode}");
        assert_eq!(fresh.hash().await, hash);
    }
}

#[tokio::test]
async fn errors_carry_stable_codes_and_leave_state_alone() {
    let api = api();
    let g = &api.session.state.graph;
    let (v0, t0) = (g.val_ids[0], g.train_ids[0]);
    let ghost = 999_999;
    use StatusCode as S;
    api.expect_error("POST", "/api/select", json!({"sample_ids": [ghost], "side": "training"}), S::NOT_FOUND, "unknown_sample").await;
    api.expect_error("POST", "/api/adjustments?apply=immediate", json!([{"kind": "DRAG_WEIGHT", "targets": [ghost], "direction": "up"}]), S::NOT_FOUND, "unknown_sample").await;
    api.expect_error("POST", "/api/adjustments", json!([{"kind": "DRAG_WEIGHT", "targets": [ghost], "direction": "up"}]), S::NOT_FOUND, "unknown_sample").await;
    api.expect_error("GET", "/api/cluster/v999/samples", Value::Null, S::NOT_FOUND, "unknown_cluster").await;
    api.expect_error("GET", "/api/cluster/q1/samples", Value::Null, S::NOT_FOUND, "unknown_cluster").await;
    api.expect_error("GET", "/api/diff", Value::Null, S::NOT_FOUND, "no_snapshot").await;
    api.expect_error("POST", "/api/adjustments", json!([{"kind": "RELABEL_VALIDATION", "targets": [v0], "label": 7}]), S::BAD_REQUEST, "invalid_label").await;
    api.expect_error("POST", "/api/undo", Value::Null, S::CONFLICT, "nothing_to_undo").await;
    api.expect_error("POST", "/api/adjustments", json!([]), S::BAD_REQUEST, "invalid_request").await;
    api.expect_error("POST", "/api/adjustments", json!([{"kind": "SHRUG"}]), S::BAD_REQUEST, "invalid_request").await;
    api.expect_error("POST", "/api/adjustments?apply=later", json!([{"kind": "ADD_VALIDATION", "targets": [t0]}]), S::BAD_REQUEST, "invalid_request").await;
    api.expect_error("GET", "/api/diff?pct=150", Value::Null, S::BAD_REQUEST, "invalid_request").await;
    api.expect_error("POST", "/api/session?mode=sideways", json!({}), S::BAD_REQUEST, "invalid_request").await;
    api.expect_error("GET", "/api/nowhere", Value::Null, S::NOT_FOUND, "not_found").await;

    api.ok("POST", "/api/adjustments?apply=immediate", json!([{"kind": "ADD_VALIDATION", "targets": [t0]}]), "adjustments").await;
    api.expect_error("POST", "/api/adjustments?apply=immediate", json!([{"kind": "ADD_VALIDATION", "targets": [t0]}]), S::CONFLICT, "already_validation").await;

    let mut doc: Value = api.ok("GET", "/api/session", Value::Null, "session").await;
    doc["format"] = json!("reweighter-session/0");
    api.expect_error("POST", "/api/session", doc.clone(), S::BAD_REQUEST, "version_mismatch").await;
    let text = api.get("/api/session").await.1.to_string();
    let before = api.hash().await;
    let (s, v) = api.raw("POST", "/api/session", Body::from(text[..text.len() / 2].to_string()), "application/json").await;
    assert_eq!((s, v["code"].as_str().unwrap()), (S::BAD_REQUEST, "corrupt_session"));
    assert_eq!(api.hash().await, before);

    let huge = format!("[{}]", vec!["1"; BODY_LIMIT / 2 + 1].join(","));
    let (s, v) = api.raw("POST", "/api/select", Body::from(huge), "application/json").await;
    assert_eq!((s, v["code"].as_str().unwrap()), (S::PAYLOAD_TOO_LARGE, "payload_too_large"));
    assert_eq!(api.hash().await, before);
}
