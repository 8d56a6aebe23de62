use std::sync::{Arc, OnceLock};

use attnguard_core::forest::{train, ForestConfig, ForestModel};
use attnguard_core::service::{ServiceConfig, SessionManager, DEFAULT_MODEL_ID};
use attnguard_core::sim::{generate_trace, synthetic_dataset, SimProfile};
use attnguard_server::{router, AppState};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use futures_util::StreamExt;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;

fn model() -> ForestModel {
    static MODEL: OnceLock<ForestModel> = OnceLock::new();
    MODEL
        .get_or_init(|| {
            let samples = synthetic_dataset(&SimProfile::default(), 6, 1800, 9).unwrap();
            let data: Vec<_> = samples.into_iter().map(|s| (s.features, s.label)).collect();
            let cfg = ForestConfig {
                n_trees: 15,
                ..ForestConfig::default()
            };
            train(&data, &cfg, 3).unwrap()
        })
        .clone()
}

fn app() -> (AppState, Router) {
    let manager = Arc::new(SessionManager::new(ServiceConfig::default()));
    manager.register_model(DEFAULT_MODEL_ID, model()).unwrap();
    let state = AppState::new(manager);
    (state.clone(), router(state))
}

fn trace_jsonl(seconds: u64, seed: u64, sid: &str) -> String {
    generate_trace(&SimProfile::default(), seconds, seed, sid).unwrap().events_jsonl()
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, Value) {
    let (status, text) = call(app, method, uri, body).await;
    let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).unwrap() };
    (status, value)
}

async fn create(app: &Router, mode: &str) -> String {
    let (status, v) = call_json(app, "POST", "/sessions", &json!({"mode": mode}).to_string()).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    assert_eq!(v["v"], 1);
    assert_eq!(v["status"], "calibrating");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn auto_session_lifecycle() {
    let (_, app) = app();
    let id = create(&app, "auto").await;

    let (status, v) = call_json(&app, "POST", &format!("/sessions/{id}/events"), &trace_jsonl(600, 5, &id)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["v"], 1);
    assert!(v["accepted"].as_u64().unwrap() > 100);
    assert_eq!(v["rejected"], json!([]));

    let (status, snap) = call_json(&app, "GET", &format!("/sessions/{id}/observer"), "").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["status"], "ended");
    assert!(snap["last_estimate"].is_object());
    assert!(snap["directives"].as_array().unwrap().len() <= 5);

    let (status, log) = call(&app, "GET", &format!("/sessions/{id}/log"), "").await;
    assert_eq!(status, StatusCode::OK);
    let seqs: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["seq"].as_u64().unwrap())
        .collect();
    assert_eq!(seqs, (0..seqs.len() as u64).collect::<Vec<_>>());

    // events after the end are refused
    let (status, v) = call_json(&app, "POST", &format!("/sessions/{id}/events"), "{\"sid\":\"x\",\"t\":900000,\"k\":\"click\"}").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], 409);

    let (status, _) = call(&app, "DELETE", &format!("/sessions/{id}"), "").await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, v) = call_json(&app, "GET", &format!("/sessions/{id}/observer"), "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["v"], 1);
}

#[tokio::test]
async fn wizard_overrides_are_acknowledged_and_logged() {
    let (_, app) = app();
    let id = create(&app, "wizard").await;
    let states = ["Drifting", "Hyperfocused", "Focused", "Fatigued", "Drifting"];
    let mut last_seq = 0;
    for s in states {
        let body = json!({"cmd": "set_state", "state": s}).to_string();
        let (status, ack) = call_json(&app, "POST", &format!("/sessions/{id}/override"), &body).await;
        assert_eq!(status, StatusCode::OK, "{ack}");
        assert_eq!(ack["cmd"], "set_state");
        assert_eq!(ack["state"], s);
        // each override commits a new state, so directives follow the ack
        assert!(ack["directives"].as_u64().unwrap() > 0);
        let seq = ack["seq"].as_u64().unwrap();
        assert!(seq > last_seq);
        last_seq = seq;
    }
    let (_, snap) = call_json(&app, "GET", &format!("/sessions/{id}/observer"), "").await;
    assert_eq!(snap["state"], "Drifting");

    let (_, log) = call(&app, "GET", &format!("/sessions/{id}/log"), "").await;
    let overrides = log.lines().filter(|l| l.contains(r#""type":"override""#)).count();
    assert_eq!(overrides, states.len());
}

#[tokio::test]
async fn pause_silences_until_resume() {
    let (_, app) = app();
    let id = create(&app, "wizard").await;
    let post = |body: Value| {
        let app = app.clone();
        let uri = format!("/sessions/{id}/override");
        async move { call_json(&app, "POST", &uri, &body.to_string()).await }
    };
    let (_, ack) = post(json!({"cmd": "pause"})).await;
    assert_eq!(ack["directives"], 0);
    let (_, ack) = post(json!({"cmd": "set_state", "state": "Fatigued"})).await;
    assert_eq!(ack["directives"], 0);
    let (_, snap) = call_json(&app, "GET", &format!("/sessions/{id}/observer"), "").await;
    assert_eq!(snap["paused"], true);
    let (_, ack) = post(json!({"cmd": "resume"})).await;
    assert!(ack["directives"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn bad_requests() {
    let (_, app) = app();
    let cases = [
        ("POST", "/sessions".to_string(), "{\"mode\":\"sideways\"}", StatusCode::BAD_REQUEST),
        ("POST", "/sessions".to_string(), "not json", StatusCode::BAD_REQUEST),
        ("POST", "/sessions".to_string(), "{\"mode\":\"replay\"}", StatusCode::BAD_REQUEST),
        (
            "POST",
            "/sessions".to_string(),
            "{\"mode\":\"replay\",\"trace_id\":\"nope\"}",
            StatusCode::NOT_FOUND,
        ),
        (
            "POST",
            "/sessions".to_string(),
            "{\"mode\":\"auto\",\"model_id\":\"nope\"}",
            StatusCode::NOT_FOUND,
        ),
        ("GET", "/sessions/sess-999999/observer".to_string(), "", StatusCode::NOT_FOUND),
        ("POST", "/sessions/sess-999999/events".to_string(), "", StatusCode::NOT_FOUND),
        ("DELETE", "/sessions/sess-999999".to_string(), "", StatusCode::NOT_FOUND),
    ];
    for (method, uri, body, want) in cases {
        let (status, v) = call_json(&app, method, &uri, body).await;
        assert_eq!(status, want, "{method} {uri} {body}: {v}");
        assert_eq!(v["v"], 1);
        assert_eq!(v["error"], want.as_u16());
        assert!(v["message"].is_string());
    }

    let id = create(&app, "auto").await;
    for body in [
        json!({"cmd": "set_state"}),
        json!({"cmd": "pause", "state": "Focused"}),
        json!({"cmd": "jump"}),
        json!({"cmd": "set_state", "state": "Bored"}),
    ] {
        let (status, v) = call_json(&app, "POST", &format!("/sessions/{id}/override"), &body.to_string()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}: {v}");
    }

    // malformed lines are reported per index, not as a request failure
    let body = "{\"sid\":\"x\",\"t\":0,\"k\":\"session-start\"}\ngarbage\n";
    let (status, v) = call_json(&app, "POST", &format!("/sessions/{id}/events"), body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["accepted"], 1);
    assert_eq!(v["rejected"][0]["index"], 1);
}

#[tokio::test]
async fn replay_session_runs_registered_trace() {
    let (state, app) = app();
    let events = generate_trace(&SimProfile::default(), 600, 11, "trace").unwrap().events;
    state.manager.register_trace("demo", events);
    let (status, v) = call_json(&app, "POST", "/sessions", r#"{"mode":"replay","trace_id":"demo"}"#).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["status"], "ended");
    let id = v["session_id"].as_str().unwrap();
    let (_, log) = call(&app, "GET", &format!("/sessions/{id}/log"), "").await;
    assert!(log.lines().any(|l| l.contains(r#""type":"estimate""#)));
}

#[tokio::test]
async fn purge_drops_expired_sessions() {
    let (state, app) = app();
    let id = create(&app, "auto").await;
    assert!(state.purge(0).is_empty());
    assert_eq!(state.purge(u64::MAX), vec![id.clone()]);
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}/observer"), "").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

async fn collect_stream(addr: std::net::SocketAddr, id: &str, from_seq: Option<u64>) -> Vec<Value> {
    let url = match from_seq {
        Some(n) => format!("ws://{addr}/sessions/{id}/stream?from_seq={n}"),
        None => format!("ws://{addr}/sessions/{id}/stream"),
    };
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut out = Vec::new();
    while let Some(msg) = ws.next().await {
        match msg.unwrap() {
            Message::Text(t) => out.push(serde_json::from_str(t.as_str()).unwrap()),
            Message::Close(_) => break,
            _ => {}
        }
    }
    out
}

#[tokio::test]
async fn websocket_streams_live_messages_and_resumes() {
    let (_, app) = app();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(std::future::IntoFuture::into_future(axum::serve(listener, app.clone())));

    let id = create(&app, "auto").await;
    let live = tokio::spawn({
        let id = id.clone();
        async move { collect_stream(addr, &id, None).await }
    });
    // give the subscriber time to attach before data flows
    tokio::time::sleep(std::time::Duration::from_millis(100)).await;

    let trace = trace_jsonl(900, 21, &id);
    let lines: Vec<&str> = trace.lines().collect();
    for chunk in lines.chunks(200) {
        let (status, _) = call(&app, "POST", &format!("/sessions/{id}/events"), &chunk.join("\n")).await;
        assert_eq!(status, StatusCode::OK);
    }
    let live = tokio::time::timeout(std::time::Duration::from_secs(30), live)
        .await
        .expect("stream closes after the session ends")
        .unwrap();

    let (_, log) = call(&app, "GET", &format!("/sessions/{id}/log"), "").await;
    let expected: Vec<Value> = log
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|r| !matches!(r["type"].as_str(), Some("header" | "event")))
        .collect();
    assert!(expected.iter().any(|r| r["type"] == "estimate"));
    assert!(expected.iter().any(|r| r["type"] == "directive"));
    assert_eq!(expected.last().unwrap()["event"], "ended");
    assert_eq!(live, expected);

    // reconnecting from the middle yields exactly the remainder
    let mid = expected[expected.len() / 2]["seq"].as_u64().unwrap();
    let resumed = collect_stream(addr, &id, Some(mid)).await;
    let tail: Vec<Value> = expected.iter().filter(|r| r["seq"].as_u64().unwrap() > mid).cloned().collect();
    assert_eq!(resumed, tail);
}
