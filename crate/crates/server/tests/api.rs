use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mlr_core::agent::{handle_request_help, HelpReply, Outcome, RunState};
use mlr_core::clock::LogicalClock;
use mlr_core::store::{ControlAction, EventKind, Inbound, NewRun, RunStore, TraceEvent};
use mlr_server::{router, AppState, NDJSON};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(token: Option<&str>) -> (tempfile::TempDir, Arc<RunStore>, Router) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(RunStore::open(dir.path()).unwrap());
    let state = AppState {
        store: store.clone(),
        token: token.map(str::to_string),
    };
    (dir, store, router(state))
}

fn new_run(store: &RunStore) -> (String, std::sync::mpsc::Receiver<Inbound>) {
    let spec = NewRun {
        task: "toy".into(),
        provider: "scripted".into(),
        trial_seed: 0,
        step_budget: 5,
        config_digest: "abc".into(),
    };
    store.create_run(spec, Arc::new(LogicalClock::default())).unwrap()
}

fn finish(store: &RunStore, id: &str) {
    let mut state = RunState::new(id);
    state.outcome = Outcome::Completed { answer: "done".into() };
    store.update_state(&state).unwrap();
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn ndjson(bytes: &[u8]) -> Vec<TraceEvent> {
    std::str::from_utf8(bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[tokio::test]
async fn fresh_store_lists_no_runs_and_unknown_ids_are_coded() {
    let (_dir, _store, app) = app(None);
    let (status, body) = send(&app, "GET", "/runs", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body), json!([]));
    let (status, body) = send(&app, "GET", "/runs/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json_of(&body)["error"]["code"], "unknown_run");
    let (status, body) = send(&app, "GET", "/runs/nope/events", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json_of(&body)["error"]["code"], "unknown_run");
}

#[tokio::test]
async fn run_listing_and_state() {
    let (_dir, store, app) = app(None);
    let (a, _ia) = new_run(&store);
    let (b, _ib) = new_run(&store);
    finish(&store, &b);
    let (_, body) = send(&app, "GET", "/runs", None).await;
    let runs = json_of(&body);
    assert_eq!(runs.as_array().unwrap().len(), 2);
    let (status, body) = send(&app, "GET", &format!("/runs/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let record = json_of(&body);
    assert_eq!(record["config_digest"], "abc");
    assert_eq!(record["state"]["outcome"]["status"], "running");
    let (_, body) = send(&app, "GET", &format!("/runs/{b}"), None).await;
    assert_eq!(json_of(&body)["state"]["outcome"]["status"], "completed");
}

#[tokio::test]
async fn finished_trace_streams_from_offset() {
    let (_dir, store, app) = app(None);
    let (id, _inbox) = new_run(&store);
    for i in 1..=10 {
        store.append_event(&id, EventKind::Observation, json!({"step": i, "text": "o"})).unwrap();
    }
    finish(&store, &id);
    let (status, body) = send(&app, "GET", &format!("/runs/{id}/events?from=1"), None).await;
    assert_eq!(status, StatusCode::OK);
    let all = ndjson(&body);
    assert_eq!(all.iter().map(|e| e.seq).collect::<Vec<_>>(), (1..=10).collect::<Vec<_>>());
    let (_, body) = send(&app, "GET", &format!("/runs/{id}/events?from=6"), None).await;
    assert_eq!(ndjson(&body), all[5..]);
    let (status, body) = send(&app, "GET", &format!("/runs/{id}/events?from=x"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&body)["error"]["code"], "bad_request");
}

#[tokio::test]
async fn live_stream_follows_appends_until_terminal() {
    let (_dir, store, app) = app(None);
    let (id, _inbox) = new_run(&store);
    store.append_event(&id, EventKind::Turn, json!({"step": 1})).unwrap();
    let writer = {
        let store = store.clone();
        let id = id.clone();
        std::thread::spawn(move || {
            for i in 0..20 {
                std::thread::sleep(Duration::from_millis(5));
                store.append_event(&id, EventKind::Observation, json!({"i": i})).unwrap();
            }
            finish(&store, &id);
        })
    };
    let resp = app
        .clone()
        .oneshot(Request::get(format!("/runs/{id}/events")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.headers()[header::CONTENT_TYPE], NDJSON);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    writer.join().unwrap();
    let streamed = ndjson(&bytes);
    assert_eq!(streamed, store.events(&id, 1).unwrap());
    assert_eq!(streamed.len(), 21);
}

#[tokio::test]
async fn feedback_unblocks_a_waiting_run() {
    let (_dir, store, app) = app(None);
    let (id, inbox) = new_run(&store);
    let waiter = {
        let store = store.clone();
        let id = id.clone();
        std::thread::spawn(move || {
            let mut state = RunState::new(&id);
            handle_request_help(&store, &inbox, &mut state, Duration::from_secs(20)).unwrap()
        })
    };
    while !store.get_run(&id).unwrap().state.awaiting_feedback {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    let (_, body) = send(&app, "GET", "/runs", None).await;
    assert_eq!(json_of(&body)[0]["awaiting_feedback"], true);
    let (status, body) = send(
        &app,
        "POST",
        &format!("/runs/{id}/feedback"),
        Some(json!({"author": "ana", "text": "use a larger learning rate", "in_reply_to": 1})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let seq = json_of(&body)["seq"].as_u64().unwrap();
    assert_eq!(waiter.join().unwrap(), HelpReply::Answered("use a larger learning rate".into()));
    let events = store.events(&id, seq).unwrap();
    assert_eq!(events[0].kind, EventKind::Feedback);
    assert_eq!(events[0].payload["author"], "ana");
}

#[tokio::test]
async fn control_and_feedback_validation() {
    let (_dir, store, app) = app(None);
    let (id, inbox) = new_run(&store);
    let (status, _) = send(&app, "POST", &format!("/runs/{id}/control"), Some(json!({"action": "abort"}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert!(matches!(inbox.try_recv(), Ok(Inbound::Control { action: ControlAction::Abort, .. })));

    let (status, body) = send(&app, "POST", &format!("/runs/{id}/control"), Some(json!({"action": "explode"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(json_of(&body)["error"]["code"], "bad_request");

    let (status, body) = send(&app, "POST", &format!("/runs/{id}/feedback"), Some(json!({"text": "  "}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(json_of(&body)["error"]["code"], "invalid_feedback");

    finish(&store, &id);
    let (status, body) = send(&app, "POST", &format!("/runs/{id}/feedback"), Some(json!({"text": "late"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json_of(&body)["error"]["code"], "run_terminal");
    let (status, _) = send(&app, "POST", "/runs/nope/control", Some(json!({"action": "pause"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn shared_token_is_enforced() {
    let (_dir, _store, app) = app(Some("s3cret"));
    let (status, body) = send(&app, "GET", "/runs", None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    assert_eq!(json_of(&body)["error"]["code"], "unauthorized");
    let req = Request::get("/runs")
        .header(header::AUTHORIZATION, "Bearer s3cret")
        .body(Body::empty())
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::OK);
}

#[tokio::test]
async fn serves_over_tcp_until_shutdown() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(RunStore::open(dir.path()).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(mlr_server::serve(listener, AppState { store, token: None }, async {
        let _ = stopped.await;
    }));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /runs HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).await.unwrap();
    assert!(raw.starts_with("HTTP/1.1 200"));
    assert!(raw.ends_with("[]"));
    stop.send(()).unwrap();
    server.await.unwrap().unwrap();
}
