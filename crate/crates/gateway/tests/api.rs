use std::path::PathBuf;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use sitescout_core::agents::HumanMode;
use sitescout_core::mission::{AbortReason, Mission, MissionSnapshot, Outcome};
use sitescout_core::scenario::Scenario;
use sitescout_gateway::artifacts::{MapDocument, PALETTE};
use sitescout_gateway::server::{router, spawn_mission, AppState, ServeOptions};
use tower::ServiceExt;

fn fixture(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(p).unwrap()
}

fn start(sc: &Scenario, autostart: bool) -> AppState {
    let mission = Mission::new(sc, None).unwrap();
    let opts = ServeOptions {
        tick_interval: Duration::from_millis(1),
        autostart,
        out_dir: None,
    };
    spawn_mission(mission, opts).unwrap().0
}

async fn call(state: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    raw(state, req).await
}

async fn raw(state: &AppState, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

async fn wait_for(state: &AppState, what: &str, f: impl Fn(&MissionSnapshot) -> bool) -> MissionSnapshot {
    let deadline = Instant::now() + Duration::from_secs(60);
    loop {
        let s = state.snapshot();
        if f(&s) {
            return s;
        }
        assert!(
            Instant::now() < deadline,
            "timed out waiting for {what}; last tick {}",
            s.tick
        );
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
}

#[tokio::test]
async fn state_document_shape() {
    let state = start(&fixture("two_rooms.toml"), false);
    let (code, v) = call(&state, "GET", "/api/state", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["scenario"], "two-rooms");
    assert_eq!(v["tick"], 0);
    assert_eq!(v["started"], false);
    assert_eq!(v["outcome"]["status"], "Running");
    assert_eq!(v["threshold"], 95.0);
    let agents = v["agents"].as_array().unwrap();
    let ids: Vec<_> = agents.iter().map(|a| a["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["RA1", "RA2"]);
    for key in [
        "phi",
        "explored_free",
        "gt_free",
        "verdict",
        "pending_requests",
        "awaiting_grasp",
        "frontiers",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v.get("map").is_none());
}

#[tokio::test]
async fn paused_until_start_then_start_twice_conflicts() {
    let state = start(&fixture("single_room.toml"), false);
    tokio::time::sleep(Duration::from_millis(30)).await;
    assert_eq!(state.snapshot().tick, 0);
    let (code, v) = call(&state, "POST", "/api/command", Some(json!({"kind": "Start"}))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    assert_eq!(v["accepted"], true);
    wait_for(&state, "first tick", |s| s.started && s.tick > 0).await;
    let (code, v) = call(&state, "POST", "/api/command", Some(json!({"kind": "Start"}))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert_eq!(v["status"], 409);
    assert!(v["error"].as_str().unwrap().contains("already running"));
}

#[tokio::test]
async fn stop_aborts_within_one_tick() {
    let state = start(&fixture("two_rooms.toml"), true);
    let before = wait_for(&state, "a few ticks", |s| s.tick >= 3).await;
    let (code, v) = call(&state, "POST", "/api/command", Some(json!({"kind": "Stop"}))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let seen = v["tick"].as_u64().unwrap();
    assert!(seen >= before.tick);
    let s = wait_for(&state, "terminal", |s| s.outcome.is_terminal()).await;
    assert!(matches!(
        s.outcome,
        Outcome::Aborted {
            reason: AbortReason::OperatorStop,
            ..
        }
    ));
    assert!(s.tick <= seen + 1, "stopped at {} after command seen at {seen}", s.tick);

    let (code, v) = call(&state, "POST", "/api/command", Some(json!({"kind": "Stop"}))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("ended"));
}

#[tokio::test]
async fn malformed_and_invalid_commands_are_rejected() {
    let state = start(&fixture("two_rooms.toml"), false);
    let req = Request::builder()
        .method("POST")
        .uri("/api/command")
        .body(Body::from("{not json"))
        .unwrap();
    let (code, v) = raw(&state, req).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("malformed"));

    let (code, _) = call(&state, "POST", "/api/command", Some(json!({"kind": "Dance"}))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let teleop = json!({"kind": "Teleop", "agent": "RA1", "dc": 2, "dr": 0});
    let (code, v) = call(&state, "POST", "/api/command", Some(teleop)).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("one cell"));

    let teleop = json!({"kind": "Teleop", "agent": "RA9", "dc": 1, "dr": 0});
    let (code, _) = call(&state, "POST", "/api/command", Some(teleop)).await;
    assert_eq!(code, StatusCode::NOT_FOUND);

    let (code, _) = call(
        &state,
        "POST",
        "/api/command",
        Some(json!({"kind": "Teleop", "agent": "RA1", "dc": 1, "dr": 0})),
    )
    .await;
    assert_eq!(code, StatusCode::ACCEPTED);
}

#[tokio::test]
async fn grasp_for_unknown_request_is_404() {
    let state = start(&fixture("two_rooms.toml"), false);
    let (code, v) = call(&state, "POST", "/api/help/42/grasp", Some(json!({"x": 8.1, "y": 3.7}))).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
    assert_eq!(v["status"], 404);
    let (code, _) = call(&state, "POST", "/api/help/abc/grasp", Some(json!({"x": 8.1, "y": 3.7}))).await;
    assert_eq!(code, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn map_documents_use_the_graymap_palette() {
    let sc = fixture("two_rooms.toml");
    let spec = sc.grid_spec().unwrap();
    let state = start(&sc, true);
    wait_for(&state, "a tick", |s| s.tick >= 1).await;

    for uri in ["/api/map", "/api/groundtruth"] {
        let (code, v) = call(&state, "GET", uri, None).await;
        assert_eq!(code, StatusCode::OK, "{uri}");
        let doc: MapDocument = serde_json::from_value(v).unwrap();
        assert_eq!(doc.palette, PALETTE);
        assert_eq!(
            (doc.palette.free, doc.palette.unknown, doc.palette.occupied),
            (254, 205, 0)
        );
        assert_eq!((doc.width, doc.height), (spec.width, spec.height));
        assert_eq!(doc.rows.len(), spec.height);
        assert!(doc.rows.iter().all(|r| r.len() == spec.width));
        assert_eq!(doc.resolution, Some(spec.resolution));
        let values = [PALETTE.free, PALETTE.unknown, PALETTE.occupied];
        assert!(doc.rows.iter().flatten().all(|v| values.contains(v)), "{uri}");
        assert!(doc.rows.iter().flatten().any(|&v| v == PALETTE.free), "{uri}");
    }

    let (_, gt) = call(&state, "GET", "/api/groundtruth", None).await;
    let gt: MapDocument = serde_json::from_value(gt).unwrap();
    assert!(gt.rows.iter().flatten().any(|&v| v == PALETTE.occupied));
}

#[tokio::test]
async fn event_stream_opens_with_state() {
    let state = start(&fixture("single_room.toml"), false);
    let req = Request::builder().uri("/api/events").body(Body::empty()).unwrap();
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let frame = body.frame().await.unwrap().unwrap();
    let text = String::from_utf8(frame.into_data().unwrap().to_vec()).unwrap();
    assert!(text.starts_with("event: state\n"), "{text}");
    let data = text.lines().find_map(|l| l.strip_prefix("data: ")).unwrap();
    let v: Value = serde_json::from_str(data).unwrap();
    assert_eq!(v["tick"], 0);

    let (code, _) = call(&state, "POST", "/api/command", Some(json!({"kind": "Start"}))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    let mut names = Vec::new();
    while !names.iter().any(|n: &String| n == "tick") {
        let frame = tokio::time::timeout(Duration::from_secs(30), body.frame())
            .await
            .unwrap()
            .unwrap()
            .unwrap();
        let Ok(data) = frame.into_data() else { continue };
        let text = String::from_utf8(data.to_vec()).unwrap();
        names.extend(
            text.lines()
                .filter_map(|l| l.strip_prefix("event: "))
                .map(str::to_owned),
        );
    }
    assert!(names.iter().any(|n| n == "mission"), "{names:?}");
}

#[tokio::test]
async fn operator_grasp_resolves_the_blocked_doorway() {
    let mut sc = fixture("two_rooms.toml");
    sc.file.human = HumanMode::Interactive;
    let state = start(&sc, true);
    let s = wait_for(&state, "a grasp query", |s| {
        !s.awaiting_grasp.is_empty() || s.outcome.is_terminal()
    })
    .await;
    let id = *s
        .awaiting_grasp
        .first()
        .expect("mission ended before asking for a grasp");
    assert_eq!(s.pending_requests.len(), 1);

    let (code, _) = call(
        &state,
        "POST",
        &format!("/api/help/{id}/grasp"),
        Some(json!({"x": "far", "y": 0})),
    )
    .await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let uri = format!("/api/help/{id}/grasp");
    let (code, v) = call(&state, "POST", &uri, Some(json!({"x": 8.1, "y": 3.7}))).await;
    assert_eq!(code, StatusCode::ACCEPTED, "{v}");

    let s = wait_for(&state, "terminal", |s| s.outcome.is_terminal()).await;
    assert_eq!(s.outcome, Outcome::Done);
    assert!(s.phi >= 95.0);
    assert!(s.pending_requests.is_empty());

    let (code, _) = call(&state, "POST", &uri, Some(json!({"x": 8.1, "y": 3.7}))).await;
    assert_eq!(code, StatusCode::CONFLICT);
}
