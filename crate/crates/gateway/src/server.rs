//! Control-monitor HTTP service.
//!
//! The mission runs on its own thread and publishes an immutable snapshot
//! after every tick; handlers only ever read the latest snapshot or push
//! operator commands into the mission mailbox, which the loop drains at the
//! next tick boundary.
//!
//! | method | path                     | body                    |
//! |--------|--------------------------|-------------------------|
//! | GET    | `/api/state`             | mission snapshot        |
//! | GET    | `/api/map`               | merged map document     |
//! | GET    | `/api/groundtruth`       | ground-truth document   |
//! | GET    | `/api/events`            | server-sent event stream|
//! | POST   | `/api/command`           | operator command        |
//! | POST   | `/api/help/{id}/grasp`   | `{"x": .., "y": ..}`    |

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use anyhow::Result;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::Serialize;
use sitescout_core::geom::Point2;
use sitescout_core::mission::{Mailbox, Mission, MissionEvent, MissionResult, MissionSnapshot, OperatorCommand};
use tokio::sync::broadcast;

use crate::artifacts::{write_run_dir, MapDocument};

const IDLE_POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Wall-clock pause between ticks.
    pub tick_interval: Duration,
    /// Start ticking immediately instead of waiting for a Start command.
    pub autostart: bool,
    /// Where to write the run artifacts once the mission ends.
    pub out_dir: Option<PathBuf>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            tick_interval: Duration::from_millis(100),
            autostart: false,
            out_dir: None,
        }
    }
}

struct Published {
    snapshot: MissionSnapshot,
    known_requests: BTreeSet<u64>,
}

struct Shared {
    latest: RwLock<Arc<Published>>,
    mailbox: Mailbox,
    events: broadcast::Sender<String>,
    groundtruth: MapDocument,
    agents: BTreeSet<String>,
}

/// Handle shared by the HTTP handlers.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    fn latest(&self) -> Arc<Published> {
        self.0.latest.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn snapshot(&self) -> MissionSnapshot {
        self.latest().snapshot.clone()
    }
}

#[derive(Serialize)]
struct StreamItem<'a> {
    tick: u64,
    #[serde(flatten)]
    event: &'a MissionEvent,
}

#[derive(Serialize)]
struct TickItem<'a> {
    tick: u64,
    phi: f64,
    verdict: &'a str,
    outcome: &'a sitescout_core::mission::Outcome,
}

/// Start the mission loop on a background thread.
///
/// The thread ends when the mission reaches a terminal outcome; it returns
/// the result (with artifact paths when `out_dir` is set).
pub fn spawn_mission(
    mut mission: Mission,
    opts: ServeOptions,
) -> Result<(AppState, JoinHandle<Result<MissionResult>>)> {
    if !opts.autostart {
        mission.pause_until_start();
    }
    let spec = *mission.world().spec();
    let groundtruth = MapDocument::from_pgm(&mission.gt().export_map(), Some(spec.resolution), Some(spec.origin))?;
    let (events, _) = broadcast::channel(1024);
    let mut known = BTreeSet::new();
    for (_, e) in mission.events() {
        if let MissionEvent::HelpRequested { request } = e {
            known.insert(request.request_id);
        }
    }
    let shared = Arc::new(Shared {
        latest: RwLock::new(Arc::new(Published {
            snapshot: mission.snapshot(),
            known_requests: known.clone(),
        })),
        mailbox: mission.mailbox(),
        events,
        groundtruth,
        agents: mission.world().agents().iter().map(|a| a.id.clone()).collect(),
    });
    let state = AppState(shared.clone());

    let handle = std::thread::Builder::new().name("mission".into()).spawn(move || {
        let mut sent = mission.events().len();
        loop {
            let ticked = mission.step();
            if ticked {
                for (tick, event) in &mission.events()[sent..] {
                    if let MissionEvent::HelpRequested { request } = event {
                        known.insert(request.request_id);
                    }
                    if let Ok(line) = serde_json::to_string(&StreamItem { tick: *tick, event }) {
                        let _ = shared.events.send(format!("mission\n{line}"));
                    }
                }
                sent = mission.events().len();
                let snapshot = mission.snapshot();
                let tick_line = serde_json::to_string(&TickItem {
                    tick: snapshot.tick,
                    phi: snapshot.phi,
                    verdict: &snapshot.verdict,
                    outcome: &snapshot.outcome,
                });
                *shared.latest.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(Published {
                    snapshot,
                    known_requests: known.clone(),
                });
                if let Ok(line) = tick_line {
                    let _ = shared.events.send(format!("tick\n{line}"));
                }
            }
            if mission.is_terminal() {
                return match &opts.out_dir {
                    Some(dir) => write_run_dir(&mission, dir),
                    None => Ok(mission.result()),
                };
            }
            std::thread::sleep(if ticked { opts.tick_interval } else { IDLE_POLL });
        }
    })?;
    Ok((state, handle))
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.1, "status": self.0.as_u16() });
        (self.0, Json(body)).into_response()
    }
}

fn err(code: StatusCode, msg: impl Into<String>) -> ApiError {
    ApiError(code, msg.into())
}

#[derive(Serialize)]
struct Accepted {
    accepted: bool,
    /// Tick of the snapshot the command was checked against; it takes effect
    /// in the following tick.
    tick: u64,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/state", get(get_state))
        .route("/api/map", get(get_map))
        .route("/api/groundtruth", get(get_groundtruth))
        .route("/api/events", get(get_events))
        .route("/api/command", post(post_command))
        .route("/api/help/{id}/grasp", post(post_grasp))
        .with_state(state)
}

async fn get_state(State(s): State<AppState>) -> Json<MissionSnapshot> {
    Json(s.snapshot())
}

async fn get_map(State(s): State<AppState>) -> Result<Json<MapDocument>, ApiError> {
    let latest = s.latest();
    let grid = latest
        .snapshot
        .map
        .as_ref()
        .ok_or_else(|| err(StatusCode::SERVICE_UNAVAILABLE, "no map yet"))?;
    let spec = grid.spec();
    MapDocument::from_pgm(&grid.export_map(), Some(spec.resolution), Some(spec.origin))
        .map(Json)
        .map_err(|e| err(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

async fn get_groundtruth(State(s): State<AppState>) -> Json<MapDocument> {
    Json(s.0.groundtruth.clone())
}

async fn get_events(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.0.events.subscribe();
    let first = serde_json::to_string(&s.snapshot()).unwrap_or_default();
    let head = stream::once(async move { Ok(Event::default().event("state").data(first)) });
    let tail = stream::unfold(rx, |mut rx| async move {
        let ev = match rx.recv().await {
            Ok(msg) => {
                let (name, data) = msg.split_once('\n').unwrap_or(("mission", &msg));
                Event::default().event(name).data(data)
            }
            Err(broadcast::error::RecvError::Lagged(n)) => Event::default().event("lagged").data(n.to_string()),
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((Ok(ev), rx))
    });
    Sse::new(head.chain(tail)).keep_alive(KeepAlive::default())
}

fn check_grasp(latest: &Published, request_id: u64, point: Point2) -> Result<(), ApiError> {
    if !latest.known_requests.contains(&request_id) {
        return Err(err(StatusCode::NOT_FOUND, format!("unknown help request {request_id}")));
    }
    if !point.is_finite() {
        return Err(err(StatusCode::BAD_REQUEST, "coordinates must be finite"));
    }
    if !latest.snapshot.awaiting_grasp.contains(&request_id) {
        return Err(err(
            StatusCode::CONFLICT,
            format!("help request {request_id} is not waiting for a grasp point"),
        ));
    }
    Ok(())
}

fn admit(s: &AppState, cmd: OperatorCommand) -> Result<Json<Accepted>, ApiError> {
    cmd.check().map_err(|m| err(StatusCode::BAD_REQUEST, m))?;
    let latest = s.latest();
    let snap = &latest.snapshot;
    if snap.outcome.is_terminal() {
        return Err(err(StatusCode::CONFLICT, "mission has ended"));
    }
    match &cmd {
        OperatorCommand::Start if snap.started => return Err(err(StatusCode::CONFLICT, "mission already running")),
        OperatorCommand::Teleop { agent, .. } if !s.0.agents.contains(agent) => {
            return Err(err(StatusCode::NOT_FOUND, format!("unknown agent '{agent}'")))
        }
        OperatorCommand::GraspPoint { request_id, point } => check_grasp(&latest, *request_id, *point)?,
        _ => {}
    }
    s.0.mailbox.push(cmd);
    Ok(Json(Accepted {
        accepted: true,
        tick: snap.tick,
    }))
}

async fn post_command(State(s): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Accepted>), ApiError> {
    let cmd: OperatorCommand =
        serde_json::from_slice(&body).map_err(|e| err(StatusCode::BAD_REQUEST, format!("malformed command: {e}")))?;
    admit(&s, cmd).map(|j| (StatusCode::ACCEPTED, j))
}

async fn post_grasp(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<Accepted>), ApiError> {
    let request_id: u64 = id
        .parse()
        .map_err(|_| err(StatusCode::NOT_FOUND, format!("unknown help request '{id}'")))?;
    let point: Point2 = serde_json::from_slice(&body)
        .map_err(|e| err(StatusCode::BAD_REQUEST, format!("malformed grasp point: {e}")))?;
    admit(&s, OperatorCommand::GraspPoint { request_id, point }).map(|j| (StatusCode::ACCEPTED, j))
}

/// Bind and serve until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
