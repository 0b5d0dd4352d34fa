//! Local HTTP + WebSocket service over one live hand session.

pub mod api;
pub mod jobs;
pub mod session;

use std::net::SocketAddr;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use deltahands::config::HandConfig;
use deltahands::hand::{hand_workspace, SynergyMaps, WorkspaceOptions};
use deltahands::urdf::{generate_for, Sidecar, UrdfOptions};
use deltahands::{Aabb, Point3};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use api::{ApiError, ClientMessage, IkRequest, IkResponse, ServerReply};
use jobs::{JobRequest, JobStore};
use session::{SessionHandle, Snapshot, WorkspaceSummary};

pub const SCHEMA_VERSION: u32 = 1;

/// Upper bound on state frames per second per client.
pub const MAX_RATE_HZ: f64 = 60.0;
/// Frame rate while the state is unchanged; keeps idle clients above 10 Hz.
pub const IDLE_RATE_HZ: f64 = 20.0;

#[derive(Clone)]
pub struct AppState {
    pub session: SessionHandle,
    pub jobs: JobStore,
}

impl AppState {
    pub async fn new(config: HandConfig) -> Result<Self, ApiError> {
        let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        Ok(Self { session: SessionHandle::start(config).await?, jobs: JobStore::new(workers) })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/hand", get(get_hand).put(put_hand))
        .route("/api/state", get(get_state))
        .route("/api/workspace", get(get_workspace))
        .route("/api/ik", axum::routing::post(post_ik))
        .route("/api/grasp/jobs", axum::routing::post(post_job))
        .route("/api/grasp/jobs/{id}", get(get_job).delete(delete_job))
        .route("/api/urdf", get(get_urdf))
        .route("/ws", get(ws_upgrade))
        .with_state(state)
}

/// Serves on an already bound listener until ctrl-c.
pub async fn run(listener: TcpListener, config: HandConfig) -> Result<(), ServeError> {
    let state = AppState::new(config).await.map_err(ServeError::Config)?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServeError::Io)
}

pub async fn serve(host: &str, port: u16, config: HandConfig) -> Result<(), ServeError> {
    let listener = TcpListener::bind((host, port)).await.map_err(ServeError::Io)?;
    if let Ok(addr) = listener.local_addr() {
        eprintln!("listening on http://{addr}");
    }
    run(listener, config).await
}

/// Binds an ephemeral port and serves in the background.
pub async fn spawn_local(config: HandConfig) -> Result<SocketAddr, ServeError> {
    let listener = TcpListener::bind("127.0.0.1:0").await.map_err(ServeError::Io)?;
    let addr = listener.local_addr().map_err(ServeError::Io)?;
    let state = AppState::new(config).await.map_err(ServeError::Config)?;
    tokio::spawn(async move {
        let _ = axum::serve(listener, router(state)).await;
    });
    Ok(addr)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("io: {0}")]
    Io(std::io::Error),
    #[error("invalid hand: {0}")]
    Config(ApiError),
}

#[derive(Serialize)]
struct HandView {
    #[serde(flatten)]
    config: HandConfig,
    n_reduced: usize,
    synergy: SynergyMaps,
    workspace: WorkspaceSummary,
}

fn hand_view(s: &Snapshot) -> HandView {
    HandView {
        config: s.config.clone(),
        n_reduced: s.hand.n_reduced(),
        synergy: s.hand.synergy.clone(),
        workspace: s.workspace.clone(),
    }
}

async fn get_hand(State(st): State<AppState>) -> Json<HandView> {
    Json(hand_view(&st.session.snapshot()))
}

async fn put_hand(State(st): State<AppState>, body: Bytes) -> Result<Json<HandView>, ApiError> {
    let cfg: HandConfig = serde_json::from_slice(&body).map_err(ApiError::from_json)?;
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(ApiError::invalid("UnsupportedVersion", format!("schema_version {}", cfg.schema_version)));
    }
    let snap = st.session.put_hand(cfg).await?;
    Ok(Json(hand_view(&snap)))
}

async fn get_state(State(st): State<AppState>) -> Response {
    Json(st.session.snapshot().state.clone()).into_response()
}

#[derive(Deserialize)]
struct WorkspaceQuery {
    resolution: Option<usize>,
}

#[derive(Serialize)]
struct FingerCloud {
    finger: usize,
    actuators: Vec<usize>,
    points: Vec<Point3>,
}

#[derive(Serialize)]
struct WorkspaceView {
    schema_version: u32,
    resolution: usize,
    fingers: Vec<FingerCloud>,
    bbox: Option<Aabb>,
}

async fn get_workspace(State(st): State<AppState>, Query(q): Query<WorkspaceQuery>) -> Result<Json<WorkspaceView>, ApiError> {
    let resolution = q.resolution.unwrap_or(5);
    if !(2..=25).contains(&resolution) {
        return Err(ApiError::invalid("InvalidResolution", format!("resolution must be in 2..=25, got {resolution}")));
    }
    let snap = st.session.snapshot();
    let ws = tokio::task::spawn_blocking(move || {
        hand_workspace(&snap.hand, &WorkspaceOptions { grid: resolution, skip_overlap: true, ..Default::default() })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(ApiError::from_hand)?;
    let fingers = ws
        .fingers
        .into_iter()
        .map(|f| FingerCloud {
            finger: f.finger,
            actuators: f.actuators,
            points: f.grid.samples.iter().filter_map(|s| s.position).collect(),
        })
        .collect();
    Ok(Json(WorkspaceView { schema_version: SCHEMA_VERSION, resolution, fingers, bbox: ws.bbox }))
}

async fn post_ik(State(st): State<AppState>, body: Bytes) -> Result<Json<IkResponse>, ApiError> {
    let req: IkRequest = serde_json::from_slice(&body).map_err(ApiError::from_json)?;
    let snap = st.session.snapshot();
    let ik = snap.hand.ik(&req.targets).map_err(ApiError::from_hand)?;
    let full = snap.hand.expand(&ik.a_reduced).map_err(ApiError::from_hand)?;
    Ok(Json(IkResponse {
        schema_version: SCHEMA_VERSION,
        reduced_actuation: ik.a_reduced,
        full_actuation: full,
        residuals: ik.residual,
    }))
}

async fn post_job(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: JobRequest = serde_json::from_slice(&body).map_err(ApiError::from_json)?;
    let view = st.jobs.submit(st.session.snapshot().hand.clone(), req)?;
    Ok((StatusCode::ACCEPTED, Json(view)).into_response())
}

async fn get_job(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    st.jobs.get(id).map(|v| Json(v).into_response()).ok_or_else(|| ApiError::not_found(format!("no job {id}")))
}

async fn delete_job(State(st): State<AppState>, Path(id): Path<u64>) -> Result<Response, ApiError> {
    st.jobs.cancel(id).map(|v| Json(v).into_response()).ok_or_else(|| ApiError::not_found(format!("no job {id}")))
}

#[derive(Serialize)]
struct UrdfView {
    schema_version: u32,
    urdf: String,
    sidecar: Sidecar,
}

async fn get_urdf(State(st): State<AppState>) -> Json<UrdfView> {
    let out = generate_for(&st.session.snapshot().hand, &UrdfOptions::default());
    Json(UrdfView { schema_version: SCHEMA_VERSION, urdf: out.urdf, sidecar: out.sidecar })
}

async fn ws_upgrade(State(st): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| client(socket, st))
}

async fn dispatch(st: &AppState, text: &str) -> ServerReply {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return ServerReply::error(&ApiError::new(StatusCode::BAD_REQUEST, "MalformedMessage", e.to_string())),
    };
    if let Some(v) = msg.schema_version() {
        if v != SCHEMA_VERSION {
            return ServerReply::error(&ApiError::invalid("UnsupportedVersion", format!("schema_version {v}")));
        }
    }
    let name = msg.name();
    let res = match msg {
        ClientMessage::Targets { fingertips, .. } => st.session.set_targets(fingertips).await,
        ClientMessage::TeleopSample { sample, .. } => st.session.teleop_sample(sample).await,
        ClientMessage::Mapping { mapping, .. } => st.session.set_mapping(mapping).await,
        ClientMessage::Synergy { topology, .. } => st.session.set_synergy(topology).await,
    };
    match res {
        Ok(seq) => ServerReply::ack(name, seq),
        Err(e) => ServerReply::error(&e),
    }
}

/// One socket: replies and state frames share a writer. State frames go out when the state
/// changes (at most `MAX_RATE_HZ`) and otherwise at `IDLE_RATE_HZ`.
async fn client(socket: WebSocket, st: AppState) {
    use futures_util::{SinkExt, StreamExt};
    let (mut sink, mut stream) = socket.split();
    let (reply_tx, mut reply_rx) = mpsc::channel::<ServerReply>(64);
    let mut states = st.session.subscribe();

    let writer = tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / MAX_RATE_HZ));
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        let keepalive = Duration::from_secs_f64(1.0 / IDLE_RATE_HZ);
        let mut last_seq = None;
        let mut last_sent = tokio::time::Instant::now() - keepalive;
        loop {
            tokio::select! {
                reply = reply_rx.recv() => {
                    let Some(reply) = reply else { break };
                    let text = serde_json::to_string(&reply).expect("reply serializes");
                    if sink.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                _ = tick.tick() => {
                    let snap = states.borrow_and_update().clone();
                    let due = last_seq != Some(snap.state.seq) || last_sent.elapsed() >= keepalive;
                    if due {
                        let text = serde_json::to_string(&snap.state).expect("state serializes");
                        if sink.send(Message::Text(text.into())).await.is_err() {
                            break;
                        }
                        last_seq = Some(snap.state.seq);
                        last_sent = tokio::time::Instant::now();
                    }
                }
            }
        }
    });

    while let Some(Ok(msg)) = stream.next().await {
        let reply = match msg {
            Message::Text(t) => dispatch(&st, t.as_str()).await,
            Message::Binary(b) => match std::str::from_utf8(&b) {
                Ok(t) => dispatch(&st, t).await,
                Err(_) => ServerReply::error(&ApiError::new(StatusCode::BAD_REQUEST, "MalformedMessage", "binary frame is not UTF-8".into())),
            },
            Message::Close(_) => break,
            _ => continue,
        };
        if reply_tx.send(reply).await.is_err() {
            break;
        }
    }
    drop(reply_tx);
    writer.abort();
}
