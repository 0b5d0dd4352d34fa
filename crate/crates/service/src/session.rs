//! The single live session and the task that owns it.

use std::sync::Arc;
use std::time::Instant;

use deltahands::config::{HandConfig, TopologySpec};
use deltahands::hand::{hand_workspace, Hand, WorkspaceOptions};
use deltahands::teleop::{Calibration, Mapping, PoseSample, Teleop, TeleopCommand};
use deltahands::{Aabb, Point3};
use serde::Serialize;
use tokio::sync::{mpsc, oneshot, watch};

use crate::api::ApiError;
use crate::SCHEMA_VERSION;

/// Broadcast payload. `full_actuation` is always `C · reduced_actuation` for the hand of the
/// same snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateMessage {
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub schema_version: u32,
    pub seq: u64,
    pub n_reduced: usize,
    pub reduced_actuation: Vec<f64>,
    pub full_actuation: Vec<f64>,
    pub targets: Vec<Point3>,
    pub fingertips: Vec<Point3>,
    pub residuals: Vec<f64>,
    pub mapping: Mapping,
    /// Seconds since the service started.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkspaceSummary {
    pub grid: usize,
    pub bbox: Option<Aabb>,
    pub reachable: Vec<usize>,
}

/// Immutable view of the session; readers never block the owner.
#[derive(Debug)]
pub struct Snapshot {
    pub config: HandConfig,
    pub hand: Hand,
    pub teleop: Arc<Teleop>,
    pub workspace: WorkspaceSummary,
    pub state: StateMessage,
}

pub(crate) enum Command {
    PutHand(HandConfig, oneshot::Sender<Result<Arc<Snapshot>, ApiError>>),
    Targets(Vec<Point3>, oneshot::Sender<Result<u64, ApiError>>),
    Sample(PoseSample, oneshot::Sender<Result<u64, ApiError>>),
    Mapping(Mapping, oneshot::Sender<Result<u64, ApiError>>),
    Synergy(TopologySpec, oneshot::Sender<Result<u64, ApiError>>),
}

struct Built {
    config: HandConfig,
    hand: Hand,
    teleop: Arc<Teleop>,
    workspace: WorkspaceSummary,
}

fn build(config: HandConfig) -> Result<Built, ApiError> {
    let config = config.resolved().map_err(ApiError::from_hand)?;
    let hand = config.build().map_err(ApiError::from_config)?;
    let ws = hand_workspace(&hand, &WorkspaceOptions { skip_overlap: true, ..Default::default() })
        .map_err(ApiError::from_hand)?;
    let workspace = WorkspaceSummary {
        grid: 5,
        bbox: ws.bbox,
        reachable: ws.fingers.iter().map(|f| f.grid.reachable_count).collect(),
    };
    let teleop = Teleop::new(hand.clone(), Calibration::default()).map_err(ApiError::from_teleop)?;
    Ok(Built { config, hand, teleop: Arc::new(teleop), workspace })
}

async fn build_blocking(config: HandConfig) -> Result<Built, ApiError> {
    tokio::task::spawn_blocking(move || build(config))
        .await
        .map_err(|e| ApiError::internal(format!("build task failed: {e}")))?
}

struct Owner {
    started: Instant,
    built: Built,
    mapping: Mapping,
    command: TeleopCommand,
    seq: u64,
    tx: watch::Sender<Arc<Snapshot>>,
}

impl Owner {
    fn home_command(built: &Built) -> Result<TeleopCommand, ApiError> {
        let home = built.hand.fk(&built.hand.home_reduced()).map_err(ApiError::from_hand)?;
        built.teleop.solve(0.0, Point3::ORIGIN, home).map_err(ApiError::from_teleop)
    }

    fn snapshot(&self) -> Result<Arc<Snapshot>, ApiError> {
        let full = self.built.hand.expand(&self.command.reduced_actuation).map_err(ApiError::from_hand)?;
        let state = StateMessage {
            kind: "state",
            schema_version: SCHEMA_VERSION,
            seq: self.seq,
            n_reduced: self.built.hand.n_reduced(),
            reduced_actuation: self.command.reduced_actuation.clone(),
            full_actuation: full,
            targets: self.command.requested_targets.clone(),
            fingertips: self.command.fingertips.clone(),
            residuals: self.command.residual.clone(),
            mapping: self.mapping,
            timestamp: self.started.elapsed().as_secs_f64(),
        };
        Ok(Arc::new(Snapshot {
            config: self.built.config.clone(),
            hand: self.built.hand.clone(),
            teleop: self.built.teleop.clone(),
            workspace: self.built.workspace.clone(),
            state,
        }))
    }

    fn publish(&mut self) -> Result<Arc<Snapshot>, ApiError> {
        self.seq += 1;
        let snap = self.snapshot()?;
        self.tx.send_replace(snap.clone());
        Ok(snap)
    }

    fn t(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Swaps in a new hand and re-solves the current targets on it in one step.
    fn replace(&mut self, built: Built) -> Result<Arc<Snapshot>, ApiError> {
        let command = if self.command.requested_targets.len() == built.hand.n_fingers() {
            built
                .teleop
                .solve(self.t(), Point3::ORIGIN, self.command.requested_targets.clone())
                .or_else(|_| Self::home_command(&built))?
        } else {
            Self::home_command(&built)?
        };
        self.built = built;
        self.command = command;
        self.publish()
    }

    async fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::PutHand(cfg, reply) => {
                let res = match build_blocking(cfg).await {
                    Ok(b) => self.replace(b),
                    Err(e) => Err(e),
                };
                let _ = reply.send(res);
            }
            Command::Synergy(spec, reply) => {
                let cfg = HandConfig { topology: spec, ..self.built.config.clone() };
                let res = match build_blocking(cfg).await {
                    Ok(b) => self.replace(b).map(|s| s.state.seq),
                    Err(e) => Err(e),
                };
                let _ = reply.send(res);
            }
            Command::Targets(targets, reply) => {
                let res = self.targets(targets);
                let _ = reply.send(res);
            }
            Command::Sample(sample, reply) => {
                let res = self.sample(sample);
                let _ = reply.send(res);
            }
            Command::Mapping(mapping, reply) => {
                let res = self
                    .built
                    .teleop
                    .targets(&PoseSample::neutral(), &mapping)
                    .map_err(ApiError::from_teleop)
                    .and_then(|_| {
                        self.mapping = mapping;
                        self.publish().map(|s| s.state.seq)
                    });
                let _ = reply.send(res);
            }
        }
    }

    fn targets(&mut self, targets: Vec<Point3>) -> Result<u64, ApiError> {
        let n = self.built.hand.n_fingers();
        if targets.len() != n {
            return Err(ApiError::invalid("DimensionMismatch", format!("expected {n} fingertips, got {}", targets.len())));
        }
        if !targets.iter().all(Point3::is_finite) {
            return Err(ApiError::invalid("InvalidTarget", "fingertip targets must be finite".into()));
        }
        self.command = self.built.teleop.solve(self.t(), Point3::ORIGIN, targets).map_err(ApiError::from_teleop)?;
        self.publish().map(|s| s.state.seq)
    }

    fn sample(&mut self, sample: PoseSample) -> Result<u64, ApiError> {
        if !sample.is_finite() {
            return Err(ApiError::invalid("InvalidSample", "pose sample must be finite".into()));
        }
        let mut cmd = self.built.teleop.map(&sample, &self.mapping).map_err(ApiError::from_teleop)?;
        cmd.t = self.t();
        self.command = cmd;
        self.publish().map(|s| s.state.seq)
    }
}

/// Handle to the owner task plus the latest snapshot.
#[derive(Clone)]
pub struct SessionHandle {
    tx: mpsc::Sender<Command>,
    rx: watch::Receiver<Arc<Snapshot>>,
}

impl SessionHandle {
    /// Builds the initial hand and starts the owner task.
    pub async fn start(config: HandConfig) -> Result<Self, ApiError> {
        let built = build_blocking(config).await?;
        let command = Owner::home_command(&built)?;
        let placeholder = Arc::new(Snapshot {
            config: built.config.clone(),
            hand: built.hand.clone(),
            teleop: built.teleop.clone(),
            workspace: built.workspace.clone(),
            state: StateMessage {
                kind: "state",
                schema_version: SCHEMA_VERSION,
                seq: 0,
                n_reduced: 0,
                reduced_actuation: Vec::new(),
                full_actuation: Vec::new(),
                targets: Vec::new(),
                fingertips: Vec::new(),
                residuals: Vec::new(),
                mapping: Mapping::Polar,
                timestamp: 0.0,
            },
        });
        let (watch_tx, watch_rx) = watch::channel(placeholder);
        let mut owner =
            Owner { started: Instant::now(), built, mapping: Mapping::Polar, command, seq: 0, tx: watch_tx };
        owner.publish()?;
        let (tx, mut rx) = mpsc::channel::<Command>(256);
        tokio::spawn(async move {
            while let Some(cmd) = rx.recv().await {
                owner.handle(cmd).await;
            }
        });
        Ok(Self { tx, rx: watch_rx })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.rx.borrow().clone()
    }

    pub fn subscribe(&self) -> watch::Receiver<Arc<Snapshot>> {
        self.rx.clone()
    }

    async fn call<T>(&self, make: impl FnOnce(oneshot::Sender<Result<T, ApiError>>) -> Command) -> Result<T, ApiError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).await.map_err(|_| ApiError::internal("session stopped".into()))?;
        rx.await.map_err(|_| ApiError::internal("session stopped".into()))?
    }

    pub async fn put_hand(&self, cfg: HandConfig) -> Result<Arc<Snapshot>, ApiError> {
        self.call(|r| Command::PutHand(cfg, r)).await
    }

    pub async fn set_targets(&self, targets: Vec<Point3>) -> Result<u64, ApiError> {
        self.call(|r| Command::Targets(targets, r)).await
    }

    pub async fn teleop_sample(&self, sample: PoseSample) -> Result<u64, ApiError> {
        self.call(|r| Command::Sample(sample, r)).await
    }

    pub async fn set_mapping(&self, mapping: Mapping) -> Result<u64, ApiError> {
        self.call(|r| Command::Mapping(mapping, r)).await
    }

    pub async fn set_synergy(&self, spec: TopologySpec) -> Result<u64, ApiError> {
        self.call(|r| Command::Synergy(spec, r)).await
    }
}
