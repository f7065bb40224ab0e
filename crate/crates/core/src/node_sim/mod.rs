//! Emulated WiFi sensor nodes. Each node serves its status on `GET /status`
//! in the wire format the controller crawls; physical stimuli are replaced by
//! injection calls and timed scenario scripts.

mod scenario;

pub use scenario::{
    run_scenario, Action, AppliedAction, ScenarioReport, ScenarioScript, TimedAction,
    SCENARIO_VERSION,
};

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error("node {node_id} is a {kind} node; {op} does not apply")]
    WrongKind {
        node_id: String,
        kind: NodeKind,
        op: &'static str,
    },
    #[error("invalid value for {op}: {detail}")]
    InvalidValue { op: &'static str, detail: String },
    #[error("duplicate node id {0}")]
    DuplicateId(String),
    #[error("unknown node id {0}")]
    UnknownNode(String),
    #[error("invalid scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeKind {
    Pir,
    Fire,
}

impl NodeKind {
    /// Key of the sensor value in the status payload.
    pub fn value_key(self) -> &'static str {
        match self {
            NodeKind::Pir => "pirvalue",
            NodeKind::Fire => "firevalue",
        }
    }
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NodeKind::Pir => "PIR",
            NodeKind::Fire => "FIRE",
        })
    }
}

impl std::str::FromStr for NodeKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "PIR" => Ok(NodeKind::Pir),
            "FIRE" => Ok(NodeKind::Fire),
            _ => Err(format!("unknown node kind {s:?} (expected PIR or FIRE)")),
        }
    }
}

fn default_hardware() -> String {
    "esp8266".into()
}

fn default_addr() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

fn default_fire_threshold() -> f64 {
    50.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: String,
    pub name: String,
    #[serde(default = "default_hardware")]
    pub hardware: String,
    pub kind: NodeKind,
    #[serde(default = "default_addr")]
    pub addr: SocketAddr,
    #[serde(default = "default_fire_threshold")]
    pub fire_threshold: f64,
}

impl NodeConfig {
    pub fn pir(node_id: &str, name: &str) -> Self {
        Self {
            node_id: node_id.into(),
            name: name.into(),
            hardware: default_hardware(),
            kind: NodeKind::Pir,
            addr: default_addr(),
            fire_threshold: default_fire_threshold(),
        }
    }

    pub fn fire(node_id: &str, name: &str) -> Self {
        Self {
            kind: NodeKind::Fire,
            ..Self::pir(node_id, name)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PirState {
    pub pirvalue: u8,
    pub connected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FireState {
    pub temperature_celsius: f64,
    pub firevalue: u8,
    pub buzzer_on: bool,
    pub relay_on: bool,
    pub connected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE")]
pub enum NodeState {
    Pir(PirState),
    Fire(FireState),
}

/// Room temperature a fire node starts at.
pub const AMBIENT_CELSIUS: f64 = 25.0;

impl NodeState {
    pub fn initial(cfg: &NodeConfig) -> Self {
        match cfg.kind {
            NodeKind::Pir => NodeState::Pir(PirState {
                pirvalue: 0,
                connected: true,
            }),
            NodeKind::Fire => NodeState::Fire(FireState {
                temperature_celsius: AMBIENT_CELSIUS,
                firevalue: 0,
                buzzer_on: false,
                relay_on: false,
                connected: true,
            }),
        }
    }

    pub fn value(&self) -> u8 {
        match self {
            NodeState::Pir(s) => s.pirvalue,
            NodeState::Fire(s) => s.firevalue,
        }
    }

    pub fn connected(&self) -> bool {
        match self {
            NodeState::Pir(s) => s.connected,
            NodeState::Fire(s) => s.connected,
        }
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialises")
}

/// Status payload, byte-stable for a given config and state.
pub fn render_status(cfg: &NodeConfig, state: &NodeState) -> String {
    let key = cfg.kind.value_key();
    format!(
        "{{\"variables\":[{{\"{key}\":{}}},{{\"id\":{},\"name\":{},\"hardware\":{},\"connected\":{}}}]}}",
        state.value(),
        json_str(&cfg.node_id),
        json_str(&cfg.name),
        json_str(&cfg.hardware),
        state.connected()
    )
}

struct NodeShared {
    cfg: NodeConfig,
    state: RwLock<NodeState>,
}

/// A running node. Dropping the handle does not stop the server; call
/// [`SensorNode::stop`].
pub struct SensorNode {
    shared: Arc<NodeShared>,
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    server: Option<JoinHandle<()>>,
}

async fn status(State(shared): State<Arc<NodeShared>>) -> impl IntoResponse {
    let state = *shared.state.read().unwrap();
    (
        [(header::CONTENT_TYPE, "application/json")],
        render_status(&shared.cfg, &state),
    )
}

pub async fn start_node(cfg: NodeConfig) -> Result<SensorNode, NodeError> {
    let listener = TcpListener::bind(cfg.addr)
        .await
        .map_err(|source| NodeError::Bind {
            addr: cfg.addr,
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| NodeError::Bind {
        addr: cfg.addr,
        source,
    })?;
    let shared = Arc::new(NodeShared {
        state: RwLock::new(NodeState::initial(&cfg)),
        cfg,
    });
    let app = Router::new()
        .route("/status", get(status))
        .fallback(|| async { StatusCode::NOT_FOUND })
        .with_state(shared.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    tracing::info!(node = %shared.cfg.node_id, %addr, "sensor node listening");
    Ok(SensorNode {
        shared,
        addr,
        shutdown: Some(tx),
        server: Some(server),
    })
}

impl SensorNode {
    pub fn config(&self) -> &NodeConfig {
        &self.shared.cfg
    }

    pub fn id(&self) -> &str {
        &self.shared.cfg.node_id
    }

    pub fn kind(&self) -> NodeKind {
        self.shared.cfg.kind
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn status_url(&self) -> String {
        format!("http://{}/status", self.addr)
    }

    pub fn state(&self) -> NodeState {
        *self.shared.state.read().unwrap()
    }

    pub fn payload(&self) -> String {
        render_status(&self.shared.cfg, &self.state())
    }

    fn wrong_kind(&self, op: &'static str) -> NodeError {
        NodeError::WrongKind {
            node_id: self.id().into(),
            kind: self.kind(),
            op,
        }
    }

    pub fn set_pir(&self, value: u8) -> Result<NodeState, NodeError> {
        if value > 1 {
            return Err(NodeError::InvalidValue {
                op: "set_pir",
                detail: format!("{value} is not 0 or 1"),
            });
        }
        let mut st = self.shared.state.write().unwrap();
        match &mut *st {
            NodeState::Pir(s) => s.pirvalue = value,
            NodeState::Fire(_) => return Err(self.wrong_kind("set_pir")),
        }
        Ok(*st)
    }

    /// Updates the temperature; fire, buzzer and relay switch on at or above
    /// the node's threshold.
    pub fn set_temperature(&self, celsius: f64) -> Result<NodeState, NodeError> {
        if !celsius.is_finite() {
            return Err(NodeError::InvalidValue {
                op: "set_temperature",
                detail: format!("{celsius} is not finite"),
            });
        }
        let threshold = self.shared.cfg.fire_threshold;
        let mut st = self.shared.state.write().unwrap();
        match &mut *st {
            NodeState::Fire(s) => {
                let on = celsius >= threshold;
                s.temperature_celsius = celsius;
                s.firevalue = on as u8;
                s.buzzer_on = on;
                s.relay_on = on;
            }
            NodeState::Pir(_) => return Err(self.wrong_kind("set_temperature")),
        }
        Ok(*st)
    }

    pub fn set_connected(&self, connected: bool) -> NodeState {
        let mut st = self.shared.state.write().unwrap();
        match &mut *st {
            NodeState::Pir(s) => s.connected = connected,
            NodeState::Fire(s) => s.connected = connected,
        }
        *st
    }

    /// Stops serving; later requests are refused.
    pub async fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(server) = self.server.take() {
            let abort = server.abort_handle();
            if tokio::time::timeout(Duration::from_secs(2), server)
                .await
                .is_err()
            {
                abort.abort();
            }
        }
    }

    pub fn is_running(&self) -> bool {
        self.server.is_some()
    }
}

/// A set of nodes keyed by id.
#[derive(Default)]
pub struct Fleet {
    nodes: BTreeMap<String, SensorNode>,
}

impl Fleet {
    pub async fn start(configs: Vec<NodeConfig>) -> Result<Self, NodeError> {
        let mut fleet = Fleet::default();
        for cfg in configs {
            if fleet.nodes.contains_key(&cfg.node_id) {
                fleet.stop_all().await;
                return Err(NodeError::DuplicateId(cfg.node_id));
            }
            match start_node(cfg).await {
                Ok(node) => {
                    fleet.nodes.insert(node.id().to_string(), node);
                }
                Err(e) => {
                    fleet.stop_all().await;
                    return Err(e);
                }
            }
        }
        Ok(fleet)
    }

    pub fn get(&self, id: &str) -> Result<&SensorNode, NodeError> {
        self.nodes
            .get(id)
            .ok_or_else(|| NodeError::UnknownNode(id.into()))
    }

    pub fn get_mut(&mut self, id: &str) -> Result<&mut SensorNode, NodeError> {
        self.nodes
            .get_mut(id)
            .ok_or_else(|| NodeError::UnknownNode(id.into()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SensorNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub async fn stop_all(&mut self) {
        for node in self.nodes.values_mut() {
            node.stop().await;
        }
    }
}
