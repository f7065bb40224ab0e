//! The master node: polls sensor nodes, runs the surveillance pipeline,
//! dispatches alerts, streams and records video, and serves the dashboard API.

mod api;
pub mod config;
mod dispatch;
pub mod email;
pub mod event;
pub mod frames;
pub mod mjpeg;
mod pipeline;
pub mod poll;
mod recorder;
mod runtime;
pub mod smtp_sink;
pub mod storage;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use api::router as api_router;
pub use config::{CameraConfig, ControllerConfig, EmailConfig, NodeEndpoint};
pub use event::{
    is_valid_path, transition_allowed, AlertChannel, AlertRecord, CommandSource, PipelineState,
    RecordingInfo, Resolution, SurveillanceEvent, Trigger,
};
pub use frames::{Frame, FrameSource};
pub use mjpeg::{FrameHub, MjpegPart, MjpegPartReader};
pub use poll::{extract_sensor_value, poll_node, EdgeTrigger, NodeStatus, PollError};
pub use runtime::{start, ControllerHandle};
pub use smtp_sink::{ParsedMail, ReceivedMail, SmtpSink};
pub use storage::{LogEntry, Storage};

use crate::node_sim::NodeKind;

/// SMS body sent to the owner on an intrusion.
pub const INTRUDER_SMS: &str = "Intruder Detected!!";
/// SMS body sent to the owner on a fire alarm.
pub const FIRE_SMS: &str = "Fire Detected!!";
/// SMS body sent to each authority number on escalation.
pub const AUTHORITY_SMS: &str =
    "Intruder reported at the monitored premises. Assistance requested.";

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("event {event_id}: illegal transition {from} -> {to}")]
    IllegalTransition {
        event_id: String,
        from: PipelineState,
        to: PipelineState,
    },
    #[error("camera error: {0}")]
    Camera(String),
    #[error("recognition assets: {0}")]
    Assets(String),
    #[error("cannot bind {what} on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: std::net::SocketAddr,
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Milliseconds since the Unix epoch.
pub fn now_ms() -> u64 {
    to_ms(SystemTime::now())
}

pub fn to_ms(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// The owner's two possible decisions on an active intrusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserAction {
    FoundOk,
    InformAuthorities,
}

impl std::str::FromStr for UserAction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "found_ok" => Ok(Self::FoundOk),
            "inform_authorities" => Ok(Self::InformAuthorities),
            other => Err(format!("unknown action {other:?}")),
        }
    }
}

/// Reads a reply SMS: trimmed, case-insensitive, runs of whitespace count
/// as one space.
pub fn parse_command(text: &str) -> Option<UserAction> {
    let norm = text
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    match norm.as_str() {
        "found ok" => Some(UserAction::FoundOk),
        "inform authorities" => Some(UserAction::InformAuthorities),
        _ => None,
    }
}

/// Why a command was not applied.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum CommandRejection {
    #[error("no event is awaiting a decision (state {state})")]
    NotActive {
        state: PipelineState,
        active_event: Option<String>,
    },
    #[error("controller is shutting down")]
    Unavailable,
}

/// Latest poll result for one configured node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeView {
    pub node_id: String,
    pub kind: NodeKind,
    pub url: String,
    pub reachable: bool,
    pub status: Option<NodeStatus>,
    pub error: Option<String>,
    pub polls: u64,
}

/// Everything the API and the handle read. Writers hold the lock only for
/// short, non-async updates.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ControllerState {
    pub nodes: Vec<NodeView>,
    /// In creation order.
    pub events: Vec<SurveillanceEvent>,
    pub active_event: Option<String>,
    pub buzzer: bool,
}

impl ControllerState {
    pub fn event(&self, id: &str) -> Option<&SurveillanceEvent> {
        self.events.iter().find(|e| e.event_id == id)
    }

    pub fn active(&self) -> Option<&SurveillanceEvent> {
        self.active_event.as_deref().and_then(|id| self.event(id))
    }

    /// State of the intruder pipeline: the active event's, or `IDLE`.
    pub fn pipeline_state(&self) -> PipelineState {
        self.active().map_or(PipelineState::Idle, |e| e.state)
    }

    fn upsert_event(&mut self, ev: &SurveillanceEvent) {
        match self.events.iter_mut().find(|e| e.event_id == ev.event_id) {
            Some(slot) => *slot = ev.clone(),
            None => self.events.push(ev.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_are_trimmed_and_case_insensitive() {
        assert_eq!(parse_command("  Found OK\r\n"), Some(UserAction::FoundOk));
        assert_eq!(parse_command("found   ok"), Some(UserAction::FoundOk));
        assert_eq!(
            parse_command("INFORM AUTHORITIES"),
            Some(UserAction::InformAuthorities)
        );
        assert_eq!(parse_command("hello"), None);
        assert_eq!(parse_command("found ok please"), None);
        assert!("found_ok".parse::<UserAction>().is_ok());
        assert!("stop".parse::<UserAction>().is_err());
    }
}
