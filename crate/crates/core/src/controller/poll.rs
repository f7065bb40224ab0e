use std::time::Duration;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use super::now_ms;
use crate::node_sim::NodeKind;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeStatus {
    pub node_id: String,
    pub kind: NodeKind,
    pub value: u8,
    pub connected: bool,
    pub fetched_at_ms: u64,
    /// Payload as received.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PollError {
    #[error("node unreachable: {0}")]
    NodeUnreachable(String),
    #[error("malformed status payload ({reason}): {raw:?}")]
    ParseError { reason: String, raw: Vec<u8> },
}

/// Reads `key` from the first `variables` entry and `connected` from the
/// metadata entry.
pub fn extract_sensor_value(payload: &[u8], key: &str) -> Result<(u8, bool), PollError> {
    let fail = |reason: &str| PollError::ParseError {
        reason: reason.into(),
        raw: payload.to_vec(),
    };
    let doc: Value = serde_json::from_slice(payload).map_err(|e| fail(&e.to_string()))?;
    let vars = doc
        .get("variables")
        .and_then(Value::as_array)
        .ok_or_else(|| fail("missing variables array"))?;
    let value = vars
        .first()
        .and_then(|v| v.get(key))
        .ok_or_else(|| fail(&format!("missing {key}")))?
        .as_u64()
        .filter(|v| *v <= 1)
        .ok_or_else(|| fail(&format!("{key} is not 0 or 1")))? as u8;
    let connected = vars
        .iter()
        .skip(1)
        .find_map(|v| v.get("connected"))
        .ok_or_else(|| fail("missing connected flag"))?
        .as_bool()
        .ok_or_else(|| fail("connected is not a boolean"))?;
    Ok((value, connected))
}

/// One GET of a node's status page.
pub async fn poll_node(
    client: &reqwest::Client,
    node_id: &str,
    kind: NodeKind,
    url: &str,
    timeout: Duration,
) -> Result<NodeStatus, PollError> {
    let unreachable = |e: reqwest::Error| PollError::NodeUnreachable(e.to_string());
    let resp = client
        .get(url)
        .timeout(timeout)
        .send()
        .await
        .map_err(unreachable)?;
    if !resp.status().is_success() {
        return Err(PollError::NodeUnreachable(format!(
            "HTTP {}",
            resp.status()
        )));
    }
    let body = resp.bytes().await.map_err(unreachable)?;
    let (value, connected) = extract_sensor_value(&body, kind.value_key())?;
    Ok(NodeStatus {
        node_id: node_id.into(),
        kind,
        value,
        connected,
        fetched_at_ms: now_ms(),
        raw: String::from_utf8_lossy(&body).into_owned(),
    })
}

/// Edge detector with a re-arm lockout. The value before the first poll
/// counts as 0, so a node that is already high at start-up fires once.
#[derive(Debug, Clone)]
pub struct EdgeTrigger {
    previous: u8,
    lockout: Duration,
    locked_until: Option<tokio::time::Instant>,
}

impl EdgeTrigger {
    pub fn new(lockout: Duration) -> Self {
        Self {
            previous: 0,
            lockout,
            locked_until: None,
        }
    }

    /// Feeds one observation; true when it is a 0 to 1 edge outside the
    /// lockout. Nodes reporting `connected: false` never fire.
    pub fn observe(&mut self, value: u8, connected: bool, now: tokio::time::Instant) -> bool {
        let rising = self.previous == 0 && value == 1;
        self.previous = value;
        if !rising || !connected || self.locked_until.is_some_and(|t| now < t) {
            return false;
        }
        self.locked_until = Some(now + self.lockout);
        true
    }
}
