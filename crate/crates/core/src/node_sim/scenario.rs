use std::time::Duration;

use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use super::{Fleet, NodeError, NodeKind};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    SetPir {
        value: u8,
    },
    SetTemperature {
        celsius: f64,
    },
    SetConnected {
        value: bool,
    },
    /// A reply SMS from a user's phone; `sender` defaults to the owner.
    InjectUserSms {
        text: String,
        #[serde(default)]
        sender: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedAction {
    pub at_ms: u64,
    #[serde(default)]
    pub node: Option<String>,
    #[serde(flatten)]
    pub action: Action,
}

/// Timed stimuli against a fleet, e.g.
///
/// ```toml
/// version = 1
///
/// [[action]]
/// at_ms = 0
/// node = "pir1"
/// action = "set_pir"
/// value = 1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub version: u32,
    #[serde(default, rename = "action")]
    pub actions: Vec<TimedAction>,
}

impl ScenarioScript {
    pub fn new(actions: Vec<TimedAction>) -> Self {
        Self {
            version: SCENARIO_VERSION,
            actions,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, NodeError> {
        let s: ScenarioScript =
            toml::from_str(text).map_err(|e| NodeError::Scenario(e.to_string()))?;
        if s.version != SCENARIO_VERSION {
            return Err(NodeError::Scenario(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                s.version
            )));
        }
        Ok(s)
    }

    /// Checks ordering, node ids and action/kind compatibility.
    pub fn validate(&self, fleet: &Fleet) -> Result<(), NodeError> {
        let mut last = 0;
        for (i, a) in self.actions.iter().enumerate() {
            if a.at_ms < last {
                return Err(NodeError::Scenario(format!(
                    "action {i}: offset {} ms is earlier than the previous {last} ms",
                    a.at_ms
                )));
            }
            last = a.at_ms;
            let needs = match a.action {
                Action::SetPir { .. } => Some(Some(NodeKind::Pir)),
                Action::SetTemperature { .. } => Some(Some(NodeKind::Fire)),
                Action::SetConnected { .. } => Some(None),
                Action::InjectUserSms { .. } => None,
            };
            if let Some(kind) = needs {
                let id = a
                    .node
                    .as_deref()
                    .ok_or_else(|| NodeError::Scenario(format!("action {i}: missing node")))?;
                let node = fleet.get(id)?;
                if kind.is_some_and(|k| k != node.kind()) {
                    return Err(NodeError::Scenario(format!(
                        "action {i}: node {id} is a {} node",
                        node.kind()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppliedAction {
    pub index: usize,
    pub planned_ms: u64,
    pub actual_ms: u64,
    pub node: Option<String>,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub applied: Vec<AppliedAction>,
}

/// Applies the script against the fleet on a monotonic clock. SMS actions
/// go to `on_sms(sender, text)`.
pub async fn run_scenario(
    script: &ScenarioScript,
    fleet: &Fleet,
    mut on_sms: impl FnMut(Option<&str>, &str),
) -> Result<ScenarioReport, NodeError> {
    script.validate(fleet)?;
    let start = Instant::now();
    let mut report = ScenarioReport::default();
    for (index, a) in script.actions.iter().enumerate() {
        tokio::time::sleep_until(start + Duration::from_millis(a.at_ms)).await;
        let node = a.node.as_deref();
        match &a.action {
            Action::SetPir { value } => {
                fleet.get(node.unwrap_or_default())?.set_pir(*value)?;
            }
            Action::SetTemperature { celsius } => {
                fleet
                    .get(node.unwrap_or_default())?
                    .set_temperature(*celsius)?;
            }
            Action::SetConnected { value } => {
                fleet.get(node.unwrap_or_default())?.set_connected(*value);
            }
            Action::InjectUserSms { text, sender } => on_sms(sender.as_deref(), text),
        }
        report.applied.push(AppliedAction {
            index,
            planned_ms: a.at_ms,
            actual_ms: start.elapsed().as_millis() as u64,
            node: a.node.clone(),
            action: a.action.clone(),
        });
    }
    Ok(report)
}
