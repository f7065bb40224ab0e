use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::fisherface::RecognitionResult;
use crate::node_sim::NodeKind;
use crate::vision::FaceBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PipelineState {
    Idle,
    Triggered,
    Captured,
    Recognized,
    Alerted,
    Active,
    Ceased,
    Escalated,
}

impl std::fmt::Display for PipelineState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("state serialises");
        f.write_str(s.as_str().unwrap_or("?"))
    }
}

impl std::str::FromStr for PipelineState {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_uppercase()))
            .map_err(|_| format!("unknown pipeline state {s:?}"))
    }
}

/// Whether `from -> to` is an edge of the machine for events of `kind`.
pub fn transition_allowed(kind: NodeKind, from: PipelineState, to: PipelineState) -> bool {
    use PipelineState::*;
    match kind {
        NodeKind::Pir => matches!(
            (from, to),
            (Idle, Triggered)
                | (Triggered, Captured)
                | (Captured, Recognized)
                | (Recognized, Alerted)
                | (Alerted, Active)
                | (Active, Ceased)
                | (Active, Escalated)
                | (Ceased, Idle)
                | (Escalated, Idle)
        ),
        NodeKind::Fire => matches!(
            (from, to),
            (Idle, Triggered) | (Triggered, Alerted) | (Alerted, Idle)
        ),
    }
}

/// True when `states` starts at `IDLE` and every step is a machine edge.
pub fn is_valid_path(kind: NodeKind, states: &[PipelineState]) -> bool {
    states.first() == Some(&PipelineState::Idle)
        && states
            .windows(2)
            .all(|w| transition_allowed(kind, w[0], w[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub from: PipelineState,
    pub to: PipelineState,
    pub at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trigger {
    pub node_id: String,
    pub kind: NodeKind,
    pub at_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlertChannel {
    Email,
    Sms,
    Call,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub channel: AlertChannel,
    pub to: String,
    pub at_ms: u64,
    pub ok: bool,
    /// Server response, SMS reference or failure cause.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingInfo {
    pub file: String,
    pub frames: u64,
    pub bytes: u64,
    pub truncated: bool,
    pub deleted: bool,
    /// Set when the recording email failed and the file is kept.
    pub retained_until_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Resolution {
    Ceased,
    Escalated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "via", rename_all = "lowercase")]
pub enum CommandSource {
    Sms { sender: String },
    Api,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventNote {
    pub at_ms: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceEvent {
    pub event_id: String,
    pub trigger: Trigger,
    /// File names of stored captures, relative to the event directory.
    pub captures: Vec<String>,
    pub faces_detected: usize,
    pub face: Option<FaceBox>,
    pub verdict: Option<RecognitionResult>,
    pub alerts: Vec<AlertRecord>,
    pub recording: Option<RecordingInfo>,
    pub state: PipelineState,
    pub history: Vec<Transition>,
    pub resolution: Option<Resolution>,
    pub command_source: Option<CommandSource>,
    pub notes: Vec<EventNote>,
}

impl SurveillanceEvent {
    pub fn new(event_id: String, trigger: Trigger) -> Self {
        Self {
            event_id,
            trigger,
            captures: Vec::new(),
            faces_detected: 0,
            face: None,
            verdict: None,
            alerts: Vec::new(),
            recording: None,
            state: PipelineState::Idle,
            history: Vec::new(),
            resolution: None,
            command_source: None,
            notes: Vec::new(),
        }
    }

    pub fn kind(&self) -> NodeKind {
        self.trigger.kind
    }

    pub fn advance(&mut self, to: PipelineState, at_ms: u64) -> Result<(), ControllerError> {
        if !transition_allowed(self.kind(), self.state, to) {
            return Err(ControllerError::IllegalTransition {
                event_id: self.event_id.clone(),
                from: self.state,
                to,
            });
        }
        self.history.push(Transition {
            from: self.state,
            to,
            at_ms,
        });
        self.state = to;
        match to {
            PipelineState::Ceased => self.resolution = Some(Resolution::Ceased),
            PipelineState::Escalated => self.resolution = Some(Resolution::Escalated),
            _ => {}
        }
        Ok(())
    }

    /// States visited, starting with the initial `IDLE`.
    pub fn path(&self) -> Vec<PipelineState> {
        std::iter::once(PipelineState::Idle)
            .chain(self.history.iter().map(|t| t.to))
            .collect()
    }

    pub fn note(&mut self, at_ms: u64, text: impl Into<String>) {
        self.notes.push(EventNote {
            at_ms,
            text: text.into(),
        });
    }

    pub fn email_alerts(&self) -> impl Iterator<Item = &AlertRecord> {
        self.alerts
            .iter()
            .filter(|a| a.channel == AlertChannel::Email)
    }

    /// Done with: back in `IDLE` after at least one transition.
    pub fn is_finished(&self) -> bool {
        self.state == PipelineState::Idle && !self.history.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use PipelineState::*;

    fn event(kind: NodeKind) -> SurveillanceEvent {
        SurveillanceEvent::new(
            "e1".into(),
            Trigger {
                node_id: "n".into(),
                kind,
                at_ms: 0,
            },
        )
    }

    #[test]
    fn intruder_path_is_accepted_and_skips_are_not() {
        let mut e = event(NodeKind::Pir);
        for s in [
            Triggered, Captured, Recognized, Alerted, Active, Ceased, Idle,
        ] {
            e.advance(s, 1).unwrap();
        }
        assert_eq!(e.resolution, Some(Resolution::Ceased));
        assert!(is_valid_path(NodeKind::Pir, &e.path()));
        assert!(e.is_finished());

        let mut e = event(NodeKind::Pir);
        e.advance(Triggered, 1).unwrap();
        assert!(e.advance(Recognized, 2).is_err());
        assert!(!is_valid_path(NodeKind::Pir, &[Idle, Triggered, Triggered]));
    }

    #[test]
    fn fire_path_is_short() {
        assert!(is_valid_path(
            NodeKind::Fire,
            &[Idle, Triggered, Alerted, Idle]
        ));
        assert!(!is_valid_path(NodeKind::Fire, &[Idle, Triggered, Captured]));
        assert!(!transition_allowed(NodeKind::Pir, Triggered, Alerted));
    }

    #[test]
    fn state_names_round_trip() {
        assert_eq!(Active.to_string(), "ACTIVE");
        assert_eq!("escalated".parse::<PipelineState>().unwrap(), Escalated);
    }
}
