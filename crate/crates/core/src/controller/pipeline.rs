use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use tokio::sync::{mpsc, oneshot};

use super::config::ControllerConfig;
use super::dispatch::AlertDispatcher;
use super::email::{intrusion_email, recording_email, Mailer};
use super::event::{
    AlertChannel, AlertRecord, CommandSource, PipelineState, RecordingInfo, Resolution,
    SurveillanceEvent, Trigger,
};
use super::frames::{Frame, FrameSource};
use super::recorder::Recorder;
use super::storage::{LogEntry, RecordingSummary, Storage, RECORDING_FILE};
use super::{
    now_ms, parse_command, to_ms, CommandRejection, ControllerState, UserAction, AUTHORITY_SMS,
    FIRE_SMS, INTRUDER_SMS,
};
use crate::fisherface::{FisherModel, RecognitionResult};
use crate::gsm::SmsMessage;
use crate::image::GrayImage;
use crate::vision::{detect_faces, face_crop, largest_face, CascadeModel, DetectParams, FaceBox};

pub(crate) type Shared = Arc<RwLock<ControllerState>>;
pub(crate) type CommandReply = oneshot::Sender<Result<SurveillanceEvent, CommandRejection>>;

pub(crate) enum PipelineMsg {
    Trigger(Trigger),
    UserSms(SmsMessage),
    Command {
        action: UserAction,
        source: CommandSource,
        reply: CommandReply,
    },
}

/// Everything the pipeline steps need; shared by the intruder executor and
/// the fire handler.
pub(crate) struct Services {
    pub config: Arc<ControllerConfig>,
    pub shared: Shared,
    pub storage: Storage,
    pub mailer: Mailer,
    pub dispatcher: AlertDispatcher,
    pub recorder: Recorder,
    pub frames: Arc<FrameSource>,
    pub cascade: Arc<CascadeModel>,
    pub model: Option<Arc<FisherModel>>,
    pub seq: AtomicU64,
}

impl Services {
    fn next_id(&self) -> String {
        format!(
            "evt-{}-{}",
            now_ms(),
            self.seq.fetch_add(1, Ordering::SeqCst) + 1
        )
    }

    fn log(&self, ev: &SurveillanceEvent, entry: LogEntry) {
        if let Err(e) = self.storage.append_log(&ev.event_id, &entry) {
            tracing::error!(event = %ev.event_id, "cannot append to event log: {e}");
        }
    }

    fn publish(&self, ev: &SurveillanceEvent) {
        self.shared.write().unwrap().upsert_event(ev);
    }

    fn advance(&self, ev: &mut SurveillanceEvent, to: PipelineState) {
        match ev.advance(to, now_ms()) {
            Ok(()) => {
                tracing::info!(event = %ev.event_id, state = %to, "transition");
                let t = ev.history.last().expect("just pushed").clone();
                self.log(ev, LogEntry::Transition(t));
                self.publish(ev);
            }
            Err(e) => tracing::error!("{e}"),
        }
    }

    fn alert(&self, ev: &mut SurveillanceEvent, rec: AlertRecord) {
        self.log(ev, LogEntry::Alert(rec.clone()));
        ev.alerts.push(rec);
        self.publish(ev);
    }

    fn note(&self, ev: &mut SurveillanceEvent, text: String) {
        tracing::info!(event = %ev.event_id, "{text}");
        ev.note(now_ms(), text);
        let n = ev.notes.last().expect("just pushed").clone();
        self.log(ev, LogEntry::Note(n));
        self.publish(ev);
    }

    fn owner(&self) -> &str {
        &self.config.owner_number
    }
}

/// Faces found in a frame and the verdict for the largest one.
struct Analysis {
    faces: Vec<FaceBox>,
    face: Option<FaceBox>,
    verdict: Option<RecognitionResult>,
    problem: Option<String>,
}

fn analyse(
    image: &GrayImage,
    cascade: &CascadeModel,
    params: &DetectParams,
    model: Option<&FisherModel>,
) -> Analysis {
    let faces = match detect_faces(image, cascade, params) {
        Ok(f) => f,
        Err(e) => {
            return Analysis {
                faces: Vec::new(),
                face: None,
                verdict: None,
                problem: Some(format!("detection failed: {e}")),
            }
        }
    };
    let face = largest_face(&faces).copied();
    let (verdict, problem) = match (face, model) {
        (Some(f), Some(m)) => match face_crop(image, &f, m.face_width, m.face_height)
            .map_err(|e| e.to_string())
            .and_then(|crop| m.recognize_crop(&crop).map_err(|e| e.to_string()))
        {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(format!("recognition failed: {e}"))),
        },
        (Some(_), None) => (None, Some("no recognition model loaded".into())),
        (None, _) => (None, None),
    };
    Analysis {
        faces,
        face,
        verdict,
        problem,
    }
}

/// The serialized intruder pipeline. It owns the one in-flight event.
pub(crate) struct Executor {
    svc: Arc<Services>,
    active: Option<SurveillanceEvent>,
}

impl Executor {
    pub fn new(svc: Arc<Services>) -> Self {
        Self { svc, active: None }
    }

    pub async fn run(mut self, mut rx: mpsc::UnboundedReceiver<PipelineMsg>) {
        while let Some(msg) = rx.recv().await {
            match msg {
                PipelineMsg::Trigger(t) => self.on_trigger(t).await,
                PipelineMsg::UserSms(sms) => self.on_user_sms(sms).await,
                PipelineMsg::Command {
                    action,
                    source,
                    reply,
                } => {
                    let res = self.resolve(action, source).await;
                    let _ = reply.send(res);
                }
            }
        }
    }

    async fn on_trigger(&mut self, t: Trigger) {
        match self.active.as_mut() {
            Some(ev) => {
                let text = format!(
                    "motion from {} at {} ms while event is active",
                    t.node_id, t.at_ms
                );
                self.svc.note(ev, text);
            }
            None => {
                let ev = self.run_intrusion(t).await;
                self.active = Some(ev);
            }
        }
    }

    async fn capture(&self, ev: &mut SurveillanceEvent) -> Option<Frame> {
        let svc = &self.svc;
        let frame = match svc.frames.current() {
            Ok(f) => f,
            Err(e) => {
                svc.note(ev, format!("capture failed: {e}"));
                return None;
            }
        };
        match svc
            .storage
            .write_capture(&ev.event_id, ev.captures.len() + 1, &frame.jpeg)
        {
            Ok(name) => {
                ev.captures.push(name);
                Some(frame)
            }
            Err(e) => {
                svc.note(ev, format!("capture could not be stored: {e}"));
                None
            }
        }
    }

    /// IDLE to ACTIVE: capture, recognise, email, start buzzer and
    /// recording, call and text the owner.
    async fn run_intrusion(&self, trigger: Trigger) -> SurveillanceEvent {
        let svc = &self.svc;
        let mut ev = SurveillanceEvent::new(svc.next_id(), trigger);
        svc.shared.write().unwrap().active_event = Some(ev.event_id.clone());
        svc.advance(&mut ev, PipelineState::Triggered);

        let frame = self.capture(&mut ev).await;
        svc.advance(&mut ev, PipelineState::Captured);

        if let Some(frame) = frame {
            let (cascade, model) = (svc.cascade.clone(), svc.model.clone());
            let params = svc.config.recognition.detect;
            let image = frame.image.clone();
            let analysis = tokio::task::spawn_blocking(move || {
                analyse(&image, &cascade, &params, model.as_deref())
            })
            .await
            .expect("analysis task panicked");
            ev.faces_detected = analysis.faces.len();
            ev.face = analysis.face;
            ev.verdict = analysis.verdict;
            if analysis.faces.is_empty() {
                svc.note(&mut ev, "no face found in the capture".into());
            } else if analysis.faces.len() > 1 {
                let others: Vec<String> = analysis
                    .faces
                    .iter()
                    .filter(|f| Some(**f) != analysis.face)
                    .map(|f| format!("{}x{}+{}+{}", f.w, f.h, f.x, f.y))
                    .collect();
                svc.note(
                    &mut ev,
                    format!("recognised the largest face; others: {}", others.join(", ")),
                );
            }
            if let Some(p) = analysis.problem {
                svc.note(&mut ev, p);
            }
        }
        svc.advance(&mut ev, PipelineState::Recognized);

        let attachment = ev.captures.first().and_then(|name| {
            svc.storage
                .read_capture(&ev.event_id, name)
                .ok()
                .map(|bytes| (name.clone(), bytes))
        });
        let msg = intrusion_email(
            &ev.event_id,
            ev.verdict.as_ref(),
            ev.face.is_some(),
            attachment,
        );
        let out = svc.mailer.send(&msg).await;
        let rec = AlertRecord {
            channel: AlertChannel::Email,
            to: svc.mailer.recipient(),
            at_ms: now_ms(),
            ok: out.ok,
            detail: format!("{} (attempts {})", out.detail, out.attempts),
        };
        svc.alert(&mut ev, rec);
        svc.advance(&mut ev, PipelineState::Alerted);

        svc.shared.write().unwrap().buzzer = true;
        if let Err(e) = svc.recorder.start(&ev.event_id).await {
            svc.note(&mut ev, format!("recording could not start: {e}"));
        }
        let call = svc.dispatcher.dial(svc.owner()).await;
        svc.alert(&mut ev, call);
        let sms = svc.dispatcher.sms(svc.owner(), INTRUDER_SMS).await;
        svc.alert(&mut ev, sms);
        svc.advance(&mut ev, PipelineState::Active);
        ev
    }

    async fn on_user_sms(&mut self, sms: SmsMessage) {
        let svc = self.svc.clone();
        if sms.sender != svc.owner() {
            tracing::warn!(sender = %sms.sender, text = %sms.text, "ignoring SMS from a number that is not the owner's");
            if let Some(ev) = self.active.as_mut() {
                svc.note(
                    ev,
                    format!("ignored SMS from non-owner {}: {:?}", sms.sender, sms.text),
                );
            }
            return;
        }
        let Some(action) = parse_command(&sms.text) else {
            tracing::info!(text = %sms.text, "ignoring unrecognised owner SMS");
            if let Some(ev) = self.active.as_mut() {
                svc.note(ev, format!("ignored owner SMS {:?}", sms.text));
            }
            return;
        };
        if let Err(e) = self
            .resolve(action, CommandSource::Sms { sender: sms.sender })
            .await
        {
            tracing::info!("owner command not applied: {e}");
        }
    }

    /// ACTIVE to CEASED or ESCALATED, then the recording is mailed and the
    /// event returns to IDLE.
    async fn resolve(
        &mut self,
        action: UserAction,
        source: CommandSource,
    ) -> Result<SurveillanceEvent, CommandRejection> {
        let svc = self.svc.clone();
        let Some(mut ev) = self.active.take() else {
            return Err(CommandRejection::NotActive {
                state: PipelineState::Idle,
                active_event: None,
            });
        };
        ev.command_source = Some(source);
        svc.publish(&ev);
        let summary = match action {
            UserAction::FoundOk => {
                let summary = self.stop_activity().await;
                svc.advance(&mut ev, PipelineState::Ceased);
                summary
            }
            UserAction::InformAuthorities => {
                for number in svc.config.authority_numbers.clone() {
                    let rec = svc.dispatcher.sms(&number, AUTHORITY_SMS).await;
                    svc.alert(&mut ev, rec);
                }
                let summary = self.stop_activity().await;
                svc.advance(&mut ev, PipelineState::Escalated);
                summary
            }
        };
        self.deliver_recording(&mut ev, summary).await;
        svc.advance(&mut ev, PipelineState::Idle);
        svc.shared.write().unwrap().active_event = None;
        Ok(ev)
    }

    async fn stop_activity(&self) -> Option<RecordingSummary> {
        self.svc.shared.write().unwrap().buzzer = false;
        self.svc.recorder.stop().await
    }

    /// Mails the recording; deletes it on success and keeps it until the
    /// retention period runs out otherwise.
    async fn deliver_recording(
        &self,
        ev: &mut SurveillanceEvent,
        summary: Option<RecordingSummary>,
    ) {
        let svc = &self.svc;
        let Some(summary) = summary else {
            svc.note(ev, "no recording was made".into());
            return;
        };
        let mut info = RecordingInfo {
            file: RECORDING_FILE.into(),
            frames: summary.frames,
            bytes: summary.bytes,
            truncated: summary.truncated,
            deleted: false,
            retained_until_ms: None,
        };
        if summary.truncated {
            svc.note(ev, "recording was truncated by a storage error".into());
        }
        let data = match tokio::fs::read(&summary.path).await {
            Ok(d) => d,
            Err(e) => {
                svc.note(ev, format!("recording unreadable: {e}"));
                ev.recording = Some(info);
                svc.publish(ev);
                return;
            }
        };
        let resolution = match ev.resolution {
            Some(Resolution::Escalated) => "escalated to the authorities",
            _ => "found OK by the owner",
        };
        let out = svc
            .mailer
            .send(&recording_email(&ev.event_id, resolution, data))
            .await;
        let rec = AlertRecord {
            channel: AlertChannel::Email,
            to: svc.mailer.recipient(),
            at_ms: now_ms(),
            ok: out.ok,
            detail: format!("recording: {} (attempts {})", out.detail, out.attempts),
        };
        svc.alert(ev, rec);
        if out.ok {
            match svc.storage.delete_recording(&ev.event_id) {
                Ok(()) => info.deleted = true,
                Err(e) => svc.note(ev, format!("recording could not be deleted: {e}")),
            }
        } else {
            info.retained_until_ms = svc.storage.expiry_of(&summary.path).ok().map(to_ms);
        }
        ev.recording = Some(info);
        svc.publish(ev);
    }
}

/// Fire branch: text and call the owner, nothing else.
pub(crate) async fn run_fire(svc: Arc<Services>, trigger: Trigger) -> SurveillanceEvent {
    let mut ev = SurveillanceEvent::new(svc.next_id(), trigger);
    svc.advance(&mut ev, PipelineState::Triggered);
    let call = svc.dispatcher.dial(svc.owner()).await;
    svc.alert(&mut ev, call);
    let sms = svc.dispatcher.sms(svc.owner(), FIRE_SMS).await;
    svc.alert(&mut ev, sms);
    svc.advance(&mut ev, PipelineState::Alerted);
    svc.advance(&mut ev, PipelineState::Idle);
    ev
}
