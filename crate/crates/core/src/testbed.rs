//! Self-contained end-to-end harness: generated recognition fixtures, a
//! sensor fleet, a mock modem, an SMTP sink and a controller wired to them,
//! plus the scenario format with timed assertions that drives it.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::controller::config::{
    CameraConfig, EmailConfig, ModemConfig, RecognitionConfig, StorageConfig, StreamConfig,
};
use crate::controller::{
    self, ControllerConfig, ControllerHandle, MjpegPartReader, NodeEndpoint, PipelineState,
    SmtpSink, SurveillanceEvent,
};
use crate::fisherface::{train, FisherModel, TrainConfig, TrainingSet};
use crate::gsm::{MockModem, ModemScript};
use crate::image::GrayImage;
use crate::node_sim::{
    run_scenario, Fleet, NodeConfig, NodeKind, ScenarioReport, ScenarioScript, TimedAction,
    SCENARIO_VERSION,
};
use crate::synth::{center_bright_cascade, face_frame};
use crate::vision::{detect_faces, face_crop, largest_face, DetectParams};

pub const PIR_NODE: &str = "pir1";
pub const FIRE_NODE: &str = "fire1";
pub const OWNER: &str = "+15550001111";
pub const FRAME_WIDTH: u32 = 128;
pub const FRAME_HEIGHT: u32 = 96;
pub const FACE_SIZE: u32 = 48;
pub const MODEL_FACE: u32 = 24;
/// Enrolment crops per person.
pub const ENROLMENT_SAMPLES: usize = 16;
/// Camera noise dominates the trailing principal components of the fixture
/// corpus; keeping ten of them leaves recognition stable under noise.
pub const FIXTURE_PCA_DIM: usize = 10;

/// Enrolled people of the fixture model, with their synthetic identities.
pub const PEOPLE: [(&str, u64); 3] = [("Alice", 11), ("Bob", 22), ("Carol", 33)];
/// Identity that is never enrolled.
pub const STRANGER: u64 = 99;

#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    pub cascade: PathBuf,
    pub model: PathBuf,
    /// Playback frames showing an enrolled person.
    pub known_frames: PathBuf,
    /// Playback frames showing a stranger.
    pub unknown_frames: PathBuf,
    /// Playback frames without anyone in view.
    pub empty_frames: PathBuf,
    pub known_label: String,
}

/// Face crops as the controller would see them: a JPEG camera frame with
/// the person near the middle, largest detected box, resampled to the model
/// size.
pub fn enrolment_crops(identity: u64, count: usize) -> Vec<GrayImage> {
    let cascade = center_bright_cascade();
    let params = DetectParams::default();
    (0..count as u64)
        .filter_map(|k| {
            let (x, y) = (39 + k as u32 % 3, 23 + k as u32 % 3);
            let frame = face_frame(
                FRAME_WIDTH,
                FRAME_HEIGHT,
                identity,
                FACE_SIZE,
                x,
                y,
                identity * 1000 + k,
            );
            let frame = GrayImage::decode(&frame.to_jpeg(92).ok()?).ok()?;
            let faces = detect_faces(&frame, &cascade, &params).ok()?;
            let face = *largest_face(&faces)?;
            face_crop(&frame, &face, MODEL_FACE, MODEL_FACE).ok()
        })
        .collect()
}

pub fn fixture_model() -> FisherModel {
    let labelled: Vec<(String, Vec<GrayImage>)> = PEOPLE
        .iter()
        .map(|(name, id)| (name.to_string(), enrolment_crops(*id, ENROLMENT_SAMPLES)))
        .collect();
    let ts = TrainingSet::from_images(&labelled, MODEL_FACE, MODEL_FACE).expect("fixture corpus");
    let config = TrainConfig {
        pca_dim: Some(FIXTURE_PCA_DIM),
        ..TrainConfig::new(MODEL_FACE, MODEL_FACE)
    };
    train(&ts, &config).expect("fixture model trains")
}

fn write_frames(dir: &Path, identity: Option<u64>, count: u64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for k in 0..count {
        let img = match identity {
            Some(id) => face_frame(FRAME_WIDTH, FRAME_HEIGHT, id, FACE_SIZE, 40, 24, 5000 + k),
            None => crate::synth::noise_image(FRAME_WIDTH, FRAME_HEIGHT, 70, 130, 7000 + k),
        };
        let jpeg = img.to_jpeg(92).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(format!("frame-{k:03}.jpg")), jpeg)?;
    }
    Ok(())
}

/// Writes the cascade, a trained model and three playback directories.
pub fn write_fixtures(dir: &Path) -> std::io::Result<Fixtures> {
    write_fixtures_with(dir, 8)
}

/// As [`write_fixtures`] with `frames` images per playback directory.
pub fn write_fixtures_with(dir: &Path, frames: u64) -> std::io::Result<Fixtures> {
    std::fs::create_dir_all(dir)?;
    let fx = Fixtures {
        cascade: dir.join("cascade.json"),
        model: dir.join("model.json"),
        known_frames: dir.join("frames-known"),
        unknown_frames: dir.join("frames-unknown"),
        empty_frames: dir.join("frames-empty"),
        known_label: PEOPLE[0].0.to_string(),
    };
    std::fs::write(&fx.cascade, center_bright_cascade().to_json())?;
    fixture_model()
        .save(&fx.model)
        .map_err(std::io::Error::other)?;
    write_frames(&fx.known_frames, Some(PEOPLE[0].1), frames)?;
    write_frames(&fx.unknown_frames, Some(STRANGER), frames)?;
    write_frames(&fx.empty_frames, None, frames)?;
    Ok(fx)
}

/// What the camera shows during a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraScene {
    #[default]
    Known,
    Unknown,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestbedOptions {
    pub poll_period_ms: u64,
    pub rearm_lockout_ms: u64,
    pub fps: f64,
    pub owner_number: String,
    pub authority_numbers: Vec<String>,
    pub fire_threshold: f64,
    pub retention_s: u64,
    pub email_retries: u32,
    /// Start with the SMTP sink refusing mail.
    pub email_failing: bool,
    pub camera: CameraScene,
    /// Frames in the playback loop.
    pub frames: u64,
    /// Endpoints polled in addition to the fleet, e.g. unreachable ones.
    pub extra_nodes: Vec<NodeEndpoint>,
}

impl Default for TestbedOptions {
    fn default() -> Self {
        Self {
            poll_period_ms: 200,
            rearm_lockout_ms: 10_000,
            fps: 10.0,
            owner_number: OWNER.into(),
            authority_numbers: vec!["+15550002222".into(), "+15550003333".into()],
            fire_threshold: 50.0,
            retention_s: 3600,
            email_retries: 0,
            email_failing: false,
            camera: CameraScene::Known,
            frames: 8,
            extra_nodes: Vec::new(),
        }
    }
}

/// A PIR node, a fire node, the mocks and a controller on loopback ports.
pub struct Testbed {
    pub options: TestbedOptions,
    pub fixtures: Fixtures,
    pub fleet: Fleet,
    pub modem: MockModem,
    pub smtp: SmtpSink,
    pub controller: ControllerHandle,
    pub storage_dir: PathBuf,
}

impl Testbed {
    /// Builds everything under `dir`, which must be writable.
    pub async fn start(dir: &Path, options: TestbedOptions) -> Result<Self, String> {
        let fixtures = write_fixtures_with(&dir.join("fixtures"), options.frames.max(1))
            .map_err(|e| format!("fixtures: {e}"))?;
        let fleet = Fleet::start(vec![
            NodeConfig::pir(PIR_NODE, "pir_sensor_module"),
            NodeConfig {
                fire_threshold: options.fire_threshold,
                ..NodeConfig::fire(FIRE_NODE, "fire_sensor_module")
            },
        ])
        .await
        .map_err(|e| e.to_string())?;
        let smtp = SmtpSink::start("127.0.0.1:0".parse().unwrap())
            .await
            .map_err(|e| format!("smtp sink: {e}"))?;
        smtp.set_failing(options.email_failing);
        let (modem, stream) = MockModem::spawn(ModemScript::default());
        let storage_dir = dir.join("storage");
        let frames = match options.camera {
            CameraScene::Known => &fixtures.known_frames,
            CameraScene::Unknown => &fixtures.unknown_frames,
            CameraScene::Empty => &fixtures.empty_frames,
        };
        let config = ControllerConfig {
            nodes: fleet
                .nodes()
                .map(|n| NodeEndpoint {
                    id: n.id().into(),
                    kind: n.kind(),
                    url: n.status_url(),
                })
                .chain(options.extra_nodes.iter().cloned())
                .collect(),
            poll_period_ms: options.poll_period_ms,
            rearm_lockout_ms: options.rearm_lockout_ms,
            owner_number: options.owner_number.clone(),
            authority_numbers: options.authority_numbers.clone(),
            api_addr: "127.0.0.1:0".parse().unwrap(),
            email: EmailConfig {
                smtp_addr: smtp.addr().to_string(),
                from: "controller@home.test".into(),
                to: "owner@home.test".into(),
                username: None,
                password: None,
                retries: options.email_retries,
                retry_delay_ms: 50,
                timeout_ms: 2000,
            },
            stream: StreamConfig {
                addr: "127.0.0.1:0".parse().unwrap(),
                fps: options.fps,
            },
            storage: StorageConfig {
                dir: storage_dir.clone(),
                retention_s: options.retention_s,
                sweep_interval_s: 3600,
            },
            recognition: RecognitionConfig {
                cascade: fixtures.cascade.clone(),
                model: Some(fixtures.model.clone()),
                detect: DetectParams::default(),
            },
            camera: CameraConfig::Directory {
                path: frames.clone(),
                fps: options.fps,
            },
            modem: ModemConfig { timeout_ms: 2000 },
        };
        let controller = controller::start(config, stream)
            .await
            .map_err(|e| e.to_string())?;
        Ok(Self {
            options,
            fixtures,
            fleet,
            modem,
            smtp,
            controller,
            storage_dir,
        })
    }

    pub fn api_url(&self, path: &str) -> String {
        format!("http://{}{path}", self.controller.api_addr())
    }

    pub fn stream_url(&self) -> String {
        format!("http://{}/stream", self.controller.stream_addr())
    }

    /// Reply SMS from `sender` (the owner when `None`).
    pub fn inject_sms(&self, sender: Option<&str>, text: &str) {
        self.modem
            .inject_sms(sender.unwrap_or(&self.options.owner_number), text);
    }

    /// Most recent event of `kind`.
    pub fn latest_event(&self, kind: NodeKind) -> Option<SurveillanceEvent> {
        self.controller
            .events()
            .into_iter()
            .rev()
            .find(|e| e.kind() == kind)
    }

    /// Capture files across all event directories.
    pub fn capture_files(&self) -> Vec<PathBuf> {
        let Ok(dirs) = std::fs::read_dir(&self.storage_dir) else {
            return Vec::new();
        };
        let mut out: Vec<PathBuf> = dirs
            .filter_map(|d| d.ok())
            .filter_map(|d| std::fs::read_dir(d.path()).ok())
            .flatten()
            .filter_map(|f| f.ok().map(|f| f.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("capture-"))
            })
            .collect();
        out.sort();
        out
    }

    pub async fn shutdown(mut self) {
        self.controller.shutdown().await;
        self.fleet.stop_all().await;
        self.modem.stop();
        self.smtp.stop();
    }
}

/// Polls `cond` every 20 ms until it holds or `timeout` passes.
pub async fn wait_until(timeout: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if cond() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

/// Background MJPEG client that keeps every part it receives.
pub struct StreamCollector {
    parts: Arc<Mutex<Vec<Bytes>>>,
    content_types: Arc<Mutex<Vec<Option<String>>>>,
    task: JoinHandle<Result<(), String>>,
}

impl StreamCollector {
    /// Connects and returns once the response headers have arrived.
    pub async fn connect(url: &str) -> Result<Self, String> {
        let mut resp = reqwest::get(url).await.map_err(|e| e.to_string())?;
        let ct = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        if !ct.starts_with("multipart/x-mixed-replace") {
            return Err(format!("unexpected content type {ct:?}"));
        }
        let mut reader = MjpegPartReader::from_content_type(&ct).ok_or("missing boundary")?;
        let parts = Arc::new(Mutex::new(Vec::new()));
        let content_types = Arc::new(Mutex::new(Vec::new()));
        let (p, c) = (parts.clone(), content_types.clone());
        let task = tokio::spawn(async move {
            while let Some(chunk) = resp.chunk().await.map_err(|e| e.to_string())? {
                for part in reader.feed(&chunk) {
                    c.lock()
                        .unwrap()
                        .push(part.header("content-type").map(str::to_string));
                    p.lock().unwrap().push(part.body);
                }
            }
            Ok(())
        });
        Ok(Self {
            parts,
            content_types,
            task,
        })
    }

    pub fn count(&self) -> usize {
        self.parts.lock().unwrap().len()
    }

    pub fn parts(&self) -> Vec<Bytes> {
        self.parts.lock().unwrap().clone()
    }

    pub fn content_types(&self) -> Vec<Option<String>> {
        self.content_types.lock().unwrap().clone()
    }

    pub fn close(self) {
        self.task.abort();
    }
}

/// One condition a scenario expects to hold by `deadline_ms` after start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAssertion {
    pub deadline_ms: u64,
    #[serde(flatten)]
    pub check: Check,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Check {
    /// The modem transcript contains `text` at least `count` times.
    TranscriptContains {
        text: String,
        #[serde(default = "one")]
        count: usize,
    },
    /// Some event of `event_kind` has passed through `state`.
    StateReached {
        state: PipelineState,
        #[serde(default = "pir")]
        event_kind: NodeKind,
    },
    /// A path under the storage directory does not exist. `{event}` stands
    /// for the latest intruder event id; it must exist for the check to hold.
    FileAbsent { path: String },
    /// The runner's stream client has received at least `count` parts.
    StreamFramesAtLeast { count: usize },
    /// At least `count` messages (exactly, with `exact`) match the filters.
    EmailReceived {
        #[serde(default)]
        body_contains: Option<String>,
        #[serde(default)]
        attachment_type: Option<String>,
        #[serde(default = "one")]
        count: usize,
        #[serde(default)]
        exact: bool,
    },
}

fn one() -> usize {
    1
}

fn pir() -> NodeKind {
    NodeKind::Pir
}

impl Check {
    fn evaluate(&self, bed: &Testbed, stream: Option<&StreamCollector>) -> (bool, String) {
        match self {
            Check::TranscriptContains { text, count } => {
                let n = bed.modem.transcript().count(text);
                (n >= *count, format!("{n} occurrence(s) of {text:?}"))
            }
            Check::StateReached { state, event_kind } => {
                let hit = bed
                    .controller
                    .events()
                    .iter()
                    .filter(|e| e.kind() == *event_kind)
                    .any(|e| e.path().contains(state));
                let now = bed
                    .latest_event(*event_kind)
                    .map_or("no event".to_string(), |e| {
                        format!("latest event in {}", e.state)
                    });
                (hit, now)
            }
            Check::FileAbsent { path } => {
                let Some(ev) = bed.latest_event(NodeKind::Pir) else {
                    if path.contains("{event}") {
                        return (false, "no intruder event yet".into());
                    }
                    let p = bed.storage_dir.join(path);
                    return (!p.exists(), p.display().to_string());
                };
                let p = bed.storage_dir.join(path.replace("{event}", &ev.event_id));
                (!p.exists(), p.display().to_string())
            }
            Check::StreamFramesAtLeast { count } => {
                let n = stream.map_or(0, StreamCollector::count);
                (n >= *count, format!("{n} part(s) received"))
            }
            Check::EmailReceived {
                body_contains,
                attachment_type,
                count,
                exact,
            } => {
                let n = bed
                    .smtp
                    .messages()
                    .iter()
                    .map(|m| m.parse())
                    .filter(|m| {
                        body_contains.as_ref().is_none_or(|needle| {
                            m.text_body().is_some_and(|b| b.contains(needle.as_str()))
                        }) && attachment_type.as_ref().is_none_or(|ct| {
                            m.attachments()
                                .any(|a| a.content_type.starts_with(ct.as_str()))
                        })
                    })
                    .count();
                let ok = if *exact { n == *count } else { n >= *count };
                (ok, format!("{n} matching message(s)"))
            }
        }
    }
}

/// A scenario file: optional testbed setup, timed stimuli and assertions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub setup: TestbedOptions,
    #[serde(default, rename = "action")]
    pub actions: Vec<TimedAction>,
    #[serde(default, rename = "assert")]
    pub assertions: Vec<ScenarioAssertion>,
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| e.to_string())?;
        if f.version != SCENARIO_VERSION {
            return Err(format!(
                "unsupported scenario version {} (expected {SCENARIO_VERSION})",
                f.version
            ));
        }
        if let Some((i, _)) = f
            .assertions
            .iter()
            .enumerate()
            .find(|(_, a)| a.deadline_ms == 0)
        {
            return Err(format!("assertion {i}: deadline_ms must be positive"));
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssertionResult {
    pub index: usize,
    pub check: Check,
    pub deadline_ms: u64,
    pub passed: bool,
    /// When the check first held, or when it was given up.
    pub at_ms: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioOutcome {
    pub name: Option<String>,
    pub passed: bool,
    pub assertions: Vec<AssertionResult>,
    pub actions: ScenarioReport,
}

/// Runs the stimuli while checking assertions in order; each must hold
/// before its deadline, counted from the start of the run.
pub async fn run_scenario_file(
    bed: &Testbed,
    file: &ScenarioFile,
) -> Result<ScenarioOutcome, String> {
    let stream = StreamCollector::connect(&bed.stream_url()).await?;
    let script = ScenarioScript::new(file.actions.clone());
    script.validate(&bed.fleet).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let actions = run_scenario(&script, &bed.fleet, |sender, text| {
        bed.inject_sms(sender, text)
    });
    let checks = async {
        let mut results = Vec::new();
        for (index, a) in file.assertions.iter().enumerate() {
            let deadline = start + Duration::from_millis(a.deadline_ms);
            let (passed, detail) = loop {
                let (ok, detail) = a.check.evaluate(bed, Some(&stream));
                if ok || Instant::now() >= deadline {
                    break (ok, detail);
                }
                tokio::time::sleep(Duration::from_millis(20)).await;
            };
            results.push(AssertionResult {
                index,
                check: a.check.clone(),
                deadline_ms: a.deadline_ms,
                passed,
                at_ms: start.elapsed().as_millis() as u64,
                detail,
            });
        }
        results
    };
    let (report, results) = tokio::join!(actions, checks);
    stream.close();
    let report = report.map_err(|e| e.to_string())?;
    Ok(ScenarioOutcome {
        name: file.name.clone(),
        passed: results.iter().all(|r| r.passed),
        assertions: results,
        actions: report,
    })
}
