use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::gsm::validate_number;
use crate::node_sim::NodeKind;
use crate::vision::DetectParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEndpoint {
    pub id: String,
    pub kind: NodeKind,
    /// Full status URL, e.g. `http://10.0.0.7/status`.
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmailConfig {
    /// SMTP submission endpoint (plain SMTP, no TLS).
    pub smtp_addr: String,
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub username: Option<String>,
    #[serde(default)]
    pub password: Option<String>,
    /// Attempts after the first failure.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_retry_delay_ms")]
    pub retry_delay_ms: u64,
    #[serde(default = "default_smtp_timeout_ms")]
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub addr: SocketAddr,
    #[serde(default = "default_fps")]
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageConfig {
    pub dir: PathBuf,
    /// How long a recording whose email failed is kept, in seconds.
    #[serde(default = "default_retention_s")]
    pub retention_s: u64,
    #[serde(default = "default_sweep_s")]
    pub sweep_interval_s: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecognitionConfig {
    pub cascade: PathBuf,
    /// Fisherface model; without one every detected face is reported unknown.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub detect: DetectParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CameraConfig {
    /// Plays back the images of a directory in name order.
    Directory {
        path: PathBuf,
        #[serde(default = "default_fps")]
        fps: f64,
    },
    /// Pulls frames from an upstream MJPEG camera endpoint.
    Mjpeg { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModemConfig {
    /// Per-step AT exchange timeout.
    #[serde(default = "default_modem_timeout_ms")]
    pub timeout_ms: u64,
}

impl Default for ModemConfig {
    fn default() -> Self {
        Self {
            timeout_ms: default_modem_timeout_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(rename = "node")]
    pub nodes: Vec<NodeEndpoint>,
    #[serde(default = "default_poll_period_ms")]
    pub poll_period_ms: u64,
    #[serde(default = "default_lockout_ms")]
    pub rearm_lockout_ms: u64,
    pub owner_number: String,
    #[serde(default)]
    pub authority_numbers: Vec<String>,
    pub api_addr: SocketAddr,
    pub email: EmailConfig,
    pub stream: StreamConfig,
    pub storage: StorageConfig,
    pub recognition: RecognitionConfig,
    pub camera: CameraConfig,
    #[serde(default)]
    pub modem: ModemConfig,
}

fn default_retries() -> u32 {
    2
}
fn default_retry_delay_ms() -> u64 {
    500
}
fn default_smtp_timeout_ms() -> u64 {
    5_000
}
fn default_fps() -> f64 {
    10.0
}
fn default_retention_s() -> u64 {
    7 * 24 * 3600
}
fn default_sweep_s() -> u64 {
    60
}
fn default_modem_timeout_ms() -> u64 {
    5_000
}
fn default_poll_period_ms() -> u64 {
    500
}
fn default_lockout_ms() -> u64 {
    10_000
}

impl ControllerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ControllerError> {
        let cfg: ControllerConfig =
            toml::from_str(text).map_err(|e| ControllerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ControllerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ControllerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Makes relative file paths relative to `base` (the config's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.storage.dir);
        fix(&mut self.recognition.cascade);
        if let Some(m) = &mut self.recognition.model {
            fix(m);
        }
        if let CameraConfig::Directory { path, .. } = &mut self.camera {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let bad = |m: String| Err(ControllerError::Config(m));
        if self.poll_period_ms < 50 {
            return bad(format!(
                "poll_period_ms {} is below 50",
                self.poll_period_ms
            ));
        }
        if self.nodes.is_empty() {
            return bad("no sensor nodes configured".into());
        }
        let mut ids: Vec<&str> = self.nodes.iter().map(|n| n.id.as_str()).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate node id {}", w[0]));
        }
        for n in std::iter::once(&self.owner_number).chain(&self.authority_numbers) {
            validate_number(n).map_err(|e| ControllerError::Config(e.to_string()))?;
        }
        if self.api_addr.port() != 0 && self.api_addr.port() == self.stream.addr.port() {
            return bad("api_addr and stream.addr must use distinct ports".into());
        }
        let fps_ok = |f: f64| f.is_finite() && f > 0.0 && f <= 100.0;
        if !fps_ok(self.stream.fps) {
            return bad(format!(
                "stream.fps {} must be in (0, 100]",
                self.stream.fps
            ));
        }
        if let CameraConfig::Directory { fps, .. } = &self.camera {
            if !fps_ok(*fps) {
                return bad(format!("camera.fps {fps} must be in (0, 100]"));
            }
        }
        self.recognition
            .detect
            .validate()
            .map_err(|e| ControllerError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn poll_period(&self) -> Duration {
        Duration::from_millis(self.poll_period_ms)
    }
}
