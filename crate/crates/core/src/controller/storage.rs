use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime};

use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;

use super::event::{AlertRecord, EventNote, Transition};

pub const RECORDING_FILE: &str = "recording.mjpeg";
pub const EVENT_LOG: &str = "event.log";

/// One line of `event.log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Transition(Transition),
    Alert(AlertRecord),
    Note(EventNote),
}

/// `<root>/<event_id>/{capture-<n>.jpg, recording.mjpeg, event.log}`.
#[derive(Debug, Clone)]
pub struct Storage {
    root: PathBuf,
    retention: Duration,
}

impl Storage {
    pub fn new(root: impl Into<PathBuf>, retention: Duration) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, retention })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn retention(&self) -> Duration {
        self.retention
    }

    pub fn event_dir(&self, event_id: &str) -> PathBuf {
        self.root.join(event_id)
    }

    fn ensure_dir(&self, event_id: &str) -> std::io::Result<PathBuf> {
        let dir = self.event_dir(event_id);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    /// Stores capture number `n` (1-based) and returns its file name.
    pub fn write_capture(&self, event_id: &str, n: usize, jpeg: &[u8]) -> std::io::Result<String> {
        let name = format!("capture-{n}.jpg");
        std::fs::write(self.ensure_dir(event_id)?.join(&name), jpeg)?;
        Ok(name)
    }

    pub fn read_capture(&self, event_id: &str, name: &str) -> std::io::Result<Vec<u8>> {
        std::fs::read(self.event_dir(event_id).join(name))
    }

    pub fn append_log(&self, event_id: &str, entry: &LogEntry) -> std::io::Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.ensure_dir(event_id)?.join(EVENT_LOG))?;
        let line = serde_json::to_string(entry).expect("log entry serialises");
        writeln!(f, "{line}")
    }

    /// Entries of an event log; unreadable lines are skipped.
    pub fn read_log(&self, event_id: &str) -> std::io::Result<Vec<LogEntry>> {
        let text = std::fs::read_to_string(self.event_dir(event_id).join(EVENT_LOG))?;
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect())
    }

    pub fn recording_path(&self, event_id: &str) -> PathBuf {
        self.event_dir(event_id).join(RECORDING_FILE)
    }

    pub async fn open_recording(&self, event_id: &str) -> std::io::Result<RecordingWriter> {
        let path = self.ensure_dir(event_id)?.join(RECORDING_FILE);
        let file = tokio::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .await?;
        Ok(RecordingWriter {
            path,
            file: Some(file),
            frames: 0,
            bytes: 0,
            truncated: false,
        })
    }

    pub fn delete_recording(&self, event_id: &str) -> std::io::Result<()> {
        match std::fs::remove_file(self.recording_path(event_id)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e),
            _ => Ok(()),
        }
    }

    /// When a kept recording becomes eligible for removal.
    pub fn expiry_of(&self, path: &Path) -> std::io::Result<SystemTime> {
        Ok(std::fs::metadata(path)?.modified()? + self.retention)
    }

    /// Removes recordings whose retention has run out at `now` and returns
    /// the event ids they belonged to.
    pub fn sweep(&self, now: SystemTime) -> std::io::Result<Vec<String>> {
        let mut removed = Vec::new();
        for entry in std::fs::read_dir(&self.root)? {
            let dir = entry?.path();
            let rec = dir.join(RECORDING_FILE);
            if !rec.is_file() {
                continue;
            }
            if self.expiry_of(&rec)? <= now {
                std::fs::remove_file(&rec)?;
                if let Some(id) = dir.file_name().and_then(|n| n.to_str()) {
                    removed.push(id.to_string());
                }
            }
        }
        removed.sort();
        Ok(removed)
    }
}

/// Appends JPEG frames back to back. A write error stops the recording and
/// marks it truncated instead of failing the event.
pub struct RecordingWriter {
    path: PathBuf,
    file: Option<tokio::fs::File>,
    frames: u64,
    bytes: u64,
    truncated: bool,
}

impl RecordingWriter {
    pub async fn write_frame(&mut self, jpeg: &[u8]) {
        let Some(file) = self.file.as_mut() else {
            return;
        };
        if let Err(e) = file.write_all(jpeg).await {
            tracing::warn!(path = %self.path.display(), "recording stopped: {e}");
            self.truncated = true;
            self.file = None;
            return;
        }
        self.frames += 1;
        self.bytes += jpeg.len() as u64;
    }

    pub async fn finish(mut self) -> RecordingSummary {
        if let Some(mut f) = self.file.take() {
            if f.flush().await.is_err() || f.sync_all().await.is_err() {
                self.truncated = true;
            }
        }
        RecordingSummary {
            path: self.path,
            frames: self.frames,
            bytes: self.bytes,
            truncated: self.truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingSummary {
    pub path: PathBuf,
    pub frames: u64,
    pub bytes: u64,
    pub truncated: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::event::PipelineState;

    #[tokio::test]
    async fn layout_log_and_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let s = Storage::new(dir.path(), Duration::from_secs(60)).unwrap();
        assert_eq!(s.write_capture("e1", 1, b"jpg").unwrap(), "capture-1.jpg");
        assert!(dir.path().join("e1/capture-1.jpg").is_file());
        let t = Transition {
            from: PipelineState::Idle,
            to: PipelineState::Triggered,
            at_ms: 5,
        };
        s.append_log("e1", &LogEntry::Transition(t.clone()))
            .unwrap();
        assert_eq!(s.read_log("e1").unwrap(), vec![LogEntry::Transition(t)]);

        for id in ["e1", "e2"] {
            let mut w = s.open_recording(id).await.unwrap();
            w.write_frame(b"frame").await;
            assert_eq!(w.finish().await.frames, 1);
        }
        let now = SystemTime::now();
        assert!(s.sweep(now).unwrap().is_empty());
        assert_eq!(
            s.sweep(now + Duration::from_secs(61)).unwrap(),
            vec!["e1", "e2"]
        );
        assert!(!s.recording_path("e1").exists());
        assert!(s.delete_recording("e1").is_ok());
    }
}
