use std::sync::Arc;
use std::time::Duration;

use tokio::sync::{mpsc, oneshot};
use tokio::time::MissedTickBehavior;

use super::frames::FrameSource;
use super::mjpeg::FrameHub;
use super::storage::{RecordingSummary, RecordingWriter, Storage};

enum Cmd {
    Start {
        event_id: String,
        reply: oneshot::Sender<std::io::Result<()>>,
    },
    Stop {
        reply: oneshot::Sender<Option<RecordingSummary>>,
    },
}

/// Handle to the task that, while an event is active, pulls frames at the
/// stream rate, publishes them live and appends them to the recording.
#[derive(Clone)]
pub struct Recorder {
    cmds: mpsc::Sender<Cmd>,
}

impl Recorder {
    pub fn spawn(
        frames: Arc<FrameSource>,
        hub: FrameHub,
        storage: Storage,
        fps: f64,
    ) -> (Self, tokio::task::JoinHandle<()>) {
        let (tx, mut rx) = mpsc::channel::<Cmd>(8);
        let period = Duration::from_secs_f64(1.0 / fps);
        let task = tokio::spawn(async move {
            let mut writer: Option<RecordingWriter> = None;
            let mut ticker = tokio::time::interval(period);
            ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    cmd = rx.recv() => match cmd {
                        None => {
                            if let Some(w) = writer.take() {
                                w.finish().await;
                            }
                            return;
                        }
                        Some(Cmd::Start { event_id, reply }) => {
                            if let Some(w) = writer.take() {
                                w.finish().await;
                            }
                            let opened = storage.open_recording(&event_id).await;
                            let res = opened.map(|w| {
                                writer = Some(w);
                            });
                            ticker.reset_immediately();
                            let _ = reply.send(res);
                        }
                        Some(Cmd::Stop { reply }) => {
                            let summary = match writer.take() {
                                Some(w) => Some(w.finish().await),
                                None => None,
                            };
                            let _ = reply.send(summary);
                        }
                    },
                    _ = ticker.tick(), if writer.is_some() => {
                        let frame = match frames.current() {
                            Ok(f) => f,
                            Err(e) => {
                                tracing::debug!("no frame to record: {e}");
                                continue;
                            }
                        };
                        hub.publish(frame.jpeg.clone());
                        if let Some(w) = writer.as_mut() {
                            w.write_frame(&frame.jpeg).await;
                        }
                    }
                }
            }
        });
        (Self { cmds: tx }, task)
    }

    pub async fn start(&self, event_id: &str) -> std::io::Result<()> {
        let (reply, rx) = oneshot::channel();
        let closed = || std::io::Error::other("recorder task is gone");
        self.cmds
            .send(Cmd::Start {
                event_id: event_id.into(),
                reply,
            })
            .await
            .map_err(|_| closed())?;
        rx.await.map_err(|_| closed())?
    }

    /// Stops recording and streaming; `None` when nothing was running.
    pub async fn stop(&self) -> Option<RecordingSummary> {
        let (reply, rx) = oneshot::channel();
        self.cmds.send(Cmd::Stop { reply }).await.ok()?;
        rx.await.ok().flatten()
    }
}
