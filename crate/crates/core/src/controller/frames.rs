use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio::time::Instant;

use super::mjpeg::MjpegPartReader;
use super::ControllerError;
use crate::image::GrayImage;

/// One camera frame: decoded luminance for detection plus the JPEG bytes
/// that are stored, emailed and streamed.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: Arc<GrayImage>,
    pub jpeg: Bytes,
}

impl Frame {
    pub fn from_jpeg(jpeg: Bytes) -> Result<Self, ControllerError> {
        let image = GrayImage::decode(&jpeg)
            .map_err(|e| ControllerError::Camera(format!("undecodable frame: {e}")))?;
        Ok(Self {
            image: Arc::new(image),
            jpeg,
        })
    }

    pub fn from_image(image: GrayImage) -> Result<Self, ControllerError> {
        let jpeg = image
            .to_jpeg(90)
            .map_err(|e| ControllerError::Camera(e.to_string()))?;
        Ok(Self {
            image: Arc::new(image),
            jpeg: Bytes::from(jpeg),
        })
    }
}

const IMAGE_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "pgm", "pnm"];

/// Camera abstraction: scripted playback of an image directory or the
/// latest frame of an upstream MJPEG endpoint.
pub enum FrameSource {
    Directory {
        frames: Vec<Frame>,
        fps: f64,
        started: Instant,
    },
    Mjpeg {
        latest: watch::Receiver<Option<Frame>>,
        task: JoinHandle<()>,
    },
}

impl FrameSource {
    /// Loads every image of `dir` in file-name order. All frames must share
    /// one size.
    pub fn directory(dir: &Path, fps: f64) -> Result<Self, ControllerError> {
        let cam = |m: String| ControllerError::Camera(m);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| cam(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(cam(format!("no images in {}", dir.display())));
        }
        let mut frames: Vec<Frame> = Vec::with_capacity(paths.len());
        for p in &paths {
            let raw = std::fs::read(p).map_err(|e| cam(format!("{}: {e}", p.display())))?;
            let is_jpeg = raw.starts_with(&[0xff, 0xd8]);
            let frame = if is_jpeg {
                Frame::from_jpeg(Bytes::from(raw))?
            } else {
                let img =
                    GrayImage::decode(&raw).map_err(|e| cam(format!("{}: {e}", p.display())))?;
                Frame::from_image(img)?
            };
            if let Some(first) = frames.first() {
                let dims = |f: &Frame| (f.image.width(), f.image.height());
                if dims(first) != dims(&frame) {
                    return Err(cam(format!(
                        "{} is {:?}, expected {:?} like the first frame",
                        p.display(),
                        dims(&frame),
                        dims(first)
                    )));
                }
            }
            frames.push(frame);
        }
        Ok(Self::Directory {
            frames,
            fps,
            started: Instant::now(),
        })
    }

    /// Follows an upstream MJPEG stream, reconnecting after failures.
    pub fn mjpeg(url: String) -> Self {
        let (tx, latest) = watch::channel(None);
        let task = tokio::spawn(async move {
            let client = reqwest::Client::new();
            loop {
                if let Err(e) = follow(&client, &url, &tx).await {
                    tracing::warn!(%url, "camera stream failed: {e}");
                }
                if tx.is_closed() {
                    return;
                }
                tokio::time::sleep(Duration::from_secs(1)).await;
            }
        });
        Self::Mjpeg { latest, task }
    }

    pub fn from_config(cfg: &super::config::CameraConfig) -> Result<Self, ControllerError> {
        use super::config::CameraConfig;
        match cfg {
            CameraConfig::Directory { path, fps } => Self::directory(path, *fps),
            CameraConfig::Mjpeg { url } => Ok(Self::mjpeg(url.clone())),
        }
    }

    /// The frame showing right now.
    pub fn current(&self) -> Result<Frame, ControllerError> {
        match self {
            Self::Directory {
                frames,
                fps,
                started,
            } => {
                let k = (started.elapsed().as_secs_f64() * fps).floor() as usize;
                Ok(frames[k % frames.len()].clone())
            }
            Self::Mjpeg { latest, .. } => latest
                .borrow()
                .clone()
                .ok_or_else(|| ControllerError::Camera("no frame received yet".into())),
        }
    }
}

impl Drop for FrameSource {
    fn drop(&mut self) {
        if let Self::Mjpeg { task, .. } = self {
            task.abort();
        }
    }
}

async fn follow(
    client: &reqwest::Client,
    url: &str,
    tx: &watch::Sender<Option<Frame>>,
) -> Result<(), String> {
    let mut resp = client.get(url).send().await.map_err(|e| e.to_string())?;
    let ct = resp
        .headers()
        .get(reqwest::header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_string();
    let mut reader = MjpegPartReader::from_content_type(&ct)
        .ok_or_else(|| format!("not a multipart stream: {ct:?}"))?;
    while let Some(chunk) = resp.chunk().await.map_err(|e| e.to_string())? {
        for part in reader.feed(&chunk) {
            match Frame::from_jpeg(part.body) {
                Ok(f) => {
                    if tx.send(Some(f)).is_err() {
                        return Ok(());
                    }
                }
                Err(e) => tracing::debug!("skipping camera part: {e}"),
            }
        }
    }
    Err("camera stream ended".into())
}
