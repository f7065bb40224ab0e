use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::Response;
use bytes::{Bytes, BytesMut};
use futures::StreamExt;
use tokio::sync::broadcast;
use tokio_stream::wrappers::errors::BroadcastStreamRecvError;
use tokio_stream::wrappers::BroadcastStream;

pub const BOUNDARY: &str = "vigilframe";

pub fn content_type() -> String {
    format!("multipart/x-mixed-replace; boundary={BOUNDARY}")
}

/// Fan-out point for live frames. Every subscriber sees the frames published
/// after it subscribed, in order.
#[derive(Clone)]
pub struct FrameHub {
    tx: broadcast::Sender<Bytes>,
    published: Arc<AtomicU64>,
}

impl Default for FrameHub {
    fn default() -> Self {
        Self::new(64)
    }
}

impl FrameHub {
    pub fn new(capacity: usize) -> Self {
        let (tx, _) = broadcast::channel(capacity.max(1));
        Self {
            tx,
            published: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn publish(&self, jpeg: Bytes) {
        self.published.fetch_add(1, Ordering::SeqCst);
        let _ = self.tx.send(jpeg);
    }

    /// Frames published since start, whether or not anyone watched.
    pub fn published(&self) -> u64 {
        self.published.load(Ordering::SeqCst)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Bytes> {
        self.tx.subscribe()
    }

    pub fn clients(&self) -> usize {
        self.tx.receiver_count()
    }
}

/// Encodes one multipart part: delimiter, headers, frame, CRLF.
pub fn encode_part(jpeg: &[u8]) -> Bytes {
    let head = format!(
        "--{BOUNDARY}\r\nContent-Type: image/jpeg\r\nContent-Length: {}\r\n\r\n",
        jpeg.len()
    );
    let mut out = BytesMut::with_capacity(head.len() + jpeg.len() + 2);
    out.extend_from_slice(head.as_bytes());
    out.extend_from_slice(jpeg);
    out.extend_from_slice(b"\r\n");
    out.freeze()
}

/// Long-lived multipart response. Idle periods send nothing; a slow client
/// that falls behind skips the frames it missed.
pub fn stream_response(hub: &FrameHub) -> Response {
    let frames = BroadcastStream::new(hub.subscribe()).filter_map(|r| async move {
        match r {
            Ok(jpeg) => Some(Ok::<_, std::convert::Infallible>(encode_part(&jpeg))),
            Err(BroadcastStreamRecvError::Lagged(n)) => {
                tracing::debug!("stream client skipped {n} frames");
                None
            }
        }
    });
    Response::builder()
        .status(StatusCode::OK)
        .header(header::CONTENT_TYPE, content_type())
        .header(header::CACHE_CONTROL, HeaderValue::from_static("no-cache"))
        .body(Body::from_stream(frames))
        .expect("static response parts")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MjpegPart {
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

impl MjpegPart {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Incremental client-side parser for `multipart/x-mixed-replace` bodies
/// whose parts carry `Content-Length`.
#[derive(Debug)]
pub struct MjpegPartReader {
    delimiter: Vec<u8>,
    buf: BytesMut,
}

impl MjpegPartReader {
    pub fn new(boundary: &str) -> Self {
        Self {
            delimiter: format!("--{boundary}").into_bytes(),
            buf: BytesMut::new(),
        }
    }

    /// Boundary from a `Content-Type` header value.
    pub fn from_content_type(ct: &str) -> Option<Self> {
        ct.split(';')
            .filter_map(|p| p.trim().strip_prefix("boundary="))
            .next()
            .map(|b| Self::new(b.trim_matches('"')))
    }

    /// Feeds bytes and returns every part completed by them.
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<MjpegPart> {
        self.buf.extend_from_slice(chunk);
        let mut out = Vec::new();
        while let Some(part) = self.next_part() {
            out.push(part);
        }
        out
    }

    fn next_part(&mut self) -> Option<MjpegPart> {
        let start = find(&self.buf, &self.delimiter)?;
        let head_start = start + self.delimiter.len();
        let head_end = find(&self.buf[head_start..], b"\r\n\r\n")? + head_start;
        let headers: Vec<(String, String)> =
            String::from_utf8_lossy(&self.buf[head_start..head_end])
                .lines()
                .filter_map(|l| l.split_once(':'))
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect();
        let len: usize = headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
            .and_then(|(_, v)| v.parse().ok())?;
        let body_start = head_end + 4;
        if self.buf.len() < body_start + len {
            return None;
        }
        let mut taken = self.buf.split_to(body_start + len);
        let body = taken.split_off(body_start).freeze();
        Some(MjpegPart { headers, body })
    }
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}
