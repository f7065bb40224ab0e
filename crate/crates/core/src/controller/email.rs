use std::time::Duration;

use lettre::message::header::ContentType;
use lettre::message::{Attachment, Mailbox, MultiPart, SinglePart};
use lettre::transport::smtp::authentication::Credentials;
use lettre::{AsyncSmtpTransport, AsyncTransport, Message, Tokio1Executor};
use serde::Serialize;

use super::config::EmailConfig;
use super::ControllerError;
use crate::fisherface::{RecognitionResult, Verdict};

#[derive(Debug, Clone, PartialEq)]
pub struct EmailAttachment {
    pub filename: String,
    pub content_type: String,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmailMessage {
    pub subject: String,
    pub body: String,
    pub attachments: Vec<EmailAttachment>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmailOutcome {
    pub ok: bool,
    pub attempts: u32,
    /// Final server response or failure cause.
    pub detail: String,
}

/// SMTP submission with a fixed retry policy.
#[derive(Clone)]
pub struct Mailer {
    transport: AsyncSmtpTransport<Tokio1Executor>,
    from: Mailbox,
    to: Mailbox,
    retries: u32,
    retry_delay: Duration,
}

fn split_host_port(addr: &str) -> Result<(String, u16), ControllerError> {
    let (host, port) = addr
        .rsplit_once(':')
        .ok_or_else(|| ControllerError::Config(format!("smtp_addr {addr:?} lacks a port")))?;
    let port = port
        .parse()
        .map_err(|_| ControllerError::Config(format!("smtp_addr {addr:?} has a bad port")))?;
    Ok((host.trim_matches(['[', ']']).to_string(), port))
}

impl Mailer {
    pub fn new(cfg: &EmailConfig) -> Result<Self, ControllerError> {
        let (host, port) = split_host_port(&cfg.smtp_addr)?;
        let mailbox = |s: &str| {
            s.parse::<Mailbox>()
                .map_err(|e| ControllerError::Config(format!("email address {s:?}: {e}")))
        };
        let mut builder = AsyncSmtpTransport::<Tokio1Executor>::builder_dangerous(host)
            .port(port)
            .timeout(Some(Duration::from_millis(cfg.timeout_ms)));
        if let (Some(u), Some(p)) = (&cfg.username, &cfg.password) {
            builder = builder.credentials(Credentials::new(u.clone(), p.clone()));
        }
        Ok(Self {
            transport: builder.build(),
            from: mailbox(&cfg.from)?,
            to: mailbox(&cfg.to)?,
            retries: cfg.retries,
            retry_delay: Duration::from_millis(cfg.retry_delay_ms),
        })
    }

    pub fn recipient(&self) -> String {
        self.to.email.to_string()
    }

    fn build(&self, msg: &EmailMessage) -> Result<Message, String> {
        let mut parts = MultiPart::mixed().singlepart(SinglePart::plain(msg.body.clone()));
        for a in &msg.attachments {
            let ct = ContentType::parse(&a.content_type).map_err(|e| e.to_string())?;
            parts = parts.singlepart(Attachment::new(a.filename.clone()).body(a.data.clone(), ct));
        }
        Message::builder()
            .from(self.from.clone())
            .to(self.to.clone())
            .subject(msg.subject.clone())
            .multipart(parts)
            .map_err(|e| e.to_string())
    }

    /// Sends `msg`, retrying failed submissions. Never errors; the outcome
    /// records what happened.
    pub async fn send(&self, msg: &EmailMessage) -> EmailOutcome {
        let message = match self.build(msg) {
            Ok(m) => m,
            Err(detail) => {
                return EmailOutcome {
                    ok: false,
                    attempts: 0,
                    detail,
                }
            }
        };
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.transport.send(message.clone()).await {
                Ok(resp) => {
                    return EmailOutcome {
                        ok: true,
                        attempts,
                        detail: format!(
                            "{} {}",
                            resp.code(),
                            resp.message().collect::<Vec<_>>().join(" ")
                        ),
                    }
                }
                Err(e) if attempts > self.retries => {
                    return EmailOutcome {
                        ok: false,
                        attempts,
                        detail: e.to_string(),
                    }
                }
                Err(e) => {
                    tracing::warn!(attempt = attempts, "email submission failed: {e}");
                    tokio::time::sleep(self.retry_delay).await;
                }
            }
        }
    }
}

/// Alert email for an intrusion. Known faces are named; unknown or missing
/// faces are flagged. The capture is attached whenever one was taken.
pub fn intrusion_email(
    event_id: &str,
    verdict: Option<&RecognitionResult>,
    face_found: bool,
    capture: Option<(String, Vec<u8>)>,
) -> EmailMessage {
    let (subject, body) = match verdict.map(|v| &v.verdict) {
        Some(Verdict::Known { label, distance }) => (
            format!("Intruder alert: {label}"),
            format!("'{label}' entered in your home.\nMatch distance: {distance:.3}.\n"),
        ),
        Some(Verdict::Unknown { min_distance }) => (
            "Intruder alert: unknown person".to_string(),
            format!(
                "An unknown person entered in your home. Their picture is attached.\nNearest match distance: {min_distance:.3}.\n"
            ),
        ),
        None if face_found => (
            "Intruder alert: unknown person".to_string(),
            "An unknown person entered in your home. Their picture is attached.\n".to_string(),
        ),
        None => (
            "Intruder alert: motion detected".to_string(),
            "Motion was detected in your home but no face was found. The full frame is attached.\n"
                .to_string(),
        ),
    };
    let body = match &capture {
        Some(_) => format!("{body}Event: {event_id}\n"),
        None => format!("{body}The camera frame could not be captured.\nEvent: {event_id}\n"),
    };
    EmailMessage {
        subject,
        body,
        attachments: capture
            .into_iter()
            .map(|(filename, data)| EmailAttachment {
                filename,
                content_type: "image/jpeg".into(),
                data,
            })
            .collect(),
    }
}

pub fn recording_email(event_id: &str, resolution: &str, recording: Vec<u8>) -> EmailMessage {
    EmailMessage {
        subject: format!("Recording of event {event_id}"),
        body: format!("Event {event_id} was resolved ({resolution}). The recording is attached.\n"),
        attachments: vec![EmailAttachment {
            filename: format!("{event_id}.mjpeg"),
            content_type: "video/x-motion-jpeg".into(),
            data: recording,
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn known_face_email_names_the_person() {
        let v = RecognitionResult {
            verdict: Verdict::Known {
                label: "Alice".into(),
                distance: 0.5,
            },
            distances: BTreeMap::new(),
        };
        let m = intrusion_email(
            "e1",
            Some(&v),
            true,
            Some(("capture-1.jpg".into(), vec![1, 2])),
        );
        assert!(m.body.starts_with("'Alice' entered in your home"));
        assert_eq!(m.attachments[0].data, vec![1, 2]);
        let none = intrusion_email("e1", None, false, None);
        assert!(none.body.contains("no face was found"));
        assert!(none.attachments.is_empty());
    }

    #[test]
    fn smtp_addr_parsing() {
        assert_eq!(
            split_host_port("127.0.0.1:2525").unwrap(),
            ("127.0.0.1".into(), 2525)
        );
        assert_eq!(split_host_port("[::1]:25").unwrap(), ("::1".into(), 25));
        assert!(split_host_port("localhost").is_err());
    }
}
