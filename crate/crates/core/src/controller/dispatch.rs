use std::time::Duration;

use tokio::io::{AsyncRead, AsyncWrite};
use tokio::sync::{mpsc, oneshot};

use super::event::{AlertChannel, AlertRecord};
use super::now_ms;
use crate::gsm::{AtChannel, GsmError, SmsMessage};

enum Job {
    Sms {
        number: String,
        text: String,
        reply: oneshot::Sender<Result<u32, GsmError>>,
    },
    Dial {
        number: String,
        reply: oneshot::Sender<Result<(), GsmError>>,
    },
}

/// Cheap handle to the task that exclusively owns the modem.
#[derive(Clone)]
pub struct AlertDispatcher {
    jobs: mpsc::Sender<Job>,
}

impl AlertDispatcher {
    /// Spawns the dispatcher. Inbound messages announced by the modem are
    /// read and forwarded to `inbound`.
    pub fn spawn<S>(
        stream: S,
        step_timeout: Duration,
        inbound: mpsc::UnboundedSender<SmsMessage>,
    ) -> (Self, tokio::task::JoinHandle<()>)
    where
        S: AsyncRead + AsyncWrite + Send + 'static,
    {
        let (tx, mut rx) = mpsc::channel::<Job>(32);
        let task = tokio::spawn(async move {
            let (mut chan, mut notices) = AtChannel::new(stream);
            if let Err(e) = chan.set_text_mode(step_timeout).await {
                tracing::warn!("modem did not accept text mode: {e}");
            }
            loop {
                tokio::select! {
                    job = rx.recv() => match job {
                        None => return,
                        Some(Job::Sms { number, text, reply }) => {
                            let _ = reply.send(chan.send_sms(&number, &text, step_timeout).await);
                        }
                        Some(Job::Dial { number, reply }) => {
                            let _ = reply.send(chan.dial(&number, step_timeout).await);
                        }
                    },
                    Some(index) = notices.recv() => {
                        match chan.read_sms(index, step_timeout).await {
                            Ok(sms) => {
                                tracing::info!(sender = %sms.sender, text = %sms.text, "inbound SMS");
                                let _ = inbound.send(sms);
                            }
                            Err(e) => tracing::warn!(index, "could not read inbound SMS: {e}"),
                        }
                    }
                }
            }
        });
        (Self { jobs: tx }, task)
    }

    pub async fn sms(&self, number: &str, text: &str) -> AlertRecord {
        let (reply, rx) = oneshot::channel();
        let job = Job::Sms {
            number: number.into(),
            text: text.into(),
            reply,
        };
        let outcome = self.run(job, rx).await;
        record(
            AlertChannel::Sms,
            number,
            outcome.map(|r| format!("+CMGS: {r}")),
        )
    }

    pub async fn dial(&self, number: &str) -> AlertRecord {
        let (reply, rx) = oneshot::channel();
        let job = Job::Dial {
            number: number.into(),
            reply,
        };
        let outcome = self.run(job, rx).await;
        record(
            AlertChannel::Call,
            number,
            outcome.map(|()| "OK".to_string()),
        )
    }

    async fn run<T>(
        &self,
        job: Job,
        rx: oneshot::Receiver<Result<T, GsmError>>,
    ) -> Result<T, GsmError> {
        self.jobs.send(job).await.map_err(|_| GsmError::Closed)?;
        rx.await.map_err(|_| GsmError::Closed)?
    }
}

fn record(channel: AlertChannel, to: &str, outcome: Result<String, GsmError>) -> AlertRecord {
    if let Err(e) = &outcome {
        tracing::warn!(?channel, to, "alert failed: {e}");
    }
    AlertRecord {
        channel,
        to: to.into(),
        at_ms: now_ms(),
        ok: outcome.is_ok(),
        detail: outcome.unwrap_or_else(|e| e.to_string()),
    }
}
