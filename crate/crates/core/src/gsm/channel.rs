use std::path::Path;
use std::time::Duration;

use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tracing::{debug, warn};

use super::codec::{encode, validate_number, validate_text, AtCommand, AtEvent, AtParser};
use super::GsmError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmsMessage {
    pub sender: String,
    pub text: String,
}

type Writer = Box<dyn AsyncWrite + Send + Unpin>;

/// Exclusive command issuer over a modem byte stream.
///
/// A background task is the single reader: it parses modem output and hands
/// events to the channel. Unsolicited `+CMTI` notices are routed to the
/// notice receiver returned by [`AtChannel::new`] instead of the in-flight
/// exchange. Events left over from an abandoned exchange are discarded before
/// the next command is written.
pub struct AtChannel {
    writer: Writer,
    events: mpsc::UnboundedReceiver<AtEvent>,
    reader: JoinHandle<()>,
}

impl AtChannel {
    pub fn new<S>(stream: S) -> (Self, mpsc::UnboundedReceiver<u32>)
    where
        S: AsyncRead + AsyncWrite + Send + 'static,
    {
        let (mut rd, wr) = tokio::io::split(stream);
        let (ev_tx, ev_rx) = mpsc::unbounded_channel();
        let (notice_tx, notice_rx) = mpsc::unbounded_channel();
        let reader = tokio::spawn(async move {
            let mut parser = AtParser::new();
            let mut buf = [0u8; 512];
            loop {
                let n = match rd.read(&mut buf).await {
                    Ok(0) => break,
                    Ok(n) => n,
                    Err(e) => {
                        warn!("modem read failed: {e}");
                        break;
                    }
                };
                for ev in parser.feed(&buf[..n]) {
                    debug!(?ev, "modem event");
                    let routed = match ev {
                        AtEvent::IncomingSmsNotice { index } => notice_tx.send(index).is_ok(),
                        other => ev_tx.send(other).is_ok(),
                    };
                    if !routed {
                        return;
                    }
                }
            }
        });
        (
            Self {
                writer: Box::new(wr),
                events: ev_rx,
                reader,
            },
            notice_rx,
        )
    }

    async fn write(&mut self, cmd: &AtCommand) -> Result<(), GsmError> {
        let bytes = encode(cmd)?;
        while self.events.try_recv().is_ok() {}
        self.writer.write_all(&bytes).await?;
        self.writer.flush().await?;
        Ok(())
    }

    /// Waits for the first event accepted by `want`; `Error` fails the step
    /// and anything else is skipped.
    async fn expect<T>(
        &mut self,
        step: &'static str,
        timeout: Duration,
        mut want: impl FnMut(AtEvent) -> Option<T>,
    ) -> Result<T, GsmError> {
        let wait = async {
            loop {
                match self.events.recv().await {
                    None => return Err(GsmError::Closed),
                    Some(AtEvent::Error) => return Err(GsmError::Protocol { step }),
                    Some(ev) => {
                        if let Some(v) = want(ev) {
                            return Ok(v);
                        }
                    }
                }
            }
        };
        tokio::time::timeout(timeout, wait)
            .await
            .map_err(|_| GsmError::Timeout { step })?
    }

    async fn expect_ok(&mut self, step: &'static str, timeout: Duration) -> Result<(), GsmError> {
        self.expect(step, timeout, |ev| (ev == AtEvent::Ok).then_some(()))
            .await
    }

    pub async fn set_text_mode(&mut self, timeout: Duration) -> Result<(), GsmError> {
        self.write(&AtCommand::SetTextMode).await?;
        self.expect_ok("await-ok", timeout).await
    }

    /// Sends a text-mode SMS and returns the modem's message reference.
    /// `timeout` applies to each step.
    pub async fn send_sms(
        &mut self,
        number: &str,
        text: &str,
        timeout: Duration,
    ) -> Result<u32, GsmError> {
        validate_number(number)?;
        validate_text(text)?;
        self.write(&AtCommand::SmsSendHeader {
            number: number.into(),
        })
        .await?;
        self.expect("await-prompt", timeout, |ev| {
            (ev == AtEvent::Prompt).then_some(())
        })
        .await?;
        self.write(&AtCommand::SmsBody { text: text.into() })
            .await?;
        let reference = self
            .expect("await-cmgs", timeout, |ev| match ev {
                AtEvent::SmsSent { reference } => Some(reference),
                _ => None,
            })
            .await?;
        self.expect_ok("await-ok", timeout).await?;
        Ok(reference)
    }

    pub async fn dial(&mut self, number: &str, timeout: Duration) -> Result<(), GsmError> {
        validate_number(number)?;
        self.write(&AtCommand::Dial {
            number: number.into(),
        })
        .await?;
        self.expect_ok("await-ok", timeout).await
    }

    pub async fn read_sms(
        &mut self,
        index: u32,
        timeout: Duration,
    ) -> Result<SmsMessage, GsmError> {
        self.write(&AtCommand::ReadSms { index }).await?;
        let msg = self
            .expect("await-cmgr", timeout, |ev| match ev {
                AtEvent::SmsContent { sender, text } => Some(SmsMessage { sender, text }),
                _ => None,
            })
            .await?;
        self.expect_ok("await-ok", timeout).await?;
        Ok(msg)
    }
}

impl Drop for AtChannel {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

/// Opens a serial device (or any character device or FIFO) for reading and
/// writing. Line settings are expected to be configured outside the process.
pub async fn open_device(path: impl AsRef<Path>) -> Result<tokio::fs::File, GsmError> {
    Ok(tokio::fs::OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .await?)
}
