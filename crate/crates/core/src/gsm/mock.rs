use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use tokio::io::{AsyncReadExt, AsyncWriteExt, DuplexStream, WriteHalf};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use super::channel::SmsMessage;
use super::codec::{AtCommand, CommandDecoder, CTRL_Z};

/// Behaviour knobs for the mock modem.
#[derive(Debug, Clone)]
pub struct ModemScript {
    /// Answer commands. When false the modem stays silent.
    pub auto_ok: bool,
    /// Reply `ERROR` to `AT+CMGS` headers instead of the prompt.
    pub fail_sms_header: bool,
    /// Reply `ERROR` to `ATD`.
    pub fail_dial: bool,
    /// Reference reported for the next sent SMS.
    pub next_ref: u32,
    /// Messages announced with `+CMTI` as soon as the modem starts.
    pub inbound: Vec<SmsMessage>,
}

impl Default for ModemScript {
    fn default() -> Self {
        Self {
            auto_ok: true,
            fail_sms_header: false,
            fail_dial: false,
            next_ref: 1,
            inbound: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// Controller to modem.
    ToModem,
    /// Modem to controller.
    FromModem,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub bytes: Vec<u8>,
}

/// Append-only log of both directions in the order the mock saw them.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn bytes(&self, direction: Direction) -> Vec<u8> {
        self.entries
            .iter()
            .filter(|e| e.direction == direction)
            .flat_map(|e| e.bytes.iter().copied())
            .collect()
    }

    /// Both directions interleaved, lossily decoded.
    pub fn text(&self) -> String {
        let all: Vec<u8> = self.entries.iter().flat_map(|e| e.bytes.clone()).collect();
        String::from_utf8_lossy(&all).into_owned()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.text().contains(needle)
    }

    pub fn count(&self, needle: &str) -> usize {
        self.text().matches(needle).count()
    }

    pub fn ctrl_z_count(&self) -> usize {
        self.bytes(Direction::ToModem)
            .iter()
            .filter(|&&b| b == CTRL_Z)
            .count()
    }
}

#[derive(Default)]
struct State {
    transcript: Transcript,
    storage: BTreeMap<u32, SmsMessage>,
    next_index: u32,
    /// `(number, text)` of every completed SMS.
    sent: Vec<(String, String)>,
    dialed: Vec<String>,
    header_number: String,
}

struct Shared {
    script: Mutex<ModemScript>,
    state: Mutex<State>,
}

/// In-process modem on one end of a duplex pipe.
#[derive(Clone)]
pub struct MockModem {
    shared: Arc<Shared>,
    inject: mpsc::UnboundedSender<SmsMessage>,
    task: Arc<JoinHandle<()>>,
}

impl MockModem {
    /// Starts the mock; the returned stream is the controller's end.
    pub fn spawn(mut script: ModemScript) -> (Self, DuplexStream) {
        let (ours, theirs) = tokio::io::duplex(4096);
        let inbound = std::mem::take(&mut script.inbound);
        let shared = Arc::new(Shared {
            script: Mutex::new(script),
            state: Mutex::new(State {
                next_index: 1,
                ..Default::default()
            }),
        });
        let (inject, mut inject_rx) = mpsc::unbounded_channel();
        for m in inbound {
            let _ = inject.send(m);
        }
        let task_shared = shared.clone();
        let task = tokio::spawn(async move {
            let (mut rd, mut wr) = tokio::io::split(ours);
            let mut decoder = CommandDecoder::new();
            let mut buf = [0u8; 512];
            loop {
                tokio::select! {
                    read = rd.read(&mut buf) => {
                        let n = match read {
                            Ok(0) | Err(_) => break,
                            Ok(n) => n,
                        };
                        task_shared.log(Direction::ToModem, &buf[..n]);
                        for cmd in decoder.feed(&buf[..n]) {
                            if let Some(reply) = task_shared.respond(cmd) {
                                if task_shared.send(&mut wr, &reply).await.is_err() {
                                    return;
                                }
                            }
                        }
                    }
                    Some(msg) = inject_rx.recv() => {
                        let index = {
                            let mut st = task_shared.state.lock().unwrap();
                            let i = st.next_index;
                            st.next_index += 1;
                            st.storage.insert(i, msg);
                            i
                        };
                        let notice = format!("\r\n+CMTI: \"SM\",{index}\r\n");
                        if task_shared.send(&mut wr, notice.as_bytes()).await.is_err() {
                            return;
                        }
                    }
                }
            }
        });
        (
            Self {
                shared,
                inject,
                task: Arc::new(task),
            },
            theirs,
        )
    }

    /// Stores an inbound SMS and announces it with `+CMTI`.
    pub fn inject_sms(&self, sender: &str, text: &str) {
        let _ = self.inject.send(SmsMessage {
            sender: sender.into(),
            text: text.into(),
        });
    }

    pub fn update_script(&self, f: impl FnOnce(&mut ModemScript)) {
        f(&mut self.shared.script.lock().unwrap());
    }

    pub fn transcript(&self) -> Transcript {
        self.shared.state.lock().unwrap().transcript.clone()
    }

    /// `(number, text)` of every SMS the controller completed.
    pub fn sent_sms(&self) -> Vec<(String, String)> {
        self.shared.state.lock().unwrap().sent.clone()
    }

    pub fn dialed(&self) -> Vec<String> {
        self.shared.state.lock().unwrap().dialed.clone()
    }

    pub fn stop(&self) {
        self.task.abort();
    }
}

impl Shared {
    fn log(&self, direction: Direction, bytes: &[u8]) {
        self.state
            .lock()
            .unwrap()
            .transcript
            .entries
            .push(TranscriptEntry {
                direction,
                bytes: bytes.to_vec(),
            });
    }

    async fn send(&self, wr: &mut WriteHalf<DuplexStream>, bytes: &[u8]) -> std::io::Result<()> {
        self.log(Direction::FromModem, bytes);
        wr.write_all(bytes).await?;
        wr.flush().await
    }

    fn respond(&self, cmd: AtCommand) -> Option<Vec<u8>> {
        const OK: &[u8] = b"\r\nOK\r\n";
        const ERROR: &[u8] = b"\r\nERROR\r\n";
        let mut script = self.script.lock().unwrap();
        let mut st = self.state.lock().unwrap();
        // Track what was sent even when silent, so tests can see intent.
        match &cmd {
            AtCommand::Dial { number } => st.dialed.push(number.clone()),
            AtCommand::SmsSendHeader { number } => st.header_number = number.clone(),
            AtCommand::SmsBody { text } => {
                let number = st.header_number.clone();
                st.sent.push((number, text.clone()));
            }
            _ => {}
        }
        if !script.auto_ok {
            return None;
        }
        Some(match cmd {
            AtCommand::SetTextMode | AtCommand::Raw { .. } => OK.to_vec(),
            AtCommand::Dial { .. } if script.fail_dial => ERROR.to_vec(),
            AtCommand::Dial { .. } => OK.to_vec(),
            AtCommand::SmsSendHeader { .. } if script.fail_sms_header => ERROR.to_vec(),
            AtCommand::SmsSendHeader { .. } => b"\r\n> ".to_vec(),
            AtCommand::SmsBody { .. } => {
                let r = script.next_ref;
                script.next_ref += 1;
                format!("\r\n+CMGS: {r}\r\n\r\nOK\r\n").into_bytes()
            }
            AtCommand::ReadSms { index } => match st.storage.get(&index) {
                Some(m) => format!(
                    "\r\n+CMGR: \"REC UNREAD\",\"{}\",,\"26/10/16,12:00:00+00\"\r\n{}\r\n\r\nOK\r\n",
                    m.sender, m.text
                )
                .into_bytes(),
                None => b"\r\n+CMS ERROR: 321\r\n".to_vec(),
            },
        })
    }
}
