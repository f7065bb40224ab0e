use super::GsmError;

pub const CTRL_Z: u8 = 0x1A;

/// Commands the controller issues to the modem. Text mode throughout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtCommand {
    Dial { number: String },
    SmsSendHeader { number: String },
    SmsBody { text: String },
    SetTextMode,
    ReadSms { index: u32 },
    Raw { bytes: Vec<u8> },
}

/// `+` followed by 6 to 15 digits.
pub fn validate_number(number: &str) -> Result<(), GsmError> {
    let digits = number.strip_prefix('+').unwrap_or("");
    if (6..=15).contains(&digits.len()) && digits.bytes().all(|b| b.is_ascii_digit()) {
        Ok(())
    } else {
        Err(GsmError::InvalidNumber(number.to_string()))
    }
}

pub fn validate_text(text: &str) -> Result<(), GsmError> {
    if text.as_bytes().contains(&CTRL_Z) {
        Err(GsmError::InvalidText("contains CTRL-Z".into()))
    } else {
        Ok(())
    }
}

impl AtCommand {
    pub fn validate(&self) -> Result<(), GsmError> {
        match self {
            AtCommand::Dial { number } | AtCommand::SmsSendHeader { number } => {
                validate_number(number)
            }
            AtCommand::SmsBody { text } => validate_text(text),
            AtCommand::SetTextMode | AtCommand::ReadSms { .. } | AtCommand::Raw { .. } => Ok(()),
        }
    }
}

pub fn encode(cmd: &AtCommand) -> Result<Vec<u8>, GsmError> {
    cmd.validate()?;
    Ok(match cmd {
        AtCommand::Dial { number } => format!("ATD{number};\r").into_bytes(),
        AtCommand::SmsSendHeader { number } => format!("AT+CMGS=\"{number}\"\r").into_bytes(),
        AtCommand::SmsBody { text } => {
            let mut b = text.as_bytes().to_vec();
            b.push(CTRL_Z);
            b
        }
        AtCommand::SetTextMode => b"AT+CMGF=1\r".to_vec(),
        AtCommand::ReadSms { index } => format!("AT+CMGR={index}\r").into_bytes(),
        AtCommand::Raw { bytes } => bytes.clone(),
    })
}

/// Modem output, one event per complete line (the SMS prompt excepted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AtEvent {
    Ok,
    Error,
    Prompt,
    SmsSent { reference: u32 },
    IncomingSmsNotice { index: u32 },
    SmsContent { sender: String, text: String },
    Line { raw: String },
}

/// Incremental modem-output parser. Feed it arbitrary chunks; it keeps the
/// partial line between calls.
#[derive(Debug, Default, Clone)]
pub struct AtParser {
    line: Vec<u8>,
    /// Sender from a `+CMGR:` header whose text line has not arrived yet.
    pending_read: Option<String>,
}

impl AtParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, chunk: &[u8]) -> Vec<AtEvent> {
        let mut out = Vec::new();
        for &b in chunk {
            self.push(b, &mut out);
        }
        out
    }

    fn push(&mut self, b: u8, out: &mut Vec<AtEvent>) {
        if b == b'\r' || b == b'\n' {
            if !self.line.is_empty() {
                let line = String::from_utf8_lossy(&self.line).into_owned();
                self.line.clear();
                if let Some(ev) = self.classify(line) {
                    out.push(ev);
                }
            }
            return;
        }
        self.line.push(b);
        if self.pending_read.is_none() && self.line == b"> " {
            self.line.clear();
            out.push(AtEvent::Prompt);
        }
    }

    fn classify(&mut self, line: String) -> Option<AtEvent> {
        if let Some(sender) = self.pending_read.take() {
            return Some(AtEvent::SmsContent { sender, text: line });
        }
        let trimmed = line.trim();
        Some(match trimmed {
            "OK" => AtEvent::Ok,
            "ERROR" => AtEvent::Error,
            _ if trimmed.starts_with("+CMS ERROR") || trimmed.starts_with("+CME ERROR") => {
                AtEvent::Error
            }
            _ => {
                if let Some(n) = trimmed
                    .strip_prefix("+CMGS:")
                    .and_then(|r| r.trim().parse().ok())
                {
                    AtEvent::SmsSent { reference: n }
                } else if let Some(i) = trimmed
                    .strip_prefix("+CMTI:")
                    .and_then(|r| r.rsplit(',').next())
                    .and_then(|i| i.trim().parse().ok())
                {
                    AtEvent::IncomingSmsNotice { index: i }
                } else if let Some(rest) = trimmed.strip_prefix("+CMGR:") {
                    self.pending_read =
                        Some(quoted_fields(rest).get(1).cloned().unwrap_or_default());
                    return None;
                } else {
                    AtEvent::Line { raw: line }
                }
            }
        })
    }
}

/// Comma-separated fields with surrounding quotes removed; empty fields kept.
fn quoted_fields(s: &str) -> Vec<String> {
    s.split(',')
        .map(|f| f.trim().trim_matches('"').to_string())
        .collect()
}

/// Modem-side view: decodes the byte stream a controller writes back into
/// commands. After an `AT+CMGS` header, bytes up to CTRL-Z form the body.
#[derive(Debug, Default, Clone)]
pub struct CommandDecoder {
    buf: Vec<u8>,
    in_body: bool,
}

impl CommandDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// True between an `AT+CMGS` header and its terminating CTRL-Z.
    pub fn in_body(&self) -> bool {
        self.in_body
    }

    pub fn feed(&mut self, chunk: &[u8]) -> Vec<AtCommand> {
        let mut out = Vec::new();
        for &b in chunk {
            if self.in_body {
                if b == CTRL_Z {
                    let text = String::from_utf8_lossy(&self.buf).into_owned();
                    self.buf.clear();
                    self.in_body = false;
                    out.push(AtCommand::SmsBody { text });
                } else {
                    self.buf.push(b);
                }
                continue;
            }
            self.buf.push(b);
            if b == b'\r' {
                let line = std::mem::take(&mut self.buf);
                let cmd = decode_line(line);
                self.in_body = matches!(cmd, AtCommand::SmsSendHeader { .. });
                out.push(cmd);
            }
        }
        out
    }
}

fn decode_line(line: Vec<u8>) -> AtCommand {
    let text = String::from_utf8_lossy(&line[..line.len() - 1]).into_owned();
    let parsed = if text == "AT+CMGF=1" {
        Some(AtCommand::SetTextMode)
    } else if let Some(n) = text.strip_prefix("ATD").and_then(|r| r.strip_suffix(';')) {
        Some(AtCommand::Dial {
            number: n.to_string(),
        })
    } else if let Some(n) = text
        .strip_prefix("AT+CMGS=\"")
        .and_then(|r| r.strip_suffix('"'))
    {
        Some(AtCommand::SmsSendHeader {
            number: n.to_string(),
        })
    } else {
        text.strip_prefix("AT+CMGR=")
            .and_then(|i| i.parse().ok())
            .map(|index| AtCommand::ReadSms { index })
    };
    parsed
        .filter(|c| c.validate().is_ok())
        .unwrap_or(AtCommand::Raw { bytes: line })
}
