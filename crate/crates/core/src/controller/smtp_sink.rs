use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use base64::Engine;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

/// A message as accepted by the sink, dot-unstuffed.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedMail {
    pub mail_from: String,
    pub rcpt_to: Vec<String>,
    pub data: Vec<u8>,
}

impl ReceivedMail {
    pub fn parse(&self) -> ParsedMail {
        ParsedMail::parse(&self.data)
    }
}

/// Minimal SMTP server that stores everything it is sent. When failing it
/// rejects `MAIL FROM` with a permanent error.
pub struct SmtpSink {
    addr: SocketAddr,
    messages: Arc<Mutex<Vec<ReceivedMail>>>,
    failing: Arc<AtomicBool>,
    task: JoinHandle<()>,
}

impl SmtpSink {
    pub async fn start(addr: SocketAddr) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let messages = Arc::new(Mutex::new(Vec::new()));
        let failing = Arc::new(AtomicBool::new(false));
        let (m, f) = (messages.clone(), failing.clone());
        let task = tokio::spawn(async move {
            while let Ok((sock, _)) = listener.accept().await {
                let (m, f) = (m.clone(), f.clone());
                tokio::spawn(async move {
                    if let Err(e) = session(sock, m, f).await {
                        tracing::debug!("smtp sink session ended: {e}");
                    }
                });
            }
        });
        Ok(Self {
            addr,
            messages,
            failing,
            task,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn messages(&self) -> Vec<ReceivedMail> {
        self.messages.lock().unwrap().clone()
    }

    pub fn set_failing(&self, failing: bool) {
        self.failing.store(failing, Ordering::SeqCst);
    }

    pub fn stop(&self) {
        self.task.abort();
    }
}

impl Drop for SmtpSink {
    fn drop(&mut self) {
        self.task.abort();
    }
}

fn angle_addr(arg: &str) -> String {
    let arg = arg.trim();
    match (arg.find('<'), arg.rfind('>')) {
        (Some(a), Some(b)) if a < b => arg[a + 1..b].to_string(),
        _ => arg.to_string(),
    }
}

async fn session(
    sock: TcpStream,
    store: Arc<Mutex<Vec<ReceivedMail>>>,
    failing: Arc<AtomicBool>,
) -> std::io::Result<()> {
    let (rd, mut wr) = sock.into_split();
    let mut rd = BufReader::new(rd);
    wr.write_all(b"220 vigil-sink ESMTP ready\r\n").await?;
    let mut from = String::new();
    let mut rcpt = Vec::new();
    let mut line = Vec::new();
    loop {
        line.clear();
        if rd.read_until(b'\n', &mut line).await? == 0 {
            return Ok(());
        }
        let text = String::from_utf8_lossy(&line).trim_end().to_string();
        let upper = text.to_ascii_uppercase();
        let reply: &[u8] = if upper.starts_with("EHLO") {
            b"250-vigil-sink\r\n250-8BITMIME\r\n250 SMTPUTF8\r\n"
        } else if upper.starts_with("HELO") {
            b"250 vigil-sink\r\n"
        } else if upper.starts_with("MAIL FROM:") {
            if failing.load(Ordering::SeqCst) {
                b"550 5.7.1 delivery refused by sink\r\n"
            } else {
                from = angle_addr(&text[10..]);
                rcpt.clear();
                b"250 2.1.0 OK\r\n"
            }
        } else if upper.starts_with("RCPT TO:") {
            rcpt.push(angle_addr(&text[8..]));
            b"250 2.1.5 OK\r\n"
        } else if upper == "DATA" {
            wr.write_all(b"354 end data with <CR><LF>.<CR><LF>\r\n")
                .await?;
            let mut data = Vec::new();
            loop {
                line.clear();
                if rd.read_until(b'\n', &mut line).await? == 0 {
                    return Ok(());
                }
                if line == b".\r\n" || line == b".\n" {
                    break;
                }
                let body = if line.starts_with(b"..") {
                    &line[1..]
                } else {
                    &line[..]
                };
                data.extend_from_slice(body);
            }
            store.lock().unwrap().push(ReceivedMail {
                mail_from: std::mem::take(&mut from),
                rcpt_to: std::mem::take(&mut rcpt),
                data,
            });
            b"250 2.0.0 queued\r\n"
        } else if upper == "QUIT" {
            wr.write_all(b"221 2.0.0 bye\r\n").await?;
            return Ok(());
        } else if upper == "RSET" || upper == "NOOP" {
            b"250 2.0.0 OK\r\n"
        } else {
            b"502 5.5.2 command not implemented\r\n"
        };
        wr.write_all(reply).await?;
    }
}

/// One leaf part of a MIME message.
#[derive(Debug, Clone, PartialEq)]
pub struct MimePart {
    /// Lower-cased media type, e.g. `image/jpeg`.
    pub content_type: String,
    pub filename: Option<String>,
    pub is_attachment: bool,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMail {
    pub headers: Vec<(String, String)>,
    pub parts: Vec<MimePart>,
}

impl ParsedMail {
    pub fn parse(raw: &[u8]) -> Self {
        let (headers, body) = split_head(raw);
        let mut parts = Vec::new();
        collect_parts(&headers, body, &mut parts);
        Self { headers, parts }
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        header(&self.headers, name)
    }

    /// The first `text/plain` part that is not an attachment.
    pub fn text_body(&self) -> Option<String> {
        self.parts
            .iter()
            .find(|p| p.content_type == "text/plain" && !p.is_attachment)
            .map(|p| String::from_utf8_lossy(&p.data).into_owned())
    }

    pub fn attachments(&self) -> impl Iterator<Item = &MimePart> {
        self.parts.iter().filter(|p| p.is_attachment)
    }
}

fn header<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

/// Splits at the first blank line and unfolds header continuation lines.
fn split_head(raw: &[u8]) -> (Vec<(String, String)>, &[u8]) {
    let (head, body) = match find(raw, b"\r\n\r\n") {
        Some(i) => (&raw[..i], &raw[i + 4..]),
        None => match find(raw, b"\n\n") {
            Some(i) => (&raw[..i], &raw[i + 2..]),
            None => (raw, &raw[raw.len()..]),
        },
    };
    let mut headers: Vec<(String, String)> = Vec::new();
    for line in String::from_utf8_lossy(head).lines() {
        if line.starts_with([' ', '\t']) {
            if let Some(last) = headers.last_mut() {
                last.1.push(' ');
                last.1.push_str(line.trim());
            }
        } else if let Some((k, v)) = line.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    (headers, body)
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// `value; a=b; c="d"` into the value and its parameters.
fn params(v: &str) -> (String, Vec<(String, String)>) {
    let mut it = v.split(';');
    let main = it.next().unwrap_or("").trim().to_ascii_lowercase();
    let ps = it
        .filter_map(|p| p.split_once('='))
        .map(|(k, v)| {
            (
                k.trim().to_ascii_lowercase(),
                v.trim().trim_matches('"').to_string(),
            )
        })
        .collect();
    (main, ps)
}

fn param<'a>(ps: &'a [(String, String)], name: &str) -> Option<&'a str> {
    ps.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

fn collect_parts(headers: &[(String, String)], body: &[u8], out: &mut Vec<MimePart>) {
    let (ctype, cparams) = params(header(headers, "Content-Type").unwrap_or("text/plain"));
    if ctype.starts_with("multipart/") {
        let Some(boundary) = param(&cparams, "boundary") else {
            return;
        };
        let delim = format!("--{boundary}");
        let text = body;
        let mut starts = Vec::new();
        let mut i = 0;
        while let Some(p) = find(&text[i..], delim.as_bytes()) {
            starts.push(i + p);
            i += p + delim.len();
        }
        for w in starts.windows(2) {
            let seg = &text[w[0] + delim.len()..w[1]];
            if seg.starts_with(b"--") {
                break;
            }
            let seg = seg
                .strip_prefix(b"\r\n")
                .or(seg.strip_prefix(b"\n"))
                .unwrap_or(seg);
            let seg = seg
                .strip_suffix(b"\r\n")
                .or(seg.strip_suffix(b"\n"))
                .unwrap_or(seg);
            let (h, b) = split_head(seg);
            collect_parts(&h, b, out);
        }
        return;
    }
    let (disp, dparams) = params(header(headers, "Content-Disposition").unwrap_or(""));
    let encoding = header(headers, "Content-Transfer-Encoding")
        .unwrap_or("7bit")
        .trim()
        .to_ascii_lowercase();
    let data = match encoding.as_str() {
        "base64" => {
            let clean: Vec<u8> = body
                .iter()
                .copied()
                .filter(|b| !b.is_ascii_whitespace())
                .collect();
            base64::engine::general_purpose::STANDARD
                .decode(clean)
                .unwrap_or_default()
        }
        "quoted-printable" => decode_quoted_printable(body),
        _ => body.to_vec(),
    };
    let filename = param(&dparams, "filename")
        .or_else(|| param(&cparams, "name"))
        .map(str::to_string);
    out.push(MimePart {
        content_type: ctype,
        is_attachment: disp == "attachment" || (filename.is_some() && disp != "inline"),
        filename,
        data,
    });
}

fn decode_quoted_printable(s: &[u8]) -> Vec<u8> {
    let hex = |b: u8| (b as char).to_digit(16).map(|d| d as u8);
    let mut out = Vec::with_capacity(s.len());
    let mut i = 0;
    while i < s.len() {
        if s[i] == b'=' {
            if s[i + 1..].starts_with(b"\r\n") {
                i += 3;
                continue;
            }
            if s[i + 1..].starts_with(b"\n") {
                i += 2;
                continue;
            }
            if let (Some(h), Some(l)) = (
                s.get(i + 1).copied().and_then(hex),
                s.get(i + 2).copied().and_then(hex),
            ) {
                out.push(h << 4 | l);
                i += 3;
                continue;
            }
        }
        out.push(s[i]);
        i += 1;
    }
    out
}
