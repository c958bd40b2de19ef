//! Socket front end: one session per connection.
//!
//! A connection is sniffed on its first bytes. `GET` requests carrying an
//! `Upgrade: websocket` header become WebSocket sessions (one or more frames
//! per text message); other `GET`s are answered from the static UI directory.
//! Anything else is treated as raw newline-delimited frames.

use std::io::{self, BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Component, Path, PathBuf};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::WebSocket;

use super::config::EngineConfig;
use super::protocol::{decode, encode_line, DecodeError, Message};
use super::{Session, SessionSummary};
use crate::hintgen::{HintProvider, ProviderError};

#[derive(Clone)]
pub struct ServerConfig {
    pub engine: EngineConfig,
    pub ui_dir: Option<PathBuf>,
    pub provider: Arc<dyn HintProvider>,
    /// Each finished session's summary is written here as JSON.
    pub metrics_out: Option<PathBuf>,
}

pub enum Recv {
    Frame(Vec<u8>),
    Idle,
    Closed,
}

/// Whole-frame transport. `recv` returns `Idle` when nothing arrived within
/// the read timeout.
pub trait Transport {
    fn recv(&mut self) -> io::Result<Recv>;
    fn send(&mut self, line: &str) -> io::Result<()>;
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

pub struct LineTransport {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    partial: Vec<u8>,
}

impl LineTransport {
    pub fn new(stream: TcpStream, timeout: Duration) -> io::Result<Self> {
        stream.set_read_timeout(Some(timeout))?;
        let writer = stream.try_clone()?;
        Ok(Self {
            reader: BufReader::new(stream),
            writer,
            partial: Vec::new(),
        })
    }
}

impl Transport for LineTransport {
    fn recv(&mut self) -> io::Result<Recv> {
        match self.reader.read_until(b'\n', &mut self.partial) {
            Ok(0) if self.partial.is_empty() => Ok(Recv::Closed),
            // a frame cut off by EOF is handed over as-is and fails to decode
            Ok(_) => Ok(Recv::Frame(std::mem::take(&mut self.partial))),
            Err(e) if is_timeout(&e) => Ok(Recv::Idle),
            Err(e) if e.kind() == ErrorKind::Interrupted => Ok(Recv::Idle),
            Err(e) => Err(e),
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()
    }
}

pub struct WsTransport {
    ws: WebSocket<TcpStream>,
    queued: std::collections::VecDeque<Vec<u8>>,
}

impl WsTransport {
    pub fn accept(stream: TcpStream, timeout: Duration) -> io::Result<Self> {
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        ws.get_ref().set_read_timeout(Some(timeout))?;
        Ok(Self {
            ws,
            queued: Default::default(),
        })
    }
}

impl Transport for WsTransport {
    fn recv(&mut self) -> io::Result<Recv> {
        if let Some(f) = self.queued.pop_front() {
            return Ok(Recv::Frame(f));
        }
        use tungstenite::{Error, Message as Ws};
        match self.ws.read() {
            Ok(Ws::Text(text)) => {
                for line in text.as_str().split('\n').filter(|l| !l.trim().is_empty()) {
                    self.queued.push_back(line.as_bytes().to_vec());
                }
                Ok(self.queued.pop_front().map_or(Recv::Idle, Recv::Frame))
            }
            Ok(Ws::Binary(bytes)) => Ok(Recv::Frame(bytes.to_vec())),
            Ok(Ws::Close(_)) => Ok(Recv::Closed),
            Ok(_) => Ok(Recv::Idle),
            Err(Error::Io(e)) if is_timeout(&e) => Ok(Recv::Idle),
            Err(Error::ConnectionClosed | Error::AlreadyClosed) => Ok(Recv::Closed),
            Err(e) => Err(io::Error::other(e.to_string())),
        }
    }

    fn send(&mut self, line: &str) -> io::Result<()> {
        let text = line.trim_end_matches('\n').to_string();
        self.ws
            .send(tungstenite::Message::Text(text.into()))
            .map_err(|e| io::Error::other(e.to_string()))
    }
}

fn decode_error_frame(t: u64, err: &DecodeError) -> Message {
    let code = match err {
        DecodeError::Malformed { .. } => "malformed",
        DecodeError::UnknownType(_) => "unknown_type",
    };
    Message::error(t, code, err.to_string())
}

/// Runs one session over `transport` until the peer disconnects. Ticks follow
/// the wall clock; provider calls run on worker threads and re-enter the loop
/// as completions.
pub fn run_session(transport: &mut dyn Transport, cfg: &ServerConfig) -> io::Result<SessionSummary> {
    let start = Instant::now();
    let tick_ms = cfg.engine.tick_ms;
    let mut session = Session::new(cfg.engine.clone());
    let (tx, rx) = mpsc::channel::<(u64, Result<String, ProviderError>)>();
    let mut next_tick = 0u64;
    let elapsed = || start.elapsed().as_millis() as u64;
    loop {
        let mut out = Vec::new();
        match transport.recv()? {
            Recv::Frame(bytes) if bytes.iter().all(u8::is_ascii_whitespace) => {}
            Recv::Frame(bytes) => match decode(&bytes) {
                Ok(msg) => out.extend(session.handle_inbound(msg)),
                Err(e) => out.push(decode_error_frame(session.now_ms(), &e)),
            },
            Recv::Idle => {}
            Recv::Closed => return Ok(session.summary()),
        }
        while let Ok((seq, result)) = rx.try_recv() {
            out.extend(session.complete_request(elapsed(), seq, result));
        }
        let now = elapsed();
        if now >= next_tick {
            out.extend(session.tick(now));
            next_tick = now + tick_ms;
        }
        for req in session.take_requests() {
            let provider = Arc::clone(&cfg.provider);
            let prompt = session.system_prompt().to_string();
            let tx = tx.clone();
            thread::spawn(move || {
                let result = provider.generate(&prompt, &req.window_text);
                let _ = tx.send((req.seq, result));
            });
        }
        for msg in &out {
            transport.send(&encode_line(msg))?;
        }
    }
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("wasm") => "application/wasm",
        _ => "application/octet-stream",
    }
}

/// Maps a request target to a file under `root`; `None` for traversal
/// attempts.
pub fn resolve_static(root: &Path, target: &str) -> Option<PathBuf> {
    let path = target.split(['?', '#']).next().unwrap_or("/");
    let mut out = root.to_path_buf();
    for comp in Path::new(path.trim_start_matches('/')).components() {
        match comp {
            Component::Normal(c) => out.push(c),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if out.is_dir() {
        out.push("index.html");
    }
    Some(out)
}

fn respond_static(mut stream: TcpStream, head: &str, ui_dir: Option<&Path>) -> io::Result<()> {
    let target = head.split_whitespace().nth(1).unwrap_or("/");
    let file = ui_dir.and_then(|d| resolve_static(d, target)).filter(|p| p.is_file());
    let (status, ctype, body) = match file.and_then(|p| std::fs::read(&p).ok().map(|b| (p, b))) {
        Some((p, body)) => ("200 OK", content_type(&p), body),
        None => ("404 Not Found", "text/plain", b"not found\n".to_vec()),
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(&body)?;
    stream.flush()
}

/// Peeks the request head without consuming it.
fn peek_head(stream: &TcpStream) -> io::Result<String> {
    let mut buf = vec![0u8; 8192];
    let deadline = Instant::now() + Duration::from_secs(5);
    loop {
        let n = stream.peek(&mut buf)?;
        let text = String::from_utf8_lossy(&buf[..n]).into_owned();
        if text.contains("\r\n\r\n") || n == buf.len() || Instant::now() > deadline || n == 0 {
            return Ok(text);
        }
        thread::sleep(Duration::from_millis(2));
    }
}

fn finish(summary: SessionSummary, cfg: &ServerConfig) -> io::Result<()> {
    if let Some(path) = &cfg.metrics_out {
        let json = serde_json::to_vec_pretty(&summary).map_err(io::Error::other)?;
        std::fs::write(path, json)?;
    }
    Ok(())
}

pub fn handle_connection(stream: TcpStream, cfg: &ServerConfig) -> io::Result<()> {
    let timeout = Duration::from_millis(cfg.engine.tick_ms.max(1));
    let mut first = [0u8; 4];
    let n = loop {
        match stream.peek(&mut first) {
            Ok(n) if n >= 4 || n == 0 => break n,
            Ok(_) => thread::sleep(Duration::from_millis(2)),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    };
    if n == 0 {
        return Ok(());
    }
    if &first == b"GET " {
        let head = peek_head(&stream)?;
        let upgrade = head
            .lines()
            .any(|l| l.to_ascii_lowercase().starts_with("upgrade:") && l.to_ascii_lowercase().contains("websocket"));
        if upgrade {
            let mut t = WsTransport::accept(stream, timeout)?;
            return finish(run_session(&mut t, cfg)?, cfg);
        }
        // consume the head before answering
        let mut stream = stream;
        let len = head.find("\r\n\r\n").map_or(head.len(), |i| i + 4);
        let mut sink = vec![0u8; len];
        stream.read_exact(&mut sink)?;
        let first_line = head.lines().next().unwrap_or_default().to_string();
        return respond_static(stream, &first_line, cfg.ui_dir.as_deref());
    }
    let mut t = LineTransport::new(stream, timeout)?;
    finish(run_session(&mut t, cfg)?, cfg)
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, cfg: ServerConfig) -> io::Result<()> {
    let cfg = Arc::new(cfg);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept failed: {e}");
                continue;
            }
        };
        let cfg = Arc::clone(&cfg);
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, &cfg) {
                eprintln!("connection {peer:?} ended: {e}");
            }
        });
    }
    Ok(())
}
