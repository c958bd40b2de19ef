use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use convassist::hintgen::MockProvider;
use convassist::session::server::{serve, ServerConfig};
use convassist::session::{decode, EngineConfig, Message, SessionSummary};

fn start(ui_dir: Option<PathBuf>, metrics_out: Option<PathBuf>) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let cfg = ServerConfig {
        engine: EngineConfig::default(),
        ui_dir,
        provider: Arc::new(MockProvider::default()),
        metrics_out,
    };
    std::thread::spawn(move || serve(listener, cfg));
    addr
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("convassist-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const HELLO: &str = r#"{"ty":"hello","t":0,"proto_version":1,"role":"renderer"}"#;
const FACE: &str = r#"{"ty":"face_obs","t":10,"le":[-45,0,1500],"re":[45,0,1500],"nb":[0,50,1500]}"#;
const SAY: &str = r#"{"ty":"transcript","t":20,"spk":"U","fin":true,"loud":0.9,"text":"coffee, I need more coffee"}"#;

/// Reads frames until `pred` matches one or the deadline passes.
fn read_until(reader: &mut impl BufRead, pred: impl Fn(&Message) -> bool) -> Vec<Message> {
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut seen = Vec::new();
    let mut line = String::new();
    while Instant::now() < deadline {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {
                let m = decode(line.as_bytes()).expect("server emits valid frames");
                let done = pred(&m);
                seen.push(m);
                if done {
                    return seen;
                }
            }
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => panic!("{e}"),
        }
    }
    panic!("no matching frame; saw {seen:?}");
}

#[test]
fn raw_tcp_session() {
    let addr = start(None, None);
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());

    writeln!(stream, "{HELLO}").unwrap();
    read_until(&mut reader, |m| matches!(m, Message::Snapshot { .. }));

    writeln!(stream, "{FACE}").unwrap();
    let seen = read_until(&mut reader, |m| matches!(m, Message::LayoutUpdate { .. }));
    let Some(Message::LayoutUpdate { text_rect, visible, n_arcs, .. }) = seen.last() else {
        unreachable!()
    };
    assert!(*visible);
    assert_eq!(*n_arcs, 8);
    assert!((text_rect.w - 60.0).abs() < 1e-9);

    writeln!(stream, "{SAY}").unwrap();
    let seen = read_until(&mut reader, |m| matches!(m, Message::HintUpdate { .. }));
    let Some(Message::HintUpdate { keywords, lines, .. }) = seen.last() else {
        unreachable!()
    };
    assert_eq!(keywords, &["coffee"]);
    assert_eq!(lines.len(), 1);

    writeln!(stream, "{{\"ty\":\"gaze\",\"t\":5,").unwrap();
    let seen = read_until(&mut reader, |m| matches!(m, Message::Error { .. }));
    assert!(matches!(seen.last(), Some(Message::Error { code, .. }) if code == "malformed"));

    writeln!(stream, "{{\"ty\":\"teleport\",\"t\":5}}").unwrap();
    let seen = read_until(&mut reader, |m| matches!(m, Message::Error { .. }));
    assert!(matches!(seen.last(), Some(Message::Error { code, .. }) if code == "unknown_type"));

    // session survives errors
    writeln!(stream, "{{\"ty\":\"snapshot_request\",\"t\":30}}").unwrap();
    let seen = read_until(&mut reader, |m| matches!(m, Message::Snapshot { .. }));
    let Some(Message::Snapshot { snapshot, .. }) = seen.last() else {
        unreachable!()
    };
    assert_eq!(snapshot.active_hints.as_ref().unwrap().keywords, ["coffee"]);
}

#[test]
fn handshake_required() {
    let addr = start(None, None);
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    writeln!(stream, "{FACE}").unwrap();
    let seen = read_until(&mut reader, |m| matches!(m, Message::Error { .. }));
    assert!(matches!(seen.last(), Some(Message::Error { code, .. }) if code == "no_handshake"));
}

#[test]
fn websocket_session() {
    let addr = start(None, None);
    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}/session")).unwrap();
    // two frames in one text message
    ws.send(tungstenite::Message::Text(format!("{HELLO}\n{FACE}").into()))
        .unwrap();
    ws.send(tungstenite::Message::Text(SAY.into())).unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut kinds = Vec::new();
    while Instant::now() < deadline && !(kinds.contains(&"hint_update") && kinds.contains(&"layout_update")) {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            kinds.push(decode(t.as_bytes()).unwrap().type_name());
        }
    }
    assert_eq!(kinds[0], "snapshot");
    assert!(kinds.contains(&"layout_update"));
    assert!(kinds.contains(&"hint_update"));
    ws.close(None).unwrap();
}

fn http_get(addr: SocketAddr, target: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    write!(s, "GET {target} HTTP/1.1\r\nHost: x\r\n\r\n").unwrap();
    let mut out = String::new();
    s.read_to_string(&mut out).unwrap();
    out
}

#[test]
fn serves_static_ui() {
    let dir = scratch("ui");
    std::fs::write(dir.join("index.html"), "<html>panel</html>").unwrap();
    std::fs::write(dir.join("app.js"), "console.log(1)").unwrap();
    let addr = start(Some(dir), None);
    let index = http_get(addr, "/?engine=ws://x&gaze=mouse");
    assert!(index.starts_with("HTTP/1.1 200 OK"));
    assert!(index.contains("text/html"));
    assert!(index.ends_with("<html>panel</html>"));
    let js = http_get(addr, "/app.js");
    assert!(js.contains("text/javascript"));
    assert!(http_get(addr, "/missing.css").starts_with("HTTP/1.1 404"));
    assert!(http_get(addr, "/../Cargo.toml").starts_with("HTTP/1.1 404"));
}

#[test]
fn no_ui_dir_gives_404() {
    let addr = start(None, None);
    assert!(http_get(addr, "/").starts_with("HTTP/1.1 404"));
}

#[test]
fn metrics_written_on_disconnect() {
    let out = scratch("metrics").join("summary.json");
    let addr = start(None, Some(out.clone()));
    {
        let mut stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(Duration::from_millis(200))).unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        writeln!(stream, "{HELLO}\n{SAY}").unwrap();
        read_until(&mut reader, |m| matches!(m, Message::HintUpdate { .. }));
    }
    let deadline = Instant::now() + Duration::from_secs(5);
    while !out.exists() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    let summary: SessionSummary = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(summary.snapshot.metrics.hint_updates, 1);
    assert_eq!(summary.log.hints.len(), 1);
}
