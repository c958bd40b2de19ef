use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use convassist::harness::{parse_frames, replay_frames, transcript_frames};
use convassist::ingest::parse_replay;
use convassist::session::config::ProviderKind;
use convassist::session::server::{serve, ServerConfig};
use convassist::session::{encode_line, Condition, EngineConfig};

/// Conversation-assist engine: serves sessions over TCP/WebSocket, or
/// replays a script headless.
#[derive(Parser, Debug)]
#[command(name = "convassist-engine", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:7878")]
    listen: String,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hint provider (overrides the config).
    #[arg(long)]
    provider: Option<ProviderKind>,
    /// Drive one headless session from a frame script (NDJSON) or a
    /// transcript replay (TSV); outbound frames go to stdout.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Presentation condition (overrides the config).
    #[arg(long)]
    condition: Option<Condition>,
    /// Write session metrics as JSON.
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Serve the static UI bundle from this directory.
    #[arg(long)]
    serve_ui: Option<PathBuf>,
}

fn run(args: Args) -> Result<(), String> {
    let mut cfg = match &args.config {
        Some(p) => EngineConfig::load(p).map_err(|e| e.to_string())?,
        None => EngineConfig::default(),
    };
    if let Some(kind) = args.provider {
        cfg.provider.kind = kind;
    }
    if let Some(c) = args.condition {
        cfg.condition = c;
    }
    let provider = cfg.build_provider().map_err(|e| e.to_string())?;

    if let Some(path) = &args.replay {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let is_frames = text
            .lines()
            .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .is_some_and(|l| l.trim_start().starts_with('{'));
        let frames = if is_frames {
            parse_frames(&text)?
        } else {
            transcript_frames(&parse_replay(&text).map_err(|e| e.to_string())?)
        };
        let (session, outbound) = replay_frames(cfg, provider, &frames);
        let mut stdout = String::new();
        for m in &outbound {
            stdout.push_str(&encode_line(m));
        }
        print!("{stdout}");
        if let Some(out) = &args.metrics_out {
            let json = serde_json::to_string_pretty(&session.summary()).map_err(|e| e.to_string())?;
            std::fs::write(out, json).map_err(|e| format!("{}: {e}", out.display()))?;
        }
        return Ok(());
    }

    if let Some(dir) = &args.serve_ui {
        if !dir.is_dir() {
            return Err(format!("--serve-ui: {} is not a directory", dir.display()));
        }
    }
    let listener = TcpListener::bind(&args.listen).map_err(|e| format!("bind {}: {e}", args.listen))?;
    eprintln!(
        "listening on {} ({} condition, {:?} provider)",
        listener.local_addr().map_err(|e| e.to_string())?,
        cfg.condition.as_str(),
        cfg.provider.kind
    );
    serve(
        listener,
        ServerConfig {
            engine: cfg,
            ui_dir: args.serve_ui,
            provider,
            metrics_out: args.metrics_out,
        },
    )
    .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
