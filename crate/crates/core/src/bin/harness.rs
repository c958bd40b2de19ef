use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use convassist::harness::{compare, run, Scenario};
use convassist::session::Condition;

/// Replays scripted sessions and reports machine-measurable outcomes.
#[derive(Parser, Debug)]
#[command(name = "harness", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Run one scenario.
    Run {
        scenario: PathBuf,
        /// Override the scenario's condition.
        #[arg(long)]
        condition: Option<Condition>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario under both conditions and diff them (face minus fixed).
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit(value: &impl Serialize, out: Option<&Path>) -> Result<(), String> {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    json.push('\n');
    match out {
        Some(p) => std::fs::write(p, json).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let result = match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            condition,
            out,
        } => Scenario::load(&scenario)
            .and_then(|s| {
                let cond = condition.unwrap_or(s.condition);
                run(&s.inputs()?, cond)
            })
            .map_err(|e| e.to_string())
            .and_then(|r| emit(&r, out.as_deref())),
        Cmd::Compare { scenario, out } => Scenario::load(&scenario)
            .and_then(|s| compare(&s.inputs()?, Condition::FaceAnchored, Condition::WorldFixed))
            .map_err(|e| e.to_string())
            .and_then(|r| emit(&r, Some(&out))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
