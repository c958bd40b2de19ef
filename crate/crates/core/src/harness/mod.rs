//! Scripted replay of whole sessions on a simulated clock.
//!
//! A scenario bundles a transcript replay, a gaze script and a face trace.
//! [`run`] streams them through a session with the mock provider and
//! summarizes what a live trial would have measured.

mod driver;
mod traces;

pub use driver::Driver;
pub use traces::{parse_face_trace, parse_gaze_script, FaceLandmarks, FaceTrace, GazeScript, GazeTarget};

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{
    reading_proportion, split_ticks, utterances_from_events, ReadingMetrics, TickRecord, TurnStats,
};
use crate::ingest::{parse_replay, TranscriptEvent};
use crate::session::config::ConfigError;
use crate::session::{
    Condition, EngineConfig, HintLogEntry, Message, Session, ShiftLogEntry, ToggleLogEntry,
};
use crate::presentation::GazeSample;
use crate::hintgen::HintProvider;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("{0} trace is empty")]
    EmptyTrace(&'static str),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("session error at t={t}: {code}: {detail}")]
    Session { t: u64, code: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub transcript_file: PathBuf,
    pub gaze_trace_file: PathBuf,
    pub face_trace_file: PathBuf,
    #[serde(default)]
    pub condition: Condition,
    /// Run length; defaults to the last timestamp in any trace.
    #[serde(default)]
    pub duration_ms: Option<u64>,
    #[serde(default)]
    pub config: EngineConfig,
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, reason: impl ToString) -> ScenarioError {
    ScenarioError::Parse {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

impl Scenario {
    /// Reads a `.json` or `.toml` scenario; relative paths resolve against
    /// its directory.
    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = read(path)?;
        let mut sc: Scenario = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(path, e))?
        } else {
            toml::from_str(&text).map_err(|e| parse_err(path, e))?
        };
        sc.config.validate()?;
        if let Some(dir) = path.parent() {
            sc.resolve_paths(dir);
        }
        Ok(sc)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.transcript_file,
            &mut self.gaze_trace_file,
            &mut self.face_trace_file,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self.config.resolve_paths(base);
    }

    pub fn inputs(&self) -> Result<ScenarioInputs, ScenarioError> {
        let transcript = parse_replay(&read(&self.transcript_file)?)
            .map_err(|e| parse_err(&self.transcript_file, e))?;
        let gaze = parse_gaze_script(&read(&self.gaze_trace_file)?)
            .map_err(|e| parse_err(&self.gaze_trace_file, e))?;
        let face = parse_face_trace(&read(&self.face_trace_file)?)
            .map_err(|e| parse_err(&self.face_trace_file, e))?;
        ScenarioInputs::new(self.name.clone(), self.config.clone(), transcript, gaze, face, self.duration_ms)
    }
}

/// Parsed scenario content, ready to run any number of times.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInputs {
    pub name: String,
    pub config: EngineConfig,
    pub transcript: Vec<TranscriptEvent>,
    pub gaze: GazeScript,
    pub face: FaceTrace,
    pub duration_ms: u64,
}

impl ScenarioInputs {
    pub fn new(
        name: String,
        config: EngineConfig,
        transcript: Vec<TranscriptEvent>,
        gaze: GazeScript,
        face: FaceTrace,
        duration_ms: Option<u64>,
    ) -> Result<Self, ScenarioError> {
        if gaze.is_empty() {
            return Err(ScenarioError::EmptyTrace("gaze"));
        }
        if face.is_empty() {
            return Err(ScenarioError::EmptyTrace("face"));
        }
        let last = [
            transcript.last().map(|e| e.end_ms.unwrap_or(e.t_ms)),
            gaze.last_t(),
            face.last_t(),
        ]
        .into_iter()
        .flatten()
        .max()
        .unwrap_or(0);
        Ok(Self {
            name,
            config,
            transcript,
            gaze,
            face,
            duration_ms: duration_ms.unwrap_or(last),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub condition: Condition,
    pub duration_ms: u64,
    pub turns: TurnStats,
    /// Gaze inside the displayed text rectangle.
    pub reading: ReadingMetrics,
    /// Gaze inside the partner's face box.
    pub face_gaze: ReadingMetrics,
    pub shift_downs: u64,
    pub shift_ups: u64,
    pub toggles: u64,
    pub hint_requests: u64,
    pub hint_updates: u64,
    pub shift_events: Vec<ShiftLogEntry>,
    pub toggle_events: Vec<ToggleLogEntry>,
    pub hint_log: Vec<HintLogEntry>,
    pub outbound_frames: u64,
}

/// Everything a run produced, for callers that need more than the summary.
pub struct RunOutput {
    pub report: MetricsReport,
    pub ticks: Vec<TickRecord>,
    pub outbound: Vec<Message>,
    /// Engine time per tick, provider calls excluded.
    pub tick_times: Vec<Duration>,
}

fn resolve_gaze(target: GazeTarget, session: &Session, t_ms: u64) -> Option<Message> {
    let point = match target {
        GazeTarget::End => return None,
        GazeTarget::Invalid => None,
        GazeTarget::Off => Some([-10_000.0, -10_000.0]),
        GazeTarget::Point(p) => Some(p),
        GazeTarget::Text => session.text_rect().map(|r| r.center()),
        GazeTarget::Face => session.eye_point(),
        GazeTarget::Arc(n) => session
            .panel_circle()
            .map(|c| c.arc_center(n, session.config().fsm.n_arcs)),
    };
    Some(Message::Gaze {
        t: t_ms,
        x: point.map_or(0.0, |p| p[0]),
        y: point.map_or(0.0, |p| p[1]),
        valid: point.is_some(),
    })
}

fn inbound_frames(inputs: &ScenarioInputs) -> Vec<Message> {
    let mut frames: Vec<Message> = inputs
        .face
        .frames
        .iter()
        .filter_map(|(t, lm)| {
            lm.map(|lm| Message::FaceObs {
                t: *t,
                le: lm.le,
                re: lm.re,
                nb: lm.nb,
            })
        })
        .collect();
    frames.extend(transcript_frames(&inputs.transcript));
    // stable: face frames precede transcript frames at equal t
    frames.sort_by_key(Message::t);
    frames
}

fn metrics(
    gaze: &[GazeSample],
    rects: &[crate::analytics::RectSample],
) -> ReadingMetrics {
    reading_proportion(gaze, rects).unwrap_or_default()
}

/// Runs the scenario under `condition`, keeping per-tick detail.
pub fn run_detailed(
    inputs: &ScenarioInputs,
    condition: Condition,
    timed: bool,
) -> Result<RunOutput, ScenarioError> {
    let mut cfg = inputs.config.clone();
    cfg.condition = condition;
    let provider: Arc<dyn HintProvider> = Arc::new(cfg.mock_provider()?);
    let tick_ms = cfg.tick_ms;
    let mut driver = Driver::new(cfg.clone(), provider);
    let frames = inbound_frames(inputs);
    let mut next = 0;
    let mut tick_times = Vec::new();

    driver.hello(0);
    let mut t = 0;
    while t <= inputs.duration_ms {
        let started = timed.then(Instant::now);
        let provider_before = driver.provider_time();
        while next < frames.len() && frames[next].t() <= t {
            driver.deliver(frames[next].clone());
            next += 1;
        }
        if let Some(target) = inputs.gaze.target_at(t) {
            if let Some(g) = resolve_gaze(target, driver.session(), t) {
                driver.deliver(g);
            }
        }
        driver.advance(t);
        if let Some(s) = started {
            let provider = driver.provider_time() - provider_before;
            tick_times.push(s.elapsed().saturating_sub(provider));
        }
        t += tick_ms;
    }

    if let Some(Message::Error { t, code, detail }) =
        driver.outbound().iter().find(|m| matches!(m, Message::Error { .. }))
    {
        return Err(ScenarioError::Session {
            t: *t,
            code: code.clone(),
            detail: detail.clone(),
        });
    }

    let (session, outbound) = driver.into_parts();
    let ticks = session.ticks().to_vec();
    let (gaze, text_rects, face_rects) = split_ticks(&ticks);
    let normalizer = cfg.analytics.normalizer.build();
    let utterances = utterances_from_events(&inputs.transcript, normalizer.as_ref());
    let lexicon = cfg.filler_lexicon()?;
    let log = session.log().clone();
    let m = session.snapshot().metrics;
    let report = MetricsReport {
        scenario: inputs.name.clone(),
        condition,
        duration_ms: inputs.duration_ms,
        turns: TurnStats::compute(&utterances, &lexicon, &cfg.analytics.turns),
        reading: metrics(&gaze, &text_rects),
        face_gaze: metrics(&gaze, &face_rects),
        shift_downs: m.shift_downs,
        shift_ups: m.shift_ups,
        toggles: m.toggles,
        hint_requests: m.hint_requests,
        hint_updates: m.hint_updates,
        shift_events: log.shifts,
        toggle_events: log.toggles,
        hint_log: log.hints,
        outbound_frames: outbound.len() as u64,
    };
    Ok(RunOutput {
        report,
        ticks,
        outbound,
        tick_times,
    })
}

/// Parses newline-delimited protocol frames; blank and `#` lines are skipped.
pub fn parse_frames(text: &str) -> Result<Vec<Message>, String> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let msg = crate::session::decode(line.as_bytes()).map_err(|e| format!("line {}: {e}", i + 1))?;
        frames.push(msg);
    }
    Ok(frames)
}

/// Transcript events as inbound frames.
pub fn transcript_frames(events: &[TranscriptEvent]) -> Vec<Message> {
    events
        .iter()
        .map(|e| Message::Transcript {
            t: e.t_ms,
            spk: e.speaker,
            fin: e.is_final,
            loud: e.loudness,
            text: e.text.clone(),
        })
        .collect()
}

/// Feeds `frames` to a fresh session on the simulated clock, ticking every
/// `tick_ms` through the last frame time. A hello is sent first unless the
/// script starts with one.
pub fn replay_frames(
    cfg: EngineConfig,
    provider: Arc<dyn HintProvider>,
    frames: &[Message],
) -> (Session, Vec<Message>) {
    let tick_ms = cfg.tick_ms;
    let end = frames.iter().map(Message::t).max().unwrap_or(0);
    let mut driver = Driver::new(cfg, provider);
    if !matches!(frames.first(), Some(Message::Hello { .. })) {
        driver.hello(0);
    }
    let mut next = 0;
    let mut t = 0;
    loop {
        while next < frames.len() && frames[next].t() <= t {
            driver.deliver(frames[next].clone());
            next += 1;
        }
        driver.advance(t);
        if t >= end {
            break;
        }
        t += tick_ms;
    }
    driver.into_parts()
}

pub fn run(inputs: &ScenarioInputs, condition: Condition) -> Result<MetricsReport, ScenarioError> {
    run_detailed(inputs, condition, false).map(|o| o.report)
}

/// Loads and runs a scenario file under its own condition, or `condition`
/// when given.
pub fn run_scenario(
    scenario: &Scenario,
    condition: Option<Condition>,
) -> Result<MetricsReport, ScenarioError> {
    run(&scenario.inputs()?, condition.unwrap_or(scenario.condition))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsDiff {
    pub reading_proportion: f64,
    pub face_gaze_proportion: f64,
    pub shift_downs: i64,
    pub shift_ups: i64,
    pub toggles: i64,
    pub hint_updates: i64,
    pub turns_user: i64,
    pub turns_partner: i64,
    pub units_user: i64,
    pub units_partner: i64,
}

impl MetricsDiff {
    /// `a - b`, field by field.
    pub fn between(a: &MetricsReport, b: &MetricsReport) -> Self {
        let d = |x: u64, y: u64| x as i64 - y as i64;
        Self {
            reading_proportion: a.reading.proportion - b.reading.proportion,
            face_gaze_proportion: a.face_gaze.proportion - b.face_gaze.proportion,
            shift_downs: d(a.shift_downs, b.shift_downs),
            shift_ups: d(a.shift_ups, b.shift_ups),
            toggles: d(a.toggles, b.toggles),
            hint_updates: d(a.hint_updates, b.hint_updates),
            turns_user: d(a.turns.turns_user, b.turns.turns_user),
            turns_partner: d(a.turns.turns_partner, b.turns.turns_partner),
            units_user: d(a.turns.units_user, b.turns.units_user),
            units_partner: d(a.turns.units_partner, b.turns.units_partner),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub a: MetricsReport,
    pub b: MetricsReport,
    pub diff: MetricsDiff,
}

/// Runs both conditions on identical inputs.
pub fn compare(
    inputs: &ScenarioInputs,
    cond_a: Condition,
    cond_b: Condition,
) -> Result<PairReport, ScenarioError> {
    let (a, b) = crate::par::join(|| run(inputs, cond_a), || run(inputs, cond_b));
    let (a, b) = (a?, b?);
    let diff = MetricsDiff::between(&a, &b);
    Ok(PairReport { a, b, diff })
}

pub fn run_batch(
    inputs: &[ScenarioInputs],
    condition: Condition,
) -> Vec<Result<MetricsReport, ScenarioError>> {
    crate::par::map(inputs, |i| run(i, condition))
}

pub fn run_batch_seq(
    inputs: &[ScenarioInputs],
    condition: Condition,
) -> Vec<Result<MetricsReport, ScenarioError>> {
    crate::par::map_seq(inputs, |i| run(i, condition))
}
