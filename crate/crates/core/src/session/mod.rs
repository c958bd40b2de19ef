//! Per-session engine state and the tick loop.
//!
//! A [`Session`] is a single-writer state machine: every mutation happens in
//! [`Session::handle_inbound`], [`Session::tick`] or
//! [`Session::complete_request`], each returning the outbound messages it
//! produced. Provider calls are not made here; issued requests are queued and
//! drained by the driver with [`Session::take_requests`] and their results
//! come back through [`Session::complete_request`].

pub mod config;
pub mod protocol;
pub mod server;

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::analytics::TickRecord;
use crate::geometry::{
    apply_shift, face_plane_region, project, FaceObservation, PixelRect, TextRegion, Vec3,
    WorldFixedAnchor,
};
use crate::hintgen::{
    build_prompt, maybe_request, parse_provider_response, HintBundle, HintError, HintRequest,
    HintState, ProviderError,
};
use crate::ingest::{accumulate_window, filter_event, TranscriptEvent};
use crate::presentation::{DwellState, GazeSample, PanelCircle, PresentationState, ShiftEvent};

pub use config::{Condition, EngineConfig};
pub use protocol::{decode, encode, encode_line, Circle, DecodeError, Message, Rect, Role, PROTO_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelLayout {
    pub circle: Circle,
    pub text_rect: Rect,
    pub lowered: bool,
    pub visible: bool,
    pub ring_w: f64,
    pub n_arcs: usize,
}

impl PanelLayout {
    fn to_message(self, t: u64) -> Message {
        Message::LayoutUpdate {
            t,
            circle: self.circle,
            text_rect: self.text_rect,
            lowered: self.lowered,
            visible: self.visible,
            ring_w: self.ring_w,
            n_arcs: self.n_arcs,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub ticks: u64,
    pub total_ms: u64,
    pub text_gaze_ms: u64,
    pub face_gaze_ms: u64,
    pub shift_downs: u64,
    pub shift_ups: u64,
    pub toggles: u64,
    pub hint_requests: u64,
    pub hint_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_now_ms: u64,
    pub condition: Condition,
    pub panel: Option<PanelLayout>,
    pub active_hints: Option<HintBundle>,
    pub recognition_enabled: bool,
    pub metrics: MetricsSnapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftLogEntry {
    pub t_ms: u64,
    pub kind: ShiftEvent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToggleLogEntry {
    pub t_ms: u64,
    pub enabled: bool,
    pub arc: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintOutcome {
    Pending,
    Applied,
    Stale,
    Empty,
    Unparseable,
    TimedOut,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintLogEntry {
    pub seq: u64,
    pub requested_at_ms: u64,
    pub completed_at_ms: Option<u64>,
    pub latency_ms: Option<u64>,
    pub outcome: HintOutcome,
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub shifts: Vec<ShiftLogEntry>,
    pub toggles: Vec<ToggleLogEntry>,
    pub hints: Vec<HintLogEntry>,
    /// Times of every hint_update sent, including clears.
    pub hint_updates: Vec<u64>,
}

/// What a finished session leaves behind for `--metrics-out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub snapshot: SessionSnapshot,
    pub log: SessionLog,
}

pub struct Session {
    cfg: EngineConfig,
    condition: Condition,
    now_ms: u64,
    started: bool,
    recognition_enabled: bool,
    system_prompt: String,

    last_transcript_ms: Option<u64>,
    window_events: VecDeque<TranscriptEvent>,
    window_dirty: bool,

    hints: HintState,
    last_request: Option<HintRequest>,
    pending: Vec<HintRequest>,
    hint_index: BTreeMap<u64, usize>,

    face_region: Option<TextRegion>,
    face_seen_ms: Option<u64>,
    fixed: WorldFixedAnchor,

    presentation: PresentationState,
    dwell: DwellState,
    last_dwell_progress: Option<(usize, u32)>,
    last_gaze: Option<GazeSample>,

    last_layout: Option<PanelLayout>,
    last_tick_ms: Option<u64>,

    log: SessionLog,
    metrics: MetricsSnapshot,
    record_ticks: bool,
    ticks: Vec<TickRecord>,
}

impl Session {
    pub fn new(cfg: EngineConfig) -> Self {
        let condition = cfg.condition;
        let recognition_enabled = cfg.gen.recognition_enabled;
        let system_prompt = build_prompt(&cfg.gen);
        Self {
            cfg,
            condition,
            now_ms: 0,
            started: false,
            recognition_enabled,
            system_prompt,
            last_transcript_ms: None,
            window_events: VecDeque::new(),
            window_dirty: false,
            hints: HintState::default(),
            last_request: None,
            pending: Vec::new(),
            hint_index: BTreeMap::new(),
            face_region: None,
            face_seen_ms: None,
            fixed: WorldFixedAnchor::default(),
            presentation: PresentationState::default(),
            dwell: DwellState::default(),
            last_dwell_progress: None,
            last_gaze: None,
            last_layout: None,
            last_tick_ms: None,
            log: SessionLog::default(),
            metrics: MetricsSnapshot::default(),
            record_ticks: false,
            ticks: Vec::new(),
        }
    }

    /// Keep a per-tick gaze/region record (used by the replay harness).
    pub fn with_tick_recording(mut self, on: bool) -> Self {
        self.record_ticks = on;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn condition(&self) -> Condition {
        self.condition
    }

    pub fn recognition_enabled(&self) -> bool {
        self.recognition_enabled
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn active_hints(&self) -> Option<&HintBundle> {
        self.hints.active.as_ref()
    }

    pub fn presentation(&self) -> &PresentationState {
        &self.presentation
    }

    pub fn dwell(&self) -> &DwellState {
        &self.dwell
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn ticks(&self) -> &[TickRecord] {
        &self.ticks
    }

    pub fn take_requests(&mut self) -> Vec<HintRequest> {
        std::mem::take(&mut self.pending)
    }

    fn advance(&mut self, t: u64) {
        self.now_ms = self.now_ms.max(t);
    }

    fn face_tracked_region(&self) -> Option<TextRegion> {
        let seen = self.face_seen_ms?;
        if self.now_ms.saturating_sub(seen) > self.cfg.geometry.hold_ms {
            return None;
        }
        self.face_region
    }

    /// Region currently displayed for the active condition.
    pub fn display_region(&self) -> Option<TextRegion> {
        match self.condition {
            Condition::FaceAnchored => self
                .face_tracked_region()
                .map(|r| apply_shift(&r, self.presentation.is_lowered(), &self.cfg.geometry)),
            Condition::WorldFixed => self.fixed.region(),
        }
    }

    pub fn text_rect(&self) -> Option<PixelRect> {
        project(&self.display_region()?, &self.cfg.camera).ok()
    }

    /// Projected partner face: the unshifted text region plus a margin.
    pub fn face_rect(&self) -> Option<PixelRect> {
        let r = self.face_tracked_region()?;
        project(&r.expanded(self.cfg.geometry.face_margin_mm), &self.cfg.camera).ok()
    }

    /// Projected midpoint of the partner's eyes.
    pub fn eye_point(&self) -> Option<[f64; 2]> {
        self.cfg.camera.project_point(self.face_tracked_region()?.origin)
    }

    fn layout_for(&self, rect: PixelRect) -> PanelLayout {
        let p = &self.cfg.panel;
        let [cx, cy] = rect.center();
        let r = (0.5 * rect.w.hypot(rect.h) + p.padding_px + p.ring_width_px).max(p.min_radius_px);
        PanelLayout {
            circle: Circle { cx, cy, r },
            text_rect: rect.into(),
            lowered: self.condition == Condition::FaceAnchored && self.presentation.is_lowered(),
            visible: true,
            ring_w: p.ring_width_px,
            n_arcs: self.cfg.fsm.n_arcs,
        }
    }

    pub fn panel_layout(&self) -> Option<PanelLayout> {
        self.text_rect().map(|r| self.layout_for(r))
    }

    pub fn panel_circle(&self) -> Option<PanelCircle> {
        let l = self.panel_layout()?;
        Some(PanelCircle {
            cx: l.circle.cx,
            cy: l.circle.cy,
            inner_radius: (l.circle.r - l.ring_w).max(0.0),
            outer_radius: l.circle.r,
        })
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            session_now_ms: self.now_ms,
            condition: self.condition,
            panel: self.panel_layout(),
            active_hints: self.hints.active.clone(),
            recognition_enabled: self.recognition_enabled,
            metrics: self.metrics.clone(),
        }
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            snapshot: self.snapshot(),
            log: self.log.clone(),
        }
    }

    fn snapshot_message(&self) -> Message {
        Message::Snapshot {
            t: self.now_ms,
            snapshot: Box::new(self.snapshot()),
        }
    }

    pub fn handle_inbound(&mut self, msg: Message) -> Vec<Message> {
        if !msg.is_inbound() {
            return vec![Message::error(
                self.now_ms,
                "unexpected_type",
                format!("{} is an outbound message", msg.type_name()),
            )];
        }
        if let Message::Hello { t, proto_version, .. } = msg {
            if proto_version != PROTO_VERSION {
                return vec![Message::error(
                    self.now_ms,
                    "proto_version",
                    format!("expected protocol {PROTO_VERSION}, got {proto_version}"),
                )];
            }
            self.started = true;
            self.advance(t);
            return vec![self.snapshot_message()];
        }
        if !self.started {
            return vec![Message::error(self.now_ms, "no_handshake", "send hello first")];
        }
        self.advance(msg.t());
        match msg {
            Message::FaceObs { t, le, re, nb } => self.on_face(t, le, re, nb),
            Message::Gaze { x, y, valid, .. } => self.on_gaze([x, y], valid),
            Message::Transcript {
                t,
                spk,
                fin,
                loud,
                text,
            } => self.on_transcript(TranscriptEvent {
                t_ms: t,
                speaker: spk,
                text,
                is_final: fin,
                loudness: loud,
                end_ms: None,
            }),
            Message::SetCondition { cond, .. } => {
                if cond != self.condition {
                    self.condition = cond;
                    self.presentation = PresentationState::default();
                }
                Vec::new()
            }
            Message::SnapshotRequest { .. } => vec![self.snapshot_message()],
            _ => unreachable!("outbound types rejected above"),
        }
    }

    fn on_face(&mut self, t: u64, le: [f64; 3], re: [f64; 3], nb: [f64; 3]) -> Vec<Message> {
        let obs = FaceObservation {
            t_ms: t,
            left_eye_outer: Vec3::from_array(le),
            right_eye_outer: Vec3::from_array(re),
            nose_base: Vec3::from_array(nb),
        };
        match face_plane_region(&obs, &self.cfg.geometry) {
            Ok(region) => {
                self.face_region = Some(region);
                self.face_seen_ms = Some(self.now_ms);
                // cannot fail: same landmarks just passed face_plane_region
                let _ = self.fixed.observe(&obs, &self.cfg.geometry);
                Vec::new()
            }
            Err(e) => vec![Message::error(self.now_ms, "degenerate_face", e.to_string())],
        }
    }

    fn on_gaze(&mut self, point: [f64; 2], valid: bool) -> Vec<Message> {
        let sample = GazeSample {
            t_ms: self.now_ms,
            point_px: point,
            valid: valid && point[0].is_finite() && point[1].is_finite(),
        };
        self.last_gaze = Some(sample);
        let face = self.face_rect();
        self.presentation.fixation_update(&sample, face.as_ref(), &self.cfg.fsm);
        let panel = self.panel_circle();
        let mut out = Vec::new();
        if let Some(toggle) = self.dwell.dwell_update(&sample, panel.as_ref(), &self.cfg.fsm) {
            self.recognition_enabled = !self.recognition_enabled;
            if !self.recognition_enabled {
                self.window_dirty = false;
            }
            self.metrics.toggles += 1;
            self.log.toggles.push(ToggleLogEntry {
                t_ms: self.now_ms,
                enabled: self.recognition_enabled,
                arc: toggle.arc,
            });
            out.push(Message::ToggleState {
                t: self.now_ms,
                enabled: self.recognition_enabled,
            });
        }
        self.push_dwell_progress(&mut out);
        out
    }

    fn push_dwell_progress(&mut self, out: &mut Vec<Message>) {
        let progress = self.dwell.progress(&self.cfg.fsm);
        let key = progress.map(|(arc, frac)| (arc, (frac * 20.0).floor() as u32));
        if key == self.last_dwell_progress {
            return;
        }
        self.last_dwell_progress = key;
        out.push(Message::DwellProgress {
            t: self.now_ms,
            arc: progress.map(|p| p.0),
            frac: progress.map_or(0.0, |p| p.1),
        });
    }

    fn on_transcript(&mut self, ev: TranscriptEvent) -> Vec<Message> {
        if let Some(last) = self.last_transcript_ms {
            if ev.t_ms < last {
                return vec![Message::error(
                    self.now_ms,
                    "out_of_order",
                    format!("transcript t {} before previous {}", ev.t_ms, last),
                )];
            }
        }
        if ev.is_final && ev.text.trim().is_empty() {
            return vec![Message::error(self.now_ms, "empty_final", "final transcript with empty text")];
        }
        self.last_transcript_ms = Some(ev.t_ms);
        let Some(ev) = filter_event(ev, &self.cfg.ingest) else {
            return Vec::new();
        };
        // partial hypotheses never reach the generation window
        if !ev.is_final || !self.recognition_enabled {
            return Vec::new();
        }
        self.window_events.push_back(ev);
        self.window_dirty = true;
        self.try_request();
        Vec::new()
    }

    fn try_request(&mut self) {
        if !self.window_dirty {
            return;
        }
        let now = self.now_ms;
        let horizon = now.saturating_sub(self.cfg.gen.window_ms);
        while self.window_events.front().is_some_and(|e| e.t_ms < horizon) {
            self.window_events.pop_front();
        }
        let events: Vec<TranscriptEvent> = self.window_events.iter().cloned().collect();
        let window = accumulate_window(&events, self.cfg.gen.window_ms, now);
        let mut gen = self.cfg.gen.clone();
        gen.recognition_enabled = self.recognition_enabled;
        match maybe_request(now, &window, &gen, self.last_request.as_ref()) {
            Some(req) => {
                self.window_dirty = false;
                self.metrics.hint_requests += 1;
                self.hint_index.insert(req.seq, self.log.hints.len());
                self.log.hints.push(HintLogEntry {
                    seq: req.seq,
                    requested_at_ms: now,
                    completed_at_ms: None,
                    latency_ms: None,
                    outcome: HintOutcome::Pending,
                    keywords: Vec::new(),
                });
                self.last_request = Some(req.clone());
                self.pending.push(req);
            }
            None => {
                // keep waiting only when the request gap is what held us back
                let blocked_by_gap = self.recognition_enabled
                    && !window.trim().is_empty()
                    && self.last_request.as_ref().is_some_and(|r| r.window_text != window);
                if !blocked_by_gap {
                    self.window_dirty = false;
                }
            }
        }
    }

    /// Delivers a provider completion for request `seq`.
    pub fn complete_request(
        &mut self,
        now_ms: u64,
        seq: u64,
        result: Result<String, ProviderError>,
    ) -> Vec<Message> {
        self.advance(now_ms);
        let now = self.now_ms;
        let Some(&idx) = self.hint_index.get(&seq) else {
            return Vec::new();
        };
        let requested_at = self.log.hints[idx].requested_at_ms;
        let latency = now.saturating_sub(requested_at);
        let gen = &self.cfg.gen;
        let mut keywords = Vec::new();
        let mut out = Vec::new();
        let outcome = if latency > gen.provider_timeout_ms {
            HintOutcome::TimedOut
        } else {
            match result {
                Err(ProviderError::Timeout) => HintOutcome::TimedOut,
                Err(e) => HintOutcome::Failed(e.to_string()),
                Ok(raw) => match parse_provider_response(&raw, gen) {
                    Err(HintError::UnparseableResponse { .. }) => HintOutcome::Unparseable,
                    Ok(parsed) => match HintBundle::from_parsed(seq, parsed, now, gen) {
                        None => HintOutcome::Empty,
                        Some(bundle) => {
                            keywords = bundle.keywords.clone();
                            if self.hints.apply_response(bundle.clone()) {
                                self.metrics.hint_updates += 1;
                                self.log.hint_updates.push(now);
                                out.push(Message::HintUpdate {
                                    t: now,
                                    seq,
                                    keywords: bundle.keywords,
                                    lines: bundle.lines,
                                    expires_at: Some(bundle.expires_at_ms),
                                });
                                HintOutcome::Applied
                            } else {
                                HintOutcome::Stale
                            }
                        }
                    },
                },
            }
        };
        let entry = &mut self.log.hints[idx];
        entry.completed_at_ms = Some(now);
        entry.latency_ms = Some(latency);
        entry.outcome = outcome;
        entry.keywords = keywords;
        out
    }

    /// Advances timers to `now_ms` and returns the resulting deltas.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Message> {
        if !self.started {
            return Vec::new();
        }
        self.advance(now_ms);
        let now = self.now_ms;
        let mut out = Vec::new();

        if self.condition == Condition::FaceAnchored {
            if let Some(ev) = self.presentation.step(now, &self.cfg.fsm) {
                self.log.shifts.push(ShiftLogEntry { t_ms: now, kind: ev });
                match ev {
                    ShiftEvent::ShiftDown => {
                        self.metrics.shift_downs += 1;
                        out.push(Message::ShiftDown { t: now });
                    }
                    ShiftEvent::ShiftUp => {
                        self.metrics.shift_ups += 1;
                        out.push(Message::ShiftUp { t: now });
                    }
                }
            }
        }

        self.dwell.expire(now, &self.cfg.fsm);
        self.push_dwell_progress(&mut out);

        if let Some(cleared) = self.hints.expire(now) {
            self.metrics.hint_updates += 1;
            self.log.hint_updates.push(now);
            out.push(Message::HintUpdate {
                t: now,
                seq: cleared.seq,
                keywords: Vec::new(),
                lines: Vec::new(),
                expires_at: None,
            });
        }

        self.try_request();

        match (self.panel_layout(), self.last_layout) {
            (Some(layout), last) if last != Some(layout) => {
                out.push(layout.to_message(now));
                self.last_layout = Some(layout);
            }
            (None, Some(last)) if last.visible => {
                let hidden = PanelLayout {
                    visible: false,
                    ..last
                };
                out.push(hidden.to_message(now));
                self.last_layout = Some(hidden);
            }
            _ => {}
        }

        self.record_tick(now);
        out
    }

    fn record_tick(&mut self, now: u64) {
        let text_rect = self.text_rect();
        let face_rect = self.face_rect();
        let gaze = self.last_gaze.map(|g| GazeSample { t_ms: now, ..g });
        if let Some(prev) = self.last_tick_ms {
            let dt = now.saturating_sub(prev);
            self.metrics.total_ms += dt;
            if let Some(g) = gaze.filter(|g| g.valid) {
                if text_rect.is_some_and(|r| r.contains(g.point_px)) {
                    self.metrics.text_gaze_ms += dt;
                }
                if face_rect.is_some_and(|r| r.contains(g.point_px)) {
                    self.metrics.face_gaze_ms += dt;
                }
            }
        }
        self.metrics.ticks += 1;
        self.last_tick_ms = Some(now);
        if self.record_ticks {
            self.ticks.push(TickRecord {
                t_ms: now,
                gaze,
                text_rect,
                face_rect,
                lowered: self.condition == Condition::FaceAnchored && self.presentation.is_lowered(),
            });
        }
    }
}
