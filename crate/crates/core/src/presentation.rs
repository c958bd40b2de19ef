//! Gaze-contingent presentation control.
//!
//! Two independent trackers run on the gaze stream:
//!
//! * fixation on the partner's face drives the Anchored/Lowered cycle: after
//!   `fixation_threshold_ms` of fixation the text moves down, and it comes back
//!   `return_after_ms` later;
//! * dwell on one of the arc buttons around the panel toggles recognition once
//!   the dwell exceeds `dwell_threshold_ms`.
//!
//! Only time between two consecutive on-target samples is accumulated. An
//! excursion off target no longer than `gap_tolerance_ms` (measured from the
//! last on-target sample) is forgiven but not counted; a longer one resets.

use serde::{Deserialize, Serialize};

use crate::geometry::PixelRect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FsmConfig {
    pub fixation_threshold_ms: u64,
    pub return_after_ms: u64,
    pub dwell_threshold_ms: u64,
    pub gap_tolerance_ms: u64,
    pub n_arcs: usize,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self {
            fixation_threshold_ms: 5000,
            return_after_ms: 3000,
            dwell_threshold_ms: 1000,
            gap_tolerance_ms: 150,
            n_arcs: 8,
        }
    }
}

impl FsmConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.fixation_threshold_ms == 0
            || self.return_after_ms == 0
            || self.dwell_threshold_ms == 0
            || self.gap_tolerance_ms == 0
        {
            return Err("all fsm durations must be > 0".into());
        }
        if self.n_arcs == 0 {
            return Err("n_arcs must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: u64,
    pub point_px: [f64; 2],
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Anchored,
    Lowered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftEvent {
    ShiftDown,
    ShiftUp,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PresentationState {
    pub mode: Mode,
    pub fixation_accum_ms: u64,
    pub lowered_since_ms: Option<u64>,
    /// First off-face sample of the current excursion.
    pub last_gap_start_ms: Option<u64>,
    last_on_face_ms: Option<u64>,
    prev_on_face: bool,
}

impl PresentationState {
    fn forget_fixation(&mut self) {
        self.fixation_accum_ms = 0;
        self.last_on_face_ms = None;
        self.last_gap_start_ms = None;
        self.prev_on_face = false;
    }

    pub fn fixation_update(&mut self, sample: &GazeSample, face_rect: Option<&PixelRect>, cfg: &FsmConfig) {
        if self.mode == Mode::Lowered {
            // suspended while the user reads the lowered text
            self.forget_fixation();
            return;
        }
        let t = sample.t_ms;
        let on_face = sample.valid && face_rect.is_some_and(|r| r.contains(sample.point_px));
        if on_face {
            if let Some(last) = self.last_on_face_ms {
                let dt = t.saturating_sub(last);
                if self.prev_on_face {
                    self.fixation_accum_ms += dt;
                } else if dt > cfg.gap_tolerance_ms {
                    self.fixation_accum_ms = 0;
                }
            }
            self.last_on_face_ms = Some(t);
            self.last_gap_start_ms = None;
            self.prev_on_face = true;
        } else {
            if self.prev_on_face {
                self.last_gap_start_ms = Some(t);
            }
            self.prev_on_face = false;
            self.expire_gap(t, cfg);
        }
        self.fixation_accum_ms = self.fixation_accum_ms.min(cfg.fixation_threshold_ms);
    }

    fn expire_gap(&mut self, now_ms: u64, cfg: &FsmConfig) {
        if self.prev_on_face {
            return;
        }
        if let Some(last) = self.last_on_face_ms {
            if now_ms.saturating_sub(last) > cfg.gap_tolerance_ms {
                self.forget_fixation();
            }
        }
    }

    /// Advances the mode at a clock tick.
    pub fn step(&mut self, now_ms: u64, cfg: &FsmConfig) -> Option<ShiftEvent> {
        match self.mode {
            Mode::Anchored => {
                self.expire_gap(now_ms, cfg);
                if self.fixation_accum_ms >= cfg.fixation_threshold_ms {
                    self.mode = Mode::Lowered;
                    self.lowered_since_ms = Some(now_ms);
                    self.forget_fixation();
                    return Some(ShiftEvent::ShiftDown);
                }
                None
            }
            Mode::Lowered => {
                let since = self.lowered_since_ms.unwrap_or(now_ms);
                if now_ms.saturating_sub(since) >= cfg.return_after_ms {
                    self.mode = Mode::Anchored;
                    self.lowered_since_ms = None;
                    self.forget_fixation();
                    return Some(ShiftEvent::ShiftUp);
                }
                None
            }
        }
    }

    pub fn is_lowered(&self) -> bool {
        self.mode == Mode::Lowered
    }
}

/// Panel circle and the annulus holding the arc buttons, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanelCircle {
    pub cx: f64,
    pub cy: f64,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl PanelCircle {
    /// Display point at the angular middle of `arc`, halfway across the ring.
    pub fn arc_center(&self, arc: usize, n_arcs: usize) -> [f64; 2] {
        let sector = std::f64::consts::TAU / n_arcs as f64;
        let angle = sector * (arc as f64 + 0.5);
        let r = (self.inner_radius + self.outer_radius) / 2.0;
        [self.cx + r * angle.sin(), self.cy - r * angle.cos()]
    }
}

/// Arc index under `point`: sectors of equal angle, index 0 starting at
/// 12 o'clock and increasing clockwise on screen.
pub fn hit_test_arc(point: [f64; 2], panel: &PanelCircle, n_arcs: usize) -> Option<usize> {
    if n_arcs == 0 {
        return None;
    }
    let dx = point[0] - panel.cx;
    let dy = point[1] - panel.cy;
    let dist = dx.hypot(dy);
    if !(dist >= panel.inner_radius && dist <= panel.outer_radius) {
        return None;
    }
    let mut deg = dx.atan2(-dy).to_degrees();
    if deg < 0.0 {
        deg += 360.0;
    }
    let idx = (deg / (360.0 / n_arcs as f64)).floor() as usize;
    Some(idx.min(n_arcs - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToggleEvent {
    pub t_ms: u64,
    pub arc: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DwellState {
    pub active_arc: Option<usize>,
    pub dwell_accum_ms: u64,
    pub toggle_count: u64,
    last_on_arc_ms: Option<u64>,
    prev_on_arc: bool,
}

impl DwellState {
    fn clear(&mut self) {
        self.active_arc = None;
        self.dwell_accum_ms = 0;
        self.last_on_arc_ms = None;
        self.prev_on_arc = false;
    }

    pub fn dwell_update(
        &mut self,
        sample: &GazeSample,
        panel: Option<&PanelCircle>,
        cfg: &FsmConfig,
    ) -> Option<ToggleEvent> {
        let t = sample.t_ms;
        let arc = if sample.valid {
            panel.and_then(|p| hit_test_arc(sample.point_px, p, cfg.n_arcs))
        } else {
            None
        };
        let Some(arc) = arc else {
            self.prev_on_arc = false;
            self.expire(t, cfg);
            return None;
        };
        if self.active_arc == Some(arc) {
            if let Some(last) = self.last_on_arc_ms {
                let dt = t.saturating_sub(last);
                if self.prev_on_arc {
                    self.dwell_accum_ms += dt;
                } else if dt > cfg.gap_tolerance_ms {
                    self.dwell_accum_ms = 0;
                }
            }
        } else {
            self.active_arc = Some(arc);
            self.dwell_accum_ms = 0;
        }
        self.last_on_arc_ms = Some(t);
        self.prev_on_arc = true;
        if self.dwell_accum_ms > cfg.dwell_threshold_ms {
            self.dwell_accum_ms = 0;
            self.toggle_count += 1;
            return Some(ToggleEvent { t_ms: t, arc });
        }
        None
    }

    /// Drops the dwell once gaze has been off every arc for longer than the
    /// gap tolerance.
    pub fn expire(&mut self, now_ms: u64, cfg: &FsmConfig) {
        if self.prev_on_arc {
            return;
        }
        match self.last_on_arc_ms {
            Some(last) if now_ms.saturating_sub(last) > cfg.gap_tolerance_ms => self.clear(),
            None if self.active_arc.is_some() => self.clear(),
            _ => {}
        }
    }

    /// Active arc and fill fraction in `[0, 1]`.
    pub fn progress(&self, cfg: &FsmConfig) -> Option<(usize, f64)> {
        self.active_arc.map(|a| {
            let frac = self.dwell_accum_ms as f64 / cfg.dwell_threshold_ms as f64;
            (a, frac.min(1.0))
        })
    }
}
