//! Hint generation: prompt contract, request debouncing, provider response
//! parsing, stale-response suppression and timed expiry of the active bundle.

mod mock;
mod provider;

pub use mock::{MockProvider, DEFAULT_FACTS, DEFAULT_STOPWORDS};
pub use provider::{HintProvider, HttpProvider, HttpProviderConfig, ProviderError};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Maximum grapheme clusters per displayed line.
    pub grapheme_limit: usize,
    /// How long a bundle stays on screen without being replaced.
    pub persistence_ms: u64,
    /// Minimum spacing between two provider requests.
    pub min_request_gap_ms: u64,
    pub recognition_enabled: bool,
    /// Transcript span handed to the provider.
    pub window_ms: u64,
    /// Completions arriving later than this after the request are dropped.
    pub provider_timeout_ms: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            grapheme_limit: 130,
            persistence_ms: 300_000,
            min_request_gap_ms: 2000,
            recognition_enabled: true,
            window_ms: 20_000,
            provider_timeout_ms: 10_000,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.grapheme_limit < 1 {
            return Err("grapheme_limit must be >= 1".into());
        }
        if self.persistence_ms == 0 {
            return Err("persistence_ms must be > 0".into());
        }
        if self.window_ms == 0 {
            return Err("window_ms must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintRequest {
    pub seq: u64,
    pub window_text: String,
    pub issued_at_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintBundle {
    pub seq: u64,
    pub keywords: Vec<String>,
    pub lines: Vec<String>,
    pub created_at_ms: u64,
    pub expires_at_ms: u64,
}

impl HintBundle {
    /// Builds a bundle from a parsed response. Returns `None` for an empty
    /// response or for lines without any keyword.
    pub fn from_parsed(
        seq: u64,
        parsed: ParsedResponse,
        created_at_ms: u64,
        cfg: &GenConfig,
    ) -> Option<HintBundle> {
        if parsed.lines.is_empty() && parsed.keywords.is_empty() {
            return None;
        }
        if !parsed.lines.is_empty() && parsed.keywords.is_empty() {
            return None;
        }
        let lines = parsed
            .lines
            .into_iter()
            .map(|l| clip_line(&l, cfg.grapheme_limit))
            .collect();
        Some(HintBundle {
            seq,
            keywords: parsed.keywords,
            lines,
            created_at_ms,
            expires_at_ms: created_at_ms + cfg.persistence_ms,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub keywords: Vec<String>,
    pub lines: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
pub enum HintError {
    /// The response had content but no keyword section. `fallback` holds the
    /// whole text as one clipped line.
    #[error("provider response has no keyword section")]
    UnparseableResponse { fallback: ParsedResponse },
}

const SYSTEM_PROMPT_TEMPLATE: &str = "You are an AI that supports users in having smooth conversations with others. \
First, extract distinctive keywords from the input text. \
Next, Please provide a concise list of recent news and topics related to the keywords you have extracted. \
Please keep each response to {limit} characters or less. \
Please avoid overly general content. \
Also, if there is no new input, please do not delete it until {secs} seconds have passed since the previous response.";

pub fn build_prompt(cfg: &GenConfig) -> String {
    let secs = if cfg.persistence_ms.is_multiple_of(1000) {
        (cfg.persistence_ms / 1000).to_string()
    } else {
        format!("{}", cfg.persistence_ms as f64 / 1000.0)
    };
    SYSTEM_PROMPT_TEMPLATE
        .replace("{limit}", &cfg.grapheme_limit.to_string())
        .replace("{secs}", &secs)
}

/// Decides whether the current transcript window warrants a provider call.
pub fn maybe_request(
    now_ms: u64,
    window_text: &str,
    cfg: &GenConfig,
    last: Option<&HintRequest>,
) -> Option<HintRequest> {
    if !cfg.recognition_enabled || window_text.trim().is_empty() {
        return None;
    }
    let seq = match last {
        Some(prev) => {
            if prev.window_text == window_text {
                return None;
            }
            if now_ms.saturating_sub(prev.issued_at_ms) < cfg.min_request_gap_ms {
                return None;
            }
            prev.seq + 1
        }
        None => 1,
    };
    Some(HintRequest {
        seq,
        window_text: window_text.to_string(),
        issued_at_ms: now_ms,
    })
}

/// First `limit` grapheme clusters of `text`.
pub fn clip_line(text: &str, limit: usize) -> String {
    match text.grapheme_indices(true).nth(limit) {
        Some((byte_idx, _)) => text[..byte_idx].to_string(),
        None => text.to_string(),
    }
}

pub fn grapheme_count(text: &str) -> usize {
    text.graphemes(true).count()
}

fn keyword_header(line: &str) -> Option<&str> {
    const HEADERS: [&str; 4] = ["keywords", "keyword", "キーワード", "key words"];
    for h in HEADERS {
        let Some(prefix) = line.get(..h.len()) else {
            continue;
        };
        if prefix.eq_ignore_ascii_case(h) {
            let rest = line[h.len()..].trim_start();
            if let Some(r) = rest.strip_prefix(':').or_else(|| rest.strip_prefix('：')) {
                return Some(r);
            }
        }
    }
    None
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    for marker in ["- ", "* ", "• ", "・", "–", "-", "*", "•"] {
        if let Some(rest) = t.strip_prefix(marker) {
            return rest.trim();
        }
    }
    // "1. foo" / "2) foo"
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim();
        }
    }
    t
}

/// Splits provider output into keywords and clipped hint lines.
///
/// Grammar: an optional `Keywords: a, b` line (also `キーワード：`), then hint
/// lines, one per line or separated by `•` bullets, each with an optional
/// bullet marker (`-`, `*`, `•`, `・`, `1.`).
pub fn parse_provider_response(raw: &str, cfg: &GenConfig) -> Result<ParsedResponse, HintError> {
    let mut parsed = ParsedResponse::default();
    let mut saw_header = false;
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = keyword_header(line) {
            saw_header = true;
            parsed.keywords.extend(
                rest.split([',', '、', '，'])
                    .map(str::trim)
                    .filter(|k| !k.is_empty())
                    .map(String::from),
            );
            continue;
        }
        for piece in line.split(" • ") {
            let body = strip_bullet(piece);
            if !body.is_empty() {
                parsed.lines.push(clip_line(body, cfg.grapheme_limit));
            }
        }
    }
    if !saw_header && !parsed.lines.is_empty() {
        let joined = raw.split_whitespace().collect::<Vec<_>>().join(" ");
        return Err(HintError::UnparseableResponse {
            fallback: ParsedResponse {
                keywords: Vec::new(),
                lines: vec![clip_line(&joined, cfg.grapheme_limit)],
            },
        });
    }
    Ok(parsed)
}

/// The active bundle plus the bookkeeping needed to order asynchronous replies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HintState {
    pub active: Option<HintBundle>,
    /// Highest seq ever applied.
    pub highest_applied: Option<u64>,
}

impl HintState {
    /// Installs `candidate` unless a newer response has already been applied.
    /// Returns whether the active bundle changed.
    pub fn apply_response(&mut self, candidate: HintBundle) -> bool {
        if let Some(high) = self.highest_applied {
            if candidate.seq < high {
                return false;
            }
        }
        self.highest_applied = Some(candidate.seq);
        self.active = Some(candidate);
        true
    }

    /// Clears the active bundle once `now_ms` is past its expiry. Returns the
    /// cleared bundle.
    pub fn expire(&mut self, now_ms: u64) -> Option<HintBundle> {
        match &self.active {
            Some(b) if now_ms > b.expires_at_ms => self.active.take(),
            _ => None,
        }
    }
}
