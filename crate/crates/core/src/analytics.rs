//! Conversation and gaze measures: speech amount in phonetic units,
//! turn-taking counts that ignore fillers and echoes, and the share of time
//! the user's gaze sat inside a (possibly moving) rectangle.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::geometry::PixelRect;
use crate::ingest::{Speaker, TranscriptEvent};
use crate::presentation::GazeSample;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("trace is empty or spans no time")]
    EmptyTrace,
    #[error("gaze and rectangle traces differ at index {0}")]
    TraceMismatch(usize),
}

/// Splits text into smallest phonetic units.
pub trait PhoneticNormalizer: Send + Sync {
    fn units(&self, text: &str) -> Vec<String>;
}

fn is_spoken(grapheme: &str) -> bool {
    grapheme.chars().any(char::is_alphanumeric)
}

/// One unit per grapheme cluster; whitespace and punctuation are not units.
#[derive(Debug, Clone, Copy, Default)]
pub struct GraphemeNormalizer;

impl PhoneticNormalizer for GraphemeNormalizer {
    fn units(&self, text: &str) -> Vec<String> {
        text.graphemes(true)
            .filter(|g| is_spoken(g))
            .map(String::from)
            .collect()
    }
}

/// One unit per kana. Katakana is folded to hiragana. Small ゃゅょぁぃぅぇぉゎ
/// attach to the preceding kana; っ and the long-vowel mark ー are units of
/// their own. Other spoken graphemes (kanji, latin) count one unit each.
#[derive(Debug, Clone, Copy, Default)]
pub struct KanaNormalizer;

const ATTACHING_SMALL_KANA: &[char] = &['ゃ', 'ゅ', 'ょ', 'ぁ', 'ぃ', 'ぅ', 'ぇ', 'ぉ', 'ゎ'];

fn to_hiragana(c: char) -> char {
    match c {
        '\u{30A1}'..='\u{30F6}' => char::from_u32(c as u32 - 0x60).unwrap_or(c),
        _ => c,
    }
}

fn is_hiragana(c: char) -> bool {
    ('\u{3041}'..='\u{3096}').contains(&c)
}

impl PhoneticNormalizer for KanaNormalizer {
    fn units(&self, text: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut prev_is_kana = false;
        for g in text.graphemes(true) {
            if !is_spoken(g) {
                prev_is_kana = false;
                continue;
            }
            let unit: String = g.chars().map(to_hiragana).collect();
            let first = unit.chars().next().unwrap_or(' ');
            if ATTACHING_SMALL_KANA.contains(&first) && prev_is_kana {
                if let Some(last) = out.last_mut() {
                    last.push_str(&unit);
                    continue;
                }
            }
            prev_is_kana = is_hiragana(first);
            out.push(unit);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizerKind {
    #[default]
    Grapheme,
    Kana,
}

impl NormalizerKind {
    pub fn build(self) -> Box<dyn PhoneticNormalizer> {
        match self {
            NormalizerKind::Grapheme => Box::new(GraphemeNormalizer),
            NormalizerKind::Kana => Box::new(KanaNormalizer),
        }
    }
}

pub fn normalize(text: &str, normalizer: &dyn PhoneticNormalizer) -> Vec<String> {
    normalizer.units(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
    pub normalized_units: Vec<String>,
}

impl Utterance {
    pub fn new(
        speaker: Speaker,
        start_ms: u64,
        end_ms: u64,
        text: impl Into<String>,
        normalizer: &dyn PhoneticNormalizer,
    ) -> Self {
        let text = text.into();
        let normalized_units = normalizer.units(&text);
        Self {
            speaker,
            start_ms,
            end_ms: end_ms.max(start_ms),
            text,
            normalized_units,
        }
    }
}

/// Final transcript events as utterances, in stream order.
pub fn utterances_from_events(
    events: &[TranscriptEvent],
    normalizer: &dyn PhoneticNormalizer,
) -> Vec<Utterance> {
    events
        .iter()
        .filter(|e| e.is_final)
        .map(|e| Utterance::new(e.speaker, e.t_ms, e.end_ms.unwrap_or(e.t_ms), e.text.clone(), normalizer))
        .collect()
}

pub const DEFAULT_FILLERS: &[&str] = &[
    // English
    "uh", "um", "uh-huh", "mm", "mhm", "hmm", "er", "ah", "oh", "huh", "yeah", "yep", "okay", "ok",
    "right", "wow", "i see",
    // Japanese
    "え", "えー", "ええ", "えっと", "あの", "あのー", "その", "うん", "うーん", "はい", "へー", "へえ",
    "ああ", "あー", "まあ", "なるほど", "そうですね", "そっか",
];

/// Token set of utterances that count as pure filler.
#[derive(Debug, Clone, PartialEq)]
pub struct FillerLexicon {
    words: BTreeSet<String>,
}

impl Default for FillerLexicon {
    fn default() -> Self {
        Self::new(DEFAULT_FILLERS.iter().copied())
    }
}

impl FillerLexicon {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for w in words {
            // multi-word entries contribute each token
            for t in tokenize(w) {
                set.insert(t);
            }
        }
        Self { words: set }
    }

    /// One filler per line; `#` starts a comment line.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }
}

/// Lowercased word tokens with surrounding punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| {
        c.is_whitespace() || matches!(c, '、' | '。' | ',' | '，' | '!' | '?' | '！' | '？' | '…')
    })
    .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
    .filter(|t| !t.is_empty())
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TurnConfig {
    pub exclude_fillers: bool,
    pub exclude_repetitions: bool,
}

impl Default for TurnConfig {
    fn default() -> Self {
        Self {
            exclude_fillers: true,
            exclude_repetitions: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnCounts {
    pub user: u64,
    pub partner: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechAmount {
    pub user: u64,
    pub partner: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnStats {
    pub units_user: u64,
    pub units_partner: u64,
    pub turns_user: u64,
    pub turns_partner: u64,
}

impl TurnStats {
    pub fn compute(
        utterances: &[Utterance],
        lexicon: &FillerLexicon,
        cfg: &TurnConfig,
    ) -> TurnStats {
        let amount = speech_amount(utterances);
        let turns = count_turns(utterances, lexicon, cfg);
        TurnStats {
            units_user: amount.user,
            units_partner: amount.partner,
            turns_user: turns.user,
            turns_partner: turns.partner,
        }
    }
}

fn multiset(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn is_sub_multiset(small: &[String], big: &[String]) -> bool {
    let big = multiset(big);
    multiset(small)
        .into_iter()
        .all(|(tok, n)| big.get(tok).is_some_and(|m| *m >= n))
}

/// Counts turns. An utterance does not qualify when all its tokens are
/// fillers, or when its tokens are a sub-multiset of the other speaker's most
/// recent qualifying utterance (an echo). A qualifying utterance starts a
/// turn when the previous qualifying utterance came from the other speaker,
/// or when it is the first one.
pub fn count_turns(utterances: &[Utterance], lexicon: &FillerLexicon, cfg: &TurnConfig) -> TurnCounts {
    let mut counts = TurnCounts::default();
    let mut last_turn: Option<Speaker> = None;
    let mut last_qualifying: [Option<Vec<String>>; 2] = [None, None];
    let slot = |s: Speaker| match s {
        Speaker::User => 0,
        Speaker::Partner => 1,
    };
    for u in utterances {
        let tokens = tokenize(&u.text);
        if tokens.is_empty() {
            continue;
        }
        if cfg.exclude_fillers && tokens.iter().all(|t| lexicon.contains(t)) {
            continue;
        }
        if cfg.exclude_repetitions {
            if let Some(prev) = &last_qualifying[slot(u.speaker.other())] {
                if is_sub_multiset(&tokens, prev) {
                    continue;
                }
            }
        }
        if last_turn != Some(u.speaker) {
            match u.speaker {
                Speaker::User => counts.user += 1,
                Speaker::Partner => counts.partner += 1,
            }
            last_turn = Some(u.speaker);
        }
        last_qualifying[slot(u.speaker)] = Some(tokens);
    }
    counts
}

/// Per-speaker sum of normalized units. Fillers are included.
pub fn speech_amount(utterances: &[Utterance]) -> SpeechAmount {
    let mut amount = SpeechAmount::default();
    for u in utterances {
        let n = u.normalized_units.len() as u64;
        match u.speaker {
            Speaker::User => amount.user += n,
            Speaker::Partner => amount.partner += n,
        }
    }
    amount
}

/// Turn statistics for many conversations at once.
pub fn turn_stats_batch(
    conversations: &[Vec<Utterance>],
    lexicon: &FillerLexicon,
    cfg: &TurnConfig,
) -> Vec<TurnStats> {
    crate::par::map(conversations, |c| TurnStats::compute(c, lexicon, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectSample {
    pub t_ms: u64,
    pub rect: Option<PixelRect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ReadingMetrics {
    pub total_ms: u64,
    pub in_region_ms: u64,
    pub proportion: f64,
}

/// Time share of gaze inside the rectangle active at each sample.
///
/// Each sample stands for the interval up to the next sample; the last one
/// reuses the preceding interval.
pub fn reading_proportion(
    gaze: &[GazeSample],
    rects: &[RectSample],
) -> Result<ReadingMetrics, AnalyticsError> {
    if gaze.len() < 2 {
        return Err(AnalyticsError::EmptyTrace);
    }
    if gaze.len() != rects.len() {
        return Err(AnalyticsError::TraceMismatch(gaze.len().min(rects.len())));
    }
    let mut total = 0u64;
    let mut inside = 0u64;
    for i in 0..gaze.len() {
        if gaze[i].t_ms != rects[i].t_ms {
            return Err(AnalyticsError::TraceMismatch(i));
        }
        let weight = if i + 1 < gaze.len() {
            gaze[i + 1].t_ms.saturating_sub(gaze[i].t_ms)
        } else {
            gaze[i].t_ms.saturating_sub(gaze[i - 1].t_ms)
        };
        total += weight;
        let g = &gaze[i];
        if g.valid && rects[i].rect.is_some_and(|r| r.contains(g.point_px)) {
            inside += weight;
        }
    }
    if total == 0 {
        return Err(AnalyticsError::EmptyTrace);
    }
    Ok(ReadingMetrics {
        total_ms: total,
        in_region_ms: inside,
        proportion: inside as f64 / total as f64,
    })
}

/// One row of the per-tick gaze/region table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t_ms: u64,
    pub gaze: Option<GazeSample>,
    pub text_rect: Option<PixelRect>,
    pub face_rect: Option<PixelRect>,
    pub lowered: bool,
}

impl TickRecord {
    fn gaze_or_invalid(&self) -> GazeSample {
        self.gaze.unwrap_or(GazeSample {
            t_ms: self.t_ms,
            point_px: [0.0, 0.0],
            valid: false,
        })
    }
}

pub fn split_ticks(ticks: &[TickRecord]) -> (Vec<GazeSample>, Vec<RectSample>, Vec<RectSample>) {
    let gaze = ticks
        .iter()
        .map(|t| GazeSample {
            t_ms: t.t_ms,
            ..t.gaze_or_invalid()
        })
        .collect();
    let text = ticks
        .iter()
        .map(|t| RectSample {
            t_ms: t.t_ms,
            rect: t.text_rect,
        })
        .collect();
    let face = ticks
        .iter()
        .map(|t| RectSample {
            t_ms: t.t_ms,
            rect: t.face_rect,
        })
        .collect();
    (gaze, text, face)
}

fn rect_cols(r: Option<PixelRect>) -> String {
    match r {
        Some(r) => format!("{},{},{},{}", r.x, r.y, r.w, r.h),
        None => ",,,".into(),
    }
}

pub fn write_tick_csv(ticks: &[TickRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "t_ms,gaze_x,gaze_y,gaze_valid,text_x,text_y,text_w,text_h,face_x,face_y,face_w,face_h,lowered,in_text,on_face"
    )?;
    for t in ticks {
        let g = t.gaze_or_invalid();
        let in_text = g.valid && t.text_rect.is_some_and(|r| r.contains(g.point_px));
        let on_face = g.valid && t.face_rect.is_some_and(|r| r.contains(g.point_px));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            t.t_ms,
            g.point_px[0],
            g.point_px[1],
            g.valid,
            rect_cols(t.text_rect),
            rect_cols(t.face_rect),
            t.lowered,
            in_text,
            on_face
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn utt(s: Speaker, text: &str) -> Utterance {
        Utterance::new(s, 0, 0, text, &GraphemeNormalizer)
    }

    #[test]
    fn grapheme_units() {
        assert_eq!(normalize("abc", &GraphemeNormalizer).len(), 3);
        assert_eq!(normalize("", &GraphemeNormalizer).len(), 0);
        assert_eq!(normalize("a b, c!", &GraphemeNormalizer), vec!["a", "b", "c"]);
        assert_eq!(normalize("e\u{301}e", &GraphemeNormalizer).len(), 2);
    }

    #[test]
    fn kana_units() {
        assert_eq!(normalize("きゃんぷ", &KanaNormalizer), vec!["きゃ", "ん", "ぷ"]);
        assert_eq!(normalize("キャンプ", &KanaNormalizer), vec!["きゃ", "ん", "ぷ"]);
        assert_eq!(normalize("らーめん", &KanaNormalizer), vec!["ら", "ー", "め", "ん"]);
        assert_eq!(normalize("きって", &KanaNormalizer), vec!["き", "っ", "て"]);
        assert_eq!(normalize("うん、そう。", &KanaNormalizer).len(), 4);
        assert_eq!(normalize("", &KanaNormalizer).len(), 0);
        // a leading small kana has nothing to attach to
        assert_eq!(normalize("ゃあ", &KanaNormalizer), vec!["ゃ", "あ"]);
    }

    #[test]
    fn turns_soccer() {
        let conv = vec![
            utt(Speaker::User, "I like soccer"),
            utt(Speaker::Partner, "which team"),
            utt(Speaker::User, "the local one"),
        ];
        let c = count_turns(&conv, &FillerLexicon::default(), &TurnConfig::default());
        assert_eq!(c, TurnCounts { user: 2, partner: 1 });
    }

    #[test]
    fn turns_echo_not_counted() {
        let conv = vec![
            utt(Speaker::User, "I like camping"),
            utt(Speaker::Partner, "camping?"),
            utt(Speaker::User, "yes weekly"),
        ];
        let c = count_turns(&conv, &FillerLexicon::default(), &TurnConfig::default());
        assert_eq!(c.partner, 0);
        assert_eq!(c.user, 1);
    }

    #[test]
    fn turns_filler_only() {
        let conv = vec![utt(Speaker::Partner, "uh-huh")];
        let c = count_turns(&conv, &FillerLexicon::default(), &TurnConfig::default());
        assert_eq!(c, TurnCounts::default());
        let conv = vec![utt(Speaker::Partner, "うん、うん")];
        let c = count_turns(&conv, &FillerLexicon::default(), &TurnConfig::default());
        assert_eq!(c, TurnCounts::default());
    }

    #[test]
    fn same_speaker_run_is_one_turn() {
        let conv = vec![
            utt(Speaker::User, "first thought"),
            utt(Speaker::User, "second thought"),
            utt(Speaker::Partner, "reply here"),
        ];
        let c = count_turns(&conv, &FillerLexicon::default(), &TurnConfig::default());
        assert_eq!(c, TurnCounts { user: 1, partner: 1 });
    }

    #[test]
    fn lexicon_file() {
        let lex = FillerLexicon::parse("# fillers\nwell\n\nyou know\n");
        assert!(lex.contains("well"));
        assert!(lex.contains("you"));
        assert!(!lex.contains("uh"));
    }

    #[test]
    fn speech_amount_sums() {
        let conv = vec![utt(Speaker::User, "abc"), utt(Speaker::Partner, "xyz")];
        assert_eq!(speech_amount(&conv), SpeechAmount { user: 3, partner: 3 });
        assert_eq!(speech_amount(&[]), SpeechAmount::default());
        let conv = vec![
            utt(Speaker::User, "hello there"),
            utt(Speaker::Partner, "uh"),
            utt(Speaker::User, "camping gear"),
            utt(Speaker::Partner, "nice one"),
        ];
        // brute force: count alphanumeric chars per speaker
        let oracle = |s: Speaker| -> u64 {
            conv.iter()
                .filter(|u| u.speaker == s)
                .map(|u| u.text.chars().filter(|c| c.is_alphanumeric()).count() as u64)
                .sum()
        };
        assert_eq!(
            speech_amount(&conv),
            SpeechAmount {
                user: oracle(Speaker::User),
                partner: oracle(Speaker::Partner)
            }
        );
    }

    fn rect() -> PixelRect {
        PixelRect {
            x: 0.0,
            y: 0.0,
            w: 10.0,
            h: 10.0,
        }
    }

    fn trace(inside: &[bool]) -> (Vec<GazeSample>, Vec<RectSample>) {
        let gaze = inside
            .iter()
            .enumerate()
            .map(|(i, on)| GazeSample {
                t_ms: i as u64 * 20,
                point_px: if *on { [5.0, 5.0] } else { [50.0, 50.0] },
                valid: true,
            })
            .collect();
        let rects = (0..inside.len())
            .map(|i| RectSample {
                t_ms: i as u64 * 20,
                rect: Some(rect()),
            })
            .collect();
        (gaze, rects)
    }

    #[test]
    fn proportion_full_and_half() {
        let (g, r) = trace(&[true; 10]);
        assert_eq!(reading_proportion(&g, &r).unwrap().proportion, 1.0);
        let pattern: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let (g, r) = trace(&pattern);
        let m = reading_proportion(&g, &r).unwrap();
        assert_eq!(m.proportion, 0.5);
        assert_eq!(m.total_ms, 200);
    }

    #[test]
    fn proportion_follows_moving_rect() {
        // rectangle jumps down for the middle third; gaze follows it
        let n = 30;
        let mut gaze = Vec::new();
        let mut rects = Vec::new();
        for i in 0..n {
            let lowered = (10..20).contains(&i);
            let r = PixelRect {
                y: if lowered { 100.0 } else { 0.0 },
                ..rect()
            };
            gaze.push(GazeSample {
                t_ms: i * 20,
                point_px: r.center(),
                valid: true,
            });
            rects.push(RectSample {
                t_ms: i * 20,
                rect: Some(r),
            });
        }
        assert_eq!(reading_proportion(&gaze, &rects).unwrap().proportion, 1.0);
    }

    #[test]
    fn proportion_errors() {
        assert_eq!(reading_proportion(&[], &[]), Err(AnalyticsError::EmptyTrace));
        let (g, r) = trace(&[true, true]);
        assert_eq!(reading_proportion(&g, &r[..1]), Err(AnalyticsError::TraceMismatch(1)));
        let (g, _) = trace(&[true, true]);
        let same_t: Vec<_> = g.iter().map(|s| GazeSample { t_ms: 0, ..*s }).collect();
        let rects: Vec<_> = same_t.iter().map(|s| RectSample { t_ms: s.t_ms, rect: None }).collect();
        assert_eq!(reading_proportion(&same_t, &rects), Err(AnalyticsError::EmptyTrace));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let ticks = vec![TickRecord {
            t_ms: 0,
            gaze: None,
            text_rect: Some(rect()),
            face_rect: None,
            lowered: false,
        }];
        let mut buf = Vec::new();
        write_tick_csv(&ticks, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
    }

    fn arb_utterance() -> impl Strategy<Value = Utterance> {
        let words = prop::sample::select(vec!["camp", "gear", "uh", "um", "yes", "fish", "lake", "tent"]);
        (any::<bool>(), prop::collection::vec(words, 1..4)).prop_map(|(u, w)| {
            utt(if u { Speaker::User } else { Speaker::Partner }, &w.join(" "))
        })
    }

    proptest! {
        #[test]
        fn filler_insertion_never_changes_turns(
            conv in prop::collection::vec(arb_utterance(), 0..10),
            at in 0usize..11,
            spk in any::<bool>(),
        ) {
            let lex = FillerLexicon::default();
            let cfg = TurnConfig::default();
            let before = count_turns(&conv, &lex, &cfg);
            let mut with = conv.clone();
            let at = at.min(with.len());
            with.insert(at, utt(if spk { Speaker::User } else { Speaker::Partner }, "uh um"));
            prop_assert_eq!(count_turns(&with, &lex, &cfg), before);
        }

        #[test]
        fn speech_amount_additive(
            a in prop::collection::vec(arb_utterance(), 0..8),
            b in prop::collection::vec(arb_utterance(), 0..8),
        ) {
            let sa = speech_amount(&a);
            let sb = speech_amount(&b);
            let joined: Vec<_> = a.iter().chain(b.iter()).cloned().collect();
            let sj = speech_amount(&joined);
            prop_assert_eq!(sj.user, sa.user + sb.user);
            prop_assert_eq!(sj.partner, sa.partner + sb.partner);
        }

        #[test]
        fn proportion_bounded_and_scale_free(pattern in prop::collection::vec(any::<bool>(), 2..50), k in 1u64..7) {
            let (g, r) = trace(&pattern);
            let m = reading_proportion(&g, &r).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.proportion));
            let gs: Vec<_> = g.iter().map(|s| GazeSample { t_ms: s.t_ms * k, ..*s }).collect();
            let rs: Vec<_> = r.iter().map(|s| RectSample { t_ms: s.t_ms * k, ..*s }).collect();
            prop_assert_eq!(reading_proportion(&gs, &rs).unwrap().proportion, m.proportion);
        }
    }
}
