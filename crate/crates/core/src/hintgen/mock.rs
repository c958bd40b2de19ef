use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::provider::{HintProvider, ProviderError};

pub const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be", "been", "but",
    "by", "can", "did", "do", "does", "for", "from", "go", "got", "had", "has", "have", "he", "her",
    "him", "his", "how", "i", "i'm", "if", "in", "into", "is", "it", "it's", "just", "like", "me",
    "my", "no", "not", "of", "oh", "on", "one", "or", "our", "really", "she", "so", "some", "that",
    "that's", "the", "their", "them", "then", "there", "they", "this", "to", "too", "uh", "um",
    "up", "very", "was", "we", "well", "went", "were", "what", "when", "which", "who", "why",
    "will", "with", "yeah", "yes", "you", "your",
];

pub const DEFAULT_FACTS: &[(&str, &str)] = &[
    ("camping", "Solo camping has grown popular; compact gear sells out each spring."),
    ("camp", "Campsites near cities now take online reservations months ahead."),
    ("gear", "Regular seam sealing and drying extends tent life by years."),
    ("soccer", "The domestic league season runs from February to December."),
    ("movies", "Several animated features topped the box office this year."),
    ("coffee", "Single-origin light roasts are trending at specialty cafes."),
];

/// Deterministic stand-in for an LLM provider.
///
/// Keywords are the non-stopword tokens that occur at least twice in the
/// window, ordered by frequency then lexicographically. Each keyword gets one
/// line from the fact table, or a generic line when the table has no entry.
#[derive(Debug, Clone)]
pub struct MockProvider {
    facts: BTreeMap<String, String>,
    stopwords: BTreeSet<String>,
    max_keywords: usize,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new(
            Self::default_facts(),
            DEFAULT_STOPWORDS.iter().map(|s| s.to_string()),
        )
    }
}

impl MockProvider {
    pub fn new(
        facts: impl IntoIterator<Item = (String, String)>,
        stopwords: impl IntoIterator<Item = String>,
    ) -> Self {
        Self {
            facts: facts.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect(),
            stopwords: stopwords.into_iter().map(|s| s.to_lowercase()).collect(),
            max_keywords: 3,
        }
    }

    pub fn default_facts() -> impl Iterator<Item = (String, String)> {
        DEFAULT_FACTS.iter().map(|(k, v)| (k.to_string(), v.to_string()))
    }

    pub fn with_max_keywords(mut self, n: usize) -> Self {
        self.max_keywords = n.max(1);
        self
    }

    pub fn with_facts(mut self, facts: impl IntoIterator<Item = (String, String)>) -> Self {
        self.facts = facts.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
        self
    }

    /// Parses a `keyword<TAB>fact line` table. `#` lines are comments.
    pub fn parse_facts(text: &str) -> Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .ok_or_else(|| format!("facts line {}: missing tab", i + 1))?;
            if k.trim().is_empty() {
                return Err(format!("facts line {}: empty keyword", i + 1));
            }
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    pub fn load_facts(path: &Path) -> Result<Vec<(String, String)>, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_facts(&text)
    }

    pub fn tokenize(text: &str) -> Vec<String> {
        text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .map(|t| t.trim_matches('\'').to_lowercase())
            .filter(|t| !t.is_empty())
            .collect()
    }

    pub fn keywords(&self, window_text: &str) -> Vec<String> {
        let mut freq: BTreeMap<String, usize> = BTreeMap::new();
        for tok in Self::tokenize(window_text) {
            if !self.stopwords.contains(&tok) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut repeated: Vec<(String, usize)> = freq.into_iter().filter(|(_, n)| *n >= 2).collect();
        repeated.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        repeated
            .into_iter()
            .take(self.max_keywords)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn respond(&self, window_text: &str) -> String {
        let keywords = self.keywords(window_text);
        if keywords.is_empty() {
            return String::new();
        }
        let mut out = format!("Keywords: {}", keywords.join(", "));
        for k in &keywords {
            out.push_str("\n- ");
            match self.facts.get(k) {
                Some(fact) => out.push_str(fact),
                None => out.push_str(&format!("Recent news and topics about {k}.")),
            }
        }
        out
    }
}

impl HintProvider for MockProvider {
    fn generate(&self, _system_prompt: &str, window_text: &str) -> Result<String, ProviderError> {
        Ok(self.respond(window_text))
    }
}
