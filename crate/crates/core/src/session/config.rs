use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{FillerLexicon, NormalizerKind, TurnConfig};
use crate::geometry::{CameraModel, GeometryConfig};
use crate::hintgen::{GenConfig, HintProvider, HttpProvider, HttpProviderConfig, MockProvider, DEFAULT_STOPWORDS};
use crate::ingest::IngestConfig;
use crate::presentation::FsmConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Condition {
    /// Text tracks the partner's eye-nose region.
    #[default]
    #[serde(rename = "face")]
    FaceAnchored,
    /// Text frozen in the world next to the partner's head.
    #[serde(rename = "fixed")]
    WorldFixed,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::FaceAnchored => "face",
            Condition::WorldFixed => "fixed",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "face" => Ok(Condition::FaceAnchored),
            "fixed" => Ok(Condition::WorldFixed),
            other => Err(format!("unknown condition {other:?} (expected face|fixed)")),
        }
    }
}

/// Pixel styling of the circular panel around the text rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelConfig {
    pub min_radius_px: f64,
    pub padding_px: f64,
    /// Width of the rim that holds the dwell arcs.
    pub ring_width_px: f64,
}

impl Default for PanelConfig {
    fn default() -> Self {
        Self {
            min_radius_px: 60.0,
            padding_px: 8.0,
            ring_width_px: 24.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    Http,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mock" => Ok(ProviderKind::Mock),
            "http" => Ok(ProviderKind::Http),
            other => Err(format!("unknown provider {other:?} (expected mock|http)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// `keyword<TAB>fact line` table for the mock.
    pub facts_file: Option<PathBuf>,
    pub stopwords: Option<Vec<String>>,
    pub max_keywords: usize,
    /// Simulated completion delay used by the replay harness.
    pub mock_latency_ms: u64,
    pub http: HttpProviderConfig,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            facts_file: None,
            stopwords: None,
            max_keywords: 3,
            mock_latency_ms: 0,
            http: HttpProviderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyticsConfig {
    pub normalizer: NormalizerKind,
    /// One filler per line; built-in English/Japanese list when unset.
    pub filler_file: Option<PathBuf>,
    pub turns: TurnConfig,
}

impl Default for AnalyticsConfig {
    fn default() -> Self {
        Self {
            normalizer: NormalizerKind::Grapheme,
            filler_file: None,
            turns: TurnConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub tick_ms: u64,
    pub condition: Condition,
    pub ingest: IngestConfig,
    pub gen: GenConfig,
    pub geometry: GeometryConfig,
    pub fsm: FsmConfig,
    pub camera: CameraModel,
    pub panel: PanelConfig,
    pub provider: ProviderConfig,
    pub analytics: AnalyticsConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            tick_ms: 20,
            condition: Condition::FaceAnchored,
            ingest: IngestConfig::default(),
            gen: GenConfig::default(),
            geometry: GeometryConfig::default(),
            fsm: FsmConfig::default(),
            camera: CameraModel::default(),
            panel: PanelConfig::default(),
            provider: ProviderConfig::default(),
            analytics: AnalyticsConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tick_ms == 0 {
            return Err(ConfigError::Invalid("tick_ms must be > 0".into()));
        }
        self.ingest.validate().map_err(ConfigError::Invalid)?;
        self.gen.validate().map_err(ConfigError::Invalid)?;
        self.geometry.validate().map_err(ConfigError::Invalid)?;
        self.fsm.validate().map_err(ConfigError::Invalid)?;
        self.camera.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML config. Relative file paths inside it resolve against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.provider.facts_file, &mut self.analytics.filler_file]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn mock_provider(&self) -> Result<MockProvider, ConfigError> {
        let stopwords: Vec<String> = match &self.provider.stopwords {
            Some(s) => s.clone(),
            None => DEFAULT_STOPWORDS.iter().map(|s| s.to_string()).collect(),
        };
        let mut mock = MockProvider::new(MockProvider::default_facts(), stopwords)
            .with_max_keywords(self.provider.max_keywords);
        if let Some(path) = &self.provider.facts_file {
            let facts = MockProvider::load_facts(path).map_err(ConfigError::Invalid)?;
            mock = mock.with_facts(facts);
        }
        Ok(mock)
    }

    pub fn build_provider(&self) -> Result<Arc<dyn HintProvider>, ConfigError> {
        Ok(match self.provider.kind {
            ProviderKind::Mock => Arc::new(self.mock_provider()?),
            ProviderKind::Http => Arc::new(HttpProvider::new(self.provider.http.clone())),
        })
    }

    pub fn filler_lexicon(&self) -> Result<FillerLexicon, ConfigError> {
        match &self.analytics.filler_file {
            Some(p) => FillerLexicon::load(p).map_err(|source| ConfigError::Io {
                path: p.display().to_string(),
                source,
            }),
            None => Ok(FillerLexicon::default()),
        }
    }
}
