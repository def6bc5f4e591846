use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::EpisodeConfig;
use crate::llm::features::DEFAULT_DIM;
use crate::llm::http::HttpConfig;
use crate::llm::oracle::OracleConfig;
use crate::policy::{DEFAULT_B_MAX, DEFAULT_HIDDEN};
use crate::trainer::TrainConfig;

use super::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Oracle(OracleConfig),
    Http(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Oracle(OracleConfig::default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Deterministic hash of the thought text.
    #[default]
    Hash,
    /// The HTTP backend's embeddings endpoint, projected down.
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub checkpoint: Option<PathBuf>,
    pub feature_dim: usize,
    pub hidden: usize,
    pub b_max: usize,
    pub features: FeatureSource,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            checkpoint: None,
            feature_dim: DEFAULT_DIM,
            hidden: DEFAULT_HIDDEN,
            b_max: DEFAULT_B_MAX,
            features: FeatureSource::Hash,
        }
    }
}

/// Everything a command needs. Loaded from TOML, then flags override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output: PathBuf,
    pub task: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub backend: BackendConfig,
    pub policy: PolicyConfig,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
    pub rounds: usize,
    pub repeats: usize,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("l2t-out"),
            task: None,
            manifest: None,
            templates: None,
            backend: BackendConfig::default(),
            policy: PolicyConfig::default(),
            episode: EpisodeConfig::default(),
            train: TrainConfig::default(),
            rounds: 5,
            repeats: 1,
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}
