//! Layered settings: flags, then environment (both via clap), then the TOML
//! config file, then built-in defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use resistkit_core::lexstats::TokenizerMode;
use resistkit_core::prompting::ShotMode;
use resistkit_core::taxonomy::Task;
use resistkit_inference::BackendConfig;
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub sessions: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub runs: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

/// Contents of `--config`. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub task: Option<Task>,
    pub shots: Option<ShotMode>,
    pub alpha0: Option<f64>,
    pub tokenizer: Option<TokenizerMode>,
    /// Name of the backend used when `--backend` is absent.
    pub backend: Option<String>,
    #[serde(default)]
    pub paths: Paths,
    /// Named HTTP backends. Keys are `--backend` values.
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(CliConfig::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: CliConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        for (name, b) in &cfg.backends {
            b.validate().with_context(|| format!("backend {name:?} in {}", path.display()))?;
        }
        Ok(cfg)
    }
}

/// Values after layering.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seed: u64,
    pub k: usize,
    pub task: Task,
    pub shots: ShotMode,
    pub alpha0: f64,
    pub tokenizer: TokenizerMode,
    pub backend: String,
    pub model: Option<String>,
    pub table: bool,
    pub out: Option<PathBuf>,
    pub config: CliConfig,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_ALPHA0: f64 = 500.0;
pub const DEFAULT_BACKEND: &str = "default";

impl Settings {
    /// The HTTP backend named by `--backend`, with `--model` applied.
    pub fn http_backend(&self) -> Result<BackendConfig> {
        let mut cfg = self
            .config
            .backends
            .get(&self.backend)
            .cloned()
            .with_context(|| {
                let known: Vec<&str> = self.config.backends.keys().map(String::as_str).collect();
                format!(
                    "no backend {:?} configured (config has {known:?}; built-ins are mock-gold and mock-text)",
                    self.backend
                )
            })?;
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn path_or(&self, given: Option<&Path>, configured: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
        given
            .map(Path::to_path_buf)
            .or_else(|| configured.cloned())
            .with_context(|| format!("no {what} path given on the command line or in the config"))
    }
}
