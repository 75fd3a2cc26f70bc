//! Run configuration: one TOML document per run.

use std::fs;
use std::path::{Path, PathBuf};

use scopeprobe_core::metrics::HumanMapping;
use scopeprobe_core::scorer::BackendDescriptor;
use serde::{Deserialize, Serialize};

use crate::CliError;

fn default_tau() -> f64 {
    1.0
}

fn default_n_boot() -> usize {
    2000
}

fn default_seed() -> u64 {
    20_240_601
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub stimuli_en: Option<PathBuf>,
    #[serde(default)]
    pub stimuli_zh: Option<PathBuf>,
    #[serde(default)]
    pub judgments: Option<PathBuf>,
    #[serde(default)]
    pub backends: Vec<BackendDescriptor>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub human_mapping: HumanMapping,
    #[serde(default = "default_n_boot")]
    pub n_boot: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tau: Option<f64>,
    /// Restrict every stage to these backend ids.
    pub backends: Vec<String>,
}

/// A loaded configuration with paths resolved against the config file's directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl Run {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base_dir, overrides)
    }

    pub fn from_toml(text: &str, base_dir: PathBuf, overrides: &Overrides) -> Result<Self, CliError> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(tau) = overrides.tau {
            config.tau = tau;
        }
        if !(config.tau.is_finite() && config.tau > 0.0) {
            return Err(CliError::Config(format!("tau must be positive, got {}", config.tau)));
        }
        if config.n_boot == 0 {
            return Err(CliError::Config("n_boot must be positive".into()));
        }
        if config.stimuli_en.is_none() && config.stimuli_zh.is_none() {
            return Err(CliError::Config("at least one of stimuli_en, stimuli_zh is required".into()));
        }
        let mut ids = std::collections::BTreeSet::new();
        for b in &config.backends {
            if !ids.insert(b.backend_id.as_str()) {
                return Err(CliError::Config(format!("duplicate backend_id '{}'", b.backend_id)));
            }
        }
        for wanted in &overrides.backends {
            if !ids.contains(wanted.as_str()) {
                return Err(CliError::Config(format!("--backend {wanted}: no such backend in config")));
            }
        }
        if !overrides.backends.is_empty() {
            config.backends.retain(|b| overrides.backends.contains(&b.backend_id));
        }
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn stage_dir(&self, stage: &str) -> Result<PathBuf, CliError> {
        let dir = self.output_dir().join(stage);
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }
}
