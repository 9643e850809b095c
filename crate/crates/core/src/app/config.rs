use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::Profile;
use crate::preproc::PipelineConfig;
use crate::train::TrainConfig;

use super::{AppError, Result};

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_BODY_LIMIT: usize = 5 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    /// Largest accepted request body in bytes.
    pub body_limit: usize,
    /// Predictions returned per request.
    pub top_k: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { host: "127.0.0.1".into(), port: 8080, body_limit: DEFAULT_BODY_LIMIT, top_k: 3 }
    }
}

/// Contents of the TOML configuration file. Relative paths are resolved
/// against the directory holding the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub version: u32,
    pub dataset_root: PathBuf,
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub log_level: String,
    pub train: TrainConfig,
    /// Defaults to the profile's standard pipeline when absent.
    pub pipeline: Option<PipelineConfig>,
    pub service: ServiceConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            dataset_root: "data".into(),
            model_path: "model.islm".into(),
            history_path: "history.csv".into(),
            log_level: "info".into(),
            train: TrainConfig::default(),
            pipeline: None,
            service: ServiceConfig::default(),
        }
    }
}

/// Standard preprocessing for a profile: full-size edges for the reference
/// network, edges detected after downscaling for the desk network.
pub fn default_pipeline(profile: Profile) -> PipelineConfig {
    match profile {
        Profile::Table1 => PipelineConfig::default(),
        Profile::Desk => PipelineConfig::resize_first(64, 64),
    }
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| AppError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| AppError::Io { path: path.to_path_buf(), source })?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            AppError::Config(msg) => AppError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.dataset_root, &mut self.model_path, &mut self.history_path] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(dir) = &mut self.train.checkpoint_dir {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(AppError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.service.port == 0 {
            return Err(AppError::Config("service.port must be in [1, 65535]".into()));
        }
        if self.service.top_k == 0 {
            return Err(AppError::Config("service.top_k must be at least 1".into()));
        }
        if self.log_level.parse::<log::LevelFilter>().is_err() {
            return Err(AppError::Config(format!("unknown log_level {:?}", self.log_level)));
        }
        self.train.validate().map_err(|e| AppError::Config(e.to_string()))?;
        self.pipeline().validate().map_err(|e| AppError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        self.pipeline.clone().unwrap_or_else(|| default_pipeline(self.train.profile))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(AppConfig::parse("").unwrap(), AppConfig::default());
    }

    #[test]
    fn shipped_example_parses() {
        let text = include_str!("../../../../configs/desk.toml");
        let cfg = AppConfig::parse(text).unwrap();
        assert_eq!(cfg.train.profile, Profile::Desk);
        assert_eq!(cfg.pipeline().target_size, [64, 64]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = AppConfig::parse("version = 1\n[train]\nepochs = \"many\"\n").unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(AppConfig::parse("[train]\nepoch = 3\n").is_err());
        assert!(AppConfig::parse("[pipeline]\nstages = [\"grayscale\", \"sharpen\"]\n").is_err());
    }

    #[test]
    fn bad_values_rejected() {
        for text in ["[service]\nport = 0", "version = 2", "log_level = \"loud\"", "[train]\nlearning_rate = -1.0"] {
            assert!(AppConfig::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "dataset_root = \"d\"\nmodel_path = \"/abs/m.islm\"\n").unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.dataset_root, dir.path().join("d"));
        assert_eq!(cfg.model_path, PathBuf::from("/abs/m.islm"));
    }
}
