//! Study configuration documents (TOML).

use std::path::{Path, PathBuf};

use srl_core::{ConfigError, StudyConfig};

/// The five-scaffold essay study shipped with the engine.
pub const DEFAULT_STUDY: &str = include_str!("../config/default-study.toml");

/// Environment variable naming the configuration file; `--config` wins.
pub const CONFIG_ENV: &str = "SRL_CONFIG";

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration does not match the schema: {0}")]
    Schema(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(#[from] ConfigError),
}

/// Parses and validates a configuration document. Omitted optional fields
/// take their defaults.
pub fn load_config(document: &str) -> Result<StudyConfig, LoadError> {
    let config: StudyConfig = toml::from_str(document)?;
    config.validate()?;
    Ok(config)
}

pub fn load_config_file(path: &Path) -> Result<StudyConfig, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    load_config(&text)
}

pub fn default_config() -> StudyConfig {
    load_config(DEFAULT_STUDY).expect("shipped configuration is valid")
}

/// `path` if given, else the default study.
pub fn resolve(path: Option<&Path>) -> Result<StudyConfig, LoadError> {
    match path {
        Some(p) => load_config_file(p),
        None => Ok(default_config()),
    }
}

pub fn to_toml(config: &StudyConfig) -> String {
    toml::to_string(config).expect("a study config always serialises")
}
