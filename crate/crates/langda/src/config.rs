//! Strict TOML configuration files for training runs and experiment
//! presets.
//!
//! Parsing is strict: unknown keys are rejected with the offending key
//! named, and every loaded value passes the same range validation the
//! trainer applies, so a bad file fails at load time rather than steps
//! into a run. Dumping and re-loading a config yields an equal value.

use crate::engine::TrainConfig;
use crate::experiment::ExperimentPreset;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: Box<toml::de::Error>,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization failed: {0}")]
    Ser(#[from] toml::ser::Error),
}

fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> Result<T, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: origin.to_string(),
        source: Box::new(e),
    })
}

/// Parses a training config from TOML text and validates it.
pub fn train_config_from_str(text: &str, origin: &str) -> Result<TrainConfig, ConfigError> {
    let config: TrainConfig = parse(text, origin)?;
    config.validate().map_err(|e| ConfigError::Invalid {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(config)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    train_config_from_str(&text, &path.display().to_string())
}

pub fn dump_train_config(config: &TrainConfig) -> Result<String, ConfigError> {
    Ok(toml::to_string_pretty(config)?)
}

/// Parses an experiment preset from TOML text and validates it,
/// including the embedded training config.
pub fn preset_from_str(text: &str, origin: &str) -> Result<ExperimentPreset, ConfigError> {
    let preset: ExperimentPreset = parse(text, origin)?;
    preset.validate().map_err(|e| ConfigError::Invalid {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    preset.train.validate().map_err(|e| ConfigError::Invalid {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    Ok(preset)
}

pub fn load_preset(path: &Path) -> Result<ExperimentPreset, ConfigError> {
    let text = std::fs::read_to_string(path)?;
    preset_from_str(&text, &path.display().to_string())
}

pub fn dump_preset(preset: &ExperimentPreset) -> Result<String, ConfigError> {
    Ok(toml::to_string_pretty(preset)?)
}
