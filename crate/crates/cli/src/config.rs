//! Config file loading and the usage/runtime error split.
//!
//! One TOML file drives every pipeline command. Sections: `[train]` (with
//! nested `[train.model]` and `[train.instruction]`), `[augment]`,
//! `[teacher]`, and `[pretrain]`. Every key has a default, so any subset
//! may be given; unknown keys are rejected by name with exit code 2.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tinslt::augment::AugmentationParams;
use tinslt::{PretrainConfig, TeacherConfig, TrainConfig};

/// Command failures split by exit code: usage problems (bad flags, bad
/// config keys) exit 2, everything that goes wrong while running exits 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<tinslt::Error> for CliError {
    fn from(e: tinslt::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub augment: AugmentationParams,
    pub teacher: TeacherConfig,
    pub pretrain: PretrainConfig,
}

impl FileConfig {
    /// Defaults when no path is given; otherwise parse, surfacing unknown
    /// keys and type errors as usage errors naming the offending key.
    pub fn load(path: Option<&Path>) -> CliResult<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    /// Print the merged configuration (file values plus flag overrides) to
    /// stdout so every run records exactly what it used.
    pub fn echo(&self) {
        let body = toml::to_string_pretty(self).expect("config serializes to TOML");
        println!("# effective configuration");
        print!("{body}");
        if self.train.instruction.is_none() {
            println!("# [train.instruction] absent: vanilla backbone");
        }
        println!("# end configuration");
    }
}
