use std::path::Path;

use attnguard_core::engine::EngineConfig;
use attnguard_core::forest::ForestConfig;
use attnguard_core::labeler::LabelRuleConfig;
use attnguard_core::sim::SessionRuleConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub retention_ms: Option<u64>,
}

/// Optional TOML file shared by every subcommand. Missing sections take
/// their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub forest: ForestConfig,
    pub labeler: LabelRuleConfig,
    pub engine: EngineConfig,
    pub oulad: SessionRuleConfig,
    pub service: ServiceSection,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = crate::io::read(path)?;
        let cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        cfg.forest.validate()?;
        cfg.labeler.validate()?;
        cfg.engine.validate()?;
        Ok(cfg)
    }
}
