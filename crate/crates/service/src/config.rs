use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use simra_core::pipeline::PipelineConfig;
use simra_core::ValidationError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Mixed into the daily access key; rotate with new app releases.
    pub salt: String,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            salt: String::new(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl Config {
    /// Parses TOML. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Config, ValidationError> {
        let mut cfg: Config = toml::from_str(text).map_err(|e| ValidationError::Config(e.to_string()))?;
        cfg.data_dir = base.join(&cfg.data_dir);
        for region in cfg.pipeline.regions.values_mut() {
            if let Some(p) = &region.map_extract {
                region.map_extract = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError::Config(format!("{}: {e}", path.display())))?;
        Config::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.pipeline.validate()
    }
}
