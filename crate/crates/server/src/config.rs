//! Service configuration: TOML file plus environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use remixhub_core::platform::PlatformConfig;
use serde::Deserialize;

pub const ENV_DATA_DIR: &str = "REMIXHUB_DATA_DIR";
pub const ENV_PORT: &str = "REMIXHUB_PORT";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bind: SocketAddr,
    pub data_dir: PathBuf,
    pub server_name: String,
    pub overlap_threshold: f64,
    pub participation_window_days: u32,
    pub front_page_size: usize,
    pub admin_token: Option<String>,
    /// Largest accepted request body, in bytes.
    pub max_body_bytes: usize,
}

impl Default for Config {
    fn default() -> Self {
        let core = PlatformConfig::default();
        Config {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("data"),
            server_name: core.server_name,
            overlap_threshold: core.overlap_threshold,
            participation_window_days: core.participation_window_days,
            front_page_size: core.front_page_size,
            admin_token: None,
            max_body_bytes: 32 * 1024 * 1024,
        }
    }
}

impl Config {
    /// Reads `path` if given (defaults otherwise), then applies environment
    /// overrides and validates.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Config> {
        let mut config = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                Config::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => Config::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.platform().validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Config> {
        Ok(toml::from_str(text)?)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(dir) = var(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(dir);
        }
        if let Some(port) = var(ENV_PORT) {
            let Ok(port) = port.parse::<u16>() else {
                bail!("{ENV_PORT} must be a port number, got {port:?}");
            };
            self.bind.set_port(port);
        }
        Ok(())
    }

    pub fn platform(&self) -> PlatformConfig {
        PlatformConfig {
            server_name: self.server_name.clone(),
            overlap_threshold: self.overlap_threshold,
            participation_window_days: self.participation_window_days,
            front_page_size: self.front_page_size,
            admin_token: self.admin_token.clone(),
        }
    }
}
