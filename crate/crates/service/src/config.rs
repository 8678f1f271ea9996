use std::path::PathBuf;

use dressup_core::{Error, Result};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SESSION_DIR: &str = "sessions";

/// Service settings, normally read from `MODEL_PATH`, `SESSION_DIR` and `PORT`.
#[derive(Clone, Debug, PartialEq)]
pub struct ServiceConfig {
    /// Checkpoint to load. Without one the service runs but model-backed routes answer 503.
    pub model_path: Option<PathBuf>,
    pub session_dir: PathBuf,
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            model_path: None,
            session_dir: PathBuf::from(DEFAULT_SESSION_DIR),
            port: DEFAULT_PORT,
        }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut cfg = ServiceConfig::default();
        if let Some(p) = get("MODEL_PATH").filter(|s| !s.is_empty()) {
            cfg.model_path = Some(PathBuf::from(p));
        }
        if let Some(d) = get("SESSION_DIR").filter(|s| !s.is_empty()) {
            cfg.session_dir = PathBuf::from(d);
        }
        if let Some(p) = get("PORT").filter(|s| !s.is_empty()) {
            cfg.port = p
                .parse()
                .map_err(|_| Error::validation("PORT", format!("{p:?} is not a port number")))?;
        }
        Ok(cfg)
    }
}
