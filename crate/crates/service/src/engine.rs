use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dressup_core::training::load_checkpoint;
use dressup_core::tweaking::AttributeDirection;
use dressup_core::{Model32, Result};

use crate::error::{ApiError, ApiResult};

/// Directory of fitted attribute directions, next to the checkpoint.
pub const DIRECTIONS_DIR: &str = "directions";

/// The process-wide model, shared read-only across sessions.
pub struct Engine {
    model: Option<Arc<Model32>>,
    checkpoint_id: Option<String>,
    unavailable: String,
    pub directions: BTreeMap<String, AttributeDirection>,
}

impl Engine {
    pub fn new(model: Model32, checkpoint_id: impl Into<String>) -> Self {
        Engine {
            model: Some(Arc::new(model)),
            checkpoint_id: Some(checkpoint_id.into()),
            unavailable: String::new(),
            directions: BTreeMap::new(),
        }
    }

    pub fn unavailable(reason: impl Into<String>) -> Self {
        Engine {
            model: None,
            checkpoint_id: None,
            unavailable: reason.into(),
            directions: BTreeMap::new(),
        }
    }

    pub fn with_directions(mut self, directions: BTreeMap<String, AttributeDirection>) -> Self {
        self.directions = directions;
        self
    }

    /// Loads a checkpoint and any `directions/*.json` beside it. A failed load yields an
    /// engine that reports the failure as 503 rather than refusing to start.
    pub fn load(path: Option<&Path>) -> Self {
        let Some(path) = path else {
            return Engine::unavailable("no model loaded: MODEL_PATH is not set");
        };
        match load_checkpoint::<f32>(path) {
            Ok(ck) => {
                let dir = path.parent().unwrap_or(Path::new(".")).join(DIRECTIONS_DIR);
                let directions = load_directions(&dir).unwrap_or_else(|e| {
                    log::warn!("ignoring attribute directions: {e}");
                    BTreeMap::new()
                });
                log::info!(
                    "loaded checkpoint {} with {} directions",
                    ck.id,
                    directions.len()
                );
                Engine::new(ck.bundle.model, ck.id).with_directions(directions)
            }
            Err(e) => {
                log::error!("model load failed: {e}");
                Engine::unavailable(format!("model failed to load: {e}"))
            }
        }
    }

    pub fn model(&self) -> ApiResult<Arc<Model32>> {
        self.model
            .clone()
            .ok_or_else(|| ApiError::model_unavailable(&self.unavailable))
    }

    pub fn checkpoint_id(&self) -> Option<&str> {
        self.checkpoint_id.as_deref()
    }
}

/// Reads every `*.json` in `dir` as an [`AttributeDirection`] keyed by file stem.
pub fn load_directions(dir: &Path) -> Result<BTreeMap<String, AttributeDirection>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| dressup_core::Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let text = std::fs::read_to_string(&p).map_err(|e| dressup_core::Error::io(&p, e))?;
        let stem = p
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        out.insert(stem, AttributeDirection::from_json(&text)?);
    }
    Ok(out)
}
