use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use augint::checkpoint::{load_checkpoint, CheckpointInfo};
use augint::datasets::Image;
use augint::models::ModelBundle;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    /// Directory scanned for `*.ckpt` files at startup.
    pub models_dir: Option<PathBuf>,
    /// Individual checkpoints to load in addition to the directory.
    pub checkpoints: Vec<PathBuf>,
    pub session_idle: Duration,
    pub max_body_bytes: usize,
    pub max_seeds: usize,
    /// Shared bearer token required on every request when set.
    pub token: Option<String>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            models_dir: None,
            checkpoints: Vec::new(),
            session_idle: Duration::from_secs(30 * 60),
            max_body_bytes: 8 << 20,
            max_seeds: 64,
            token: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot read model directory {path}: {source}")]
    ModelDir { path: PathBuf, source: std::io::Error },
    #[error("cannot load checkpoint {path}: {source}")]
    Checkpoint { path: PathBuf, source: augint::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Catalog entry for one loaded checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: String,
    pub file: String,
    pub arch: String,
    pub variant: String,
    pub dataset: String,
    pub latent_dim: i64,
    pub width: i64,
    pub image_shape: [usize; 3],
    pub epoch: usize,
    pub digest: String,
}

/// A model shared by every session that uses it. Tensors are not `Sync`,
/// so inference on one model is serialized.
pub struct LoadedModel {
    pub entry: ModelEntry,
    bundle: Mutex<ModelBundle>,
}

impl LoadedModel {
    fn new(id: String, path: &Path, bundle: ModelBundle, info: CheckpointInfo) -> Self {
        let s = bundle.image_shape();
        let entry = ModelEntry {
            id,
            file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            arch: info.spec.arch.to_string(),
            variant: info.spec.variant.to_string(),
            dataset: info.provenance.dataset,
            latent_dim: info.spec.latent_dim,
            width: info.spec.width,
            image_shape: [s.channels, s.height, s.width],
            epoch: info.provenance.epoch,
            digest: info.digest,
        };
        LoadedModel {
            entry,
            bundle: Mutex::new(bundle),
        }
    }

    pub fn bundle(&self) -> MutexGuard<'_, ModelBundle> {
        self.bundle.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub struct Seed {
    pub id: String,
    pub image: Image,
    /// Cached latent code from the session's model.
    pub code: Vec<f32>,
}

pub struct Session {
    pub id: String,
    pub model: Arc<LoadedModel>,
    pub seeds: Vec<Seed>,
    pub created_unix: u64,
    next_seed: u64,
}

impl Session {
    pub fn next_seed_id(&mut self) -> String {
        self.next_seed += 1;
        format!("seed-{}", self.next_seed)
    }

    pub fn seed(&self, id: &str) -> Result<&Seed, ApiError> {
        self.seeds
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown seed id `{id}`")))
    }
}

struct SessionSlot {
    session: Arc<Mutex<Session>>,
    last_used: Instant,
}

pub struct AppState {
    pub config: ServeConfig,
    models: Vec<Arc<LoadedModel>>,
    sessions: Mutex<HashMap<String, SessionSlot>>,
}

fn scan_dir(dir: &Path) -> Result<Vec<PathBuf>, ServeError> {
    let err = |source| ServeError::ModelDir {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        if path.extension().is_some_and(|e| e == "ckpt") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

impl AppState {
    /// Loads every model named by `config`. Directory entries that fail to
    /// load are skipped with a warning; explicitly listed checkpoints must
    /// load.
    pub fn load(config: ServeConfig) -> Result<Self, ServeError> {
        let mut models: Vec<Arc<LoadedModel>> = Vec::new();
        let mut add = |path: &Path, bundle: ModelBundle, info: CheckpointInfo| {
            if models.iter().any(|m| m.entry.digest == info.digest) {
                return;
            }
            let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let id = if models.iter().any(|m| m.entry.id == stem) {
                format!("{stem}-{}", &info.digest[..8])
            } else {
                stem
            };
            tracing::info!(model = %id, path = %path.display(), "loaded checkpoint");
            models.push(Arc::new(LoadedModel::new(id, path, bundle, info)));
        };
        if let Some(dir) = &config.models_dir {
            for path in scan_dir(dir)? {
                match load_checkpoint(&path) {
                    Ok((bundle, info)) => add(&path, bundle, info),
                    Err(e) => tracing::warn!(path = %path.display(), error = %e, "skipping malformed checkpoint"),
                }
            }
        }
        for path in &config.checkpoints {
            let (bundle, info) = load_checkpoint(path).map_err(|source| ServeError::Checkpoint {
                path: path.clone(),
                source,
            })?;
            add(path, bundle, info);
        }
        Ok(AppState {
            config,
            models,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn catalog(&self) -> Vec<ModelEntry> {
        self.models.iter().map(|m| m.entry.clone()).collect()
    }

    pub fn model(&self, id: Option<&str>) -> Result<Arc<LoadedModel>, ApiError> {
        match id {
            Some(id) => self.models.iter().find(|m| m.entry.id == id).cloned(),
            None => self.models.first().cloned(),
        }
        .ok_or_else(|| match id {
            Some(id) => ApiError::NotFound(format!("unknown model `{id}`")),
            None => ApiError::NotFound("no models are loaded".into()),
        })
    }

    pub fn create_session(&self, model: Arc<LoadedModel>, id: String) -> Arc<Mutex<Session>> {
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let session = Arc::new(Mutex::new(Session {
            id: id.clone(),
            model,
            seeds: Vec::new(),
            created_unix,
            next_seed: 0,
        }));
        let mut map = self.sessions.lock().expect("session map poisoned");
        map.insert(
            id,
            SessionSlot {
                session: session.clone(),
                last_used: Instant::now(),
            },
        );
        session
    }

    /// Looks up a live session and marks it used.
    pub fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.expire_idle();
        let mut map = self.sessions.lock().expect("session map poisoned");
        let slot = map
            .get_mut(id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown or expired session `{id}`")))?;
        slot.last_used = Instant::now();
        Ok(slot.session.clone())
    }

    /// Drops sessions idle for longer than the configured timeout and
    /// returns how many were removed.
    pub fn expire_idle(&self) -> usize {
        let idle = self.config.session_idle;
        let mut map = self.sessions.lock().expect("session map poisoned");
        let before = map.len();
        map.retain(|_, s| s.last_used.elapsed() <= idle);
        before - map.len()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }
}
