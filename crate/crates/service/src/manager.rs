use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use dressup_core::tweaking::Tweak;

use crate::engine::Engine;
use crate::error::{ApiError, ApiResult};
use crate::session::{GarmentOrigin, PersonSource, Session, SessionView, SCHEMA_VERSION};
use crate::store::{SessionStore, StoredSession};

type Slot = Arc<tokio::sync::Mutex<Option<Session>>>;

/// Owns live sessions. Requests on one session are serialized by its lock; different
/// sessions proceed in parallel on the blocking pool.
pub struct SessionManager {
    pub engine: Arc<Engine>,
    store: Arc<dyn SessionStore>,
    slots: Mutex<HashMap<String, Slot>>,
}

fn check_id(id: &str) -> ApiResult<()> {
    uuid::Uuid::parse_str(id)
        .map(|_| ())
        .map_err(|_| ApiError::not_found(id))
}

async fn blocking<R: Send + 'static>(
    f: impl FnOnce() -> ApiResult<R> + Send + 'static,
) -> ApiResult<R> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

/// Turns a stored session into a live one, re-encoding when the blob is unreadable or was
/// produced by another checkpoint.
fn restore(engine: &Engine, stored: StoredSession) -> ApiResult<Session> {
    let StoredSession {
        record,
        person,
        render,
    } = stored;
    if record.schema_version != SCHEMA_VERSION {
        return Err(ApiError::internal(format!(
            "session {} has schema version {}, expected {SCHEMA_VERSION}",
            record.id, record.schema_version
        )));
    }
    let same_model = engine
        .checkpoint_id()
        .is_none_or(|ck| ck == record.checkpoint_id);
    match person {
        Some(person) if same_model => {
            let (_, keypoints) = record.person.resolve()?;
            let render = if record.dirty { None } else { render };
            Ok(Session {
                record,
                keypoints,
                person,
                render,
            })
        }
        _ => {
            log::info!("re-encoding session {}", record.id);
            let model = engine.model()?;
            let ck = engine.checkpoint_id().unwrap_or_default().to_string();
            Session::reencode(&model, &ck, record)
        }
    }
}

impl SessionManager {
    pub fn new(engine: Arc<Engine>, store: Arc<dyn SessionStore>) -> Self {
        SessionManager {
            engine,
            store,
            slots: Mutex::new(HashMap::new()),
        }
    }

    fn slot(&self, id: &str) -> Slot {
        self.slots
            .lock()
            .expect("slot table poisoned")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    pub async fn create(
        &self,
        source: PersonSource,
        order: Option<Vec<u8>>,
    ) -> ApiResult<SessionView> {
        let model = self.engine.model()?;
        let ck = self.engine.checkpoint_id().unwrap_or_default().to_string();
        let id = uuid::Uuid::new_v4().to_string();
        let store = self.store.clone();
        let session = blocking(move || {
            let s = Session::create(&model, &ck, id, source, order)?;
            store.save(&s)?;
            Ok(s)
        })
        .await?;
        let view = session.view();
        *self.slot(&view.id).lock().await = Some(session);
        Ok(view)
    }

    /// Runs `f` on a copy of the session; the copy replaces the live session only after a
    /// successful save, so any error leaves the session unchanged.
    async fn with_session<R: Send + 'static>(
        &self,
        id: &str,
        f: impl FnOnce(&mut Session, &Engine) -> ApiResult<R> + Send + 'static,
    ) -> ApiResult<R> {
        check_id(id)?;
        let slot = self.slot(id);
        let mut guard = slot.lock().await;
        let live = guard.clone();
        let engine = self.engine.clone();
        let store = self.store.clone();
        let id = id.to_string();
        let (next, out) = blocking(move || {
            let current = match live {
                Some(s) => s,
                None => {
                    let stored = store.load(&id)?.ok_or_else(|| ApiError::not_found(&id))?;
                    restore(&engine, stored)?
                }
            };
            let mut next = current.clone();
            let out = f(&mut next, &engine)?;
            if next != current {
                store.save(&next)?;
            }
            Ok((next, out))
        })
        .await?;
        *guard = Some(next);
        Ok(out)
    }

    pub async fn get(&self, id: &str) -> ApiResult<SessionView> {
        self.with_session(id, |s, _| Ok(s.view())).await
    }

    pub async fn add_garment(
        &self,
        id: &str,
        origin: GarmentOrigin,
        label: u8,
        position: Option<usize>,
    ) -> ApiResult<SessionView> {
        let model = self.engine.model()?;
        self.with_session(id, move |s, _| {
            s.add_garment(&model, origin, label, position)?;
            Ok(s.view())
        })
        .await
    }

    pub async fn reorder(&self, id: &str, permutation: Vec<usize>) -> ApiResult<SessionView> {
        self.with_session(id, move |s, _| {
            s.reorder(&permutation)?;
            Ok(s.view())
        })
        .await
    }

    pub async fn push_tweak(
        &self,
        id: &str,
        tweak: Tweak,
        replace: bool,
    ) -> ApiResult<SessionView> {
        let model = self.engine.model()?;
        self.with_session(id, move |s, engine| {
            s.push_tweak(&model, &engine.directions, tweak, replace)?;
            Ok(s.view())
        })
        .await
    }

    pub async fn pop_tweak(&self, id: &str) -> ApiResult<SessionView> {
        self.with_session(id, |s, _| {
            s.pop_tweak()?;
            Ok(s.view())
        })
        .await
    }

    /// PNG bytes and whether they were served from the cache.
    pub async fn render(&self, id: &str) -> ApiResult<(Vec<u8>, bool)> {
        let model = self.engine.model()?;
        self.with_session(id, move |s, engine| s.render(&model, &engine.directions))
            .await
    }

    pub async fn thumbnail(&self, id: &str, index: usize) -> ApiResult<Vec<u8>> {
        self.with_session(id, move |s, _| s.thumbnail(index)).await
    }

    /// Drops the in-memory copy; the next request reloads from the store.
    pub async fn evict(&self, id: &str) {
        let slot = self.slot(id);
        *slot.lock().await = None;
    }
}
