use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{ApiError, ApiResult};
use crate::session::{person_from_blob, person_to_blob, Session, SessionRecord};

/// What a store hands back: the record plus whatever tensors and render it could read.
pub struct StoredSession {
    pub record: SessionRecord,
    pub person: Option<dressup_core::model::PersonRepresentation<f32>>,
    pub render: Option<Vec<u8>>,
}

/// Durable session storage. `save` must be all-or-nothing.
pub trait SessionStore: Send + Sync {
    fn save(&self, session: &Session) -> ApiResult<()>;
    fn load(&self, id: &str) -> ApiResult<Option<StoredSession>>;
}

/// One directory per session: `session.json` names the revisioned blob and render files,
/// and its atomic rename is the commit point.
pub struct FsStore {
    root: PathBuf,
}

const RECORD: &str = "session.json";

#[derive(serde::Serialize, serde::Deserialize)]
struct OnDisk {
    #[serde(flatten)]
    record: SessionRecord,
    revision: u64,
    blob_file: String,
    #[serde(default)]
    render_file: Option<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::internal(format!("{}: {e}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> ApiResult<()> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(path, e)
    })
}

impl FsStore {
    pub fn new(root: impl Into<PathBuf>) -> ApiResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        Ok(FsStore { root })
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn current(&self, id: &str) -> ApiResult<Option<OnDisk>> {
        let path = self.dir(id).join(RECORD);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| ApiError::internal(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl SessionStore for FsStore {
    fn save(&self, s: &Session) -> ApiResult<()> {
        let dir = self.dir(&s.record.id);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let previous = self.current(&s.record.id).ok().flatten();
        let revision = previous.as_ref().map_or(1, |p| p.revision + 1);
        let blob_file = format!("person-{revision}.bin");
        write_atomic(&dir.join(&blob_file), &person_to_blob(&s.person))?;
        let render_file = match &s.render {
            Some(png) => {
                let name = format!("render-{revision}.png");
                write_atomic(&dir.join(&name), png)?;
                Some(name)
            }
            None => None,
        };
        let disk = OnDisk {
            record: s.record.clone(),
            revision,
            blob_file,
            render_file,
        };
        let json =
            serde_json::to_vec_pretty(&disk).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&dir.join(RECORD), &json)?;
        // Superseded files are garbage once the record points past them.
        if let Some(p) = previous {
            let _ = fs::remove_file(dir.join(p.blob_file));
            if let Some(r) = p.render_file {
                let _ = fs::remove_file(dir.join(r));
            }
        }
        Ok(())
    }

    fn load(&self, id: &str) -> ApiResult<Option<StoredSession>> {
        let Some(disk) = self.current(id)? else {
            return Ok(None);
        };
        let dir = self.dir(id);
        let person = fs::read(dir.join(&disk.blob_file))
            .ok()
            .and_then(|b| person_from_blob(&b));
        let render = disk.render_file.and_then(|r| fs::read(dir.join(r)).ok());
        Ok(Some(StoredSession {
            record: disk.record,
            person,
            render,
        }))
    }
}
