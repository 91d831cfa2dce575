use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use elicit_core::engine::session::{append_event, write_events};
use elicit_core::engine::{Event, Session, SessionStatus};
use elicit_core::menu::MenuResult;
use elicit_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const INDEX_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: String,
    /// When set, every request needs `Authorization: Bearer <token>`.
    pub auth_token: Option<String>,
}

impl ServiceConfig {
    /// Reads `PP_DATA_DIR`, `PP_BIND_ADDR` and `PP_AUTH_TOKEN`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            data_dir: var("PP_DATA_DIR").map_or_else(|| PathBuf::from("elicit-data"), PathBuf::from),
            bind: var("PP_BIND_ADDR").unwrap_or_else(|| "127.0.0.1:8080".into()),
            auth_token: var("PP_AUTH_TOKEN"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DmMode {
    #[default]
    Live,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct IndexEntry {
    pub log: String,
    pub created_ms: u64,
    pub updated_ms: u64,
    pub dm_mode: DmMode,
    pub idempotency_key: Option<String>,
    /// The creation request, compared on idempotent retries.
    pub request: serde_json::Value,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    schema_version: u32,
    sessions: BTreeMap<String, IndexEntry>,
}

pub(crate) struct Entry {
    pub id: String,
    pub session: Session,
    pub meta: IndexEntry,
    /// A refit, query search, simulated run or menu computation is running.
    pub busy: bool,
    pub last_error: Option<String>,
    /// Events already on disk.
    pub persisted: usize,
    pub menus: HashMap<(usize, usize), MenuResult>,
}

impl Entry {
    pub fn status(&self) -> &'static str {
        if self.busy || self.session.refit_pending() {
            return "busy";
        }
        match self.session.status() {
            SessionStatus::AwaitingResponse => "awaiting-response",
            SessionStatus::ReadyForQuery => "ready",
            SessionStatus::Finished => "finished",
        }
    }

    /// Whether background work is needed to reach the next stable state.
    fn needs_job(&self) -> bool {
        match self.session.status() {
            _ if self.session.refit_pending() => true,
            SessionStatus::ReadyForQuery => true,
            SessionStatus::AwaitingResponse => self.meta.dm_mode == DmMode::Simulated,
            SessionStatus::Finished => false,
        }
    }
}

pub(crate) type SharedEntry = Arc<Mutex<Entry>>;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, SharedEntry>>,
    index: Mutex<Index>,
    pub(crate) create_lock: tokio::sync::Mutex<()>,
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

fn append_events(path: &Path, events: &[Event]) -> Result<()> {
    if events.is_empty() {
        return Ok(());
    }
    let file = OpenOptions::new().append(true).open(path)?;
    let mut w = BufWriter::new(&file);
    for e in events {
        append_event(&mut w, e)?;
    }
    w.flush()?;
    drop(w);
    file.sync_data()?;
    Ok(())
}

fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<&File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp)?;
    {
        let mut w = BufWriter::new(&file);
        write(&mut w)?;
        w.flush()?;
    }
    file.sync_all()?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

/// Advance a session by one unit of background work. Returns false once it
/// needs outside input or is finished.
fn step(s: &mut Session, simulated: bool) -> Result<bool> {
    if s.refit_pending() {
        s.complete_refit()?;
        return Ok(true);
    }
    match s.status() {
        SessionStatus::ReadyForQuery => {
            s.next_query()?;
            Ok(true)
        }
        SessionStatus::AwaitingResponse if simulated => {
            s.respond_simulated()?;
            Ok(true)
        }
        _ => Ok(false),
    }
}

impl AppState {
    /// Open the data directory, recovering every indexed session from its
    /// log. Sessions interrupted between a response and the following refit
    /// or query resume in the background.
    pub fn open(config: ServiceConfig) -> Result<Self> {
        std::fs::create_dir_all(config.data_dir.join("sessions"))?;
        let index_path = config.data_dir.join("index.json");
        let index: Index = if index_path.exists() {
            serde_json::from_reader(std::io::BufReader::new(File::open(&index_path)?))?
        } else {
            Index {
                schema_version: INDEX_SCHEMA_VERSION,
                ..Default::default()
            }
        };
        if index.schema_version != INDEX_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported index schema version {}",
                index.schema_version
            )));
        }
        let mut sessions = HashMap::new();
        let mut resume = Vec::new();
        for (id, meta) in &index.sessions {
            let path = config.data_dir.join(&meta.log);
            let session = match Session::load_log(&path, false) {
                Ok(s) => s,
                Err(e) => {
                    log::error!("cannot recover session {id}: {e}");
                    continue;
                }
            };
            write_atomic(&path, |w| write_events(w, session.events()))?;
            let mut entry = Entry {
                id: id.clone(),
                persisted: session.events().len(),
                session,
                meta: meta.clone(),
                busy: false,
                last_error: None,
                menus: HashMap::new(),
            };
            entry.busy = entry.needs_job();
            let shared = Arc::new(Mutex::new(entry));
            if shared.lock().expect("fresh lock").busy {
                resume.push(shared.clone());
            }
            sessions.insert(id.clone(), shared);
        }
        log::info!("recovered {} sessions from {}", sessions.len(), config.data_dir.display());
        let state = Self {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(sessions),
                index: Mutex::new(index),
                create_lock: tokio::sync::Mutex::new(()),
            }),
        };
        for entry in resume {
            state.start_job(entry);
        }
        Ok(state)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub(crate) fn create_lock(&self) -> &tokio::sync::Mutex<()> {
        &self.inner.create_lock
    }

    pub(crate) fn get(&self, id: &str) -> Option<SharedEntry> {
        self.inner.sessions.read().expect("session map lock").get(id).cloned()
    }

    pub(crate) fn find_idempotent(&self, key: &str) -> Option<(String, IndexEntry)> {
        let index = self.inner.index.lock().expect("index lock");
        index
            .sessions
            .iter()
            .find(|(_, m)| m.idempotency_key.as_deref() == Some(key))
            .map(|(id, m)| (id.clone(), m.clone()))
    }

    fn save_index(&self, index: &Index) -> Result<()> {
        write_atomic(&self.inner.config.data_dir.join("index.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, index)?;
            Ok(())
        })
    }

    /// Persist a new session and register it.
    pub(crate) fn insert(
        &self,
        session: Session,
        dm_mode: DmMode,
        idempotency_key: Option<String>,
        request: serde_json::Value,
    ) -> Result<SharedEntry> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let log = format!("sessions/{id}.ndjson");
        write_atomic(&self.inner.config.data_dir.join(&log), |w| write_events(w, session.events()))?;
        let now = now_ms();
        let meta = IndexEntry {
            log,
            created_ms: now,
            updated_ms: now,
            dm_mode,
            idempotency_key,
            request,
        };
        {
            let mut index = self.inner.index.lock().expect("index lock");
            index.sessions.insert(id.clone(), meta.clone());
            self.save_index(&index)?;
        }
        let mut entry = Entry {
            id: id.clone(),
            persisted: session.events().len(),
            session,
            meta,
            busy: false,
            last_error: None,
            menus: HashMap::new(),
        };
        entry.busy = entry.needs_job();
        let start = entry.busy;
        let shared = Arc::new(Mutex::new(entry));
        self.inner
            .sessions
            .write()
            .expect("session map lock")
            .insert(id, shared.clone());
        if start {
            self.start_job(shared.clone());
        }
        Ok(shared)
    }

    pub(crate) fn log_path(&self, entry: &Entry) -> PathBuf {
        self.inner.config.data_dir.join(&entry.meta.log)
    }

    /// Durably append the entry's unpersisted events.
    pub(crate) fn persist(&self, entry: &mut Entry) -> Result<()> {
        append_events(&self.log_path(entry), &entry.session.events()[entry.persisted..])?;
        entry.persisted = entry.session.events().len();
        self.touch(entry);
        Ok(())
    }

    /// Durably append `session`'s events beyond what `entry` has on disk,
    /// then make it the entry's state. On failure the entry is unchanged.
    pub(crate) fn commit(&self, entry: &mut Entry, session: Session) -> Result<()> {
        append_events(&self.log_path(entry), &session.events()[entry.persisted..])?;
        entry.persisted = session.events().len();
        entry.session = session;
        self.touch(entry);
        Ok(())
    }

    fn touch(&self, entry: &mut Entry) {
        entry.meta.updated_ms = now_ms();
        let mut index = self.inner.index.lock().expect("index lock");
        if let Some(m) = index.sessions.get_mut(&entry.id) {
            m.updated_ms = entry.meta.updated_ms;
        }
        if let Err(e) = self.save_index(&index) {
            log::warn!("cannot update index: {e}");
        }
    }

    /// Run background work for an entry already marked busy.
    pub(crate) fn start_job(&self, entry: SharedEntry) {
        let state = self.clone();
        std::thread::spawn(move || state.run_job(&entry));
    }

    /// Kick off background work if the session is idle but not stable.
    pub(crate) fn resume_if_idle(&self, shared: &SharedEntry, entry: &mut Entry) -> bool {
        if entry.busy || !entry.needs_job() {
            return false;
        }
        entry.busy = true;
        entry.last_error = None;
        self.start_job(shared.clone());
        true
    }

    fn run_job(&self, entry: &Mutex<Entry>) {
        let (mut s, simulated, path, mut written) = {
            let e = entry.lock().expect("entry lock");
            (
                e.session.clone(),
                e.meta.dm_mode == DmMode::Simulated,
                self.log_path(&e),
                e.persisted,
            )
        };
        let result = (|| -> Result<()> {
            while step(&mut s, simulated)? {
                append_events(&path, &s.events()[written..])?;
                written = s.events().len();
            }
            Ok(())
        })();
        let mut e = entry.lock().expect("entry lock");
        e.session = s;
        e.persisted = written;
        e.busy = false;
        e.last_error = result.err().map(|err| {
            log::error!("session {}: {err}", e.id);
            err.to_string()
        });
        if e.persisted < e.session.events().len() {
            if let Err(err) = self.persist(&mut e) {
                log::error!("session {}: {err}", e.id);
            }
        } else {
            self.touch(&mut e);
        }
    }
}
