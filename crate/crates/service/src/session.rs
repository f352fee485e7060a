//! Recording sessions and their append-only logs.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use homeloc_core::ingest::{read_session, LabelSample, LogRecord, RssiSample, SessionLog};
use homeloc_core::FloorPlan;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tracing::info;

use crate::error::ServiceError;
use crate::events::{Event, LabelEcho};

const META_FILE: &str = "session.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Recording,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub flat: String,
    pub tag_id: String,
    pub state: SessionState,
    pub started_at: i64,
    pub stopped_at: Option<i64>,
}

struct Inner {
    sessions: BTreeMap<String, Session>,
    logs: HashMap<String, SessionLog>,
}

/// Session registry rooted at a directory holding one subdirectory per
/// session. All writes go through one lock, so log order is the order
/// clients observe on the event channel.
pub struct SessionStore {
    root: PathBuf,
    events: broadcast::Sender<Event>,
    inner: Mutex<Inner>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError {
    let path = path.to_path_buf();
    move |source| ServiceError::Io { path, source }
}

fn safe_id(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl SessionStore {
    /// Loads every session found under `root`. Sessions left recording by a
    /// previous run keep recording and their logs are appended to.
    pub fn open(root: &Path, events: broadcast::Sender<Event>) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        let mut sessions = BTreeMap::new();
        let mut logs = HashMap::new();
        for entry in std::fs::read_dir(root).map_err(io_err(root))? {
            let dir = entry.map_err(io_err(root))?.path();
            let meta = dir.join(META_FILE);
            if !meta.is_file() {
                continue;
            }
            let text = std::fs::read_to_string(&meta).map_err(io_err(&meta))?;
            let s: Session = serde_json::from_str(&text)
                .map_err(|e| ServiceError::BadRequest(format!("{}: {e}", meta.display())))?;
            if s.state == SessionState::Recording {
                logs.insert(s.session_id.clone(), SessionLog::open(&dir)?);
            }
            sessions.insert(s.session_id.clone(), s);
        }
        Ok(Self {
            root: root.to_path_buf(),
            events,
            inner: Mutex::new(Inner { sessions, logs }),
        })
    }

    pub fn dir(&self, session_id: &str) -> PathBuf {
        self.root.join(safe_id(session_id))
    }

    fn write_meta(&self, s: &Session) -> Result<(), ServiceError> {
        let path = self.dir(&s.session_id).join(META_FILE);
        let text = serde_json::to_string_pretty(s).expect("session serializes");
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn start(&self, flat: &str, tag_id: &str, now_ms: i64) -> Result<Session, ServiceError> {
        let mut inner = self.inner.lock().expect("session lock");
        if let Some(active) = inner
            .sessions
            .values()
            .find(|s| s.tag_id == tag_id && s.state == SessionState::Recording)
        {
            return Err(ServiceError::AlreadyRecording {
                tag_id: tag_id.to_owned(),
                session_id: active.session_id.clone(),
            });
        }
        let base = format!("{}-{now_ms}", safe_id(tag_id));
        let mut session_id = base.clone();
        let mut n = 1;
        while inner.sessions.contains_key(&session_id) || self.dir(&session_id).exists() {
            n += 1;
            session_id = format!("{base}-{n}");
        }
        let session = Session {
            session_id: session_id.clone(),
            flat: flat.to_owned(),
            tag_id: tag_id.to_owned(),
            state: SessionState::Recording,
            started_at: now_ms,
            stopped_at: None,
        };
        let log = SessionLog::open(&self.dir(&session_id))?;
        self.write_meta(&session)?;
        inner.logs.insert(session_id.clone(), log);
        inner.sessions.insert(session_id, session.clone());
        info!(session = %session.session_id, tag = tag_id, "session started");
        let _ = self.events.send(Event::Session(session.clone()));
        Ok(session)
    }

    pub fn stop(&self, session_id: &str, now_ms: i64) -> Result<Session, ServiceError> {
        let mut inner = self.inner.lock().expect("session lock");
        let session = inner
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::NoSuchSession(session_id.to_owned()))?
            .clone();
        if session.state != SessionState::Recording {
            return Err(ServiceError::SessionNotRecording(session_id.to_owned()));
        }
        if let Some(mut log) = inner.logs.remove(session_id) {
            log.flush()?;
        }
        let stopped = Session {
            state: SessionState::Stopped,
            stopped_at: Some(now_ms.max(session.started_at)),
            ..session
        };
        self.write_meta(&stopped)?;
        inner.sessions.insert(session_id.to_owned(), stopped.clone());
        info!(session = session_id, "session stopped");
        let _ = self.events.send(Event::Session(stopped.clone()));
        Ok(stopped)
    }

    pub fn list(&self) -> Vec<Session> {
        self.inner
            .lock()
            .expect("session lock")
            .sessions
            .values()
            .cloned()
            .collect()
    }

    pub fn get(&self, session_id: &str) -> Result<Session, ServiceError> {
        self.inner
            .lock()
            .expect("session lock")
            .sessions
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::NoSuchSession(session_id.to_owned()))
    }

    /// Validates, persists and echoes one label.
    pub fn submit_label(
        &self,
        session_id: &str,
        t_ms: i64,
        x_px: f64,
        y_px: f64,
        floorplan: &FloorPlan,
    ) -> Result<LabelEcho, ServiceError> {
        let mut inner = self.inner.lock().expect("session lock");
        let session = inner
            .sessions
            .get(session_id)
            .ok_or_else(|| ServiceError::NoSuchSession(session_id.to_owned()))?;
        if session.state != SessionState::Recording {
            return Err(ServiceError::SessionNotRecording(session_id.to_owned()));
        }
        if !(x_px.is_finite() && y_px.is_finite() && floorplan.contains(x_px, y_px)) {
            return Err(ServiceError::OutOfCanvas {
                x: x_px,
                y: y_px,
                width: floorplan.width_px,
                height: floorplan.height_px,
            });
        }
        let label = LabelSample {
            t_ms,
            x_px,
            y_px,
            session_id: session_id.to_owned(),
        };
        let log = inner.logs.get_mut(session_id).expect("recording sessions have a log");
        let seq = log.append(&LogRecord::Label(label.clone()))?;
        log.flush()?;
        let echo = LabelEcho {
            session_id: session_id.to_owned(),
            seq,
            label,
            room: floorplan.room_of(x_px, y_px).cloned(),
        };
        let _ = self.events.send(Event::Label(echo.clone()));
        Ok(echo)
    }

    fn append_for_tag(&self, tag_id: &str, rec: &LogRecord) -> Result<(), ServiceError> {
        let mut inner = self.inner.lock().expect("session lock");
        let Inner { sessions, logs } = &mut *inner;
        for (id, log) in logs.iter_mut() {
            if sessions.get(id).is_some_and(|s| s.tag_id == tag_id) {
                log.append(rec)?;
            }
        }
        Ok(())
    }

    /// Appends a raw reading to the tag's recording session, if any.
    pub fn record_sample(&self, sample: &RssiSample) -> Result<(), ServiceError> {
        self.append_for_tag(&sample.tag_id, &LogRecord::Rssi(sample.clone()))
    }

    /// Appends an emitted position or gap to the tag's recording session, if
    /// any. Position records are flushed so the log never lags what clients saw.
    pub fn record_output(&self, tag_id: &str, rec: &LogRecord) -> Result<(), ServiceError> {
        self.append_for_tag(tag_id, rec)?;
        self.flush()
    }

    pub fn flush(&self) -> Result<(), ServiceError> {
        let mut inner = self.inner.lock().expect("session lock");
        for log in inner.logs.values_mut() {
            log.flush()?;
        }
        Ok(())
    }

    /// Everything logged for a session, in append order.
    pub fn records(&self, session_id: &str) -> Result<Vec<(u64, LogRecord)>, ServiceError> {
        self.get(session_id)?;
        self.flush()?;
        Ok(read_session(&self.dir(session_id))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(dir: &Path) -> (SessionStore, broadcast::Receiver<Event>) {
        let (tx, rx) = broadcast::channel(64);
        (SessionStore::open(dir, tx).unwrap(), rx)
    }

    fn flat() -> FloorPlan {
        FloorPlan::bare("A", 460, 753, 5800.0, 9500.0)
    }

    #[test]
    fn lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let (s, _rx) = store(dir.path());
        let a = s.start("A", "tag0", 1000).unwrap();
        assert!(matches!(
            s.start("A", "tag0", 1500),
            Err(ServiceError::AlreadyRecording { .. })
        ));
        let b = s.start("A", "tag1", 1500).unwrap();
        assert_ne!(a.session_id, b.session_id);
        let stopped = s.stop(&a.session_id, 3000).unwrap();
        assert_eq!((stopped.state, stopped.stopped_at), (SessionState::Stopped, Some(3000)));
        assert!(matches!(
            s.stop(&a.session_id, 4000),
            Err(ServiceError::SessionNotRecording(_))
        ));
        assert!(matches!(s.stop("nope", 4000), Err(ServiceError::NoSuchSession(_))));
        drop(s);

        let (reopened, _rx) = store(dir.path());
        assert_eq!(reopened.get(&a.session_id).unwrap(), stopped);
        assert_eq!(reopened.get(&b.session_id).unwrap().state, SessionState::Recording);
    }

    #[test]
    fn labels_validated_persisted_and_echoed() {
        let dir = tempfile::tempdir().unwrap();
        let (s, mut rx) = store(dir.path());
        let id = s.start("A", "tag0", 0).unwrap().session_id;
        assert!(matches!(rx.try_recv(), Ok(Event::Session(_))));
        let echo = s.submit_label(&id, 10, 288.0, 525.0, &flat()).unwrap();
        assert_eq!((echo.label.x_px, echo.label.y_px), (288.0, 525.0));
        assert!(matches!(rx.try_recv(), Ok(Event::Label(e)) if e == echo));
        assert!(matches!(
            s.submit_label(&id, 11, -1.0, 10.0, &flat()),
            Err(ServiceError::OutOfCanvas { .. })
        ));
        s.stop(&id, 20).unwrap();
        assert!(matches!(
            s.submit_label(&id, 21, 1.0, 1.0, &flat()),
            Err(ServiceError::SessionNotRecording(_))
        ));
        let recs = s.records(&id).unwrap();
        assert_eq!(recs, vec![(echo.seq, LogRecord::Label(echo.label))]);
    }

    #[test]
    fn samples_go_to_matching_tag_only() {
        let dir = tempfile::tempdir().unwrap();
        let (s, _rx) = store(dir.path());
        let id = s.start("A", "tag0", 0).unwrap().session_id;
        for tag in ["tag0", "tag1"] {
            s.record_sample(&RssiSample {
                t_ms: 5,
                source_id: "a1".into(),
                tech: homeloc_core::Tech::Uwb,
                rssi_dbm: -70.5,
                tag_id: tag.into(),
            })
            .unwrap();
        }
        assert_eq!(s.records(&id).unwrap().len(), 1);
    }
}
