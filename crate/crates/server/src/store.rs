//! Directory-per-session storage.
//!
//! ```text
//! <data_dir>/sessions/<id>/session.json          snapshot, no events or images
//! <data_dir>/sessions/<id>/events.jsonl          append-only event log
//! <data_dir>/sessions/<id>/iterations/<k>/{control,design,scaffold}.png
//! ```
//!
//! Blobs are written before the log and the log before the snapshot, so a
//! crash leaves at worst unreferenced files or log lines newer than the
//! snapshot. Snapshots and blobs are replaced atomically via rename.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use sketchloop_core::imaging::Png;
use sketchloop_core::session::{to_jsonl, Event, Iteration, IterationImages, Session};

use crate::state::SessionState;

const SNAPSHOT: &str = "session.json";
const EVENTS: &str = "events.jsonl";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

/// Sessions read back at startup plus everything that was skipped or lost.
#[derive(Debug, Default)]
pub struct Restored {
    pub sessions: Vec<Session>,
    pub warnings: Vec<String>,
}

struct Pending {
    dir: PathBuf,
    snapshot: Vec<u8>,
    events: String,
    blobs: Vec<(PathBuf, Png)>,
}

impl Store {
    pub fn open(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn blob_path(&self, id: &str, iteration: usize, name: &str) -> PathBuf {
        self.session_dir(id)
            .join("iterations")
            .join(iteration.to_string())
            .join(format!("{name}.png"))
    }

    /// Writes events and iterations added since the last save, then the
    /// snapshot.
    pub async fn save(&self, state: &mut SessionState) -> io::Result<()> {
        let session = &state.session;
        let id = session.id.0.clone();
        let new_events = &session.events[state.persisted_events.min(session.events.len())..];
        let mut blobs = Vec::new();
        for it in &session.iterations[state.persisted_iterations.min(session.iterations.len())..] {
            for (name, png) in named_images(&it.images) {
                blobs.push((self.blob_path(&id, it.meta.index, name), png.clone()));
            }
        }
        let pending = Pending {
            dir: self.session_dir(&id),
            snapshot: snapshot_bytes(session)?,
            events: to_jsonl(new_events),
            blobs,
        };
        let (events, iterations) = (session.events.len(), session.iterations.len());
        tokio::task::spawn_blocking(move || pending.write())
            .await
            .map_err(io::Error::other)??;
        state.persisted_events = events;
        state.persisted_iterations = iterations;
        Ok(())
    }

    pub fn restore(&self) -> Restored {
        let mut out = Restored::default();
        let entries = match fs::read_dir(self.root.join("sessions")) {
            Ok(entries) => entries,
            Err(e) => {
                out.warnings
                    .push(format!("cannot list stored sessions: {e}"));
                return out;
            }
        };
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            match self.restore_one(&dir, &mut out.warnings) {
                Ok(session) => out.sessions.push(session),
                Err(reason) => out.warnings.push(format!(
                    "skipping stored session {}: {reason}",
                    dir.display()
                )),
            }
        }
        out
    }

    fn restore_one(&self, dir: &Path, warnings: &mut Vec<String>) -> Result<Session, String> {
        let bytes =
            fs::read(dir.join(SNAPSHOT)).map_err(|e| format!("cannot read {SNAPSHOT}: {e}"))?;
        let mut session: Session =
            serde_json::from_slice(&bytes).map_err(|e| format!("corrupt {SNAPSHOT}: {e}"))?;
        let id = session.id.0.clone();

        session.events = match fs::read_to_string(dir.join(EVENTS)) {
            Ok(text) => read_events(&text, &id, warnings),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => {
                warnings.push(format!("session {id}: cannot read {EVENTS}: {e}"));
                Vec::new()
            }
        };
        match Session::replay(session.header(), &session.events) {
            Ok(replayed) if replayed.strokes == session.strokes => {}
            Ok(_) => warnings.push(format!(
                "session {id}: event log and snapshot disagree on strokes; keeping the snapshot"
            )),
            Err(e) => warnings.push(format!("session {id}: event log does not replay: {e}")),
        }

        for it in &mut session.iterations {
            it.images = self.read_images(&id, it, warnings);
        }
        Ok(session)
    }

    fn read_images(&self, id: &str, it: &Iteration, warnings: &mut Vec<String>) -> IterationImages {
        let k = it.meta.index;
        let mut load = |name: &str, required: bool| -> Option<Png> {
            let path = self.blob_path(id, k, name);
            let bytes = match fs::read(&path) {
                Ok(bytes) => bytes,
                Err(e) if e.kind() == io::ErrorKind::NotFound && !required => return None,
                Err(e) => {
                    warnings.push(format!(
                        "session {id}: iteration {k} {name} image missing: {e}"
                    ));
                    return None;
                }
            };
            let png = Png::from_bytes(bytes);
            match png.verify() {
                Ok(dims) if dims == (it.meta.width, it.meta.height) => Some(png),
                Ok(dims) => {
                    warnings.push(format!(
                        "session {id}: iteration {k} {name} image is {dims:?}, expected {:?}",
                        (it.meta.width, it.meta.height)
                    ));
                    None
                }
                Err(e) => {
                    warnings.push(format!(
                        "session {id}: iteration {k} {name} image unreadable: {e}"
                    ));
                    None
                }
            }
        };
        IterationImages {
            control: load("control", true),
            design: load("design", true),
            // absent when scaffolding failed at generation time
            scaffold: load("scaffold", false),
        }
    }
}

impl Pending {
    fn write(self) -> io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        for (path, png) in &self.blobs {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_atomic(path, png.as_bytes())?;
        }
        if !self.events.is_empty() {
            let mut log = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.dir.join(EVENTS))?;
            log.write_all(self.events.as_bytes())?;
            log.sync_data()?;
        }
        write_atomic(&self.dir.join(SNAPSHOT), &self.snapshot)
    }
}

fn named_images(images: &IterationImages) -> impl Iterator<Item = (&'static str, &Png)> {
    [
        ("control", images.control.as_ref()),
        ("design", images.design.as_ref()),
        ("scaffold", images.scaffold.as_ref()),
    ]
    .into_iter()
    .filter_map(|(name, png)| png.map(|p| (name, p)))
}

fn snapshot_bytes(session: &Session) -> io::Result<Vec<u8>> {
    let mut snapshot = session.clone();
    snapshot.events.clear();
    for it in &mut snapshot.iterations {
        it.images = IterationImages::default();
    }
    serde_json::to_vec_pretty(&snapshot).map_err(io::Error::other)
}

fn read_events(text: &str, id: &str, warnings: &mut Vec<String>) -> Vec<Event> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(event) => events.push(event),
            Err(e) => warnings.push(format!(
                "session {id}: skipping unreadable event on line {}: {e}",
                i + 1
            )),
        }
    }
    events
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}
