use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sketchloop_core::analogy::{AnalogyEngine, InspirationSet};
use sketchloop_core::backends::{BackendKind, Backends};
use sketchloop_core::session::{
    EventBody, IterationMeta, JobOutcome, Session, SessionHeader, SessionId,
};
use tokio::sync::{broadcast, watch, Mutex};
use tokio_util::sync::CancellationToken;

use crate::config::{ConfigError, ServiceConfig};
use crate::error::ApiError;
use crate::store::Store;

/// Finished jobs kept in memory per session for status queries.
const RETAINED_JOBS: usize = 256;

pub fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Superseded,
    Done,
    Failed,
}

impl JobState {
    pub fn is_final(self) -> bool {
        matches!(
            self,
            JobState::Superseded | JobState::Done | JobState::Failed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: u64,
    pub state: JobState,
    pub stroke_count: u32,
    pub seed: u64,
    pub guidance: f64,
    pub prompt: String,
    pub iteration: Option<usize>,
    pub error: Option<String>,
    pub backend: Option<BackendKind>,
}

pub struct JobRecord {
    pub view: JobView,
    pub cancel: CancellationToken,
    state_tx: watch::Sender<JobState>,
}

impl JobRecord {
    pub fn new(view: JobView) -> Self {
        let (state_tx, _) = watch::channel(view.state);
        Self {
            view,
            cancel: CancellationToken::new(),
            state_tx,
        }
    }

    pub fn set_state(&mut self, state: JobState) {
        self.view.state = state;
        self.state_tx.send_replace(state);
        // A finished job must still run to the end to persist its result.
        if state == JobState::Superseded {
            self.cancel.cancel();
        }
    }

    pub fn watch(&self) -> watch::Receiver<JobState> {
        self.state_tx.subscribe()
    }
}

/// Server-push notification, delivered on `GET /sessions/{id}/updates`.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Update {
    Job {
        job: JobView,
    },
    Iteration {
        iteration: IterationMeta,
        underlay: Option<usize>,
    },
    Canvas {
        stroke_count: u32,
        displayed: Option<usize>,
        underlay: Option<usize>,
    },
}

impl Update {
    pub fn name(&self) -> &'static str {
        match self {
            Update::Job { .. } => "job",
            Update::Iteration { .. } => "iteration",
            Update::Canvas { .. } => "canvas",
        }
    }
}

pub struct SessionState {
    pub session: Session,
    pub jobs: BTreeMap<u64, JobRecord>,
    pub next_job: u64,
    pub rng: ChaCha8Rng,
    /// Most recent inspiration set shown to the user.
    pub inspirations: Option<InspirationSet>,
    pub inspiration_requests: u64,
    pub persisted_events: usize,
    pub persisted_iterations: usize,
}

impl SessionState {
    /// Milliseconds since the session was created.
    pub fn clock(&self) -> u64 {
        now_unix_ms().saturating_sub(self.session.created_at)
    }

    pub fn record(&mut self, body: EventBody) {
        let at = self.clock();
        self.session
            .record(body, at)
            .expect("lifecycle events carry no canvas state");
    }

    pub fn latest_job(&self) -> Option<u64> {
        self.jobs.keys().next_back().copied()
    }

    /// Marks every unfinished job superseded and logs it.
    pub fn supersede_all(&mut self) -> Vec<JobView> {
        let live: Vec<u64> = self
            .jobs
            .iter()
            .filter(|(_, j)| !j.view.state.is_final())
            .map(|(&id, _)| id)
            .collect();
        let mut changed = Vec::new();
        for id in live {
            let job = self.jobs.get_mut(&id).expect("listed above");
            job.set_state(JobState::Superseded);
            changed.push(job.view.clone());
            self.record(EventBody::GenerationCompleted {
                job_id: id,
                outcome: JobOutcome::Superseded,
                iteration: None,
                error: None,
                warnings: Vec::new(),
            });
        }
        changed
    }

    pub fn prune_jobs(&mut self) {
        while self.jobs.len() > RETAINED_JOBS {
            let oldest_final = self
                .jobs
                .iter()
                .find(|(_, j)| j.view.state.is_final())
                .map(|(&id, _)| id);
            match oldest_final {
                Some(id) => {
                    self.jobs.remove(&id);
                }
                None => break,
            }
        }
    }

    pub fn canvas_update(&self) -> Update {
        Update::Canvas {
            stroke_count: self.session.active_stroke_count(),
            displayed: self.session.displayed,
            underlay: self.session.underlay,
        }
    }
}

pub struct SessionHandle {
    pub id: SessionId,
    pub state: Mutex<SessionState>,
    pub updates: broadcast::Sender<Update>,
    /// Held by the job currently talking to the backends.
    pub run_lock: Mutex<()>,
}

impl SessionHandle {
    pub fn notify(&self, update: Update) {
        // No subscribers is the common case.
        let _ = self.updates.send(update);
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    pub backends: Backends,
    pub analogy: AnalogyEngine,
    pub store: Option<Store>,
    sessions: RwLock<HashMap<SessionId, Arc<SessionHandle>>>,
    ordinal: std::sync::atomic::AtomicU64,
}

impl AppState {
    /// Builds backends from the config and restores persisted sessions.
    pub fn from_config(config: ServiceConfig) -> Result<Arc<Self>, ConfigError> {
        config.validate()?;
        let backends = config.backends.build()?;
        Self::with_backends(config, backends)
    }

    pub fn with_backends(
        config: ServiceConfig,
        backends: Backends,
    ) -> Result<Arc<Self>, ConfigError> {
        let templates = config.templates()?;
        let analogy = AnalogyEngine::new(backends.llm.clone(), templates);
        let store = match &config.server.data_dir {
            Some(dir) => Some(Store::open(dir).map_err(|source| ConfigError::Io {
                path: dir.display().to_string(),
                source,
            })?),
            None => None,
        };
        let app = Arc::new(Self {
            config,
            backends,
            analogy,
            store,
            sessions: RwLock::new(HashMap::new()),
            ordinal: std::sync::atomic::AtomicU64::new(0),
        });
        if let Some(store) = &app.store {
            let restored = store.restore();
            for warning in &restored.warnings {
                tracing::warn!("{warning}");
            }
            let count = restored.sessions.len();
            for session in restored.sessions {
                app.insert_restored(session);
            }
            if count > 0 {
                tracing::info!(sessions = count, "restored sessions");
            }
        }
        Ok(app)
    }

    fn session_rng(&self) -> ChaCha8Rng {
        let ordinal = self
            .ordinal
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        match self.config.server.rng_seed {
            Some(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(ordinal);
                rng
            }
            None => ChaCha8Rng::from_os_rng(),
        }
    }

    pub fn create_session(
        &self,
        mut header: SessionHeader,
    ) -> Result<Arc<SessionHandle>, ApiError> {
        let mut rng = self.session_rng();
        header.initial_seed = sketchloop_core::guidance::initial_seed(&mut rng);
        let session = Session::new(header)?;
        Ok(self.insert_with_rng(session, rng, 1))
    }

    fn insert_restored(&self, session: Session) -> Arc<SessionHandle> {
        let next_job = session
            .events
            .iter()
            .filter_map(|e| match &e.body {
                EventBody::GenerationStarted { job_id, .. } => Some(*job_id),
                _ => None,
            })
            .max()
            .map_or(1, |id| id + 1);
        let rng = self.session_rng();
        self.insert_with_rng(session, rng, next_job)
    }

    fn insert_with_rng(
        &self,
        session: Session,
        rng: ChaCha8Rng,
        next_job: u64,
    ) -> Arc<SessionHandle> {
        let (updates, _) = broadcast::channel(self.config.server.update_buffer.max(1));
        let id = session.id.clone();
        let persisted_events = if self.store.is_some() {
            session.events.len()
        } else {
            0
        };
        let persisted_iterations = if self.store.is_some() {
            session.iterations.len()
        } else {
            0
        };
        let handle = Arc::new(SessionHandle {
            id: id.clone(),
            state: Mutex::new(SessionState {
                session,
                jobs: BTreeMap::new(),
                next_job,
                rng,
                inspirations: None,
                inspiration_requests: 0,
                persisted_events,
                persisted_iterations,
            }),
            updates,
            run_lock: Mutex::new(()),
        });
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, handle.clone());
        handle
    }

    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&SessionId(id.to_string()))
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<SessionId> = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Writes whatever the store has not seen yet. Errors are logged, not
    /// returned: the in-memory session stays authoritative.
    pub async fn persist(&self, state: &mut SessionState) {
        let Some(store) = &self.store else { return };
        match store.save(state).await {
            Ok(()) => {}
            Err(e) => {
                tracing::error!(session = %state.session.id, error = %e, "failed to persist session")
            }
        }
    }
}
