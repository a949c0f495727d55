//! HTTP routes. Mutating routes lock the session for their whole duration,
//! so one session's events are logged in arrival order.
//!
//! Routes that start a generation accept `?wait=true` to respond only once
//! the job has finished; a failed job then answers 502 with the backend kind.

use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use sketchloop_core::analogy::{Category, InspirationRequest, InspirationSet};
use sketchloop_core::session::{
    compute_log_stats, to_jsonl, CanvasSize, EventBody, IterationMeta, LogStats, Point,
    SessionHeader, SessionId, Stroke, StrokeId,
};
use tokio::sync::broadcast::error::RecvError;

use crate::error::ApiError;
use crate::jobs::{self, Scheduled};
use crate::state::{now_unix_ms, AppState, JobView, SessionHandle, SessionState, Update};

/// Stroke width used when a client omits it, in canvas pixels.
pub const DEFAULT_STROKE_WIDTH: f64 = 3.0;

/// Jobs listed in the session view, newest last.
const VIEW_JOBS: usize = 16;

type Shared = State<Arc<AppState>>;

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/strokes", post(add_stroke))
        .route("/sessions/{id}/strokes/{sid}", delete(erase_stroke))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/clear", post(clear))
        .route("/sessions/{id}/remix", post(remix))
        .route("/sessions/{id}/inspirations", post(request_inspirations))
        .route("/sessions/{id}/inspiration", post(select_inspiration))
        .route("/sessions/{id}/prompt", axum::routing::put(edit_prompt))
        .route("/sessions/{id}/generate", post(generate))
        .route("/sessions/{id}/jobs/{job}", get(get_job))
        .route(
            "/sessions/{id}/iterations/{k}/{image}",
            get(iteration_image),
        )
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/stats", get(stats))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/updates", get(updates))
        .with_state(app)
}

#[derive(Debug, Default, Deserialize)]
pub struct WaitQuery {
    #[serde(default)]
    pub wait: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct IterationView {
    #[serde(flatten)]
    pub meta: IterationMeta,
    pub design_url: Option<String>,
    pub scaffold_url: Option<String>,
    pub control_url: Option<String>,
}

/// Everything a client needs to draw the three panels.
#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: SessionId,
    pub subject: String,
    pub concept: String,
    pub inspiration: Option<String>,
    pub inspiration_category: Option<Category>,
    pub manual_prompt: Option<String>,
    /// Prompt the next generation will use.
    pub prompt: String,
    pub canvas: CanvasSize,
    pub seed: u64,
    pub stroke_count: u32,
    /// Adherence the next generation will use.
    pub guidance: f64,
    pub strokes: Vec<Stroke>,
    pub iterations: Vec<IterationView>,
    pub displayed: Option<usize>,
    pub underlay: Option<usize>,
    pub underlay_alpha: f32,
    pub inspirations: Option<InspirationSet>,
    pub jobs: Vec<JobView>,
    pub created_at: u64,
}

fn view(app: &AppState, st: &SessionState) -> SessionView {
    let s = &st.session;
    let url = |k: usize, name: &str, present: bool| {
        present.then(|| format!("/sessions/{}/iterations/{k}/{name}", s.id))
    };
    SessionView {
        id: s.id.clone(),
        subject: s.subject.clone(),
        concept: s.concept.clone(),
        inspiration: s.inspiration.clone(),
        inspiration_category: s.inspiration_category,
        manual_prompt: s.manual_prompt.clone(),
        prompt: jobs::current_prompt(app, st),
        canvas: s.canvas,
        seed: s.seed,
        stroke_count: s.active_stroke_count(),
        guidance: app.config.guidance.at(s.active_stroke_count()),
        strokes: s.strokes.clone(),
        iterations: s
            .iterations
            .iter()
            .map(|it| {
                let k = it.meta.index;
                IterationView {
                    meta: it.meta.clone(),
                    design_url: url(k, "design", it.images.design.is_some()),
                    scaffold_url: url(k, "scaffold", it.images.scaffold.is_some()),
                    control_url: url(k, "control", it.images.control.is_some()),
                }
            })
            .collect(),
        displayed: s.displayed,
        underlay: s.underlay,
        underlay_alpha: app.config.scaffold.underlay_alpha,
        inspirations: st.inspirations.clone(),
        jobs: st
            .jobs
            .values()
            .rev()
            .take(VIEW_JOBS)
            .rev()
            .map(|j| j.view.clone())
            .collect(),
        created_at: s.created_at,
    }
}

async fn finish(
    handle: &SessionHandle,
    scheduled: Scheduled,
    wait: bool,
) -> Result<JobView, ApiError> {
    if wait {
        jobs::wait(handle, scheduled).await
    } else {
        Ok(scheduled.job)
    }
}

async fn health(State(app): Shared) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "sessions": app.session_ids().len() }))
}

async fn list_sessions(State(app): Shared) -> Json<Vec<SessionId>> {
    Json(app.session_ids())
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub subject: String,
    #[serde(default)]
    pub concept: String,
    #[serde(default)]
    pub canvas: Option<CanvasSize>,
}

async fn create_session(
    State(app): Shared,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let canvas = body.canvas.unwrap_or_default();
    if canvas.width == 0 || canvas.height == 0 {
        return Err(ApiError::BadRequest("canvas size must be non-zero".into()));
    }
    let handle = app.create_session(SessionHeader {
        id: SessionId(uuid::Uuid::new_v4().simple().to_string()),
        subject: body.subject,
        concept: body.concept,
        canvas,
        initial_seed: 0,
        created_at: now_unix_ms(),
    })?;
    let mut st = handle.state.lock().await;
    app.persist(&mut st).await;
    tracing::info!(session = %handle.id, subject = %st.session.subject, "session created");
    Ok((StatusCode::CREATED, Json(view(&app, &st))))
}

async fn get_session(
    State(app): Shared,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let handle = app.session(&id)?;
    let st = handle.state.lock().await;
    Ok(Json(view(&app, &st)))
}

#[derive(Debug, Deserialize)]
pub struct AddStroke {
    pub points: Vec<Point>,
    #[serde(default)]
    pub width: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StrokeAccepted {
    pub stroke_id: StrokeId,
    pub stroke_count: u32,
    pub job: JobView,
}

async fn add_stroke(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
    Json(body): Json<AddStroke>,
) -> Result<Json<StrokeAccepted>, ApiError> {
    let handle = app.session(&id)?;
    let (stroke_id, stroke_count, scheduled) = {
        let mut st = handle.state.lock().await;
        let at = st.clock();
        let width = body.width.unwrap_or(DEFAULT_STROKE_WIDTH);
        let stroke_id = st.session.add_stroke(body.points, width, at)?;
        let scheduled = jobs::schedule(&app, &handle, &mut st);
        handle.notify(st.canvas_update());
        app.persist(&mut st).await;
        (stroke_id, st.session.active_stroke_count(), scheduled)
    };
    let job = finish(&handle, scheduled, q.wait).await?;
    Ok(Json(StrokeAccepted {
        stroke_id,
        stroke_count,
        job,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StrokeErased {
    pub stroke_count: u32,
    pub job: Option<JobView>,
}

async fn erase_stroke(
    State(app): Shared,
    Path((id, sid)): Path<(String, String)>,
    Query(q): Query<WaitQuery>,
) -> Result<Json<StrokeErased>, ApiError> {
    let handle = app.session(&id)?;
    let (stroke_count, scheduled) = {
        let mut st = handle.state.lock().await;
        let at = st.clock();
        st.session.erase_stroke(&StrokeId(sid), at)?;
        let n = st.session.active_stroke_count();
        // an empty canvas shows nothing, so there is nothing to generate
        let scheduled = if n == 0 {
            for job in st.supersede_all() {
                handle.notify(Update::Job { job });
            }
            None
        } else {
            Some(jobs::schedule(&app, &handle, &mut st))
        };
        handle.notify(st.canvas_update());
        app.persist(&mut st).await;
        (n, scheduled)
    };
    let job = match scheduled {
        Some(s) => Some(finish(&handle, s, q.wait).await?),
        None => None,
    };
    Ok(Json(StrokeErased { stroke_count, job }))
}

/// Steps back one stroke and shows the iteration already generated for the
/// resulting stroke count. Regenerates only when no such iteration exists.
async fn undo(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
) -> Result<Json<SessionView>, ApiError> {
    let handle = app.session(&id)?;
    let scheduled = {
        let mut st = handle.state.lock().await;
        let at = st.clock();
        let mut scheduled = None;
        if st.session.undo(at).is_some() {
            for job in st.supersede_all() {
                handle.notify(Update::Job { job });
            }
            if st.session.displayed.is_none() && st.session.active_stroke_count() > 0 {
                scheduled = Some(jobs::schedule(&app, &handle, &mut st));
            }
            handle.notify(st.canvas_update());
            app.persist(&mut st).await;
        }
        scheduled
    };
    if let Some(s) = scheduled {
        finish(&handle, s, q.wait).await?;
    }
    let st = handle.state.lock().await;
    Ok(Json(view(&app, &st)))
}

/// Empties the canvas and discards in-flight generations. The evolution
/// history is kept.
async fn clear(State(app): Shared, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let handle = app.session(&id)?;
    let mut st = handle.state.lock().await;
    let at = st.clock();
    if st.session.clear(at) {
        for job in st.supersede_all() {
            handle.notify(Update::Job { job });
        }
        handle.notify(st.canvas_update());
        app.persist(&mut st).await;
    }
    Ok(Json(view(&app, &st)))
}

async fn remix(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
) -> Result<Json<SessionView>, ApiError> {
    let handle = app.session(&id)?;
    let scheduled = {
        let mut st = handle.state.lock().await;
        let at = st.clock();
        let SessionState { session, rng, .. } = &mut *st;
        session.remix(rng, at);
        let scheduled = jobs::schedule(&app, &handle, &mut st);
        app.persist(&mut st).await;
        scheduled
    };
    finish(&handle, scheduled, q.wait).await?;
    let st = handle.state.lock().await;
    Ok(Json(view(&app, &st)))
}

#[derive(Debug, Default, Deserialize)]
pub struct RequestInspirations {
    #[serde(default)]
    pub count: Option<usize>,
    /// Replaces the session concept.
    #[serde(default)]
    pub concept: Option<String>,
    /// Branch from this inspiration instead of the concept.
    #[serde(default)]
    pub parent: Option<String>,
    /// Ask for a new set instead of the remembered one.
    #[serde(default)]
    pub fresh: bool,
}

async fn request_inspirations(
    State(app): Shared,
    Path(id): Path<String>,
    body: Option<Json<RequestInspirations>>,
) -> Result<Json<InspirationSet>, ApiError> {
    let body = body.map(|Json(b)| b).unwrap_or_default();
    let handle = app.session(&id)?;
    let count = body.count.unwrap_or(app.config.analogy.default_count);
    let request = {
        let mut st = handle.state.lock().await;
        if body.fresh {
            st.inspiration_requests += 1;
        }
        let concept = body
            .concept
            .clone()
            .filter(|c| !c.trim().is_empty())
            .unwrap_or_else(|| st.session.concept.clone());
        InspirationRequest {
            chain_seed: st.inspiration_requests,
            ..InspirationRequest::new(&st.session.subject, &concept, count)?
        }
    };

    // The language model is not called under the session lock so that
    // strokes keep flowing while the chain runs.
    let result = match &body.parent {
        Some(parent) => app.analogy.branch(parent, &request).await,
        None => app.analogy.inspirations(&request).await,
    };

    let mut st = handle.state.lock().await;
    let (returned, warnings) = match &result {
        Ok(set) => (set.items.len(), set.warnings.clone()),
        Err(e) => (0, vec![e.to_string()]),
    };
    st.record(EventBody::InspirationRequested {
        concept: request.concept.clone(),
        count,
        parent: body.parent.clone(),
        returned,
        warnings,
    });
    if let Ok(set) = &result {
        st.inspirations = Some(set.clone());
    }
    app.persist(&mut st).await;
    Ok(Json(result?))
}

#[derive(Debug, Deserialize)]
pub struct SelectInspiration {
    pub label: String,
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InspirationSelected {
    pub inspiration: String,
    pub category: Option<Category>,
    pub job: JobView,
}

async fn select_inspiration(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
    Json(body): Json<SelectInspiration>,
) -> Result<Json<InspirationSelected>, ApiError> {
    let handle = app.session(&id)?;
    let (inspiration, category, scheduled) = {
        let mut st = handle.state.lock().await;
        let label = body.label.trim().to_string();
        let category = body.category.or_else(|| {
            st.inspirations.as_ref().and_then(|set| {
                set.items
                    .iter()
                    .find(|i| i.label.eq_ignore_ascii_case(&label))
                    .map(|i| i.category)
            })
        });
        let at = st.clock();
        st.session.select_inspiration(&label, category, at)?;
        let scheduled = jobs::schedule(&app, &handle, &mut st);
        app.persist(&mut st).await;
        (label, category, scheduled)
    };
    let job = finish(&handle, scheduled, q.wait).await?;
    Ok(Json(InspirationSelected {
        inspiration,
        category,
        job,
    }))
}

#[derive(Debug, Deserialize)]
pub struct EditPrompt {
    /// `null` or blank text removes the override.
    pub text: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PromptState {
    pub manual_prompt: Option<String>,
    pub prompt: String,
}

/// Sets the manual override. Takes effect with the next generation.
async fn edit_prompt(
    State(app): Shared,
    Path(id): Path<String>,
    Json(body): Json<EditPrompt>,
) -> Result<Json<PromptState>, ApiError> {
    let handle = app.session(&id)?;
    let mut st = handle.state.lock().await;
    let at = st.clock();
    st.session.edit_prompt(body.text, at);
    app.persist(&mut st).await;
    Ok(Json(PromptState {
        manual_prompt: st.session.manual_prompt.clone(),
        prompt: jobs::current_prompt(&app, &st),
    }))
}

async fn generate(
    State(app): Shared,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
) -> Result<Json<JobView>, ApiError> {
    let handle = app.session(&id)?;
    let scheduled = {
        let mut st = handle.state.lock().await;
        let scheduled = jobs::schedule(&app, &handle, &mut st);
        app.persist(&mut st).await;
        scheduled
    };
    Ok(Json(finish(&handle, scheduled, q.wait).await?))
}

async fn get_job(
    State(app): Shared,
    Path((id, job)): Path<(String, u64)>,
) -> Result<Json<JobView>, ApiError> {
    let handle = app.session(&id)?;
    let st = handle.state.lock().await;
    st.jobs
        .get(&job)
        .map(|j| Json(j.view.clone()))
        .ok_or_else(|| ApiError::NotFound(format!("unknown job {job}")))
}

async fn iteration_image(
    State(app): Shared,
    Path((id, k, image)): Path<(String, usize, String)>,
) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let st = handle.state.lock().await;
    let it = st
        .session
        .iterations
        .get(k)
        .ok_or_else(|| ApiError::NotFound(format!("unknown iteration {k}")))?;
    let png = match image.as_str() {
        "design" => &it.images.design,
        "scaffold" => &it.images.scaffold,
        "control" => &it.images.control,
        other => return Err(ApiError::NotFound(format!("unknown image {other:?}"))),
    };
    let png = png
        .as_ref()
        .ok_or_else(|| ApiError::NotFound(format!("iteration {k} has no {image} image")))?;
    Ok((
        [(header::CONTENT_TYPE, "image/png")],
        png.as_bytes().to_vec(),
    )
        .into_response())
}

async fn events(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let st = handle.state.lock().await;
    let body = to_jsonl(&st.session.events);
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn stats(State(app): Shared, Path(id): Path<String>) -> Result<Json<LogStats>, ApiError> {
    let handle = app.session(&id)?;
    let st = handle.state.lock().await;
    compute_log_stats(&st.session.events)
        .map(Json)
        .map_err(|e| ApiError::Internal(e.to_string()))
}

/// The whole session as one JSON document, images embedded as base64.
async fn export(State(app): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = app.session(&id)?;
    let st = handle.state.lock().await;
    Ok(Json(&st.session).into_response())
}

fn sse(update: &Update) -> SseEvent {
    SseEvent::default()
        .event(update.name())
        .json_data(update)
        .unwrap_or_else(|_| SseEvent::default().event("error"))
}

/// Event stream of job, iteration and canvas updates. Starts with the
/// current canvas state. A `resync` event means notifications were dropped
/// and the client should fetch the full state.
async fn updates(
    State(app): Shared,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let handle = app.session(&id)?;
    let (rx, first) = {
        let st = handle.state.lock().await;
        (handle.updates.subscribe(), st.canvas_update())
    };
    let rest = stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(update) => Some((Ok(sse(&update)), rx)),
            Err(RecvError::Lagged(missed)) => Some((
                Ok(SseEvent::default().event("resync").data(missed.to_string())),
                rx,
            )),
            Err(RecvError::Closed) => None,
        }
    });
    let stream = stream::once(async move { Ok(sse(&first)) }).chain(rest);
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
