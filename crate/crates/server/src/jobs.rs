//! Generation scheduling.
//!
//! Every trigger (stroke, erase, selection, remix) creates a job with the
//! next per-session id and supersedes all unfinished older jobs. Jobs of one
//! session run one at a time under the session's run lock. A job publishes
//! its result only if it is still the newest job when it finishes; the check
//! and the append happen under the session state lock, so a superseded job
//! can never reach the iteration list.

use std::collections::BTreeMap;
use std::sync::Arc;

use sketchloop_core::backends::{BackendError, GenerationRequest};
use sketchloop_core::imaging::{composite_over_white, encode_rgb, Png};
use sketchloop_core::raster::rasterize;
use sketchloop_core::scaffold::make_scaffold;
use sketchloop_core::session::{EventBody, IterationImages, IterationMeta, JobOutcome};
use tokio::sync::watch;

use crate::error::ApiError;
use crate::state::{AppState, JobRecord, JobState, JobView, SessionHandle, SessionState, Update};

/// Returned by [`schedule`]; `state` resolves once the job finishes.
pub struct Scheduled {
    pub job: JobView,
    pub state: watch::Receiver<JobState>,
}

struct Produced {
    images: IterationImages,
    classical_edges: bool,
    warnings: Vec<String>,
}

/// Prompt the next generation would use.
pub fn current_prompt(app: &AppState, st: &SessionState) -> String {
    let s = &st.session;
    app.config.prompt.assemble(
        &s.subject,
        s.inspiration.as_deref(),
        s.manual_prompt.as_deref(),
    )
}

/// Builds a job from the current canvas, supersedes older jobs and starts
/// it in the background. Must be called with the session state locked.
pub fn schedule(
    app: &Arc<AppState>,
    handle: &Arc<SessionHandle>,
    st: &mut SessionState,
) -> Scheduled {
    for job in st.supersede_all() {
        handle.notify(Update::Job { job });
    }

    let n = st.session.active_stroke_count();
    let guidance = app.config.guidance.at(n);
    let prompt = current_prompt(app, st);
    let seed = st.session.seed;
    let raster = &app.config.raster;
    let control = rasterize(&st.session.strokes, st.session.canvas, raster);
    let request = GenerationRequest {
        prompt: prompt.clone(),
        control_image: control,
        adherence: guidance,
        seed,
        width: raster.width,
        height: raster.height,
        extra: BTreeMap::new(),
    };

    let id = st.next_job;
    st.next_job += 1;
    st.record(EventBody::GenerationStarted {
        job_id: id,
        stroke_count: n,
        seed,
        guidance,
        prompt: prompt.clone(),
    });
    let record = JobRecord::new(JobView {
        id,
        state: JobState::Pending,
        stroke_count: n,
        seed,
        guidance,
        prompt,
        iteration: None,
        error: None,
        backend: None,
    });
    let scheduled = Scheduled {
        job: record.view.clone(),
        state: record.watch(),
    };
    let cancel = record.cancel.clone();
    st.jobs.insert(id, record);
    st.prune_jobs();
    handle.notify(Update::Job {
        job: scheduled.job.clone(),
    });
    tracing::debug!(session = %handle.id, job = id, strokes = n, guidance, "generation scheduled");

    let (app, handle) = (app.clone(), handle.clone());
    tokio::spawn(async move {
        tokio::select! {
            _ = cancel.cancelled() => {}
            _ = run(&app, &handle, id, request) => {}
        }
    });
    scheduled
}

fn is_live(st: &SessionState, id: u64) -> bool {
    st.latest_job() == Some(id) && st.jobs.get(&id).is_some_and(|j| !j.view.state.is_final())
}

async fn run(
    app: &Arc<AppState>,
    handle: &Arc<SessionHandle>,
    id: u64,
    request: GenerationRequest,
) {
    let _running = handle.run_lock.lock().await;
    {
        let mut st = handle.state.lock().await;
        if !is_live(&st, id) {
            return;
        }
        let job = st.jobs.get_mut(&id).expect("live job is present");
        job.set_state(JobState::Running);
        handle.notify(Update::Job {
            job: job.view.clone(),
        });
    }

    let result = produce(app, &request).await;

    let mut st = handle.state.lock().await;
    if !is_live(&st, id) {
        return;
    }
    let stroke_count = st.jobs[&id].view.stroke_count;
    match result {
        Ok(produced) => {
            let index = st.session.iterations.len();
            let meta = IterationMeta {
                index,
                job_id: id,
                prompt: request.prompt,
                seed: request.seed,
                stroke_count,
                guidance: request.adherence,
                width: request.width,
                height: request.height,
                classical_edges: produced.classical_edges,
                warnings: produced.warnings.clone(),
            };
            st.session
                .push_iteration(meta.clone(), produced.images)
                .expect("index is the current length");
            st.record(EventBody::GenerationCompleted {
                job_id: id,
                outcome: JobOutcome::Done,
                iteration: Some(index),
                error: None,
                warnings: produced.warnings,
            });
            let job = st.jobs.get_mut(&id).expect("live job is present");
            job.view.iteration = Some(index);
            job.set_state(JobState::Done);
            let view = job.view.clone();
            handle.notify(Update::Iteration {
                iteration: meta,
                underlay: st.session.underlay,
            });
            handle.notify(Update::Job { job: view });
        }
        Err(e) => {
            tracing::warn!(session = %handle.id, job = id, error = %e, "generation failed");
            st.record(EventBody::GenerationCompleted {
                job_id: id,
                outcome: JobOutcome::Failed,
                iteration: None,
                error: Some(e.to_string()),
                warnings: Vec::new(),
            });
            let job = st.jobs.get_mut(&id).expect("live job is present");
            job.view.error = Some(e.failure.to_string());
            job.view.backend = Some(e.kind);
            job.set_state(JobState::Failed);
            let view = job.view.clone();
            handle.notify(Update::Job { job: view });
        }
    }
    app.persist(&mut st).await;
}

/// Design, foreground compositing and scaffold. Only the text-to-image call
/// is fatal; the other stages degrade with a warning.
async fn produce(app: &AppState, request: &GenerationRequest) -> Result<Produced, BackendError> {
    let backends = &app.backends;
    let raw = backends.t2i.generate(request).await?;
    let mut warnings = Vec::new();

    let design = match backends.foreground.alpha_mask(&raw).await {
        Ok(mask) => match composite_over_white(&raw, &mask) {
            Ok(design) => design,
            Err(e) => {
                warnings.push(format!(
                    "foreground mask unusable, showing the unmasked design: {e}"
                ));
                raw
            }
        },
        Err(e) => {
            warnings.push(format!(
                "foreground extraction failed, showing the unmasked design: {e}"
            ));
            raw
        }
    };

    let (scaffold, classical_edges) =
        match make_scaffold(&design, backends, &app.config.scaffold).await {
            Ok(s) => {
                let png = s.to_png();
                if let Err(e) = &png {
                    warnings.push(format!("scaffold could not be encoded: {e}"));
                }
                (png.ok(), s.classical_edges)
            }
            Err(e) => {
                warnings.push(format!("scaffold unavailable: {e}"));
                (None, false)
            }
        };

    let encode = |what: &str, png: Result<Png, _>, warnings: &mut Vec<String>| match png {
        Ok(png) => Some(png),
        Err(e) => {
            warnings.push(format!("{what} could not be encoded: {e}"));
            None
        }
    };
    let control = encode(
        "control image",
        request.control_image.to_png(),
        &mut warnings,
    );
    let design = encode("design", encode_rgb(&design), &mut warnings);
    Ok(Produced {
        images: IterationImages {
            control,
            design,
            scaffold,
        },
        classical_edges,
        warnings,
    })
}

/// Waits for a job to finish and maps a failure to an API error.
pub async fn wait(handle: &SessionHandle, mut scheduled: Scheduled) -> Result<JobView, ApiError> {
    let id = scheduled.job.id;
    // The sender lives in the job table; it is dropped only when the job is
    // pruned, which happens after it finishes.
    let _ = scheduled.state.wait_for(|s| s.is_final()).await;
    let st = handle.state.lock().await;
    let view = st
        .jobs
        .get(&id)
        .map(|j| j.view.clone())
        .ok_or_else(|| ApiError::Internal(format!("job {id} vanished")))?;
    match (view.state, view.backend) {
        (JobState::Failed, Some(kind)) => Err(ApiError::Backend {
            kind,
            message: view.error.unwrap_or_default(),
        }),
        _ => Ok(view),
    }
}
