//! Per-session state machine.
//!
//! Every mutation is expressed as an [`Event`] and applied through
//! [`Session::apply`], so replaying a session's log from its
//! [`SessionHeader`] rebuilds the same canvas.
//!
//! The stroke count `n` that drives the guidance schedule is the number of
//! strokes on the canvas that have not been erased.

mod events;
mod stats;
mod types;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analogy::Category;
use crate::guidance;

pub use events::{from_jsonl, to_jsonl, Event, EventBody, EventKind, JobOutcome};
pub use stats::{compute_log_stats, LogStats, StatsError};
pub use types::{
    CanvasSize, Iteration, IterationImages, IterationMeta, Point, SessionId, Stroke, StrokeId,
};

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("{0} must not be empty")]
    EmptyField(&'static str),
    #[error("stroke needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("stroke point ({x}, {y}) lies outside the {width}x{height} canvas")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("stroke width must be positive and finite, got {0}")]
    BadWidth(f64),
    #[error("unknown stroke {0}")]
    UnknownStroke(StrokeId),
    #[error("stroke {0} is already erased")]
    AlreadyErased(StrokeId),
    #[error("duplicate stroke id {0}")]
    DuplicateStroke(StrokeId),
    #[error("iteration index {got} does not follow {expected}")]
    IterationIndex { expected: usize, got: usize },
}

/// Immutable facts fixed at creation; together with the event log they
/// determine the canvas state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub id: SessionId,
    pub subject: String,
    pub concept: String,
    pub canvas: CanvasSize,
    pub initial_seed: u64,
    /// Unix time in milliseconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub subject: String,
    pub concept: String,
    #[serde(default)]
    initial_concept: String,
    pub inspiration: Option<String>,
    pub inspiration_category: Option<Category>,
    pub manual_prompt: Option<String>,
    pub canvas: CanvasSize,
    pub strokes: Vec<Stroke>,
    pub iterations: Vec<Iteration>,
    pub seed: u64,
    pub initial_seed: u64,
    pub events: Vec<Event>,
    pub created_at: u64,
    /// Iteration whose design and scaffold the canvas currently shows.
    pub displayed: Option<usize>,
    /// Iteration whose scaffold sits under the canvas. Keeps pointing at the
    /// last good scaffold when a newer iteration has none.
    #[serde(default)]
    pub underlay: Option<usize>,
    #[serde(default)]
    strokes_added: u64,
}

impl Session {
    pub fn new(header: SessionHeader) -> Result<Self, SessionError> {
        if header.subject.trim().is_empty() {
            return Err(SessionError::EmptyField("subject"));
        }
        Ok(Self {
            id: header.id,
            subject: header.subject.trim().to_string(),
            concept: header.concept.trim().to_string(),
            initial_concept: header.concept.trim().to_string(),
            inspiration: None,
            inspiration_category: None,
            manual_prompt: None,
            canvas: header.canvas,
            strokes: Vec::new(),
            iterations: Vec::new(),
            seed: header.initial_seed,
            initial_seed: header.initial_seed,
            events: Vec::new(),
            created_at: header.created_at,
            displayed: None,
            underlay: None,
            strokes_added: 0,
        })
    }

    pub fn header(&self) -> SessionHeader {
        SessionHeader {
            id: self.id.clone(),
            subject: self.subject.clone(),
            concept: self.initial_concept.clone(),
            canvas: self.canvas,
            initial_seed: self.initial_seed,
            created_at: self.created_at,
        }
    }

    /// Rebuilds a session from its header and event log.
    pub fn replay(header: SessionHeader, events: &[Event]) -> Result<Self, SessionError> {
        let mut session = Session::new(header)?;
        for event in events {
            session.apply(event.clone())?;
        }
        Ok(session)
    }

    /// Number of strokes on the canvas that are not erased.
    pub fn active_stroke_count(&self) -> u32 {
        self.strokes.iter().filter(|s| !s.erased).count() as u32
    }

    pub fn active_strokes(&self) -> impl Iterator<Item = &Stroke> {
        self.strokes.iter().filter(|s| !s.erased)
    }

    pub fn displayed_iteration(&self) -> Option<&Iteration> {
        self.displayed.and_then(|i| self.iterations.get(i))
    }

    pub fn last_timestamp(&self) -> u64 {
        self.events.last().map_or(0, |e| e.timestamp)
    }

    /// Applies an event and appends it to the log. Timestamps are clamped so
    /// the log never goes backwards.
    pub fn apply(&mut self, mut event: Event) -> Result<(), SessionError> {
        event.timestamp = event.timestamp.max(self.last_timestamp());
        match &event.body {
            EventBody::StrokeAdded { stroke } => {
                self.validate_stroke(&stroke.points, stroke.width)?;
                if self.strokes.iter().any(|s| s.id == stroke.id) {
                    return Err(SessionError::DuplicateStroke(stroke.id.clone()));
                }
                self.strokes.push(Stroke {
                    erased: false,
                    ..stroke.clone()
                });
                self.strokes_added += 1;
            }
            EventBody::StrokeUndone { stroke_id } => {
                let pos = self
                    .strokes
                    .iter()
                    .rposition(|s| !s.erased)
                    .filter(|&p| &self.strokes[p].id == stroke_id)
                    .ok_or_else(|| SessionError::UnknownStroke(stroke_id.clone()))?;
                self.strokes.truncate(pos);
                self.displayed = self.cached_iteration_for(self.active_stroke_count());
                self.underlay = self
                    .displayed
                    .filter(|&i| self.iterations[i].images.scaffold.is_some());
            }
            EventBody::CanvasCleared { .. } => {
                self.strokes.clear();
                self.displayed = None;
                self.underlay = None;
            }
            EventBody::StrokeErased { stroke_id } => {
                let stroke = self
                    .strokes
                    .iter_mut()
                    .find(|s| &s.id == stroke_id)
                    .ok_or_else(|| SessionError::UnknownStroke(stroke_id.clone()))?;
                if stroke.erased {
                    return Err(SessionError::AlreadyErased(stroke_id.clone()));
                }
                stroke.erased = true;
                if self.active_stroke_count() == 0 {
                    self.displayed = None;
                    self.underlay = None;
                }
            }
            EventBody::PromptEdited { text } => {
                self.manual_prompt = text.clone().filter(|t| !t.trim().is_empty());
            }
            EventBody::InspirationRequested { concept, .. } => {
                if !concept.trim().is_empty() {
                    self.concept = concept.trim().to_string();
                }
            }
            EventBody::InspirationSelected { label, category } => {
                self.inspiration = Some(label.clone());
                self.inspiration_category = *category;
            }
            EventBody::Remix { seed, .. } => {
                self.seed = *seed;
            }
            EventBody::GenerationStarted { .. } | EventBody::GenerationCompleted { .. } => {}
        }
        self.events.push(event);
        Ok(())
    }

    fn validate_stroke(&self, points: &[Point], width: f64) -> Result<(), SessionError> {
        if points.len() < 2 {
            return Err(SessionError::TooFewPoints(points.len()));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(SessionError::BadWidth(width));
        }
        if let Some(p) = points.iter().find(|p| !self.canvas.contains(**p)) {
            return Err(SessionError::OutOfBounds {
                x: p.x,
                y: p.y,
                width: self.canvas.width,
                height: self.canvas.height,
            });
        }
        Ok(())
    }

    /// Latest iteration generated at stroke count `n`, preferring the
    /// current seed. An empty canvas shows nothing.
    fn cached_iteration_for(&self, n: u32) -> Option<usize> {
        if n == 0 {
            return None;
        }
        let matching = |seed_too: bool| {
            self.iterations
                .iter()
                .rev()
                .find(|it| it.meta.stroke_count == n && (!seed_too || it.meta.seed == self.seed))
        };
        matching(true)
            .or_else(|| matching(false))
            .map(|it| it.meta.index)
    }

    pub fn add_stroke(
        &mut self,
        points: Vec<Point>,
        width: f64,
        at: u64,
    ) -> Result<StrokeId, SessionError> {
        self.validate_stroke(&points, width)?;
        let id = StrokeId(format!("s{}", self.strokes_added));
        self.apply(Event {
            timestamp: at,
            body: EventBody::StrokeAdded {
                stroke: Stroke {
                    id: id.clone(),
                    points,
                    width,
                    erased: false,
                },
            },
        })?;
        Ok(id)
    }

    /// Removes the most recent stroke still on the canvas, together with any
    /// erased strokes drawn after it. Returns `None` (and logs nothing) when
    /// there is nothing to undo.
    pub fn undo(&mut self, at: u64) -> Option<StrokeId> {
        let id = self.active_strokes().last()?.id.clone();
        self.apply(Event {
            timestamp: at,
            body: EventBody::StrokeUndone {
                stroke_id: id.clone(),
            },
        })
        .expect("undo target is the last active stroke");
        Some(id)
    }

    /// Returns `false` without logging when the canvas is already empty.
    pub fn clear(&mut self, at: u64) -> bool {
        if self.strokes.is_empty() {
            return false;
        }
        let removed = self.strokes.len();
        self.apply(Event {
            timestamp: at,
            body: EventBody::CanvasCleared { removed },
        })
        .expect("clear always applies");
        true
    }

    pub fn erase_stroke(&mut self, id: &StrokeId, at: u64) -> Result<(), SessionError> {
        self.apply(Event {
            timestamp: at,
            body: EventBody::StrokeErased {
                stroke_id: id.clone(),
            },
        })
    }

    /// Replaces the seed with a different one drawn from `rng`.
    pub fn remix(&mut self, rng: &mut dyn RngCore, at: u64) -> u64 {
        let previous_seed = self.seed;
        let seed = guidance::fresh_seed(rng, previous_seed);
        self.apply(Event {
            timestamp: at,
            body: EventBody::Remix {
                previous_seed,
                seed,
            },
        })
        .expect("remix always applies");
        seed
    }

    pub fn edit_prompt(&mut self, text: Option<String>, at: u64) {
        self.apply(Event {
            timestamp: at,
            body: EventBody::PromptEdited { text },
        })
        .expect("prompt edits always apply");
    }

    pub fn select_inspiration(
        &mut self,
        label: &str,
        category: Option<Category>,
        at: u64,
    ) -> Result<(), SessionError> {
        let label = label.trim();
        if label.is_empty() {
            return Err(SessionError::EmptyField("inspiration label"));
        }
        self.apply(Event {
            timestamp: at,
            body: EventBody::InspirationSelected {
                label: label.to_string(),
                category,
            },
        })
    }

    /// Logs an event that carries no canvas state (requests, generation
    /// lifecycle).
    pub fn record(&mut self, body: EventBody, at: u64) -> Result<(), SessionError> {
        self.apply(Event {
            timestamp: at,
            body,
        })
    }

    /// Appends a generation result and shows it.
    pub fn push_iteration(
        &mut self,
        meta: IterationMeta,
        images: IterationImages,
    ) -> Result<usize, SessionError> {
        let expected = self.iterations.len();
        if meta.index != expected {
            return Err(SessionError::IterationIndex {
                expected,
                got: meta.index,
            });
        }
        if images.scaffold.is_some() {
            self.underlay = Some(expected);
        }
        self.iterations.push(Iteration { meta, images });
        self.displayed = Some(expected);
        Ok(expected)
    }
}
