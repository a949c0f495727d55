use serde::{Deserialize, Serialize};

use super::types::{Stroke, StrokeId};
use crate::analogy::Category;

/// One entry in a session's append-only interaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    /// Milliseconds since the session was created, stamped on receipt.
    pub timestamp: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    StrokeAdded,
    StrokeUndone,
    CanvasCleared,
    StrokeErased,
    PromptEdited,
    InspirationRequested,
    InspirationSelected,
    GenerationStarted,
    GenerationCompleted,
    Remix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobOutcome {
    Done,
    Failed,
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    StrokeAdded {
        stroke: Stroke,
    },
    StrokeUndone {
        stroke_id: StrokeId,
    },
    CanvasCleared {
        removed: usize,
    },
    StrokeErased {
        stroke_id: StrokeId,
    },
    PromptEdited {
        text: Option<String>,
    },
    InspirationRequested {
        concept: String,
        count: usize,
        #[serde(default)]
        parent: Option<String>,
        returned: usize,
        #[serde(default)]
        warnings: Vec<String>,
    },
    InspirationSelected {
        label: String,
        #[serde(default)]
        category: Option<Category>,
    },
    GenerationStarted {
        job_id: u64,
        stroke_count: u32,
        seed: u64,
        guidance: f64,
        prompt: String,
    },
    GenerationCompleted {
        job_id: u64,
        outcome: JobOutcome,
        #[serde(default)]
        iteration: Option<usize>,
        #[serde(default)]
        error: Option<String>,
        #[serde(default)]
        warnings: Vec<String>,
    },
    Remix {
        previous_seed: u64,
        seed: u64,
    },
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::StrokeAdded { .. } => EventKind::StrokeAdded,
            EventBody::StrokeUndone { .. } => EventKind::StrokeUndone,
            EventBody::CanvasCleared { .. } => EventKind::CanvasCleared,
            EventBody::StrokeErased { .. } => EventKind::StrokeErased,
            EventBody::PromptEdited { .. } => EventKind::PromptEdited,
            EventBody::InspirationRequested { .. } => EventKind::InspirationRequested,
            EventBody::InspirationSelected { .. } => EventKind::InspirationSelected,
            EventBody::GenerationStarted { .. } => EventKind::GenerationStarted,
            EventBody::GenerationCompleted { .. } => EventKind::GenerationCompleted,
            EventBody::Remix { .. } => EventKind::Remix,
        }
    }
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }
}

/// One JSON object per line, newline terminated.
pub fn to_jsonl(events: &[Event]) -> String {
    let mut out = String::new();
    for event in events {
        // Event contains only strings, numbers and plain enums.
        out.push_str(&serde_json::to_string(event).expect("event serializes"));
        out.push('\n');
    }
    out
}

/// Parses JSON-Lines, skipping blank lines. Errors carry the 1-based line.
pub fn from_jsonl(text: &str) -> Result<Vec<Event>, (usize, serde_json::Error)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e)))
        .collect()
}
