use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::events::{Event, EventKind};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("event {index} at {timestamp} ms precedes the previous event")]
    Unordered { index: usize, timestamp: u64 },
}

/// Sketching statistics over a session log.
///
/// Sketching duration is the span from the first to the last `stroke_added`
/// event; rates and gaps are absent when they would divide by zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogStats {
    pub stroke_count: usize,
    pub strokes_per_min: Option<f64>,
    pub mean_interstroke_ms: Option<f64>,
    pub prompt_edit_count: usize,
    pub sketching_duration_ms: u64,
}

pub fn compute_log_stats(events: &[Event]) -> Result<LogStats, StatsError> {
    if let Some(index) = events
        .windows(2)
        .position(|w| w[1].timestamp < w[0].timestamp)
    {
        return Err(StatsError::Unordered {
            index: index + 1,
            timestamp: events[index + 1].timestamp,
        });
    }
    let stroke_times: Vec<u64> = events
        .iter()
        .filter(|e| e.kind() == EventKind::StrokeAdded)
        .map(|e| e.timestamp)
        .collect();
    let prompt_edit_count = events
        .iter()
        .filter(|e| e.kind() == EventKind::PromptEdited)
        .count();

    let duration = match (stroke_times.first(), stroke_times.last()) {
        (Some(first), Some(last)) => last - first,
        _ => 0,
    };
    let mean_interstroke_ms = (stroke_times.len() >= 2).then(|| {
        let gaps: u64 = stroke_times.windows(2).map(|w| w[1] - w[0]).sum();
        gaps as f64 / (stroke_times.len() - 1) as f64
    });
    let strokes_per_min =
        (duration > 0).then(|| stroke_times.len() as f64 / (duration as f64 / 60_000.0));

    Ok(LogStats {
        stroke_count: stroke_times.len(),
        strokes_per_min,
        mean_interstroke_ms,
        prompt_edit_count,
        sketching_duration_ms: duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{EventBody, Point, Stroke, StrokeId};

    fn stroke_at(t: u64, i: usize) -> Event {
        Event {
            timestamp: t,
            body: EventBody::StrokeAdded {
                stroke: Stroke {
                    id: StrokeId(format!("s{i}")),
                    points: vec![Point::new(0.0, 0.0), Point::new(1.0, 1.0)],
                    width: 3.0,
                    erased: false,
                },
            },
        }
    }

    fn at(t: u64, body: EventBody) -> Event {
        Event { timestamp: t, body }
    }

    #[test]
    fn uniform_spacing() {
        let events = vec![stroke_at(0, 0), stroke_at(10_000, 1), stroke_at(20_000, 2)];
        let stats = compute_log_stats(&events).unwrap();
        assert_eq!(stats.stroke_count, 3);
        assert_eq!(stats.mean_interstroke_ms, Some(10_000.0));
        assert_eq!(stats.strokes_per_min, Some(9.0));
    }

    #[test]
    fn single_stroke_has_no_gap() {
        let stats = compute_log_stats(&[stroke_at(500, 0)]).unwrap();
        assert_eq!(stats.stroke_count, 1);
        assert_eq!(stats.mean_interstroke_ms, None);
        assert_eq!(stats.strokes_per_min, None);
    }

    #[test]
    fn empty_log() {
        let stats = compute_log_stats(&[]).unwrap();
        assert_eq!(stats.stroke_count, 0);
        assert_eq!(stats.prompt_edit_count, 0);
        assert_eq!(stats.mean_interstroke_ms, None);
    }

    #[test]
    fn unordered_log_rejected() {
        let events = vec![stroke_at(10, 0), stroke_at(5, 1)];
        assert_eq!(
            compute_log_stats(&events),
            Err(StatsError::Unordered {
                index: 1,
                timestamp: 5
            })
        );
    }

    #[test]
    fn non_stroke_events_are_ignored_for_timing() {
        let events = vec![
            at(
                0,
                EventBody::PromptEdited {
                    text: Some("x".into()),
                },
            ),
            stroke_at(1_000, 0),
            at(
                2_000,
                EventBody::Remix {
                    previous_seed: 1,
                    seed: 2,
                },
            ),
            stroke_at(4_000, 1),
        ];
        let stats = compute_log_stats(&events).unwrap();
        assert_eq!(stats.stroke_count, 2);
        assert_eq!(stats.mean_interstroke_ms, Some(3_000.0));
        assert_eq!(stats.strokes_per_min, Some(40.0));
        assert_eq!(stats.prompt_edit_count, 1);
    }
}
