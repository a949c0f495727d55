//! Stroke-count driven guidance schedule and seed policy.
//!
//! The generator should follow a sparse sketch loosely and a dense one
//! closely. The schedule maps the number of active strokes `n` to a
//! control-adherence scalar:
//!
//! ```text
//! G(n) = base - span * decay_base^(n / stroke_divisor)
//! ```
//!
//! With the defaults (7, 4, 0.5, 3) this starts at 3 for an empty canvas and
//! approaches 7, halving the remaining distance every three strokes.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GuidanceError {
    #[error("stroke count must be non-negative, got {0}")]
    NegativeStrokeCount(i64),
    #[error("schedule must stay positive: base ({base}) - span ({span}) <= 0")]
    NonPositiveFloor { base: f64, span: f64 },
    #[error("decay base must lie in (0, 1), got {0}")]
    DecayOutOfRange(f64),
    #[error("stroke divisor must be positive and finite, got {0}")]
    BadDivisor(f64),
}

/// Parameters of the adherence schedule. Loaded from the `guidance` section
/// of the service configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSchedule {
    pub base: f64,
    pub span: f64,
    pub decay_base: f64,
    pub stroke_divisor: f64,
}

impl Default for GuidanceSchedule {
    fn default() -> Self {
        Self {
            base: 7.0,
            span: 4.0,
            decay_base: 0.5,
            stroke_divisor: 3.0,
        }
    }
}

impl GuidanceSchedule {
    pub fn new(
        base: f64,
        span: f64,
        decay_base: f64,
        stroke_divisor: f64,
    ) -> Result<Self, GuidanceError> {
        let schedule = Self {
            base,
            span,
            decay_base,
            stroke_divisor,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        let floor = self.base - self.span;
        if floor.is_nan() || floor <= 0.0 {
            return Err(GuidanceError::NonPositiveFloor {
                base: self.base,
                span: self.span,
            });
        }
        if !(self.decay_base > 0.0 && self.decay_base < 1.0) {
            return Err(GuidanceError::DecayOutOfRange(self.decay_base));
        }
        if !(self.stroke_divisor > 0.0 && self.stroke_divisor.is_finite()) {
            return Err(GuidanceError::BadDivisor(self.stroke_divisor));
        }
        Ok(())
    }

    /// Adherence for `n` active strokes.
    ///
    /// Capped at the largest `f64` below the ceiling: the exact value never
    /// reaches it, but rounding would after roughly 160 strokes.
    pub fn at(&self, n: u32) -> f64 {
        let exact =
            self.base - self.span * self.decay_base.powf(f64::from(n) / self.stroke_divisor);
        exact.min(self.base.next_down())
    }

    /// Natural log of `ceiling - G(n)`.
    ///
    /// `G(n)` stops changing in `f64` after roughly 160 strokes with the
    /// default constants; this stays exact and strictly decreasing for every `n`.
    pub fn ln_remaining(&self, n: u32) -> f64 {
        self.span.ln() + f64::from(n) / self.stroke_divisor * self.decay_base.ln()
    }

    /// Like [`at`](Self::at) but accepts counts coming from untyped input.
    pub fn try_at(&self, n: i64) -> Result<f64, GuidanceError> {
        let n = u32::try_from(n).map_err(|_| GuidanceError::NegativeStrokeCount(n))?;
        Ok(self.at(n))
    }

    /// Value approached as the sketch fills in.
    pub fn ceiling(&self) -> f64 {
        self.base
    }
}

/// Free function form used by the scheduler.
pub fn guidance_at(schedule: &GuidanceSchedule, n: u32) -> f64 {
    schedule.at(n)
}

/// Seeds are kept within 32 bits so they survive a round trip through
/// JavaScript numbers and match what diffusion servers accept.
pub fn initial_seed(rng: &mut dyn RngCore) -> u64 {
    u64::from(rng.next_u32())
}

/// Draws a seed different from `previous`.
pub fn fresh_seed(rng: &mut dyn RngCore, previous: u64) -> u64 {
    loop {
        let candidate = u64::from(rng.next_u32());
        if candidate != previous {
            return candidate;
        }
    }
}
