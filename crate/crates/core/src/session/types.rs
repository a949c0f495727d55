use std::fmt;

use serde::{Deserialize, Serialize};

use crate::imaging::Png;

/// Opaque session token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SessionId(pub String);

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Opaque stroke token, unique within a session.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrokeId(pub String);

impl fmt::Display for StrokeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Canvas coordinates in pixels, origin top-left. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSize {
    pub width: u32,
    pub height: u32,
}

impl Default for CanvasSize {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
        }
    }
}

impl CanvasSize {
    pub fn contains(&self, p: Point) -> bool {
        p.x.is_finite()
            && p.y.is_finite()
            && p.x >= 0.0
            && p.y >= 0.0
            && p.x <= f64::from(self.width)
            && p.y <= f64::from(self.height)
    }
}

/// A pen-down to pen-up polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub id: StrokeId,
    pub points: Vec<Point>,
    pub width: f64,
    #[serde(default)]
    pub erased: bool,
}

/// Metadata for one generation result. Images travel separately in
/// [`IterationImages`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMeta {
    pub index: usize,
    pub job_id: u64,
    pub prompt: String,
    pub seed: u64,
    pub stroke_count: u32,
    pub guidance: f64,
    pub width: u32,
    pub height: u32,
    /// Soft edges came from the built-in gradient detector rather than a backend.
    #[serde(default)]
    pub classical_edges: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Encoded rasters for an iteration. `None` marks an image that failed to
/// generate or could not be restored from storage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationImages {
    pub control: Option<Png>,
    pub design: Option<Png>,
    pub scaffold: Option<Png>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    #[serde(flatten)]
    pub meta: IterationMeta,
    #[serde(default)]
    pub images: IterationImages,
}
