//! Stroke rasterization into the control image that conditions generation.
//!
//! Each stroke segment is drawn as a binary capsule with no anti-aliasing,
//! so identical stroke lists always give identical bytes.

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use crate::imaging::{self, Grid, ImagingError, Png};
use crate::session::{CanvasSize, Stroke};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    #[default]
    BlackOnWhite,
    WhiteOnBlack,
}

impl Polarity {
    fn ink(self) -> u8 {
        match self {
            Polarity::BlackOnWhite => 0,
            Polarity::WhiteOnBlack => 255,
        }
    }

    fn background(self) -> u8 {
        255 - self.ink()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RasterConfig {
    pub width: u32,
    pub height: u32,
    /// Fixed line width in control-image pixels. `None` (the default) scales
    /// each stroke's own width from canvas to control coordinates.
    pub line_width: Option<u32>,
    pub polarity: Polarity,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            line_width: None,
            polarity: Polarity::BlackOnWhite,
        }
    }
}

/// Binary single-channel sketch raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlImage {
    image: GrayImage,
    polarity: Polarity,
}

impl ControlImage {
    pub fn blank(width: u32, height: u32, polarity: Polarity) -> Self {
        Self {
            image: GrayImage::from_pixel(width, height, Luma([polarity.background()])),
            polarity,
        }
    }

    pub fn from_gray(image: GrayImage, polarity: Polarity) -> Self {
        Self { image, polarity }
    }

    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn as_gray(&self) -> &GrayImage {
        &self.image
    }

    pub fn is_ink(&self, x: u32, y: u32) -> bool {
        self.image.get_pixel(x, y).0[0] == self.polarity.ink()
    }

    pub fn ink_mask(&self) -> Grid<bool> {
        Grid::from_fn(self.width(), self.height(), |x, y| self.is_ink(x, y))
    }

    pub fn ink_count(&self) -> usize {
        let ink = self.polarity.ink();
        self.image.as_raw().iter().filter(|&&v| v == ink).count()
    }

    pub fn to_png(&self) -> Result<Png, ImagingError> {
        imaging::encode_gray(&self.image)
    }
}

/// Smallest ink radius that still leaves every line 8-connected.
const MIN_RADIUS: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn distance_sq_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (ex, ey) = (p.0 - (a.0 + t * dx), p.1 - (a.1 + t * dy));
    ex * ex + ey * ey
}

/// Inks every pixel whose center is within `radius` of the segment.
fn draw_segment(out: &mut ControlImage, a: (f64, f64), b: (f64, f64), radius: f64) {
    let ink = Luma([out.polarity.ink()]);
    let (w, h) = (i64::from(out.width()), i64::from(out.height()));
    let x0 = ((a.0.min(b.0) - radius).floor() as i64).max(0);
    let x1 = ((a.0.max(b.0) + radius).ceil() as i64).min(w - 1);
    let y0 = ((a.1.min(b.1) - radius).floor() as i64).max(0);
    let y1 = ((a.1.max(b.1) + radius).ceil() as i64).min(h - 1);
    let r_sq = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            if distance_sq_to_segment((x as f64, y as f64), a, b) <= r_sq {
                out.image.put_pixel(x as u32, y as u32, ink);
            }
        }
    }
}

/// Draws every non-erased stroke. An empty or fully erased list yields a
/// valid blank image.
///
/// Canvas coordinates are scaled to control coordinates, where pixel
/// `(x, y)` has its center at `(x, y)`. A pixel is ink when its center lies
/// within half the line width of some segment of the stroke.
pub fn rasterize(strokes: &[Stroke], canvas: CanvasSize, config: &RasterConfig) -> ControlImage {
    let mut out = ControlImage::blank(config.width, config.height, config.polarity);
    let sx = f64::from(config.width) / f64::from(canvas.width.max(1));
    let sy = f64::from(config.height) / f64::from(canvas.height.max(1));
    for stroke in strokes.iter().filter(|s| !s.erased) {
        let width = match config.line_width {
            Some(px) => f64::from(px),
            None => stroke.width * (sx + sy) / 2.0,
        };
        let radius = (width / 2.0).max(MIN_RADIUS);
        let points: Vec<(f64, f64)> = stroke.points.iter().map(|p| (p.x * sx, p.y * sy)).collect();
        match points.as_slice() {
            [] => {}
            [only] => draw_segment(&mut out, *only, *only, radius),
            _ => {
                for pair in points.windows(2) {
                    draw_segment(&mut out, pair[0], pair[1], radius);
                }
            }
        }
    }
    out
}
