//! Design-to-sketch scaffolding.
//!
//! A generated design is reduced to a sketch-like underlay by keeping only
//! the soft edges that lie on semantic region boundaries:
//!
//! ```text
//! scaffold = Boundary(Segment(design)) ∩ SoftEdge(design)
//! ```
//!
//! Boundaries use 4-connectivity and mark the pixels on both sides of a
//! label change. The boundary mask is dilated by a small square radius
//! before the intersection so that the two independently produced maps
//! need not align to the pixel. Soft-edge intensities are copied through
//! unchanged to keep their varying line weight.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Backends};
use crate::imaging::{self, BoundaryMask, Grid, ImagingError, LabelMap, Png, SoftEdgeMap};

#[derive(Debug, Error)]
pub enum ScaffoldError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaffoldConfig {
    pub dilation_radius: u32,
    /// Global opacity the client applies to the underlay.
    pub underlay_alpha: f32,
}

impl Default for ScaffoldConfig {
    fn default() -> Self {
        Self {
            dilation_radius: 2,
            underlay_alpha: 0.3,
        }
    }
}

/// Sketch lines extracted from a design, ready to be shown under the canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaffold {
    pub lines: Grid<f32>,
    pub alpha: f32,
    /// Soft edges came from [`gradient_edges`] because no backend was configured.
    pub classical_edges: bool,
}

impl Scaffold {
    pub fn width(&self) -> u32 {
        self.lines.width()
    }

    pub fn height(&self) -> u32 {
        self.lines.height()
    }

    pub fn support(&self) -> Grid<bool> {
        self.lines.map(|&v| v > 0.0)
    }

    pub fn is_blank(&self) -> bool {
        self.lines.as_slice().iter().all(|&v| v == 0.0)
    }

    /// Gray+alpha PNG: dark lines whose per-pixel opacity is the line
    /// intensity. The global `alpha` is carried separately.
    pub fn to_png(&self) -> Result<Png, ImagingError> {
        imaging::encode_gray_alpha(&imaging::lines_to_gray_alpha(&self.lines))
    }
}

/// Marks every pixel with at least one 4-neighbour of a different label.
pub fn extract_boundaries(labels: &LabelMap) -> BoundaryMask {
    let (w, h) = labels.dimensions();
    Grid::from_fn(w, h, |x, y| {
        let here = *labels.get(x, y);
        (x > 0 && *labels.get(x - 1, y) != here)
            || (x + 1 < w && *labels.get(x + 1, y) != here)
            || (y > 0 && *labels.get(x, y - 1) != here)
            || (y + 1 < h && *labels.get(x, y + 1) != here)
    })
}

/// Square-structuring-element dilation (Chebyshev radius), done as two
/// separable 1-D passes.
pub fn dilate(mask: &BoundaryMask, radius: u32) -> BoundaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dimensions();
    let r = radius as i64;
    let horizontal = Grid::from_fn(w, h, |x, y| {
        let lo = (x as i64 - r).max(0) as u32;
        let hi = (x as i64 + r).min(w as i64 - 1) as u32;
        (lo..=hi).any(|xx| *mask.get(xx, y))
    });
    Grid::from_fn(w, h, |x, y| {
        let lo = (y as i64 - r).max(0) as u32;
        let hi = (y as i64 + r).min(h as i64 - 1) as u32;
        (lo..=hi).any(|yy| *horizontal.get(x, yy))
    })
}

/// Keeps soft-edge intensity where the dilated boundary mask is set.
pub fn intersect(
    boundary: &BoundaryMask,
    soft_edges: &SoftEdgeMap,
    dilation_radius: u32,
) -> Result<Grid<f32>, ImagingError> {
    soft_edges.ensure_dimensions(boundary.dimensions())?;
    let zone = dilate(boundary, dilation_radius);
    let (w, h) = boundary.dimensions();
    Ok(Grid::from_fn(w, h, |x, y| {
        if *zone.get(x, y) {
            *soft_edges.get(x, y)
        } else {
            0.0
        }
    }))
}

/// Sobel gradient magnitude of the luma channel, normalized to `[0, 1]`.
/// Used when no soft-edge backend is configured.
pub fn gradient_edges(design: &RgbImage) -> SoftEdgeMap {
    let (w, h) = design.dimensions();
    if w == 0 || h == 0 {
        return Grid::from_vec(w, h, Vec::new()).expect("empty grid");
    }
    let luma = Grid::from_fn(w, h, |x, y| {
        let [r, g, b] = design.get_pixel(x, y).0;
        0.299 * f32::from(r) + 0.587 * f32::from(g) + 0.114 * f32::from(b)
    });
    let at = |x: i64, y: i64| {
        let cx = x.clamp(0, w as i64 - 1) as u32;
        let cy = y.clamp(0, h as i64 - 1) as u32;
        *luma.get(cx, cy)
    };
    let magnitude = Grid::from_fn(w, h, |x, y| {
        let (x, y) = (x as i64, y as i64);
        let gx = at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
            - at(x - 1, y - 1)
            - 2.0 * at(x - 1, y)
            - at(x - 1, y + 1);
        let gy = at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
            - at(x - 1, y - 1)
            - 2.0 * at(x, y - 1)
            - at(x + 1, y - 1);
        (gx * gx + gy * gy).sqrt()
    });
    let peak = magnitude.as_slice().iter().copied().fold(0.0f32, f32::max);
    if peak > 0.0 {
        magnitude.map(|v| v / peak)
    } else {
        magnitude
    }
}

/// Runs segmentation and soft-edge extraction concurrently and intersects
/// their results.
pub async fn make_scaffold(
    design: &RgbImage,
    backends: &Backends,
    config: &ScaffoldConfig,
) -> Result<Scaffold, ScaffoldError> {
    if design.width() == 0 || design.height() == 0 {
        return Err(ImagingError::Empty.into());
    }
    let segment = backends.segmentation.segment(design);
    let edges = async {
        match &backends.soft_edge {
            Some(detector) => detector.soft_edges(design).await.map(|e| (e, false)),
            None => Ok((gradient_edges(design), true)),
        }
    };
    let (labels, edges) = futures::join!(segment, edges);
    let labels = labels?;
    let (edges, classical_edges) = edges?;
    labels.ensure_dimensions(design.dimensions())?;
    edges.ensure_dimensions(design.dimensions())?;

    let boundary = extract_boundaries(&labels);
    let lines = intersect(&boundary, &edges, config.dilation_radius)?;
    Ok(Scaffold {
        lines,
        alpha: config.underlay_alpha,
        classical_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split_map() -> LabelMap {
        Grid::from_fn(10, 10, |x, _| if x < 5 { 0 } else { 1 })
    }

    #[test]
    fn uniform_map_has_no_boundary() {
        let mask = extract_boundaries(&Grid::filled(7, 5, 3));
        assert!(mask.as_slice().iter().all(|b| !b));
    }

    #[test]
    fn split_map_boundary_is_columns_four_and_five() {
        let mask = extract_boundaries(&split_map());
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(*mask.get(x, y), x == 4 || x == 5, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn checkerboard_is_all_boundary() {
        let labels = Grid::from_fn(6, 6, |x, y| (x + y) % 2);
        assert!(extract_boundaries(&labels).as_slice().iter().all(|&b| b));
    }

    #[test]
    fn single_pixel_map() {
        let mask = extract_boundaries(&Grid::filled(1, 1, 0));
        assert_eq!(mask.as_slice(), &[false]);
    }

    #[test]
    fn zero_soft_edges_give_zero_scaffold() {
        let boundary = extract_boundaries(&split_map());
        let out = intersect(&boundary, &Grid::filled(10, 10, 0.0), 2).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matching_support_is_identity_at_radius_zero() {
        let boundary = extract_boundaries(&split_map());
        let edges = boundary.map(|&b| if b { 0.7 } else { 0.0 });
        assert_eq!(intersect(&boundary, &edges, 0).unwrap(), edges);
    }

    #[test]
    fn texture_away_from_boundary_is_dropped() {
        let boundary = extract_boundaries(&split_map());
        let edges = Grid::from_fn(10, 10, |x, _| match x {
            4 => 1.0,
            8 => 0.8,
            _ => 0.0,
        });
        let out = intersect(&boundary, &edges, 0).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let expected = if x == 4 { 1.0 } else { 0.0 };
                assert_eq!(*out.get(x, y), expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let boundary = extract_boundaries(&split_map());
        assert!(intersect(&boundary, &Grid::filled(9, 10, 0.0), 0).is_err());
    }

    #[test]
    fn dilation_uses_square_element() {
        let mut mask = Grid::filled(7, 7, false);
        mask.set(3, 3, true);
        let d = dilate(&mask, 2);
        for y in 0..7 {
            for x in 0..7 {
                assert_eq!(*d.get(x, y), (1..=5).contains(&x) && (1..=5).contains(&y));
            }
        }
    }

    #[test]
    fn gradient_edges_flat_image_is_zero() {
        let img = RgbImage::from_pixel(8, 8, image::Rgb([120, 10, 200]));
        assert!(gradient_edges(&img).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_edges_peak_on_step() {
        let img = RgbImage::from_fn(8, 8, |x, _| {
            if x < 4 {
                image::Rgb([0, 0, 0])
            } else {
                image::Rgb([255, 255, 255])
            }
        });
        let e = gradient_edges(&img);
        assert_eq!(*e.get(3, 4), 1.0);
        assert_eq!(*e.get(0, 4), 0.0);
    }

    #[test]
    fn scaffold_png_alpha_carries_intensity() {
        let s = Scaffold {
            lines: Grid::from_fn(3, 1, |x, _| x as f32 * 0.5),
            alpha: 0.3,
            classical_edges: false,
        };
        let png = s.to_png().unwrap().decode_gray_alpha().unwrap();
        let alphas: Vec<u8> = png.pixels().map(|p| p.0[1]).collect();
        assert_eq!(alphas, vec![0, 128, 255]);
    }
}
