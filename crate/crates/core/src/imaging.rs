//! Raster containers and PNG transport.

use std::fmt;
use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use image::{GrayAlphaImage, GrayImage, ImageFormat, LumaA, RgbImage};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("empty image")]
    Empty,
    #[error("invalid base64 payload: {0}")]
    Base64(#[from] base64::DecodeError),
    #[error(transparent)]
    Codec(#[from] image::ImageError),
}

/// Row-major grid of per-pixel values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: u32,
    height: u32,
    data: Vec<T>,
}

/// Region identifier per pixel, as produced by a segmentation backend.
pub type LabelMap = Grid<u32>;
/// `true` marks a pixel sitting on an inter-region boundary.
pub type BoundaryMask = Grid<bool>;
/// Edge intensities in `[0, 1]`.
pub type SoftEdgeMap = Grid<f32>;
/// Foreground opacity in `[0, 1]`.
pub type AlphaMask = Grid<f32>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: u32, height: u32, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: u32, height: u32, data: Vec<T>) -> Result<Self, ImagingError> {
        if data.len() != width as usize * height as usize {
            return Err(ImagingError::DimensionMismatch {
                expected: (width, height),
                actual: (data.len() as u32, 1),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> T) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> &T {
        &self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: T) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = value;
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_dimensions(&self, expected: (u32, u32)) -> Result<(), ImagingError> {
        if self.dimensions() != expected {
            return Err(ImagingError::DimensionMismatch {
                expected,
                actual: self.dimensions(),
            });
        }
        Ok(())
    }
}

/// Encoded PNG bytes. Serialized as a base64 string when embedded in JSON.
#[derive(Clone, PartialEq, Eq)]
pub struct Png(Vec<u8>);

impl Png {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn to_base64(&self) -> String {
        BASE64.encode(&self.0)
    }

    pub fn from_base64(text: &str) -> Result<Self, ImagingError> {
        Ok(Self(BASE64.decode(text.trim())?))
    }

    pub fn decode_gray(&self) -> Result<GrayImage, ImagingError> {
        Ok(image::load_from_memory_with_format(&self.0, ImageFormat::Png)?.into_luma8())
    }

    pub fn decode_rgb(&self) -> Result<RgbImage, ImagingError> {
        Ok(image::load_from_memory_with_format(&self.0, ImageFormat::Png)?.into_rgb8())
    }

    pub fn decode_gray_alpha(&self) -> Result<GrayAlphaImage, ImagingError> {
        Ok(image::load_from_memory_with_format(&self.0, ImageFormat::Png)?.into_luma_alpha8())
    }

    /// Confirms the bytes are a complete, decodable PNG.
    pub fn verify(&self) -> Result<(u32, u32), ImagingError> {
        let img = image::load_from_memory_with_format(&self.0, ImageFormat::Png)?;
        Ok((img.width(), img.height()))
    }
}

impl fmt::Debug for Png {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Png({} bytes)", self.0.len())
    }
}

impl Serialize for Png {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for Png {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Png::from_base64(&text).map_err(serde::de::Error::custom)
    }
}

fn encode<I: image::ImageEncoder>(
    encoder: I,
    buf: &[u8],
    w: u32,
    h: u32,
    color: image::ExtendedColorType,
) -> Result<(), ImagingError> {
    encoder.write_image(buf, w, h, color)?;
    Ok(())
}

pub fn encode_gray(img: &GrayImage) -> Result<Png, ImagingError> {
    let mut out = Cursor::new(Vec::new());
    encode(
        image::codecs::png::PngEncoder::new(&mut out),
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::L8,
    )?;
    Ok(Png(out.into_inner()))
}

pub fn encode_rgb(img: &RgbImage) -> Result<Png, ImagingError> {
    let mut out = Cursor::new(Vec::new());
    encode(
        image::codecs::png::PngEncoder::new(&mut out),
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(Png(out.into_inner()))
}

pub fn encode_gray_alpha(img: &GrayAlphaImage) -> Result<Png, ImagingError> {
    let mut out = Cursor::new(Vec::new());
    encode(
        image::codecs::png::PngEncoder::new(&mut out),
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::La8,
    )?;
    Ok(Png(out.into_inner()))
}

/// Converts a unit-interval grid to an 8-bit grayscale image.
pub fn unit_to_gray(grid: &Grid<f32>) -> GrayImage {
    GrayImage::from_fn(grid.width(), grid.height(), |x, y| {
        image::Luma([unit_to_u8(*grid.get(x, y))])
    })
}

pub fn gray_to_unit(img: &GrayImage) -> Grid<f32> {
    Grid::from_fn(img.width(), img.height(), |x, y| {
        f32::from(img.get_pixel(x, y).0[0]) / 255.0
    })
}

pub fn unit_to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Single-channel label image: the pixel value is the region id.
pub fn gray_to_labels(img: &GrayImage) -> LabelMap {
    Grid::from_fn(img.width(), img.height(), |x, y| {
        u32::from(img.get_pixel(x, y).0[0])
    })
}

pub fn labels_to_gray(labels: &LabelMap) -> GrayImage {
    GrayImage::from_fn(labels.width(), labels.height(), |x, y| {
        image::Luma([(*labels.get(x, y)).min(255) as u8])
    })
}

/// Dark lines whose per-pixel opacity is the line intensity, so the image
/// can be laid directly under a drawing canvas.
pub fn lines_to_gray_alpha(lines: &Grid<f32>) -> GrayAlphaImage {
    GrayAlphaImage::from_fn(lines.width(), lines.height(), |x, y| {
        let a = unit_to_u8(*lines.get(x, y));
        LumaA([255 - a, a])
    })
}

/// Composites `design` over a white background using `mask` as opacity.
pub fn composite_over_white(design: &RgbImage, mask: &AlphaMask) -> Result<RgbImage, ImagingError> {
    mask.ensure_dimensions(design.dimensions())?;
    Ok(RgbImage::from_fn(
        design.width(),
        design.height(),
        |x, y| {
            let a = mask.get(x, y).clamp(0.0, 1.0);
            let p = design.get_pixel(x, y).0;
            let blend = |c: u8| (f32::from(c) * a + 255.0 * (1.0 - a)).round() as u8;
            image::Rgb([blend(p[0]), blend(p[1]), blend(p[2])])
        },
    ))
}
