//! Deterministic in-process backends for tests and GPU-free runs.
//!
//! Outputs are pure functions of the request. Latency and failure injection
//! affect only timing and error paths.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{
    prompt_hash, BackendError, BackendKind, Failure, ForegroundExtractor, GenerationRequest,
    LanguageModel, Segmenter, SoftEdgeDetector, TextToImage,
};
use crate::imaging::{AlphaMask, Grid, LabelMap, SoftEdgeMap};
use crate::scaffold::gradient_edges;

/// Artificial response delay.
pub enum Latency {
    None,
    Fixed(Duration),
    Uniform {
        min: Duration,
        max: Duration,
        rng: Box<Mutex<ChaCha8Rng>>,
    },
}

impl Latency {
    pub fn uniform(min: Duration, max: Duration, seed: u64) -> Self {
        Latency::Uniform {
            min,
            max,
            rng: Box::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed))),
        }
    }

    fn sample(&self) -> Duration {
        match self {
            Latency::None => Duration::ZERO,
            Latency::Fixed(d) => *d,
            Latency::Uniform { min, max, rng } => {
                let mut rng = rng.lock().unwrap_or_else(|e| e.into_inner());
                let lo = min.as_micros() as u64;
                let hi = max.as_micros() as u64;
                Duration::from_micros(rng.random_range(lo..=hi))
            }
        }
    }

    async fn wait(&self) {
        let d = self.sample();
        if !d.is_zero() {
            tokio::time::sleep(d).await;
        }
    }
}

struct Faults {
    latency: Latency,
    failure: Option<Failure>,
    calls: AtomicUsize,
}

impl Faults {
    fn new() -> Self {
        Self {
            latency: Latency::None,
            failure: None,
            calls: AtomicUsize::new(0),
        }
    }

    async fn enter(&self, kind: BackendKind) -> Result<(), BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.latency.wait().await;
        match &self.failure {
            Some(f) => Err(BackendError::new(kind, f.clone())),
            None => Ok(()),
        }
    }
}

macro_rules! fault_builders {
    ($ty:ty) => {
        impl $ty {
            pub fn with_latency(mut self, latency: Latency) -> Self {
                self.faults.latency = latency;
                self
            }

            pub fn with_failure(mut self, failure: Failure) -> Self {
                self.faults.failure = Some(failure);
                self
            }

            /// Number of calls received so far, including failed ones.
            pub fn calls(&self) -> usize {
                self.faults.calls.load(Ordering::SeqCst)
            }
        }
    };
}

/// Renders a flat-shaded procedural "product" seeded by the prompt, seed and
/// adherence, then overlays the sketch ink.
pub struct MockTextToImage {
    faults: Faults,
}

fault_builders!(MockTextToImage);

impl Default for MockTextToImage {
    fn default() -> Self {
        Self::new()
    }
}

impl MockTextToImage {
    pub fn new() -> Self {
        Self {
            faults: Faults::new(),
        }
    }

    pub fn render(request: &GenerationRequest) -> RgbImage {
        let mut hasher = Sha256::new();
        hasher.update(request.prompt.as_bytes());
        hasher.update([0]);
        hasher.update(request.seed.to_le_bytes());
        hasher.update(request.adherence.to_bits().to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());

        let (w, h) = (request.width, request.height);
        let mut color = |lo: u8, hi: u8| {
            Rgb([
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
                rng.random_range(lo..=hi),
            ])
        };
        let background = color(215, 250);
        let body = color(40, 200);
        let mut img = RgbImage::from_pixel(w, h, background);

        let (wf, hf) = (f64::from(w), f64::from(h));
        let mut shapes = Vec::new();
        shapes.push((wf * 0.5, hf * 0.55, wf * 0.38, hf * 0.22, body, true));
        let extra = rng.random_range(3..=6);
        for _ in 0..extra {
            let cx = rng.random_range(0.2..0.8) * wf;
            let cy = rng.random_range(0.35..0.75) * hf;
            let rx = rng.random_range(0.04..0.16) * wf;
            let ry = rng.random_range(0.04..0.12) * hf;
            let ellipse = rng.random_bool(0.5);
            let c = Rgb([
                rng.random_range(20..=235),
                rng.random_range(20..=235),
                rng.random_range(20..=235),
            ]);
            shapes.push((cx, cy, rx, ry, c, ellipse));
        }
        for (cx, cy, rx, ry, c, ellipse) in shapes {
            let x0 = (cx - rx).floor().max(0.0) as u32;
            let x1 = ((cx + rx).ceil() as u32).min(w.saturating_sub(1));
            let y0 = (cy - ry).floor().max(0.0) as u32;
            let y1 = ((cy + ry).ceil() as u32).min(h.saturating_sub(1));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let dx = (f64::from(x) + 0.5 - cx) / rx;
                    let dy = (f64::from(y) + 0.5 - cy) / ry;
                    let inside = if ellipse {
                        dx * dx + dy * dy <= 1.0
                    } else {
                        dx.abs() <= 1.0 && dy.abs() <= 1.0
                    };
                    if inside {
                        img.put_pixel(x, y, c);
                    }
                }
            }
        }

        // Sketch ink, stronger at higher adherence.
        let control = &request.control_image;
        if control.width() > 0 && control.height() > 0 {
            let t = (request.adherence / 8.0).clamp(0.0, 1.0);
            for y in 0..h {
                for x in 0..w {
                    let cx = (u64::from(x) * u64::from(control.width()) / u64::from(w)) as u32;
                    let cy = (u64::from(y) * u64::from(control.height()) / u64::from(h)) as u32;
                    if control.is_ink(cx, cy) {
                        let p = img.get_pixel_mut(x, y);
                        for ch in &mut p.0 {
                            *ch = (f64::from(*ch) * (1.0 - t) + 25.0 * t).round() as u8;
                        }
                    }
                }
            }
        }
        img
    }
}

#[async_trait]
impl TextToImage for MockTextToImage {
    async fn generate(&self, request: &GenerationRequest) -> Result<RgbImage, BackendError> {
        self.faults.enter(BackendKind::T2i).await?;
        Ok(Self::render(request))
    }
}

enum SegmentMode {
    Palette,
    Fixed(LabelMap),
}

/// Labels each distinct color as its own region, in order of first
/// appearance. Exact on the flat-shaded mock designs.
pub struct MockSegmenter {
    mode: SegmentMode,
    faults: Faults,
}

fault_builders!(MockSegmenter);

impl Default for MockSegmenter {
    fn default() -> Self {
        Self::new()
    }
}

impl MockSegmenter {
    pub fn new() -> Self {
        Self {
            mode: SegmentMode::Palette,
            faults: Faults::new(),
        }
    }

    pub fn fixed(labels: LabelMap) -> Self {
        Self {
            mode: SegmentMode::Fixed(labels),
            faults: Faults::new(),
        }
    }

    pub fn palette_labels(design: &RgbImage) -> LabelMap {
        let mut seen: HashMap<[u8; 3], u32> = HashMap::new();
        Grid::from_fn(design.width(), design.height(), |x, y| {
            let c = design.get_pixel(x, y).0;
            let next = seen.len() as u32;
            *seen.entry(c).or_insert(next)
        })
    }
}

#[async_trait]
impl Segmenter for MockSegmenter {
    async fn segment(&self, design: &RgbImage) -> Result<LabelMap, BackendError> {
        self.faults.enter(BackendKind::Segmentation).await?;
        Ok(match &self.mode {
            SegmentMode::Palette => Self::palette_labels(design),
            SegmentMode::Fixed(labels) => labels.clone(),
        })
    }
}

enum EdgeMode {
    Blurred,
    Fixed(SoftEdgeMap),
}

/// Gradient magnitude softened by a 3×3 box filter, giving lines of varying
/// weight.
pub struct MockSoftEdge {
    mode: EdgeMode,
    faults: Faults,
}

fault_builders!(MockSoftEdge);

impl Default for MockSoftEdge {
    fn default() -> Self {
        Self::new()
    }
}

impl MockSoftEdge {
    pub fn new() -> Self {
        Self {
            mode: EdgeMode::Blurred,
            faults: Faults::new(),
        }
    }

    pub fn fixed(edges: SoftEdgeMap) -> Self {
        Self {
            mode: EdgeMode::Fixed(edges),
            faults: Faults::new(),
        }
    }

    fn blurred(design: &RgbImage) -> SoftEdgeMap {
        let edges = gradient_edges(design);
        let (w, h) = edges.dimensions();
        let box3 = Grid::from_fn(w, h, |x, y| {
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    sum += *edges.get(xx, yy);
                    n += 1.0;
                }
            }
            sum / n
        });
        let peak = box3.as_slice().iter().copied().fold(0.0f32, f32::max);
        if peak > 0.0 {
            box3.map(|v| v / peak)
        } else {
            box3
        }
    }
}

#[async_trait]
impl SoftEdgeDetector for MockSoftEdge {
    async fn soft_edges(&self, design: &RgbImage) -> Result<SoftEdgeMap, BackendError> {
        self.faults.enter(BackendKind::SoftEdge).await?;
        Ok(match &self.mode {
            EdgeMode::Blurred => Self::blurred(design),
            EdgeMode::Fixed(edges) => edges.clone(),
        })
    }
}

pub struct MockForeground {
    mask: Option<AlphaMask>,
    faults: Faults,
}

fault_builders!(MockForeground);

impl MockForeground {
    pub fn all_foreground() -> Self {
        Self {
            mask: None,
            faults: Faults::new(),
        }
    }

    pub fn fixed(mask: AlphaMask) -> Self {
        Self {
            mask: Some(mask),
            faults: Faults::new(),
        }
    }
}

#[async_trait]
impl ForegroundExtractor for MockForeground {
    async fn alpha_mask(&self, design: &RgbImage) -> Result<AlphaMask, BackendError> {
        self.faults.enter(BackendKind::Foreground).await?;
        Ok(match &self.mask {
            Some(mask) => mask.clone(),
            None => AlphaMask::filled(design.width(), design.height(), 1.0),
        })
    }
}

/// Serves canned replies keyed by [`prompt_hash`].
pub struct MockLanguageModel {
    fixtures: RwLock<HashMap<String, String>>,
    faults: Faults,
}

fault_builders!(MockLanguageModel);

impl Default for MockLanguageModel {
    fn default() -> Self {
        Self::new()
    }
}

impl MockLanguageModel {
    pub fn new() -> Self {
        Self {
            fixtures: RwLock::new(HashMap::new()),
            faults: Faults::new(),
        }
    }

    /// Loads every `<hash>.txt` file in `dir`.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mock = Self::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(hash) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            let reply = std::fs::read_to_string(&path)?;
            mock.insert_hash(hash.to_ascii_lowercase(), reply);
        }
        Ok(mock)
    }

    /// Registers `reply` for the exact prompt text.
    pub fn insert(&self, prompt: &str, reply: impl Into<String>) {
        self.insert_hash(prompt_hash(prompt), reply.into());
    }

    pub fn insert_hash(&self, hash: String, reply: String) {
        self.fixtures
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(hash, reply);
    }

    pub fn with_reply(self, prompt: &str, reply: impl Into<String>) -> Self {
        self.insert(prompt, reply);
        self
    }

    pub fn fixture_count(&self) -> usize {
        self.fixtures
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }
}

#[async_trait]
impl LanguageModel for MockLanguageModel {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.faults.enter(BackendKind::Llm).await?;
        let hash = prompt_hash(prompt);
        self.fixtures
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&hash)
            .cloned()
            .ok_or_else(|| BackendError::new(BackendKind::Llm, Failure::FixtureNotFound { hash }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{ControlImage, Polarity};
    use std::collections::BTreeMap;

    fn request(seed: u64) -> GenerationRequest {
        GenerationRequest {
            prompt: "a product design of a car".into(),
            control_image: ControlImage::blank(64, 64, Polarity::BlackOnWhite),
            adherence: 3.0,
            seed,
            width: 64,
            height: 64,
            extra: BTreeMap::new(),
        }
    }

    #[tokio::test]
    async fn t2i_is_deterministic_per_request() {
        let mock = MockTextToImage::new();
        let a = mock.generate(&request(42)).await.unwrap();
        let b = mock.generate(&request(42)).await.unwrap();
        assert_eq!(a, b);
        assert_eq!(mock.calls(), 2);
    }

    #[tokio::test]
    async fn t2i_depends_on_seed() {
        let mock = MockTextToImage::new();
        let a = mock.generate(&request(1)).await.unwrap();
        let b = mock.generate(&request(2)).await.unwrap();
        assert_ne!(a, b);
    }

    #[tokio::test]
    async fn llm_fixture_hit_and_miss() {
        let mock = MockLanguageModel::new().with_reply("hello", "world");
        assert_eq!(mock.complete("hello").await.unwrap(), "world");
        let err = mock.complete("other").await.unwrap_err();
        assert_eq!(
            err.failure,
            Failure::FixtureNotFound {
                hash: prompt_hash("other")
            }
        );
        assert!(err.to_string().contains(&prompt_hash("other")));
    }

    #[tokio::test]
    async fn llm_fixtures_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(format!("{}.txt", prompt_hash("p"))),
            "reply",
        )
        .unwrap();
        std::fs::write(dir.path().join("README.md"), "ignored").unwrap();
        let mock = MockLanguageModel::from_dir(dir.path()).unwrap();
        assert_eq!(mock.fixture_count(), 1);
        assert_eq!(mock.complete("p").await.unwrap(), "reply");
    }

    #[test]
    fn palette_segmentation_labels_flat_regions() {
        let img = RgbImage::from_fn(4, 2, |x, _| {
            if x < 2 {
                Rgb([1, 1, 1])
            } else {
                Rgb([9, 9, 9])
            }
        });
        let labels = MockSegmenter::palette_labels(&img);
        assert_eq!(labels.as_slice(), &[0, 0, 1, 1, 0, 0, 1, 1]);
    }

    #[tokio::test]
    async fn injected_failure_carries_kind() {
        let mock = MockSegmenter::new().with_failure(Failure::Timeout(5));
        let err = mock.segment(&RgbImage::new(2, 2)).await.unwrap_err();
        assert_eq!(err.kind, BackendKind::Segmentation);
        assert!(err.is_timeout());
    }
}
