//! Model backend protocol.
//!
//! Five capabilities are consumed by the pipeline: sketch-conditioned
//! text-to-image, semantic segmentation, soft-edge extraction, foreground
//! extraction and text completion. Each has a deterministic mock and an
//! HTTP+JSON adapter. This module is the only place that talks to the
//! network.
//!
//! Every call made through [`Backends`] is timed, retried once on timeout,
//! and recorded in a [`CallLog`].

mod http;
mod mock;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::imaging::{AlphaMask, LabelMap, SoftEdgeMap};
use crate::raster::ControlImage;

pub use http::{
    HttpBackend, HttpForeground, HttpLanguageModel, HttpSegmenter, HttpSoftEdge, HttpTextToImage,
};
pub use mock::{
    Latency, MockForeground, MockLanguageModel, MockSegmenter, MockSoftEdge, MockTextToImage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    T2i,
    Segmentation,
    SoftEdge,
    Foreground,
    Llm,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::T2i,
        BackendKind::Segmentation,
        BackendKind::SoftEdge,
        BackendKind::Foreground,
        BackendKind::Llm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::T2i => "t2i",
            BackendKind::Segmentation => "segmentation",
            BackendKind::SoftEdge => "soft_edge",
            BackendKind::Foreground => "foreground",
            BackendKind::Llm => "llm",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Failure {
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("remote returned {status}: {body}")]
    Remote { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("expected a {expected:?} image, backend returned {actual:?}")]
    SizeMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("fixture not found for prompt hash {hash}")]
    FixtureNotFound { hash: String },
    #[error("empty response")]
    EmptyResponse,
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{0}")]
    Injected(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind} backend: {failure}")]
pub struct BackendError {
    pub kind: BackendKind,
    pub failure: Failure,
}

impl BackendError {
    pub fn new(kind: BackendKind, failure: Failure) -> Self {
        Self { kind, failure }
    }

    pub fn is_timeout(&self) -> bool {
        matches!(self.failure, Failure::Timeout(_))
    }

    /// Failures worth retrying at a later time (as opposed to bad input).
    pub fn is_retryable(&self) -> bool {
        matches!(
            self.failure,
            Failure::Timeout(_) | Failure::Transport(_) | Failure::Remote { .. }
        )
    }
}

/// Stable key for prompt fixtures: lowercase hex SHA-256 of the UTF-8 text.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Everything needed to produce one design.
#[derive(Debug, Clone)]
pub struct GenerationRequest {
    pub prompt: String,
    pub control_image: ControlImage,
    /// Output of the guidance schedule. Adapters decide which upstream
    /// parameter it drives.
    pub adherence: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<(), Failure> {
        if !(self.adherence > 0.0 && self.adherence.is_finite()) {
            return Err(Failure::InvalidRequest(format!(
                "adherence must be positive, got {}",
                self.adherence
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Failure::InvalidRequest("zero-sized output".into()));
        }
        Ok(())
    }
}

#[async_trait]
pub trait TextToImage: Send + Sync {
    async fn generate(&self, request: &GenerationRequest) -> Result<RgbImage, BackendError>;
}

#[async_trait]
pub trait Segmenter: Send + Sync {
    async fn segment(&self, design: &RgbImage) -> Result<LabelMap, BackendError>;
}

#[async_trait]
pub trait SoftEdgeDetector: Send + Sync {
    async fn soft_edges(&self, design: &RgbImage) -> Result<SoftEdgeMap, BackendError>;
}

#[async_trait]
pub trait ForegroundExtractor: Send + Sync {
    async fn alpha_mask(&self, design: &RgbImage) -> Result<AlphaMask, BackendError>;
}

#[async_trait]
pub trait LanguageModel: Send + Sync {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Where and how to reach one backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// `"mock"` or an `http://` URL.
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Name of an environment variable holding a bearer token.
    pub auth: Option<String>,
    /// Mock LLM only: directory of `<prompt-hash>.txt` reply fixtures.
    pub fixtures: Option<std::path::PathBuf>,
    /// Mock only: artificial latency range in milliseconds.
    pub mock_latency_ms: Option<(u64, u64)>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "mock".into(),
            timeout_ms: 30_000,
            auth: None,
            fixtures: None,
            mock_latency_ms: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{kind}: timeout must be positive")]
    ZeroTimeout { kind: BackendKind },
    #[error("{kind}: unsupported endpoint {endpoint:?} (expected \"mock\" or an http URL)")]
    BadEndpoint { kind: BackendKind, endpoint: String },
    #[error("{kind}: auth variable {var} is not set")]
    MissingSecret { kind: BackendKind, var: String },
    #[error("{kind}: cannot load fixtures from {path}: {source}")]
    Fixtures {
        kind: BackendKind,
        path: String,
        source: std::io::Error,
    },
}

impl BackendConfig {
    pub fn is_mock(&self) -> bool {
        self.endpoint.trim() == "mock"
    }

    pub fn validate(&self, kind: BackendKind) -> Result<(), ConfigError> {
        if self.timeout_ms == 0 {
            return Err(ConfigError::ZeroTimeout { kind });
        }
        let ep = self.endpoint.trim();
        if ep != "mock" && !(ep.starts_with("http://") || ep.starts_with("https://")) {
            return Err(ConfigError::BadEndpoint {
                kind,
                endpoint: self.endpoint.clone(),
            });
        }
        Ok(())
    }

    fn secret(&self, kind: BackendKind) -> Result<Option<String>, ConfigError> {
        match &self.auth {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ConfigError::MissingSecret {
                    kind,
                    var: var.clone(),
                }),
        }
    }

    fn latency(&self) -> Latency {
        match self.mock_latency_ms {
            None => Latency::None,
            Some((lo, hi)) if lo == hi => Latency::Fixed(Duration::from_millis(lo)),
            Some((lo, hi)) => Latency::uniform(
                Duration::from_millis(lo.min(hi)),
                Duration::from_millis(lo.max(hi)),
                0,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallOutcome {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub kind: BackendKind,
    pub attempt: u32,
    pub duration_ms: u64,
    pub outcome: CallOutcome,
    #[serde(default)]
    pub error: Option<String>,
}

/// Bounded in-memory record of recent backend calls.
#[derive(Debug)]
pub struct CallLog {
    records: Mutex<VecDeque<CallRecord>>,
    capacity: usize,
}

impl Default for CallLog {
    fn default() -> Self {
        Self::with_capacity(4096)
    }
}

impl CallLog {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            records: Mutex::new(VecDeque::new()),
            capacity: capacity.max(1),
        }
    }

    fn push(&self, record: CallRecord) {
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        if records.len() == self.capacity {
            records.pop_front();
        }
        records.push_back(record);
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        let records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        records.iter().cloned().collect()
    }
}

async fn instrumented<T, F, Fut>(
    log: &CallLog,
    kind: BackendKind,
    mut call: F,
) -> Result<T, BackendError>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T, BackendError>>,
{
    let mut attempt = 1;
    loop {
        let started = Instant::now();
        let result = call().await;
        let duration_ms = started.elapsed().as_millis() as u64;
        match &result {
            Ok(_) => {
                tracing::debug!(backend = %kind, attempt, duration_ms, "backend call ok");
                log.push(CallRecord {
                    kind,
                    attempt,
                    duration_ms,
                    outcome: CallOutcome::Ok,
                    error: None,
                });
            }
            Err(e) => {
                tracing::warn!(backend = %kind, attempt, duration_ms, error = %e, "backend call failed");
                log.push(CallRecord {
                    kind,
                    attempt,
                    duration_ms,
                    outcome: CallOutcome::Failed,
                    error: Some(e.to_string()),
                });
            }
        }
        match result {
            Err(e) if e.is_timeout() && attempt == 1 => attempt += 1,
            other => return other,
        }
    }
}

/// Wraps a backend so every call is logged and timeouts are retried once.
pub struct Instrumented<B: ?Sized> {
    inner: Arc<B>,
    log: Arc<CallLog>,
}

impl<B: ?Sized> Instrumented<B> {
    pub fn new(inner: Arc<B>, log: Arc<CallLog>) -> Self {
        Self { inner, log }
    }
}

#[async_trait]
impl TextToImage for Instrumented<dyn TextToImage> {
    async fn generate(&self, request: &GenerationRequest) -> Result<RgbImage, BackendError> {
        request
            .validate()
            .map_err(|f| BackendError::new(BackendKind::T2i, f))?;
        let image =
            instrumented(&self.log, BackendKind::T2i, || self.inner.generate(request)).await?;
        if image.dimensions() != (request.width, request.height) {
            return Err(BackendError::new(
                BackendKind::T2i,
                Failure::SizeMismatch {
                    expected: (request.width, request.height),
                    actual: image.dimensions(),
                },
            ));
        }
        Ok(image)
    }
}

#[async_trait]
impl Segmenter for Instrumented<dyn Segmenter> {
    async fn segment(&self, design: &RgbImage) -> Result<LabelMap, BackendError> {
        instrumented(&self.log, BackendKind::Segmentation, || {
            self.inner.segment(design)
        })
        .await
    }
}

#[async_trait]
impl SoftEdgeDetector for Instrumented<dyn SoftEdgeDetector> {
    async fn soft_edges(&self, design: &RgbImage) -> Result<SoftEdgeMap, BackendError> {
        instrumented(&self.log, BackendKind::SoftEdge, || {
            self.inner.soft_edges(design)
        })
        .await
    }
}

#[async_trait]
impl ForegroundExtractor for Instrumented<dyn ForegroundExtractor> {
    async fn alpha_mask(&self, design: &RgbImage) -> Result<AlphaMask, BackendError> {
        instrumented(&self.log, BackendKind::Foreground, || {
            self.inner.alpha_mask(design)
        })
        .await
    }
}

#[async_trait]
impl LanguageModel for Instrumented<dyn LanguageModel> {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        if prompt.trim().is_empty() {
            return Err(BackendError::new(
                BackendKind::Llm,
                Failure::InvalidRequest("empty prompt".into()),
            ));
        }
        instrumented(&self.log, BackendKind::Llm, || self.inner.complete(prompt)).await
    }
}

/// The full set of backends used by the pipeline, each instrumented.
#[derive(Clone)]
pub struct Backends {
    pub t2i: Arc<dyn TextToImage>,
    pub segmentation: Arc<dyn Segmenter>,
    /// `None` selects the built-in gradient edge detector.
    pub soft_edge: Option<Arc<dyn SoftEdgeDetector>>,
    pub foreground: Arc<dyn ForegroundExtractor>,
    pub llm: Arc<dyn LanguageModel>,
    log: Arc<CallLog>,
}

/// Uninstrumented backends to be assembled into [`Backends`].
pub struct BackendSet {
    pub t2i: Arc<dyn TextToImage>,
    pub segmentation: Arc<dyn Segmenter>,
    pub soft_edge: Option<Arc<dyn SoftEdgeDetector>>,
    pub foreground: Arc<dyn ForegroundExtractor>,
    pub llm: Arc<dyn LanguageModel>,
}

impl BackendSet {
    /// All mocks; the LLM mock starts with no fixtures.
    pub fn mock() -> Self {
        Self {
            t2i: Arc::new(MockTextToImage::new()),
            segmentation: Arc::new(MockSegmenter::new()),
            soft_edge: Some(Arc::new(MockSoftEdge::new())),
            foreground: Arc::new(MockForeground::all_foreground()),
            llm: Arc::new(MockLanguageModel::new()),
        }
    }
}

impl Backends {
    pub fn new(set: BackendSet) -> Self {
        let log = Arc::new(CallLog::default());
        Self {
            t2i: Arc::new(Instrumented::new(set.t2i, log.clone())),
            segmentation: Arc::new(Instrumented::new(set.segmentation, log.clone())),
            soft_edge: set
                .soft_edge
                .map(|s| Arc::new(Instrumented::new(s, log.clone())) as Arc<dyn SoftEdgeDetector>),
            foreground: Arc::new(Instrumented::new(set.foreground, log.clone())),
            llm: Arc::new(Instrumented::new(set.llm, log.clone())),
            log,
        }
    }

    pub fn mock() -> Self {
        Self::new(BackendSet::mock())
    }

    /// Builds adapters from configuration. A soft-edge entry of `None`
    /// disables the backend in favour of the built-in detector.
    pub fn from_config(
        t2i: &BackendConfig,
        segmentation: &BackendConfig,
        soft_edge: Option<&BackendConfig>,
        foreground: &BackendConfig,
        llm: &BackendConfig,
    ) -> Result<Self, ConfigError> {
        for (kind, cfg) in [
            (BackendKind::T2i, Some(t2i)),
            (BackendKind::Segmentation, Some(segmentation)),
            (BackendKind::SoftEdge, soft_edge),
            (BackendKind::Foreground, Some(foreground)),
            (BackendKind::Llm, Some(llm)),
        ] {
            if let Some(cfg) = cfg {
                cfg.validate(kind)?;
            }
        }
        let http = |kind: BackendKind, cfg: &BackendConfig| -> Result<HttpBackend, ConfigError> {
            Ok(HttpBackend::new(
                kind,
                cfg.endpoint.trim(),
                Duration::from_millis(cfg.timeout_ms),
                cfg.secret(kind)?,
            ))
        };
        let set = BackendSet {
            t2i: if t2i.is_mock() {
                Arc::new(MockTextToImage::new().with_latency(t2i.latency()))
            } else {
                Arc::new(HttpTextToImage(http(BackendKind::T2i, t2i)?))
            },
            segmentation: if segmentation.is_mock() {
                Arc::new(MockSegmenter::new().with_latency(segmentation.latency()))
            } else {
                Arc::new(HttpSegmenter(http(
                    BackendKind::Segmentation,
                    segmentation,
                )?))
            },
            soft_edge: match soft_edge {
                None => None,
                Some(cfg) if cfg.is_mock() => {
                    Some(Arc::new(MockSoftEdge::new().with_latency(cfg.latency()))
                        as Arc<dyn SoftEdgeDetector>)
                }
                Some(cfg) => Some(Arc::new(HttpSoftEdge(http(BackendKind::SoftEdge, cfg)?))
                    as Arc<dyn SoftEdgeDetector>),
            },
            foreground: if foreground.is_mock() {
                Arc::new(MockForeground::all_foreground().with_latency(foreground.latency()))
            } else {
                Arc::new(HttpForeground(http(BackendKind::Foreground, foreground)?))
            },
            llm: if llm.is_mock() {
                let mut mock = MockLanguageModel::new();
                if let Some(dir) = &llm.fixtures {
                    mock = MockLanguageModel::from_dir(dir).map_err(|source| {
                        ConfigError::Fixtures {
                            kind: BackendKind::Llm,
                            path: dir.display().to_string(),
                            source,
                        }
                    })?;
                }
                Arc::new(mock.with_latency(llm.latency()))
            } else {
                Arc::new(HttpLanguageModel(http(BackendKind::Llm, llm)?))
            },
        };
        Ok(Self::new(set))
    }

    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct FlakyLlm {
        calls: AtomicU32,
        timeouts_before_success: u32,
    }

    #[async_trait]
    impl LanguageModel for FlakyLlm {
        async fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.timeouts_before_success {
                Err(BackendError::new(BackendKind::Llm, Failure::Timeout(10)))
            } else {
                Ok("ok".into())
            }
        }
    }

    fn with_llm(llm: Arc<dyn LanguageModel>) -> Backends {
        let mut set = BackendSet::mock();
        set.llm = llm;
        Backends::new(set)
    }

    #[tokio::test]
    async fn single_timeout_is_retried_and_logged() {
        let llm = Arc::new(FlakyLlm {
            calls: AtomicU32::new(0),
            timeouts_before_success: 1,
        });
        let backends = with_llm(llm.clone());
        assert_eq!(backends.llm.complete("hi").await.unwrap(), "ok");
        assert_eq!(llm.calls.load(Ordering::SeqCst), 2);
        let log = backends.call_log();
        assert_eq!(log.len(), 2);
        assert_eq!(log[0].outcome, CallOutcome::Failed);
        assert_eq!((log[1].attempt, log[1].outcome), (2, CallOutcome::Ok));
    }

    #[tokio::test]
    async fn second_timeout_surfaces() {
        let llm = Arc::new(FlakyLlm {
            calls: AtomicU32::new(0),
            timeouts_before_success: 5,
        });
        let backends = with_llm(llm.clone());
        let err = backends.llm.complete("hi").await.unwrap_err();
        assert!(err.is_timeout());
        assert_eq!(err.kind, BackendKind::Llm);
        assert_eq!(llm.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn config_validation() {
        let mut cfg = BackendConfig::default();
        assert!(cfg.validate(BackendKind::T2i).is_ok());
        cfg.timeout_ms = 0;
        assert!(matches!(
            cfg.validate(BackendKind::T2i),
            Err(ConfigError::ZeroTimeout { .. })
        ));
        cfg.timeout_ms = 5;
        cfg.endpoint = "ftp://x".into();
        assert!(matches!(
            cfg.validate(BackendKind::T2i),
            Err(ConfigError::BadEndpoint { .. })
        ));
    }

    #[test]
    fn prompt_hash_is_sha256_hex() {
        assert_eq!(
            prompt_hash("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
