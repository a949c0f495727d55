//! HTTP+JSON adapters. Images travel as base64 PNG.
//!
//! Wire formats (request → response):
//!
//! | kind         | request body                                                        | response body            |
//! |--------------|---------------------------------------------------------------------|--------------------------|
//! | t2i          | `{prompt, control_image, adherence, seed, width, height, extra}`    | `{image}`                |
//! | segmentation | `{image}`                                                           | `{label_map}` (L8 PNG, pixel value = region id) |
//! | soft_edge    | `{image}`                                                           | `{edges}` (L8 PNG)       |
//! | foreground   | `{image}`                                                           | `{mask}` (L8 PNG)        |
//! | llm          | `{prompt}`                                                          | `{text}`                 |
//!
//! The t2i adapter sends the guidance schedule output as `adherence`; a
//! ControlNet server is expected to apply it as its guidance scale.

use std::time::Duration;

use async_trait::async_trait;
use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, BackendKind, Failure, ForegroundExtractor, GenerationRequest, LanguageModel,
    Segmenter, SoftEdgeDetector, TextToImage,
};
use crate::imaging::{self, AlphaMask, LabelMap, Png, SoftEdgeMap};

const BODY_EXCERPT: usize = 512;

/// Shared client for one remote endpoint.
#[derive(Clone)]
pub struct HttpBackend {
    kind: BackendKind,
    client: reqwest::Client,
    endpoint: String,
    timeout: Duration,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(
        kind: BackendKind,
        endpoint: &str,
        timeout: Duration,
        token: Option<String>,
    ) -> Self {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .expect("http client builds with static options");
        Self {
            kind,
            client,
            endpoint: endpoint.to_string(),
            timeout,
            token,
        }
    }

    fn err(&self, failure: Failure) -> BackendError {
        BackendError::new(self.kind, failure)
    }

    async fn post<Req: Serialize + Sync, Resp: DeserializeOwned>(
        &self,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let mut request = self.client.post(&self.endpoint).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.map_err(|e| self.transport(e))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().await.unwrap_or_default();
            let body: String = text.chars().take(BODY_EXCERPT).collect();
            return Err(self.err(Failure::Remote {
                status: status.as_u16(),
                body,
            }));
        }
        let bytes = response.bytes().await.map_err(|e| self.transport(e))?;
        serde_json::from_slice(&bytes).map_err(|e| self.err(Failure::Decode(e.to_string())))
    }

    fn transport(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            self.err(Failure::Timeout(self.timeout.as_millis() as u64))
        } else {
            self.err(Failure::Transport(e.to_string()))
        }
    }

    fn decode_png(&self, b64: &str) -> Result<Png, BackendError> {
        if b64.trim().is_empty() {
            return Err(self.err(Failure::EmptyResponse));
        }
        Png::from_base64(b64).map_err(|e| self.err(Failure::Decode(e.to_string())))
    }

    fn encode_design(&self, design: &RgbImage) -> Result<String, BackendError> {
        imaging::encode_rgb(design)
            .map(|p| p.to_base64())
            .map_err(|e| self.err(Failure::InvalidRequest(e.to_string())))
    }

    fn check_size(&self, expected: (u32, u32), actual: (u32, u32)) -> Result<(), BackendError> {
        if expected != actual {
            return Err(self.err(Failure::SizeMismatch { expected, actual }));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ImageBody {
    image: String,
}

#[derive(Serialize)]
struct GenerateBody<'a> {
    prompt: &'a str,
    control_image: String,
    adherence: f64,
    seed: u64,
    width: u32,
    height: u32,
    extra: &'a std::collections::BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct ImageReply {
    image: String,
}

#[derive(Deserialize)]
struct LabelReply {
    label_map: String,
}

#[derive(Deserialize)]
struct EdgeReply {
    edges: String,
}

#[derive(Deserialize)]
struct MaskReply {
    mask: String,
}

#[derive(Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

pub struct HttpTextToImage(pub HttpBackend);
pub struct HttpSegmenter(pub HttpBackend);
pub struct HttpSoftEdge(pub HttpBackend);
pub struct HttpForeground(pub HttpBackend);
pub struct HttpLanguageModel(pub HttpBackend);

#[async_trait]
impl TextToImage for HttpTextToImage {
    async fn generate(&self, request: &GenerationRequest) -> Result<RgbImage, BackendError> {
        let b = &self.0;
        let control = request
            .control_image
            .to_png()
            .map_err(|e| b.err(Failure::InvalidRequest(e.to_string())))?;
        let reply: ImageReply = b
            .post(&GenerateBody {
                prompt: &request.prompt,
                control_image: control.to_base64(),
                adherence: request.adherence,
                seed: request.seed,
                width: request.width,
                height: request.height,
                extra: &request.extra,
            })
            .await?;
        let image = b
            .decode_png(&reply.image)?
            .decode_rgb()
            .map_err(|e| b.err(Failure::Decode(e.to_string())))?;
        b.check_size((request.width, request.height), image.dimensions())?;
        Ok(image)
    }
}

#[async_trait]
impl Segmenter for HttpSegmenter {
    async fn segment(&self, design: &RgbImage) -> Result<LabelMap, BackendError> {
        let b = &self.0;
        let reply: LabelReply = b
            .post(&ImageBody {
                image: b.encode_design(design)?,
            })
            .await?;
        let gray = b
            .decode_png(&reply.label_map)?
            .decode_gray()
            .map_err(|e| b.err(Failure::Decode(e.to_string())))?;
        b.check_size(design.dimensions(), gray.dimensions())?;
        Ok(imaging::gray_to_labels(&gray))
    }
}

#[async_trait]
impl SoftEdgeDetector for HttpSoftEdge {
    async fn soft_edges(&self, design: &RgbImage) -> Result<SoftEdgeMap, BackendError> {
        let b = &self.0;
        let reply: EdgeReply = b
            .post(&ImageBody {
                image: b.encode_design(design)?,
            })
            .await?;
        let gray = b
            .decode_png(&reply.edges)?
            .decode_gray()
            .map_err(|e| b.err(Failure::Decode(e.to_string())))?;
        b.check_size(design.dimensions(), gray.dimensions())?;
        Ok(imaging::gray_to_unit(&gray))
    }
}

#[async_trait]
impl ForegroundExtractor for HttpForeground {
    async fn alpha_mask(&self, design: &RgbImage) -> Result<AlphaMask, BackendError> {
        let b = &self.0;
        let reply: MaskReply = b
            .post(&ImageBody {
                image: b.encode_design(design)?,
            })
            .await?;
        let gray = b
            .decode_png(&reply.mask)?
            .decode_gray()
            .map_err(|e| b.err(Failure::Decode(e.to_string())))?;
        b.check_size(design.dimensions(), gray.dimensions())?;
        Ok(imaging::gray_to_unit(&gray))
    }
}

#[async_trait]
impl LanguageModel for HttpLanguageModel {
    async fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let b = &self.0;
        let reply: TextReply = b.post(&PromptBody { prompt }).await?;
        if reply.text.trim().is_empty() {
            return Err(b.err(Failure::EmptyResponse));
        }
        Ok(reply.text)
    }
}
