#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use reqwest::StatusCode;
use serde_json::{json, Value};
use sketchloop_core::backends::{MockSegmenter, MockSoftEdge, SoftEdgeDetector};
use sketchloop_core::imaging::Png;
use sketchloop_core::scaffold::{dilate, extract_boundaries};
use sketchloop_server::{AppState, ServiceConfig};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/llm");

/// Mock backends, fixture LLM, fixed RNG seed.
pub fn mock_config(data_dir: Option<&Path>) -> ServiceConfig {
    let mut config = ServiceConfig::default();
    config.server.rng_seed = Some(7);
    config.server.data_dir = data_dir.map(Path::to_path_buf);
    config.backends.llm.fixtures = Some(FIXTURES.into());
    config
}

pub struct Server {
    pub base: String,
    pub app: Arc<AppState>,
    client: reqwest::Client,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl Server {
    pub async fn start(app: Arc<AppState>) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        let served = app.clone();
        let task = tokio::spawn(async move {
            sketchloop_server::serve(served, listener, async {
                let _ = rx.await;
            })
            .await
            .unwrap();
        });
        Self {
            base,
            app,
            client: reqwest::Client::new(),
            shutdown: Some(tx),
            task,
        }
    }

    pub async fn with_config(config: ServiceConfig) -> Self {
        Self::start(AppState::from_config(config).unwrap()).await
    }

    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = tokio::time::timeout(Duration::from_secs(5), &mut self.task).await;
    }

    async fn send(&self, request: reqwest::RequestBuilder) -> (StatusCode, Value) {
        let response = request.send().await.unwrap();
        let status = response.status();
        let text = response.text().await.unwrap();
        let value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        self.send(self.client.get(format!("{}{path}", self.base)))
            .await
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.send(self.client.post(format!("{}{path}", self.base)).json(&body))
            .await
    }

    pub async fn put(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.send(self.client.put(format!("{}{path}", self.base)).json(&body))
            .await
    }

    pub async fn delete(&self, path: &str) -> (StatusCode, Value) {
        self.send(self.client.delete(format!("{}{path}", self.base)))
            .await
    }

    pub async fn bytes(&self, path: &str) -> (StatusCode, Vec<u8>) {
        let response = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        let status = response.status();
        (status, response.bytes().await.unwrap().to_vec())
    }

    pub async fn text(&self, path: &str) -> (StatusCode, String) {
        let response = self
            .client
            .get(format!("{}{path}", self.base))
            .send()
            .await
            .unwrap();
        let status = response.status();
        (status, response.text().await.unwrap())
    }

    pub fn raw(&self) -> &reqwest::Client {
        &self.client
    }

    pub async fn create(&self, subject: &str, concept: &str) -> String {
        let (status, body) = self
            .post(
                "/sessions",
                json!({ "subject": subject, "concept": concept }),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    /// Polls a job until it finishes.
    pub async fn job(&self, session: &str, job: u64) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let (status, body) = self.get(&format!("/sessions/{session}/jobs/{job}")).await;
            assert_eq!(status, StatusCode::OK, "{body}");
            if ["done", "failed", "superseded"].contains(&body["state"].as_str().unwrap()) {
                return body;
            }
            assert!(
                Instant::now() < deadline,
                "job {job} did not finish: {body}"
            );
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
}

/// A short diagonal-ish polyline that differs per index.
pub fn stroke(i: usize) -> Value {
    let x = 40.0 + (i * 37 % 400) as f64;
    let y = 60.0 + (i * 53 % 380) as f64;
    json!({
        "points": [[x, y], [x + 30.0, y + 12.0], [x + 55.0, y + 40.0]],
        "width": 3.0
    })
}

/// Checks that every scaffold pixel lies within `radius` of a segmentation
/// boundary of the design and on a non-zero soft edge, recomputing both maps
/// with the mock backends. Returns the number of scaffold pixels.
pub async fn check_subset_law(
    design: &[u8],
    scaffold: &[u8],
    radius: u32,
) -> Result<usize, String> {
    let design = Png::from_bytes(design.to_vec())
        .decode_rgb()
        .map_err(|e| e.to_string())?;
    let scaffold = Png::from_bytes(scaffold.to_vec())
        .decode_gray_alpha()
        .map_err(|e| e.to_string())?;
    if design.dimensions() != scaffold.dimensions() {
        return Err(format!(
            "{:?} vs {:?}",
            design.dimensions(),
            scaffold.dimensions()
        ));
    }
    let zone = dilate(
        &extract_boundaries(&MockSegmenter::palette_labels(&design)),
        radius,
    );
    let edges = MockSoftEdge::new()
        .soft_edges(&design)
        .await
        .map_err(|e| e.to_string())?;
    let mut support = 0;
    for (x, y, px) in scaffold.enumerate_pixels() {
        if px.0[1] == 0 {
            continue;
        }
        support += 1;
        if !*zone.get(x, y) {
            return Err(format!("scaffold pixel ({x},{y}) is off the boundary zone"));
        }
        if *edges.get(x, y) <= 0.0 {
            return Err(format!("scaffold pixel ({x},{y}) has no soft edge"));
        }
    }
    Ok(support)
}

/// Everything observable about one iteration, for run-to-run comparison.
#[derive(Debug, PartialEq)]
pub struct Observed {
    pub stroke_count: u64,
    pub guidance: f64,
    pub seed: u64,
    pub prompt: String,
    pub design: Vec<u8>,
    pub scaffold: Vec<u8>,
}

pub struct Scenario {
    pub inspirations: Vec<String>,
    pub iterations: Vec<Observed>,
    pub subset_violations: Vec<String>,
    pub scaffold_pixels: usize,
}

/// Create a session, ask for inspirations, select the first one and draw
/// `strokes` strokes, waiting for each generation.
pub async fn run_scenario(server: &Server, strokes: usize) -> Scenario {
    let id = server.create("car", "protective").await;
    let (status, set) = server
        .post(&format!("/sessions/{id}/inspirations"), json!({}))
        .await;
    assert_eq!(status, StatusCode::OK, "{set}");
    let inspirations: Vec<String> = set["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["label"].as_str().unwrap().to_string())
        .collect();
    let (status, selected) = server
        .post(
            &format!("/sessions/{id}/inspiration?wait=true"),
            json!({ "label": inspirations[0] }),
        )
        .await;
    assert_eq!(status, StatusCode::OK, "{selected}");
    for i in 0..strokes {
        let (status, body) = server
            .post(&format!("/sessions/{id}/strokes?wait=true"), stroke(i))
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["job"]["state"], "done", "{body}");
    }

    let (_, state) = server.get(&format!("/sessions/{id}")).await;
    let radius = server.app.config.scaffold.dilation_radius;
    let mut iterations = Vec::new();
    let mut subset_violations = Vec::new();
    let mut scaffold_pixels = 0;
    for it in state["iterations"].as_array().unwrap() {
        let k = it["index"].as_u64().unwrap();
        let (s1, design) = server
            .bytes(&format!("/sessions/{id}/iterations/{k}/design"))
            .await;
        let (s2, scaffold) = server
            .bytes(&format!("/sessions/{id}/iterations/{k}/scaffold"))
            .await;
        if s1 != StatusCode::OK || s2 != StatusCode::OK {
            subset_violations.push(format!("iteration {k}: design {s1}, scaffold {s2}"));
            continue;
        }
        match check_subset_law(&design, &scaffold, radius).await {
            Ok(n) => scaffold_pixels += n,
            Err(e) => subset_violations.push(format!("iteration {k}: {e}")),
        }
        iterations.push(Observed {
            stroke_count: it["stroke_count"].as_u64().unwrap(),
            guidance: it["guidance"].as_f64().unwrap(),
            seed: it["seed"].as_u64().unwrap(),
            prompt: it["prompt"].as_str().unwrap().to_string(),
            design,
            scaffold,
        });
    }
    Scenario {
        inspirations,
        iterations,
        subset_violations,
        scaffold_pixels,
    }
}
