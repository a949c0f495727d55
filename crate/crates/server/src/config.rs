//! Service configuration: a TOML file plus `INKSPIRE_*` environment
//! overrides.
//!
//! ```toml
//! [server]
//! bind = "127.0.0.1:8080"
//! data_dir = "data"          # omit to keep sessions in memory only
//! rng_seed = 7               # omit to seed from OS entropy
//!
//! [guidance]                 # adherence = base - span * decay_base^(n / stroke_divisor)
//! base = 7.0
//! span = 4.0
//! decay_base = 0.5
//! stroke_divisor = 3.0
//!
//! [raster]
//! width = 512
//! height = 512
//! polarity = "black_on_white"
//!
//! [scaffold]
//! dilation_radius = 2
//! underlay_alpha = 0.3
//!
//! [prompt]
//! template = "a product design of a {subject} inspired by {inspiration}, clean studio background"
//! subject_only = "a product design of a {subject}, clean studio background"
//!
//! [analogy]
//! default_count = 10
//! templates_dir = "templates"
//!
//! [backends.t2i]
//! endpoint = "http://gpu-box:7860/generate"
//! timeout_ms = 60000
//! auth = "T2I_TOKEN"         # name of the variable holding a bearer token
//!
//! [backends.soft_edge]
//! endpoint = "none"          # use the built-in gradient detector
//!
//! [backends.llm]
//! endpoint = "mock"
//! fixtures = "fixtures/llm"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.
//! For each backend kind `K` in `T2I`, `SEGMENTATION`, `SOFT_EDGE`,
//! `FOREGROUND`, `LLM` the variables `INKSPIRE_K_ENDPOINT` and
//! `INKSPIRE_K_TIMEOUT_MS` override the file, as do `INKSPIRE_BIND`,
//! `INKSPIRE_DATA_DIR` and `INKSPIRE_LLM_FIXTURES`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sketchloop_core::analogy::{
    PromptTemplates, TemplateError, DEFAULT_INSPIRATIONS, MAX_INSPIRATIONS,
};
use sketchloop_core::backends::{
    BackendConfig, BackendKind, Backends, ConfigError as BackendConfigError,
};
use sketchloop_core::guidance::{GuidanceError, GuidanceSchedule};
use sketchloop_core::raster::RasterConfig;
use sketchloop_core::scaffold::ScaffoldConfig;
use thiserror::Error;

/// Soft-edge endpoint value that selects the built-in detector.
pub const NO_BACKEND: &str = "none";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("environment variable {var}={value:?} is not valid: {reason}")]
    Env {
        var: String,
        value: String,
        reason: String,
    },
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Backend(#[from] BackendConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub data_dir: Option<PathBuf>,
    /// Seeds the session RNG (initial seeds and remixes) for reproducible runs.
    pub rng_seed: Option<u64>,
    /// Per-session buffer of pending update notifications.
    pub update_buffer: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: None,
            rng_seed: None,
            update_buffer: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Used once an inspiration is selected. Placeholders: `{subject}`, `{inspiration}`.
    pub template: String,
    /// Used before any inspiration is selected. Placeholder: `{subject}`.
    pub subject_only: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            template:
                "a product design of a {subject} inspired by {inspiration}, clean studio background"
                    .into(),
            subject_only: "a product design of a {subject}, clean studio background".into(),
        }
    }
}

impl PromptConfig {
    /// Text sent to the generator: a manual prompt wins, then the
    /// inspiration template, then the subject-only template.
    pub fn assemble(
        &self,
        subject: &str,
        inspiration: Option<&str>,
        manual: Option<&str>,
    ) -> String {
        if let Some(text) = manual.map(str::trim).filter(|t| !t.is_empty()) {
            return text.to_string();
        }
        match inspiration.map(str::trim).filter(|t| !t.is_empty()) {
            Some(insp) => fill(
                &self.template,
                &[("{subject}", subject), ("{inspiration}", insp)],
            ),
            None => fill(&self.subject_only, &[("{subject}", subject)]),
        }
    }
}

/// Single left-to-right pass so substituted text is never re-expanded.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 32);
    let mut rest = template;
    'scan: while let Some(i) = rest.find('{') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        for (key, value) in values {
            if let Some(after) = tail.strip_prefix(key) {
                out.push_str(value);
                rest = after;
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalogyConfig {
    pub default_count: usize,
    /// Directory with replacement prompt texts; missing files keep the defaults.
    pub templates_dir: Option<PathBuf>,
}

impl Default for AnalogyConfig {
    fn default() -> Self {
        Self {
            default_count: DEFAULT_INSPIRATIONS,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub t2i: BackendConfig,
    pub segmentation: BackendConfig,
    pub soft_edge: BackendConfig,
    pub foreground: BackendConfig,
    pub llm: BackendConfig,
}

impl BackendsConfig {
    fn slot(&mut self, kind: BackendKind) -> &mut BackendConfig {
        match kind {
            BackendKind::T2i => &mut self.t2i,
            BackendKind::Segmentation => &mut self.segmentation,
            BackendKind::SoftEdge => &mut self.soft_edge,
            BackendKind::Foreground => &mut self.foreground,
            BackendKind::Llm => &mut self.llm,
        }
    }

    fn soft_edge_enabled(&self) -> bool {
        self.soft_edge.endpoint.trim() != NO_BACKEND
    }

    pub fn build(&self) -> Result<Backends, BackendConfigError> {
        Backends::from_config(
            &self.t2i,
            &self.segmentation,
            self.soft_edge_enabled().then_some(&self.soft_edge),
            &self.foreground,
            &self.llm,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub server: ServerConfig,
    pub guidance: GuidanceSchedule,
    pub raster: RasterConfig,
    pub scaffold: ScaffoldConfig,
    pub prompt: PromptConfig,
    pub analogy: AnalogyConfig,
    pub backends: BackendsConfig,
}

impl ServiceConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            source: Box::new(e),
        })
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config = Self::from_toml(&text, &path.display().to_string())?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        resolve(&mut self.server.data_dir);
        resolve(&mut self.analogy.templates_dir);
        for kind in BackendKind::ALL {
            resolve(&mut self.backends.slot(kind).fixtures);
        }
    }

    /// Applies `INKSPIRE_*` overrides read through `lookup`.
    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        if let Some(bind) = lookup("INKSPIRE_BIND") {
            self.server.bind = bind;
        }
        if let Some(dir) = lookup("INKSPIRE_DATA_DIR") {
            self.server.data_dir = Some(PathBuf::from(dir));
        }
        if let Some(dir) = lookup("INKSPIRE_LLM_FIXTURES") {
            self.backends.llm.fixtures = Some(PathBuf::from(dir));
        }
        for kind in BackendKind::ALL {
            let prefix = format!("INKSPIRE_{}", kind.as_str().to_ascii_uppercase());
            let slot = self.backends.slot(kind);
            if let Some(endpoint) = lookup(&format!("{prefix}_ENDPOINT")) {
                slot.endpoint = endpoint;
            }
            let var = format!("{prefix}_TIMEOUT_MS");
            if let Some(value) = lookup(&var) {
                slot.timeout_ms = value.trim().parse().map_err(|e: std::num::ParseIntError| {
                    ConfigError::Env {
                        var: var.clone(),
                        value: value.clone(),
                        reason: e.to_string(),
                    }
                })?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.guidance.validate()?;
        if self.raster.width == 0 || self.raster.height == 0 {
            return Err(ConfigError::Invalid("raster size must be non-zero".into()));
        }
        if !(1..=MAX_INSPIRATIONS).contains(&self.analogy.default_count) {
            return Err(ConfigError::Invalid(format!(
                "analogy.default_count must be in 1..={MAX_INSPIRATIONS}"
            )));
        }
        if !self.prompt.template.contains("{inspiration}") {
            return Err(ConfigError::Invalid(
                "prompt.template must contain {inspiration}".into(),
            ));
        }
        for (name, text) in [
            ("template", &self.prompt.template),
            ("subject_only", &self.prompt.subject_only),
        ] {
            if !text.contains("{subject}") {
                return Err(ConfigError::Invalid(format!(
                    "prompt.{name} must contain {{subject}}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.scaffold.underlay_alpha) {
            return Err(ConfigError::Invalid(
                "scaffold.underlay_alpha must be in [0, 1]".into(),
            ));
        }
        for kind in BackendKind::ALL {
            let cfg = match kind {
                BackendKind::T2i => &self.backends.t2i,
                BackendKind::Segmentation => &self.backends.segmentation,
                BackendKind::SoftEdge if !self.backends.soft_edge_enabled() => continue,
                BackendKind::SoftEdge => &self.backends.soft_edge,
                BackendKind::Foreground => &self.backends.foreground,
                BackendKind::Llm => &self.backends.llm,
            };
            cfg.validate(kind)?;
        }
        Ok(())
    }

    pub fn templates(&self) -> Result<PromptTemplates, ConfigError> {
        Ok(match &self.analogy.templates_dir {
            Some(dir) => PromptTemplates::load_dir(dir)?,
            None => PromptTemplates::default(),
        })
    }
}
