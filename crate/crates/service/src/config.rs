//! Service configuration: a TOML file whose values environment variables
//! can override.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use overseec_core::raster::{Thresholds, TilingParams};
use overseec_engine::segment::SegParams;
use overseec_engine::session::EngineOptions;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("environment variable {var}={value:?}: {reason}")]
    Env {
        var: String,
        value: String,
        reason: String,
    },
    #[error("invalid backend {0:?}")]
    Backend(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub store: StoreConfig,
    pub segmentation: SegConfig,
    pub llm: LlmConfig,
    pub planner: PlannerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Jobs running at once; further jobs wait queued.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    /// `fixture:DIR` or `http:URL`.
    pub backend: String,
    /// Same syntax; defaults to the segmentation backend's source.
    pub refine_backend: Option<String>,
    pub tile_size: usize,
    pub overlap: usize,
    /// Refinement tiling; defaults to the segmentation tiling.
    pub refine_tile_size: Option<usize>,
    pub refine_overlap: Option<usize>,
    pub linear_threshold: f64,
    pub areal_threshold: f64,
    pub retries: u32,
    pub strict_refine: bool,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// `stub:DIR` or `http:URL`.
    pub backend: String,
    pub model: String,
    pub timeout_secs: f64,
    /// Retries of failed HTTP calls.
    pub max_retries: u32,
    /// Re-asks after an unparseable answer.
    pub parse_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub downsample: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            server: ServerConfig::default(),
            store: StoreConfig::default(),
            segmentation: SegConfig::default(),
            llm: LlmConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            workers: 2,
        }
    }
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            root: PathBuf::from("overseec-data"),
        }
    }
}

impl Default for SegConfig {
    fn default() -> Self {
        let seg = SegParams::default();
        Self {
            backend: "fixture:fixtures".into(),
            refine_backend: None,
            tile_size: seg.seg_tiling.tile_size,
            overlap: seg.seg_tiling.overlap,
            refine_tile_size: None,
            refine_overlap: None,
            linear_threshold: seg.thresholds.linear,
            areal_threshold: seg.thresholds.areal,
            retries: seg.retries,
            strict_refine: seg.strict_refine,
            max_in_flight: seg.max_in_flight,
            timeout_secs: 60.0,
        }
    }
}

impl Default for LlmConfig {
    fn default() -> Self {
        let http = overseec_engine::llm::LlmBackendConfig::default();
        Self {
            backend: "stub:fixtures".into(),
            model: http.model,
            timeout_secs: http.timeout_secs,
            max_retries: http.max_retries,
            parse_retries: overseec_engine::interpret::DEFAULT_MAX_RETRIES,
        }
    }
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { downsample: 1 }
    }
}

fn parsed<T: FromStr>(var: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::Env {
        var: var.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl Config {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })
    }

    /// Reads `path` when given (defaults otherwise), then applies process
    /// environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.into(),
                    source,
                })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.check()?;
        Ok(config)
    }

    /// Overrides fields from `OVERSEEC_*` variables looked up through `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = var("OVERSEEC_BIND") {
            self.server.bind = v;
        }
        if let Some(v) = var("OVERSEEC_WORKERS") {
            self.server.workers = parsed("OVERSEEC_WORKERS", &v)?;
        }
        if let Some(v) = var("OVERSEEC_STORE") {
            self.store.root = PathBuf::from(v);
        }
        if let Some(v) = var("OVERSEEC_SEG_BACKEND") {
            self.segmentation.backend = v;
        }
        if let Some(v) = var("OVERSEEC_REFINE_BACKEND") {
            self.segmentation.refine_backend = Some(v);
        }
        if let Some(v) = var("OVERSEEC_TILE_SIZE") {
            self.segmentation.tile_size = parsed("OVERSEEC_TILE_SIZE", &v)?;
        }
        if let Some(v) = var("OVERSEEC_TILE_OVERLAP") {
            self.segmentation.overlap = parsed("OVERSEEC_TILE_OVERLAP", &v)?;
        }
        if let Some(v) = var("OVERSEEC_REFINE_TILE_SIZE") {
            self.segmentation.refine_tile_size = Some(parsed("OVERSEEC_REFINE_TILE_SIZE", &v)?);
        }
        if let Some(v) = var("OVERSEEC_REFINE_OVERLAP") {
            self.segmentation.refine_overlap = Some(parsed("OVERSEEC_REFINE_OVERLAP", &v)?);
        }
        if let Some(v) = var("OVERSEEC_LLM_BACKEND") {
            self.llm.backend = v;
        }
        if let Some(v) = var("OVERSEEC_LLM_MODEL") {
            self.llm.model = v;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.server.workers == 0 {
            return bad("server.workers must be at least 1".into());
        }
        for t in [self.seg_tiling(), self.refine_tiling()] {
            if t.tile_size == 0 || t.overlap >= t.tile_size {
                return bad(format!("tiling {}/{} needs 0 <= overlap < tile_size", t.tile_size, t.overlap));
            }
        }
        for (name, v) in [
            ("linear_threshold", self.segmentation.linear_threshold),
            ("areal_threshold", self.segmentation.areal_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("segmentation.{name} = {v} is outside [0, 1]"));
            }
        }
        if self.segmentation.max_in_flight == 0 {
            return bad("segmentation.max_in_flight must be at least 1".into());
        }
        if self.planner.downsample == 0 {
            return bad("planner.downsample must be at least 1".into());
        }
        self.seg_source()?;
        self.refine_source()?;
        self.llm_source()?;
        Ok(())
    }

    pub fn seg_tiling(&self) -> TilingParams {
        TilingParams {
            tile_size: self.segmentation.tile_size,
            overlap: self.segmentation.overlap,
        }
    }

    pub fn refine_tiling(&self) -> TilingParams {
        TilingParams {
            tile_size: self.segmentation.refine_tile_size.unwrap_or(self.segmentation.tile_size),
            overlap: self.segmentation.refine_overlap.unwrap_or(self.segmentation.overlap),
        }
    }

    pub fn engine_options(&self) -> EngineOptions {
        let s = &self.segmentation;
        EngineOptions {
            seg: SegParams {
                seg_tiling: self.seg_tiling(),
                refine_tiling: self.refine_tiling(),
                thresholds: Thresholds {
                    linear: s.linear_threshold,
                    areal: s.areal_threshold,
                },
                retries: s.retries,
                strict_refine: s.strict_refine,
                max_in_flight: s.max_in_flight,
            },
            llm_retries: self.llm.parse_retries,
            plan_factor: self.planner.downsample,
        }
    }

    pub fn seg_source(&self) -> Result<ModelSource, ConfigError> {
        ModelSource::parse(&self.segmentation.backend, "fixture")
    }

    pub fn refine_source(&self) -> Result<ModelSource, ConfigError> {
        match &self.segmentation.refine_backend {
            Some(b) => ModelSource::parse(b, "fixture"),
            None => self.seg_source(),
        }
    }

    pub fn llm_source(&self) -> Result<ModelSource, ConfigError> {
        ModelSource::parse(&self.llm.backend, "stub")
    }
}

/// Where a model backend lives: a local fixture directory or an HTTP server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSource {
    Local(PathBuf),
    Http(String),
}

impl ModelSource {
    /// Parses `<local>:DIR`, `http:URL` or a bare `http://` URL.
    pub fn parse(text: &str, local: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::Backend(text.into());
        if text.starts_with("http://") || text.starts_with("https://") {
            return Ok(ModelSource::Http(text.trim_end_matches('/').into()));
        }
        let (scheme, rest) = text.split_once(':').ok_or_else(bad)?;
        if rest.is_empty() {
            return Err(bad());
        }
        match scheme {
            "http" => Ok(ModelSource::Http(rest.trim_end_matches('/').into())),
            s if s == local => Ok(ModelSource::Local(PathBuf::from(rest))),
            _ => Err(bad()),
        }
    }
}
