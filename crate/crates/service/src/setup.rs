//! Builds an [`Engine`] from configuration.

use std::sync::Arc;

use overseec_engine::backends::{HttpRefine, HttpSeg, PaletteRefine, PaletteSeg};
use overseec_engine::llm::{HttpBackend, LlmBackend, LlmBackendConfig, StubBackend};
use overseec_engine::segment::{RefineBackend, SegBackend};
use overseec_engine::session::Engine;
use overseec_engine::store::Store;
use thiserror::Error;

use crate::config::{Config, ConfigError, ModelSource};

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("segmentation backend: {0}")]
    Seg(String),
    #[error("llm backend: {0}")]
    Llm(String),
    #[error("store: {0}")]
    Store(String),
}

pub fn seg_backend(config: &Config) -> Result<Arc<dyn SegBackend>, SetupError> {
    let timeout = config.segmentation.timeout_secs;
    Ok(match config.seg_source()? {
        ModelSource::Local(dir) => Arc::new(PaletteSeg::from_dir(&dir).map_err(|e| SetupError::Seg(e.to_string()))?),
        ModelSource::Http(url) => Arc::new(HttpSeg::new(url, timeout).map_err(|e| SetupError::Seg(e.to_string()))?),
    })
}

pub fn refine_backend(config: &Config) -> Result<Arc<dyn RefineBackend>, SetupError> {
    let timeout = config.segmentation.timeout_secs;
    Ok(match config.refine_source()? {
        ModelSource::Local(dir) => Arc::new(PaletteRefine::from_dir(&dir).map_err(|e| SetupError::Seg(e.to_string()))?),
        ModelSource::Http(url) => Arc::new(HttpRefine::new(url, timeout).map_err(|e| SetupError::Seg(e.to_string()))?),
    })
}

pub fn llm_backend(config: &Config) -> Result<Arc<dyn LlmBackend>, SetupError> {
    Ok(match config.llm_source()? {
        ModelSource::Local(dir) => Arc::new(StubBackend::new(dir)),
        ModelSource::Http(endpoint) => Arc::new(
            HttpBackend::new(LlmBackendConfig {
                endpoint,
                model: config.llm.model.clone(),
                timeout_secs: config.llm.timeout_secs,
                max_retries: config.llm.max_retries,
            })
            .map_err(|e| SetupError::Llm(e.to_string()))?,
        ),
    })
}

/// Opens the store and connects every backend. HTTP backends hold blocking
/// clients, so call this outside any async runtime.
pub fn build_engine(config: &Config) -> Result<Engine, SetupError> {
    config.check()?;
    let store = Store::open(&config.store.root).map_err(|e| SetupError::Store(e.to_string()))?;
    Ok(Engine::new(
        store,
        seg_backend(config)?,
        refine_backend(config)?,
        llm_backend(config)?,
        config.engine_options(),
    ))
}

/// Backend identities and pipeline parameters, as served from `/info`.
pub fn describe(config: &Config) -> serde_json::Value {
    let options = config.engine_options();
    serde_json::json!({
        "segmentation_backend": config.segmentation.backend,
        "refine_backend": config.segmentation.refine_backend.as_deref().unwrap_or(&config.segmentation.backend),
        "llm_backend": config.llm.backend,
        "workers": config.server.workers,
        "segmentation": options.seg,
        "planner_downsample": options.plan_factor,
    })
}
