//! HTTP inference service: light extraction and light transfer behind a
//! single-consumer worker queue, plus preset listing and health.
//!
//! All bodies are JSON; images travel as base64-encoded PNG.

pub mod api;
pub mod presets;
pub mod worker;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post};
use axum::Router;
use lightfx_core::decouple::{DecoupleModel, Role};
use lightfx_core::fsutil::sha256_file;
use lightfx_core::translight::{TransLight, BUNDLE_FILE};

pub use api::{ApiError, ExtractRequest, ExtractResponse, Health, LightPreset, TransferRequestWire, TransferResponse};
pub use worker::Worker;

/// Value reported by `/health` for a model that is not loaded.
pub const UNLOADED: &str = "unloaded";
pub const MAX_BODY_BYTES: usize = 32 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("loading {what} from {path}: {source}")]
    Load { what: &'static str, path: PathBuf, source: lightfx_core::Error },
}

/// Read-only models owned by the worker thread.
#[derive(Debug, Default)]
pub struct Models {
    pub extraction: Option<DecoupleModel<f32>>,
    pub transfer: Option<TransLight<f32>>,
}

/// Paths the service loads at startup; either model may be absent.
#[derive(Clone, Debug, Default)]
pub struct ServiceConfig {
    pub extraction: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
    pub presets: PathBuf,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    hashes: BTreeMap<String, String>,
    extraction_loaded: bool,
    transfer_loaded: bool,
    presets: PathBuf,
    worker: Worker,
}

impl AppState {
    /// Wraps already loaded models; `hashes` is what `/health` reports.
    pub fn new(models: Models, hashes: BTreeMap<String, String>, presets: &Path) -> Self {
        let inner = Inner {
            extraction_loaded: models.extraction.is_some(),
            transfer_loaded: models.transfer.is_some(),
            hashes,
            presets: presets.to_path_buf(),
            worker: Worker::spawn(models),
        };
        Self { inner: Arc::new(inner) }
    }

    pub fn load(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut models = Models::default();
        let mut hashes = BTreeMap::from([("extraction".to_string(), UNLOADED.to_string()), ("transfer".to_string(), UNLOADED.to_string())]);
        if let Some(p) = &cfg.extraction {
            let err = |source| ServiceError::Load { what: "extraction checkpoint", path: p.clone(), source };
            models.extraction = Some(DecoupleModel::load(p, Role::Extraction).map_err(err)?);
            hashes.insert("extraction".into(), sha256_file(p).map_err(err)?);
        }
        if let Some(p) = &cfg.bundle {
            let err = |source| ServiceError::Load { what: "transfer bundle", path: p.clone(), source };
            models.transfer = Some(TransLight::load_bundle(p).map_err(err)?);
            hashes.insert("transfer".into(), sha256_file(&p.join(BUNDLE_FILE)).map_err(err)?);
        }
        Ok(Self::new(models, hashes, &cfg.presets))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/extract", post(api::extract))
        .route("/transfer", post(api::transfer))
        .route("/lights", get(api::lights))
        .route("/health", get(api::health))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}
