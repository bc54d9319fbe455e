//! Wire types and endpoint handlers.

use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use lightfx_core::decouple::extract_light;
use lightfx_core::imagecore::{decode_image, decode_mask, encode_image, Image, LightImage, LightTransform, Mask};
use lightfx_core::synthdata::LightKind;
use lightfx_core::translight::{TransferRequest, DEFAULT_SAMPLING_STEPS};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::{presets, AppState};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unloaded(what: &str) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, format!("{what} model not loaded"))
    }

    fn worker_gone() -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "inference worker stopped")
    }

    fn from_core(e: lightfx_core::Error) -> Self {
        use lightfx_core::Error as E;
        let status = match e {
            E::DimensionMismatch(_) => StatusCode::CONFLICT,
            E::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

pub(crate) fn b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn decode_png(field: &str, text: &str) -> Result<Image<f32>, ApiError> {
    let bytes = STANDARD.decode(text).map_err(|e| ApiError::bad_request(format!("{field}: invalid base64: {e}")))?;
    decode_image(&bytes).map_err(|e| ApiError::bad_request(format!("{field}: {e}")))
}

fn encode_png(img: &Image<f32>) -> Result<String, ApiError> {
    encode_image(img).map(|b| b64(&b)).map_err(ApiError::from_core)
}

fn default_steps() -> usize {
    DEFAULT_SAMPLING_STEPS
}

fn default_intensity() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractRequest {
    /// Base64 PNG.
    pub image: String,
    #[serde(default)]
    pub kind: Option<LightKind>,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractResponse {
    pub light: String,
    pub width: usize,
    pub height: usize,
    pub kind: Option<LightKind>,
    pub n_steps: usize,
    pub seed: u64,
    pub checkpoint: String,
}

/// Transfer request as sent by the studio editor and scripted clients.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferRequestWire {
    pub content: String,
    pub light: String,
    /// Foreground mask PNG; light is kept out of it.
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub dx: i64,
    #[serde(default)]
    pub dy: i64,
    #[serde(default)]
    pub hflip: bool,
    #[serde(default)]
    pub vflip: bool,
    #[serde(default)]
    pub quarter_turns: u8,
    #[serde(default = "default_intensity")]
    pub intensity: f64,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TransferRequestWire {
    pub fn transform(&self) -> LightTransform {
        LightTransform {
            dx: self.dx,
            dy: self.dy,
            hflip: self.hflip,
            vflip: self.vflip,
            quarter_turns: self.quarter_turns,
            intensity: self.intensity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferResponse {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub transform: LightTransform,
    pub n_steps: usize,
    pub seed: u64,
    pub checkpoint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightPreset {
    pub id: String,
    pub kind: Option<LightKind>,
    pub width: usize,
    pub height: usize,
    /// Base64 PNG, at most 64 pixels on a side.
    pub thumbnail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    /// Checkpoint SHA-256 per model, or "unloaded".
    pub checkpoints: BTreeMap<String, String>,
}

pub async fn health(State(s): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), checkpoints: s.inner.hashes.clone() })
}

pub async fn lights(State(s): State<AppState>) -> Json<Vec<LightPreset>> {
    Json(presets::scan(&s.inner.presets))
}

pub async fn extract(State(s): State<AppState>, body: Bytes) -> Result<Json<ExtractResponse>, ApiError> {
    if !s.inner.extraction_loaded {
        return Err(ApiError::unloaded("extraction"));
    }
    let req: ExtractRequest = parse(&body)?;
    if req.n_steps == 0 {
        return Err(ApiError::bad_request("n_steps must be at least 1"));
    }
    let image = decode_png("image", &req.image)?;
    let (kind, n_steps, seed) = (req.kind, req.n_steps, req.seed);
    let light = s
        .inner
        .worker
        .run(move |m| {
            let model = m.extraction.as_ref().expect("extraction_loaded implies a model");
            extract_light(model, &image, kind, n_steps, seed)
        })
        .await
        .ok_or_else(ApiError::worker_gone)?
        .map_err(|e| match e {
            lightfx_core::Error::DimensionMismatch(m) => ApiError::bad_request(m),
            e => ApiError::from_core(e),
        })?;
    let img = light.as_image();
    Ok(Json(ExtractResponse {
        light: encode_png(img)?,
        width: img.width(),
        height: img.height(),
        kind,
        n_steps,
        seed,
        checkpoint: s.inner.hashes["extraction"].clone(),
    }))
}

pub async fn transfer(State(s): State<AppState>, body: Bytes) -> Result<Json<TransferResponse>, ApiError> {
    if !s.inner.transfer_loaded {
        return Err(ApiError::unloaded("transfer"));
    }
    let wire: TransferRequestWire = parse(&body)?;
    let content = decode_png("content", &wire.content)?;
    let light = LightImage::from_image(decode_png("light", &wire.light)?);
    let mask: Option<Mask> = wire
        .mask
        .as_deref()
        .map(|t| {
            let bytes = STANDARD.decode(t).map_err(|e| ApiError::bad_request(format!("mask: invalid base64: {e}")))?;
            decode_mask(&bytes).map_err(|e| ApiError::bad_request(format!("mask: {e}")))
        })
        .transpose()?;
    if wire.n_steps == 0 {
        return Err(ApiError::bad_request("n_steps must be at least 1"));
    }
    let transform = wire.transform();
    let (lh, lw) = light.as_image().dims();
    transform.validate(lh, lw).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let out_dims = transform.output_dims(lh, lw);
    if out_dims != content.dims() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("transformed light is {}x{} but content is {}x{}", out_dims.0, out_dims.1, content.height(), content.width()),
        ));
    }
    if let Some(m) = &mask {
        if (m.height(), m.width()) != content.dims() {
            return Err(ApiError::new(StatusCode::CONFLICT, "mask and content dimensions differ"));
        }
    }
    let req = TransferRequest { content, light, transform, fg_mask: mask, n_steps: wire.n_steps, seed: wire.seed };
    let out = s
        .inner
        .worker
        .run(move |m| m.transfer.as_ref().expect("transfer_loaded implies a model").transfer(&req))
        .await
        .ok_or_else(ApiError::worker_gone)?
        .map_err(ApiError::from_core)?;
    Ok(Json(TransferResponse {
        image: encode_png(&out)?,
        width: out.width(),
        height: out.height(),
        transform,
        n_steps: wire.n_steps,
        seed: wire.seed,
        checkpoint: s.inner.hashes["transfer"].clone(),
    }))
}
