//! HTTP generation endpoint.
//!
//! - `GET /api/attributes`: attribute names in canonical order.
//! - `POST /api/generate`: `{attributes, seed?, count}` to base64 PNGs plus
//!   what the perceptual model reads back from each one.
//! - `GET /api/health`: status and loaded checkpoint ids.

use std::collections::hash_map::RandomState;
use std::collections::BTreeMap;
use std::hash::BuildHasher;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use texgen::attributes::{AttributeVector, ATTRIBUTE_NAMES, NUM_ATTRIBUTES, SCALED_LIMIT};
use texgen::gan::Generator;
use texgen::perceptual::PerceptualModel;

use crate::imaging::png_bytes;

pub const MAX_COUNT: usize = 16;

/// Models shared read-only by every request.
#[derive(Default)]
pub struct Models {
    pub generator: Option<Generator>,
    pub perceptual: Option<PerceptualModel>,
    /// Checkpoint content hashes by role.
    pub ids: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub attributes: Vec<f64>,
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub images: Vec<String>,
    pub seed_used: u64,
    /// One 12-vector per image.
    pub predicted_attributes: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub checkpoints: BTreeMap<String, String>,
}

fn error(status: StatusCode, msg: impl Into<String>, index: Option<usize>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: msg.into(),
            index,
        }),
    )
        .into_response()
}

pub fn router(models: Arc<Models>) -> Router {
    Router::new()
        .route("/api/attributes", get(attributes))
        .route("/api/generate", post(generate))
        .route("/api/health", get(health))
        .with_state(models)
}

async fn attributes() -> Json<Vec<&'static str>> {
    Json(ATTRIBUTE_NAMES.to_vec())
}

async fn health(State(models): State<Arc<Models>>) -> Json<Health> {
    let ready = models.generator.is_some() && models.perceptual.is_some();
    Json(Health {
        status: if ready { "ok" } else { "unavailable" }.into(),
        checkpoints: models.ids.clone(),
    })
}

/// The scaled attribute vector of a well-formed request, or a message and
/// the offending attribute index.
pub fn validate(req: &GenerateRequest) -> Result<AttributeVector, (String, Option<usize>)> {
    if req.attributes.len() != NUM_ATTRIBUTES {
        return Err((
            format!("expected {NUM_ATTRIBUTES} attributes, got {}", req.attributes.len()),
            None,
        ));
    }
    if let Some(i) = req.attributes.iter().position(|v| !(v.abs() <= SCALED_LIMIT)) {
        return Err((
            format!(
                "attribute {i} ({}) is {}, outside [-{SCALED_LIMIT}, {SCALED_LIMIT}]",
                ATTRIBUTE_NAMES[i], req.attributes[i]
            ),
            Some(i),
        ));
    }
    if !(1..=MAX_COUNT).contains(&req.count) {
        return Err((format!("count must be in 1..={MAX_COUNT}, got {}", req.count), None));
    }
    Ok(AttributeVector::from_slice(&req.attributes).expect("length checked"))
}

/// Images and readbacks for a validated request.
pub fn run_generate(models: &Models, y: &AttributeVector, seed: u64, count: usize) -> anyhow::Result<GenerateResponse> {
    let (Some(gen), Some(h)) = (&models.generator, &models.perceptual) else {
        anyhow::bail!("model not loaded");
    };
    let z = gen.noise(seed, count);
    let images = gen.generate(y, &z)?;
    let pred = h.predict(&images)?;
    let b64 = base64::engine::general_purpose::STANDARD;
    let encoded = (0..count)
        .map(|i| png_bytes(&images.slice_batch(i, i + 1)).map(|png| b64.encode(png)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let predicted = pred
        .data()
        .chunks(NUM_ATTRIBUTES)
        .map(|row| row.iter().map(|&v| v as f64).collect())
        .collect();
    Ok(GenerateResponse {
        images: encoded,
        seed_used: seed,
        predicted_attributes: predicted,
    })
}

async fn generate(State(models): State<Arc<Models>>, body: Bytes) -> Response {
    let req: GenerateRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}"), None),
    };
    let y = match validate(&req) {
        Ok(y) => y,
        Err((msg, index)) => return error(StatusCode::UNPROCESSABLE_ENTITY, msg, index),
    };
    if models.generator.is_none() || models.perceptual.is_none() {
        return error(StatusCode::SERVICE_UNAVAILABLE, "model not loaded", None);
    }
    let seed = req.seed.unwrap_or_else(|| RandomState::new().hash_one(std::time::SystemTime::now()));
    let count = req.count;
    let result = tokio::task::spawn_blocking(move || run_generate(&models, &y, seed, count)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("{e:#}"), None),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

pub async fn serve(models: Models, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(models))).await?;
    Ok(())
}
