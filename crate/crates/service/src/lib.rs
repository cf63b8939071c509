//! HTTP service over a frozen front-end model.
//!
//! Endpoints: `GET /health`, `GET /model-info`, `POST /synthesize`. Errors
//! are JSON: `{"error": {"field": ..., "message": ...}}`.

use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::Serialize;
use serde_json::{json, Map, Value};
use tower_http::cors::{Any, CorsLayer};

use prosodia::binfmt::{self, Matrix, MEL_MAGIC};
use prosodia::control::{synthesize, BiasSpec, EmphasisSpec, SynthesisResult};
use prosodia::corpus::{parse_phones, words, CorpusStats, Feature, PhoneToken};
use prosodia::dsp::wav::encode_wav;
use prosodia::evalharness::physical;
use prosodia::model::FrontEndModel;

pub const DEFAULT_PORT: u16 = 8787;

pub struct Loaded {
    pub model: FrontEndModel,
    pub stats: CorpusStats,
}

/// Shared handle. Empty until [`ServiceState::load`] is called once.
#[derive(Clone, Default)]
pub struct ServiceState {
    inner: Arc<OnceLock<Loaded>>,
}

impl ServiceState {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn loaded(model: FrontEndModel, stats: CorpusStats) -> Self {
        let s = Self::empty();
        s.load(model, stats);
        s
    }

    /// Returns false when a model was already loaded.
    pub fn load(&self, model: FrontEndModel, stats: CorpusStats) -> bool {
        self.inner.set(Loaded { model, stats }).is_ok()
    }

    fn get(&self) -> Result<&Loaded, ApiError> {
        self.inner.get().ok_or(ApiError {
            status: StatusCode::SERVICE_UNAVAILABLE,
            field: "model",
            message: "model not loaded".into(),
        })
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub field: &'static str,
    pub message: String,
}

impl ApiError {
    fn bad(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            field,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"field": self.field, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: ServiceState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/model-info", get(model_info))
        .route("/synthesize", post(synthesize_handler))
        .fallback(|| async {
            ApiError {
                status: StatusCode::NOT_FOUND,
                field: "path",
                message: "no such endpoint".into(),
            }
        })
        .layer(cors)
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: ServiceState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

async fn health(State(state): State<ServiceState>) -> Result<&'static str, ApiError> {
    state.get().map(|_| "ok")
}

#[derive(Serialize)]
struct FeatureInfo {
    name: &'static str,
    unit: &'static str,
    median: f64,
    sigma: f64,
    minus_one: f64,
    zero: f64,
    plus_one: f64,
}

pub fn model_info_json(loaded: &Loaded) -> Value {
    let c = &loaded.model.config;
    let features: Vec<FeatureInfo> = Feature::ALL
        .iter()
        .map(|&f| {
            let s = loaded.stats.norm.get(f);
            let at = |v| physical(&loaded.stats, f, v);
            FeatureInfo {
                name: f.name(),
                unit: at(0.0).1,
                median: s.median,
                sigma: s.sigma,
                minus_one: at(-1.0).0,
                zero: at(0.0).0,
                plus_one: at(1.0).0,
            }
        })
        .collect();
    json!({
        "config": {
            "embed_dim": c.embed_dim,
            "encoder_layers": c.encoder_layers,
            "attn_heads": c.attn_heads,
            "decoder_blocks": c.decoder_blocks,
            "decoder_dilations": c.decoder_dilations,
            "n_mels": c.n_mels,
            "vocab_size": c.vocab_size,
            "parameter_count": loaded.model.parameter_count(),
            "trained_steps": c.trained_steps,
        },
        "norm_stats": loaded.stats.norm,
        "features": features,
    })
}

async fn model_info(State(state): State<ServiceState>) -> Result<Json<Value>, ApiError> {
    Ok(Json(model_info_json(state.get()?)))
}

/// A validated `/synthesize` body.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub phones: Vec<PhoneToken>,
    pub bias: BiasSpec,
    pub emphasize_word: Option<usize>,
    pub want_audio: bool,
}

fn number(v: &Value, field: &'static str) -> Result<f64, ApiError> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Ok(x),
        _ => Err(ApiError::bad(field, "expected a finite number")),
    }
}

/// Parses and validates a request body, naming the offending field on error.
pub fn parse_request(body: &[u8]) -> Result<SynthesisRequest, ApiError> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| ApiError::bad("body", format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(ApiError::bad("body", "expected a JSON object"));
    };
    for key in obj.keys() {
        if !["phones", "bias", "emphasize_word", "want_audio"].contains(&key.as_str()) {
            return Err(ApiError::bad("body", format!("unknown field `{key}`")));
        }
    }
    let phones = match obj.get("phones") {
        None | Some(Value::Null) => return Err(ApiError::bad("phones", "missing")),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ApiError::bad("phones", "expected strings"))?
            .join(" "),
        Some(_) => return Err(ApiError::bad("phones", "expected a string or an array of strings")),
    };
    let phones = parse_phones(&phones).map_err(|e| ApiError::bad("phones", e.to_string()))?;

    let mut bias = BiasSpec::default();
    match obj.get("bias") {
        None | Some(Value::Null) => {}
        Some(Value::Object(b)) => bias = parse_bias(b)?,
        Some(_) => return Err(ApiError::bad("bias", "expected an object")),
    }
    let emphasize_word = match obj.get("emphasize_word") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| ApiError::bad("emphasize_word", "expected a non-negative integer"))?
                as usize,
        ),
    };
    if let Some(w) = emphasize_word {
        let n = words(&phones).len();
        if w >= n {
            return Err(ApiError::bad(
                "emphasize_word",
                format!("word {w} out of range for {n} words"),
            ));
        }
    }
    let want_audio = match obj.get("want_audio") {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(ApiError::bad("want_audio", "expected a boolean")),
    };
    Ok(SynthesisRequest {
        phones,
        bias,
        emphasize_word,
        want_audio,
    })
}

fn parse_bias(b: &Map<String, Value>) -> Result<BiasSpec, ApiError> {
    let mut bias = BiasSpec::default();
    for (key, v) in b {
        let f = Feature::from_name(key).ok_or_else(|| ApiError::bad("bias", format!("unknown feature `{key}`")))?;
        let field = match f {
            Feature::Pitch => "bias.pitch",
            Feature::PitchRange => "bias.pitch_range",
            Feature::Duration => "bias.duration",
            Feature::Energy => "bias.energy",
            Feature::Tilt => "bias.tilt",
        };
        let x = number(v, field)?;
        match f {
            Feature::Pitch => bias.pitch = x,
            Feature::PitchRange => bias.pitch_range = x,
            Feature::Duration => bias.duration = x,
            Feature::Energy => bias.energy = x,
            Feature::Tilt => bias.tilt = x,
        }
    }
    Ok(bias)
}

/// Response body for a synthesis, without timings. Shared with the CLI's
/// JSON output.
pub fn response_json(stats: &CorpusStats, r: &SynthesisResult) -> prosodia::Result<Value> {
    let audio = r.audio.as_ref().map(encode_wav).transpose()?.map(|b| BASE64.encode(b));
    let mel = Matrix::from_f64(r.mel.n_frames(), r.mel.n_mels, &r.mel.frames);
    let mut u_used = Map::new();
    for f in Feature::ALL {
        let v = r.u_used.get(f);
        let (value, unit) = physical(stats, f, v);
        u_used.insert(
            f.name().into(),
            json!({"normalized": v, "value": value, "unit": unit}),
        );
    }
    Ok(json!({
        "phones": r.tokens.iter().map(|t| t.symbol()).collect::<Vec<_>>(),
        "u_used": u_used,
        "durations_frames": r.durations,
        "pitch_contour": r.pitch_contour,
        "energy_contour": r.energy_contour,
        "mel": BASE64.encode(binfmt::encode(MEL_MAGIC, &mel)),
        "mel_frames": r.mel.n_frames(),
        "n_mels": r.mel.n_mels,
        "audio_wav": audio,
    }))
}

/// Runs one synthesis and builds the response body.
pub fn respond(loaded: &Loaded, req: &SynthesisRequest) -> Result<Value, ApiError> {
    let start = Instant::now();
    let internal = |e: prosodia::Error| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        field: "synthesis",
        message: e.to_string(),
    };
    let emphasis = req.emphasize_word.map(EmphasisSpec::word);
    let r = synthesize(
        &loaded.model,
        &loaded.stats,
        &req.phones,
        &req.bias,
        emphasis.as_ref(),
        req.want_audio,
    )
    .map_err(internal)?;
    let mut body = response_json(&loaded.stats, &r).map_err(internal)?;
    body["timings_ms"] = json!(start.elapsed().as_secs_f64() * 1e3);
    Ok(body)
}

async fn synthesize_handler(State(state): State<ServiceState>, body: Bytes) -> Result<Json<Value>, ApiError> {
    state.get()?;
    let req = parse_request(&body)?;
    let out = tokio::task::spawn_blocking(move || {
        let loaded = state.get()?;
        respond(loaded, &req)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        field: "synthesis",
        message: e.to_string(),
    })??;
    Ok(Json(out))
}
