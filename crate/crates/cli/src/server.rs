//! JSON-over-HTTP service. Images travel as base64 PNG strings.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use softseg::io::{
    decode_image, decode_rgba, encode_layers, encode_png, image_dimensions, parse_hex, stack_from_planes, to_hex,
    weights_hash, ExportOptions, Manifest,
};
use softseg::layers::{compose, decompose, recolor, DecomposeOptions, GuidedFilterParams, LayerMask, LayerStack, MaskMode};
use softseg::metrics::{score, EvalReport};
use softseg::models::ModelWeights;
use softseg::palette::{extract_palette, Palette};
use softseg::raster::{Image, Rgb};

/// Largest accepted image, in pixels.
pub const DEFAULT_PIXEL_BUDGET: usize = 1 << 22;
const BODY_LIMIT: usize = 512 << 20;

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub pixel_budget: usize,
    /// Decompositions kept for `stack_id` references.
    pub cache_entries: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            pixel_budget: DEFAULT_PIXEL_BUDGET,
            cache_entries: 8,
        }
    }
}

struct AppState {
    weights: ModelWeights,
    weights_hash: String,
    config: ServerConfig,
    cache: Mutex<VecDeque<(String, Arc<LayerStack>)>>,
}

impl AppState {
    fn remember(&self, id: String, stack: Arc<LayerStack>) {
        let mut cache = self.cache.lock().expect("cache lock");
        cache.retain(|(k, _)| *k != id);
        cache.push_front((id, stack));
        cache.truncate(self.config.cache_entries);
    }

    fn recall(&self, id: &str) -> Option<Arc<LayerStack>> {
        let mut cache = self.cache.lock().expect("cache lock");
        let pos = cache.iter().position(|(k, _)| k == id)?;
        let entry = cache.remove(pos)?;
        let stack = entry.1.clone();
        cache.push_front(entry);
        Some(stack)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn bad(field: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.into()),
        }
    }
}

impl From<softseg::Error> for ApiError {
    fn from(e: softseg::Error) -> Self {
        use softseg::Error as E;
        let status = match e {
            E::PaletteSize { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            E::InvalidArgument(_)
            | E::Dimension { .. }
            | E::Image { .. }
            | E::PaletteParse { .. }
            | E::LayerIndex { .. }
            | E::NotNormalized { .. } => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError {
            status,
            message: e.to_string(),
            field: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({"error": self.message, "field": self.field});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Parses a JSON body; the error names the offending field when serde
/// reports one.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e: serde_json::Error| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .filter(|_| msg.contains("field"))
            .unwrap_or("body")
            .to_string();
        ApiError::bad(&field, msg)
    })
}

/// `#RRGGBB` or `[r, g, b]` in `[0,1]`.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ColorSpec {
    Hex(String),
    Rgb(Rgb),
}

impl ColorSpec {
    fn resolve(&self, field: &str) -> Result<Rgb, ApiError> {
        match self {
            ColorSpec::Hex(s) => parse_hex(s).ok_or_else(|| ApiError::bad(field, format!("`{s}` is not a #RRGGBB color"))),
            ColorSpec::Rgb(c) if c.iter().all(|v| (0.0..=1.0).contains(v)) => Ok(*c),
            ColorSpec::Rgb(c) => Err(ApiError::bad(field, format!("{c:?} is outside [0,1]"))),
        }
    }
}

fn resolve_palette(specs: &[ColorSpec]) -> Result<Palette, ApiError> {
    let colors = specs
        .iter()
        .enumerate()
        .map(|(i, c)| c.resolve(&format!("palette[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Palette::manual(colors).map_err(|e| ApiError::bad("palette", e.to_string()))
}

fn b64(field: &str, text: &str) -> Result<Vec<u8>, ApiError> {
    STANDARD
        .decode(text.trim())
        .map_err(|e| ApiError::bad(field, format!("invalid base64: {e}")))
}

fn check_budget(state: &AppState, field: &str, bytes: &[u8]) -> Result<(), ApiError> {
    let (w, h) = image_dimensions(bytes).map_err(|e| ApiError::bad(field, e.to_string()))?;
    if w * h > state.config.pixel_budget {
        return Err(ApiError {
            status: StatusCode::PAYLOAD_TOO_LARGE,
            message: format!("{w}×{h} exceeds the budget of {} pixels", state.config.pixel_budget),
            field: Some(field.into()),
        });
    }
    Ok(())
}

fn image_field(state: &AppState, field: &str, text: &str) -> Result<Image, ApiError> {
    let bytes = b64(field, text)?;
    check_budget(state, field, &bytes)?;
    decode_image(&bytes).map_err(|e| ApiError::bad(field, e.to_string()))
}

fn layers_field(state: &AppState, layers: &[String], palette: Palette) -> Result<LayerStack, ApiError> {
    if layers.is_empty() {
        return Err(ApiError::bad("layers", "no layers"));
    }
    let planes = layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let field = format!("layers[{i}]");
            let bytes = b64(&field, l)?;
            check_budget(state, &field, &bytes)?;
            decode_rgba(&bytes).map_err(|e| ApiError::bad(&field, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    stack_from_planes(planes, palette).map_err(|e| ApiError::bad("layers", e.to_string()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
        field: None,
    })?
}

#[derive(Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub k: usize,
    pub weights_hash: String,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        k: state.weights.k(),
        weights_hash: state.weights_hash.clone(),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PaletteRequest {
    image: String,
    k: usize,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize, Deserialize)]
pub struct PaletteResponse {
    pub colors: Vec<Rgb>,
    pub hex: Vec<String>,
}

async fn palette(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<PaletteResponse> {
    let req: PaletteRequest = parse_body(&body)?;
    blocking(move || {
        let img = image_field(&state, "image", &req.image)?;
        let p = extract_palette(&img, req.k, req.seed).map_err(|e| ApiError::bad("k", e.to_string()))?;
        Ok(Json(PaletteResponse {
            colors: p.colors().to_vec(),
            hex: p.colors().iter().map(|c| to_hex(*c)).collect(),
        }))
    })
    .await
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum GuidedSpec {
    Enabled(bool),
    Params(GuidedFilterParams),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskSpec {
    layer: usize,
    /// Base64 grayscale PNG.
    mask: String,
    #[serde(default = "default_mask_mode")]
    mode: MaskMode,
}

fn default_mask_mode() -> MaskMode {
    MaskMode::Multiply
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DecomposeRequestOptions {
    guided_filter: Option<GuidedSpec>,
    masks: Vec<MaskSpec>,
    sixteen_bit: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecomposeRequest {
    image: String,
    palette: Vec<ColorSpec>,
    #[serde(default)]
    options: DecomposeRequestOptions,
}

#[derive(Serialize, Deserialize)]
pub struct DecomposeResponse {
    pub layers: Vec<String>,
    pub manifest: Manifest,
    /// Handle for follow-up recolor and metrics requests.
    pub stack_id: String,
}

async fn decompose_handler(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<DecomposeResponse> {
    let req: DecomposeRequest = parse_body(&body)?;
    let stack_id = {
        let mut h = Sha256::new();
        h.update(&body);
        h.update(state.weights_hash.as_bytes());
        hex::encode(h.finalize())
    };
    blocking(move || {
        let palette = resolve_palette(&req.palette)?;
        if palette.len() != state.weights.k() {
            return Err(softseg::Error::PaletteSize {
                expected: state.weights.k(),
                got: palette.len(),
            }
            .into());
        }
        let img = image_field(&state, "image", &req.image)?;
        let masks = req
            .options
            .masks
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let field = format!("options.masks[{i}].mask");
                let mask = image_field(&state, &field, &m.mask)?;
                if (mask.width(), mask.height()) != (img.width(), img.height()) {
                    return Err(ApiError::bad(&field, "mask size differs from the image"));
                }
                Ok(LayerMask {
                    layer: m.layer,
                    mask: mask.gray(),
                    mode: m.mode,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let guided_filter = match req.options.guided_filter {
            None | Some(GuidedSpec::Enabled(false)) => None,
            Some(GuidedSpec::Enabled(true)) => Some(GuidedFilterParams::default()),
            Some(GuidedSpec::Params(p)) => Some(p),
        };
        let opts = DecomposeOptions { guided_filter, masks };
        let stack = decompose(&img, &palette, &state.weights, &opts)?;
        let export = ExportOptions {
            sixteen_bit: req.options.sixteen_bit,
            options: opts.to_json(),
            weights_hash: Some(state.weights_hash.clone()),
        };
        let (pngs, manifest) = encode_layers(&stack, &export)?;
        state.remember(stack_id.clone(), Arc::new(stack));
        Ok(Json(DecomposeResponse {
            layers: pngs.iter().map(|p| STANDARD.encode(p)).collect(),
            manifest,
            stack_id,
        }))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecolorRequest {
    #[serde(default)]
    stack_id: Option<String>,
    #[serde(default)]
    layers: Option<Vec<String>>,
    #[serde(default)]
    palette: Option<Vec<ColorSpec>>,
    layer_index: usize,
    color: ColorSpec,
}

#[derive(Serialize, Deserialize)]
pub struct RecolorResponse {
    pub composite: String,
}

fn stack_ref(
    state: &AppState,
    stack_id: Option<&str>,
    layers: Option<&[String]>,
    palette: Option<&[ColorSpec]>,
) -> Result<Arc<LayerStack>, ApiError> {
    match (stack_id, layers) {
        (Some(id), _) => state
            .recall(id)
            .ok_or_else(|| ApiError::bad("stack_id", format!("unknown or expired stack `{id}`"))),
        (None, Some(layers)) => {
            let palette = resolve_palette(palette.ok_or_else(|| ApiError::bad("palette", "required with inline layers"))?)?;
            Ok(Arc::new(layers_field(state, layers, palette)?))
        }
        (None, None) => Err(ApiError::bad("layers", "either stack_id or layers is required")),
    }
}

async fn recolor_handler(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<RecolorResponse> {
    let req: RecolorRequest = parse_body(&body)?;
    blocking(move || {
        let stack = stack_ref(&state, req.stack_id.as_deref(), req.layers.as_deref(), req.palette.as_deref())?;
        let color = req.color.resolve("color")?;
        let img = recolor(&stack, req.layer_index, color).map_err(|e| ApiError::bad("layer_index", e.to_string()))?;
        Ok(Json(RecolorResponse {
            composite: STANDARD.encode(encode_png(&img)?),
        }))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsRequest {
    original: String,
    #[serde(default)]
    stack_id: Option<String>,
    #[serde(default)]
    layers: Option<Vec<String>>,
    #[serde(default)]
    palette: Option<Vec<ColorSpec>>,
}

async fn metrics_handler(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<EvalReport> {
    let req: MetricsRequest = parse_body(&body)?;
    blocking(move || {
        let original = image_field(&state, "original", &req.original)?;
        let stack = stack_ref(&state, req.stack_id.as_deref(), req.layers.as_deref(), req.palette.as_deref())?;
        let scores = score("image", &original, &stack)?;
        Ok(Json(EvalReport::from_scores(vec![scores])?))
    })
    .await
}

/// Routes under `/api`, sharing read-only weights.
pub fn router(weights: ModelWeights, config: ServerConfig) -> Router {
    let state = Arc::new(AppState {
        weights_hash: weights_hash(&weights),
        weights,
        config,
        cache: Mutex::new(VecDeque::new()),
    });
    Router::new()
        .route("/api/health", get(health))
        .route("/api/palette", post(palette))
        .route("/api/decompose", post(decompose_handler))
        .route("/api/recolor", post(recolor_handler))
        .route("/api/metrics", post(metrics_handler))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

/// Composite of a decoded layer response, for clients that want to check
/// a round trip.
pub fn compose_layers(layers: &[String], palette: &[Rgb]) -> softseg::Result<Image> {
    let planes = layers
        .iter()
        .map(|l| {
            let bytes = STANDARD
                .decode(l)
                .map_err(|e| softseg::Error::InvalidArgument(format!("invalid base64: {e}")))?;
            decode_rgba(&bytes)
        })
        .collect::<softseg::Result<Vec<_>>>()?;
    Ok(compose(&stack_from_planes(planes, Palette::manual(palette.to_vec())?)?))
}

pub async fn serve(weights: ModelWeights, addr: SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(weights, config)).await
}
