//! Local HTTP API: schemas, presets, scene upload, rendering and encoding.
//!
//! Endpoints: `GET /api/schema/{id}`, `GET /api/presets/{id}`,
//! `POST /api/scenes` (multipart `image`, optional `lip_mask`, `hair_mask`),
//! `POST /api/render`, `POST /api/encode`, `GET /healthz`, and the studio
//! page at `/`.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Multipart, Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use tryon_core::encoder::{encode_json, EncoderCheckpoint};
use tryon_core::image::{Image, Mask};
use tryon_core::renderer::Renderer;
use tryon_core::sampler::{builtin_presets, presets_to_json};
use tryon_core::scene::Scene;
use tryon_core::schema::{load_schema, GraphicsVector, RendererId};

const INDEX_HTML: &str = include_str!("../static/index.html");
const APP_JS: &str = include_str!("../static/app.js");
const STYLE_CSS: &str = include_str!("../static/style.css");

/// Uploaded scenes, loaded encoder checkpoints and the hair swatch.
pub struct SessionStore {
    scenes: RwLock<HashMap<String, Arc<Scene>>>,
    next_id: AtomicU64,
    encoders: HashMap<RendererId, Arc<EncoderCheckpoint>>,
    lipstick: Renderer,
    hair: Renderer,
}

impl SessionStore {
    pub fn new(swatch: Image) -> Self {
        Self {
            scenes: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            encoders: HashMap::new(),
            lipstick: Renderer::lipstick(),
            hair: Renderer::hair(swatch),
        }
    }

    /// Registers a checkpoint for its renderer, replacing any earlier one.
    pub fn with_encoder(mut self, ck: EncoderCheckpoint) -> Self {
        self.encoders.insert(ck.meta.renderer_id, Arc::new(ck));
        self
    }

    /// Stores a scene under a fresh id; identical uploads get distinct ids.
    pub fn insert_scene(&self, mut scene: Scene) -> String {
        let id = format!("scene-{:06}", self.next_id.fetch_add(1, Ordering::SeqCst));
        scene.id = id.clone();
        self.scenes
            .write()
            .expect("scene store lock")
            .insert(id.clone(), Arc::new(scene));
        id
    }

    pub fn scene(&self, id: &str) -> Option<Arc<Scene>> {
        self.scenes.read().expect("scene store lock").get(id).cloned()
    }

    fn renderer(&self, id: RendererId) -> &Renderer {
        match id {
            RendererId::Lipstick => &self.lipstick,
            RendererId::Hair => &self.hair,
        }
    }
}

pub type AppState = Arc<SessionStore>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/", get(|| async { static_file("text/html; charset=utf-8", INDEX_HTML) }))
        .route("/app.js", get(|| async { static_file("text/javascript", APP_JS) }))
        .route("/style.css", get(|| async { static_file("text/css", STYLE_CSS) }))
        .route("/healthz", get(|| async { "ok" }))
        .route("/api/schema/{id}", get(handle_schema))
        .route("/api/presets/{id}", get(handle_presets))
        .route("/api/scenes", post(handle_upload_scene))
        .route("/api/render", post(handle_render))
        .route("/api/encode", post(handle_encode))
        .with_state(state)
}

/// Serves until the process is interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn static_file(content_type: &'static str, body: &'static str) -> Response {
    ([(header::CONTENT_TYPE, content_type)], body).into_response()
}

struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn new(status: StatusCode, message: impl ToString) -> Self {
        ApiError(status, json!({ "error": message.to_string() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn renderer_id(name: &str) -> ApiResult<RendererId> {
    name.parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("unknown renderer {name:?}")))
}

fn json_text(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn handle_schema(Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_text(load_schema(renderer_id(&id)?).to_json()))
}

async fn handle_presets(Path(id): Path<String>) -> ApiResult<Response> {
    let schema = load_schema(renderer_id(&id)?);
    Ok(json_text(presets_to_json(&builtin_presets(&schema), &schema)))
}

fn bad_request(message: impl ToString) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, message)
}

async fn handle_upload_scene(State(state): State<AppState>, mut form: Multipart) -> ApiResult<Response> {
    let mut parts: HashMap<String, Bytes> = HashMap::new();
    while let Some(field) = form.next_field().await.map_err(bad_request)? {
        let name = field.name().unwrap_or_default().to_string();
        if !matches!(name.as_str(), "image" | "lip_mask" | "hair_mask") {
            return Err(bad_request(format!("unexpected field {name:?}")));
        }
        parts.insert(name, field.bytes().await.map_err(bad_request)?);
    }
    let image_bytes = parts.get("image").ok_or_else(|| bad_request("missing field \"image\""))?;
    let image = Image::from_png(image_bytes).map_err(|e| bad_request(format!("image: {e}")))?;
    let mask = |name: &str| -> ApiResult<Mask> {
        match parts.get(name) {
            Some(b) => Mask::from_png(b).map_err(|e| bad_request(format!("{name}: {e}"))),
            None => Ok(Mask::zeros(image.width, image.height)),
        }
    };
    let (lip, hair) = (mask("lip_mask")?, mask("hair_mask")?);
    let scene = Scene::new("upload", image, lip, hair).map_err(bad_request)?;
    let (w, h) = (scene.width(), scene.height());
    let id = state.insert_scene(scene);
    Ok(Json(json!({ "scene_id": id, "width": w, "height": h })).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderRequest {
    scene_id: String,
    renderer_id: String,
    params: serde_json::Value,
}

fn scene_or_404(state: &SessionStore, id: &str) -> ApiResult<Arc<Scene>> {
    state
        .scene(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene {id:?}")))
}

/// Quoted hex SHA-256 of the scene id, renderer and parameter bits.
pub fn render_etag(scene_id: &str, g: &GraphicsVector) -> String {
    let mut h = Sha256::new();
    h.update(scene_id.as_bytes());
    h.update([0]);
    h.update(g.renderer_id.as_str());
    for v in &g.values {
        h.update(v.to_bits().to_le_bytes());
    }
    format!("\"{}\"", hex::encode(h.finalize()))
}

fn json_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("request body: {e}")))
}

async fn handle_render(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> ApiResult<Response> {
    let req: RenderRequest = json_body(&body)?;
    let id = renderer_id(&req.renderer_id)?;
    let scene = scene_or_404(&state, &req.scene_id)?;
    let schema = load_schema(id);
    let g = schema
        .params_from_json(&req.params)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    let violations = schema
        .validate(&g)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            json!({ "error": "invalid parameters", "violations": list }),
        ));
    }
    let etag = render_etag(&req.scene_id, &g);
    let etag_value = HeaderValue::from_str(&etag).expect("hex etag");
    if headers.get(header::IF_NONE_MATCH) == Some(&etag_value) {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag_value)]).into_response());
    }
    let st = state.clone();
    let png = tokio::task::spawn_blocking(move || st.renderer(id).render(&scene, &g).map(|img| img.to_png()))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    Ok((
        [
            (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
            (header::ETAG, etag_value),
        ],
        png,
    )
        .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodeRequest {
    renderer_id: String,
    scene_ids: Vec<String>,
}

async fn handle_encode(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: EncodeRequest = json_body(&body)?;
    let id = renderer_id(&req.renderer_id)?;
    let ck = state
        .encoders
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, format!("no encoder checkpoint loaded for {id}")))?;
    if req.scene_ids.is_empty() {
        return Err(bad_request("scene_ids is empty"));
    }
    let scenes = req
        .scene_ids
        .iter()
        .map(|s| scene_or_404(&state, s))
        .collect::<ApiResult<Vec<_>>>()?;
    let text = tokio::task::spawn_blocking(move || {
        let refs = scenes
            .iter()
            .map(|s| ck.encoder.prepare_reference(s))
            .collect::<tryon_core::Result<Vec<_>>>()?;
        let r = ck.encoder.encode_reference(&refs.iter().collect::<Vec<_>>())?;
        Ok::<_, tryon_core::Error>(encode_json(&ck.encoder.schema, &r))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?
    .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    Ok(json_text(text))
}
