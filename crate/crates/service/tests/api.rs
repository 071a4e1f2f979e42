use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;
use tryon_core::dataset::InputSpec;
use tryon_core::encoder::{encode_json, train_encoder, EncoderLossMode, EncoderTrainConfig};
use tryon_core::image::{Image, Mask};
use tryon_core::renderer::{default_swatch, Renderer};
use tryon_core::sampler::SamplerConfig;
use tryon_core::scene::generate_synthetic_scene;
use tryon_core::schema::RendererId;
use tryon_service::{router, SessionStore};

const BOUNDARY: &str = "tryonboundary";

fn multipart(parts: &[(&str, Vec<u8>)]) -> Vec<u8> {
    let mut body = Vec::new();
    for (name, bytes) in parts {
        body.extend_from_slice(
            format!(
                "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{name}\"; filename=\"{name}.png\"\r\nContent-Type: image/png\r\n\r\n"
            )
            .as_bytes(),
        );
        body.extend_from_slice(bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let body = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, v: &Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(v.to_string()))
        .unwrap()
}

async fn upload(app: &axum::Router, parts: &[(&str, Vec<u8>)]) -> (StatusCode, Value) {
    let req = Request::post("/api/scenes")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(parts)))
        .unwrap();
    let (s, _, b) = call(app, req).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn portrait(seed: u64) -> Vec<(&'static str, Vec<u8>)> {
    let s = generate_synthetic_scene(seed, 128).unwrap();
    vec![("image", s.image.to_png()), ("lip_mask", s.lip_mask.to_png()), ("hair_mask", s.hair_mask.to_png())]
}

fn app() -> axum::Router {
    router(Arc::new(SessionStore::new(default_swatch())))
}

#[tokio::test]
async fn schema_presets_health_and_static() {
    let app = app();
    let (s, _, b) = call(&app, get("/api/schema/lipstick")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["specs"].as_array().unwrap().len(), 7);
    let (_, _, b) = call(&app, get("/api/schema/hair")).await;
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap()["specs"].as_array().unwrap().len(), 9);
    assert_eq!(call(&app, get("/api/schema/nails")).await.0, StatusCode::NOT_FOUND);
    let (s, _, b) = call(&app, get("/api/presets/hair")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&b).unwrap().as_array().unwrap().len(), 12);
    assert_eq!(call(&app, get("/healthz")).await.2, b"ok");
    for page in ["/", "/app.js", "/style.css"] {
        assert_eq!(call(&app, get(page)).await.0, StatusCode::OK, "{page}");
    }
}

#[tokio::test]
async fn upload_rules() {
    let app = app();
    let parts = portrait(1);
    let (s, a) = upload(&app, &parts).await;
    assert_eq!(s, StatusCode::OK);
    let (_, b) = upload(&app, &parts).await;
    assert_ne!(a["scene_id"], b["scene_id"]);
    let small = Mask::zeros(64, 64).to_png();
    let (s, _) = upload(&app, &[parts[0].clone(), ("lip_mask", small)]).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(upload(&app, &[("lip_mask", parts[1].1.clone())]).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(upload(&app, &[("image", b"not a png".to_vec())]).await.0, StatusCode::BAD_REQUEST);
}

fn lip_params(opacity: f64, r: f64) -> Value {
    json!({"opacity": opacity, "R": r, "G": 40, "B": 60, "gloss_amount": 2, "gloss_roughness": 0.4, "reflection_intensity": 0.3})
}

#[tokio::test]
async fn render_rules() {
    let app = app();
    let parts = portrait(2);
    let (_, up) = upload(&app, &parts).await;
    let id = up["scene_id"].as_str().unwrap();

    let req = json!({"scene_id": id, "renderer_id": "lipstick", "params": lip_params(0.0, 200.0)});
    let (s, h, png) = call(&app, post_json("/api/render", &req)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(h[header::CONTENT_TYPE], "image/png");
    let original = Image::from_png(&parts[0].1).unwrap();
    assert_eq!(Image::from_png(&png).unwrap(), original);

    let req = json!({"scene_id": id, "renderer_id": "lipstick", "params": lip_params(0.8, 200.0)});
    let (_, h1, b1) = call(&app, post_json("/api/render", &req)).await;
    let (_, h2, b2) = call(&app, post_json("/api/render", &req)).await;
    assert_eq!(h1[header::ETAG], h2[header::ETAG]);
    assert_eq!(b1, b2);
    let mut cached = post_json("/api/render", &req);
    cached.headers_mut().insert(header::IF_NONE_MATCH, h1[header::ETAG].clone());
    assert_eq!(call(&app, cached).await.0, StatusCode::NOT_MODIFIED);

    let bad = json!({"scene_id": id, "renderer_id": "lipstick", "params": lip_params(0.8, 300.0)});
    let (s, _, b) = call(&app, post_json("/api/render", &bad)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert!(v["violations"][0].as_str().unwrap().contains("R out of [0,255]"));

    let missing = json!({"scene_id": "scene-999999", "renderer_id": "lipstick", "params": lip_params(0.5, 1.0)});
    assert_eq!(call(&app, post_json("/api/render", &missing)).await.0, StatusCode::NOT_FOUND);
    let hair = json!({"scene_id": id, "renderer_id": "hair", "params": {"brightness": 0.0}});
    assert_eq!(call(&app, post_json("/api/render", &hair)).await.0, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn encode_rules() {
    let r = Renderer::lipstick();
    let input = InputSpec::default_for(RendererId::Lipstick);
    let scenes: Vec<_> =
        (0..2).map(|i| input.prepare_quantized(&generate_synthetic_scene(i, 128).unwrap()).unwrap()).collect();
    let (_, set) = tryon_core::dataset::build_dataset(
        &r,
        &scenes,
        &input,
        &SamplerConfig::uniform(&r.schema, 0),
        4,
        0,
        None,
    )
    .unwrap();
    let cfg = EncoderTrainConfig { epochs: 1, batch: 4, width: 4, mode: EncoderLossMode::GraphicsOnly, ..Default::default() };
    let ck = train_encoder(&set, None, &cfg, None, &mut |_| {}).unwrap();

    let bare = app();
    let (_, up) = upload(&bare, &portrait(3)).await;
    let req = json!({"renderer_id": "lipstick", "scene_ids": [up["scene_id"]]});
    assert_eq!(call(&bare, post_json("/api/encode", &req)).await.0, StatusCode::CONFLICT);

    let direct: Vec<_> = (3..6).map(|s| generate_synthetic_scene(s, 128).unwrap().quantized()).collect();
    let refs: Vec<Image> = direct.iter().map(|s| ck.encoder.prepare_reference(s).unwrap()).collect();
    let want_one = encode_json(&ck.encoder.schema, &ck.encoder.encode_reference(&[&refs[0]]).unwrap());
    let want_three = encode_json(&ck.encoder.schema, &ck.encoder.encode_reference(&refs.iter().collect::<Vec<_>>()).unwrap());

    let app = router(Arc::new(SessionStore::new(default_swatch()).with_encoder(ck)));
    let mut ids = Vec::new();
    for s in 3..6 {
        ids.push(upload(&app, &portrait(s)).await.1["scene_id"].clone());
    }
    let (s, _, b) = call(&app, post_json("/api/encode", &json!({"renderer_id": "lipstick", "scene_ids": [ids[0]]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(b).unwrap(), want_one);
    let (_, _, b) = call(&app, post_json("/api/encode", &json!({"renderer_id": "lipstick", "scene_ids": ids}))).await;
    assert_eq!(String::from_utf8(b).unwrap(), want_three);
    let missing = json!({"renderer_id": "lipstick", "scene_ids": ["scene-999999"]});
    assert_eq!(call(&app, post_json("/api/encode", &missing)).await.0, StatusCode::NOT_FOUND);
    let hair = json!({"renderer_id": "hair", "scene_ids": [ids[0]]});
    assert_eq!(call(&app, post_json("/api/encode", &hair)).await.0, StatusCode::CONFLICT);
}
