use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chromahint_core::colorspace::QuantizedGamut;
use chromahint_core::model::{Network, NetworkConfig, Variant};
use chromahint_service::{encode_png, router, AppState, ServiceConfig};
use image::{Rgb, RgbImage};
use serde_json::{json, Value};
use tower::ServiceExt;

const BOUNDARY: &str = "test-boundary-7d1f";

fn tiny(variant: Variant, seed: u64) -> Network {
    Network::new(NetworkConfig { variant, base_width: 8, dist_hidden: 64, ..NetworkConfig::default() }, seed).unwrap()
}

fn app_with(global: bool, config: ServiceConfig) -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState::new(tiny(Variant::Local, 1), global.then(|| tiny(Variant::Global, 2)), QuantizedGamut::reference(), config).unwrap());
    (router(state.clone()), state)
}

fn app() -> Router {
    app_with(true, ServiceConfig::default()).0
}

fn scene(w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb([(x * 255 / w) as u8, (y * 255 / h) as u8, ((x + y) % 200) as u8]))
}

fn png(img: &RgbImage) -> Vec<u8> {
    encode_png(img).unwrap()
}

fn multipart(field: &str, bytes: &[u8], extra: &[(&str, &str)]) -> Vec<u8> {
    let mut body = Vec::new();
    for (k, v) in extra {
        body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").as_bytes());
    }
    body.extend_from_slice(
        format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{field}\"; filename=\"upload.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes(),
    );
    body.extend_from_slice(bytes);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn upload_req(path: &str, field: &str, bytes: &[u8], extra: &[(&str, &str)]) -> Request<Body> {
    Request::post(path)
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(multipart(field, bytes, extra)))
        .unwrap()
}

fn json_req(method: &str, path: &str, body: Value) -> Request<Body> {
    Request::builder().method(method).uri(path).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap()
}

async fn create(app: &Router, img: &RgbImage) -> Value {
    let (status, body) = send(app, upload_req("/v1/sessions", "image", &png(img), &[])).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    body
}

fn decode_png(b64: &Value) -> RgbImage {
    image::load_from_memory(&STANDARD.decode(b64.as_str().unwrap()).unwrap()).unwrap().to_rgb8()
}

#[tokio::test]
async fn healthz_reports_checkpoint() {
    let (status, body) = send(&app(), Request::get("/v1/healthz").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["checkpoint_hash"], tiny(Variant::Local, 1).weights_hash());
}

#[tokio::test]
async fn session_keeps_original_dims() {
    let app = app();
    let body = create(&app, &scene(300, 120)).await;
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(300), Some(120)));
    assert_eq!(decode_png(&body["auto_png_base64"]).dimensions(), (300, 120));
    assert_eq!(body["session_id"].as_str().unwrap().len(), 32);
}

#[tokio::test]
async fn empty_edits_match_automatic_bytes_and_repeat_identically() {
    let app = app();
    let s = create(&app, &scene(200, 150)).await;
    let path = format!("/v1/sessions/{}/colorize", s["session_id"].as_str().unwrap());
    let (status, empty) = send(&app, json_req("POST", &path, json!({ "edits": [] }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty["png_base64"], s["auto_png_base64"]);
    let edits = json!({ "edits": [{ "x": 10, "y": 20, "a": 40.0, "b": -30.0 }, { "x": 150, "y": 100, "a": -20.0, "b": 50.0, "size": 9 }] });
    let (_, first) = send(&app, json_req("POST", &path, edits.clone())).await;
    let (_, second) = send(&app, json_req("POST", &path, edits)).await;
    assert_eq!(first["png_base64"], second["png_base64"]);
    assert_ne!(first["png_base64"], empty["png_base64"]);
}

#[tokio::test]
async fn grayscale_upload_accepted() {
    let gray = RgbImage::from_fn(64, 80, |x, y| {
        let v = ((x * 3 + y) % 256) as u8;
        Rgb([v, v, v])
    });
    let body = create(&app(), &gray).await;
    assert_eq!(decode_png(&body["auto_png_base64"]).dimensions(), (64, 80));
}

#[tokio::test]
async fn upload_errors() {
    let app = app();
    let (status, _) = send(&app, upload_req("/v1/sessions", "image", &[], &[])).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (status, _) = send(&app, upload_req("/v1/sessions", "image", b"definitely not an image", &[])).await;
    assert_eq!(status, StatusCode::UNSUPPORTED_MEDIA_TYPE);
    let (small, _) = app_with(false, ServiceConfig { max_side: 100, ..ServiceConfig::default() });
    let (status, _) = send(&small, upload_req("/v1/sessions", "image", &png(&scene(101, 20)), &[])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    let (tight, _) = app_with(false, ServiceConfig { max_upload_bytes: 1000, ..ServiceConfig::default() });
    let noisy = RgbImage::from_fn(64, 64, |x, y| Rgb([(x * 37 + y * 91) as u8, (x * y) as u8, (x ^ y) as u8]));
    let (status, _) = send(&tight, upload_req("/v1/sessions", "image", &png(&noisy), &[])).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn edit_errors_name_the_index() {
    let app = app();
    let s = create(&app, &scene(64, 64)).await;
    let id = s["session_id"].as_str().unwrap();
    let path = format!("/v1/sessions/{id}/colorize");
    let (status, body) = send(&app, json_req("POST", &path, json!({ "edits": [{ "x": -1, "y": 5, "a": 0.0, "b": 0.0 }] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["index"], 0);
    let edits = json!({ "edits": [{ "x": 1, "y": 5, "a": 0.0, "b": 0.0 }, { "x": 64, "y": 5, "a": 0.0, "b": 0.0 }] });
    let (status, body) = send(&app, json_req("POST", &path, edits)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["index"], 1);
    let (status, _) = send(&app, json_req("POST", "/v1/sessions/nope/colorize", json!({ "edits": [] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, Request::get(format!("/v1/sessions/{id}/palette?x=64&y=0")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn palette_is_bounded_sorted_and_stable() {
    let app = app();
    let s = create(&app, &scene(120, 90)).await;
    let id = s["session_id"].as_str().unwrap();
    let edits = serde_json::to_string(&json!([{ "x": 30, "y": 30, "a": 50.0, "b": 10.0 }])).unwrap();
    let uri = format!("/v1/sessions/{id}/palette?x=31&y=29&edits={}", urlencode(&edits));
    let (status, a) = send(&app, Request::get(&uri).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK, "{a}");
    let (_, b) = send(&app, Request::get(&uri).body(Body::empty()).unwrap()).await;
    assert_eq!(a, b);
    let list = a["suggestions"].as_array().unwrap();
    assert!((1..=9).contains(&list.len()));
    let weights: Vec<f64> = list.iter().map(|e| e["weight"].as_f64().unwrap()).collect();
    assert!(weights.windows(2).all(|w| w[0] >= w[1]));
    for e in list {
        assert!(e["rgb_hex"].as_str().unwrap().starts_with('#'));
        assert!(e["a"].is_number() && e["b"].is_number());
    }
    let (status, _) = send(&app, Request::get(format!("/v1/sessions/{id}/palette?x=1&y=1&edits=%5Bbad")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

fn urlencode(s: &str) -> String {
    s.bytes()
        .map(|b| if b.is_ascii_alphanumeric() || b"-_.~".contains(&b) { (b as char).to_string() } else { format!("%{b:02X}") })
        .collect()
}

#[tokio::test]
async fn global_transfer_paths() {
    let app = app();
    let s = create(&app, &scene(96, 64)).await;
    let path = format!("/v1/sessions/{}/global", s["session_id"].as_str().unwrap());
    let (status, off) = send(&app, json_req("POST", &path, json!({ "flags": { "hist": false, "sat": false } }))).await;
    assert_eq!(status, StatusCode::OK, "{off}");
    let (_, none) = send(&app, json_req("POST", &path, json!({}))).await;
    assert_eq!(off, none);
    let reference = RgbImage::from_pixel(40, 40, Rgb([200, 40, 30]));
    let (status, by_ref) = send(&app, upload_req(&path, "reference", &png(&reference), &[("hist", "1"), ("sat", "1")])).await;
    assert_eq!(status, StatusCode::OK, "{by_ref}");
    assert_eq!(decode_png(&by_ref["png_base64"]).dimensions(), (96, 64));
    let (status, _) = send(&app, json_req("POST", &path, json!({ "histogram": [1.0, 2.0] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let plain = Request::post(&path).header(header::CONTENT_TYPE, "text/plain").body(Body::from("x")).unwrap();
    assert_eq!(send(&app, plain).await.0, StatusCode::UNSUPPORTED_MEDIA_TYPE);

    let (no_global, _) = app_with(false, ServiceConfig::default());
    let s = create(&no_global, &scene(32, 32)).await;
    let path = format!("/v1/sessions/{}/global", s["session_id"].as_str().unwrap());
    let (status, _) = send(&no_global, json_req("POST", &path, json!({}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn sessions_expire() {
    let (app, state) = app_with(false, ServiceConfig { session_ttl: Duration::from_millis(50), ..ServiceConfig::default() });
    let s = create(&app, &scene(32, 32)).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    let path = format!("/v1/sessions/{}/colorize", s["session_id"].as_str().unwrap());
    let (status, _) = send(&app, json_req("POST", &path, json!({ "edits": [] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(state.session_count(), 0);
}

#[tokio::test]
async fn concurrent_sessions_match_serial_results() {
    let app = app();
    let images = [scene(80, 60), scene(60, 80), scene(128, 32)];
    let mut ids = Vec::new();
    for img in &images {
        ids.push(create(&app, img).await["session_id"].as_str().unwrap().to_string());
    }
    let edits = json!({ "edits": [{ "x": 5, "y": 5, "a": 30.0, "b": 30.0 }] });
    let mut serial = Vec::new();
    for id in &ids {
        serial.push(send(&app, json_req("POST", &format!("/v1/sessions/{id}/colorize"), edits.clone())).await.1);
    }
    let handles: Vec<_> = ids
        .iter()
        .map(|id| {
            let (app, req) = (app.clone(), json_req("POST", &format!("/v1/sessions/{id}/colorize"), edits.clone()));
            tokio::spawn(async move { send(&app, req).await.1 })
        })
        .collect();
    for (h, want) in handles.into_iter().zip(serial) {
        assert_eq!(h.await.unwrap(), want);
    }
}

#[tokio::test]
async fn colorize_latency_at_working_resolution() {
    let app = app();
    let s = create(&app, &scene(1024, 768)).await;
    let path = format!("/v1/sessions/{}/colorize", s["session_id"].as_str().unwrap());
    let edits = json!({ "edits": [{ "x": 500, "y": 300, "a": 30.0, "b": -30.0 }] });
    send(&app, json_req("POST", &path, edits.clone())).await;
    let mut times = Vec::new();
    for _ in 0..5 {
        let t = Instant::now();
        let (status, _) = send(&app, json_req("POST", &path, edits.clone())).await;
        assert_eq!(status, StatusCode::OK);
        times.push(t.elapsed());
    }
    times.sort();
    assert!(times[2] <= Duration::from_millis(500), "median {:?}", times[2]);
}
