use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use seedgrow::io::{decode_mask, encode_volume, memory_origin};
use seedgrow::ppo::{PolicyArch, PolicyParams};
use seedgrow::surrogate::{FeatureSet, SurrogateArch};
use seedgrow::{Dims, Mask, SurrogateParams, Volume};
use seedgrow_service::{router, AppState, ServiceConfig, VolumeEntry};

const N: usize = 16;

/// Bright homogeneous cube in a checkerboard background; the surrogate is
/// all-zero weights, so entropy is ln 2 / 2-free: we use a bias that makes
/// every voxel confident.
fn fixture() -> (Volume, Mask) {
    let d = Dims::cube(N);
    let inside = |v: seedgrow::VoxelIndex| (5..11).contains(&v.a) && (5..11).contains(&v.b) && (5..11).contains(&v.c);
    let truth = Mask::from_fn(d, inside);
    let x = Volume::from_fn(d, 3, |_, v| {
        if inside(v) {
            0.8
        } else if (v.a + v.b + v.c) % 2 == 0 {
            0.9
        } else {
            0.1
        }
    })
    .unwrap();
    (x, truth)
}

fn confident_surrogate() -> SurrogateParams {
    let arch = SurrogateArch {
        feature_set: FeatureSet::Raw,
        channels: 3,
        hidden: 2,
    };
    let mut p = SurrogateParams::zeros(arch);
    let last = p.theta.len() - 1;
    p.theta[last] = -20.0;
    p
}

fn small_policy() -> PolicyParams<f64> {
    let arch = PolicyArch {
        channels: 3,
        pool_grid: 4,
        action_grid: 4,
        trunk: [8, 8],
        cell_hidden: 4,
        near_radius: 1,
    };
    PolicyParams::init(arch, 3).unwrap()
}

fn state() -> (AppState, String) {
    let st = AppState::new(ServiceConfig::default());
    st.add_surrogate("s", confident_surrogate());
    st.add_policy("p", small_policy());
    let (x, truth) = fixture();
    let info = st
        .add_volume(VolumeEntry {
            volume: Arc::new(x),
            truth: Some(Arc::new(truth)),
            source: None,
        })
        .unwrap();
    (st, info.id)
}

async fn call(st: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(st.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(st: &AppState, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(st, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn session(st: &AppState, vol: &str, policy: Option<&str>) -> String {
    let (s, v) = call_json(st, "POST", "/api/v1/sessions", Some(json!({"volume_id": vol, "policy_id": policy, "surrogate_id": "s"}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn volume_metadata_and_listing() {
    let (st, id) = state();
    let (s, v) = call_json(&st, "GET", &format!("/api/v1/volumes/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["dims"], json!([N, N, N]));
    assert_eq!(v["channels"], 3);
    assert_eq!(v["has_truth"], true);
    let (_, list) = call_json(&st, "GET", "/api/v1/volumes", None).await;
    assert_eq!(list["volumes"].as_array().unwrap().len(), 1);
    let (_, models) = call_json(&st, "GET", "/api/v1/models", None).await;
    assert_eq!(models["surrogates"], json!(["s"]));
    assert_eq!(models["policies"][0]["id"], "p");
}

#[tokio::test]
async fn upload_svf_bytes() {
    let (st, _) = state();
    let (x, _) = fixture();
    let req = Request::builder()
        .method("POST")
        .uri("/api/v1/volumes")
        .header("content-type", "application/octet-stream")
        .body(Body::from(encode_volume(&x)))
        .unwrap();
    let resp = router(st.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let v: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(v["has_truth"], false);

    let req = Request::builder()
        .method("POST")
        .uri("/api/v1/volumes")
        .body(Body::from("not a volume"))
        .unwrap();
    let resp = router(st).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn slice_png_and_out_of_range() {
    let (st, id) = state();
    let (s, png) = call(&st, "GET", &format!("/api/v1/volumes/{id}/slice?axis=b&index=7&channel=1"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");

    let (s, v) = call_json(&st, "GET", &format!("/api/v1/volumes/{id}/slice?axis=a&index={N}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "out_of_range");
    assert_eq!(v["field"], "index");
    assert!(v["message"].is_string());

    let (s, v) = call_json(&st, "GET", &format!("/api/v1/volumes/{id}/slice?index=0&channel=3"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["field"], "channel");

    let (s, v) = call_json(&st, "GET", "/api/v1/volumes/vol-999/slice?index=0", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
}

#[tokio::test]
async fn prompt_refine_auto_converges() {
    let (st, id) = state();
    let sid = session(&st, &id, Some("p")).await;
    let (s, p) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/prompt"), Some(json!({"a": 7, "b": 7, "c": 7}))).await;
    assert_eq!(s, StatusCode::OK, "{p}");
    assert!(p["voxels"].as_u64().unwrap() > 27);
    assert!(p["dice"].as_f64().unwrap() > 0.2);

    let (s, r) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/refine"), Some(json!({"steps": "auto"}))).await;
    assert_eq!(s, StatusCode::OK, "{r}");
    assert_eq!(r["terminal"], true);
    let steps = r["steps"].as_array().unwrap();
    assert!(!steps.is_empty() && steps.len() <= 10);
    assert_eq!(steps.last().unwrap()["terminal"], true);

    // refining a finished session appends a zero-diff marker
    let (_, r2) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/refine"), Some(json!({"steps": 1}))).await;
    let marker = &r2["steps"][0];
    assert_eq!(marker["added"], 0);
    assert_eq!(marker["removed"], 0);
    assert_eq!(marker["seed"], Value::Null);

    let (_, view) = call_json(&st, "GET", &format!("/api/v1/sessions/{sid}"), None).await;
    assert_eq!(view["history"].as_array().unwrap().len(), steps.len() + 1);
}

#[tokio::test]
async fn api_refinement_matches_engine_inference() {
    let (st, id) = state();
    let sid = session(&st, &id, Some("p")).await;
    let prompt = seedgrow::VoxelIndex::new(6, 9, 8);
    call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/prompt"), Some(json!(prompt))).await;
    call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/refine"), Some(json!({"steps": "auto"}))).await;
    let (_, bytes) = call(&st, "GET", &format!("/api/v1/sessions/{sid}/mask"), None).await;
    let api_mask = decode_mask(&bytes, &memory_origin()).unwrap();

    let (x, truth) = fixture();
    let env = seedgrow::SegEnv::with_surrogate(Arc::new(x), Some(Arc::new(truth)), &confident_surrogate(), &ServiceConfig::default().env).unwrap();
    let inf = seedgrow::engine::infer(&env, Some(&Arc::new(small_policy())), prompt, false).unwrap();
    assert_eq!(api_mask, inf.mask);
}

#[tokio::test]
async fn classification_and_overlay() {
    let (st, id) = state();
    let sid = session(&st, &id, None).await;
    let (s, v) = call_json(&st, "GET", &format!("/api/v1/sessions/{sid}/classification"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "no_prompt");

    // checkerboard voxel: every window is rough, so the mask is the seed alone
    call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/prompt"), Some(json!({"a": 1, "b": 1, "c": 2}))).await;
    let (_, v) = call_json(&st, "GET", &format!("/api/v1/sessions/{sid}/classification"), None).await;
    assert_eq!(v["classification"], "negative");
    assert_eq!(v["voxels"], 1);

    let (_, o) = call_json(&st, "GET", &format!("/api/v1/sessions/{sid}/overlay?axis=a&index=1"), None).await;
    assert_eq!(o["rows"][1], json!([[2, 1]]));
    assert_eq!(o["width"], N);

    call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/prompt"), Some(json!({"a": 8, "b": 8, "c": 8}))).await;
    let (_, v) = call_json(&st, "GET", &format!("/api/v1/sessions/{sid}/classification"), None).await;
    assert_eq!(v["classification"], "positive");
}

#[tokio::test]
async fn reset_prompt_clears_mask() {
    let (st, id) = state();
    let sid = session(&st, &id, Some("p")).await;
    call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/prompt"), Some(json!({"a": 8, "b": 8, "c": 8}))).await;
    let (s, v) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/reset-prompt"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["voxels"], 0);
    assert_eq!(v["prompt"], Value::Null);
    let (_, bytes) = call(&st, "GET", &format!("/api/v1/sessions/{sid}/mask"), None).await;
    assert!(decode_mask(&bytes, &memory_origin()).unwrap().is_empty());
}

#[tokio::test]
async fn concurrent_refine_gets_409() {
    let (st, id) = state();
    let sid = session(&st, &id, Some("p")).await;
    call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/prompt"), Some(json!({"a": 8, "b": 8, "c": 8}))).await;
    let entry = st.session(&sid).unwrap();
    let _held = entry.session.clone().try_lock_owned().unwrap();
    let (s, v) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/refine"), Some(json!({"steps": 1}))).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["code"], "busy");
}

#[tokio::test]
async fn bad_requests_have_structured_bodies() {
    let (st, id) = state();
    let (s, v) = call_json(&st, "POST", "/api/v1/sessions", Some(json!({"volume_id": id}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "body");
    let (s, v) = call_json(&st, "POST", "/api/v1/sessions", Some(json!({"volume_id": id, "surrogate_id": "nope"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["field"], "surrogate");
    let sid = session(&st, &id, Some("p")).await;
    let (s, v) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/refine"), Some(json!({"steps": "some"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["code"].is_string());
    let (s, _) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/refine"), Some(json!({"steps": 1}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "refine before prompt");
    let (s, v) = call_json(&st, "POST", &format!("/api/v1/sessions/{sid}/prompt"), Some(json!({"a": 99, "b": 0, "c": 0}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "out_of_range");
    let (s, v) = call_json(&st, "GET", "/api/v1/nothing-here", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
}

#[tokio::test]
async fn idle_sessions_expire() {
    let st = AppState::new(ServiceConfig {
        session_ttl: std::time::Duration::from_secs(5),
        ..ServiceConfig::default()
    });
    st.add_surrogate("s", confident_surrogate());
    let (x, _) = fixture();
    let id = st
        .add_volume(VolumeEntry {
            volume: Arc::new(x),
            truth: None,
            source: None,
        })
        .unwrap()
        .id;
    let sid = session(&st, &id, None).await;
    let now = std::time::Instant::now();
    assert_eq!(st.sweep_expired(now), 0);
    assert_eq!(st.sweep_expired(now + std::time::Duration::from_secs(60)), 1);
    let (s, _) = call_json(&st, "GET", &format!("/api/v1/sessions/{sid}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn static_route_serves_assets() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let st = AppState::new(ServiceConfig {
        static_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    });
    let (s, body) = call(&st, "GET", "/index.html", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
    let (s, _) = call(&st, "GET", "/api/v1/health", None).await;
    assert_eq!(s, StatusCode::OK);
}
