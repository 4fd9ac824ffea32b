mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use idinv_cli::jobs::encode_png;
use idinv_cli::service::{router, AppState, ApiError};
use serde_json::{json, Value};
use tower::ServiceExt;

fn state() -> AppState {
    AppState::new(common::toy_loaded(), 200)
}

async fn call(s: &AppState, method: &str, path: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(if method == "GET" { Body::empty() } else { Body::from(body.to_string()) })
        .unwrap();
    let resp = router(s.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn png(i: usize) -> String {
    encode_png(&common::toy_images(2, 5)[i]).unwrap()
}

#[tokio::test]
async fn health_and_boundaries() {
    let s = state();
    let (st, v) = call(&s, "GET", "/health", Value::Null).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["checkpoint"], "toy");
    assert_eq!(v["step_cap"], 200);
    let (st, v) = call(&s, "GET", "/boundaries", Value::Null).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v.as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn edit_at_zero_alpha_matches_inversion() {
    let s = state();
    let inversion = json!({ "steps": 5, "seed": 3 });
    let (st, inv) = call(&s, "POST", "/invert", json!({ "image": png(0), "inversion": inversion })).await;
    assert_eq!(st, StatusCode::OK, "{inv}");
    let (st, ed) = call(
        &s,
        "POST",
        "/edit",
        json!({ "image": png(0), "attribute": "size", "alpha": 0.0, "inversion": inversion }),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{ed}");
    assert_eq!(ed["images"][0], inv["images"][0]);
    assert_eq!(ed["codes"][0], inv["codes"][0]);
    let (_, moved) = call(
        &s,
        "POST",
        "/edit",
        json!({ "image": png(0), "attribute": "size", "alpha": 3.0, "inversion": inversion }),
    )
    .await;
    assert_ne!(moved["codes"][0], inv["codes"][0]);
}

#[tokio::test]
async fn interpolation_endpoints_match_inversions() {
    let s = state();
    let inversion = json!({ "steps": 4 });
    let (_, a) = call(&s, "POST", "/invert", json!({ "image": png(0), "inversion": inversion })).await;
    let (_, b) = call(&s, "POST", "/invert", json!({ "image": png(1), "inversion": inversion })).await;
    for (t, want) in [(0.0, &a), (1.0, &b)] {
        let (st, v) = call(
            &s,
            "POST",
            "/interpolate",
            json!({ "image_a": png(0), "image_b": png(1), "t": t, "inversion": inversion }),
        )
        .await;
        assert_eq!(st, StatusCode::OK, "{v}");
        assert_eq!(v["images"][0], want["images"][0]);
        assert_eq!(v["losses"].as_array().unwrap().len(), 2);
    }
}

#[tokio::test]
async fn mix_and_diffuse_run() {
    let s = state();
    let (st, v) = call(
        &s,
        "POST",
        "/mix",
        json!({ "content": png(0), "style": png(0), "inversion": { "steps": 2 } }),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{v}");
    let (_, inv) = call(&s, "POST", "/invert", json!({ "image": png(0), "inversion": { "steps": 2 } })).await;
    assert_eq!(v["images"][0], inv["images"][0], "mixing a code with itself changes nothing");

    let (st, v) = call(
        &s,
        "POST",
        "/diffuse",
        json!({
            "target": png(0), "context": png(1),
            "crop": { "top": 2, "left": 2, "height": 4, "width": 4 },
            "feather": 1, "inversion": { "steps": 2 }
        }),
    )
    .await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["images"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn responses_are_reproducible_and_capped() {
    let s = AppState::new(common::toy_loaded(), 3);
    let body = json!({ "image": png(0), "inversion": { "steps": 500, "init": "random", "seed": 9 } });
    let (_, a) = call(&s, "POST", "/invert", body.clone()).await;
    let (_, b) = call(&s, "POST", "/invert", body).await;
    assert_eq!(a["images"], b["images"]);
    assert_eq!(a["codes"], b["codes"]);
    assert_eq!(a["parameters"]["inversion"]["steps"], 3);
    assert_eq!(a["parameters"]["inversion"]["lambda_dom"], 2.0);
}

#[tokio::test]
async fn error_statuses() {
    let s = state();
    let cases = [
        ("/invert", json!({ "image": png(0), "surprise": 1 }), StatusCode::BAD_REQUEST),
        ("/invert", json!({ "inversion": {} }), StatusCode::BAD_REQUEST),
        ("/invert", json!({ "image": "not base64!" }), StatusCode::BAD_REQUEST),
        ("/invert", json!({ "image": png(0), "inversion": { "step_size": -1.0 } }), StatusCode::BAD_REQUEST),
        ("/invert", json!({ "image": png(0), "checkpoint": "other" }), StatusCode::NOT_FOUND),
        ("/edit", json!({ "image": png(0), "attribute": "hue", "alpha": 1.0 }), StatusCode::NOT_FOUND),
        (
            "/diffuse",
            json!({ "target": png(0), "context": png(1), "crop": { "top": 0, "left": 0, "height": 0, "width": 3 } }),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
    ];
    for (path, body, want) in cases {
        let (st, v) = call(&s, "POST", path, body.clone()).await;
        assert_eq!(st, want, "{path} {body} -> {v}");
        assert!(v["error"].is_string());
    }
    let wrong_size = idinv::Image::filled(3, 4, 4, 0.0).unwrap();
    let (st, _) = call(&s, "POST", "/invert", json!({ "image": encode_png(&wrong_size).unwrap() })).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn inversion_failures_report_the_trace_tail() {
    use axum::response::IntoResponse;
    let e = ApiError::Core(idinv::Error::InversionFailure { step: 4, reason: "nan".into(), trace_tail: vec![1.0, 2.5] });
    assert_eq!(e.status(), StatusCode::INTERNAL_SERVER_ERROR);
    let resp = e.into_response();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(v["trace_tail"], json!([1.0, 2.5]));
    assert!(v["error"].as_str().unwrap().contains("step 4"));
}

#[tokio::test]
async fn reload_swaps_models() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("second");
    common::write_toy_checkpoint(&path);
    let s = state();
    s.reload(&path).unwrap();
    let (_, v) = call(&s, "GET", "/health", Value::Null).await;
    assert_eq!(v["checkpoint"], "second");
    assert!(s.reload(&dir.path().join("missing")).is_err());
}
