#![allow(dead_code)]

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::Engine as _;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use artisketch_core::dataset::{generate_sample, DatasetConfig, TrainingSample};
use artisketch_core::meshops::write_obj;
use artisketch_core::segment::label_features;
use artisketch_core::shapes::{cabinet_drawers, ProceduralShape};
use artisketch_service::engine::StrokesRequest;
use artisketch_service::{Engine, EngineConfig};

pub struct Demo {
    pub shape: ProceduralShape,
    pub sample: TrainingSample,
    pub obj_text: String,
    pub features: Vec<u8>,
}

/// One-drawer cabinet with part-aware features and a synthetic sketch.
pub fn demo() -> Demo {
    let shape = cabinet_drawers(1, 3).unwrap();
    let sample = generate_sample(&shape.object, 0, 0, &DatasetConfig::default()).unwrap();
    let obj_text = write_obj(&shape.object.mesh);
    let features = label_features(&shape.labels, 16, 1).to_tensor().to_bytes();
    Demo {
        shape,
        sample,
        obj_text,
        features,
    }
}

impl Demo {
    pub fn strokes(&self) -> StrokesRequest {
        StrokesRequest {
            strokes: self.sample.stroke_polylines(false).unwrap(),
            focal: None,
            camera: Some(self.sample.camera.clone()),
        }
    }

    pub fn create_body(&self) -> Value {
        json!({
            "mesh_obj": self.obj_text,
            "features_b64": base64::engine::general_purpose::STANDARD.encode(&self.features),
        })
    }
}

pub fn app() -> (Arc<Engine>, Router) {
    let engine = Arc::new(Engine::new(EngineConfig::default()));
    (engine.clone(), artisketch_service::http::router(engine))
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let body = match body {
        Some(v) => Body::from(serde_json::to_vec(&v).unwrap()),
        None => Body::empty(),
    };
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body)
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    let v = if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap() };
    (s, v)
}

/// Creates a session, sketches the drawer and predicts. Returns the session id.
pub async fn predicted_session(app: &Router, demo: &Demo) -> String {
    let (s, v) = call_json(app, Method::POST, "/sessions", Some(demo.create_body())).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    let id = v["session_id"].as_str().unwrap().to_string();
    let (s, v) = call_json(
        app,
        Method::POST,
        &format!("/sessions/{id}/strokes"),
        Some(serde_json::to_value(demo.strokes()).unwrap()),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = call_json(app, Method::POST, &format!("/sessions/{id}/predict"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    id
}
