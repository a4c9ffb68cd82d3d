mod common;

use std::io::Read;
use std::time::Duration;

use axum::http::{Method, StatusCode};
use base64::Engine as _;
use serde_json::json;

use artisketch_core::grid::OccupancyGrid;
use artisketch_core::kinematics::{UrdfAssembly, UrdfJointType};
use artisketch_core::render::tensor::TensorBlock;
use artisketch_core::MotionType;
use artisketch_service::engine::{JointList, RenderView, SessionView};
use artisketch_service::jobs::{JobStatus, JobView};
use uuid::Uuid;

use common::*;

#[tokio::test]
async fn health() {
    let (_, app) = app();
    let (s, v) = call_json(&app, Method::GET, "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn drawer_session_end_to_end() {
    let demo = demo();
    let (_, app) = app();
    let id = predicted_session(&app, &demo).await;

    let (s, view) = call_json(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let view: SessionView = serde_json::from_value(view).unwrap();
    assert!(view.has_prediction);
    assert_eq!(view.faces, demo.shape.object.mesh.face_count());

    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), Some(json!({}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let joints: JointList = serde_json::from_value(v).unwrap();
    assert_eq!(joints.joints.len(), 1);
    let gt = &demo.shape.object.joints()[0];
    assert_eq!(joints.joints[0].face_ids, gt.part.face_ids());
    assert_eq!(joints.joints[0].articulation.motion_type(), MotionType::Translation);

    // highlighted render of the committed joint
    let (s, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/render?highlight=0"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let r: RenderView = serde_json::from_value(v).unwrap();
    assert!(r.png_bytes().starts_with(b"\x89PNG"));
    assert_eq!(r.face_ids().len(), r.width * r.height);
    assert!(r.foreground > 0);

    let (s, png) = call(&app, Method::GET, &format!("/sessions/{id}/animate?joint=0&value=0.1"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(png.starts_with(b"\x89PNG"));

    let (s, zip) = call(&app, Method::GET, &format!("/sessions/{id}/export/urdf"), None).await;
    assert_eq!(s, StatusCode::OK);
    let mut archive = zip::ZipArchive::new(std::io::Cursor::new(zip)).unwrap();
    let mut xml = String::new();
    archive.by_name("model.urdf").unwrap().read_to_string(&mut xml).unwrap();
    let asm = UrdfAssembly::parse(&xml).unwrap();
    assert_eq!(asm.joints.len(), 1);
    assert_eq!(asm.joints[0].joint_type, UrdfJointType::Prismatic);
    for link in &asm.links {
        assert!(archive.by_name(&link.mesh).is_ok(), "missing {}", link.mesh);
    }
}

#[tokio::test]
async fn zero_strokes_are_ambiguous() {
    let demo = demo();
    let (_, app) = app();
    let (_, v) = call_json(&app, Method::POST, "/sessions", Some(demo.create_body())).await;
    let id = v["session_id"].as_str().unwrap();
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/strokes"), Some(json!({"strokes": []}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/predict"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "ambiguous-sketch");
}

#[tokio::test]
async fn commit_without_prediction_is_rejected() {
    let demo = demo();
    let (_, app) = app();
    let (_, v) = call_json(&app, Method::POST, "/sessions", Some(demo.create_body())).await;
    let id = v["session_id"].as_str().unwrap();
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "no-prediction");
}

#[tokio::test]
async fn undo_restores_joint_list() {
    let demo = demo();
    let (_, app) = app();
    let id = predicted_session(&app, &demo).await;
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/undo"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "nothing-to-undo");

    let (_, committed) = call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), None).await;
    let committed: JointList = serde_json::from_value(committed).unwrap();
    let (s, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/joints/0/adjust"),
        Some(json!({"range_max": 0.05})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let adjusted: JointList = serde_json::from_value(v).unwrap();
    assert_eq!(adjusted.joints[0].articulation.range_max(), 0.05);

    let (_, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/undo"), None).await;
    let after: JointList = serde_json::from_value(v).unwrap();
    assert_eq!(after.joints, committed.joints);
    let (_, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/undo"), None).await;
    let empty: JointList = serde_json::from_value(v).unwrap();
    assert!(empty.joints.is_empty());
}

#[tokio::test]
async fn concurrent_mutation_conflicts() {
    let demo = demo();
    let (engine, app) = app();
    let id = predicted_session(&app, &demo).await;
    let guard = engine.begin(Uuid::parse_str(&id).unwrap()).unwrap();
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(v["error"]["code"], "conflict");
    drop(guard);
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn unknown_ids_are_not_found() {
    let (_, app) = app();
    let missing = Uuid::new_v4();
    for (m, uri) in [
        (Method::GET, format!("/sessions/{missing}")),
        (Method::GET, "/sessions/not-a-uuid".to_string()),
        (Method::POST, format!("/sessions/{missing}/predict")),
        (Method::GET, format!("/jobs/{missing}")),
        (Method::POST, format!("/jobs/{missing}/cancel")),
    ] {
        let (s, v) = call_json(&app, m, &uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
        assert_eq!(v["error"]["code"], "not-found");
    }
}

#[tokio::test]
async fn malformed_bodies_are_bad_requests() {
    let (_, app) = app();
    let (s, v) = call_json(&app, Method::POST, "/sessions", Some(json!({"mesh_obj": "v 0 0 0", "mesh_path": "/x"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");
    let (s, _) = call_json(&app, Method::POST, "/sessions", Some(json!([1, 2]))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

async fn wait_for(app: &axum::Router, job: &str, pred: impl Fn(&JobView) -> bool) -> JobView {
    for _ in 0..2000 {
        let (_, v) = call_json(app, Method::GET, &format!("/jobs/{job}"), None).await;
        let view: JobView = serde_json::from_value(v).unwrap();
        if pred(&view) {
            return view;
        }
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    panic!("job {job} did not reach the expected state");
}

#[tokio::test]
async fn completion_job_runs_to_convergence() {
    let demo = demo();
    let (_, app) = app();
    let id = predicted_session(&app, &demo).await;
    call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), None).await;
    let (s, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/complete"),
        Some(json!({"joint": 0, "backend": "mock-linear", "resolution": 16})),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = v["job_id"].as_str().unwrap().to_string();
    let done = wait_for(&app, &job, |v| !v.status.is_active()).await;
    assert_eq!(done.status, JobStatus::Done, "{:?}", done.error);
    assert!(done.converged);
    let (_, v) = call_json(&app, Method::GET, &format!("/jobs/{job}?grid=true"), None).await;
    let bytes = base64::engine::general_purpose::STANDARD.decode(v["grid"].as_str().unwrap()).unwrap();
    let grid = OccupancyGrid::from_tensor(&TensorBlock::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(grid.count(), done.occupied);
    assert_eq!(grid.n(), 16);
}

#[tokio::test]
async fn completion_job_cancels_and_resumes() {
    let demo = demo();
    let (_, app) = app();
    let id = predicted_session(&app, &demo).await;
    call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), None).await;
    let config = json!({"steps": 4, "seed": 1, "k_max": 1000000, "convergence": 0.0, "erosion": 1, "sweep_samples": 16});
    let (s, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/complete"),
        Some(json!({"joint": 0, "backend": "constant-velocity", "resolution": 8, "config": config})),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = v["job_id"].as_str().unwrap().to_string();
    wait_for(&app, &job, |v| !v.iterations.is_empty()).await;

    // a running job cannot be resumed
    let (s, v) = call_json(&app, Method::POST, &format!("/jobs/{job}/resume"), None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    let (s, _) = call_json(&app, Method::POST, &format!("/jobs/{job}/cancel"), None).await;
    assert_eq!(s, StatusCode::OK);
    let canceled = wait_for(&app, &job, |v| !v.status.is_active()).await;
    assert_eq!(canceled.status, JobStatus::Canceled);
    let passes = canceled.next_iteration;
    assert_eq!(passes, canceled.iterations.len());

    let (s, v) = call_json(
        &app,
        Method::POST,
        &format!("/jobs/{job}/resume"),
        Some(json!({"k_max": passes + 2})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let done = wait_for(&app, &job, |v| !v.status.is_active()).await;
    assert_eq!(done.status, JobStatus::Done);
    assert_eq!(done.next_iteration, passes + 2);
    let numbering: Vec<usize> = done.iterations.iter().map(|r| r.iteration).collect();
    assert_eq!(numbering, (0..passes + 2).collect::<Vec<_>>());
}

#[tokio::test]
async fn unknown_completion_backend_is_rejected() {
    let demo = demo();
    let (_, app) = app();
    let id = predicted_session(&app, &demo).await;
    call_json(&app, Method::POST, &format!("/sessions/{id}/joints"), None).await;
    let (s, _) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/complete"),
        Some(json!({"joint": 0, "backend": "nope"})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/complete"),
        Some(json!({"joint": 0, "backend": "trellis"})),
    )
    .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["error"]["code"], "backend-failure");
}

#[tokio::test]
async fn delete_session() {
    let demo = demo();
    let (_, app) = app();
    let (_, v) = call_json(&app, Method::POST, "/sessions", Some(demo.create_body())).await;
    let id = v["session_id"].as_str().unwrap();
    let (s, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NO_CONTENT);
    let (s, _) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
