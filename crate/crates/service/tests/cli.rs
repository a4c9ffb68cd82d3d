mod common;

use std::path::Path;
use std::process::Command;

use axum::http::{Method, StatusCode};

use artisketch_core::dataset::{read_object, write_object};
use artisketch_core::grid::OccupancyGrid;
use artisketch_core::kinematics::UrdfAssembly;
use artisketch_core::metrics::EvalReport;
use artisketch_core::render::tensor::TensorBlock;
use artisketch_core::shapes::{cabinet_door, cabinet_drawers};

use common::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_artisketch"))
}

fn write_inputs(demo: &Demo, dir: &Path) {
    std::fs::write(dir.join("mesh.obj"), &demo.obj_text).unwrap();
    std::fs::write(dir.join("features.bin"), &demo.features).unwrap();
    std::fs::write(dir.join("strokes.json"), serde_json::to_vec(&demo.strokes()).unwrap()).unwrap();
    std::fs::write(dir.join("camera.json"), serde_json::to_vec(&demo.sample.camera).unwrap()).unwrap();
}

#[tokio::test]
async fn cli_and_http_predictions_are_byte_identical() {
    let demo = demo();
    let dir = tempfile::tempdir().unwrap();
    write_inputs(&demo, dir.path());
    let out = dir.path().join("pred.json");
    let status = bin()
        .arg("predict")
        .args(["--mesh", "mesh.obj", "--strokes", "strokes.json", "--camera", "camera.json"])
        .args(["--features", "features.bin", "--out", "pred.json"])
        .current_dir(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let cli_bytes = std::fs::read(&out).unwrap();

    let (_, app) = app();
    let id = predicted_session(&app, &demo).await;
    // predicting again from the same strokes is deterministic
    let (s, http_bytes) = call(&app, Method::POST, &format!("/sessions/{id}/predict"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(cli_bytes, http_bytes);
}

#[test]
fn exit_codes() {
    let demo = demo();
    let dir = tempfile::tempdir().unwrap();
    write_inputs(&demo, dir.path());

    // missing mesh file: I/O
    let out = bin()
        .args(["predict", "--mesh", "nope.obj", "--strokes", "strokes.json", "--camera", "camera.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "io-error");

    // no strokes: validation
    std::fs::write(dir.path().join("empty.json"), br#"{"strokes":[]}"#).unwrap();
    let out = bin()
        .args(["predict", "--mesh", "mesh.obj", "--strokes", "empty.json", "--camera", "camera.json"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "ambiguous-sketch");
}

#[test]
fn export_urdf_directory_and_zip() {
    let shape = cabinet_door(true, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_object(&dir.path().join("door"), &shape.object).unwrap();
    let obj = dir.path().join("door/object.json");
    let status = bin()
        .args(["export-urdf", "--object"])
        .arg(&obj)
        .arg("--out")
        .arg(dir.path().join("urdf"))
        .status()
        .unwrap();
    assert!(status.success());
    let xml = std::fs::read_to_string(dir.path().join("urdf/model.urdf")).unwrap();
    let asm = UrdfAssembly::parse(&xml).unwrap();
    assert_eq!(asm.joints.len(), 1);
    for l in &asm.links {
        assert!(dir.path().join("urdf").join(&l.mesh).is_file());
    }
    let status = bin()
        .args(["export-urdf", "--object"])
        .arg(&obj)
        .arg("--out")
        .arg(dir.path().join("m.zip"))
        .status()
        .unwrap();
    assert!(status.success());
    let zip = std::fs::read(dir.path().join("m.zip")).unwrap();
    assert!(zip::ZipArchive::new(std::io::Cursor::new(zip)).unwrap().by_name("model.urdf").is_ok());
}

fn eval_cmd(pred: &Path, gt: &Path, extra: &[&str]) -> EvalReport {
    let out = bin()
        .args(["eval", "--states", "4", "--points", "2000", "--pred"])
        .arg(pred)
        .arg("--gt")
        .arg(gt)
        .args(extra)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn eval_reports_states_and_joints() {
    let dir = tempfile::tempdir().unwrap();
    write_object(&dir.path().join("gt"), &cabinet_drawers(2, 5).unwrap().object).unwrap();
    write_object(&dir.path().join("door"), &cabinet_door(true, 2).unwrap().object).unwrap();
    let gt = dir.path().join("gt/object.json");
    let csv = dir.path().join("r.csv");
    let same = eval_cmd(&gt, &gt, &["--csv", csv.to_str().unwrap()]);
    assert_eq!(same.states.len(), 4);
    assert_eq!(same.joints.len(), 2);
    for j in &same.joints {
        assert_eq!(j.axis_error, 0.0);
        assert_eq!(j.pivot_error, None);
    }
    // header, 4 states, mean, 2 joints
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 8);

    // a different object, matched to the second drawer
    let other = eval_cmd(&dir.path().join("door/object.json"), &gt, &["--correspondence", "1"]);
    assert_eq!(other.joints[0].gt_index, 1);
    assert!(other.mean_chamfer > 2.0 * same.mean_chamfer, "{} vs {}", other.mean_chamfer, same.mean_chamfer);
    assert!(other.mean_fscore < same.mean_fscore);
}

#[test]
fn synth_dataset_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = bin()
            .args(["synth-dataset", "--shapes", "demo", "--n", "6", "--seed", "4", "--resolution", "128", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        out
    };
    let a = run("a");
    let b = run("b");
    let index_a = std::fs::read(a.join("index.json")).unwrap();
    assert_eq!(index_a, std::fs::read(b.join("index.json")).unwrap());
    let index: serde_json::Value = serde_json::from_slice(&index_a).unwrap();
    assert_eq!(index["n"], 6);
    let split = &index["split"];
    let total: usize = ["train", "test", "val"].iter().map(|k| split[k].as_array().unwrap().len()).sum();
    assert_eq!(total, 6);
    for s in index["samples"].as_array().unwrap() {
        let id = s["id"].as_str().unwrap();
        for entry in std::fs::read_dir(a.join(id)).unwrap() {
            let p = entry.unwrap().path();
            let q = b.join(id).join(p.file_name().unwrap());
            assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap(), "{}", p.display());
        }
    }
}

#[test]
fn complete_writes_grid() {
    let shape = cabinet_drawers(1, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_object(&dir.path().join("o"), &shape.object).unwrap();
    let out = bin()
        .args(["complete", "--joint", "0", "--resolution", "12", "--object"])
        .arg(dir.path().join("o/object.json"))
        .arg("--out")
        .arg(dir.path().join("g.bin"))
        .arg("--mesh-out")
        .arg(dir.path().join("g.obj"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["converged"], true);
    let grid = OccupancyGrid::from_tensor(&TensorBlock::from_bytes(&std::fs::read(dir.path().join("g.bin")).unwrap()).unwrap())
        .unwrap();
    assert_eq!(grid.count() as u64, summary["occupied"].as_u64().unwrap());
    assert!(grid.count() as u64 >= summary["shell"].as_u64().unwrap());
    let round = read_object(&dir.path().join("o/object.json")).unwrap();
    assert_eq!(round.joints().len(), 1);
    assert!(std::fs::metadata(dir.path().join("g.obj")).unwrap().len() > 0);
}
