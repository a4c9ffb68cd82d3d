//! Command-line driver. Every subcommand runs the same engine functions the
//! HTTP handlers use.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use artisketch_core::complete::{iterative_complete_from, CompletionConfig};
use artisketch_core::dataset::{read_object, split_corpus, synthesize, DatasetConfig};
use artisketch_core::kinematics::extract_mesh;
use artisketch_core::meshops::write_obj;
use artisketch_core::metrics::{evaluate_states, EvalConfig, DEFAULT_FSCORE_TAU, DEFAULT_POINTS};
use artisketch_core::pipeline::Prepared;
use artisketch_core::render::Camera;
use artisketch_core::shapes::demo_corpus;
use artisketch_core::{ArticulatedObject, Error as CoreError};

use crate::engine::{
    completion_inputs, load_features, load_mesh, run_prediction, urdf_zip, write_urdf_dir, CompleteRequest,
    CreateSession, Engine, EngineConfig, StrokesRequest,
};
use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Parser)]
#[command(name = "artisketch", version, about = "Sketch-driven articulation modeling for meshes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict one articulation from a mesh, strokes and a camera.
    Predict(PredictArgs),
    /// Complete the interior of an object around one joint.
    Complete(CompleteArgs),
    /// Synthesize sketch training samples from annotated shapes.
    SynthDataset(SynthArgs),
    /// Compare a predicted object against ground truth.
    Eval(EvalArgs),
    /// Write model.urdf and link meshes for an annotated object.
    ExportUrdf(ExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// OBJ mesh.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Stroke JSON: {"strokes":[{"role":..,"points":[[x,y],..]}],"focal":{..}}.
    #[arg(long)]
    pub strokes: PathBuf,
    /// Camera JSON the strokes were drawn in.
    #[arg(long)]
    pub camera: PathBuf,
    /// Per-face feature tensor block.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// geometric | neural
    #[arg(long, default_value = "geometric")]
    pub backend: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    /// object.json with at least one joint.
    #[arg(long)]
    pub object: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub joint: usize,
    /// mock-linear | mock-noisy | constant-velocity | trellis
    #[arg(long, default_value = "mock-linear")]
    pub backend: String,
    /// Latent grid resolution.
    #[arg(long, default_value_t = 16)]
    pub resolution: usize,
    /// CompletionConfig JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Condition image handed to the backend.
    #[arg(long)]
    pub condition: Option<PathBuf>,
    /// Output occupancy tensor block.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the completed surface as OBJ.
    #[arg(long)]
    pub mesh_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `demo` or a directory of object folders, each with object.json.
    #[arg(long)]
    pub shapes: String,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Image side in pixels.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted object.json.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth object.json.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub states: usize,
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    pub points: usize,
    #[arg(long, default_value_t = DEFAULT_FSCORE_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ground-truth joint index per predicted joint, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub correspondence: Option<Vec<usize>>,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-state table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub object: PathBuf,
    /// Output directory, or a .zip path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "articulated_object")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ARTISKETCH_BIND", default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long, env = "ARTISKETCH_WORKERS")]
    pub workers: Option<usize>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> ServiceResult<T> {
    let bytes = std::fs::read(path).map_err(CoreError::from)?;
    Ok(serde_json::from_slice(&bytes).map_err(CoreError::from)?)
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> ServiceResult<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(CoreError::from)?,
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(bytes).map_err(CoreError::from)?;
            out.write_all(b"\n").map_err(CoreError::from)?;
        }
    }
    Ok(())
}

pub fn predict(args: &PredictArgs) -> ServiceResult<Vec<u8>> {
    let engine = Engine::new(EngineConfig::from_env());
    let req = CreateSession {
        mesh_path: Some(args.mesh.clone()),
        features_path: args.features.clone(),
        ..Default::default()
    };
    let mesh = load_mesh(&req)?;
    let field = load_features(&req)?;
    let prepared = Prepared::new(mesh, field, &engine.config.pipeline)?;
    let strokes: StrokesRequest = read_json(&args.strokes)?;
    let camera: Camera = read_json(&args.camera)?;
    let backend = engine.backend(&args.backend)?;
    let pred = run_prediction(&prepared, &camera, &strokes, backend.as_ref(), &engine.config.pipeline)?;
    Ok(pred.to_json_bytes())
}

pub fn complete(args: &CompleteArgs) -> ServiceResult<serde_json::Value> {
    let obj = read_object(&args.object)?;
    let config: CompletionConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => CompletionConfig::default(),
    };
    let condition = match &args.condition {
        Some(p) => std::fs::read(p).map_err(CoreError::from)?,
        None => Vec::new(),
    };
    use base64::Engine as _;
    let req = CompleteRequest {
        joint: args.joint,
        backend: args.backend.clone(),
        resolution: Some(args.resolution),
        config: Some(config),
        condition_png_b64: Some(crate::engine::b64().encode(&condition)),
    };
    let inp = completion_inputs(&obj, &req, &EngineConfig::from_env())?;
    let out = iterative_complete_from(
        &inp.shell,
        0,
        &inp.joint,
        &inp.moving,
        inp.backend.as_ref(),
        &inp.config,
        &inp.condition,
        &mut |r| {
            log::info!("iteration {}: +{} cells ({} occupied)", r.iteration, r.new_cells, r.occupied);
            true
        },
    )?;
    std::fs::write(&args.out, out.grid.to_tensor().to_bytes()).map_err(CoreError::from)?;
    if let Some(p) = &args.mesh_out {
        std::fs::write(p, write_obj(&extract_mesh(&out.grid)?)).map_err(CoreError::from)?;
    }
    Ok(serde_json::json!({
        "schema_version": 1,
        "backend": inp.backend.name(),
        "iterations": out.growth,
        "converged": out.converged,
        "occupied": out.grid.count(),
        "shell": inp.shell.count(),
    }))
}

fn load_shapes(spec: &str, seed: u64) -> ServiceResult<Vec<ArticulatedObject>> {
    if spec == "demo" {
        return Ok(demo_corpus(seed)?.into_iter().map(|s| s.object).collect());
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(spec)
        .map_err(CoreError::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("object.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(ServiceError::Core(CoreError::InvalidInput(format!("no object folders under {spec}"))));
    }
    dirs.iter()
        .map(|d| {
            let mut obj = read_object(&d.join("object.json"))?;
            if obj.source_id.is_none() {
                obj.source_id = d.file_name().map(|n| n.to_string_lossy().into_owned());
            }
            Ok(obj)
        })
        .collect()
}

/// Writes `n` samples plus `index.json` with a 70/20/10 split by shape.
pub fn synth_dataset(args: &SynthArgs) -> ServiceResult<serde_json::Value> {
    let shapes = load_shapes(&args.shapes, args.seed)?;
    let cfg = DatasetConfig {
        resolution: args.resolution,
        ..Default::default()
    };
    let samples = synthesize(&shapes, args.n, args.seed, &cfg)?;
    std::fs::create_dir_all(&args.out).map_err(CoreError::from)?;
    for s in &samples {
        s.write(&args.out)?;
    }
    let pairs: Vec<(String, String)> = samples.iter().map(|s| (s.id.clone(), s.shape_id.clone())).collect();
    let distinct = pairs.iter().map(|p| &p.1).collect::<std::collections::BTreeSet<_>>().len();
    let split = if distinct >= 3 {
        let s = split_corpus(&pairs, |p| p.1.as_str(), [0.7, 0.2, 0.1], args.seed)?;
        let ids = |v: Vec<(String, String)>| v.into_iter().map(|p| p.0).collect::<Vec<_>>();
        serde_json::json!({ "train": ids(s.train), "test": ids(s.test), "val": ids(s.val) })
    } else {
        serde_json::Value::Null
    };
    let index = serde_json::json!({
        "schema_version": 1,
        "seed": args.seed,
        "n": samples.len(),
        "samples": pairs.iter().map(|p| serde_json::json!({ "id": p.0, "shape_id": p.1 })).collect::<Vec<_>>(),
        "split": split,
    });
    let mut text = serde_json::to_string_pretty(&index).map_err(CoreError::from)?;
    text.push('\n');
    std::fs::write(args.out.join("index.json"), text).map_err(CoreError::from)?;
    Ok(serde_json::json!({ "schema_version": 1, "written": samples.len(), "out": args.out }))
}

pub fn eval(args: &EvalArgs) -> ServiceResult<artisketch_core::metrics::EvalReport> {
    let pred = read_object(&args.pred)?;
    let gt = read_object(&args.gt)?;
    let cfg = EvalConfig {
        n_states: args.states,
        n_points: args.points,
        tau: args.tau,
        seed: args.seed,
    };
    let report = evaluate_states(&pred, &gt, args.correspondence.as_deref(), &cfg)?;
    if let Some(p) = &args.csv {
        std::fs::write(p, report.to_csv()).map_err(CoreError::from)?;
    }
    Ok(report)
}

pub fn export_urdf(args: &ExportArgs) -> ServiceResult<()> {
    let obj = read_object(&args.object)?;
    if args.out.extension().is_some_and(|e| e == "zip") {
        std::fs::write(&args.out, urdf_zip(&obj, &args.name)?).map_err(CoreError::from)?;
    } else {
        write_urdf_dir(&obj, &args.name, &args.out)?;
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> ServiceResult<()> {
    let mut cfg = EngineConfig::from_env();
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    let engine = Arc::new(Engine::new(cfg));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(CoreError::from)?;
    rt.block_on(crate::http::serve(engine, &args.bind)).map_err(CoreError::from)?;
    Ok(())
}

fn pretty(v: &impl serde::Serialize) -> Vec<u8> {
    serde_json::to_vec_pretty(v).expect("serializable")
}

/// Runs one command; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Predict(a) => predict(a).and_then(|b| write_out(a.out.as_deref(), &b)),
        Command::Complete(a) => complete(a).and_then(|v| write_out(None, &pretty(&v))),
        Command::SynthDataset(a) => synth_dataset(a).and_then(|v| write_out(None, &pretty(&v))),
        Command::Eval(a) => eval(a).and_then(|r| write_out(a.out.as_deref(), &pretty(&r))),
        Command::ExportUrdf(a) => export_urdf(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.body()).expect("serializable"));
            e.exit_code()
        }
    }
}
