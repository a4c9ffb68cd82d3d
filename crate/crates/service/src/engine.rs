//! In-memory session engine. The HTTP handlers and the CLI both go through
//! these functions, so identical inputs produce identical JSON.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use dashmap::DashMap;
use parking_lot::{ArcMutexGuard, Condvar, Mutex, RawMutex};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use artisketch_core::complete::{CompletionConfig, DEFAULT_CHANNELS, DEFAULT_LATENT_RES};
use artisketch_core::grid::{voxelize, OccupancyGrid};
use artisketch_core::infer::{AdapterTarget, GeometricBackend, NeuralAdapter, PredictionBackend};
use artisketch_core::kinematics::{calibrate_range, UrdfAssembly};
use artisketch_core::meshops::{load_obj, write_obj};
use artisketch_core::model::Normalization;
use artisketch_core::pipeline::{self, PipelineConfig, Prediction, Prepared};
use artisketch_core::render::tensor::TensorBlock;
use artisketch_core::render::{gbuffer_png, render_gbuffer, Camera, GBuffer, PixelRect, PngStyle, BACKGROUND};
use artisketch_core::segment::{adjust_part, FeatureField};
use artisketch_core::sketch::{Stroke, StrokeSet};
use artisketch_core::{ArticulatedObject, ArticulationSpec, Error as CoreError, Joint, Mesh, Part, Vec3};

use crate::error::{ServiceError, ServiceResult};
use crate::jobs::{Job, JobInputs, JobView};

pub const SCHEMA_VERSION: u32 = 1;
pub const UNDO_DEPTH: usize = 64;
pub const DEFAULT_RESOLUTION: usize = 256;
/// Voxel resolution used for range calibration.
pub const CALIBRATION_RES: usize = 64;
pub const CALIBRATION_SAMPLES: usize = 128;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub workers: usize,
    /// Command line of the external prediction network.
    pub neural_cmd: Option<String>,
    /// Command line of the external completion model.
    pub completion_cmd: Option<String>,
    pub timeout: Duration,
    pub pipeline: PipelineConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            workers: 2,
            neural_cmd: None,
            completion_cmd: None,
            timeout: Duration::from_secs(30),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl EngineConfig {
    /// Reads `ARTISKETCH_WORKERS`, `ARTISKETCH_NEURAL_CMD`,
    /// `ARTISKETCH_COMPLETION_CMD` and `ARTISKETCH_TIMEOUT_SECS`.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        if let Some(w) = var("ARTISKETCH_WORKERS").and_then(|v| v.parse().ok()) {
            cfg.workers = w;
        }
        cfg.neural_cmd = var("ARTISKETCH_NEURAL_CMD");
        cfg.completion_cmd = var("ARTISKETCH_COMPLETION_CMD");
        if let Some(t) = var("ARTISKETCH_TIMEOUT_SECS").and_then(|v| v.parse().ok()) {
            cfg.timeout = Duration::from_secs(t);
        }
        cfg
    }
}

pub fn default_camera(width: usize, height: usize) -> Camera {
    Camera::look_at(
        Vec3::new(1.1, -1.9, 1.0),
        Vec3::zeros(),
        Vec3::z(),
        0.7,
        width,
        height,
    )
    .expect("default camera is valid")
}

// ---------------------------------------------------------------------------
// wire types

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    /// OBJ text.
    #[serde(default)]
    pub mesh_obj: Option<String>,
    /// Server-side OBJ path.
    #[serde(default)]
    pub mesh_path: Option<PathBuf>,
    /// Per-face feature tensor block, base64.
    #[serde(default)]
    pub features_b64: Option<String>,
    #[serde(default)]
    pub features_path: Option<PathBuf>,
    #[serde(default)]
    pub camera: Option<Camera>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrokesRequest {
    pub strokes: Vec<Stroke>,
    /// Focal rectangle in view pixels; grown by 20% before cropping.
    #[serde(default)]
    pub focal: Option<PixelRect>,
    /// View the strokes were drawn in; defaults to the session camera.
    #[serde(default)]
    pub camera: Option<Camera>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    #[serde(default = "default_backend")]
    pub backend: String,
}

fn default_backend() -> String {
    "geometric".into()
}

impl Default for PredictRequest {
    fn default() -> Self {
        Self { backend: default_backend() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommitRequest {
    #[serde(default = "yes")]
    pub accept: bool,
    #[serde(default)]
    pub range_max: Option<f64>,
    /// Shrinks the range to the collision-free prefix.
    #[serde(default)]
    pub calibrate: bool,
}

fn yes() -> bool {
    true
}

impl Default for CommitRequest {
    fn default() -> Self {
        Self {
            accept: true,
            range_max: None,
            calibrate: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AdjustRequest {
    #[serde(default)]
    pub add: Vec<usize>,
    #[serde(default)]
    pub remove: Vec<usize>,
    #[serde(default)]
    pub range_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompleteRequest {
    pub joint: usize,
    #[serde(default = "default_gen_backend")]
    pub backend: String,
    #[serde(default)]
    pub resolution: Option<usize>,
    #[serde(default)]
    pub config: Option<CompletionConfig>,
    /// Condition image (PNG), base64. Passed to the backend as bytes.
    #[serde(default)]
    pub condition_png_b64: Option<String>,
}

fn default_gen_backend() -> String {
    "mock-linear".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JointView {
    pub index: usize,
    pub face_ids: Vec<u32>,
    pub articulation: ArticulationSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionView {
    pub schema_version: u32,
    pub session_id: Uuid,
    pub ready: bool,
    pub faces: usize,
    pub vertices: usize,
    pub camera: Camera,
    pub joints: Vec<JointView>,
    pub undo_depth: usize,
    pub has_prediction: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointList {
    pub schema_version: u32,
    pub joints: Vec<JointView>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderStyle {
    #[default]
    Shaded,
    Depth,
    Normal,
}

impl From<RenderStyle> for PngStyle {
    fn from(s: RenderStyle) -> Self {
        match s {
            RenderStyle::Shaded => PngStyle::Shaded,
            RenderStyle::Depth => PngStyle::Depth,
            RenderStyle::Normal => PngStyle::Normal,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RenderQuery {
    #[serde(default)]
    pub camera: Option<Camera>,
    #[serde(default)]
    pub style: RenderStyle,
    /// "prediction" or a joint index.
    #[serde(default)]
    pub highlight: Option<String>,
}

/// Frame plus the G-buffer metadata clients need to map pixels to faces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderView {
    pub schema_version: u32,
    pub camera: Camera,
    pub width: usize,
    pub height: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub foreground: usize,
    /// PNG bytes, base64.
    pub png: String,
    /// Row-major little-endian u32 face ids (4294967295 = background), base64.
    pub face_id: String,
}

impl RenderView {
    pub fn png_bytes(&self) -> Vec<u8> {
        b64().decode(&self.png).expect("own base64")
    }

    pub fn face_ids(&self) -> Vec<u32> {
        b64()
            .decode(&self.face_id)
            .expect("own base64")
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    }
}

pub fn b64() -> base64::engine::GeneralPurpose {
    base64::engine::general_purpose::STANDARD
}

fn decode_b64(s: &str, what: &str) -> ServiceResult<Vec<u8>> {
    b64()
        .decode(s.trim())
        .map_err(|e| ServiceError::BadRequest(format!("{what}: {e}")))
}

// ---------------------------------------------------------------------------
// sessions

struct Warmup {
    slot: Mutex<Option<std::result::Result<Arc<Prepared>, (&'static str, String)>>>,
    cv: Condvar,
}

impl Warmup {
    fn wait(&self, timeout: Duration) -> ServiceResult<Arc<Prepared>> {
        let mut g = self.slot.lock();
        if g.is_none() {
            self.cv.wait_while_for(&mut g, |s| s.is_none(), timeout);
        }
        match &*g {
            Some(Ok(p)) => Ok(p.clone()),
            Some(Err((code, message))) => Err(ServiceError::Unprocessable {
                code,
                message: message.clone(),
            }),
            None => Err(ServiceError::Core(CoreError::Timeout { secs: timeout.as_secs() })),
        }
    }

    fn ready(&self) -> bool {
        matches!(&*self.slot.lock(), Some(Ok(_)))
    }
}

pub struct Session {
    pub object: ArticulatedObject,
    pub camera: Camera,
    pub strokes: Option<StrokesRequest>,
    pub prediction: Option<Prediction>,
    undo: Vec<Vec<Joint>>,
}

impl Session {
    fn snapshot(&mut self) {
        self.undo.push(self.object.joints().to_vec());
        if self.undo.len() > UNDO_DEPTH {
            self.undo.remove(0);
        }
    }

    pub fn undo_depth(&self) -> usize {
        self.undo.len()
    }

    fn joint_views(&self) -> Vec<JointView> {
        joint_views(&self.object)
    }
}

pub fn joint_views(obj: &ArticulatedObject) -> Vec<JointView> {
    obj.joints()
        .iter()
        .enumerate()
        .map(|(index, j)| JointView {
            index,
            face_ids: j.part.face_ids().to_vec(),
            articulation: j.articulation,
        })
        .collect()
}

fn with_joints(obj: &ArticulatedObject, joints: Vec<Joint>) -> ServiceResult<ArticulatedObject> {
    let mut out = ArticulatedObject::new(obj.mesh.clone());
    out.source_id = obj.source_id.clone();
    out.category = obj.category.clone();
    for j in joints {
        out.add_joint(j.part, j.articulation)?;
    }
    Ok(out)
}

struct SessionSlot {
    state: Arc<Mutex<Session>>,
    warmup: Arc<Warmup>,
}

pub type SessionGuard = ArcMutexGuard<RawMutex, Session>;

pub struct Engine {
    pub config: EngineConfig,
    sessions: DashMap<Uuid, Arc<SessionSlot>>,
    jobs: DashMap<Uuid, Arc<Job>>,
    pool: Arc<rayon::ThreadPool>,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers.max(1))
            .thread_name(|i| format!("artisketch-worker-{i}"))
            .build()
            .expect("worker pool");
        Self {
            config,
            sessions: DashMap::new(),
            jobs: DashMap::new(),
            pool: Arc::new(pool),
        }
    }

    fn slot(&self, id: Uuid) -> ServiceResult<Arc<SessionSlot>> {
        self.sessions
            .get(&id)
            .map(|s| s.clone())
            .ok_or_else(|| ServiceError::not_found(format!("session {id}")))
    }

    /// Exclusive access for a mutation; 409 when another request holds it.
    pub fn begin(&self, id: Uuid) -> ServiceResult<SessionGuard> {
        let slot = self.slot(id)?;
        slot.state.try_lock_arc().ok_or_else(|| ServiceError::Conflict(id.to_string()))
    }

    /// Shared read: waits for a running mutation to finish.
    fn read(&self, id: Uuid) -> ServiceResult<SessionGuard> {
        Ok(self.slot(id)?.state.lock_arc())
    }

    pub fn prepared(&self, id: Uuid) -> ServiceResult<Arc<Prepared>> {
        self.slot(id)?.warmup.wait(self.config.timeout)
    }

    pub fn create_session(&self, req: CreateSession) -> ServiceResult<SessionView> {
        let mesh = load_mesh(&req)?;
        let field = load_features(&req)?;
        if let Some(f) = &field {
            f.check_against(&mesh)?;
        }
        let camera = match req.camera {
            Some(c) => {
                c.validate()?;
                c
            }
            None => default_camera(DEFAULT_RESOLUTION, DEFAULT_RESOLUTION),
        };
        let id = Uuid::new_v4();
        let warmup = Arc::new(Warmup {
            slot: Mutex::new(None),
            cv: Condvar::new(),
        });
        let session = Session {
            object: ArticulatedObject::new(mesh.clone()),
            camera,
            strokes: None,
            prediction: None,
            undo: Vec::new(),
        };
        self.sessions.insert(
            id,
            Arc::new(SessionSlot {
                state: Arc::new(Mutex::new(session)),
                warmup: warmup.clone(),
            }),
        );
        // feature and tree construction can take seconds on large meshes
        let cfg = self.config.pipeline.clone();
        std::thread::spawn(move || {
            let out = Prepared::new(mesh, field, &cfg).map(Arc::new).map_err(|e| (e.code(), e.to_string()));
            *warmup.slot.lock() = Some(out);
            warmup.cv.notify_all();
        });
        self.session_view(id)
    }

    pub fn delete_session(&self, id: Uuid) -> ServiceResult<()> {
        let _guard = self.begin(id)?;
        self.sessions.remove(&id);
        Ok(())
    }

    pub fn session_view(&self, id: Uuid) -> ServiceResult<SessionView> {
        let slot = self.slot(id)?;
        let ready = slot.warmup.ready();
        let s = slot.state.lock();
        Ok(SessionView {
            schema_version: SCHEMA_VERSION,
            session_id: id,
            ready,
            faces: s.object.mesh.face_count(),
            vertices: s.object.mesh.vertices.len(),
            camera: s.camera.clone(),
            joints: s.joint_views(),
            undo_depth: s.undo.len(),
            has_prediction: s.prediction.is_some(),
        })
    }

    pub fn joints(&self, id: Uuid) -> ServiceResult<JointList> {
        let s = self.read(id)?;
        Ok(JointList {
            schema_version: SCHEMA_VERSION,
            joints: s.joint_views(),
        })
    }

    pub fn set_camera(&self, id: Uuid, camera: Camera) -> ServiceResult<SessionView> {
        camera.validate()?;
        {
            let mut s = self.begin(id)?;
            s.camera = camera;
        }
        self.session_view(id)
    }

    pub fn render(&self, id: Uuid, q: &RenderQuery) -> ServiceResult<RenderView> {
        let s = self.read(id)?;
        let camera = q.camera.clone().unwrap_or_else(|| s.camera.clone());
        camera.validate()?;
        let highlight: Option<Vec<bool>> = match q.highlight.as_deref() {
            None | Some("") => None,
            Some("prediction") => s.prediction.as_ref().map(|p| face_mask(&p.face_ids, s.object.mesh.face_count())),
            Some(j) => {
                let j: usize = j
                    .parse()
                    .map_err(|_| ServiceError::BadRequest(format!("highlight must be `prediction` or a joint index, got {j}")))?;
                let joint = s
                    .object
                    .joints()
                    .get(j)
                    .ok_or_else(|| ServiceError::not_found(format!("joint {j}")))?;
                Some(joint.part.mask(s.object.mesh.face_count()))
            }
        };
        let gb = render_gbuffer(&s.object.mesh, &camera)?;
        render_view(&gb, camera, q.style.into(), highlight.as_deref())
    }

    pub fn post_strokes(&self, id: Uuid, req: StrokesRequest) -> ServiceResult<serde_json::Value> {
        let strokes = StrokeSet { strokes: req.strokes }.cleaned()?.strokes;
        let mut s = self.begin(id)?;
        let camera = req.camera.unwrap_or_else(|| s.camera.clone());
        camera.validate()?;
        for st in &strokes {
            st.check_bounds(camera.width, camera.height)?;
        }
        let n = strokes.len();
        s.camera = camera.clone();
        s.strokes = Some(StrokesRequest {
            strokes,
            focal: req.focal,
            camera: Some(camera),
        });
        s.prediction = None;
        Ok(serde_json::json!({ "schema_version": SCHEMA_VERSION, "stored": n }))
    }

    pub fn backend(&self, name: &str) -> ServiceResult<Box<dyn PredictionBackend>> {
        match name {
            "geometric" => Ok(Box::new(GeometricBackend {
                config: self.config.pipeline.infer.clone(),
            })),
            "neural" => {
                let command = self.config.neural_cmd.clone().ok_or_else(|| {
                    ServiceError::Core(CoreError::Backend("no neural adapter configured (ARTISKETCH_NEURAL_CMD)".into()))
                })?;
                let mut a = NeuralAdapter::new(AdapterTarget::Process { command });
                a.timeout = self.config.timeout;
                Ok(Box::new(a))
            }
            other => Err(ServiceError::BadRequest(format!("unknown backend `{other}`"))),
        }
    }

    pub fn predict(&self, id: Uuid, req: &PredictRequest) -> ServiceResult<Prediction> {
        let backend = self.backend(&req.backend)?;
        let mut s = self.begin(id)?;
        let strokes = s.strokes.clone().unwrap_or_default();
        let camera = strokes.camera.clone().unwrap_or_else(|| s.camera.clone());
        let prepared = self.prepared(id)?;
        let pred = run_prediction(&prepared, &camera, &strokes, backend.as_ref(), &self.config.pipeline)?;
        s.prediction = Some(pred.clone());
        Ok(pred)
    }

    pub fn commit_joint(&self, id: Uuid, req: &CommitRequest) -> ServiceResult<JointList> {
        if !req.accept {
            let mut s = self.begin(id)?;
            s.prediction = None;
            return Ok(JointList {
                schema_version: SCHEMA_VERSION,
                joints: s.joint_views(),
            });
        }
        let mut s = self.begin(id)?;
        let pred = s.prediction.clone().ok_or_else(|| ServiceError::Unprocessable {
            code: "no-prediction",
            message: "predict before committing a joint".into(),
        })?;
        let part = Part::new(pred.face_ids.clone(), &s.object.mesh)?;
        let mut spec = pred.articulation;
        if let Some(r) = req.range_max {
            spec = spec.with_range(r)?;
        }
        if req.calibrate {
            spec = calibrate(&s.object, &part, &spec)?;
        }
        let mut next = s.object.clone();
        next.add_joint(part, spec)?;
        s.snapshot();
        s.object = next;
        s.prediction = None;
        Ok(JointList {
            schema_version: SCHEMA_VERSION,
            joints: s.joint_views(),
        })
    }

    pub fn adjust_joint(&self, id: Uuid, j: usize, req: &AdjustRequest) -> ServiceResult<JointList> {
        let prepared = if req.add.is_empty() && req.remove.is_empty() {
            None
        } else {
            Some(self.prepared(id)?)
        };
        let mut s = self.begin(id)?;
        let joint = s
            .object
            .joints()
            .get(j)
            .cloned()
            .ok_or_else(|| ServiceError::not_found(format!("joint {j}")))?;
        let part = match &prepared {
            Some(p) => adjust_part(&joint.part, &req.add, &req.remove, &p.tree)?,
            None => joint.part.clone(),
        };
        let articulation = match req.range_max {
            Some(r) => joint.articulation.with_range(r)?,
            None => joint.articulation,
        };
        let mut next = s.object.clone();
        next.replace_joint(j, Joint { part, articulation })?;
        s.snapshot();
        s.object = next;
        Ok(JointList {
            schema_version: SCHEMA_VERSION,
            joints: s.joint_views(),
        })
    }

    pub fn undo(&self, id: Uuid) -> ServiceResult<JointList> {
        let mut s = self.begin(id)?;
        let prev = s.undo.pop().ok_or_else(|| ServiceError::Unprocessable {
            code: "nothing-to-undo",
            message: "undo stack is empty".into(),
        })?;
        s.object = with_joints(&s.object, prev)?;
        Ok(JointList {
            schema_version: SCHEMA_VERSION,
            joints: s.joint_views(),
        })
    }

    pub fn animate(&self, id: Uuid, joint: usize, value: f64, camera: Option<Camera>) -> ServiceResult<Vec<u8>> {
        let s = self.read(id)?;
        let camera = camera.unwrap_or_else(|| s.camera.clone());
        camera.validate()?;
        let posed = posed_mesh(&s.object, joint, value)?;
        let gb = render_gbuffer(&posed, &camera)?;
        Ok(gbuffer_png(&gb, PngStyle::Shaded, None)?)
    }

    pub fn export_urdf_zip(&self, id: Uuid) -> ServiceResult<Vec<u8>> {
        let s = self.read(id)?;
        urdf_zip(&s.object, "articulated_object")
    }

    /// Snapshot of the object under construction.
    pub fn object(&self, id: Uuid) -> ServiceResult<ArticulatedObject> {
        Ok(self.read(id)?.object.clone())
    }

    // -----------------------------------------------------------------------
    // completion jobs

    pub fn start_completion(&self, id: Uuid, req: &CompleteRequest) -> ServiceResult<JobView> {
        let s = self.begin(id)?;
        let inputs = completion_inputs(&s.object, req, &self.config)?;
        drop(s);
        let job = Arc::new(Job::new(id, inputs));
        self.jobs.insert(job.id, job.clone());
        job.spawn(&self.pool);
        Ok(job.view(false))
    }

    fn job(&self, id: Uuid) -> ServiceResult<Arc<Job>> {
        self.jobs
            .get(&id)
            .map(|j| j.clone())
            .ok_or_else(|| ServiceError::not_found(format!("job {id}")))
    }

    pub fn job_view(&self, id: Uuid, with_grid: bool) -> ServiceResult<JobView> {
        Ok(self.job(id)?.view(with_grid))
    }

    pub fn cancel_job(&self, id: Uuid) -> ServiceResult<JobView> {
        let job = self.job(id)?;
        job.cancel();
        Ok(job.view(false))
    }

    pub fn resume_job(&self, id: Uuid, k_max: Option<usize>) -> ServiceResult<JobView> {
        let job = self.job(id)?;
        job.resume(k_max, &self.pool)?;
        Ok(job.view(false))
    }

    /// Blocks until the job leaves the queued/running states.
    pub fn wait_job(&self, id: Uuid, timeout: Duration) -> ServiceResult<JobView> {
        let job = self.job(id)?;
        job.wait(timeout);
        Ok(job.view(false))
    }
}

// ---------------------------------------------------------------------------
// shared helpers (also used by the CLI)

pub fn load_mesh(req: &CreateSession) -> ServiceResult<Mesh> {
    let bytes = match (&req.mesh_obj, &req.mesh_path) {
        (Some(text), None) => text.as_bytes().to_vec(),
        (None, Some(p)) => std::fs::read(p).map_err(CoreError::from)?,
        _ => return Err(ServiceError::BadRequest("give exactly one of mesh_obj or mesh_path".into())),
    };
    Ok(load_obj(&bytes)?)
}

pub fn load_features(req: &CreateSession) -> ServiceResult<Option<FeatureField>> {
    let bytes = match (&req.features_b64, &req.features_path) {
        (None, None) => return Ok(None),
        (Some(b), None) => decode_b64(b, "features_b64")?,
        (None, Some(p)) => std::fs::read(p).map_err(CoreError::from)?,
        _ => return Err(ServiceError::BadRequest("give at most one of features_b64 or features_path".into())),
    };
    Ok(Some(FeatureField::from_tensor(&TensorBlock::from_bytes(&bytes)?)?))
}

/// The one prediction path: CLI `predict` and `POST /predict` both end here.
pub fn run_prediction(
    prepared: &Prepared,
    camera: &Camera,
    strokes: &StrokesRequest,
    backend: &dyn PredictionBackend,
    cfg: &PipelineConfig,
) -> ServiceResult<Prediction> {
    let set = StrokeSet {
        strokes: strokes.strokes.clone(),
    }
    .cleaned()?;
    Ok(pipeline::predict(prepared, camera, &set, strokes.focal.as_ref(), backend, cfg)?)
}

fn face_mask(ids: &[u32], n: usize) -> Vec<bool> {
    let mut m = vec![false; n];
    for &f in ids {
        if (f as usize) < n {
            m[f as usize] = true;
        }
    }
    m
}

pub fn render_view(gb: &GBuffer, camera: Camera, style: PngStyle, highlight: Option<&[bool]>) -> ServiceResult<RenderView> {
    let png = gbuffer_png(gb, style, highlight)?;
    let (_, lo, hi) = gb.normalized_depth();
    let mut ids = Vec::with_capacity(gb.face_id.len() * 4);
    for f in &gb.face_id {
        ids.extend_from_slice(&f.to_le_bytes());
    }
    Ok(RenderView {
        schema_version: SCHEMA_VERSION,
        camera,
        width: gb.width,
        height: gb.height,
        depth_min: lo,
        depth_max: hi,
        foreground: gb.face_id.iter().filter(|&&f| f != BACKGROUND).count(),
        png: b64().encode(png),
        face_id: b64().encode(ids),
    })
}

/// Mesh with joint `joint` at `value` and every other joint at rest.
pub fn posed_mesh(obj: &ArticulatedObject, joint: usize, value: f64) -> ServiceResult<Mesh> {
    if joint >= obj.joints().len() {
        return Err(ServiceError::not_found(format!("joint {joint}")));
    }
    let mut values = vec![0.0; obj.joints().len()];
    values[joint] = value;
    Ok(obj.posed(&values)?)
}

fn complement(part: &Part, n: usize) -> Option<Part> {
    let ids: Vec<u32> = (0..n as u32).filter(|f| !part.contains(*f)).collect();
    Part::from_ids(ids).ok()
}

/// Collision-calibrated range against every face outside `part`.
pub fn calibrate(obj: &ArticulatedObject, part: &Part, spec: &ArticulationSpec) -> ServiceResult<ArticulationSpec> {
    let mesh = &obj.mesh;
    let Some(rest) = complement(part, mesh.face_count()) else {
        return Ok(*spec);
    };
    let moving = voxelize(mesh, Some(part), CALIBRATION_RES)?;
    let fixed = voxelize(mesh, Some(&rest), CALIBRATION_RES)?;
    Ok(calibrate_range(spec, &moving, &fixed, CALIBRATION_SAMPLES)?)
}

fn to_original(mesh: &Mesh) -> Mesh {
    let norm = mesh.normalization;
    let mut out = mesh.clone();
    for v in &mut out.vertices {
        *v = norm.to_original(v);
    }
    out.normalization = Normalization::default();
    out
}

/// `model.urdf` plus one OBJ per link, in the object's original units.
pub fn urdf_files(obj: &ArticulatedObject, name: &str) -> ServiceResult<Vec<(String, Vec<u8>)>> {
    let mesh = &obj.mesh;
    let norm = mesh.normalization;
    let mut specs = Vec::new();
    let mut meshes = Vec::new();
    for (k, j) in obj.joints().iter().enumerate() {
        specs.push((format!("link_{}", k + 1), format!("joint_{}", k + 1), j.articulation.to_original(&norm)?));
        meshes.push(to_original(&mesh.submesh(&j.part)));
    }
    let base = to_original(&mesh.submesh_faces(obj.base_faces()));
    let asm = UrdfAssembly::build(name, &specs)?;
    let mut files = vec![("model.urdf".to_string(), asm.to_xml().into_bytes())];
    files.push((asm.links[0].mesh.clone(), write_obj(&base).into_bytes()));
    for (link, m) in asm.links[1..].iter().zip(&meshes) {
        files.push((link.mesh.clone(), write_obj(m).into_bytes()));
    }
    Ok(files)
}

pub fn urdf_zip(obj: &ArticulatedObject, name: &str) -> ServiceResult<Vec<u8>> {
    let files = urdf_files(obj, name)?;
    let mut buf = std::io::Cursor::new(Vec::new());
    {
        let mut zip = zip::ZipWriter::new(&mut buf);
        let opts = zip::write::SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Deflated)
            .last_modified_time(zip::DateTime::default());
        for (path, bytes) in files {
            zip.start_file(path, opts).map_err(zip_err)?;
            zip.write_all(&bytes).map_err(CoreError::from)?;
        }
        zip.finish().map_err(zip_err)?;
    }
    Ok(buf.into_inner())
}

fn zip_err(e: zip::result::ZipError) -> ServiceError {
    ServiceError::Core(CoreError::Io(std::io::Error::other(e)))
}

/// Writes the URDF files under `dir`.
pub fn write_urdf_dir(obj: &ArticulatedObject, name: &str, dir: &Path) -> ServiceResult<()> {
    std::fs::create_dir_all(dir).map_err(CoreError::from)?;
    for (path, bytes) in urdf_files(obj, name)? {
        std::fs::write(dir.join(path), bytes).map_err(CoreError::from)?;
    }
    Ok(())
}

/// Grids and backend for a completion run on joint `req.joint`.
pub fn completion_inputs(obj: &ArticulatedObject, req: &CompleteRequest, cfg: &EngineConfig) -> ServiceResult<JobInputs> {
    let joint = obj
        .joints()
        .get(req.joint)
        .ok_or_else(|| ServiceError::not_found(format!("joint {}", req.joint)))?;
    let n = req.resolution.unwrap_or(DEFAULT_LATENT_RES);
    let config = req.config.unwrap_or_default();
    config.validate()?;
    let shell = voxelize(&obj.mesh, None, n)?;
    let moving = voxelize(&obj.mesh, Some(&joint.part), n)?;
    let condition = match &req.condition_png_b64 {
        Some(s) => decode_b64(s, "condition_png_b64")?,
        None => Vec::new(),
    };
    let backend = crate::jobs::generative_backend(&req.backend, &shell, config.seed, cfg)?;
    Ok(JobInputs {
        joint: joint.articulation,
        shell,
        moving,
        backend,
        config,
        condition,
    })
}

/// Channels used by the built-in generative backends.
pub const GEN_CHANNELS: usize = DEFAULT_CHANNELS;

pub fn grid_b64(grid: &OccupancyGrid) -> String {
    b64().encode(grid.to_tensor().to_bytes())
}
