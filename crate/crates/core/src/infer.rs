//! Four-head predictions from maps and sketch, and their refinement into an
//! articulation by OBB and boundary snapping.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Read;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::meshops::{fit_obb, part_boundary, representative_normal, Adjacency, OrientedBoundingBox};
use crate::model::{default_range, ArticulationSpec, Mesh, MotionType, Part, Vec3};
use crate::render::tensor::{read_blocks, TensorBlock};
use crate::render::{backproject, Camera, GBuffer, BACKGROUND};
use crate::segment::FeatureField;
use crate::sketch::{lift_arrow, lift_hinge, point_segment_distance2, SketchConfig, SketchIntent};

/// Raw network-style output: mask and pivot heatmap over the input view,
/// translation/rotation logits and a camera-space motion direction.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPrediction {
    pub width: usize,
    pub height: usize,
    pub mask2d: Vec<f32>,
    pub pivot_heatmap: Vec<f32>,
    /// (translation, rotation)
    pub type_logits: [f32; 2],
    pub dir3: Vec3,
}

impl RawPrediction {
    /// Checks shapes and ranges, renormalizing a slightly off-unit `dir3`.
    pub fn validated(mut self, width: usize, height: usize) -> Result<Self> {
        let n = width * height;
        if self.width != width || self.height != height || self.mask2d.len() != n || self.pivot_heatmap.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "prediction maps do not match the {width}x{height} input"
            )));
        }
        let bad = |v: &f32| !v.is_finite() || *v < -1e-6 || *v > 1.0 + 1e-6;
        if self.mask2d.iter().any(bad) || self.pivot_heatmap.iter().any(bad) {
            return Err(Error::Backend("map values outside [0, 1]".into()));
        }
        if !self.type_logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Backend("non-finite type logits".into()));
        }
        let len = self.dir3.norm();
        if !len.is_finite() || len < 1e-9 {
            return Err(Error::Backend("dir3 is zero or non-finite".into()));
        }
        if (len - 1.0).abs() > 1e-6 {
            log::warn!("renormalizing dir3 of length {len}");
            self.dir3 /= len;
        }
        Ok(self)
    }

    pub fn is_rotation(&self) -> bool {
        self.type_logits[1] > self.type_logits[0]
    }
}

/// Everything a backend may look at for one prediction.
pub struct PredictionInput<'a> {
    pub gbuffer: &'a GBuffer,
    pub camera: &'a Camera,
    pub mesh: &'a Mesh,
    /// Rasterized strokes, H x W.
    pub sketch: &'a [f32],
    pub intent: &'a SketchIntent,
    pub field: &'a FeatureField,
}

pub trait PredictionBackend: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, input: &PredictionInput) -> Result<RawPrediction>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferConfig {
    /// Flood-fill tolerance as a fraction of the median pairwise feature distance.
    pub tau_factor: f64,
    /// Absolute tolerance overriding `tau_factor`.
    pub tau: Option<f64>,
    pub ridge_sigma_px: f64,
    /// Hinge midpoints deeper inside the mask than this fraction of the
    /// mask's equivalent radius are treated as face-on axes (wheels, knobs).
    pub interior_factor: f64,
    pub continuity_deg: f64,
    pub sketch: SketchConfig,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            tau_factor: 0.35,
            tau: None,
            ridge_sigma_px: 3.0,
            interior_factor: 0.3,
            continuity_deg: 30.0,
            sketch: SketchConfig::default(),
        }
    }
}

/// Median of pairwise feature distances over an evenly strided sample of faces.
pub fn median_pairwise_distance(field: &FeatureField, max_samples: usize) -> f64 {
    let n = field.len();
    if n < 2 {
        return 0.0;
    }
    let step = n.div_ceil(max_samples.max(2));
    let rows: Vec<&[f64]> = (0..n).step_by(step).map(|f| field.row(f)).collect();
    let mut d = Vec::with_capacity(rows.len() * rows.len() / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push(rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    *d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
}

/// Faces reached by flooding from `seed` across image-adjacent faces that
/// are also mesh neighbours, accepting each face once when
/// its feature lies within `tau` of the running mean.
pub fn flood_faces(
    gb: &GBuffer,
    adj: &Adjacency,
    field: &FeatureField,
    seed: u32,
    tau: f64,
) -> BTreeSet<u32> {
    let mut links: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for y in 0..gb.height {
        for x in 0..gb.width {
            let i = gb.index(x, y);
            let fa = gb.face_id[i];
            if fa == BACKGROUND {
                continue;
            }
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx >= gb.width || ny >= gb.height {
                    continue;
                }
                let j = gb.index(nx, ny);
                let fb = gb.face_id[j];
                if fb == BACKGROUND || fb == fa {
                    continue;
                }
                let mesh_adjacent = adj
                    .neighbors
                    .get(fa as usize)
                    .is_some_and(|nb| nb.binary_search(&fb).is_ok());
                if mesh_adjacent {
                    links.entry(fa).or_default().insert(fb);
                    links.entry(fb).or_default().insert(fa);
                }
            }
        }
    }
    // identical features must pass even when the running mean rounds
    let tau = tau.max(1e-9);
    let mut accepted = BTreeSet::from([seed]);
    let mut decided = BTreeSet::from([seed]);
    let mut sum: Vec<f64> = field.row(seed as usize).to_vec();
    let mut count = 1.0;
    let mut queue = VecDeque::from([seed]);
    while let Some(f) = queue.pop_front() {
        let Some(nb) = links.get(&f) else { continue };
        for &g in nb {
            if !decided.insert(g) {
                continue;
            }
            let row = field.row(g as usize);
            let d = row
                .iter()
                .zip(&sum)
                .map(|(v, s)| (v - s / count) * (v - s / count))
                .sum::<f64>()
                .sqrt();
            if d <= tau {
                accepted.insert(g);
                sum.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                count += 1.0;
                queue.push_back(g);
            }
        }
    }
    accepted
}

fn ridge(gb: &GBuffer, p0: [f64; 2], p1: [f64; 2], sigma: f64) -> Vec<f32> {
    let mut out = vec![0.0f32; gb.width * gb.height];
    for y in 0..gb.height {
        for x in 0..gb.width {
            let d = point_segment_distance2([x as f64 + 0.5, y as f64 + 0.5], p0, p1);
            out[y * gb.width + x] = (-d * d / (2.0 * sigma * sigma)).exp() as f32;
        }
    }
    out
}

/// True when no pixel outside the mask lies within `radius` of `(x, y)`.
fn deep_inside(mask: &[f32], w: usize, h: usize, x: usize, y: usize, radius: f64) -> bool {
    let r = radius.ceil() as i64;
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64).sqrt() > radius {
                continue;
            }
            let (px, py) = (x as i64 + dx, y as i64 + dy);
            if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 || mask[py as usize * w + px as usize] < 0.5 {
                return false;
            }
        }
    }
    true
}

/// Deterministic stand-in for the trained network.
pub fn geometric_predict(input: &PredictionInput, cfg: &InferConfig) -> Result<RawPrediction> {
    let gb = input.gbuffer;
    let cam = input.camera;
    input.field.check_against(input.mesh)?;
    let arrow = input.intent.arrow();
    let lifted = lift_arrow(arrow, gb, cam, &cfg.sketch)?;
    let (tx, ty) = lifted.tail_pixel;

    // seed between hinge and tail for rotations so it lands on the moving panel
    let seed_px = match input.intent.hinge() {
        Some(h) => {
            let m = h.midpoint();
            let s = [0.5 * (m[0] + tx as f64 + 0.5), 0.5 * (m[1] + ty as f64 + 0.5)];
            gb.nearest_foreground(s[0], s[1], cfg.sketch.tail_snap_px).unwrap_or((tx, ty))
        }
        None => (tx, ty),
    };
    let seed = gb.face_id[gb.index(seed_px.0, seed_px.1)];
    let tau = cfg
        .tau
        .unwrap_or_else(|| cfg.tau_factor * median_pairwise_distance(input.field, 512));
    let adj = Adjacency::new(input.mesh);
    let faces = flood_faces(gb, &adj, input.field, seed, tau);
    let mask2d: Vec<f32> = gb
        .face_id
        .iter()
        .map(|f| if *f != BACKGROUND && faces.contains(f) { 1.0 } else { 0.0 })
        .collect();

    let (pivot_heatmap, type_logits, dir3) = match input.intent {
        SketchIntent::Translation { arrow } => {
            let dir = translation_axis(input.mesh, &faces, cam, gb, &lifted, arrow)
                .map(|d| cam.world_to_camera_dir(&d).normalize())
                .unwrap_or(lifted.dir3);
            (vec![0.0; gb.width * gb.height], [10.0, -10.0], dir)
        }
        SketchIntent::Rotation { hinge, arrow } => {
            let heat = ridge(gb, hinge.p0, hinge.p1, cfg.ridge_sigma_px);
            let lh = lift_hinge(hinge, gb, cam, &cfg.sketch)?;
            let area = mask2d.iter().filter(|&&m| m >= 0.5).count() as f64;
            let mid = hinge.midpoint();
            let mid_px = gb.nearest_foreground(mid[0], mid[1], cfg.sketch.tail_snap_px);
            let interior = mid_px.is_some_and(|(x, y)| {
                deep_inside(
                    &mask2d,
                    gb.width,
                    gb.height,
                    x,
                    y,
                    cfg.interior_factor * (area / std::f64::consts::PI).sqrt(),
                )
            });
            let axis = if interior {
                // face-on axis: the mean surface normal of the moving region
                let n: Vec3 = gb
                    .normal
                    .iter()
                    .zip(&mask2d)
                    .filter(|(_, &m)| m >= 0.5)
                    .map(|(n, _)| *n)
                    .sum();
                if n.norm() < 1e-12 {
                    lh.axis_hint
                } else {
                    cam.camera_to_world_dir(&n).normalize()
                }
            } else {
                lh.axis_hint
            };
            let sign = rotation_sign(cam, &lh.pivot, &axis, &lifted.anchor, arrow.head);
            (heat, [-10.0, 10.0], cam.world_to_camera_dir(&(axis * sign)).normalize())
        }
    };
    RawPrediction {
        width: gb.width,
        height: gb.height,
        mask2d,
        pivot_heatmap,
        type_logits,
        dir3,
    }
    .validated(gb.width, gb.height)
}

/// Signed axis of the flooded region's OBB whose projection at the anchor
/// best follows the drawn arrow. Near-ties go to the axis closest to the
/// surface normal under the tail, since parts usually pull out of their face.
fn translation_axis(
    mesh: &Mesh,
    faces: &BTreeSet<u32>,
    cam: &Camera,
    gb: &GBuffer,
    lifted: &crate::sketch::LiftedArrow,
    arrow: &crate::sketch::ArrowGeom,
) -> Option<Vec3> {
    let part = Part::from_ids(faces.iter().copied().collect()).ok()?;
    let obb = fit_obb(mesh, &part).ok()?;
    let a2 = [arrow.head[0] - arrow.tail[0], arrow.head[1] - arrow.tail[1]];
    let a2n = (a2[0] * a2[0] + a2[1] * a2[1]).sqrt();
    if a2n < 1e-9 {
        return None;
    }
    let (px, py) = lifted.tail_pixel;
    let normal = cam.camera_to_world_dir(&gb.normal[gb.index(px, py)]);
    let (x0, y0, _) = cam.project(&lifted.anchor)?;
    let step = 0.05 * obb.longest_edge().max(1e-9);
    let scored: Vec<(Vec3, f64)> = obb
        .axes
        .iter()
        .flat_map(|a| [*a, -*a])
        .filter_map(|c| {
            let (x1, y1, _) = cam.project(&(lifted.anchor + c * step))?;
            let v = [x1 - x0, y1 - y0];
            let vn = (v[0] * v[0] + v[1] * v[1]).sqrt();
            (vn > 1e-12).then(|| (c, (v[0] * a2[0] + v[1] * a2[1]) / (vn * a2n)))
        })
        .collect();
    let best = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    scored
        .iter()
        .filter(|s| s.1 >= best - 0.02)
        .max_by(|a, b| a.0.dot(&normal).abs().total_cmp(&b.0.dot(&normal).abs()))
        .map(|s| s.0)
}

/// +1 when rotating the tail anchor about `axis` carries it toward the arrow head.
fn rotation_sign(cam: &Camera, pivot: &Vec3, axis: &Vec3, anchor: &Vec3, head: [f64; 2]) -> f64 {
    let ax = Unit::new_normalize(*axis);
    let score = |s: f64| {
        let r = Rotation3::from_axis_angle(&ax, s * std::f64::consts::FRAC_PI_3);
        let p = pivot + r * (anchor - pivot);
        cam.project(&p)
            .map_or(f64::INFINITY, |(x, y, _)| (x - head[0]).powi(2) + (y - head[1]).powi(2))
    };
    if score(-1.0) < score(1.0) {
        -1.0
    } else {
        1.0
    }
}

pub struct GeometricBackend {
    pub config: InferConfig,
}

impl PredictionBackend for GeometricBackend {
    fn name(&self) -> &str {
        "geometric"
    }

    fn predict(&self, input: &PredictionInput) -> Result<RawPrediction> {
        geometric_predict(input, &self.config)
    }
}

/// Five-channel adapter input: sketch, normalized depth, camera-space normal.
pub fn adapter_input(gb: &GBuffer, sketch: &[f32]) -> Result<TensorBlock> {
    let n = gb.width * gb.height;
    if sketch.len() != n {
        return Err(Error::ShapeMismatch("sketch channel does not match the G-buffer".into()));
    }
    let (depth, lo, hi) = gb.normalized_depth();
    let mut data = Vec::with_capacity(5 * n);
    data.extend_from_slice(sketch);
    data.extend_from_slice(&depth);
    for c in 0..3 {
        data.extend(gb.normal.iter().map(|v| v[c] as f32));
    }
    Ok(TensorBlock::new(vec![5, gb.height, gb.width], data)?
        .with_meta("channels", json!(["sketch", "depth", "nx", "ny", "nz"]))
        .with_meta("depth_min", json!(lo))
        .with_meta("depth_max", json!(hi))
        .with_meta("stroke_width_px", json!(2.0)))
}

/// Adapter response: a `[2, H, W]` block (mask, heatmap) followed by a
/// header-only block whose meta carries `type_logits` and `dir3`.
pub fn parse_adapter_response(bytes: &[u8], width: usize, height: usize) -> Result<RawPrediction> {
    let blocks = read_blocks(bytes)?;
    let [maps, head] = blocks.as_slice() else {
        return Err(Error::Backend(format!("expected 2 response blocks, got {}", blocks.len())));
    };
    if maps.shape != [2, height, width] {
        return Err(Error::ShapeMismatch(format!("response maps have shape {:?}", maps.shape)));
    }
    let nums = |key: &str, n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = head
            .meta
            .get(key)
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|x| x.as_f64()).collect())
            .unwrap_or_default();
        if v.len() != n {
            return Err(Error::Backend(format!("response meta `{key}` needs {n} numbers")));
        }
        Ok(v)
    };
    let logits = nums("type_logits", 2)?;
    let d = nums("dir3", 3)?;
    RawPrediction {
        width,
        height,
        mask2d: maps.channel(0).to_vec(),
        pivot_heatmap: maps.channel(1).to_vec(),
        type_logits: [logits[0] as f32, logits[1] as f32],
        dir3: Vec3::new(d[0], d[1], d[2]),
    }
    .validated(width, height)
}

pub fn adapter_response(pred: &RawPrediction) -> Vec<u8> {
    let mut maps = pred.mask2d.clone();
    maps.extend_from_slice(&pred.pivot_heatmap);
    let a = TensorBlock::new(vec![2, pred.height, pred.width], maps).expect("shape");
    let b = TensorBlock::new(vec![0], vec![])
        .expect("empty")
        .with_meta("type_logits", json!(pred.type_logits))
        .with_meta("dir3", json!([pred.dir3.x, pred.dir3.y, pred.dir3.z]));
    crate::render::tensor::write_blocks(&[a, b])
}

/// Runs `command <input> <output>` on temp files and returns the output bytes.
pub(crate) fn run_adapter_process(command: &str, input: &[u8], timeout: Duration) -> Result<Vec<u8>> {
    let words = shlex::split(command)
        .filter(|w| !w.is_empty())
        .ok_or_else(|| Error::Backend(format!("cannot parse adapter command `{command}`")))?;
    let dir = tempfile::tempdir()?;
    let in_path: PathBuf = dir.path().join("input.s2t");
    let out_path: PathBuf = dir.path().join("output.s2t");
    std::fs::write(&in_path, input)?;
    let mut child = Command::new(&words[0])
        .args(&words[1..])
        .arg(&in_path)
        .arg(&out_path)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| Error::Backend(format!("cannot start adapter: {e}")))?;
    let start = Instant::now();
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break s;
        }
        if start.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::Timeout {
                secs: timeout.as_secs(),
            });
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    if !status.success() {
        let mut err = String::new();
        if let Some(mut e) = child.stderr.take() {
            let _ = e.read_to_string(&mut err);
        }
        return Err(Error::Backend(format!("adapter exited with {status}: {}", err.trim())));
    }
    std::fs::read(&out_path).map_err(|e| Error::Backend(format!("adapter wrote no output: {e}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdapterTarget {
    /// Command line; the input and output block paths are appended.
    Process { command: String },
    Http { url: String },
}

/// External network behind a process or HTTP boundary.
#[derive(Debug, Clone)]
pub struct NeuralAdapter {
    pub target: AdapterTarget,
    pub timeout: Duration,
}

impl NeuralAdapter {
    pub fn new(target: AdapterTarget) -> Self {
        Self {
            target,
            timeout: Duration::from_secs(30),
        }
    }

    fn run_process(&self, command: &str, input: &[u8]) -> Result<Vec<u8>> {
        run_adapter_process(command, input, self.timeout)
    }

    fn run_http(&self, url: &str, input: &[u8]) -> Result<Vec<u8>> {
        let resp = ureq::post(url)
            .timeout(self.timeout)
            .set("Content-Type", "application/octet-stream")
            .send_bytes(input)
            .map_err(|e| match e {
                ureq::Error::Transport(t) if t.kind() == ureq::ErrorKind::Io => Error::Timeout {
                    secs: self.timeout.as_secs(),
                },
                other => Error::Backend(other.to_string()),
            })?;
        let mut body = Vec::new();
        resp.into_reader().read_to_end(&mut body)?;
        Ok(body)
    }

    pub fn predict_raw(&self, gb: &GBuffer, sketch: &[f32]) -> Result<RawPrediction> {
        let input = adapter_input(gb, sketch)?.to_bytes();
        let out = match &self.target {
            AdapterTarget::Process { command } => self.run_process(command, &input)?,
            AdapterTarget::Http { url } => self.run_http(url, &input)?,
        };
        parse_adapter_response(&out, gb.width, gb.height)
    }
}

impl PredictionBackend for NeuralAdapter {
    fn name(&self) -> &str {
        "neural"
    }

    fn predict(&self, input: &PredictionInput) -> Result<RawPrediction> {
        self.predict_raw(input.gbuffer, input.sketch)
    }
}

/// Weighted centroid of the heatmap's upper half, back-projected.
pub fn extract_pivot(heatmap: &[f32], gb: &GBuffer, camera: &Camera) -> Result<Vec3> {
    let max = heatmap.iter().copied().fold(0.0f32, f32::max);
    if !(max > 0.1) {
        return Err(Error::FlatHeatmap);
    }
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in 0..gb.height {
        for x in 0..gb.width {
            let v = heatmap[y * gb.width + x];
            if v >= 0.5 * max {
                sx += v as f64 * (x as f64 + 0.5);
                sy += v as f64 * (y as f64 + 0.5);
                sw += v as f64;
            }
        }
    }
    let (cx, cy) = (sx / sw, sy / sw);
    let (px, py) = gb
        .nearest_foreground(cx, cy, (gb.width + gb.height) as f64)
        .ok_or(Error::NoSurface {
            x: cx as usize,
            y: cy as usize,
        })?;
    backproject(px, py, gb, camera)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuity {
    Continuous,
    NonContinuous,
}

/// Angle (radians) between the axis and the part's view-facing normal, sign-agnostic.
pub fn continuity_angle(mesh: &Mesh, part: &Part, dir3_world: &Vec3, view_dir: &Vec3) -> Result<f64> {
    let n = representative_normal(mesh, part, view_dir)?;
    Ok(n.dot(&dir3_world.normalize()).abs().min(1.0).acos())
}

pub fn classify_continuity(mesh: &Mesh, part: &Part, dir3_world: &Vec3, view_dir: &Vec3, threshold_deg: f64) -> Result<Continuity> {
    let angle = continuity_angle(mesh, part, dir3_world, view_dir)?;
    Ok(if angle < threshold_deg.to_radians() {
        Continuity::Continuous
    } else {
        Continuity::NonContinuous
    })
}

/// Closest of the six signed OBB axes; near-ties go to the lower index,
/// positive sign first.
pub fn snap_direction(dir: &Vec3, obb: &OrientedBoundingBox) -> Vec3 {
    let cands: Vec<Vec3> = obb.axes.iter().flat_map(|a| [*a, -*a]).collect();
    let dots: Vec<f64> = cands.iter().map(|c| c.dot(dir)).collect();
    let best = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pick = dots.iter().position(|&d| d >= best - 1e-9).unwrap();
    if dots.iter().filter(|&&d| d >= best - 1e-9).count() > 1 {
        log::debug!("snap_direction tie, picked candidate {pick}");
    }
    cands[pick]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HingeSnap {
    pub pivot: Vec3,
    pub axis: Vec3,
    pub snapped: bool,
}

pub fn snap_hinge(mesh: &Mesh, part: &Part, pivot_pred: &Vec3, axis_hint: &Vec3) -> Result<HingeSnap> {
    let loops = part_boundary(mesh, part)?;
    let best = loops
        .iter()
        .map(|l| (l.distance_to_chain(mesh, pivot_pred), l))
        .min_by(|a, b| a.0.total_cmp(&b.0));
    Ok(match best {
        None => HingeSnap {
            pivot: *pivot_pred,
            axis: axis_hint.normalize(),
            snapped: false,
        },
        Some((_, l)) => {
            let axis = if l.tangent.dot(axis_hint) < 0.0 { -l.tangent } else { l.tangent };
            HingeSnap {
                pivot: l.project_on_line(pivot_pred),
                axis,
                snapped: true,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finalized {
    pub articulation: ArticulationSpec,
    pub continuity_angle: Option<f64>,
    /// `Some(false)` when a hinged part had no boundary to snap to.
    pub hinge_snapped: Option<bool>,
}

/// Turns a raw prediction for a selected part into an articulation.
pub fn finalize(
    pred: &RawPrediction,
    part: &Part,
    mesh: &Mesh,
    camera: &Camera,
    gb: &GBuffer,
    cfg: &InferConfig,
) -> Result<Finalized> {
    part.check_against(mesh)?;
    let obb = fit_obb(mesh, part)?;
    let dir = camera.camera_to_world_dir(&pred.dir3).normalize();
    let (spec, angle, snapped) = if !pred.is_rotation() {
        let axis = snap_direction(&dir, &obb);
        let k = (0..3)
            .max_by(|&a, &b| obb.axes[a].dot(&axis).abs().total_cmp(&obb.axes[b].dot(&axis).abs()))
            .unwrap();
        let range = default_range(MotionType::Translation, 2.0 * obb.half_extents[k])?;
        (ArticulationSpec::translation(axis, range)?, None, None)
    } else {
        let angle = continuity_angle(mesh, part, &dir, &camera.view_dir())?;
        if angle < cfg.continuity_deg.to_radians() {
            let axis = snap_direction(&dir, &obb);
            (ArticulationSpec::continuous(obb.center, axis)?, Some(angle), None)
        } else {
            let pivot = extract_pivot(&pred.pivot_heatmap, gb, camera)?;
            let h = snap_hinge(mesh, part, &pivot, &dir)?;
            let range = default_range(MotionType::Rotation { continuous: false }, obb.longest_edge())?;
            (ArticulationSpec::rotation(h.pivot, h.axis, range)?, Some(angle), Some(h.snapped))
        }
    };
    let moved = obb
        .corners()
        .iter()
        .map(|c| (spec.apply_unchecked(0.1 * spec.range_max(), c) - c).norm())
        .fold(0.0, f64::max);
    if moved < 1e-6 {
        return Err(Error::Degenerate("articulation does not move the part".into()));
    }
    Ok(Finalized {
        articulation: spec,
        continuity_angle: angle,
        hinge_snapped: snapped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::render_gbuffer;
    use crate::segment::{builtin_features, label_features};
    use crate::shapes::{cabinet_drawers, fridge, grid_breaks, ProceduralShape};
    use crate::sketch::{ArrowGeom, LineGeom};
    use crate::testutil::door_on_frame;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn obb_axis_aligned() -> OrientedBoundingBox {
        OrientedBoundingBox {
            center: Vec3::zeros(),
            axes: [Vec3::x(), Vec3::y(), Vec3::z()],
            half_extents: [1.0, 1.0, 1.0],
            degenerate: false,
        }
    }

    #[test]
    fn snap_direction_cases() {
        let obb = obb_axis_aligned();
        assert_eq!(snap_direction(&Vec3::new(0.9, 0.1, 0.0).normalize(), &obb), Vec3::x());
        assert_eq!(snap_direction(&-Vec3::z(), &obb), -Vec3::z());
        // exact tie between +x and +y
        assert_eq!(snap_direction(&Vec3::new(1.0, 1.0, 0.0).normalize(), &obb), Vec3::x());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rot = Rotation3::from_euler_angles(0.3, -0.7, 1.1);
        let obb = OrientedBoundingBox {
            axes: [rot * Vec3::x(), rot * Vec3::y(), rot * Vec3::z()],
            ..obb
        };
        for _ in 0..200 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let s = snap_direction(&d, &obb);
            let brute = obb
                .axes
                .iter()
                .flat_map(|a| [*a, -*a])
                .max_by(|a, b| a.dot(&d).total_cmp(&b.dot(&d)))
                .unwrap();
            assert_eq!(s, brute);
        }
    }

    proptest! {
        #[test]
        fn snapped_direction_dominates(x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0, a in 0.0f64..3.0) {
            prop_assume!(Vec3::new(x, y, z).norm() > 1e-3);
            let d = Vec3::new(x, y, z).normalize();
            let rot = Rotation3::from_euler_angles(a, 0.5 * a, -a);
            let obb = OrientedBoundingBox { axes: [rot * Vec3::x(), rot * Vec3::y(), rot * Vec3::z()], ..obb_axis_aligned() };
            let s = snap_direction(&d, &obb);
            for c in obb.axes.iter().flat_map(|a| [*a, -*a]) {
                prop_assert!(s.dot(&d) >= c.dot(&d) - 1e-9);
            }
            prop_assert!(obb.axes.iter().any(|a| *a == s || -*a == s));
        }
    }

    #[test]
    fn continuity_rule() {
        let scene = door_on_frame();
        let view = Vec3::x();
        // door panel lies in the x = 0 plane, normal along x
        let c = |d: Vec3| classify_continuity(&scene.mesh, &scene.door, &d, &view, 30.0).unwrap();
        assert_eq!(c(Vec3::x()), Continuity::Continuous);
        assert_eq!(c(-Vec3::x()), Continuity::Continuous);
        assert_eq!(c(Vec3::z()), Continuity::NonContinuous);
        let at = |deg: f64| Vec3::new(deg.to_radians().cos(), 0.0, deg.to_radians().sin());
        assert_eq!(c(at(29.9)), Continuity::Continuous);
        let exactly = continuity_angle(&scene.mesh, &scene.door, &at(30.0), &view).unwrap();
        assert!((exactly - 30f64.to_radians()).abs() < 1e-12);
        assert_eq!(c(at(30.0 + 1e-9)), Continuity::NonContinuous);
    }

    fn shape_part(s: &ProceduralShape, j: usize) -> (&Mesh, &Part) {
        (&s.object.mesh, s.joint_part(j))
    }

    #[test]
    fn fridge_hinge_snaps_to_edge() {
        let s = fridge(0).unwrap();
        let (mesh, part) = shape_part(&s, 0);
        let gt = s.joint_spec(0);
        let noisy = gt.pivot() + Vec3::new(0.03, -0.02, 0.04).normalize() * 0.05;
        let h = snap_hinge(mesh, part, &noisy, &Vec3::new(0.1, 0.0, -1.0)).unwrap();
        assert!(h.snapped);
        assert_abs_diff_eq!(h.axis, gt.axis(), epsilon = 1e-6);
        let off = (h.pivot - gt.pivot()).cross(&gt.axis()).norm();
        assert!(off < 1e-6, "pivot off the hinge line by {off}");
        // flipped hint flips the axis
        let h2 = snap_hinge(mesh, part, &noisy, &Vec3::z()).unwrap();
        assert_abs_diff_eq!(h2.axis, -gt.axis(), epsilon = 1e-12);
    }

    #[test]
    fn floating_panel_is_unsnapped() {
        let mesh = grid_breaks(Vec3::zeros(), Vec3::x(), &[0.0, 1.0], Vec3::y(), &[0.0, 1.0]);
        let part = Part::from_ids(vec![0, 1]).unwrap();
        let p = Vec3::new(0.3, 0.2, 0.0);
        let h = snap_hinge(&mesh, &part, &p, &Vec3::y()).unwrap();
        assert!(!h.snapped);
        assert_eq!(h.pivot, p);
    }

    #[test]
    fn nearest_chain_wins() {
        // panel hinged on its top edge and attached to a side panel on its left edge
        let top = grid_breaks(Vec3::new(0.0, 0.0, 1.0), Vec3::x(), &[0.0, 1.0], Vec3::y(), &[0.0, 0.5]);
        let panel = grid_breaks(Vec3::zeros(), Vec3::x(), &[0.0, 1.0], Vec3::z(), &[0.0, 1.0]);
        let side = grid_breaks(Vec3::zeros(), Vec3::y(), &[-0.5, 0.0], Vec3::z(), &[0.0, 1.0]);
        let mut b = crate::shapes::ShapeBuilder::new();
        b.add(panel, 1);
        b.add(top, 0);
        b.add(side, 0);
        let (mesh, labels) = b.build();
        let part = Part::from_ids((0..labels.len() as u32).filter(|&f| labels[f as usize] == 1).collect()).unwrap();
        let near_top = Vec3::new(0.5, 0.0, 0.95);
        let h = snap_hinge(&mesh, &part, &near_top, &Vec3::x()).unwrap();
        assert_abs_diff_eq!(h.axis, Vec3::x(), epsilon = 1e-9);
        assert_abs_diff_eq!(h.pivot.z, 1.0, epsilon = 1e-9);
        let near_side = Vec3::new(0.05, 0.0, 0.5);
        let h = snap_hinge(&mesh, &part, &near_side, &Vec3::z()).unwrap();
        assert_abs_diff_eq!(h.axis, Vec3::z(), epsilon = 1e-9);
    }

    fn panel_gb() -> (GBuffer, Camera) {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 2.0), Vec3::zeros(), Vec3::y(), 0.9, 64, 64).unwrap();
        let mesh = grid_breaks(Vec3::new(-0.5, -0.5, 0.0), Vec3::x(), &[0.0, 1.0], Vec3::y(), &[0.0, 1.0]);
        (render_gbuffer(&mesh, &cam).unwrap(), cam)
    }

    #[test]
    fn pivot_from_peak_and_flat_maps() {
        let (gb, cam) = panel_gb();
        let mut heat = vec![0.0f32; 64 * 64];
        for y in 0..64 {
            for x in 0..64 {
                let d2 = ((x as f64 - 30.0).powi(2) + (y as f64 - 25.0).powi(2)) / 8.0;
                heat[y * 64 + x] = (-d2).exp() as f32;
            }
        }
        let p = extract_pivot(&heat, &gb, &cam).unwrap();
        assert_abs_diff_eq!(p, backproject(30, 25, &gb, &cam).unwrap(), epsilon = 1e-9);
        assert!(matches!(extract_pivot(&vec![0.0; 64 * 64], &gb, &cam), Err(Error::FlatHeatmap)));
    }

    #[test]
    fn prediction_validation() {
        let base = RawPrediction {
            width: 2,
            height: 1,
            mask2d: vec![0.0, 1.0],
            pivot_heatmap: vec![0.5, 0.5],
            type_logits: [1.0, -1.0],
            dir3: Vec3::new(0.97, 0.0, 0.0),
        };
        let v = base.clone().validated(2, 1).unwrap();
        assert_abs_diff_eq!(v.dir3.norm(), 1.0, epsilon = 1e-12);
        assert!(RawPrediction { dir3: Vec3::zeros(), ..base.clone() }.validated(2, 1).is_err());
        assert!(base.clone().validated(1, 2).is_err());
        assert!(RawPrediction { mask2d: vec![0.0, 1.5], ..base }.validated(2, 1).is_err());
    }

    fn fixture() -> (GBuffer, RawPrediction) {
        let (gb, _) = panel_gb();
        let n = 64 * 64;
        let pred = RawPrediction {
            width: 64,
            height: 64,
            mask2d: (0..n).map(|i| (i % 7) as f32 / 6.0).collect(),
            pivot_heatmap: (0..n).map(|i| (i % 5) as f32 / 4.0).collect(),
            type_logits: [0.25, -3.5],
            dir3: Vec3::new(0.0, 0.6, -0.8),
        };
        (gb, pred)
    }

    #[test]
    fn process_adapter_round_trip() {
        let (gb, pred) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let fix = dir.path().join("fixture.s2t");
        std::fs::write(&fix, adapter_response(&pred)).unwrap();
        let script = dir.path().join("adapter.sh");
        std::fs::write(&script, format!("#!/bin/sh\ntest -s \"$1\" || exit 3\ncp '{}' \"$2\"\n", fix.display())).unwrap();
        let cmd = format!("sh '{}'", script.display());
        let adapter = NeuralAdapter::new(AdapterTarget::Process { command: cmd });
        let out = adapter.predict_raw(&gb, &vec![0.0; 64 * 64]).unwrap();
        assert_eq!(out, pred);

        let slow = NeuralAdapter {
            target: AdapterTarget::Process { command: "sh -c 'sleep 5'".into() },
            timeout: Duration::from_millis(200),
        };
        assert!(matches!(slow.predict_raw(&gb, &vec![0.0; 64 * 64]), Err(Error::Timeout { .. })));
        let failing = NeuralAdapter::new(AdapterTarget::Process { command: "false".into() });
        assert!(matches!(failing.predict_raw(&gb, &vec![0.0; 64 * 64]), Err(Error::Backend(_))));
    }

    #[test]
    fn http_adapter_round_trip() {
        use std::io::Write;
        let (gb, pred) = fixture();
        let body = adapter_response(&pred);
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 65536];
            // read headers + body
            loop {
                let n = s.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                if let Some(p) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    let head = String::from_utf8_lossy(&buf[..p]).to_lowercase();
                    let len: usize = head
                        .lines()
                        .find_map(|l| l.strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                        .unwrap();
                    if buf.len() >= p + 4 + len {
                        break;
                    }
                }
            }
            write!(s, "HTTP/1.1 200 OK\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len()).unwrap();
            s.write_all(&body).unwrap();
        });
        let adapter = NeuralAdapter::new(AdapterTarget::Http {
            url: format!("http://{addr}/predict"),
        });
        let out = adapter.predict_raw(&gb, &vec![0.0; 64 * 64]).unwrap();
        server.join().unwrap();
        assert_eq!(out, pred);
    }

    #[test]
    fn malformed_response_rejected() {
        let (_, pred) = fixture();
        let mut bad = pred.clone();
        bad.dir3 = Vec3::zeros();
        let bytes = adapter_response(&bad);
        assert!(parse_adapter_response(&bytes, 64, 64).is_err());
        let one = TensorBlock::new(vec![2, 64, 64], vec![0.0; 2 * 64 * 64]).unwrap().to_bytes();
        assert!(parse_adapter_response(&one, 64, 64).is_err());
        assert!(parse_adapter_response(&adapter_response(&pred), 32, 32).is_err());
    }

    #[test]
    fn adapter_input_layout() {
        let (gb, _) = panel_gb();
        let sketch: Vec<f32> = (0..64 * 64).map(|i| (i % 3) as f32).collect();
        let b = adapter_input(&gb, &sketch).unwrap();
        assert_eq!(b.shape, vec![5, 64, 64]);
        assert_eq!(b.channel(0), sketch.as_slice());
        let i = gb.index(32, 32);
        assert_eq!(b.channel(4)[i], 1.0);
        let lo = (0..64 * 64).filter(|&k| gb.face_id[k] != BACKGROUND).map(|k| gb.depth[k]).fold(f64::INFINITY, f64::min);
        assert_eq!(b.meta["depth_min"], json!(lo));
    }

    #[test]
    fn drawer_translation_mask_and_axis() {
        let s = cabinet_drawers(3, 4).unwrap();
        let mesh = &s.object.mesh;
        let field = builtin_features(mesh, [1.0, 0.5, 1.0]);
        let cam = Camera::look_at(Vec3::new(0.9, -2.2, 1.2), Vec3::zeros(), Vec3::z(), 0.7, 96, 96).unwrap();
        let gb = render_gbuffer(mesh, &cam).unwrap();
        let part = s.joint_part(1);
        let obb = fit_obb(mesh, part).unwrap();
        // front face center of the drawer, pulled along the motion axis
        let front = obb.center + s.joint_spec(1).axis() * obb.half_extents.iter().copied().fold(f64::INFINITY, f64::min);
        let a = cam.project(&front).unwrap();
        let b = cam.project(&(front + s.joint_spec(1).axis() * 0.3)).unwrap();
        let intent = SketchIntent::Translation {
            arrow: ArrowGeom { tail: [a.0, a.1], head: [b.0, b.1], dir2d: [1.0, 0.0] },
        };
        let input = PredictionInput {
            gbuffer: &gb,
            camera: &cam,
            mesh,
            sketch: &vec![0.0; 96 * 96],
            intent: &intent,
            field: &field,
        };
        let pred = geometric_predict(&input, &InferConfig::default()).unwrap();
        assert!(!pred.is_rotation());
        // mask support lies on the drawer's front faces
        let front_n = s.joint_spec(1).axis();
        let front_faces: BTreeSet<u32> =
            part.iter().filter(|&f| mesh.face_normal(f).dot(&front_n) > 0.99).map(|f| f as u32).collect();
        let masked: BTreeSet<u32> =
            gb.face_id.iter().zip(&pred.mask2d).filter(|(_, &m)| m > 0.5).map(|(f, _)| *f).collect();
        let visible_front: BTreeSet<u32> = gb.face_id.iter().copied().filter(|f| front_faces.contains(f)).collect();
        let inter = masked.intersection(&visible_front).count() as f64;
        let union = masked.union(&visible_front).count() as f64;
        assert!(inter / union >= 0.9, "mask face IoU {}", inter / union);
        let fin = finalize(&pred, part, mesh, &cam, &gb, &InferConfig::default()).unwrap();
        assert_eq!(fin.articulation.motion_type(), MotionType::Translation);
        assert_abs_diff_eq!(fin.articulation.axis(), s.joint_spec(1).axis(), epsilon = 1e-9);
        let depth = 2.0 * obb.half_extents[(0..3).max_by(|&i, &j| obb.axes[i].dot(&front_n).abs().total_cmp(&obb.axes[j].dot(&front_n).abs())).unwrap()];
        assert_abs_diff_eq!(fin.articulation.range_max(), 0.9 * depth, epsilon = 1e-9);
    }

    #[test]
    fn door_rotation_end_to_end() {
        let scene = door_on_frame();
        let mesh = scene.mesh.normalized().unwrap();
        let labels: Vec<u32> = (0..mesh.face_count() as u32).map(|f| scene.door.contains(f) as u32).collect();
        let field = label_features(&labels, 16, 1);
        let cam = Camera::look_at(Vec3::new(-0.6, -1.8, 0.9), Vec3::zeros(), Vec3::z(), 0.8, 96, 96).unwrap();
        let gb = render_gbuffer(&mesh, &cam).unwrap();
        let (lo, hi) = mesh.bbox();
        // hinge on the shared edge, slightly onto the door; arc on the door's far edge
        let top = Vec3::new(0.0, -0.03, hi.z - 0.05);
        let bot = Vec3::new(0.0, -0.03, lo.z + 0.05);
        let far = Vec3::new(0.0, lo.y + 0.05, 0.5 * (lo.z + hi.z));
        let pivot = Vec3::new(0.0, 0.0, far.z);
        let end = pivot + Rotation3::from_axis_angle(&Vec3::z_axis(), 0.6) * (far - pivot);
        let px = |p: Vec3| {
            let q = cam.project(&p).unwrap();
            [q.0, q.1]
        };
        let intent = SketchIntent::Rotation {
            hinge: LineGeom { p0: px(bot), p1: px(top) },
            arrow: ArrowGeom { tail: px(far), head: px(end), dir2d: [1.0, 0.0] },
        };
        let input = PredictionInput {
            gbuffer: &gb,
            camera: &cam,
            mesh: &mesh,
            sketch: &vec![0.0; 96 * 96],
            intent: &intent,
            field: &field,
        };
        let pred = geometric_predict(&input, &InferConfig::default()).unwrap();
        assert!(pred.is_rotation());
        // heatmap peaks on the hinge line
        let (arg, _) = pred
            .pivot_heatmap
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let (hx, hy) = ((arg % 96) as f64 + 0.5, (arg / 96) as f64 + 0.5);
        let LineGeom { p0, p1 } = *intent.hinge().unwrap();
        assert!(point_segment_distance2([hx, hy], p0, p1) <= 2.0);
        let door = Part::from_ids(scene.door.face_ids().to_vec()).unwrap();
        let fin = finalize(&pred, &door, &mesh, &cam, &gb, &InferConfig::default()).unwrap();
        assert_eq!(fin.articulation.motion_type(), MotionType::Rotation { continuous: false });
        assert_eq!(fin.hinge_snapped, Some(true));
        assert_abs_diff_eq!(fin.articulation.axis(), Vec3::z(), epsilon = 1e-9);
        let hinge = mesh.normalization.to_normalized(&Vec3::zeros());
        let off = (fin.articulation.pivot() - hinge).cross(&Vec3::z()).norm();
        assert!(off < 1e-9, "pivot {off} off the hinge line");
        assert_abs_diff_eq!(fin.articulation.range_max(), crate::model::DEFAULT_ROTATION_RANGE, epsilon = 1e-12);
    }

    #[test]
    fn background_tail_is_an_error() {
        let (gb, cam) = panel_gb();
        let mesh = grid_breaks(Vec3::new(-0.5, -0.5, 0.0), Vec3::x(), &[0.0, 1.0], Vec3::y(), &[0.0, 1.0]);
        let field = builtin_features(&mesh, [1.0, 0.5, 1.0]);
        let intent = SketchIntent::Translation {
            arrow: ArrowGeom { tail: [-14.0, -14.0], head: [0.0, 0.0], dir2d: [1.0, 0.0] },
        };
        let input = PredictionInput {
            gbuffer: &gb,
            camera: &cam,
            mesh: &mesh,
            sketch: &vec![0.0; 64 * 64],
            intent: &intent,
            field: &field,
        };
        assert!(matches!(geometric_predict(&input, &InferConfig::default()), Err(Error::NoSurface { .. })));
    }
}
