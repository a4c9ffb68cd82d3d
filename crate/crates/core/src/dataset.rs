//! Training-data synthesis: motion cues, camera placement, sketch
//! perturbation, quadratic Bézier fitting, sample emission and corpus splits.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::infer::adapter_input;
use crate::meshops::{fit_obb, parse_obj, write_obj, OrientedBoundingBox};
use crate::model::{ArticulatedObject, ArticulationSpec, Joint, Mesh, Part, Vec3};
use crate::render::tensor::{read_blocks, write_blocks, TensorBlock};
use crate::render::{render_gbuffer, Camera, GBuffer, BACKGROUND};
use crate::sketch::{arc_lengths, point_at, polyline_length, rasterize_strokes, Point2, Stroke, StrokeRole};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub resolution: usize,
    pub vfov: f64,
    pub jitter_sigma: f64,
    pub drift_amp: f64,
    pub bezier_tol: f64,
    /// Arc sweep cap, degrees.
    pub arc_cap_deg: f64,
    /// Eye cone half-angle around the part's facing direction, degrees.
    pub cap_deg: f64,
    pub fill_min: f64,
    pub fill_max: f64,
    pub camera_tries: usize,
    /// Fraction of the part's unoccluded pixels that must stay visible.
    pub min_visible: f64,
    /// Legibility floors at 256 px, scaled with the resolution.
    pub min_cue_px: f64,
    pub min_hinge_px: f64,
    /// Vertex spacing (px) of the polyline handed to the perturbation.
    pub stroke_spacing_px: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            resolution: 256,
            vfov: 0.6,
            jitter_sigma: 1.5,
            drift_amp: 4.0,
            bezier_tol: 1.5,
            arc_cap_deg: 60.0,
            cap_deg: 60.0,
            fill_min: 0.4,
            fill_max: 0.7,
            camera_tries: 32,
            min_visible: 0.5,
            min_cue_px: 20.0,
            min_hinge_px: 40.0,
            stroke_spacing_px: 6.0,
        }
    }
}

impl DatasetConfig {
    fn px_scale(&self) -> f64 {
        self.resolution as f64 / 256.0
    }
}

// ---------------------------------------------------------------------------
// motion cues

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    RotationArc,
    RotationAxisSegment,
    TranslationSegment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionCue3D {
    pub kind: CueKind,
    pub points: Vec<Vec3>,
    pub arrow_head: bool,
}

const CUE_POINTS: usize = 32;
/// Fraction of the center offset by which a hinge cue is pulled onto the part.
const HINGE_INSET: f64 = 0.1;
const ARC_RADIUS: f64 = 0.85;

fn polyline3(n: usize, f: impl Fn(f64) -> Vec3) -> Vec<Vec3> {
    (0..n).map(|i| f(i as f64 / (n - 1) as f64)).collect()
}

fn perpendicular(v: &Vec3, axis: &Vec3) -> Vec3 {
    v - axis * axis.dot(v)
}

/// 3D cues for a joint: a hinge segment plus an arc for rotations, a single
/// arrow segment for translations.
pub fn motion_cue(spec: &ArticulationSpec, obb: &OrientedBoundingBox, arc_cap_deg: f64) -> Result<Vec<MotionCue3D>> {
    let mut ext = obb.half_extents;
    ext.sort_by(|a, b| b.total_cmp(a));
    if !(ext[1] > 1e-9) {
        return Err(Error::Degenerate("part box collapses to a line".into()));
    }
    if !(spec.range_max() > 0.0) {
        return Err(Error::Degenerate("zero articulation range".into()));
    }
    let a = spec.axis();
    let corners = obb.corners();
    if !spec.motion_type().is_rotation() {
        // OBB axis best aligned with the motion gives the travel extent and the leading face
        let k = (0..3).max_by(|&i, &j| obb.axes[i].dot(&a).abs().total_cmp(&obb.axes[j].dot(&a).abs())).unwrap();
        let extent = 2.0 * obb.half_extents[k];
        let start = obb.center + obb.axes[k] * (obb.half_extents[k] * obb.axes[k].dot(&a).signum());
        let len = spec.range_max().min(0.5 * extent);
        return Ok(vec![MotionCue3D {
            kind: CueKind::TranslationSegment,
            points: polyline3(CUE_POINTS, |t| start + a * (t * len)),
            arrow_head: true,
        }]);
    }
    let p = spec.pivot();
    let base = p + a * a.dot(&(obb.center - p));
    let offset = obb.center - base;
    let axial: Vec<f64> = corners.iter().map(|c| a.dot(&(c - base))).collect();
    let (lo, hi) = axial.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &t| (l.min(t), h.max(t)));
    let longest = 2.0 * ext[0];
    let (hinge_base, half, radial, radius) = if offset.norm() > 0.05 * longest {
        let r = corners.iter().map(|c| perpendicular(&(c - base), &a).norm()).fold(0.0, f64::max);
        let inset = 0.45 * (hi - lo);
        let mid = 0.5 * (lo + hi);
        (base + offset * HINGE_INSET + a * mid, inset, offset.normalize(), ARC_RADIUS * r)
    } else {
        // axis through the part: spin about the center, arc on the widest cross-section
        let k = (0..3)
            .min_by(|&i, &j| obb.axes[i].dot(&a).abs().total_cmp(&obb.axes[j].dot(&a).abs()))
            .unwrap();
        let others: Vec<usize> = (0..3).filter(|&i| obb.axes[i].dot(&a).abs() < 0.9 || i == k).collect();
        let w = others.iter().map(|&i| obb.half_extents[i]).fold(0.0, f64::max);
        let dir = others
            .iter()
            .copied()
            .max_by(|&i, &j| obb.half_extents[i].total_cmp(&obb.half_extents[j]))
            .map(|i| perpendicular(&obb.axes[i], &a).normalize())
            .unwrap();
        let half = (0.5 * (hi - lo)).max(0.4 * longest);
        (base, half, dir, ARC_RADIUS * w)
    };
    let sweep = spec.range_max().min(arc_cap_deg.to_radians());
    let center = hinge_base - offset * HINGE_INSET;
    let axis_seg = MotionCue3D {
        kind: CueKind::RotationAxisSegment,
        points: polyline3(CUE_POINTS, |t| hinge_base + a * ((2.0 * t - 1.0) * half)),
        arrow_head: false,
    };
    let unit = Unit::new_normalize(a);
    let arc = MotionCue3D {
        kind: CueKind::RotationArc,
        points: polyline3(CUE_POINTS, |t| center + Rotation3::from_axis_angle(&unit, t * sweep) * (radial * radius)),
        arrow_head: true,
    };
    Ok(vec![axis_seg, arc])
}

// ---------------------------------------------------------------------------
// camera placement

#[derive(Debug, Clone)]
pub struct CameraPick {
    pub camera: Camera,
    pub gbuffer: GBuffer,
    /// Part pixels in the full render over part pixels rendered alone.
    pub visible_fraction: f64,
    /// No candidate met the visibility and acceptance tests; best one returned.
    pub flagged: bool,
    pub tries: usize,
}

fn up_for(dir: &Vec3) -> Vec3 {
    if dir.normalize().cross(&Vec3::z()).norm() < 1e-3 {
        Vec3::y()
    } else {
        Vec3::z()
    }
}

fn part_pixels(gb: &GBuffer, mask: &[bool]) -> usize {
    gb.face_id.iter().filter(|&&f| f != BACKGROUND && mask[f as usize]).count()
}

/// OBB face normal from which most of the part is seen.
pub fn facing_direction(mesh: &Mesh, part: &Part, obb: &OrientedBoundingBox) -> Result<Vec3> {
    let mask = part.mask(mesh.face_count());
    let diag = mesh.diagonal().max(1e-9);
    let dist = 3.0 * diag;
    let vfov = 2.0 * (0.6 * diag / dist).atan();
    let mut best = (0usize, Vec3::z());
    for n in obb.face_normals() {
        let cam = Camera::look_at(obb.center + n * dist, obb.center, up_for(&n), vfov, 64, 64)?;
        let count = part_pixels(&render_gbuffer(mesh, &cam)?, &mask);
        if count > best.0 {
            best = (count, n);
        }
    }
    Ok(best.1)
}

fn sample_cap(n: &Vec3, cap: f64, rng: &mut ChaCha8Rng) -> Vec3 {
    let cos_t = 1.0 - rng.gen::<f64>() * (1.0 - cap.cos());
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let phi = rng.gen::<f64>() * 2.0 * PI;
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let u = n.cross(&helper).normalize();
    let v = n.cross(&u);
    let mut d = n * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t;
    // upper hemisphere wins over the cap
    d.z = d.z.abs();
    d.normalize()
}

/// Distance at which the part's projected bounding square spans `fill` of the image.
fn fill_distance(points: &[Vec3], target: &Vec3, dir: &Vec3, fill: f64, vfov: f64, res: usize) -> Result<f64> {
    let radius = points.iter().map(|p| (p - target).norm()).fold(0.0, f64::max).max(1e-9);
    let mut d = radius / (0.5 * vfov).tan() / fill;
    for _ in 0..12 {
        let cam = Camera::look_at(target + dir * d, *target, up_for(dir), vfov, res, res)?;
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            let Some((x, y, _)) = cam.project(p) else {
                d *= 2.0;
                continue;
            };
            lo = [lo[0].min(x), lo[1].min(y)];
            hi = [hi[0].max(x), hi[1].max(y)];
        }
        let side = (hi[0] - lo[0]).max(hi[1] - lo[1]) / res as f64;
        if !(side > 0.0) {
            break;
        }
        let ratio = side / fill;
        // keep the eye outside the part
        d = (d * ratio).max(1.05 * radius);
        if (ratio - 1.0).abs() < 0.005 {
            break;
        }
    }
    Ok(d)
}

pub fn auto_camera(mesh: &Mesh, part: &Part, seed: u64, cfg: &DatasetConfig) -> Result<CameraPick> {
    auto_camera_with(mesh, part, seed, cfg, |_, _| true)
}

/// Rejection-samples eyes on the cap around the part's facing direction
/// until one sees enough of the part and passes `accept`.
pub fn auto_camera_with(
    mesh: &Mesh,
    part: &Part,
    seed: u64,
    cfg: &DatasetConfig,
    accept: impl Fn(&Camera, &GBuffer) -> bool,
) -> Result<CameraPick> {
    if part.is_empty() {
        return Err(Error::EmptyPart);
    }
    part.check_against(mesh)?;
    let obb = fit_obb(mesh, part)?;
    let normal = facing_direction(mesh, part, &obb)?;
    let mask = part.mask(mesh.face_count());
    let sub = mesh.submesh(part);
    let points: Vec<Vec3> = sub.vertices.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<CameraPick> = None;
    for t in 0..cfg.camera_tries.max(1) {
        let dir = sample_cap(&normal, cfg.cap_deg.to_radians(), &mut rng);
        let fill = rng.gen_range(cfg.fill_min..=cfg.fill_max);
        let d = fill_distance(&points, &obb.center, &dir, fill, cfg.vfov, cfg.resolution)?;
        let camera = Camera::look_at(obb.center + dir * d, obb.center, up_for(&dir), cfg.vfov, cfg.resolution, cfg.resolution)?;
        let gbuffer = render_gbuffer(mesh, &camera)?;
        let alone = render_gbuffer(&sub, &camera)?.foreground_count();
        let visible = if alone == 0 {
            0.0
        } else {
            part_pixels(&gbuffer, &mask) as f64 / alone as f64
        };
        let ok = visible >= cfg.min_visible && accept(&camera, &gbuffer);
        let pick = CameraPick {
            camera,
            gbuffer,
            visible_fraction: visible,
            flagged: !ok,
            tries: t + 1,
        };
        if ok {
            return Ok(pick);
        }
        if best.as_ref().map_or(true, |b| visible > b.visible_fraction) {
            best = Some(pick);
        }
    }
    let mut pick = best.unwrap();
    pick.tries = cfg.camera_tries.max(1);
    log::debug!("no camera passed after {} tries; visible {:.2}", pick.tries, pick.visible_fraction);
    Ok(pick)
}

// ---------------------------------------------------------------------------
// perturbation and curve fitting

/// Jitter plus a single low-frequency drift. Jitter vectors are clamped at
/// `4 * jitter_sigma`, so no point moves more than `4 * jitter_sigma + drift_amp`.
pub fn perturb(points: &[Point2], jitter_sigma: f64, drift_amp: f64, seed: u64) -> Vec<Point2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cum = arc_lengths(points);
    let total = cum.last().copied().unwrap_or(0.0);
    let n = points.len();
    let cycles: f64 = rng.gen_range(0.25..0.6);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let theta: f64 = rng.gen_range(0.0..2.0 * PI);
    let clamp = 4.0 * jitter_sigma;
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = if total > 0.0 {
                cum[i] / total
            } else {
                i as f64 / (n.max(2) - 1) as f64
            };
            let mut j: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            j = [j[0] * jitter_sigma, j[1] * jitter_sigma];
            let jn = (j[0] * j[0] + j[1] * j[1]).sqrt();
            if jn > clamp {
                j = [j[0] * clamp / jn, j[1] * clamp / jn];
            }
            let w = drift_amp * (2.0 * PI * cycles * s + phase).sin();
            [p[0] + j[0] + w * theta.cos(), p[1] + j[1] + w * theta.sin()]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadBezier {
    pub p0: Point2,
    pub p1: Point2,
    pub p2: Point2,
}

impl QuadBezier {
    pub fn eval(&self, t: f64) -> Point2 {
        let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
        [
            a * self.p0[0] + b * self.p1[0] + c * self.p2[0],
            a * self.p0[1] + b * self.p1[1] + c * self.p2[1],
        ]
    }

    /// End tangent direction (unnormalized).
    pub fn end_tangent(&self) -> Point2 {
        let d = [self.p2[0] - self.p1[0], self.p2[1] - self.p1[1]];
        if d[0].abs() + d[1].abs() > 1e-12 {
            d
        } else {
            [self.p2[0] - self.p0[0], self.p2[1] - self.p0[1]]
        }
    }
}

fn d2(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn control_point(pts: &[Point2], ts: &[f64]) -> QuadBezier {
    let (p0, p2) = (pts[0], *pts.last().unwrap());
    let (mut num, mut den) = ([0.0; 2], 0.0);
    for (q, &t) in pts.iter().zip(ts) {
        let (b0, b1, b2) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
        for c in 0..2 {
            num[c] += b1 * (q[c] - b0 * p0[c] - b2 * p2[c]);
        }
        den += b1 * b1;
    }
    let p1 = if den > 1e-15 {
        [num[0] / den, num[1] / den]
    } else {
        [0.5 * (p0[0] + p2[0]), 0.5 * (p0[1] + p2[1])]
    };
    QuadBezier { p0, p1, p2 }
}

fn max_error(bez: &QuadBezier, pts: &[Point2], ts: &[f64]) -> (f64, usize) {
    let (mut err, mut arg) = (0.0, 0);
    for (i, (q, &t)) in pts.iter().zip(ts).enumerate() {
        let e = d2(bez.eval(t), *q);
        if e > err {
            err = e;
            arg = i;
        }
    }
    (err, arg)
}

/// Newton step toward the parameter of the closest curve point.
fn reparameterize(bez: &QuadBezier, q: Point2, t: f64) -> f64 {
    let p = bez.eval(t);
    let d1 = [
        2.0 * ((1.0 - t) * (bez.p1[0] - bez.p0[0]) + t * (bez.p2[0] - bez.p1[0])),
        2.0 * ((1.0 - t) * (bez.p1[1] - bez.p0[1]) + t * (bez.p2[1] - bez.p1[1])),
    ];
    let dd = [
        2.0 * (bez.p2[0] - 2.0 * bez.p1[0] + bez.p0[0]),
        2.0 * (bez.p2[1] - 2.0 * bez.p1[1] + bez.p0[1]),
    ];
    let r = [p[0] - q[0], p[1] - q[1]];
    let num = r[0] * d1[0] + r[1] * d1[1];
    let den = d1[0] * d1[0] + d1[1] * d1[1] + r[0] * dd[0] + r[1] * dd[1];
    if den.abs() < 1e-15 {
        t
    } else {
        (t - num / den).clamp(0.0, 1.0)
    }
}

/// Least-squares quadratic for a span with fixed endpoints. Parameters start
/// at chord length and are refined by closest-point projection; returns the
/// best curve with its (max error, argmax).
fn fit_span(pts: &[Point2]) -> (QuadBezier, f64, usize) {
    let cum = arc_lengths(pts);
    let total = *cum.last().unwrap();
    let mut ts: Vec<f64> = cum
        .iter()
        .enumerate()
        .map(|(i, &c)| if total > 0.0 { c / total } else { i as f64 / (pts.len() - 1) as f64 })
        .collect();
    let bez = control_point(pts, &ts);
    let (err, arg) = max_error(&bez, pts, &ts);
    let mut best = (bez, err, arg);
    for _ in 0..40 {
        if best.1 < 1e-9 {
            break;
        }
        let cur = best.0;
        let n = ts.len();
        for (t, q) in ts[1..n - 1].iter_mut().zip(&pts[1..n - 1]) {
            *t = reparameterize(&cur, *q, *t);
        }
        let bez = control_point(pts, &ts);
        let (err, arg) = max_error(&bez, pts, &ts);
        if err < best.1 - 1e-12 {
            best = (bez, err, arg);
        } else {
            break;
        }
    }
    best
}

/// Split-and-fit: each span gets a least-squares quadratic and is split at
/// its worst point while the error exceeds `tol`. The chain is C0 and every
/// input point lies within `tol` of it.
pub fn fit_bezier(points: &[Point2], tol: f64) -> Result<Vec<QuadBezier>> {
    if points.len() < 2 {
        return Err(Error::InvalidInput("curve fit needs at least two points".into()));
    }
    let mut out = Vec::new();
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        let (bez, err, arg) = fit_span(&points[a..=b]);
        if err <= tol || b - a < 3 {
            out.push((a, bez));
        } else {
            let k = (a + arg).clamp(a + 1, b - 1);
            stack.push((k, b));
            stack.push((a, k));
        }
    }
    out.sort_by_key(|(a, _)| *a);
    Ok(out.into_iter().map(|(_, b)| b).collect())
}

/// Polyline through a Bézier chain, `per_segment` steps per piece.
pub fn sample_chain(chain: &[QuadBezier], per_segment: usize) -> Vec<Point2> {
    let mut out = Vec::new();
    for (i, b) in chain.iter().enumerate() {
        let start = if i == 0 { 0 } else { 1 };
        for s in start..=per_segment {
            out.push(b.eval(s as f64 / per_segment as f64));
        }
    }
    out
}

fn resample(pts: &[Point2], spacing: f64) -> Vec<Point2> {
    let len = polyline_length(pts);
    let n = ((len / spacing).ceil() as usize + 1).max(8);
    (0..n).map(|i| point_at(pts, len * i as f64 / (n - 1) as f64)).collect()
}

// ---------------------------------------------------------------------------
// samples

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStroke {
    pub role: StrokeRole,
    pub curves: Vec<QuadBezier>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: String,
    pub shape_id: String,
    pub joint_index: usize,
    pub seed: u64,
    pub camera: Camera,
    pub camera_flagged: bool,
    pub visible_fraction: f64,
    pub spec: ArticulationSpec,
    pub part: Part,
    pub strokes: Vec<SynthStroke>,
    pub gbuffer: GBuffer,
    /// H x W sketch channel.
    pub sketch: Vec<f32>,
    /// H x W binary movable-part mask.
    pub mask: Vec<f32>,
}

/// Curve steps used when turning Bézier strokes back into polylines.
const STROKE_STEPS: usize = 8;

impl TrainingSample {
    pub fn resolution(&self) -> usize {
        self.gbuffer.width
    }

    /// Polyline strokes, optionally without role tags.
    pub fn stroke_polylines(&self, with_roles: bool) -> Result<Vec<Stroke>> {
        self.strokes
            .iter()
            .map(|s| Stroke::new(sample_chain(&s.curves, STROKE_STEPS), with_roles.then_some(s.role)))
            .collect()
    }

    pub fn meta_json(&self) -> serde_json::Value {
        json!({
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "shape_id": self.shape_id,
            "joint_index": self.joint_index,
            "seed": self.seed,
            "resolution": self.resolution(),
            "camera": self.camera,
            "camera_flagged": self.camera_flagged,
            "visible_fraction": self.visible_fraction,
            "articulation": self.spec,
            "part": self.part,
            "strokes": self.strokes,
            "maps": "maps.bin",
            "sketch_svg": "sketch.svg",
        })
    }

    /// `[5,H,W]` network input (sketch, depth, normal) then the `[1,H,W]` mask.
    pub fn map_blocks(&self) -> Result<Vec<TensorBlock>> {
        let n = self.resolution();
        let input = adapter_input(&self.gbuffer, &self.sketch)?;
        let mask = TensorBlock::new(vec![1, n, n], self.mask.clone())?.with_meta("channels", json!(["mask"]));
        Ok(vec![input, mask])
    }

    pub fn to_svg(&self) -> String {
        let n = self.resolution();
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{n}\" height=\"{n}\" viewBox=\"0 0 {n} {n}\">\n"
        );
        for st in &self.strokes {
            let role = match st.role {
                StrokeRole::Arrow => "arrow",
                StrokeRole::Hinge => "hinge",
            };
            let c0 = st.curves[0].p0;
            let mut d = format!("M {:.3} {:.3}", c0[0], c0[1]);
            for c in &st.curves {
                let _ = write!(d, " Q {:.3} {:.3} {:.3} {:.3}", c.p1[0], c.p1[1], c.p2[0], c.p2[1]);
            }
            let _ = writeln!(
                s,
                "  <path data-role=\"{role}\" d=\"{d}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-linecap=\"round\"/>"
            );
        }
        s.push_str("</svg>\n");
        s
    }

    /// Writes `<dir>/<id>/{sample.json, maps.bin, sketch.svg}`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let d = dir.join(&self.id);
        std::fs::create_dir_all(&d)?;
        let mut meta = serde_json::to_string_pretty(&self.meta_json())?;
        meta.push('\n');
        std::fs::write(d.join("sample.json"), meta)?;
        std::fs::write(d.join("maps.bin"), write_blocks(&self.map_blocks()?))?;
        std::fs::write(d.join("sketch.svg"), self.to_svg())?;
        Ok(())
    }
}

/// Parsed `sample.json` plus its map blocks.
#[derive(Debug, Clone, Deserialize)]
pub struct SampleRecord {
    pub schema_version: u32,
    pub id: String,
    pub shape_id: String,
    pub joint_index: usize,
    pub seed: u64,
    pub resolution: usize,
    pub camera: Camera,
    pub camera_flagged: bool,
    pub visible_fraction: f64,
    pub articulation: ArticulationSpec,
    pub part: Part,
    pub strokes: Vec<SynthStroke>,
    #[serde(skip)]
    pub maps: Vec<TensorBlock>,
}

pub fn read_sample(dir: &Path) -> Result<SampleRecord> {
    let mut rec: SampleRecord = serde_json::from_slice(&std::fs::read(dir.join("sample.json"))?)?;
    if rec.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!("unsupported schema_version {}", rec.schema_version)));
    }
    rec.maps = read_blocks(&std::fs::read(dir.join("maps.bin"))?)?;
    let n = rec.resolution;
    if rec.maps.len() != 2 || rec.maps[0].shape != [5, n, n] || rec.maps[1].shape != [1, n, n] {
        return Err(Error::ShapeMismatch("sample maps do not match the resolution".into()));
    }
    Ok(rec)
}

fn project_cue(cam: &Camera, cue: &MotionCue3D) -> Option<Vec<Point2>> {
    cue.points
        .iter()
        .map(|p| cam.project(p).map(|(x, y, _)| [x, y]))
        .collect()
}

fn inside(pts: &[Point2], res: usize, margin: f64) -> bool {
    pts.iter()
        .all(|p| p[0] >= margin && p[1] >= margin && p[0] <= res as f64 - margin && p[1] <= res as f64 - margin)
}

fn face_under(gb: &GBuffer, p: Point2) -> Option<u32> {
    if p[0] < 0.0 || p[1] < 0.0 {
        return None;
    }
    gb.face_at(p[0] as usize, p[1] as usize)
}

/// Short barbs at the head of a shaft.
fn barbs(shaft: &[QuadBezier], scale: f64, rng: &mut ChaCha8Rng) -> Vec<SynthStroke> {
    let last = shaft.last().unwrap();
    let head = last.p2;
    let t = last.end_tangent();
    let tn = (t[0] * t[0] + t[1] * t[1]).sqrt().max(1e-12);
    let back = [-t[0] / tn, -t[1] / tn];
    let len = (12.0 * scale).min(0.25 * polyline_length(&sample_chain(shaft, STROKE_STEPS)));
    [30f64, -30.0]
        .iter()
        .map(|deg| {
            // pen starts on the head; only the opening angle wobbles
            let wobble: f64 = rng.sample::<f64, _>(StandardNormal).clamp(-2.0, 2.0) * 5.0;
            let (s, c) = (deg + wobble).to_radians().sin_cos();
            let dir = [c * back[0] - s * back[1], s * back[0] + c * back[1]];
            let end = [head[0] + len * dir[0], head[1] + len * dir[1]];
            SynthStroke {
                role: StrokeRole::Arrow,
                curves: vec![QuadBezier {
                    p0: head,
                    p1: [0.5 * (head[0] + end[0]), 0.5 * (head[1] + end[1])],
                    p2: end,
                }],
            }
        })
        .collect()
}

/// One training sample: camera, G-buffer, cue strokes and maps, fully
/// determined by `seed`.
pub fn generate_sample(
    object: &ArticulatedObject,
    joint_index: usize,
    seed: u64,
    cfg: &DatasetConfig,
) -> Result<TrainingSample> {
    let joint = object
        .joints()
        .get(joint_index)
        .ok_or_else(|| Error::InvalidInput(format!("joint {joint_index} does not exist")))?;
    let mesh = &object.mesh;
    let part = &joint.part;
    let spec = joint.articulation;
    let obb = fit_obb(mesh, part)?;
    let cues = motion_cue(&spec, &obb, cfg.arc_cap_deg)?;
    let mask = part.mask(mesh.face_count());
    let scale = cfg.px_scale();
    let res = cfg.resolution;
    let legible = |cam: &Camera, gb: &GBuffer| {
        cues.iter().all(|c| {
            let Some(p) = project_cue(cam, c) else {
                return false;
            };
            let floor = if c.kind == CueKind::RotationAxisSegment {
                cfg.min_hinge_px
            } else {
                cfg.min_cue_px
            };
            let tail_ok = !c.arrow_head || face_under(gb, p[0]).is_some_and(|f| mask[f as usize]);
            polyline_length(&p) >= floor * scale && inside(&p, res, 8.0 * scale) && tail_ok
        })
    };
    let pick = auto_camera_with(mesh, part, seed, cfg, legible)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let mut strokes = Vec::new();
    for cue in &cues {
        let projected = project_cue(&pick.camera, cue)
            .ok_or_else(|| Error::Degenerate("motion cue behind the camera".into()))?;
        let dense = resample(&projected, cfg.stroke_spacing_px * scale);
        let noisy = perturb(&dense, cfg.jitter_sigma * scale, cfg.drift_amp * scale, rng.gen());
        let curves = fit_bezier(&noisy, cfg.bezier_tol * scale)?;
        let role = if cue.arrow_head { StrokeRole::Arrow } else { StrokeRole::Hinge };
        if cue.arrow_head {
            let b = barbs(&curves, scale, &mut rng);
            strokes.push(SynthStroke { role, curves });
            strokes.extend(b);
        } else {
            strokes.push(SynthStroke { role, curves });
        }
    }
    let polylines: Vec<Stroke> = strokes
        .iter()
        .map(|s| Stroke::new(sample_chain(&s.curves, STROKE_STEPS), Some(s.role)))
        .collect::<Result<_>>()?;
    let sketch = rasterize_strokes(&polylines, res, res);
    let mask_px = pick
        .gbuffer
        .face_id
        .iter()
        .map(|&f| if f != BACKGROUND && mask[f as usize] { 1.0 } else { 0.0 })
        .collect();
    let shape_id = object.source_id.clone().unwrap_or_else(|| "object".into());
    Ok(TrainingSample {
        id: format!("{shape_id}-j{joint_index}-s{seed}"),
        shape_id,
        joint_index,
        seed,
        camera: pick.camera,
        camera_flagged: pick.flagged,
        visible_fraction: pick.visible_fraction,
        spec,
        part: part.clone(),
        strokes,
        gbuffer: pick.gbuffer,
        sketch,
        mask: mask_px,
    })
}

/// `n` samples drawn round-robin over the shapes, each with a random joint
/// and a per-sample seed derived from `seed`. Order is deterministic.
pub fn synthesize(shapes: &[ArticulatedObject], n: usize, seed: u64, cfg: &DatasetConfig) -> Result<Vec<TrainingSample>> {
    let usable: Vec<&ArticulatedObject> = shapes.iter().filter(|s| !s.joints().is_empty()).collect();
    if usable.is_empty() {
        return Err(Error::InvalidInput("no shape has a joint".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(k as u64));
            let obj = usable[k % usable.len()];
            let j = rng.gen_range(0..obj.joints().len());
            generate_sample(obj, j, rng.gen::<u32>() as u64, cfg)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// splits

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub val: Vec<T>,
}

/// Splits by shape id so no shape appears in two splits. Shape counts follow
/// the ratios by largest remainder; every split with a positive ratio gets
/// at least one shape.
pub fn split_corpus<T: Clone>(
    items: &[T],
    shape_of: impl Fn(&T) -> &str,
    ratios: [f64; 3],
    seed: u64,
) -> Result<CorpusSplit<T>> {
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput("split ratios must be non-negative and sum to 1".into()));
    }
    let shapes: BTreeSet<&str> = items.iter().map(&shape_of).collect();
    let mut shapes: Vec<&str> = shapes.into_iter().collect();
    let n = shapes.len();
    let needed = ratios.iter().filter(|&&r| r > 0.0).count();
    if n < needed {
        return Err(Error::InvalidInput(format!("{n} shapes cannot fill {needed} splits")));
    }
    let mut counts: Vec<usize> = ratios.iter().map(|r| (r * n as f64).floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = ratios[a] * n as f64 - counts[a] as f64;
        let fb = ratios[b] * n as f64 - counts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            counts[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && counts[i] == 0 {
            let donor = (0..3).max_by_key(|&k| counts[k]).unwrap();
            counts[donor] -= 1;
            counts[i] = 1;
        }
    }
    shapes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut which: BTreeMap<&str, usize> = BTreeMap::new();
    let mut at = 0;
    for (split, &c) in counts.iter().enumerate() {
        for s in &shapes[at..at + c] {
            which.insert(s, split);
        }
        at += c;
    }
    let mut out = CorpusSplit {
        train: Vec::new(),
        test: Vec::new(),
        val: Vec::new(),
    };
    for it in items {
        match which[shape_of(it)] {
            0 => out.train.push(it.clone()),
            1 => out.test.push(it.clone()),
            _ => out.val.push(it.clone()),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// annotations

/// `object.json`: an OBJ reference plus the joint list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub schema_version: u32,
    pub mesh: String,
    #[serde(default)]
    pub source_id: Option<String>,
    #[serde(default)]
    pub category: Option<String>,
    pub joints: Vec<Joint>,
}

/// Writes `<dir>/object.json` and `<dir>/mesh.obj`.
pub fn write_object(dir: &Path, object: &ArticulatedObject) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("mesh.obj"), write_obj(&object.mesh))?;
    let ann = ObjectAnnotation {
        schema_version: SCHEMA_VERSION,
        mesh: "mesh.obj".into(),
        source_id: object.source_id.clone(),
        category: object.category.clone(),
        joints: object.joints().to_vec(),
    };
    let mut s = serde_json::to_string_pretty(&ann)?;
    s.push('\n');
    std::fs::write(dir.join("object.json"), s)?;
    Ok(())
}

/// Reads an `object.json`, resolving the mesh path against its directory.
/// Joints are given in the OBJ's units; mesh and joints come back normalized.
pub fn read_object(path: &Path) -> Result<ArticulatedObject> {
    let ann: ObjectAnnotation = serde_json::from_slice(&std::fs::read(path)?)?;
    if ann.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!("unsupported schema_version {}", ann.schema_version)));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mesh = parse_obj(&std::fs::read(base.join(&ann.mesh))?)?;
    let mut obj = ArticulatedObject::new(mesh);
    for j in ann.joints {
        obj.add_joint(j.part, j.articulation)?;
    }
    obj.source_id = ann.source_id;
    obj.category = ann.category;
    obj.normalized()
}
