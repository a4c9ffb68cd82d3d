//! Strokes, arrow/hinge classification and lifting of 2D cues to 3D.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Vec3;
use crate::render::{Camera, GBuffer};

pub type Point2 = [f64; 2];

/// Slack around the image bounds allowed for stroke points.
pub const BOUNDS_SLACK: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrokeRole {
    Arrow,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    #[serde(default)]
    pub role: Option<StrokeRole>,
    pub points: Vec<Point2>,
}

impl Stroke {
    /// Removes consecutive duplicates; at least two distinct points must remain.
    pub fn new(points: Vec<Point2>, role: Option<StrokeRole>) -> Result<Self> {
        let mut pts: Vec<Point2> = Vec::with_capacity(points.len());
        for p in points {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(Error::InvalidInput("non-finite stroke point".into()));
            }
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        }
        if pts.len() < 2 {
            return Err(Error::InvalidInput("stroke needs at least two distinct points".into()));
        }
        Ok(Self { role, points: pts })
    }

    pub fn check_bounds(&self, width: usize, height: usize) -> Result<()> {
        let ok = self.points.iter().all(|p| {
            p[0] >= -BOUNDS_SLACK
                && p[1] >= -BOUNDS_SLACK
                && p[0] <= width as f64 + BOUNDS_SLACK
                && p[1] <= height as f64 + BOUNDS_SLACK
        });
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("stroke point outside the image".into()))
        }
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.points)
    }
}

/// Wire form posted by clients: `{"strokes":[{"role":..,"points":[[x,y],..]}]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrokeSet {
    pub strokes: Vec<Stroke>,
}

impl StrokeSet {
    /// Re-validates strokes after deserialization.
    pub fn cleaned(self) -> Result<Self> {
        let strokes = self
            .strokes
            .into_iter()
            .map(|s| Stroke::new(s.points, s.role))
            .collect::<Result<_>>()?;
        Ok(Self { strokes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrowGeom {
    pub tail: Point2,
    pub head: Point2,
    pub dir2d: Point2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineGeom {
    pub p0: Point2,
    pub p1: Point2,
}

impl LineGeom {
    pub fn midpoint(&self) -> Point2 {
        [0.5 * (self.p0[0] + self.p1[0]), 0.5 * (self.p0[1] + self.p1[1])]
    }

    pub fn length(&self) -> f64 {
        dist(self.p0, self.p1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SketchIntent {
    Translation { arrow: ArrowGeom },
    Rotation { hinge: LineGeom, arrow: ArrowGeom },
}

impl SketchIntent {
    pub fn arrow(&self) -> &ArrowGeom {
        match self {
            SketchIntent::Translation { arrow } | SketchIntent::Rotation { arrow, .. } => arrow,
        }
    }

    pub fn hinge(&self) -> Option<&LineGeom> {
        match self {
            SketchIntent::Rotation { hinge, .. } => Some(hinge),
            SketchIntent::Translation { .. } => None,
        }
    }

    pub fn is_rotation(&self) -> bool {
        matches!(self, SketchIntent::Rotation { .. })
    }
}

/// Thresholds of the stroke parser.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SketchConfig {
    /// chord / arc above which an arrowless stroke counts as a hinge line.
    pub straightness: f64,
    /// Half-width (px) of the smoothing window used by the straightness test.
    #[serde(default = "default_smooth_px")]
    pub smooth_px: f64,
    /// Fraction of arc length at each end searched for an arrowhead.
    pub head_window: f64,
    /// Turning angle (degrees) counted as a direction reversal.
    pub reversal_deg: f64,
    pub min_reversals: usize,
    pub min_shaft_px: f64,
    /// Simplification tolerance (px) applied before measuring turns.
    pub simplify_px: f64,
    /// Barb strokes are shorter than this fraction of their shaft.
    pub barb_ratio: f64,
    /// Barb endpoints lie within this distance (px) of a shaft endpoint.
    pub barb_attach_px: f64,
    pub tail_snap_px: f64,
    pub hinge_coverage: f64,
}

impl Default for SketchConfig {
    fn default() -> Self {
        Self {
            straightness: 0.94,
            smooth_px: 8.0,
            head_window: 0.25,
            reversal_deg: 90.0,
            min_reversals: 2,
            min_shaft_px: 8.0,
            simplify_px: 2.5,
            barb_ratio: 0.4,
            barb_attach_px: 8.0,
            tail_snap_px: 24.0,
            hinge_coverage: 0.6,
        }
    }
}

fn default_smooth_px() -> f64 {
    8.0
}

fn dist(a: Point2, b: Point2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn polyline_length(pts: &[Point2]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Cumulative arc length at each vertex.
pub fn arc_lengths(pts: &[Point2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in pts.windows(2) {
        acc += dist(w[0], w[1]);
        out.push(acc);
    }
    out
}

/// Point at arc length `s` along the polyline.
pub fn point_at(pts: &[Point2], s: f64) -> Point2 {
    let cum = arc_lengths(pts);
    let total = *cum.last().unwrap();
    let s = s.clamp(0.0, total);
    for i in 1..pts.len() {
        if cum[i] >= s {
            let seg = cum[i] - cum[i - 1];
            let t = if seg > 0.0 { (s - cum[i - 1]) / seg } else { 0.0 };
            return [
                pts[i - 1][0] + t * (pts[i][0] - pts[i - 1][0]),
                pts[i - 1][1] + t * (pts[i][1] - pts[i - 1][1]),
            ];
        }
    }
    *pts.last().unwrap()
}

pub fn point_segment_distance2(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// Ramer-Douglas-Peucker; returns indices of kept vertices.
pub fn simplify(pts: &[Point2], eps: f64) -> Vec<usize> {
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;
    let mut stack = vec![(0usize, pts.len() - 1)];
    while let Some((a, b)) = stack.pop() {
        let mut best = (0.0, 0usize);
        for i in a + 1..b {
            let d = point_segment_distance2(pts[i], pts[a], pts[b]);
            if d > best.0 {
                best = (d, i);
            }
        }
        if best.0 > eps {
            keep[best.1] = true;
            stack.push((a, best.1));
            stack.push((best.1, b));
        }
    }
    (0..pts.len()).filter(|&i| keep[i]).collect()
}

/// Moving average over a `half_px` arc-length window, resampled at 1 px.
/// The window shrinks near the ends so the endpoints stay fixed.
pub fn smooth_stroke(pts: &[Point2], half_px: f64) -> Vec<Point2> {
    let len = polyline_length(pts);
    let n = (len.ceil() as usize + 1).max(2);
    let r: Vec<Point2> = (0..n).map(|i| point_at(pts, len * i as f64 / (n - 1) as f64)).collect();
    let h = half_px.round().max(0.0) as usize;
    (0..n)
        .map(|i| {
            let k = h.min(i).min(n - 1 - i);
            let win = &r[i - k..=i + k];
            let c = win.len() as f64;
            [
                win.iter().map(|p| p[0]).sum::<f64>() / c,
                win.iter().map(|p| p[1]).sum::<f64>() / c,
            ]
        })
        .collect()
}

/// chord / arc length, measured on the smoothed and simplified stroke so
/// that pen jitter does not inflate the arc length.
pub fn straightness(pts: &[Point2], cfg: &SketchConfig) -> f64 {
    let sm = smooth_stroke(pts, cfg.smooth_px);
    let chord = dist(sm[0], *sm.last().unwrap());
    let eps = cfg.simplify_px.max(0.06 * chord);
    let idx = simplify(&sm, eps);
    let simp: Vec<Point2> = idx.iter().map(|&i| sm[i]).collect();
    let arc = polyline_length(&simp);
    if arc > 0.0 {
        chord / arc
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum End {
    Start,
    Finish,
}

/// Turning vertices of the simplified stroke: (index into `pts`, is_reversal).
fn turns(pts: &[Point2], cfg: &SketchConfig) -> Vec<(usize, bool)> {
    let idx = simplify(pts, cfg.simplify_px);
    let cos_thr = cfg.reversal_deg.to_radians().cos();
    let mut out = vec![(idx[0], false)];
    for k in 1..idx.len().saturating_sub(1) {
        let (a, b, c) = (pts[idx[k - 1]], pts[idx[k]], pts[idx[k + 1]]);
        let u = [b[0] - a[0], b[1] - a[1]];
        let v = [c[0] - b[0], c[1] - b[1]];
        let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
        let cos = (u[0] * v[0] + u[1] * v[1]) / (nu * nv);
        out.push((idx[k], cos < cos_thr));
    }
    if idx.len() > 1 {
        out.push((*idx.last().unwrap(), false));
    }
    out
}

/// Arrowhead end of a single stroke drawn with a zigzag head, with the index
/// of the tip. A reversal counts toward an end when the segment leaving it
/// toward that end reaches into the end window.
fn zigzag_head(pts: &[Point2], cfg: &SketchConfig) -> Option<(End, usize)> {
    let t = turns(pts, cfg);
    let cum = arc_lengths(pts);
    let total = *cum.last().unwrap();
    let n = t.len();
    let fin: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&k| t[k].1 && cum[t[k + 1].0] >= (1.0 - cfg.head_window) * total)
        .collect();
    let start: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&k| t[k].1 && cum[t[k - 1].0] <= cfg.head_window * total)
        .collect();
    let has_fin = fin.len() >= cfg.min_reversals;
    let has_start = start.len() >= cfg.min_reversals;
    match (has_start, has_fin) {
        (false, true) => {
            // walk back through the chain of reversals to the shaft tip
            let mut k = fin[0];
            while k > 1 && t[k - 1].1 {
                k -= 1;
            }
            Some((End::Finish, t[k].0))
        }
        (true, false) => {
            let mut k = *start.last().unwrap();
            while k + 2 < n && t[k + 1].1 {
                k += 1;
            }
            Some((End::Start, t[k].0))
        }
        _ => None,
    }
}

/// Orients a shaft so that it runs tail -> head, trimming a zigzag head.
fn oriented_shaft(pts: &[Point2], head_end: Option<(End, usize)>) -> Vec<Point2> {
    match head_end {
        Some((End::Finish, tip)) => pts[..=tip].to_vec(),
        Some((End::Start, tip)) => {
            let mut v = pts[tip..].to_vec();
            v.reverse();
            v
        }
        None => pts.to_vec(),
    }
}

fn arrow_from_shaft(shaft: &[Point2], cfg: &SketchConfig) -> Result<ArrowGeom> {
    let len = polyline_length(shaft);
    if len < cfg.min_shaft_px {
        return Err(Error::ArrowTooShort { length: len });
    }
    let tail = shaft[0];
    let head = *shaft.last().unwrap();
    let from = point_at(shaft, 0.7 * len);
    let mut d = [head[0] - from[0], head[1] - from[1]];
    let mut n = (d[0] * d[0] + d[1] * d[1]).sqrt();
    if n < 1e-9 {
        d = [head[0] - tail[0], head[1] - tail[1]];
        n = (d[0] * d[0] + d[1] * d[1]).sqrt();
    }
    if n < 1e-9 {
        return Err(Error::ArrowTooShort { length: len });
    }
    Ok(ArrowGeom {
        tail,
        head,
        dir2d: [d[0] / n, d[1] / n],
    })
}

/// Parses the strokes of one arrow: the longest stroke is the shaft, any
/// others are barbs marking the head end.
pub fn parse_arrow(strokes: &[&Stroke], cfg: &SketchConfig) -> Result<ArrowGeom> {
    if strokes.is_empty() {
        return Err(Error::AmbiguousSketch {
            reason: "no arrow strokes".into(),
            candidates: vec![],
        });
    }
    let shaft_i = (0..strokes.len())
        .max_by(|&a, &b| strokes[a].length().total_cmp(&strokes[b].length()))
        .unwrap();
    let pts = &strokes[shaft_i].points;
    if polyline_length(pts) < cfg.min_shaft_px {
        return Err(Error::ArrowTooShort {
            length: polyline_length(pts),
        });
    }
    let barbs: Vec<&Stroke> = (0..strokes.len())
        .filter(|&i| i != shaft_i)
        .map(|i| strokes[i])
        .collect();
    let head_end = if barbs.is_empty() {
        zigzag_head(pts, cfg)
    } else {
        let near = |p: Point2| {
            barbs
                .iter()
                .flat_map(|b| b.points.iter())
                .map(|&q| dist(p, q))
                .fold(f64::INFINITY, f64::min)
        };
        let d0 = near(pts[0]);
        let d1 = near(*pts.last().unwrap());
        Some(if d0 < d1 {
            (End::Start, 0)
        } else {
            (End::Finish, pts.len() - 1)
        })
    };
    arrow_from_shaft(&oriented_shaft(pts, head_end), cfg)
}

#[derive(Debug)]
struct StrokeInfo {
    len: f64,
    straight: f64,
    zigzag: Option<(End, usize)>,
}

/// Interprets 1-4 strokes as a translation arrow or a hinge plus arrow.
pub fn classify_strokes(strokes: &[Stroke], cfg: &SketchConfig) -> Result<SketchIntent> {
    if strokes.is_empty() || strokes.len() > 4 {
        return Err(Error::AmbiguousSketch {
            reason: format!("expected 1-4 strokes, got {}", strokes.len()),
            candidates: (0..strokes.len()).collect(),
        });
    }
    let info: Vec<StrokeInfo> = strokes
        .iter()
        .map(|s| StrokeInfo {
            len: s.length(),
            straight: straightness(&s.points, cfg),
            zigzag: zigzag_head(&s.points, cfg),
        })
        .collect();

    let tagged_hinges: Vec<usize> = (0..strokes.len())
        .filter(|&i| strokes[i].role == Some(StrokeRole::Hinge))
        .collect();
    let tagged_arrows: Vec<usize> = (0..strokes.len())
        .filter(|&i| strokes[i].role == Some(StrokeRole::Arrow))
        .collect();
    let untagged: Vec<usize> = (0..strokes.len()).filter(|&i| strokes[i].role.is_none()).collect();

    // barbs: short untagged strokes touching an endpoint of a longer stroke
    let mut barb_of: Vec<Option<usize>> = vec![None; strokes.len()];
    for &b in &untagged {
        let mut best: Option<(usize, f64)> = None;
        for s in 0..strokes.len() {
            if s == b
                || strokes[s].role == Some(StrokeRole::Hinge)
                || info[b].len >= cfg.barb_ratio * info[s].len
            {
                continue;
            }
            let ends_s = [strokes[s].points[0], *strokes[s].points.last().unwrap()];
            let ends_b = [strokes[b].points[0], *strokes[b].points.last().unwrap()];
            let d = ends_s
                .iter()
                .flat_map(|&p| ends_b.iter().map(move |&q| dist(p, q)))
                .fold(f64::INFINITY, f64::min);
            if d <= cfg.barb_attach_px && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((s, d));
            }
        }
        barb_of[b] = best.map(|(s, _)| s);
    }
    // a barb cannot itself carry barbs
    for b in 0..strokes.len() {
        if let Some(s) = barb_of[b] {
            if barb_of[s].is_some() {
                barb_of[b] = None;
            }
        }
    }
    let is_barb = |i: usize| barb_of[i].is_some();
    let barbs_of = |s: usize| -> Vec<usize> { (0..strokes.len()).filter(|&b| barb_of[b] == Some(s)).collect() };

    // arrow groups: (shaft, members)
    let mut arrows: Vec<Vec<usize>> = Vec::new();
    if !tagged_arrows.is_empty() {
        let mut group = tagged_arrows.clone();
        for &s in &tagged_arrows {
            group.extend(barbs_of(s));
        }
        group.sort_unstable();
        group.dedup();
        arrows.push(group);
    }
    let mut hinge_cands: Vec<usize> = tagged_hinges.clone();
    let mut unresolved: Vec<usize> = Vec::new();
    for &i in &untagged {
        if is_barb(i) {
            continue;
        }
        let barbs = barbs_of(i);
        if !barbs.is_empty() || info[i].zigzag.is_some() {
            let mut g = vec![i];
            g.extend(barbs);
            arrows.push(g);
        } else if tagged_hinges.is_empty() && info[i].straight > cfg.straightness {
            hinge_cands.push(i);
        } else {
            unresolved.push(i);
        }
    }
    // barbs attached to tagged strokes belong to their group already
    let ambiguous = |reason: &str, mut c: Vec<usize>| {
        c.sort_unstable();
        c.dedup();
        Err(Error::AmbiguousSketch {
            reason: reason.into(),
            candidates: c,
        })
    };
    if tagged_hinges.len() > 1 {
        return ambiguous("more than one hinge stroke", tagged_hinges);
    }
    if arrows.len() > 1 {
        return ambiguous("more than one arrow", arrows.iter().map(|g| g[0]).collect());
    }
    if arrows.is_empty() {
        // fall back to the stroke without hinge shape, head at its last point
        match (hinge_cands.len(), unresolved.len()) {
            (0, 1) => arrows.push(vec![unresolved.pop().unwrap()]),
            (1, 0) if strokes.len() == 1 => arrows.push(vec![hinge_cands.pop().unwrap()]),
            (1, 1) => arrows.push(vec![unresolved.pop().unwrap()]),
            _ => {
                return ambiguous(
                    "no arrow found",
                    hinge_cands.iter().chain(&unresolved).copied().collect(),
                )
            }
        }
    }
    if !unresolved.is_empty() {
        return ambiguous("unrecognized stroke", unresolved);
    }
    if hinge_cands.len() > 1 {
        return ambiguous("more than one hinge candidate", hinge_cands);
    }
    let group: Vec<&Stroke> = arrows[0].iter().map(|&i| &strokes[i]).collect();
    let arrow = parse_arrow(&group, cfg)?;
    match hinge_cands.first() {
        None => Ok(SketchIntent::Translation { arrow }),
        Some(&h) => {
            let pts = &strokes[h].points;
            let line = LineGeom {
                p0: pts[0],
                p1: *pts.last().unwrap(),
            };
            if line.length() < 1e-9 {
                return ambiguous("degenerate hinge stroke", vec![h]);
            }
            Ok(SketchIntent::Rotation { hinge: line, arrow })
        }
    }
}

/// Arrow lifted into 3D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedArrow {
    /// Surface point under the (possibly snapped) tail, world space.
    pub anchor: Vec3,
    /// Unit motion direction in camera space.
    pub dir3: Vec3,
    pub tail_pixel: (usize, usize),
}

pub fn lift_arrow(arrow: &ArrowGeom, gb: &GBuffer, camera: &Camera, cfg: &SketchConfig) -> Result<LiftedArrow> {
    let (tx, ty) = (arrow.tail[0], arrow.tail[1]);
    let inside = tx >= 0.0 && ty >= 0.0 && (tx as usize) < gb.width && (ty as usize) < gb.height;
    let (pixel, tail) = if inside && gb.is_foreground(tx as usize, ty as usize) {
        ((tx as usize, ty as usize), arrow.tail)
    } else {
        let p = gb
            .nearest_foreground(tx, ty, cfg.tail_snap_px)
            .ok_or(Error::NoSurface {
                x: tx.max(0.0) as usize,
                y: ty.max(0.0) as usize,
            })?;
        (p, [p.0 as f64 + 0.5, p.1 as f64 + 0.5])
    };
    let depth = gb.depth[gb.index(pixel.0, pixel.1)];
    let p_tail = camera.ray_cam(tail[0], tail[1]) * depth;
    let p_head = camera.ray_cam(arrow.head[0], arrow.head[1]) * depth;
    let d = p_head - p_tail;
    if d.norm() < 1e-15 {
        return Err(Error::ArrowTooShort { length: 0.0 });
    }
    Ok(LiftedArrow {
        anchor: camera.unproject(tail[0], tail[1], depth),
        dir3: d.normalize(),
        tail_pixel: pixel,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftedHinge {
    pub pivot: Vec3,
    /// Unit world direction, oriented from `p0` toward `p1`.
    pub axis_hint: Vec3,
    pub coverage: f64,
}

pub fn lift_hinge(hinge: &LineGeom, gb: &GBuffer, camera: &Camera, cfg: &SketchConfig) -> Result<LiftedHinge> {
    let len = hinge.length();
    let n = ((len / 2.0).ceil() as usize + 1).max(2);
    let mut pts: Vec<(f64, Vec3)> = Vec::new();
    for i in 0..n {
        let t = i as f64 / (n - 1) as f64;
        let x = hinge.p0[0] + t * (hinge.p1[0] - hinge.p0[0]);
        let y = hinge.p0[1] + t * (hinge.p1[1] - hinge.p0[1]);
        if x < 0.0 || y < 0.0 || !gb.is_foreground(x as usize, y as usize) {
            continue;
        }
        let depth = gb.depth[gb.index(x as usize, y as usize)];
        pts.push((t, camera.unproject(x, y, depth)));
    }
    let coverage = pts.len() as f64 / n as f64;
    if coverage < cfg.hinge_coverage {
        return Err(Error::InsufficientCoverage { coverage });
    }
    let pivot = pts
        .iter()
        .min_by(|a, b| (a.0 - 0.5).abs().total_cmp(&(b.0 - 0.5).abs()))
        .unwrap()
        .1;
    let mean = pts.iter().map(|p| p.1).sum::<Vec3>() / pts.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for (_, p) in &pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let (axes, vals) = crate::meshops::pca_axes(&cov);
    let mut axis = if vals[0] > 1e-20 {
        axes[0]
    } else {
        // all samples coincide: fall back to the image direction at pivot depth
        let depth = -camera.world_to_camera(&pivot).z;
        let a = camera.unproject(hinge.p0[0], hinge.p0[1], depth);
        let b = camera.unproject(hinge.p1[0], hinge.p1[1], depth);
        (b - a).normalize()
    };
    let first = pts.first().unwrap().1;
    let last = pts.last().unwrap().1;
    let along = if (last - first).norm() > 1e-12 {
        last - first
    } else {
        let depth = -camera.world_to_camera(&pivot).z;
        camera.unproject(hinge.p1[0], hinge.p1[1], depth) - camera.unproject(hinge.p0[0], hinge.p0[1], depth)
    };
    if axis.dot(&along) < 0.0 {
        axis = -axis;
    }
    Ok(LiftedHinge {
        pivot,
        axis_hint: axis,
        coverage,
    })
}

/// Rasterizes strokes into an H x W channel: 2 px wide core with a 1 px
/// linear anti-aliasing falloff.
pub fn rasterize_strokes(strokes: &[Stroke], width: usize, height: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; width * height];
    for s in strokes {
        for w in s.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let x0 = (a[0].min(b[0]) - 2.0).floor().max(0.0) as usize;
            let y0 = (a[1].min(b[1]) - 2.0).floor().max(0.0) as usize;
            let x1 = ((a[0].max(b[0]) + 2.0).ceil().max(0.0) as usize).min(width);
            let y1 = ((a[1].max(b[1]) + 2.0).ceil().max(0.0) as usize).min(height);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = point_segment_distance2([x as f64 + 0.5, y as f64 + 0.5], a, b);
                    let v = (1.5 - d).clamp(0.0, 1.0) as f32;
                    let i = y * width + x;
                    if v > out[i] {
                        out[i] = v;
                    }
                }
            }
        }
    }
    out
}
