//! Surface and joint metrics: Chamfer distance, F-score, axis and pivot
//! errors, and multi-state evaluation of articulated objects.

use std::fmt::Write as _;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArticulatedObject, ArticulationSpec, Mesh, MotionType, Vec3};

pub const DEFAULT_FSCORE_TAU: f64 = 0.05;
pub const DEFAULT_STATES: usize = 6;
pub const DEFAULT_POINTS: usize = 100_000;
pub const CHAMFER_CONVENTION: &str =
    "0.5 * (mean_a min_b |a-b| + mean_b min_a |b-a|), unsquared Euclidean distances";

/// Points drawn uniformly by area from a mesh surface.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub points: Vec<Vec3>,
    pub seed: u64,
}

impl PointSample {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self { points, seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn sample_surface(mesh: &Mesh, n: usize, seed: u64) -> Result<PointSample> {
    if n == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let areas: Vec<f64> = (0..mesh.face_count()).map(|f| mesh.face_area(f)).collect();
    let dist = WeightedIndex::new(&areas).map_err(|_| Error::EmptyGeometry)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let [a, b, c] = mesh.triangle(dist.sample(&mut rng));
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect();
    Ok(PointSample { points, seed })
}

/// Uniform bucket grid answering exact nearest-neighbor queries.
pub struct NearestGrid<'a> {
    points: &'a [Vec3],
    lo: Vec3,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
}

impl<'a> NearestGrid<'a> {
    pub fn new(points: &'a [Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let longest = extent.max().max(1e-12);
        let per_axis = (points.len() as f64).cbrt().ceil().clamp(1.0, 128.0);
        let cell = longest / per_axis;
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).min(256));
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let mut grid = Self {
            points,
            lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let c = grid.cell_of(p);
            buckets[grid.flat(c)].push(i as u32);
        }
        grid.buckets = buckets;
        Ok(grid)
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let f = ((p[a] - self.lo[a]) / self.cell).floor();
            f.clamp(0.0, (self.dims[a] - 1) as f64) as usize
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    /// Index and distance of the nearest point; ties resolve to the lowest index.
    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let c = self.cell_of(p);
        let mut best = (usize::MAX, f64::INFINITY);
        let max_r = *self.dims.iter().max().unwrap();
        for r in 0..=max_r {
            let lo: [i64; 3] = [0, 1, 2].map(|a| c[a] as i64 - r as i64);
            let hi: [i64; 3] = [0, 1, 2].map(|a| c[a] as i64 + r as i64);
            for k in lo[2].max(0)..=hi[2].min(self.dims[2] as i64 - 1) {
                for j in lo[1].max(0)..=hi[1].min(self.dims[1] as i64 - 1) {
                    for i in lo[0].max(0)..=hi[0].min(self.dims[0] as i64 - 1) {
                        let on_ring = [i, j, k].iter().zip(lo.iter().zip(&hi)).any(|(&x, (&l, &h))| x == l || x == h);
                        if !on_ring {
                            continue;
                        }
                        for &q in &self.buckets[self.flat([i as usize, j as usize, k as usize])] {
                            let d = (self.points[q as usize] - p).norm();
                            if d < best.1 || (d == best.1 && (q as usize) < best.0) {
                                best = (q as usize, d);
                            }
                        }
                    }
                }
            }
            // distance from p to any cell outside the searched block
            let mut bound = f64::INFINITY;
            for a in 0..3 {
                if lo[a] > 0 {
                    let face = self.lo[a] + lo[a] as f64 * self.cell;
                    bound = bound.min((p[a] - face).max(0.0));
                }
                if hi[a] < self.dims[a] as i64 - 1 {
                    let face = self.lo[a] + (hi[a] + 1) as f64 * self.cell;
                    bound = bound.min((face - p[a]).max(0.0));
                }
            }
            if best.1 < bound || bound == f64::INFINITY {
                break;
            }
        }
        best
    }
}

fn nearest_distances(from: &[Vec3], to: &[Vec3]) -> Result<Vec<f64>> {
    let grid = NearestGrid::new(to)?;
    Ok(from.par_iter().map(|p| grid.nearest(p).1).collect())
}

fn check_nonempty(a: &PointSample, b: &PointSample) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    Ok(())
}

/// Two-sided average of mean nearest-neighbor distances.
pub fn chamfer(a: &PointSample, b: &PointSample) -> Result<f64> {
    check_nonempty(a, b)?;
    let ab = nearest_distances(&a.points, &b.points)?;
    let ba = nearest_distances(&b.points, &a.points)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(0.5 * (mean(&ab) + mean(&ba)))
}

/// Harmonic mean of the fractions of each cloud within `tau` of the other.
pub fn fscore(a: &PointSample, b: &PointSample, tau: f64) -> Result<f64> {
    check_nonempty(a, b)?;
    let ab = nearest_distances(&a.points, &b.points)?;
    let ba = nearest_distances(&b.points, &a.points)?;
    let frac = |v: &[f64]| v.iter().filter(|&&d| d <= tau).count() as f64 / v.len() as f64;
    let (p, r) = (frac(&ab), frac(&ba));
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

fn unit_or_warn(v: &Vec3, what: &str) -> Vec3 {
    let n = v.norm();
    if (n - 1.0).abs() > 1e-9 {
        log::warn!("{what} has norm {n}; normalizing");
    }
    v / n
}

/// Sign-invariant angle between two axis lines, radians in `[0, π/2]`.
pub fn joint_axis_error(pred: &Vec3, gt: &Vec3) -> f64 {
    let (p, g) = (unit_or_warn(pred, "predicted axis"), unit_or_warn(gt, "ground-truth axis"));
    p.dot(&g).abs().clamp(0.0, 1.0).acos()
}

/// Minimum distance between the lines `(pivot, axis)`.
pub fn line_distance(p1: &Vec3, a1: &Vec3, p2: &Vec3, a2: &Vec3) -> f64 {
    let (a1, a2) = (a1.normalize(), a2.normalize());
    let d = p2 - p1;
    let n = a1.cross(&a2);
    let nn = n.norm();
    if nn < 1e-12 {
        d.cross(&a1).norm()
    } else {
        d.dot(&n).abs() / nn
    }
}

/// Line-to-line pivot error; `None` unless both joints rotate.
pub fn joint_pivot_error(pred: &ArticulationSpec, gt: &ArticulationSpec) -> Option<f64> {
    match (pred.motion_type(), gt.motion_type()) {
        (MotionType::Rotation { .. }, MotionType::Rotation { .. }) => {
            Some(line_distance(&pred.pivot(), &pred.axis(), &gt.pivot(), &gt.axis()))
        }
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_states: usize,
    pub n_points: usize,
    pub tau: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_states: DEFAULT_STATES,
            n_points: DEFAULT_POINTS,
            tau: DEFAULT_FSCORE_TAU,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMetrics {
    pub index: usize,
    /// Fraction of every joint's range.
    pub fraction: f64,
    pub chamfer: f64,
    pub fscore: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMetrics {
    pub pred_index: usize,
    pub gt_index: usize,
    pub axis_error: f64,
    /// Absent for translations.
    pub pivot_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub chamfer: String,
    pub fscore_tau: f64,
    pub axis_error: String,
    pub pivot_error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub conventions: Conventions,
    pub seed: u64,
    pub n_points: usize,
    pub states: Vec<StateMetrics>,
    pub mean_chamfer: f64,
    pub mean_fscore: f64,
    pub joints: Vec<JointMetrics>,
}

impl EvalReport {
    /// One row per state, then one row per joint.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,index,fraction,chamfer,fscore,axis_error,pivot_error\n");
        for st in &self.states {
            let _ = writeln!(s, "state,{},{},{},{},,", st.index, st.fraction, st.chamfer, st.fscore);
        }
        let _ = writeln!(s, "mean,,,{},{},,", self.mean_chamfer, self.mean_fscore);
        for j in &self.joints {
            let pivot = j.pivot_error.map(|p| p.to_string()).unwrap_or_default();
            let _ = writeln!(s, "joint,{},,,,{},{}", j.pred_index, j.axis_error, pivot);
        }
        s
    }
}

/// Samples `n_states` joint states uniformly over each joint's range
/// (`[0]` when `n_states == 1`), articulates both objects, and averages
/// Chamfer distance and F-score. `correspondence[i]` names the ground-truth
/// joint matched to predicted joint `i`; identity when omitted.
pub fn evaluate_states(
    pred: &ArticulatedObject,
    gt: &ArticulatedObject,
    correspondence: Option<&[usize]>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    if config.n_states == 0 {
        return Err(Error::InvalidInput("need at least one state".into()));
    }
    let identity: Vec<usize> = (0..pred.joints().len()).collect();
    let corr = match correspondence {
        Some(c) => c,
        None if pred.joints().len() == gt.joints().len() => &identity[..],
        None => {
            return Err(Error::InvalidInput(format!(
                "{} predicted vs {} ground-truth joints and no correspondence",
                pred.joints().len(),
                gt.joints().len()
            )))
        }
    };
    if corr.len() != pred.joints().len() || corr.iter().any(|&g| g >= gt.joints().len()) {
        return Err(Error::InvalidInput("correspondence does not match the joint lists".into()));
    }
    let states: Vec<StateMetrics> = (0..config.n_states)
        .into_par_iter()
        .map(|s| {
            let fraction = if config.n_states == 1 {
                0.0
            } else {
                s as f64 / (config.n_states - 1) as f64
            };
            let values = |o: &ArticulatedObject| -> Vec<f64> {
                o.joints().iter().map(|j| fraction * j.articulation.range_max()).collect()
            };
            let pm = pred.posed(&values(pred))?;
            let gm = gt.posed(&values(gt))?;
            let seed = config.seed.wrapping_add(2 * s as u64);
            let a = sample_surface(&pm, config.n_points, seed)?;
            let b = sample_surface(&gm, config.n_points, seed + 1)?;
            Ok(StateMetrics {
                index: s,
                fraction,
                chamfer: chamfer(&a, &b)?,
                fscore: fscore(&a, &b, config.tau)?,
            })
        })
        .collect::<Result<_>>()?;
    let joints = corr
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let (p, t) = (&pred.joints()[i].articulation, &gt.joints()[g].articulation);
            JointMetrics {
                pred_index: i,
                gt_index: g,
                axis_error: joint_axis_error(&p.axis(), &t.axis()),
                pivot_error: joint_pivot_error(p, t),
            }
        })
        .collect();
    let k = states.len() as f64;
    Ok(EvalReport {
        schema_version: 1,
        conventions: Conventions {
            chamfer: CHAMFER_CONVENTION.into(),
            fscore_tau: config.tau,
            axis_error: "arccos(|a_pred · a_gt|), radians".into(),
            pivot_error: "minimum distance between the hinge lines".into(),
        },
        seed: config.seed,
        n_points: config.n_points,
        mean_chamfer: states.iter().map(|s| s.chamfer).sum::<f64>() / k,
        mean_fscore: states.iter().map(|s| s.fscore).sum::<f64>() / k,
        states,
        joints,
    })
}
