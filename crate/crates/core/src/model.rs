//! Shared domain types: meshes, parts, articulation parameters, and the
//! rigid motion they describe.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Default opening angle for bounded rotations (100 degrees).
pub const DEFAULT_ROTATION_RANGE: f64 = 100.0 * PI / 180.0;

/// Fraction of the part's longest OBB edge used as default translation travel.
pub const DEFAULT_TRANSLATION_FACTOR: f64 = 0.9;

const AXIS_TOL: f64 = 1e-9;
const RANGE_TOL: f64 = 1e-12;

/// Affine map from original object units to normalized units:
/// `normalized = (original - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl Normalization {
    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn to_normalized(&self, p: &Vec3) -> Vec3 {
        (p - self.center()) * self.scale
    }

    pub fn to_original(&self, p: &Vec3) -> Vec3 {
        p / self.scale + self.center()
    }

    /// Composition `outer ∘ self`.
    pub fn then(&self, outer: &Normalization) -> Normalization {
        // outer((p - c1) s1) = ((p - c1) s1 - c2) s2 = (p - (c1 + c2 / s1)) s1 s2
        let c = self.center() + outer.center() / self.scale;
        Normalization {
            center: c.into(),
            scale: self.scale * outer.scale,
        }
    }
}

/// Triangle mesh in normalized object units.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub uvs: Option<Vec<[f64; 2]>>,
    /// Map from the units the mesh was loaded in to the current units.
    pub normalization: Normalization,
}

impl Mesh {
    /// Builds a mesh, validating indices and dropping zero-area faces.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (i, f) in faces.iter().enumerate() {
            if f.iter().any(|&v| v as usize >= n) {
                return Err(Error::InvalidInput(format!(
                    "face {i} references a vertex out of range"
                )));
            }
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("non-finite vertex".into()));
        }
        let mut mesh = Self {
            vertices,
            faces,
            uvs: None,
            normalization: Normalization::default(),
        };
        mesh.drop_degenerate_faces();
        if mesh.faces.is_empty() {
            return Err(Error::EmptyGeometry);
        }
        Ok(mesh)
    }

    /// Builds a mesh without removing degenerate faces; indices are still checked.
    pub fn from_raw(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if faces.iter().any(|f| f.iter().any(|&v| v as usize >= n)) {
            return Err(Error::InvalidInput("face index out of range".into()));
        }
        Ok(Self {
            vertices,
            faces,
            uvs: None,
            normalization: Normalization::default(),
        })
    }

    fn drop_degenerate_faces(&mut self) {
        let diag = self.diagonal().max(1e-300);
        let min_area = 1e-14 * diag * diag;
        let verts = &self.vertices;
        self.faces.retain(|f| {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return false;
            }
            let [a, b, c] = [f[0], f[1], f[2]].map(|i| verts[i as usize]);
            0.5 * (b - a).cross(&(c - a)).norm() > min_area
        });
    }

    /// Returns a copy scaled so that the bounding-box diagonal is 1 and the
    /// bounding box is centered on the origin.
    pub fn normalized(&self) -> Result<Self> {
        let (lo, hi) = self.bbox();
        let diag = (hi - lo).norm();
        if !(diag > 0.0) {
            return Err(Error::Degenerate("zero-size bounding box".into()));
        }
        let norm = Normalization {
            center: ((lo + hi) * 0.5).into(),
            scale: 1.0 / diag,
        };
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = norm.to_normalized(v);
        }
        out.normalization = self.normalization.then(&norm);
        Ok(out)
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        self.faces[f].map(|i| self.vertices[i as usize])
    }

    /// Unnormalized face normal (length = 2 * area).
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let n = self.face_cross(f);
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::zeros()
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.triangle(f);
        (a + b + c) / 3.0
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Bounding box of the vertices actually referenced by faces.
    pub fn face_bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for f in &self.faces {
            for &i in f {
                let v = &self.vertices[i as usize];
                lo = lo.inf(v);
                hi = hi.sup(v);
            }
        }
        (lo, hi)
    }

    pub fn diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Compact mesh containing only the faces of `part`, in part order.
    pub fn submesh(&self, part: &Part) -> Mesh {
        self.submesh_faces(part.face_ids.iter().map(|&f| f as usize))
    }

    pub fn submesh_faces(&self, faces: impl IntoIterator<Item = usize>) -> Mesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut out_faces = Vec::new();
        for f in faces {
            let tri = self.faces[f].map(|v| {
                let slot = &mut remap[v as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.vertices[v as usize]);
                }
                *slot
            });
            out_faces.push(tri);
        }
        Mesh {
            vertices,
            faces: out_faces,
            uvs: None,
            normalization: self.normalization,
        }
    }

    /// Face-soup mesh where faces owned by a transform get their own
    /// transformed vertex copies. `transform_of` returns `None` for static faces.
    pub fn posed<F>(&self, mut transform_of: F) -> Mesh
    where
        F: FnMut(usize, &Vec3) -> Option<Vec3>,
    {
        let mut vertices = Vec::with_capacity(self.faces.len() * 3);
        let mut faces = Vec::with_capacity(self.faces.len());
        for (fi, f) in self.faces.iter().enumerate() {
            let base = vertices.len() as u32;
            for &v in f {
                let p = self.vertices[v as usize];
                vertices.push(transform_of(fi, &p).unwrap_or(p));
            }
            faces.push([base, base + 1, base + 2]);
        }
        Mesh {
            vertices,
            faces,
            uvs: None,
            normalization: self.normalization,
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Concatenates meshes (vertex indices offset).
    pub fn merge(meshes: &[&Mesh]) -> Mesh {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        for m in meshes {
            let off = vertices.len() as u32;
            vertices.extend_from_slice(&m.vertices);
            faces.extend(m.faces.iter().map(|f| f.map(|v| v + off)));
        }
        Mesh {
            vertices,
            faces,
            uvs: None,
            normalization: meshes.first().map(|m| m.normalization).unwrap_or_default(),
        }
    }
}

/// Sorted, unique, non-empty set of face indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PartWire", into = "PartWire")]
pub struct Part {
    face_ids: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct PartWire {
    face_ids: Vec<u32>,
}

impl TryFrom<PartWire> for Part {
    type Error = Error;
    fn try_from(w: PartWire) -> Result<Self> {
        Part::from_ids(w.face_ids)
    }
}

impl From<Part> for PartWire {
    fn from(p: Part) -> Self {
        PartWire {
            face_ids: p.face_ids,
        }
    }
}

impl Part {
    /// Sorts and dedups the ids; fails on an empty set.
    pub fn from_ids(mut ids: Vec<u32>) -> Result<Self> {
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::EmptyPart);
        }
        Ok(Self { face_ids: ids })
    }

    /// Like [`Part::from_ids`] but also checks the ids against a mesh.
    pub fn new(ids: Vec<u32>, mesh: &Mesh) -> Result<Self> {
        let part = Self::from_ids(ids)?;
        part.check_against(mesh)?;
        Ok(part)
    }

    pub fn check_against(&self, mesh: &Mesh) -> Result<()> {
        match self.face_ids.last() {
            Some(&last) if (last as usize) < mesh.face_count() => Ok(()),
            _ => Err(Error::InvalidInput(format!(
                "part references face outside mesh ({} faces)",
                mesh.face_count()
            ))),
        }
    }

    pub fn face_ids(&self) -> &[u32] {
        &self.face_ids
    }

    pub fn len(&self) -> usize {
        self.face_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.face_ids.is_empty()
    }

    pub fn contains(&self, face: u32) -> bool {
        self.face_ids.binary_search(&face).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.face_ids.iter().map(|&f| f as usize)
    }

    pub fn is_disjoint(&self, other: &Part) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.face_ids.len() && j < other.face_ids.len() {
            match self.face_ids[i].cmp(&other.face_ids[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }

    pub fn union(&self, other: &[u32]) -> Result<Part> {
        let mut ids = self.face_ids.clone();
        ids.extend_from_slice(other);
        Part::from_ids(ids)
    }

    pub fn difference(&self, other: &[u32]) -> Result<Part> {
        let mut remove = other.to_vec();
        remove.sort_unstable();
        let ids = self
            .face_ids
            .iter()
            .copied()
            .filter(|f| remove.binary_search(f).is_err())
            .collect();
        Part::from_ids(ids)
    }

    /// Membership mask over `n` faces.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &f in &self.face_ids {
            if (f as usize) < n {
                m[f as usize] = true;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionType {
    Rotation { continuous: bool },
    Translation,
}

impl MotionType {
    pub fn is_rotation(&self) -> bool {
        matches!(self, MotionType::Rotation { .. })
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self, MotionType::Rotation { continuous: true })
    }
}

/// Joint parameters: motion type, pivot, unit axis and range `[0, range_max]`.
///
/// For translations the pivot is unused and kept at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecWire", into = "SpecWire")]
pub struct ArticulationSpec {
    motion_type: MotionType,
    pivot: Vec3,
    axis: Vec3,
    range_max: f64,
}

#[derive(Serialize, Deserialize)]
struct SpecWire {
    motion_type: String,
    continuous: bool,
    pivot: [f64; 3],
    axis: [f64; 3],
    range_max: f64,
}

impl TryFrom<SpecWire> for ArticulationSpec {
    type Error = Error;
    fn try_from(w: SpecWire) -> Result<Self> {
        let mt = match w.motion_type.as_str() {
            "rotation" => MotionType::Rotation {
                continuous: w.continuous,
            },
            "translation" => MotionType::Translation,
            other => {
                return Err(Error::InvalidInput(format!("unknown motion_type {other:?}")))
            }
        };
        ArticulationSpec::new(mt, w.pivot.into(), w.axis.into(), w.range_max)
    }
}

impl From<ArticulationSpec> for SpecWire {
    fn from(s: ArticulationSpec) -> Self {
        SpecWire {
            motion_type: if s.motion_type.is_rotation() {
                "rotation".into()
            } else {
                "translation".into()
            },
            continuous: s.motion_type.is_continuous(),
            pivot: s.pivot.into(),
            axis: s.axis.into(),
            range_max: s.range_max,
        }
    }
}

impl ArticulationSpec {
    /// Validates the invariants. Axes within 1e-6 of unit length are
    /// renormalized; anything further off is rejected.
    pub fn new(motion_type: MotionType, pivot: Vec3, axis: Vec3, range_max: f64) -> Result<Self> {
        let len = axis.norm();
        if !len.is_finite() || (len - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("axis is not unit length ({len})")));
        }
        let axis = if (len - 1.0).abs() > AXIS_TOL { axis / len } else { axis };
        if !(range_max >= 0.0) || !range_max.is_finite() {
            return Err(Error::InvalidInput(format!("invalid range_max {range_max}")));
        }
        if motion_type.is_continuous() && (range_max - 2.0 * PI).abs() > 1e-9 {
            return Err(Error::InvalidInput(
                "continuous rotation must span 2π".into(),
            ));
        }
        if !pivot.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("non-finite pivot".into()));
        }
        let pivot = if motion_type.is_rotation() { pivot } else { Vec3::zeros() };
        Ok(Self {
            motion_type,
            pivot,
            axis,
            range_max,
        })
    }

    pub fn rotation(pivot: Vec3, axis: Vec3, range_max: f64) -> Result<Self> {
        Self::new(MotionType::Rotation { continuous: false }, pivot, axis, range_max)
    }

    pub fn continuous(pivot: Vec3, axis: Vec3) -> Result<Self> {
        Self::new(MotionType::Rotation { continuous: true }, pivot, axis, 2.0 * PI)
    }

    pub fn translation(axis: Vec3, range_max: f64) -> Result<Self> {
        Self::new(MotionType::Translation, Vec3::zeros(), axis, range_max)
    }

    pub fn motion_type(&self) -> MotionType {
        self.motion_type
    }

    pub fn pivot(&self) -> Vec3 {
        self.pivot
    }

    pub fn axis(&self) -> Vec3 {
        self.axis
    }

    pub fn range_max(&self) -> f64 {
        self.range_max
    }

    pub fn with_range(&self, range_max: f64) -> Result<Self> {
        Self::new(self.motion_type, self.pivot, self.axis, range_max)
    }

    pub fn with_axis(&self, axis: Vec3) -> Result<Self> {
        Self::new(self.motion_type, self.pivot, axis, self.range_max)
    }

    /// Applies the motion at `value`; fails outside `[0, range_max]`.
    pub fn apply(&self, value: f64, point: &Vec3) -> Result<Vec3> {
        let tol = RANGE_TOL * self.range_max.max(1.0);
        if !(value >= -tol && value <= self.range_max + tol) {
            return Err(Error::RangeViolation {
                value,
                max: self.range_max,
            });
        }
        Ok(self.apply_unchecked(value, point))
    }

    /// Applies the motion for any signed value (negative values give the
    /// inverse motion).
    pub fn apply_unchecked(&self, value: f64, point: &Vec3) -> Vec3 {
        if value == 0.0 {
            return *point;
        }
        match self.motion_type {
            MotionType::Translation => point + self.axis * value,
            MotionType::Rotation { .. } => {
                let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(self.axis), value);
                rot * (point - self.pivot) + self.pivot
            }
        }
    }

    /// Same motion as a closure-friendly rigid transform (rotation matrix, translation).
    pub fn rigid(&self, value: f64) -> (Rotation3<f64>, Vec3) {
        match self.motion_type {
            MotionType::Translation => (Rotation3::identity(), self.axis * value),
            MotionType::Rotation { .. } => {
                let rot = Rotation3::from_axis_angle(&Unit::new_unchecked(self.axis), value);
                let t = self.pivot - rot * self.pivot;
                (rot, t)
            }
        }
    }

    /// Spec expressed in the original units of `norm` (inverse normalization).
    pub fn to_original(&self, norm: &Normalization) -> Result<Self> {
        let range = match self.motion_type {
            MotionType::Translation => self.range_max / norm.scale,
            MotionType::Rotation { .. } => self.range_max,
        };
        Self::new(self.motion_type, norm.to_original(&self.pivot), self.axis, range)
    }

    /// Spec expressed in the normalized units of `norm`.
    pub fn to_normalized(&self, norm: &Normalization) -> Result<Self> {
        let range = match self.motion_type {
            MotionType::Translation => self.range_max * norm.scale,
            MotionType::Rotation { .. } => self.range_max,
        };
        Self::new(self.motion_type, norm.to_normalized(&self.pivot), self.axis, range)
    }
}

/// Rotation/translation of `point` by `value` along `spec`.
pub fn apply_articulation(spec: &ArticulationSpec, value: f64, point: &Vec3) -> Result<Vec3> {
    spec.apply(value, point)
}

/// Default range shown after prediction; `part_extent` is the longest OBB edge.
pub fn default_range(motion_type: MotionType, part_extent: f64) -> Result<f64> {
    if !(part_extent > 0.0) {
        return Err(Error::InvalidInput(format!(
            "part extent must be positive, got {part_extent}"
        )));
    }
    Ok(match motion_type {
        MotionType::Rotation { continuous: false } => DEFAULT_ROTATION_RANGE,
        MotionType::Rotation { continuous: true } => 2.0 * PI,
        MotionType::Translation => DEFAULT_TRANSLATION_FACTOR * part_extent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub part: Part,
    pub articulation: ArticulationSpec,
}

/// A mesh with its authored joints.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedObject {
    pub mesh: Mesh,
    joints: Vec<Joint>,
    pub source_id: Option<String>,
    pub category: Option<String>,
}

impl ArticulatedObject {
    pub fn new(mesh: Mesh) -> Self {
        Self {
            mesh,
            joints: Vec::new(),
            source_id: None,
            category: None,
        }
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    /// Adds a joint whose part must not overlap any existing joint part.
    pub fn add_joint(&mut self, part: Part, articulation: ArticulationSpec) -> Result<usize> {
        part.check_against(&self.mesh)?;
        if let Some(j) = self.joints.iter().position(|j| !j.part.is_disjoint(&part)) {
            return Err(Error::InvalidInput(format!("part overlaps joint {j}")));
        }
        self.joints.push(Joint { part, articulation });
        Ok(self.joints.len() - 1)
    }

    pub fn remove_joint(&mut self, index: usize) -> Result<Joint> {
        if index >= self.joints.len() {
            return Err(Error::InvalidInput(format!("no joint {index}")));
        }
        Ok(self.joints.remove(index))
    }

    /// Replaces a joint, keeping the disjointness invariant.
    pub fn replace_joint(&mut self, index: usize, joint: Joint) -> Result<()> {
        if index >= self.joints.len() {
            return Err(Error::InvalidInput(format!("no joint {index}")));
        }
        joint.part.check_against(&self.mesh)?;
        for (i, other) in self.joints.iter().enumerate() {
            if i != index && !other.part.is_disjoint(&joint.part) {
                return Err(Error::InvalidInput(format!("part overlaps joint {i}")));
            }
        }
        self.joints[index] = joint;
        Ok(())
    }

    /// Per-face owning joint index.
    pub fn face_owner(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.mesh.face_count()];
        for (j, joint) in self.joints.iter().enumerate() {
            for f in joint.part.iter() {
                owner[f] = Some(j);
            }
        }
        owner
    }

    /// Faces not owned by any joint.
    pub fn base_faces(&self) -> Vec<usize> {
        self.face_owner()
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_none())
            .map(|(f, _)| f)
            .collect()
    }

    /// Mesh with every joint set to the given value (one per joint).
    pub fn posed(&self, values: &[f64]) -> Result<Mesh> {
        if values.len() != self.joints.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} joint values, got {}",
                self.joints.len(),
                values.len()
            )));
        }
        for (j, v) in self.joints.iter().zip(values) {
            j.articulation.apply(*v, &Vec3::zeros())?;
        }
        let owner = self.face_owner();
        Ok(self.mesh.posed(|f, p| {
            owner[f].map(|j| self.joints[j].articulation.apply_unchecked(values[j], p))
        }))
    }

    /// Normalizes the mesh to unit diagonal and maps joints along with it.
    pub fn normalized(&self) -> Result<Self> {
        let mesh = self.mesh.normalized()?;
        let (lo, hi) = self.mesh.bbox();
        let step = Normalization {
            center: ((lo + hi) * 0.5).into(),
            scale: 1.0 / (hi - lo).norm(),
        };
        let joints = self
            .joints
            .iter()
            .map(|j| {
                Ok(Joint {
                    part: j.part.clone(),
                    articulation: j.articulation.to_normalized(&step)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            mesh,
            joints,
            source_id: self.source_id.clone(),
            category: self.category.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn quarter_turn_about_origin() {
        let s = ArticulationSpec::rotation(v(0., 0., 0.), v(0., 0., 1.), PI).unwrap();
        let p = apply_articulation(&s, PI / 2.0, &v(1., 0., 0.)).unwrap();
        assert_abs_diff_eq!(p, v(0., 1., 0.), epsilon = 1e-12);
    }

    #[test]
    fn half_turn_about_offset_pivot() {
        let s = ArticulationSpec::rotation(v(1., 0., 0.), v(0., 0., 1.), PI).unwrap();
        let p = apply_articulation(&s, PI, &v(2., 0., 0.)).unwrap();
        assert_abs_diff_eq!(p, v(0., 0., 0.), epsilon = 1e-12);
    }

    #[test]
    fn translation_moves_along_axis() {
        let s = ArticulationSpec::translation(v(0., 1., 0.), 1.0).unwrap();
        let p = apply_articulation(&s, 0.3, &v(0.1, 0.2, 0.3)).unwrap();
        assert_abs_diff_eq!(p, v(0.1, 0.5, 0.3), epsilon = 1e-12);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let s = ArticulationSpec::translation(v(1., 0., 0.), 0.5).unwrap();
        assert!(matches!(
            s.apply(0.6, &Vec3::zeros()),
            Err(Error::RangeViolation { .. })
        ));
        assert!(s.apply(-0.1, &Vec3::zeros()).is_err());
    }

    #[test]
    fn default_ranges() {
        let door = default_range(MotionType::Rotation { continuous: false }, 0.4).unwrap();
        assert_abs_diff_eq!(door, 1.745, epsilon = 5e-4);
        let wheel = default_range(MotionType::Rotation { continuous: true }, 3.0).unwrap();
        assert_eq!(wheel, 2.0 * PI);
        let drawer = default_range(MotionType::Translation, 0.5).unwrap();
        assert_abs_diff_eq!(drawer, 0.45, epsilon = 1e-12);
        assert!(default_range(MotionType::Translation, 0.0).is_err());
    }

    #[test]
    fn spec_json_schema() {
        let s = ArticulationSpec::rotation(v(0.1, 0.2, 0.3), v(0., 0., 1.), 1.5).unwrap();
        let j = serde_json::to_value(s).unwrap();
        assert_eq!(j["motion_type"], "rotation");
        assert_eq!(j["continuous"], false);
        assert_eq!(j["pivot"], serde_json::json!([0.1, 0.2, 0.3]));
        let back: ArticulationSpec = serde_json::from_value(j).unwrap();
        assert_eq!(back, s);
        let bad = serde_json::json!({"motion_type":"rotation","continuous":true,
            "pivot":[0,0,0],"axis":[0,0,1],"range_max":1.0});
        assert!(serde_json::from_value::<ArticulationSpec>(bad).is_err());
    }

    #[test]
    fn part_wire_sorts_and_rejects_empty() {
        let p: Part = serde_json::from_str(r#"{"face_ids":[3,1,3,2]}"#).unwrap();
        assert_eq!(p.face_ids(), &[1, 2, 3]);
        assert!(serde_json::from_str::<Part>(r#"{"face_ids":[]}"#).is_err());
    }

    #[test]
    fn joints_must_be_disjoint() {
        let mesh = Mesh::new(
            vec![v(0., 0., 0.), v(1., 0., 0.), v(0., 1., 0.), v(1., 1., 0.)],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let mut obj = ArticulatedObject::new(mesh);
        let s = ArticulationSpec::translation(v(0., 0., 1.), 0.1).unwrap();
        obj.add_joint(Part::from_ids(vec![0]).unwrap(), s).unwrap();
        assert!(obj.add_joint(Part::from_ids(vec![0, 1]).unwrap(), s).is_err());
        assert!(obj.add_joint(Part::from_ids(vec![5]).unwrap(), s).is_err());
        obj.add_joint(Part::from_ids(vec![1]).unwrap(), s).unwrap();
    }

    #[test]
    fn normalization_gives_unit_diagonal() {
        let mesh = Mesh::new(
            vec![v(2., 2., 2.), v(5., 2., 2.), v(2., 6., 2.), v(2., 2., 14.)],
            vec![[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]],
        )
        .unwrap()
        .normalized()
        .unwrap();
        assert_abs_diff_eq!(mesh.diagonal(), 1.0, epsilon = 1e-12);
        let back = mesh.normalization.to_original(&mesh.vertices[3]);
        assert_abs_diff_eq!(back, v(2., 2., 14.), epsilon = 1e-12);
    }

    fn unit_axis() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-zero", |(x, y, z)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z)| v(x, y, z).normalize())
    }

    fn point() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| v(x, y, z))
    }

    proptest! {
        #[test]
        fn rest_pose_is_identity(axis in unit_axis(), pivot in point(), p in point(), rot in any::<bool>()) {
            let s = if rot {
                ArticulationSpec::rotation(pivot, axis, 1.0).unwrap()
            } else {
                ArticulationSpec::translation(axis, 1.0).unwrap()
            };
            prop_assert_eq!(s.apply(0.0, &p).unwrap(), p);
        }

        #[test]
        fn rotation_is_rigid_and_invertible(axis in unit_axis(), pivot in point(),
                                            a in point(), b in point(), t in 0.0..PI) {
            let s = ArticulationSpec::rotation(pivot, axis, PI).unwrap();
            let ra = s.apply(t, &a).unwrap();
            let rb = s.apply(t, &b).unwrap();
            prop_assert!(((ra - rb).norm() - (a - b).norm()).abs() < 1e-9);
            let back = s.apply_unchecked(-t, &ra);
            prop_assert!((back - a).norm() < 1e-9);
        }
    }
}
