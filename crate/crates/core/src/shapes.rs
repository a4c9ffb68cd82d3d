//! Procedural demo shapes with known articulation ground truth.
//!
//! All shapes are z-up with their front facing -y. Moving parts that rotate
//! share exactly one edge column (the hinge) with the body; sliding and
//! spinning parts float free of it.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::meshops::weld_vertices;
use crate::model::{ArticulatedObject, ArticulationSpec, Mesh, Part, Vec3};

/// Quad `a b c d` (counter-clockwise seen from the front side).
pub fn quad(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> Mesh {
    Mesh::from_raw(vec![a, b, c, d], vec![[0, 1, 2], [0, 2, 3]]).expect("static indices")
}

/// Planar grid `origin + s*u + t*v` over the given break values of `s` and `t`.
/// The normal is `u x v`.
pub fn grid_breaks(origin: Vec3, u: Vec3, us: &[f64], v: Vec3, vs: &[f64]) -> Mesh {
    let mut vertices = Vec::with_capacity(us.len() * vs.len());
    for &t in vs {
        for &s in us {
            vertices.push(origin + u * s + v * t);
        }
    }
    let nu = us.len() as u32;
    let mut faces = Vec::new();
    for j in 0..vs.len() as u32 - 1 {
        for i in 0..nu - 1 {
            let a = j * nu + i;
            let b = a + 1;
            let c = a + nu + 1;
            let d = a + nu;
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Mesh::from_raw(vertices, faces).expect("grid indices")
}

/// Unit sheet `[0,1]^2` in the z=0 plane with `nx * ny` quads, normal +z.
/// Cell `(i, j)` owns faces `2 * (j * nx + i)` and `+1`.
pub fn grid_quads(nx: usize, ny: usize) -> Mesh {
    grid_breaks(
        Vec3::zeros(),
        Vec3::x(),
        &linspace(0.0, 1.0, nx + 1),
        Vec3::y(),
        &linspace(0.0, 1.0, ny + 1),
    )
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                b
            } else {
                a + (b - a) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Sides of an axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

const ALL_SIDES: [Side; 6] = [
    Side::XMinus,
    Side::XPlus,
    Side::YMinus,
    Side::YPlus,
    Side::ZMinus,
    Side::ZPlus,
];

/// Axis-aligned box built from grids over explicit break values along each
/// axis (first/last breaks are the box bounds). Outward normals; `skip`
/// leaves sides open. Vertices are welded.
pub fn box_breaks(xs: &[f64], ys: &[f64], zs: &[f64], skip: &[Side]) -> Mesh {
    let (x0, x1) = (xs[0], *xs.last().unwrap());
    let (y0, y1) = (ys[0], *ys.last().unwrap());
    let (z0, z1) = (zs[0], *zs.last().unwrap());
    let rel = |b: &[f64], o: f64| b.iter().map(|v| v - o).collect::<Vec<_>>();
    let mut parts = Vec::new();
    for side in ALL_SIDES {
        if skip.contains(&side) {
            continue;
        }
        let m = match side {
            // u x v must point outward
            Side::XMinus => grid_breaks(Vec3::new(x0, y0, z0), Vec3::z(), &rel(zs, z0), Vec3::y(), &rel(ys, y0)),
            Side::XPlus => grid_breaks(Vec3::new(x1, y0, z0), Vec3::y(), &rel(ys, y0), Vec3::z(), &rel(zs, z0)),
            Side::YMinus => grid_breaks(Vec3::new(x0, y0, z0), Vec3::x(), &rel(xs, x0), Vec3::z(), &rel(zs, z0)),
            Side::YPlus => grid_breaks(Vec3::new(x0, y1, z0), Vec3::z(), &rel(zs, z0), Vec3::x(), &rel(xs, x0)),
            Side::ZMinus => grid_breaks(Vec3::new(x0, y0, z0), Vec3::y(), &rel(ys, y0), Vec3::x(), &rel(xs, x0)),
            Side::ZPlus => grid_breaks(Vec3::new(x0, y0, z1), Vec3::x(), &rel(xs, x0), Vec3::y(), &rel(ys, y0)),
        };
        parts.push(m);
    }
    let refs: Vec<&Mesh> = parts.iter().collect();
    weld_vertices(&Mesh::merge(&refs), 1e-9)
}

/// Closed axis-aligned box with one quad per side.
pub fn box_mesh(center: Vec3, half: Vec3) -> Mesh {
    let lo = center - half;
    let hi = center + half;
    box_breaks(&[lo.x, hi.x], &[lo.y, hi.y], &[lo.z, hi.z], &[])
}

/// Open cylinder wall around z, centered at the origin.
pub fn cylinder_side(segments: usize, radius: f64, height: f64) -> Mesh {
    let mut vertices = Vec::new();
    for i in 0..segments {
        let a = 2.0 * PI * i as f64 / segments as f64;
        let (s, c) = a.sin_cos();
        vertices.push(Vec3::new(radius * c, radius * s, -0.5 * height));
        vertices.push(Vec3::new(radius * c, radius * s, 0.5 * height));
    }
    let mut faces = Vec::new();
    for i in 0..segments as u32 {
        let j = (i + 1) % segments as u32;
        let (a, b, c, d) = (2 * i, 2 * j, 2 * j + 1, 2 * i + 1);
        faces.push([a, b, c]);
        faces.push([a, c, d]);
    }
    Mesh::from_raw(vertices, faces).expect("cylinder indices")
}

/// Closed capped cylinder with the given center, unit axis and length.
pub fn cylinder(center: Vec3, axis: Vec3, radius: f64, length: f64, segments: usize) -> Mesh {
    let axis = axis.normalize();
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = axis.cross(&helper).normalize();
    let e2 = axis.cross(&e1);
    let half = 0.5 * length;
    let mut vertices = vec![center - axis * half, center + axis * half];
    for i in 0..segments {
        let a = 2.0 * PI * i as f64 / segments as f64;
        let r = (e1 * a.cos() + e2 * a.sin()) * radius;
        vertices.push(center + r - axis * half);
        vertices.push(center + r + axis * half);
    }
    let mut faces = Vec::new();
    let n = segments as u32;
    for i in 0..n {
        let j = (i + 1) % n;
        let (lo_i, hi_i, lo_j, hi_j) = (2 + 2 * i, 3 + 2 * i, 2 + 2 * j, 3 + 2 * j);
        // side quad, outward
        faces.push([lo_i, lo_j, hi_j]);
        faces.push([lo_i, hi_j, hi_i]);
        // caps
        faces.push([0, lo_j, lo_i]);
        faces.push([1, hi_i, hi_j]);
    }
    Mesh::from_raw(vertices, faces).expect("cylinder indices")
}

/// Closed UV sphere with `nu` longitude and `nv` latitude bands.
pub fn uv_sphere(center: Vec3, radius: f64, nu: usize, nv: usize) -> Mesh {
    let mut vertices = vec![center + Vec3::z() * radius, center - Vec3::z() * radius];
    for j in 1..nv {
        let theta = PI * j as f64 / nv as f64;
        for i in 0..nu {
            let phi = 2.0 * PI * i as f64 / nu as f64;
            let d = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            vertices.push(center + d * radius);
        }
    }
    let ring = |j: usize, i: usize| (2 + (j - 1) * nu + i % nu) as u32;
    let mut faces = Vec::new();
    for i in 0..nu {
        faces.push([0, ring(1, i), ring(1, i + 1)]);
        faces.push([1, ring(nv - 1, i + 1), ring(nv - 1, i)]);
    }
    for j in 1..nv - 1 {
        for i in 0..nu {
            let (a, b, c, d) = (ring(j, i), ring(j + 1, i), ring(j + 1, i + 1), ring(j, i + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    Mesh::from_raw(vertices, faces).expect("sphere indices")
}

/// Accumulates labeled components and welds them into one mesh.
#[derive(Default)]
pub struct ShapeBuilder {
    components: Vec<(Mesh, u32)>,
}

impl ShapeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mesh: Mesh, label: u32) -> &mut Self {
        self.components.push((mesh, label));
        self
    }

    /// Welds coincident vertices across components; returns the mesh and
    /// per-face labels.
    pub fn build(&self) -> (Mesh, Vec<u32>) {
        let refs: Vec<&Mesh> = self.components.iter().map(|(m, _)| m).collect();
        let merged = Mesh::merge(&refs);
        let labels: Vec<u32> = self
            .components
            .iter()
            .flat_map(|(m, l)| std::iter::repeat(*l).take(m.faces.len()))
            .collect();
        let welded = weld_vertices(&merged, 1e-9);
        assert_eq!(welded.faces.len(), labels.len(), "welding removed faces");
        (welded, labels)
    }
}

/// A procedural articulated object with per-face part labels
/// (0 = body, `j + 1` = joint `j`).
#[derive(Debug, Clone)]
pub struct ProceduralShape {
    pub name: String,
    pub object: ArticulatedObject,
    pub labels: Vec<u32>,
}

impl ProceduralShape {
    fn assemble(name: &str, builder: &ShapeBuilder, joints: Vec<ArticulationSpec>) -> Result<Self> {
        let (mesh, labels) = builder.build();
        let mut object = ArticulatedObject::new(Mesh::new(mesh.vertices.clone(), mesh.faces.clone())?);
        assert_eq!(object.mesh.face_count(), labels.len());
        for (j, spec) in joints.into_iter().enumerate() {
            let ids: Vec<u32> = labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == j as u32 + 1)
                .map(|(f, _)| f as u32)
                .collect();
            object.add_joint(Part::from_ids(ids)?, spec)?;
        }
        object.source_id = Some(name.to_string());
        object.category = Some(name.split('-').next().unwrap_or(name).to_string());
        let object = object.normalized()?;
        Ok(Self {
            name: name.to_string(),
            object,
            labels,
        })
    }

    pub fn joint_part(&self, j: usize) -> &Part {
        &self.object.joints()[j].part
    }

    pub fn joint_spec(&self, j: usize) -> &ArticulationSpec {
        &self.object.joints()[j].articulation
    }
}

fn with_breaks(lo: f64, hi: f64, n: usize, extra: &[f64]) -> Vec<f64> {
    let mut v = linspace(lo, hi, n + 1);
    v.extend(extra.iter().copied().filter(|&x| x > lo && x < hi));
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    v
}

fn sub(breaks: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    breaks
        .iter()
        .copied()
        .filter(|&x| x >= lo - 1e-12 && x <= hi + 1e-12)
        .collect()
}

/// Cabinet with `n` stacked drawers sliding out along -y.
pub fn cabinet_drawers(n: usize, seed: u64) -> Result<ProceduralShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(0.8..1.2);
    let d = rng.gen_range(0.5..0.7);
    let h = rng.gen_range(0.35..0.45) * (n as f64 + 1.0);
    let m = 0.05;
    let gap = 0.006;
    let mut b = ShapeBuilder::new();
    b.add(
        box_breaks(&linspace(0.0, w, 4), &linspace(0.0, d, 3), &linspace(0.0, h, 4), &[Side::YMinus]),
        0,
    );
    // front frame strips
    let slot_h = (h - m * (n as f64 + 1.0)) / n as f64;
    let front = |x0: f64, x1: f64, z0: f64, z1: f64| {
        grid_breaks(Vec3::new(x0, 0.0, z0), Vec3::x(), &[0.0, x1 - x0], Vec3::z(), &[0.0, z1 - z0])
    };
    b.add(front(0.0, m, 0.0, h), 0);
    b.add(front(w - m, w, 0.0, h), 0);
    let mut joints = Vec::new();
    for k in 0..=n {
        let z0 = k as f64 * (slot_h + m);
        b.add(front(m, w - m, z0, z0 + m), 0);
    }
    for k in 0..n {
        let z0 = m + k as f64 * (slot_h + m);
        let depth = d - 0.05;
        b.add(
            box_breaks(
                &linspace(m + gap, w - m - gap, 4),
                &linspace(0.0, depth, 3),
                &linspace(z0 + gap, z0 + slot_h - gap, 3),
                &[],
            ),
            k as u32 + 1,
        );
        joints.push(ArticulationSpec::translation(-Vec3::y(), 0.8 * depth)?);
    }
    ProceduralShape::assemble(&format!("cabinet-drawers{n}-{seed}"), &b, joints)
}

/// Cabinet with a single door hinged on a vertical front edge.
pub fn cabinet_door(hinge_left: bool, seed: u64) -> Result<ProceduralShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(0.6..1.0);
    let d = rng.gen_range(0.4..0.6);
    let h = rng.gen_range(0.8..1.4);
    let t = 0.03;
    let inset = 0.02 * h;
    let gap = 0.01 * w;
    let zs = with_breaks(0.0, h, 5, &[inset, h - inset]);
    let mut b = ShapeBuilder::new();
    b.add(box_breaks(&linspace(0.0, w, 4), &linspace(0.0, d, 3), &zs, &[Side::YMinus]), 0);
    let door_zs = sub(&zs, inset, h - inset);
    let (x0, x1, hinge_x) = if hinge_left {
        (0.0, w - gap, 0.0)
    } else {
        (gap, w, w)
    };
    b.add(box_breaks(&linspace(x0, x1, 4), &[-t, 0.0], &door_zs, &[]), 1);
    // door swings outward (toward -y)
    let axis = if hinge_left { -Vec3::z() } else { Vec3::z() };
    let spec = ArticulationSpec::rotation(Vec3::new(hinge_x, 0.0, 0.0), axis, 100f64.to_radians())?;
    let name = format!("cabinet-door{}-{seed}", if hinge_left { "L" } else { "R" });
    ProceduralShape::assemble(&name, &b, vec![spec])
}

/// Two-door fridge; both doors hinge on the left front edge.
pub fn fridge(seed: u64) -> Result<ProceduralShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(0.6..0.8);
    let d = rng.gen_range(0.6..0.75);
    let h = rng.gen_range(1.6..1.9);
    let split = h * rng.gen_range(0.55..0.65);
    let t = 0.04;
    let gap = 0.01;
    let inset = 0.02;
    let zs = with_breaks(0.0, h, 6, &[inset, split, split + gap, h - inset]);
    let mut b = ShapeBuilder::new();
    b.add(box_breaks(&linspace(0.0, w, 4), &linspace(0.0, d, 3), &zs, &[Side::YMinus]), 0);
    let xs = linspace(0.0, w - gap, 4);
    b.add(box_breaks(&xs, &[-t, 0.0], &sub(&zs, inset, split), &[]), 1);
    b.add(box_breaks(&xs, &[-t, 0.0], &sub(&zs, split + gap, h - inset), &[]), 2);
    let pivot = Vec3::zeros();
    let joints = vec![
        ArticulationSpec::rotation(pivot, -Vec3::z(), 100f64.to_radians())?,
        ArticulationSpec::rotation(pivot, -Vec3::z(), 100f64.to_radians())?,
    ];
    ProceduralShape::assemble(&format!("fridge-{seed}"), &b, joints)
}

/// Chest whose lid hinges on the back top edge.
pub fn chest_lid(seed: u64) -> Result<ProceduralShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(0.8..1.2);
    let d = rng.gen_range(0.5..0.7);
    let h = rng.gen_range(0.4..0.6);
    let t = 0.04;
    let inset = 0.02 * w;
    let gap = 0.02 * d;
    let xs = with_breaks(0.0, w, 4, &[inset, w - inset]);
    let mut b = ShapeBuilder::new();
    b.add(box_breaks(&xs, &linspace(0.0, d, 3), &linspace(0.0, h, 3), &[Side::ZPlus]), 0);
    b.add(box_breaks(&sub(&xs, inset, w - inset), &[gap, d], &[h, h + t], &[]), 1);
    let spec = ArticulationSpec::rotation(Vec3::new(0.0, d, h), -Vec3::x(), 100f64.to_radians())?;
    ProceduralShape::assemble(&format!("chest-lid-{seed}"), &b, vec![spec])
}

/// Car-like body with two wheels on its -y side spinning about y.
pub fn wheeled_body(seed: u64) -> Result<ProceduralShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = rng.gen_range(1.4..1.8);
    let w = rng.gen_range(0.6..0.8);
    let hb = rng.gen_range(0.35..0.5);
    let r = rng.gen_range(0.16..0.22);
    let tw = 0.5 * r;
    let zb = r;
    let mut b = ShapeBuilder::new();
    b.add(
        box_breaks(&linspace(0.0, l, 5), &linspace(0.0, w, 3), &linspace(zb, zb + hb, 3), &[]),
        0,
    );
    let mut joints = Vec::new();
    for (k, x) in [0.25 * l, 0.75 * l].into_iter().enumerate() {
        let c = Vec3::new(x, -0.5 * tw - 0.01, zb);
        b.add(cylinder(c, Vec3::y(), r, tw, 32), k as u32 + 1);
        joints.push(ArticulationSpec::continuous(c, Vec3::y())?);
    }
    ProceduralShape::assemble(&format!("wheeled-{seed}"), &b, joints)
}

/// Appliance panel with a spinning knob on its front.
pub fn knob_panel(seed: u64) -> Result<ProceduralShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(0.6..0.9);
    let d = rng.gen_range(0.3..0.5);
    let h = rng.gen_range(0.4..0.6);
    let r = rng.gen_range(0.08..0.12);
    let len = 0.6 * r;
    let mut b = ShapeBuilder::new();
    b.add(box_breaks(&linspace(0.0, w, 4), &linspace(0.0, d, 3), &linspace(0.0, h, 4), &[]), 0);
    let c = Vec3::new(0.5 * w, -0.5 * len - 0.005, 0.5 * h);
    b.add(cylinder(c, -Vec3::y(), r, len, 32), 1);
    let spec = ArticulationSpec::continuous(c, -Vec3::y())?;
    ProceduralShape::assemble(&format!("knob-panel-{seed}"), &b, vec![spec])
}

/// Microwave-like box: hinged door on the left, control knob on the right strip.
pub fn microwave(seed: u64) -> Result<ProceduralShape> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(0.8..1.0);
    let d = rng.gen_range(0.5..0.6);
    let h = rng.gen_range(0.45..0.55);
    let strip = 0.25 * w;
    let t = 0.03;
    let inset = 0.03 * h;
    let zs = with_breaks(0.0, h, 3, &[inset, h - inset]);
    let mut b = ShapeBuilder::new();
    b.add(box_breaks(&linspace(0.0, w, 4), &linspace(0.0, d, 3), &zs, &[Side::YMinus]), 0);
    // control strip closes the right part of the front
    b.add(
        grid_breaks(Vec3::new(w - strip, 0.0, 0.0), Vec3::x(), &[0.0, strip], Vec3::z(), &[0.0, h]),
        0,
    );
    b.add(box_breaks(&linspace(0.0, w - strip - 0.01, 4), &[-t, 0.0], &sub(&zs, inset, h - inset), &[]), 1);
    let r = 0.06;
    let c = Vec3::new(w - 0.5 * strip, -0.02, 0.5 * h);
    b.add(cylinder(c, -Vec3::y(), r, 0.03, 24), 2);
    let joints = vec![
        ArticulationSpec::rotation(Vec3::zeros(), -Vec3::z(), 100f64.to_radians())?,
        ArticulationSpec::continuous(c, -Vec3::y())?,
    ];
    ProceduralShape::assemble(&format!("microwave-{seed}"), &b, joints)
}

/// The ten-shape demo corpus used by tests and the default dataset driver.
pub fn demo_corpus(seed: u64) -> Result<Vec<ProceduralShape>> {
    Ok(vec![
        cabinet_drawers(1, seed)?,
        cabinet_drawers(2, seed + 1)?,
        cabinet_drawers(3, seed + 2)?,
        cabinet_door(true, seed + 3)?,
        cabinet_door(false, seed + 4)?,
        fridge(seed + 5)?,
        chest_lid(seed + 6)?,
        wheeled_body(seed + 7)?,
        knob_panel(seed + 8)?,
        microwave(seed + 9)?,
    ])
}
