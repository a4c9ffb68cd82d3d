//! Mesh I/O, adjacency, oriented bounding boxes, part boundaries and
//! representative normals.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Mesh, Part, Vec3};

/// Parses an OBJ file (positions, optional texture coordinates, polygonal
/// faces fan-triangulated) and normalizes it to unit diagonal.
pub fn load_obj(bytes: &[u8]) -> Result<Mesh> {
    parse_obj(bytes)?.normalized()
}

/// Parses an OBJ without normalizing.
pub fn parse_obj(bytes: &[u8]) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("not UTF-8: {e}"),
    })?;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut texcoords: Vec<[f64; 2]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut face_uv: Vec<[Option<u32>; 3]> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let tag = tokens.next().unwrap_or("");
        let err = |msg: String| Error::Parse { line, msg };
        match tag {
            "v" => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad coordinate {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(err("vertex needs 3 coordinates".into()));
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(err("non-finite coordinate".into()));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            "vt" => {
                let uv: Vec<f64> = tokens
                    .take(2)
                    .map(|t| t.parse::<f64>().map_err(|e| err(format!("bad uv {t:?}: {e}"))))
                    .collect::<Result<_>>()?;
                texcoords.push([uv.first().copied().unwrap_or(0.0), uv.get(1).copied().unwrap_or(0.0)]);
            }
            "f" => {
                let mut poly: Vec<(u32, Option<u32>)> = Vec::new();
                for tok in tokens {
                    let mut parts = tok.split('/');
                    let vi = resolve_index(parts.next().unwrap_or(""), vertices.len())
                        .ok_or_else(|| err(format!("vertex index {tok:?} out of range")))?;
                    let ti = match parts.next() {
                        Some(s) if !s.is_empty() => Some(
                            resolve_index(s, texcoords.len())
                                .ok_or_else(|| err(format!("texture index {tok:?} out of range")))?,
                        ),
                        _ => None,
                    };
                    poly.push((vi, ti));
                }
                if poly.len() < 3 {
                    return Err(err("face needs at least 3 vertices".into()));
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0].0, poly[k].0, poly[k + 1].0]);
                    face_uv.push([poly[0].1, poly[k].1, poly[k + 1].1]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || faces.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    let mut mesh = Mesh::new(vertices, faces)?;
    // per-vertex uv when every referenced corner agrees
    if !texcoords.is_empty() {
        let mut uvs = vec![[0.0; 2]; mesh.vertices.len()];
        for (f, corners) in face_uv.iter().enumerate().take(mesh.faces.len()) {
            for (k, c) in corners.iter().enumerate() {
                if let Some(t) = c {
                    uvs[mesh.faces[f][k] as usize] = texcoords[*t as usize];
                }
            }
        }
        mesh.uvs = Some(uvs);
    }
    Ok(mesh)
}

fn resolve_index(tok: &str, count: usize) -> Option<u32> {
    let i: i64 = tok.parse().ok()?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        count as i64 + i
    } else {
        return None;
    };
    (idx >= 0 && (idx as usize) < count).then_some(idx as u32)
}

/// Formats a float with at most 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    let s = if rounded.abs() < 1e-4 || rounded.abs() >= 1e15 {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// ASCII OBJ with 9 significant digits per coordinate.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", fmt_sig9(v.x), fmt_sig9(v.y), fmt_sig9(v.z));
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Merges vertices closer than `tol` (grid hashing, first occurrence wins).
pub fn weld_vertices(mesh: &Mesh, tol: f64) -> Mesh {
    let cell = tol.max(1e-12) * 2.0;
    let key = |p: &Vec3| {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
    let mut remap = Vec::with_capacity(mesh.vertices.len());
    let mut vertices: Vec<Vec3> = Vec::new();
    for p in &mesh.vertices {
        let (kx, ky, kz) = key(p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in list {
                            if (vertices[i as usize] - p).norm() <= tol {
                                found = Some(i);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        let idx = found.unwrap_or_else(|| {
            let i = vertices.len() as u32;
            vertices.push(*p);
            grid.entry((kx, ky, kz)).or_default().push(i);
            i
        });
        remap.push(idx);
    }
    let faces = mesh
        .faces
        .iter()
        .map(|f| f.map(|v| remap[v as usize]))
        .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
        .collect();
    Mesh {
        vertices,
        faces,
        uvs: None,
        normalization: mesh.normalization,
    }
}

/// Edge-based face adjacency on exact vertex indices.
#[derive(Debug, Clone)]
pub struct Adjacency {
    /// Undirected edge `(min, max)` -> incident faces (ascending).
    pub edges: HashMap<(u32, u32), Vec<u32>>,
    /// Edge-adjacent faces per face, ascending, without duplicates.
    pub neighbors: Vec<Vec<u32>>,
}

pub fn edge_key(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Adjacency {
    pub fn new(mesh: &Mesh) -> Self {
        let mut edges: HashMap<(u32, u32), Vec<u32>> = HashMap::with_capacity(mesh.faces.len() * 3 / 2);
        for (fi, f) in mesh.faces.iter().enumerate() {
            for k in 0..3 {
                edges
                    .entry(edge_key(f[k], f[(k + 1) % 3]))
                    .or_default()
                    .push(fi as u32);
            }
        }
        let mut neighbors = vec![Vec::new(); mesh.faces.len()];
        for faces in edges.values() {
            for &a in faces {
                for &b in faces {
                    if a != b {
                        neighbors[a as usize].push(b);
                    }
                }
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Self { edges, neighbors }
    }

    /// Connected components of a face subset (edge connectivity), each sorted.
    pub fn components(&self, faces: &[u32]) -> Vec<Vec<u32>> {
        let n = self.neighbors.len();
        let mut member = vec![false; n];
        for &f in faces {
            member[f as usize] = true;
        }
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for &start in faces {
            if seen[start as usize] {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![start];
            seen[start as usize] = true;
            while let Some(f) = stack.pop() {
                comp.push(f);
                for &g in &self.neighbors[f as usize] {
                    if member[g as usize] && !seen[g as usize] {
                        seen[g as usize] = true;
                        stack.push(g);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// True when every edge has exactly two incident faces.
    pub fn is_closed(&self) -> bool {
        !self.edges.is_empty() && self.edges.values().all(|f| f.len() == 2)
    }
}

/// Box fitted by area-weighted centroid PCA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBoundingBox {
    pub center: Vec3,
    /// Orthonormal axes in PCA order (descending variance).
    pub axes: [Vec3; 3],
    pub half_extents: [f64; 3],
    /// Set when the centroid covariance was rank deficient.
    pub degenerate: bool,
}

const MIN_HALF_EXTENT: f64 = 1e-9;

impl OrientedBoundingBox {
    /// Longest full edge length.
    pub fn longest_edge(&self) -> f64 {
        2.0 * self.half_extents.iter().cloned().fold(0.0, f64::max)
    }

    pub fn contains(&self, p: &Vec3, inflate: f64) -> bool {
        let d = p - self.center;
        (0..3).all(|k| d.dot(&self.axes[k]).abs() <= self.half_extents[k] + inflate)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let mut p = self.center;
            for k in 0..3 {
                let s = if (i >> k) & 1 == 1 { 1.0 } else { -1.0 };
                p += self.axes[k] * (s * self.half_extents[k]);
            }
            *c = p;
        }
        out
    }

    /// The six face normals `±axes[k]`, ordered `+a0, -a0, +a1, -a1, +a2, -a2`.
    pub fn face_normals(&self) -> [Vec3; 6] {
        let a = &self.axes;
        [a[0], -a[0], a[1], -a[1], a[2], -a[2]]
    }
}

/// Sign convention: largest-magnitude component positive (first on ties).
fn canonical_sign(v: Vec3) -> Vec3 {
    let mut best = 0;
    for k in 1..3 {
        if v[k].abs() > v[best].abs() + 1e-12 {
            best = k;
        }
    }
    if v[best] < 0.0 {
        -v
    } else {
        v
    }
}

fn any_orthonormal_completion(a: Vec3) -> (Vec3, Vec3) {
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let b = a.cross(&helper).normalize();
    let c = a.cross(&b).normalize();
    (b, c)
}

/// Weighted PCA: returns unit eigenvectors sorted by descending eigenvalue, and the eigenvalues.
pub fn pca_axes(cov: &Matrix3<f64>) -> ([Vec3; 3], [f64; 3]) {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let axes = order.map(|i| eig.eigenvectors.column(i).into_owned().normalize());
    let vals = order.map(|i| eig.eigenvalues[i]);
    (axes, vals)
}

fn orthonormalize(axes: [Vec3; 3]) -> [Vec3; 3] {
    let a0 = axes[0].normalize();
    let a1 = (axes[1] - a0 * a0.dot(&axes[1])).normalize();
    let a2 = a0.cross(&a1);
    let a2 = if a2.dot(&axes[2]) < 0.0 { -a2 } else { a2 };
    [a0, a1, a2]
}

fn weighted_covariance(points: &[(Vec3, f64)]) -> (Vec3, Matrix3<f64>) {
    let total: f64 = points.iter().map(|(_, w)| w).sum();
    let mean = points.iter().map(|(p, w)| p * *w).sum::<Vec3>() / total;
    let mut cov = Matrix3::zeros();
    for (p, w) in points {
        let d = p - mean;
        cov += d * d.transpose() * *w;
    }
    (mean, cov / total)
}

/// Second moments of the part surface (uniform density over triangle area).
/// Unlike a centroid-only covariance this does not depend on how planar
/// panels are triangulated.
fn surface_covariance(mesh: &Mesh, part: &Part) -> Matrix3<f64> {
    let mut total = 0.0;
    let mut first = Vec3::zeros();
    let mut second = Matrix3::zeros();
    for f in part.iter() {
        let a = mesh.face_area(f);
        let m = mesh.face_centroid(f);
        let mut s = m * m.transpose() * 9.0;
        for p in mesh.triangle(f) {
            s += p * p.transpose();
        }
        second += s * (a / 12.0);
        first += m * a;
        total += a;
    }
    if total <= 0.0 {
        return Matrix3::zeros();
    }
    let mean = first / total;
    second / total - mean * mean.transpose()
}

/// Fits an OBB to a part from area-weighted surface second moments.
pub fn fit_obb(mesh: &Mesh, part: &Part) -> Result<OrientedBoundingBox> {
    if part.is_empty() {
        return Err(Error::EmptyPart);
    }
    part.check_against(mesh)?;
    let mut samples: Vec<(Vec3, f64)> = part
        .iter()
        .map(|f| (mesh.face_centroid(f), mesh.face_area(f)))
        .collect();
    if samples.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
        for s in &mut samples {
            s.1 = 1.0;
        }
    }
    // degeneracy is judged on the centroid spread, axes on the exact surface moments
    let (_, cov) = weighted_covariance(&samples);
    let (_, vals) = pca_axes(&cov);
    let degenerate = vals[0] <= 1e-18 || vals[1] <= 1e-9 * vals[0].abs().max(1e-300);
    let (mut axes, svals) = pca_axes(&surface_covariance(mesh, part));
    if svals[0] <= 1e-18 || svals[1] <= 1e-9 * svals[0] {
        let verts: Vec<(Vec3, f64)> = part
            .iter()
            .flat_map(|f| mesh.triangle(f))
            .map(|p| (p, 1.0))
            .collect();
        let (_, vcov) = weighted_covariance(&verts);
        let (vaxes, vvals) = pca_axes(&vcov);
        if vvals[0] > 1e-18 {
            let (b, c) = any_orthonormal_completion(vaxes[0]);
            axes = [vaxes[0], b, c];
        } else {
            axes = [Vec3::x(), Vec3::y(), Vec3::z()];
        }
    }
    let axes = orthonormalize(axes.map(canonical_sign)).map(canonical_sign);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for f in part.iter() {
        for p in mesh.triangle(f) {
            for k in 0..3 {
                let d = p.dot(&axes[k]);
                lo[k] = lo[k].min(d);
                hi[k] = hi[k].max(d);
            }
        }
    }
    let mut center = Vec3::zeros();
    let mut half_extents = [0.0; 3];
    for k in 0..3 {
        center += axes[k] * (0.5 * (lo[k] + hi[k]));
        half_extents[k] = (0.5 * (hi[k] - lo[k])).max(MIN_HALF_EXTENT);
    }
    Ok(OrientedBoundingBox {
        center,
        axes,
        half_extents,
        degenerate,
    })
}

/// Shared part/complement edges forming one connected chain or loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryLoop {
    /// Edges as vertex pairs, ordered along the chain where possible.
    pub edges: Vec<(u32, u32)>,
    /// Dominant direction of the chain (unit, oriented toward +z, then +y, then +x).
    pub tangent: Vec3,
    /// Mean of the edge endpoints; the fitted line is `centroid + s * tangent`.
    pub centroid: Vec3,
    pub closed: bool,
}

impl BoundaryLoop {
    /// Closest point to `p` on the fitted line.
    pub fn project_on_line(&self, p: &Vec3) -> Vec3 {
        self.centroid + self.tangent * (p - self.centroid).dot(&self.tangent)
    }

    /// Minimum distance from `p` to the chain's edge segments.
    pub fn distance_to_chain(&self, mesh: &Mesh, p: &Vec3) -> f64 {
        self.edges
            .iter()
            .map(|&(a, b)| {
                point_segment_distance(p, &mesh.vertices[a as usize], &mesh.vertices[b as usize])
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (a + ab * t - p).norm()
}

/// Orients a direction so it points toward +z; ties fall back to +y then +x.
pub fn orient_up(v: Vec3) -> Vec3 {
    const TIE: f64 = 1e-9;
    for k in [2usize, 1, 0] {
        if v[k] > TIE {
            return v;
        }
        if v[k] < -TIE {
            return -v;
        }
    }
    v
}

/// Edges with at least one incident face inside `part` and one outside.
pub fn boundary_edges(adj: &Adjacency, part_mask: &[bool]) -> Vec<(u32, u32)> {
    let mut out: Vec<(u32, u32)> = adj
        .edges
        .iter()
        .filter(|(_, faces)| {
            let inside = faces.iter().any(|&f| part_mask[f as usize]);
            let outside = faces.iter().any(|&f| !part_mask[f as usize]);
            inside && outside
        })
        .map(|(&e, _)| e)
        .collect();
    out.sort_unstable();
    out
}

/// Boundary between a part and the rest of the mesh, split into connected chains.
pub fn part_boundary(mesh: &Mesh, part: &Part) -> Result<Vec<BoundaryLoop>> {
    part_boundary_with(mesh, &Adjacency::new(mesh), part)
}

pub fn part_boundary_with(mesh: &Mesh, adj: &Adjacency, part: &Part) -> Result<Vec<BoundaryLoop>> {
    part.check_against(mesh)?;
    if part.len() == mesh.face_count() {
        return Ok(Vec::new());
    }
    let mask = part.mask(mesh.face_count());
    let edges = boundary_edges(adj, &mask);
    // vertex -> incident boundary edges
    let mut incident: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, &(a, b)) in edges.iter().enumerate() {
        incident.entry(a).or_default().push(i);
        incident.entry(b).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut loops = Vec::new();
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        // collect the connected component of edges
        let mut comp = Vec::new();
        let mut stack = vec![start];
        used[start] = true;
        while let Some(e) = stack.pop() {
            comp.push(e);
            let (a, b) = edges[e];
            for v in [a, b] {
                for &n in &incident[&v] {
                    if !used[n] {
                        used[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        comp.sort_unstable();
        let ordered = order_chain(&edges, &comp, &incident);
        let closed = comp
            .iter()
            .flat_map(|&e| [edges[e].0, edges[e].1])
            .all(|v| incident[&v].iter().filter(|e| comp.binary_search(e).is_ok()).count() % 2 == 0);
        let runs = split_at_corners(mesh, &ordered, closed);
        let single = runs.len() == 1;
        for run in runs {
            let pts: Vec<(Vec3, f64)> = run
                .iter()
                .flat_map(|&(a, b)| [mesh.vertices[a as usize], mesh.vertices[b as usize]])
                .map(|p| (p, 1.0))
                .collect();
            let (centroid, cov) = weighted_covariance(&pts);
            let (axes, _) = pca_axes(&cov);
            loops.push(BoundaryLoop {
                edges: run,
                tangent: orient_up(axes[0]),
                centroid,
                closed: closed && single,
            });
        }
    }
    Ok(loops)
}

/// Turn (radians) above which a boundary walk is split into separate chains.
const CORNER_ANGLE: f64 = std::f64::consts::PI / 6.0;

/// Splits an ordered walk into straight-ish runs at sharp corners and at
/// discontinuities (branch leftovers).
fn split_at_corners(mesh: &Mesh, walk: &[(u32, u32)], closed: bool) -> Vec<Vec<(u32, u32)>> {
    let dir = |e: &(u32, u32)| (mesh.vertices[e.1 as usize] - mesh.vertices[e.0 as usize]).normalize();
    let corner = |a: &(u32, u32), b: &(u32, u32)| a.1 != b.0 || dir(a).dot(&dir(b)).clamp(-1.0, 1.0).acos() > CORNER_ANGLE;
    let mut runs: Vec<Vec<(u32, u32)>> = Vec::new();
    for (i, e) in walk.iter().enumerate() {
        if i == 0 || corner(&walk[i - 1], e) {
            runs.push(Vec::new());
        }
        runs.last_mut().unwrap().push(*e);
    }
    if closed && runs.len() > 1 && !corner(walk.last().unwrap(), &walk[0]) {
        let mut last = runs.pop().unwrap();
        last.append(&mut runs[0]);
        runs[0] = last;
    }
    runs
}

/// Orders a connected edge set into a walk, starting from an end vertex if any.
fn order_chain(
    edges: &[(u32, u32)],
    comp: &[usize],
    incident: &HashMap<u32, Vec<usize>>,
) -> Vec<(u32, u32)> {
    let in_comp = |e: &usize| comp.binary_search(e).is_ok();
    let degree = |v: u32| incident[&v].iter().filter(|e| in_comp(e)).count();
    let mut start_vertex = edges[comp[0]].0;
    for &e in comp {
        for v in [edges[e].0, edges[e].1] {
            if degree(v) == 1 && v < start_vertex || degree(v) == 1 && degree(start_vertex) != 1 {
                start_vertex = v;
            }
        }
    }
    let mut visited = vec![false; edges.len()];
    let mut out = Vec::with_capacity(comp.len());
    let mut current = start_vertex;
    loop {
        let next = incident[&current]
            .iter()
            .copied()
            .filter(|e| in_comp(e) && !visited[*e])
            .min();
        match next {
            Some(e) => {
                visited[e] = true;
                let (a, b) = edges[e];
                let (from, to) = if a == current { (a, b) } else { (b, a) };
                out.push((from, to));
                current = to;
            }
            None => break,
        }
    }
    // branching chains: append the leftovers in index order
    for &e in comp {
        if !visited[e] {
            out.push(edges[e]);
        }
    }
    out
}

/// Area-weighted average normal of the part's view-facing faces
/// (all faces when none face the viewer).
pub fn representative_normal(mesh: &Mesh, part: &Part, view_dir: &Vec3) -> Result<Vec3> {
    if part.is_empty() {
        return Err(Error::EmptyPart);
    }
    part.check_against(mesh)?;
    let toward_viewer = -view_dir;
    let mut facing = Vec3::zeros();
    let mut all = Vec3::zeros();
    let mut any_facing = false;
    for f in part.iter() {
        // cross product has length 2 * area
        let weighted = mesh.face_cross(f) * 0.5;
        all += weighted;
        if weighted.dot(&toward_viewer) > 0.0 {
            facing += weighted;
            any_facing = true;
        }
    }
    let sum = if any_facing { facing } else { all };
    let len = sum.norm();
    if !(len > 1e-15) {
        return Err(Error::Degenerate("zero resultant normal".into()));
    }
    Ok(sum / len)
}
