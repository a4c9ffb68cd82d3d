//! Binary occupancy grids over a cubic world-space frame, voxelization and
//! 6-neighborhood morphology.

use serde_json::json;

use crate::error::{Error, Result};
use crate::meshops::Adjacency;
use crate::model::{Mesh, Part, Vec3};
use crate::render::tensor::TensorBlock;

pub const MIN_RESOLUTION: usize = 8;

/// `n³` binary cells; cell `(i, j, k)` spans `origin + [i, i+1)·cell` etc.
/// Index layout is x fastest: `i + n·(j + n·k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    n: usize,
    origin: Vec3,
    cell: f64,
    cells: Vec<bool>,
}

const NEIGHBORS: [(i64, i64, i64); 6] = [
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
];

impl OccupancyGrid {
    pub fn new(n: usize, origin: Vec3, cell: f64) -> Result<Self> {
        if n < MIN_RESOLUTION {
            return Err(Error::InvalidInput(format!("grid resolution {n} below {MIN_RESOLUTION}")));
        }
        if !(cell > 0.0 && cell.is_finite()) || !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidInput("grid transform is not invertible".into()));
        }
        Ok(Self {
            n,
            origin,
            cell,
            cells: vec![false; n * n * n],
        })
    }

    /// Grid covering the normalized box `[-0.5, 0.5]³`.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(n, Vec3::repeat(-0.5), 1.0 / n as f64)
    }

    /// Empty grid with the same frame.
    pub fn like(&self) -> Self {
        Self {
            cells: vec![false; self.cells.len()],
            ..self.clone()
        }
    }

    pub fn from_cells(template: &OccupancyGrid, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != template.cells.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} cells for a {}³ grid",
                cells.len(),
                template.n
            )));
        }
        Ok(Self {
            cells,
            ..template.like()
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [bool] {
        &mut self.cells
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        (idx % self.n, (idx / self.n) % self.n, idx / (self.n * self.n))
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.cells[self.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.index(i, j, k);
        self.cells[idx] = v;
    }

    pub fn center(&self, idx: usize) -> Vec3 {
        let (i, j, k) = self.coords(idx);
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.cell
    }

    /// Cell containing `p`, if inside the frame.
    pub fn cell_of(&self, p: &Vec3) -> Option<usize> {
        let q = (p - self.origin) / self.cell;
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let f = q[a].floor();
            if !(f >= 0.0 && f < self.n as f64) {
                return None;
            }
            ijk[a] = f as usize;
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &c)| c).map(|(i, _)| i)
    }

    pub fn check_frame(&self, other: &OccupancyGrid) -> Result<()> {
        if self.n != other.n || self.origin != other.origin || self.cell != other.cell {
            return Err(Error::ShapeMismatch(format!(
                "grid frames differ ({}³ vs {}³)",
                self.n, other.n
            )));
        }
        Ok(())
    }

    fn zip(&self, other: &OccupancyGrid, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.check_frame(other)?;
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self {
            cells,
            ..self.like()
        })
    }

    pub fn union(&self, other: &OccupancyGrid) -> Result<Self> {
        self.zip(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &OccupancyGrid) -> Result<Self> {
        self.zip(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &OccupancyGrid) -> Result<Self> {
        self.zip(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Self {
        Self {
            cells: self.cells.iter().map(|c| !c).collect(),
            ..self.like()
        }
    }

    pub fn is_subset_of(&self, other: &OccupancyGrid) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint(&self, other: &OccupancyGrid) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !(a && b))
    }

    /// In-grid 6-neighbors of `idx`.
    pub fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j, k) = self.coords(idx);
        let n = self.n as i64;
        NEIGHBORS.iter().filter_map(move |&(di, dj, dk)| {
            let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
            (a >= 0 && a < n && b >= 0 && b < n && c >= 0 && c < n)
                .then(|| self.index(a as usize, b as usize, c as usize))
        })
    }

    fn on_border(&self, idx: usize) -> bool {
        let (i, j, k) = self.coords(idx);
        let m = self.n - 1;
        i == 0 || j == 0 || k == 0 || i == m || j == m || k == m
    }

    /// `[n, n, n]` block (z slowest), with the frame in the metadata.
    pub fn to_tensor(&self) -> TensorBlock {
        let data = self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        TensorBlock::new(vec![self.n; 3], data)
            .expect("shape matches")
            .with_meta("origin", json!([self.origin.x, self.origin.y, self.origin.z]))
            .with_meta("cell", json!(self.cell))
    }

    pub fn from_tensor(block: &TensorBlock) -> Result<Self> {
        let n = match block.shape.as_slice() {
            [a, b, c] if a == b && b == c => *a,
            other => return Err(Error::ShapeMismatch(format!("expected [n,n,n], got {other:?}"))),
        };
        let origin = block
            .meta
            .get("origin")
            .and_then(|v| serde_json::from_value::<[f64; 3]>(v.clone()).ok())
            .map(Vec3::from)
            .unwrap_or_else(|| Vec3::repeat(-0.5));
        let cell = block.meta.get("cell").and_then(|v| v.as_f64()).unwrap_or(1.0 / n as f64);
        let mut g = Self::new(n, origin, cell)?;
        for (c, &v) in g.cells.iter_mut().zip(&block.data) {
            *c = v > 0.5;
        }
        Ok(g)
    }
}

/// Voxelizes `part` (or the whole mesh) into a unit-frame grid.
pub fn voxelize(mesh: &Mesh, part: Option<&Part>, n: usize) -> Result<OccupancyGrid> {
    let frame = OccupancyGrid::unit(n)?;
    voxelize_into(mesh, part.map(|p| p.face_ids()), &frame)
}

/// Watertight inputs: a cell is occupied iff its center is inside the solid
/// (parity ray casts along x, y and z, majority vote). Open inputs: every
/// cell touched by a triangle.
pub fn voxelize_into(mesh: &Mesh, faces: Option<&[u32]>, frame: &OccupancyGrid) -> Result<OccupancyGrid> {
    let sub = match faces {
        Some(ids) => {
            if let Some(&bad) = ids.iter().find(|&&f| f as usize >= mesh.face_count()) {
                return Err(Error::InvalidInput(format!("face {bad} out of range")));
            }
            mesh.submesh_faces(ids.iter().map(|&f| f as usize))
        }
        None => mesh.clone(),
    };
    if sub.faces.is_empty() {
        return Ok(frame.like());
    }
    if Adjacency::new(&sub).is_closed() {
        Ok(solid_voxels(&sub, frame))
    } else {
        Ok(surface_voxels(&sub, frame))
    }
}

fn solid_voxels(mesh: &Mesh, frame: &OccupancyGrid) -> OccupancyGrid {
    let n = frame.n;
    let mut votes = vec![0u8; n * n * n];
    // Line offsets keep rays off shared triangle edges of axis-aligned meshes.
    const JITTER: [f64; 2] = [1.37e-6, 2.91e-6];
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        let mut hits: Vec<Vec<f64>> = vec![Vec::new(); n * n];
        for f in 0..mesh.face_count() {
            let t = mesh.triangle(f);
            let q = |p: &Vec3| ((p[b] - frame.origin[b]) / frame.cell, (p[c] - frame.origin[c]) / frame.cell);
            let pts = [q(&t[0]), q(&t[1]), q(&t[2])];
            let lo_b = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi_b = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            let lo_c = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi_c = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            let range = |lo: f64, hi: f64| {
                let s = (lo - 0.5).ceil().max(0.0) as usize;
                let e = ((hi - 0.5).floor() + 1.0).clamp(0.0, n as f64) as usize;
                s..e.max(s)
            };
            let normal = mesh.face_cross(f);
            if normal[a].abs() < 1e-300 {
                continue;
            }
            for jb in range(lo_b - 1.0, hi_b + 1.0) {
                for jc in range(lo_c - 1.0, hi_c + 1.0) {
                    let pb = jb as f64 + 0.5 + JITTER[0];
                    let pc = jc as f64 + 0.5 + JITTER[1];
                    let e = |i: usize, k: usize| {
                        let (x0, y0) = pts[i];
                        let (x1, y1) = pts[k];
                        (x1 - x0) * (pc - y0) - (y1 - y0) * (pb - x0)
                    };
                    let (e0, e1, e2) = (e(0, 1), e(1, 2), e(2, 0));
                    let inside = (e0 > 0.0 && e1 > 0.0 && e2 > 0.0) || (e0 < 0.0 && e1 < 0.0 && e2 < 0.0);
                    if !inside {
                        continue;
                    }
                    // plane intersection: normal·(x - t0) = 0 along axis a
                    let wb = frame.origin[b] + pb * frame.cell;
                    let wc = frame.origin[c] + pc * frame.cell;
                    let t0 = t[0];
                    let xa = t0[a] - (normal[b] * (wb - t0[b]) + normal[c] * (wc - t0[c])) / normal[a];
                    hits[jb + n * jc].push((xa - frame.origin[a]) / frame.cell);
                }
            }
        }
        for jb in 0..n {
            for jc in 0..n {
                let line = &mut hits[jb + n * jc];
                if line.is_empty() {
                    continue;
                }
                line.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let mut h = 0;
                for ia in 0..n {
                    let x = ia as f64 + 0.5;
                    while h < line.len() && line[h] < x {
                        h += 1;
                    }
                    if h % 2 == 1 {
                        let mut ijk = [0usize; 3];
                        ijk[a] = ia;
                        ijk[b] = jb;
                        ijk[c] = jc;
                        votes[frame.index(ijk[0], ijk[1], ijk[2])] += 1;
                    }
                }
            }
        }
    }
    OccupancyGrid {
        cells: votes.into_iter().map(|v| v >= 2).collect(),
        ..frame.like()
    }
}

/// Separating-axis test between a triangle and an axis-aligned box.
pub fn triangle_box_overlap(center: &Vec3, half: f64, tri: &[Vec3; 3]) -> bool {
    let v = [tri[0] - center, tri[1] - center, tri[2] - center];
    let edges = [v[1] - v[0], v[2] - v[1], v[0] - v[2]];
    let separated = |axis: &Vec3| {
        if axis.norm_squared() < 1e-30 {
            return false;
        }
        let p = [axis.dot(&v[0]), axis.dot(&v[1]), axis.dot(&v[2])];
        let lo = p[0].min(p[1]).min(p[2]);
        let hi = p[0].max(p[1]).max(p[2]);
        let r = half * (axis.x.abs() + axis.y.abs() + axis.z.abs());
        lo > r || hi < -r
    };
    let units = [Vec3::x(), Vec3::y(), Vec3::z()];
    if units.iter().any(&separated) {
        return false;
    }
    if separated(&edges[0].cross(&edges[1])) {
        return false;
    }
    for u in &units {
        for e in &edges {
            if separated(&u.cross(e)) {
                return false;
            }
        }
    }
    true
}

fn surface_voxels(mesh: &Mesh, frame: &OccupancyGrid) -> OccupancyGrid {
    let mut out = frame.like();
    let n = frame.n as f64;
    let half = 0.5 * frame.cell;
    for f in 0..mesh.face_count() {
        let t = mesh.triangle(f);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let mn = t.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let mx = t.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            let s = ((mn - frame.origin[a]) / frame.cell).floor() - 1.0;
            let e = ((mx - frame.origin[a]) / frame.cell).floor() + 1.0;
            lo[a] = s.clamp(0.0, n) as usize;
            hi[a] = (e + 1.0).clamp(0.0, n) as usize;
        }
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    let idx = out.index(i, j, k);
                    if !out.cells[idx] && triangle_box_overlap(&out.center(idx), half, &t) {
                        out.cells[idx] = true;
                    }
                }
            }
        }
    }
    out
}

/// 6-neighborhood erosion applied `r` times; cells outside the grid count as empty.
pub fn erode(mask: &OccupancyGrid, r: usize) -> OccupancyGrid {
    let mut cur = mask.clone();
    for _ in 0..r {
        let next = (0..cur.len())
            .map(|idx| cur.cells[idx] && !cur.on_border(idx) && cur.neighbors(idx).all(|nb| cur.cells[nb]))
            .collect();
        cur.cells = next;
    }
    cur
}

/// 6-neighborhood dilation applied `r` times.
pub fn dilate(mask: &OccupancyGrid, r: usize) -> OccupancyGrid {
    let mut cur = mask.clone();
    for _ in 0..r {
        let next = (0..cur.len())
            .map(|idx| cur.cells[idx] || cur.neighbors(idx).any(|nb| cur.cells[nb]))
            .collect();
        cur.cells = next;
    }
    cur
}

/// Free cells not 6-reachable from the grid border through free cells.
pub fn cavity(shell: &OccupancyGrid) -> OccupancyGrid {
    let mut outside = vec![false; shell.len()];
    let mut stack: Vec<usize> = (0..shell.len())
        .filter(|&i| shell.on_border(i) && !shell.cells[i])
        .collect();
    for &i in &stack {
        outside[i] = true;
    }
    while let Some(i) = stack.pop() {
        for nb in shell.neighbors(i) {
            if !shell.cells[nb] && !outside[nb] {
                outside[nb] = true;
                stack.push(nb);
            }
        }
    }
    OccupancyGrid {
        cells: (0..shell.len()).map(|i| !shell.cells[i] && !outside[i]).collect(),
        ..shell.like()
    }
}

/// 6-connected components of the occupied cells; label `u32::MAX` marks empty cells.
pub fn components(grid: &OccupancyGrid) -> (Vec<u32>, usize) {
    let mut label = vec![u32::MAX; grid.len()];
    let mut count = 0u32;
    for start in 0..grid.len() {
        if !grid.cells[start] || label[start] != u32::MAX {
            continue;
        }
        label[start] = count;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for nb in grid.neighbors(i) {
                if grid.cells[nb] && label[nb] == u32::MAX {
                    label[nb] = count;
                    stack.push(nb);
                }
            }
        }
        count += 1;
    }
    (label, count as usize)
}
