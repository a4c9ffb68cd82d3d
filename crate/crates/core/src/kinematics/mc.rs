use std::collections::HashMap;

use super::mc_tables::{EDGE_TABLE, TRI_TABLE};
use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::model::{Mesh, Vec3};

const CORNERS: [[i64; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

const ISO: f64 = 0.5;

/// Scalar samples at cell centers over `[-1, n]³` (one ring of padding).
struct Field {
    m: i64,
    values: Vec<f64>,
}

impl Field {
    fn at(&self, i: i64, j: i64, k: i64) -> f64 {
        self.values[((i + 1) + self.m * ((j + 1) + self.m * (k + 1))) as usize]
    }

    fn id(&self, i: i64, j: i64, k: i64) -> usize {
        ((i + 1) + self.m * ((j + 1) + self.m * (k + 1))) as usize
    }
}

fn occupancy_field(grid: &OccupancyGrid, radius: i64) -> Field {
    let n = grid.n() as i64;
    let m = n + 2;
    let occ = |i: i64, j: i64, k: i64| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= n || j >= n || k >= n {
            0.0
        } else if grid.get(i as usize, j as usize, k as usize) {
            1.0
        } else {
            0.0
        }
    };
    let width = (2 * radius + 1) as f64;
    let norm = width * width * width;
    let mut values = Vec::with_capacity((m * m * m) as usize);
    for k in -1..=n {
        for j in -1..=n {
            for i in -1..=n {
                let mut s = 0.0;
                for dk in -radius..=radius {
                    for dj in -radius..=radius {
                        for di in -radius..=radius {
                            s += occ(i + di, j + dj, k + dk);
                        }
                    }
                }
                values.push(s / norm);
            }
        }
    }
    Field { m, values }
}

fn polygonise(grid: &OccupancyGrid, field: &Field) -> Result<Mesh> {
    let n = grid.n() as i64;
    let h = grid.cell();
    let origin = grid.origin();
    let pos = |i: i64, j: i64, k: i64| origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for k in -1..n {
        for j in -1..n {
            for i in -1..n {
                let corner: Vec<[i64; 3]> = CORNERS.iter().map(|c| [i + c[0], j + c[1], k + c[2]]).collect();
                let vals: Vec<f64> = corner.iter().map(|c| field.at(c[0], c[1], c[2])).collect();
                let mut index = 0usize;
                for (b, v) in vals.iter().enumerate() {
                    if *v < ISO {
                        index |= 1 << b;
                    }
                }
                if EDGE_TABLE[index] == 0 {
                    continue;
                }
                let mut vert = [u32::MAX; 12];
                for (e, &(a, b)) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[index] & (1 << e) == 0 {
                        continue;
                    }
                    let (ca, cb) = (corner[a], corner[b]);
                    let ia = field.id(ca[0], ca[1], ca[2]);
                    let ib = field.id(cb[0], cb[1], cb[2]);
                    let key = (ia.min(ib), ia.max(ib));
                    vert[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (pa, pb) = (pos(ca[0], ca[1], ca[2]), pos(cb[0], cb[1], cb[2]));
                        let t = (ISO - vals[a]) / (vals[b] - vals[a]);
                        vertices.push(pa + (pb - pa) * t);
                        (vertices.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[index].chunks(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    faces.push([vert[tri[0] as usize], vert[tri[1] as usize], vert[tri[2] as usize]]);
                }
            }
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyGeometry);
    }
    Mesh::new(vertices, faces)
}

/// Iso-surface at 0.5 of the radius-1 box-filtered occupancy, in world units.
pub fn extract_mesh(grid: &OccupancyGrid) -> Result<Mesh> {
    if grid.count() == 0 {
        return Err(Error::EmptyGeometry);
    }
    polygonise(grid, &occupancy_field(grid, 1))
}

/// Iso-surface of the raw occupancy. Keeps one-cell-thick walls, which the
/// box filter would erase.
pub fn extract_mesh_unfiltered(grid: &OccupancyGrid) -> Result<Mesh> {
    if grid.count() == 0 {
        return Err(Error::EmptyGeometry);
    }
    polygonise(grid, &occupancy_field(grid, 0))
}
