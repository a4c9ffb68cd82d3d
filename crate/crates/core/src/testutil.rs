//! Fixtures and brute-force oracles shared by unit tests.

pub use crate::shapes::{box_mesh, cylinder_side, grid_quads};

use std::collections::HashMap;

use crate::model::{Mesh, Part, Vec3};
use crate::shapes::{grid_breaks, linspace, ShapeBuilder};

pub fn all_faces(mesh: &Mesh) -> Part {
    Part::from_ids((0..mesh.face_count() as u32).collect()).unwrap()
}

pub struct DoorScene {
    pub mesh: Mesh,
    pub door: Part,
}

/// Wall panel in the y=0 plane with a door panel opened 90 degrees, hinged
/// on the shared vertical edge x=y=0.
pub fn door_on_frame() -> DoorScene {
    let zs = linspace(0.0, 1.0, 5);
    let mut b = ShapeBuilder::new();
    b.add(grid_breaks(Vec3::new(-1.0, 0.0, 0.0), Vec3::x(), &linspace(0.0, 1.0, 5), Vec3::z(), &zs), 0);
    b.add(grid_breaks(Vec3::zeros(), -Vec3::y(), &linspace(0.0, 0.6, 4), Vec3::z(), &zs), 1);
    let (mesh, labels) = b.build();
    let ids = |l: u32| {
        Part::from_ids(
            labels.iter().enumerate().filter(|(_, &x)| x == l).map(|(f, _)| f as u32).collect(),
        )
        .unwrap()
    };
    DoorScene {
        door: ids(1),
        mesh,
    }
}

/// Edges with exactly one incident face inside the part and one outside.
pub fn brute_boundary(mesh: &Mesh, part: &Part) -> Vec<(u32, u32)> {
    let mut faces_of: HashMap<(u32, u32), Vec<usize>> = HashMap::new();
    for (f, tri) in mesh.faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            faces_of.entry((a.min(b), a.max(b))).or_default().push(f);
        }
    }
    let mut out: Vec<(u32, u32)> = faces_of
        .into_iter()
        .filter(|(_, fs)| {
            let inside = fs.iter().filter(|&&f| part.contains(f as u32)).count();
            inside >= 1 && inside < fs.len()
        })
        .map(|(e, _)| e)
        .collect();
    out.sort_unstable();
    out
}
