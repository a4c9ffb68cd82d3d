//! Sweep volumes, collision scans, range calibration, static/moving
//! separation, iso-surface extraction and URDF export.

mod mc;
mod mc_tables;
pub mod urdf;

use std::collections::VecDeque;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{components, OccupancyGrid};
use crate::model::ArticulationSpec;

pub use mc::{extract_mesh, extract_mesh_unfiltered};
pub use urdf::{export_urdf, UrdfAssembly, UrdfJoint, UrdfJointType, UrdfLink};

pub const DEFAULT_SAMPLES: usize = 64;

/// `v_i = i·range/(samples − 1)` for `i = 0..samples`.
pub fn sample_values(range: f64, samples: usize) -> Vec<f64> {
    (0..samples).map(|i| i as f64 * range / (samples - 1) as f64).collect()
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 samples, got {samples}")));
    }
    Ok(())
}

/// Cells hit by the part's cell centers moved to `value`.
fn moved_cells<'a>(part: &'a OccupancyGrid, spec: &'a ArticulationSpec, value: f64) -> impl Iterator<Item = usize> + 'a {
    part.occupied()
        .filter_map(move |idx| part.cell_of(&spec.apply_unchecked(value, &part.center(idx))))
}

/// Union of the part's occupancy over the sampled joint values.
pub fn sweep_volume(part: &OccupancyGrid, spec: &ArticulationSpec, samples: usize) -> Result<OccupancyGrid> {
    check_samples(samples)?;
    let values = sample_values(spec.range_max(), samples);
    let hits: Vec<Vec<usize>> = values
        .par_iter()
        .map(|&v| moved_cells(part, spec, v).collect())
        .collect();
    let mut out = part.clone();
    for h in hits {
        for idx in h {
            out.cells_mut()[idx] = true;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Largest sampled value whose whole prefix is collision-free (0 when blocked at rest).
    pub free_prefix_max: f64,
    pub first_hit: Option<f64>,
}

fn scan_values(moving: &OccupancyGrid, fixed: &OccupancyGrid, spec: &ArticulationSpec, values: &[f64]) -> Result<ScanResult> {
    moving.check_frame(fixed)?;
    let collides: Vec<bool> = values
        .par_iter()
        .map(|&v| moved_cells(moving, spec, v).any(|idx| fixed.cells()[idx]))
        .collect();
    Ok(match collides.iter().position(|&c| c) {
        None => ScanResult {
            free_prefix_max: *values.last().unwrap_or(&0.0),
            first_hit: None,
        },
        Some(0) => ScanResult {
            free_prefix_max: 0.0,
            first_hit: Some(values[0]),
        },
        Some(i) => ScanResult {
            free_prefix_max: values[i - 1],
            first_hit: Some(values[i]),
        },
    })
}

/// Scans `[0, range_max]` in ascending order for the first sample at which a
/// moved cell center lands in an occupied static cell.
pub fn collision_scan(
    moving: &OccupancyGrid,
    static_grid: &OccupancyGrid,
    spec: &ArticulationSpec,
    samples: usize,
) -> Result<ScanResult> {
    check_samples(samples)?;
    scan_values(moving, static_grid, spec, &sample_values(spec.range_max(), samples))
}

/// Shrinks the range to the collision-free prefix. Continuous joints are
/// checked over a full turn and either pass unchanged or fail.
pub fn calibrate_range(
    spec: &ArticulationSpec,
    moving: &OccupancyGrid,
    static_grid: &OccupancyGrid,
    samples: usize,
) -> Result<ArticulationSpec> {
    check_samples(samples)?;
    if spec.motion_type().is_continuous() {
        let scan = scan_values(moving, static_grid, spec, &sample_values(2.0 * PI, samples))?;
        return match scan.first_hit {
            None => Ok(spec.clone()),
            Some(first_hit) => Err(Error::BlockedJoint { first_hit }),
        };
    }
    let scan = collision_scan(moving, static_grid, spec, samples)?;
    match scan.first_hit {
        None => Ok(spec.clone()),
        Some(first_hit) if scan.free_prefix_max <= 0.0 => Err(Error::BlockedJoint { first_hit }),
        Some(_) => spec.with_range(spec.range_max().min(scan.free_prefix_max)),
    }
}

#[derive(Debug, Clone)]
pub struct Decoupled {
    pub static_grid: OccupancyGrid,
    pub moving_grid: OccupancyGrid,
}

/// Splits `final` into static and moving cells. Components touching the seed
/// move; fused components are divided by geodesic distance to the seed versus
/// the non-seed shell (ties go static), and moving cells that still touch
/// static cells are eroded away.
pub fn decouple_components(
    final_grid: &OccupancyGrid,
    shell: &OccupancyGrid,
    moving_seed: &OccupancyGrid,
) -> Result<Decoupled> {
    final_grid.check_frame(shell)?;
    final_grid.check_frame(moving_seed)?;
    if !moving_seed.is_subset_of(final_grid) {
        return Err(Error::InvalidInput("moving seed is not contained in the final grid".into()));
    }
    let (label, count) = components(final_grid);
    let mut has_seed = vec![false; count];
    for idx in moving_seed.occupied() {
        has_seed[label[idx] as usize] = true;
    }
    // 0 = static, 1 = moving
    let mut owner = vec![u8::MAX; final_grid.len()];
    let mut dist = vec![u32::MAX; final_grid.len()];
    let mut queue = VecDeque::new();
    for idx in final_grid.occupied() {
        let l = label[idx] as usize;
        if !has_seed[l] {
            owner[idx] = 0;
        } else if moving_seed.cells()[idx] {
            owner[idx] = 1;
            dist[idx] = 0;
            queue.push_back(idx);
        } else if shell.cells()[idx] {
            owner[idx] = 0;
            dist[idx] = 0;
            queue.push_back(idx);
        }
    }
    while let Some(i) = queue.pop_front() {
        for nb in final_grid.neighbors(i) {
            if !final_grid.cells()[nb] {
                continue;
            }
            let d = dist[i] + 1;
            if dist[nb] == u32::MAX {
                dist[nb] = d;
                owner[nb] = owner[i];
                queue.push_back(nb);
            } else if dist[nb] == d && owner[i] == 0 {
                owner[nb] = 0;
            }
        }
    }
    let mut static_grid = final_grid.like();
    let mut moving_grid = final_grid.like();
    for idx in final_grid.occupied() {
        match owner[idx] {
            1 => moving_grid.cells_mut()[idx] = true,
            _ => static_grid.cells_mut()[idx] = true,
        }
    }
    let interface: Vec<usize> = moving_grid
        .occupied()
        .filter(|&i| moving_grid.neighbors(i).any(|nb| static_grid.cells()[nb]))
        .collect();
    for i in interface {
        moving_grid.cells_mut()[i] = false;
    }
    if moving_grid.count() == 0 {
        return Err(Error::Degenerate("moving grid is empty after separation".into()));
    }
    Ok(Decoupled {
        static_grid,
        moving_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Vec3;
    use proptest::prelude::*;

    fn block(n: usize, lo: [usize; 3], hi: [usize; 3]) -> OccupancyGrid {
        let mut g = OccupancyGrid::unit(n).unwrap();
        for k in lo[2]..hi[2] {
            for j in lo[1]..hi[1] {
                for i in lo[0]..hi[0] {
                    g.set(i, j, k, true);
                }
            }
        }
        g
    }

    #[test]
    fn translated_bar_doubles() {
        let n = 16;
        let bar = block(n, [2, 5, 5], [6, 6, 6]);
        let spec = ArticulationSpec::translation(Vec3::x(), 4.0 / n as f64).unwrap();
        let sweep = sweep_volume(&bar, &spec, 64).unwrap();
        assert_eq!(sweep, block(n, [2, 5, 5], [10, 6, 6]));
        let zero = ArticulationSpec::translation(Vec3::x(), 0.0).unwrap();
        assert_eq!(sweep_volume(&bar, &zero, 8).unwrap(), bar);
        assert!(sweep_volume(&bar, &spec, 1).is_err());
    }

    #[test]
    fn rotated_panel_sweeps_quarter_cylinder() {
        let n = 32;
        // panel along +x from the grid center, one cell thick in y
        let panel = block(n, [16, 16, 12], [28, 17, 20]);
        let spec = ArticulationSpec::rotation(Vec3::zeros(), Vec3::z(), PI / 2.0).unwrap();
        let sweep = sweep_volume(&panel, &spec, 512).unwrap();
        let h = panel.cell();
        // inner and outer radii of the swept cell centers
        let (r_min, r_max) = panel
            .occupied()
            .map(|i| {
                let c = panel.center(i);
                (c.x * c.x + c.y * c.y).sqrt()
            })
            .fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r), b.max(r)));
        let mut mismatches = 0;
        for idx in 0..sweep.len() {
            let c = sweep.center(idx);
            let k_ok = c.z > -4.0 * h && c.z < 4.0 * h;
            let r = (c.x * c.x + c.y * c.y).sqrt();
            let angle = c.y.atan2(c.x);
            // clearly inside / clearly outside the swept annular sector
            let inside = k_ok && r > r_min + h && r < r_max - h && angle > 0.1 && angle < PI / 2.0 - 0.1;
            let outside = !k_ok || r > r_max + h || (r > 2.0 * h && (angle < -0.2 || angle > PI / 2.0 + 0.2));
            if (inside && !sweep.cells()[idx]) || (outside && sweep.cells()[idx]) {
                mismatches += 1;
            }
        }
        assert_eq!(mismatches, 0);
    }

    #[test]
    fn finer_nested_samples_only_add_cells() {
        let n = 16;
        let panel = block(n, [8, 8, 6], [14, 9, 10]);
        let spec = ArticulationSpec::rotation(Vec3::zeros(), Vec3::z(), 1.2).unwrap();
        for k in [3usize, 5, 9] {
            let coarse = sweep_volume(&panel, &spec, k).unwrap();
            let fine = sweep_volume(&panel, &spec, 2 * k - 1).unwrap();
            assert!(coarse.is_subset_of(&fine));
        }
    }

    #[test]
    fn scan_cases() {
        let n = 16;
        let part = block(n, [4, 4, 4], [6, 6, 6]);
        let wall = block(n, [10, 0, 0], [11, 16, 16]);
        let spec = ArticulationSpec::translation(Vec3::x(), 0.5).unwrap();
        let scan = collision_scan(&part, &wall, &spec, 65).unwrap();
        // leading cell center at 5.5 cells reaches the wall at 10 cells
        let hit = scan.first_hit.unwrap();
        let step = 0.5 / 64.0;
        assert!(hit == 36.0 * step || hit == 37.0 * step, "{hit}");
        assert!((scan.free_prefix_max - (hit - step)).abs() < 1e-12);
        let away = ArticulationSpec::translation(-Vec3::x(), 0.2).unwrap();
        assert_eq!(collision_scan(&part, &wall, &away, 65).unwrap().first_hit, None);
        let overlap = collision_scan(&part, &part, &spec, 8).unwrap();
        assert_eq!(overlap.free_prefix_max, 0.0);
        assert_eq!(overlap.first_hit, Some(0.0));
        assert!(matches!(calibrate_range(&spec, &part, &part, 8), Err(Error::BlockedJoint { .. })));
        let calibrated = calibrate_range(&spec, &part, &wall, 65).unwrap();
        assert_eq!(calibrated.range_max(), scan.free_prefix_max);
        assert_eq!(calibrate_range(&away, &part, &wall, 65).unwrap(), away);
    }

    #[test]
    fn continuous_joint_is_checked_over_a_full_turn() {
        let n = 16;
        let wheel = block(n, [6, 6, 7], [10, 10, 9]);
        let spec = ArticulationSpec::continuous(Vec3::zeros(), Vec3::z()).unwrap();
        let empty = wheel.like();
        assert_eq!(calibrate_range(&spec, &wheel, &empty, 64).unwrap(), spec);
        let post = block(n, [11, 8, 7], [12, 9, 9]);
        assert!(calibrate_range(&spec, &wheel, &post, 64).is_ok());
        let arm = block(n, [8, 8, 7], [14, 9, 9]);
        let blocker = block(n, [7, 12, 7], [8, 13, 9]);
        assert!(matches!(calibrate_range(&spec, &arm, &blocker, 64), Err(Error::BlockedJoint { .. })));
    }

    #[test]
    fn drawer_in_slot_decouples() {
        let n = 16;
        // cabinet shell: floor, back and two sides; drawer rests on the floor
        let mut cabinet = block(n, [2, 2, 2], [14, 14, 3]);
        cabinet = cabinet.union(&block(n, [2, 13, 2], [14, 14, 10])).unwrap();
        cabinet = cabinet.union(&block(n, [2, 2, 2], [3, 14, 10])).unwrap();
        cabinet = cabinet.union(&block(n, [13, 2, 2], [14, 14, 10])).unwrap();
        let drawer = block(n, [3, 2, 3], [13, 10, 7]);
        let final_grid = cabinet.union(&drawer).unwrap();
        let seed = block(n, [5, 2, 4], [11, 3, 6]);
        let out = decouple_components(&final_grid, &cabinet, &seed).unwrap();
        assert!(out.static_grid.is_disjoint(&out.moving_grid));
        let union = out.static_grid.union(&out.moving_grid).unwrap();
        assert!(union.is_subset_of(&final_grid));
        for idx in out.moving_grid.occupied() {
            assert!(out.moving_grid.neighbors(idx).all(|nb| !out.static_grid.cells()[nb]));
        }
        assert!(out.moving_grid.count() > 0);
        // only interface cells are dropped
        for idx in final_grid.difference(&union).unwrap().occupied() {
            assert!(final_grid.neighbors(idx).any(|nb| out.static_grid.cells()[nb]));
            assert!(drawer.cells()[idx]);
        }
    }

    #[test]
    fn disjoint_components_partition_exactly() {
        let n = 16;
        let a = block(n, [1, 1, 1], [4, 4, 4]);
        let b = block(n, [8, 8, 8], [12, 12, 12]);
        let g = a.union(&b).unwrap();
        let seed = block(n, [9, 9, 9], [10, 10, 10]);
        let out = decouple_components(&g, &a, &seed).unwrap();
        assert_eq!(out.static_grid, a);
        assert_eq!(out.moving_grid, b);
    }

    #[test]
    fn fused_blob_with_only_static_reach_errors() {
        let n = 8;
        let blob = block(n, [2, 2, 2], [4, 3, 3]);
        // the seed cell is adjacent to static shell: erosion removes it
        let seed = block(n, [3, 2, 2], [4, 3, 3]);
        let shell = block(n, [2, 2, 2], [3, 3, 3]);
        assert!(matches!(decouple_components(&blob, &shell, &seed), Err(Error::Degenerate(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn calibration_never_grows_range(wall_x in 7usize..14, range in 0.05f64..0.6) {
            let n = 16;
            let part = block(n, [3, 4, 4], [6, 6, 6]);
            let wall = block(n, [wall_x, 0, 0], [wall_x + 1, 16, 16]);
            let spec = ArticulationSpec::translation(Vec3::x(), range).unwrap();
            let cal = calibrate_range(&spec, &part, &wall, 64).unwrap();
            prop_assert!(cal.range_max() <= spec.range_max());
            prop_assert_eq!(collision_scan(&part, &wall, &cal, 64).unwrap().first_hit, None);
        }
    }
}
