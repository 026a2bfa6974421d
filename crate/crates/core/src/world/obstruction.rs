use super::{Pose, Scenario};
use crate::geometry::{dedup_params, Point, T_EPS};
use serde::{Deserialize, Serialize};

/// Walls and floor slabs crossed by a straight line between two poses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ObstructionCount {
    pub exterior_walls: u32,
    pub interior_walls: u32,
    pub floors_crossed: u32,
}

impl ObstructionCount {
    pub fn is_clear(&self) -> bool {
        *self == ObstructionCount::default()
    }
}

/// Counts exterior walls, interior (room) walls and floor slabs crossed by
/// the 3D segment `a → b`.
///
/// A wall shared by two rooms counts once; a room wall lying on the building
/// outline counts as exterior. Walls are vertical planes spanning the floor the
/// crossing height falls in; slabs sit at every multiple of the floor height
/// (ground excluded, roof included).
pub fn walls_between(a: &Pose, b: &Pose, scenario: &Scenario) -> ObstructionCount {
    let pa = a.xy();
    let pb = b.xy();
    let planar = pa.dist2(pb) > 0.0;
    let mut out = ObstructionCount::default();

    for bld in &scenario.buildings {
        let fp = bld.footprint;
        if !fp.bbox_overlaps_segment(pa, pb) {
            continue;
        }
        let top = bld.floor_count as f64 * bld.floor_height;
        let z_at = |t: f64| a.z + (b.z - a.z) * t;

        for k in 1..=bld.floor_count {
            let zk = k as f64 * bld.floor_height;
            let (lo, hi) = if a.z < b.z { (a.z, b.z) } else { (b.z, a.z) };
            if zk > lo && zk < hi {
                let t = (zk - a.z) / (b.z - a.z);
                if fp.contains(pa.lerp(pb, t)) {
                    out.floors_crossed += 1;
                }
            }
        }

        if !planar {
            continue;
        }

        let exterior: Vec<f64> = fp
            .boundary_crossings(pa, pb)
            .into_iter()
            .filter(|&t| is_interior_param(t) && (0.0..=top).contains(&z_at(t)))
            .collect();
        out.exterior_walls += exterior.len() as u32;

        let mut interior: Vec<f64> = Vec::new();
        for (fi, floor) in bld.floors.iter().enumerate() {
            let (flo, fhi) = (fi as f64 * bld.floor_height, (fi + 1) as f64 * bld.floor_height);
            let (zmin, zmax) = if a.z < b.z { (a.z, b.z) } else { (b.z, a.z) };
            if zmax < flo || zmin > fhi {
                continue;
            }
            for room in &floor.rooms {
                for t in room.boundary_crossings(pa, pb) {
                    if is_interior_param(t) && bld.floor_at(z_at(t)) == fi && z_at(t) <= top {
                        interior.push(t);
                    }
                }
            }
        }
        dedup_params(&mut interior);
        interior.retain(|t| !exterior.iter().any(|e| (e - t).abs() < T_EPS));
        out.interior_walls += interior.len() as u32;
    }
    out
}

fn is_interior_param(t: f64) -> bool {
    t > T_EPS && t < 1.0 - T_EPS
}

/// Candidate buildings hit by a ray, nearest entry first, with entry distances.
pub fn first_building_on_ray(
    scenario: &Scenario,
    origin: Point,
    bearing: f64,
    candidates: &[usize],
) -> Vec<(usize, f64)> {
    let mut hits: Vec<(usize, f64)> = candidates
        .iter()
        .filter_map(|&i| scenario.buildings[i].footprint.ray_entry(origin, bearing).map(|t| (i, t)))
        .collect();
    hits.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    hits
}
