//! Work partitioning and route generation for dispatched rescuers.

use super::LcsError;
use crate::geometry::{Point, Polyline, Rect};
use crate::sme::Level;
use crate::world::Building;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanPhase {
    Building,
    FloorRoom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssignmentArea {
    Strip { rect: Rect },
    Floors { building: usize, floors: Vec<usize> },
    /// Single destination, e.g. a contour peak or a sweep position.
    Waypoint { at: Point },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteLeg {
    pub level: Level,
    pub path: Polyline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub rescuer_id: String,
    pub area: AssignmentArea,
    pub legs: Vec<RouteLeg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPlan {
    pub phase: PlanPhase,
    pub assignments: Vec<Assignment>,
    pub revision: u64,
}

impl SearchPlan {
    pub fn for_rescuer(&self, id: &str) -> Option<&Assignment> {
        self.assignments.iter().find(|a| a.rescuer_id == id)
    }
}

/// What the plan covers.
#[derive(Debug, Clone, Copy)]
pub enum PlanTarget<'a> {
    /// Outdoor boundary rectangle, swept along `roads` where possible.
    Area { rect: Rect, roads: &'a [Polyline], lane_spacing_m: f64 },
    /// Floors of one building, walked along their corridors.
    Building { index: usize, building: &'a Building },
}

/// Splits the work among `rescuers`.
///
/// Outdoors, the rectangle is cut into equal-width vertical strips, one per
/// rescuer, each swept boustrophedon-style with lanes snapped to nearby
/// north-south roads. Indoors, floors are dealt round-robin from floor 0 and
/// each floor's corridor is walked in alternating directions.
pub fn partition_and_route(target: PlanTarget<'_>, rescuers: &[String], revision: u64) -> Result<SearchPlan, LcsError> {
    if rescuers.is_empty() {
        return Err(LcsError::NoRescuers);
    }
    let n = rescuers.len();
    match target {
        PlanTarget::Area { rect, roads, lane_spacing_m } => {
            let road_xs = vertical_road_xs(roads);
            let w = rect.width() / n as f64;
            let assignments = rescuers
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let x0 = rect.x0 + w * i as f64;
                    let x1 = if i + 1 == n { rect.x1 } else { rect.x0 + w * (i + 1) as f64 };
                    let strip = Rect::new(x0, rect.y0, x1, rect.y1);
                    Assignment {
                        rescuer_id: id.clone(),
                        area: AssignmentArea::Strip { rect: strip },
                        legs: vec![RouteLeg {
                            level: Level::Outdoor,
                            path: boustrophedon(strip, &road_xs, lane_spacing_m),
                        }],
                    }
                })
                .collect();
            Ok(SearchPlan { phase: PlanPhase::Building, assignments, revision })
        }
        PlanTarget::Building { index, building } => {
            let assignments = rescuers
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    let floors: Vec<usize> = (i..building.floor_count).step_by(n).collect();
                    let legs = floors
                        .iter()
                        .enumerate()
                        .map(|(k, &f)| {
                            let c = &building.floors[f].corridor;
                            RouteLeg {
                                level: Level::Indoor { building: index, floor: f },
                                path: if k % 2 == 0 { c.clone() } else { c.reversed() },
                            }
                        })
                        .collect();
                    Assignment {
                        rescuer_id: id.clone(),
                        area: AssignmentArea::Floors { building: index, floors },
                        legs,
                    }
                })
                .collect();
            Ok(SearchPlan { phase: PlanPhase::FloorRoom, assignments, revision })
        }
    }
}

fn vertical_road_xs(roads: &[Polyline]) -> Vec<f64> {
    let mut xs: Vec<f64> = roads
        .iter()
        .flat_map(|r| r.segments())
        .filter(|(a, b)| (a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() > 0.0)
        .map(|(a, _)| a.x)
        .collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    xs
}

/// Serpentine sweep of `strip` with north-south lanes.
fn boustrophedon(strip: Rect, road_xs: &[f64], spacing: f64) -> Polyline {
    let count = ((strip.width() / spacing).ceil() as usize).max(1);
    let lane_w = strip.width() / count as f64;
    let mut lanes: Vec<f64> = (0..count)
        .map(|i| {
            let raw = strip.x0 + (i as f64 + 0.5) * lane_w;
            road_xs
                .iter()
                .copied()
                .filter(|x| *x >= strip.x0 && *x <= strip.x1 && (x - raw).abs() <= 0.5 * spacing)
                .min_by(|a, b| (a - raw).abs().total_cmp(&(b - raw).abs()).then(a.total_cmp(b)))
                .unwrap_or(raw)
        })
        .collect();
    lanes.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut pts = Vec::with_capacity(2 * lanes.len());
    for (i, x) in lanes.iter().enumerate() {
        let (ya, yb) = if i % 2 == 0 { (strip.y0, strip.y1) } else { (strip.y1, strip.y0) };
        pts.push(Point::new(*x, ya));
        pts.push(Point::new(*x, yb));
    }
    Polyline::new(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::scenarios;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("r{i}")).collect()
    }

    fn strips(plan: &SearchPlan) -> Vec<Rect> {
        plan.assignments
            .iter()
            .map(|a| match &a.area {
                AssignmentArea::Strip { rect } => *rect,
                _ => panic!("not a strip"),
            })
            .collect()
    }

    #[test]
    fn one_rescuer_gets_everything() {
        let rect = Rect::new(0.0, 25.0, 250.0, 275.0);
        let plan = partition_and_route(PlanTarget::Area { rect, roads: &[], lane_spacing_m: 50.0 }, &ids(1), 0).unwrap();
        assert_eq!(strips(&plan), vec![rect]);
    }

    #[test]
    fn three_equal_strips() {
        let rect = Rect::new(0.0, 0.0, 300.0, 100.0);
        let plan = partition_and_route(PlanTarget::Area { rect, roads: &[], lane_spacing_m: 50.0 }, &ids(3), 0).unwrap();
        let s = strips(&plan);
        for (i, r) in s.iter().enumerate() {
            assert!((r.width() - 100.0).abs() < 1e-9);
            assert!((r.x0 - 100.0 * i as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn strips_tile_exactly_and_routes_stay_inside() {
        let s = scenarios::testbed();
        let rect = Rect::new(0.0, 25.0, 250.0, 275.0);
        for n in 1..=7 {
            let plan = partition_and_route(PlanTarget::Area { rect, roads: &s.roads, lane_spacing_m: 50.0 }, &ids(n), 0).unwrap();
            let st = strips(&plan);
            let total: f64 = st.iter().map(Rect::area).sum();
            assert!((total - rect.area()).abs() < 1e-6);
            for i in 0..n {
                for j in i + 1..n {
                    assert_eq!(st[i].overlap_area(&st[j]), 0.0);
                }
            }
            for (a, strip) in plan.assignments.iter().zip(&st) {
                assert!(a.legs[0].path.points().iter().all(|p| strip.contains(*p)));
            }
        }
    }

    #[test]
    fn lanes_snap_to_roads() {
        let s = scenarios::testbed();
        let rect = Rect::new(0.0, 25.0, 250.0, 275.0);
        let plan = partition_and_route(PlanTarget::Area { rect, roads: &s.roads, lane_spacing_m: 50.0 }, &ids(3), 0).unwrap();
        let xs: Vec<Vec<f64>> = plan
            .assignments
            .iter()
            .map(|a| {
                let mut v: Vec<f64> = a.legs[0].path.points().iter().map(|p| p.x).collect();
                v.dedup();
                v
            })
            .collect();
        assert_eq!(xs, vec![vec![0.0, 50.0], vec![100.0, 150.0], vec![200.0, 250.0]]);
    }

    #[test]
    fn floors_round_robin() {
        let s = scenarios::room_building();
        let plan = partition_and_route(PlanTarget::Building { index: 0, building: &s.buildings[0] }, &ids(2), 0).unwrap();
        let floors: Vec<Vec<usize>> = plan
            .assignments
            .iter()
            .map(|a| match &a.area {
                AssignmentArea::Floors { floors, .. } => floors.clone(),
                _ => panic!(),
            })
            .collect();
        assert_eq!(floors, vec![vec![0, 2, 4], vec![1, 3]]);
        let legs = &plan.assignments[0].legs;
        assert_eq!(legs[1].path.first(), legs[0].path.last().map(|p| Point::new(p.x, p.y)));
    }

    #[test]
    fn zero_rescuers() {
        let rect = Rect::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(
            partition_and_route(PlanTarget::Area { rect, roads: &[], lane_spacing_m: 50.0 }, &[], 0),
            Err(LcsError::NoRescuers)
        );
    }
}
