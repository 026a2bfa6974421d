//! Directional confirmation: picking a building or a room from sweeps.

use crate::geometry::{wrap_pi, Point};
use crate::sme::BearingProfile;
use crate::world::{first_building_on_ray, Scenario};
use thiserror::Error;

/// Buildings considered by a building confirmation.
pub const CANDIDATE_RADIUS_M: f64 = 100.0;
/// How far a room-sweep ray is followed.
pub const ROOM_RAY_RANGE_M: f64 = 12.0;

#[derive(Debug, Error, PartialEq)]
pub enum ConfirmError {
    #[error("no candidate buildings")]
    NoCandidates,
    #[error("floor has no rooms")]
    NoRooms,
    #[error("no sweeps given")]
    NoSweeps,
}

/// Buildings whose footprint lies within `radius_m` of `p`, by index.
pub fn candidate_buildings(scenario: &Scenario, p: Point, radius_m: f64) -> Vec<usize> {
    scenario
        .buildings
        .iter()
        .enumerate()
        .filter(|(_, b)| b.footprint.distance_to(p) <= radius_m)
        .map(|(i, _)| i)
        .collect()
}

/// Candidates in the order they should be tried: footprints hit by the
/// argmax ray (nearest first), then the rest by angular distance between the
/// argmax bearing and the bearing of their centroid.
pub fn rank_buildings(scenario: &Scenario, sweep: &BearingProfile, candidates: &[usize]) -> Vec<usize> {
    let origin = sweep.position.xy();
    let bearing = sweep.argmax_bearing_rad;
    let mut order: Vec<usize> = first_building_on_ray(scenario, origin, bearing, candidates)
        .into_iter()
        .map(|(i, _)| i)
        .collect();
    let mut rest: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|i| !order.contains(i))
        .map(|&i| {
            let c = scenario.buildings[i].footprint.center();
            (wrap_pi(origin.bearing_to(c) - bearing).abs(), i)
        })
        .collect();
    rest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.extend(rest.into_iter().map(|(_, i)| i));
    order
}

pub fn building_confirm(scenario: &Scenario, sweep: &BearingProfile, candidates: &[usize]) -> Result<usize, ConfirmError> {
    rank_buildings(scenario, sweep, candidates)
        .first()
        .copied()
        .ok_or(ConfirmError::NoCandidates)
}

/// Rooms of `floor` in the order they should be tried. Each sweep votes for
/// every room its argmax ray enters within `range_m`; rooms rank by votes,
/// then by centroid distance to `peak`.
pub fn rank_rooms(
    scenario: &Scenario,
    building: usize,
    floor: usize,
    sweeps: &[BearingProfile],
    peak: Point,
    range_m: f64,
) -> Result<Vec<usize>, ConfirmError> {
    let rooms = &scenario.buildings[building].floors[floor].rooms;
    if rooms.is_empty() {
        return Err(ConfirmError::NoRooms);
    }
    if sweeps.is_empty() {
        return Err(ConfirmError::NoSweeps);
    }
    let mut votes = vec![0usize; rooms.len()];
    for s in sweeps {
        for (i, r) in rooms.iter().enumerate() {
            if r.ray_entry(s.position.xy(), s.argmax_bearing_rad).is_some_and(|t| t <= range_m) {
                votes[i] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..rooms.len()).collect();
    order.sort_by(|&a, &b| {
        votes[b]
            .cmp(&votes[a])
            .then(rooms[a].center().dist(peak).total_cmp(&rooms[b].center().dist(peak)))
            .then(a.cmp(&b))
    });
    Ok(order)
}

pub fn room_confirm(
    scenario: &Scenario,
    building: usize,
    floor: usize,
    sweeps: &[BearingProfile],
    peak: Point,
) -> Result<usize, ConfirmError> {
    Ok(rank_rooms(scenario, building, floor, sweeps, peak, ROOM_RAY_RANGE_M)?[0])
}
