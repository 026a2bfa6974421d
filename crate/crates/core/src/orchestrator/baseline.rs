//! Door-to-door knocking: the conventional search used as a reference.
//!
//! Rescuers start at the entrance of the caller's building with the building
//! already known. Floors are dealt round-robin; each rescuer walks its
//! corridors in alternating direction and knocks on every door on the way.
//! The timeline is computed directly, without radio measurements.

use super::{Phase, Policy, RescuerDistance, RoomRef, SearchOutcome, SearchSession};
use crate::geometry::Point;
use crate::protocol::EventRecord;
use crate::world::Scenario;
use serde_json::json;

/// One interval of a rescuer's timeline.
#[derive(Debug, Clone, Copy)]
struct Span {
    t0: f64,
    t1: f64,
    walked_m: f64,
}

/// Door knocks of one rescuer as (finish time, floor, room), plus its timeline.
fn rescuer_plan(sc: &Scenario, building: usize, first_floor: usize, stride: usize) -> (Vec<(f64, usize, usize)>, Vec<Span>) {
    let b = &sc.buildings[building];
    let timing = &sc.timing;
    let speed = timing.walk_speed_mps;
    let mut t = 0.0;
    let mut here = b.entrance();
    let mut floor = 0;
    let mut forward = true;
    let mut knocks = Vec::new();
    let mut spans = Vec::new();
    let walk = |t: &mut f64, here: &mut Point, to: Point, spans: &mut Vec<Span>| {
        let d = here.dist(to);
        spans.push(Span { t0: *t, t1: *t + d / speed, walked_m: d });
        *t += d / speed;
        *here = to;
    };
    for f in (first_floor..b.floor_count).step_by(stride.max(1)) {
        if f != floor {
            spans.push(Span { t0: t, t1: t + timing.floor_change_s, walked_m: 0.0 });
            t += timing.floor_change_s;
            floor = f;
        }
        let fl = &b.floors[f];
        let mut doors: Vec<(f64, usize)> = fl.rooms.iter().enumerate().map(|(i, r)| (fl.corridor.project(r.center()), i)).collect();
        doors.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if !forward {
            doors.reverse();
        }
        for (s, room) in doors {
            let door = fl.corridor.sample(s).0;
            walk(&mut t, &mut here, door, &mut spans);
            spans.push(Span { t0: t, t1: t + timing.knock_time_s, walked_m: 0.0 });
            t += timing.knock_time_s;
            knocks.push((t, f, room));
        }
        forward = !forward;
    }
    (knocks, spans)
}

fn walked_until(spans: &[Span], t: f64) -> f64 {
    spans
        .iter()
        .map(|s| {
            if s.t1 <= t {
                s.walked_m
            } else if s.t0 >= t || s.t1 <= s.t0 {
                0.0
            } else {
                s.walked_m * (t - s.t0) / (s.t1 - s.t0)
            }
        })
        .sum()
}

/// Runs the baseline and returns the outcome with its event log.
pub(super) fn run(sc: &Scenario, seed: u64) -> (SearchOutcome, Vec<EventRecord>) {
    let mut session = SearchSession::new();
    let target = &sc.target;
    let building = sc.search.known_building.or(target.pose.building_index);
    let n = sc.rescuers.len();
    let mut outcome = SearchOutcome {
        policy: Policy::KnockBaseline,
        seed,
        success: false,
        final_phase: Phase::Failed,
        building_id_time_s: None,
        room_id_time_s: None,
        total_time_s: 0.0,
        building_correct: false,
        room_correct: false,
        first_room_correct: false,
        identified_building: building,
        identified_room: None,
        retries: 0,
        distance_traveled_m: sc.rescuers.iter().map(|r| RescuerDistance { id: r.id.clone(), distance_m: 0.0 }).collect(),
    };
    let Some(b) = building.filter(|_| n > 0) else {
        session.log("lcs", "failed", json!({ "reason": "no building to search" }));
        session.transition(Phase::Failed);
        return (outcome, session.events);
    };
    session.walk(&[Phase::BuildingSearch, Phase::MoveToPeak, Phase::BuildingConfirm, Phase::FloorRoomSearch]);
    session.log("lcs", "building_known", json!({ "building": b }));
    outcome.building_id_time_s = Some(0.0);
    outcome.building_correct = target.pose.building_index == Some(b);

    let plans: Vec<_> = (0..n).map(|i| rescuer_plan(sc, b, i, n)).collect();
    let hit = plans
        .iter()
        .enumerate()
        .flat_map(|(i, (knocks, _))| {
            knocks
                .iter()
                .filter(|(_, f, r)| Some(b) == target.pose.building_index && Some(*f) == target.pose.floor_index && Some(*r) == target.room)
                .map(move |&(t, f, r)| (t, i, f, r))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let knocked_before = |t: f64| plans.iter().map(|(k, _)| k.iter().filter(|x| x.0 < t).count() as u32).sum::<u32>();
    let timeout = sc.timing.timeout_s;
    let end = match hit {
        Some((t, i, f, r)) if t <= timeout => {
            session.clock_s = t;
            session.transition(Phase::RoomConfirm);
            session.log(&sc.rescuers[i].id, "door_opened", json!({ "floor": f, "room": r, "caller_inside": true }));
            session.transition(Phase::Found);
            outcome.success = true;
            outcome.final_phase = Phase::Found;
            outcome.room_id_time_s = Some(t);
            outcome.room_correct = true;
            outcome.identified_room = Some(RoomRef { building: b, floor: f, room: r });
            outcome.first_room_correct = knocked_before(t) == 0;
            outcome.retries = knocked_before(t);
            t
        }
        _ => {
            let t = match hit {
                Some(_) => timeout,
                None => plans.iter().flat_map(|(k, _)| k.last().map(|x| x.0)).fold(0.0, f64::max).min(timeout),
            };
            session.clock_s = t;
            session.log("lcs", "failed", json!({ "reason": if hit.is_some() { "timeout" } else { "caller not behind any door" } }));
            session.transition(Phase::Failed);
            outcome.retries = knocked_before(t + 1e-9);
            t
        }
    };
    outcome.total_time_s = end;
    for (d, (_, spans)) in outcome.distance_traveled_m.iter_mut().zip(&plans) {
        d.distance_m = walked_until(spans, end);
    }
    (outcome, session.events)
}

/// Baseline outcome for `scenario`.
pub fn knock_baseline(scenario: &Scenario, seed: u64) -> SearchOutcome {
    run(scenario, seed).0
}
