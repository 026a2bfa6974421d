//! Bundled scenarios.
//!
//! The testbed layout is a constructed approximation of a 250 m × 300 m urban
//! campus block: a 5 × 5 grid of five-storey office buildings on a street
//! grid. Building interiors are not taken from any survey; every floor uses
//! the same double-loaded corridor plan with twenty 4 m × 8 m rooms.

use super::*;
use crate::geometry::{Point, Polyline, Rect};
use crate::rf::RfParams;
use crate::sme::SmeParams;
use crate::uplink::ChannelConfig;

pub const ROOM_WIDTH_M: f64 = 4.0;
pub const ROOM_DEPTH_M: f64 = 8.0;
pub const CORRIDOR_WIDTH_M: f64 = 2.0;
pub const ROOMS_PER_SIDE: usize = 10;

/// Footprint size of the standard office plan.
pub const OFFICE_W: f64 = ROOM_WIDTH_M * ROOMS_PER_SIDE as f64;
pub const OFFICE_D: f64 = 2.0 * ROOM_DEPTH_M + CORRIDOR_WIDTH_M;

/// One floor of the standard plan: ten rooms either side of a central
/// east-west corridor.
pub fn office_floor(origin: Point) -> Floor {
    let mut rooms = Vec::with_capacity(2 * ROOMS_PER_SIDE);
    for side in 0..2 {
        let y0 = origin.y + side as f64 * (ROOM_DEPTH_M + CORRIDOR_WIDTH_M);
        for i in 0..ROOMS_PER_SIDE {
            let x0 = origin.x + i as f64 * ROOM_WIDTH_M;
            rooms.push(Rect::new(x0, y0, x0 + ROOM_WIDTH_M, y0 + ROOM_DEPTH_M));
        }
    }
    let cy = origin.y + ROOM_DEPTH_M + 0.5 * CORRIDOR_WIDTH_M;
    Floor {
        corridor: Polyline::new(vec![Point::new(origin.x + 1.0, cy), Point::new(origin.x + OFFICE_W - 1.0, cy)]),
        rooms,
    }
}

pub fn office_building(origin: Point, floors: usize) -> Building {
    Building {
        footprint: Rect::new(origin.x, origin.y, origin.x + OFFICE_W, origin.y + OFFICE_D),
        floor_count: floors,
        floor_height: 3.5,
        floors: (0..floors).map(|_| office_floor(origin)).collect(),
    }
}

fn target_in_room(s: &Scenario, building: usize, floor: usize, room: usize) -> Pose {
    let r = s.buildings[building].floors[floor].rooms[room];
    s.indoor_pose(building, floor, r.center(), 0.0)
}

fn base(extent: Rect, buildings: Vec<Building>, roads: Vec<Polyline>, rescuers: Vec<RescuerSpec>) -> Scenario {
    Scenario {
        schema_version: SCHEMA_VERSION,
        extent,
        buildings,
        roads,
        target: TargetPlacement {
            pose: Pose::outdoor(extent.center(), 0.0),
            room: None,
            tx_profile: ChannelConfig::default(),
        },
        rf: RfParams::default(),
        rescuers,
        timing: TimingParams::default(),
        seed: 1,
        initial_fix: None,
        search: SearchParams::default(),
        network: NetworkParams::default(),
        sme: SmeParams::default(),
        lcs: crate::lcs::LcsParams::default(),
    }
}

/// Degenerate world: no buildings, an outdoor target, one vehicle rescuer.
pub fn minimal() -> Scenario {
    let extent = Rect::new(0.0, 0.0, 100.0, 100.0);
    let mut s = base(
        extent,
        Vec::new(),
        Vec::new(),
        vec![RescuerSpec {
            id: "sme-1".into(),
            start: Point::new(40.0, 50.0),
            mode: Mobility::Vehicle,
            speed_mps: None,
        }],
    );
    s.target.pose = Pose::outdoor(Point::new(50.0, 50.0), 0.0);
    s.initial_fix = Some(InitialFix { center: Point::new(50.0, 50.0), sigma_m: 5.0 });
    s
}

/// 250 m × 300 m block with 25 five-floor office buildings, a street grid and
/// three vehicle-borne SMEs. The carrier fix sits at the block centre with a
/// 125 m three-sigma radius.
pub fn testbed() -> Scenario {
    let extent = Rect::new(0.0, 0.0, 250.0, 300.0);
    let mut buildings = Vec::with_capacity(25);
    for row in 0..5 {
        for col in 0..5 {
            let origin = Point::new(50.0 * col as f64 + 5.0, 60.0 * row as f64 + 21.0);
            buildings.push(office_building(origin, 5));
        }
    }
    let mut roads = Vec::new();
    for i in 0..=5 {
        let x = 50.0 * i as f64;
        roads.push(Polyline::new(vec![Point::new(x, 0.0), Point::new(x, 300.0)]));
    }
    for j in 0..=5 {
        let y = 60.0 * j as f64;
        roads.push(Polyline::new(vec![Point::new(0.0, y), Point::new(250.0, y)]));
    }
    let rescuers = (0..3)
        .map(|i| RescuerSpec {
            id: format!("sme-{}", i + 1),
            start: Point::new(100.0 * i as f64, 25.0),
            mode: Mobility::Vehicle,
            speed_mps: None,
        })
        .collect();
    let mut s = base(extent, buildings, roads, rescuers);
    s.initial_fix = Some(InitialFix { center: Point::new(125.0, 150.0), sigma_m: 125.0 / 3.0 });
    s.target.pose = target_in_room(&s, 12, 2, 6);
    s.normalize();
    s
}

/// One five-floor, 100-room office building (rooms 4 m × 8 m); three rescuers
/// on foot wait at the door and the building is known up front.
pub fn room_building() -> Scenario {
    let extent = Rect::new(0.0, 0.0, 60.0, 40.0);
    let building = office_building(Point::new(10.0, 11.0), 5);
    let roads = vec![Polyline::new(vec![Point::new(0.0, 5.0), Point::new(60.0, 5.0)])];
    let rescuers = (0..3)
        .map(|i| RescuerSpec {
            id: format!("sme-{}", i + 1),
            start: Point::new(8.0, 20.0),
            mode: Mobility::Foot,
            speed_mps: None,
        })
        .collect();
    let mut s = base(extent, vec![building], roads, rescuers);
    s.search.known_building = Some(0);
    s.target.pose = target_in_room(&s, 0, 2, 13);
    s.normalize();
    s
}

/// Looks up a bundled scenario by name.
pub fn by_name(name: &str) -> Option<Scenario> {
    match name {
        "minimal" => Some(minimal()),
        "testbed" => Some(testbed()),
        "room-building" | "room_building" => Some(room_building()),
        _ => None,
    }
}
