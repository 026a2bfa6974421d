#![allow(dead_code)]

use helps_core::geometry::{Point, Polyline, Rect};
use helps_core::lcs::{
    Assignment, AssignmentArea, ContourMap, Cov2, MapRegion, Peak, PlanPhase, PositionEstimate, RouteLeg, SearchBoundary,
};
use helps_core::protocol::{Envelope, ErrorCode, EventRecord, Message};
use helps_core::sme::{BearingProfile, BearingSample, Level, MeasurementReport, SmeMode};
use helps_core::uplink::{ChannelConfig, RssiSample};
use helps_core::world::Pose;
use proptest::prelude::*;
use serde_json::json;

fn coord() -> impl Strategy<Value = f64> {
    -1.0e4..1.0e4f64
}

fn point() -> impl Strategy<Value = Point> {
    (coord(), coord()).prop_map(|(x, y)| Point::new(x, y))
}

fn rect() -> impl Strategy<Value = Rect> {
    (coord(), coord(), 0.5..500.0f64, 0.5..500.0f64).prop_map(|(x, y, w, h)| Rect::new(x, y, x + w, y + h))
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_-]{0,11}"
}

fn text() -> impl Strategy<Value = String> {
    ".{0,24}"
}

fn pose() -> impl Strategy<Value = Pose> {
    (point(), 0.0..std::f64::consts::TAU, proptest::option::of((0usize..30, 0usize..12))).prop_map(|(p, h, idx)| match idx {
        Some((b, f)) => Pose::indoor(b, f, p, h, 3.5),
        None => Pose::outdoor(p, h),
    })
}

fn level() -> impl Strategy<Value = Level> {
    prop_oneof![
        Just(Level::Outdoor),
        (0usize..30, 0usize..12).prop_map(|(building, floor)| Level::Indoor { building, floor }),
    ]
}

fn channel_config() -> impl Strategy<Value = ChannelConfig> {
    (0.1..10.0f64, 1.0e5..2.0e7f64, 1.0..1000.0f64, -40.0..30.0f64, 1u32..14, 4.0e8..6.0e9f64, ident()).prop_map(
        |(sub, bw, period, tx, dmrs, carrier, id)| ChannelConfig {
            subframe_duration_ms: sub,
            bandwidth_hz: bw,
            period_ms: period,
            tx_power_dbm: tx,
            dmrs_symbols_per_subframe: dmrs,
            carrier_hz: carrier,
            target_id: id,
        },
    )
}

fn report() -> impl Strategy<Value = MeasurementReport> {
    (ident(), ident(), 0.0..1.0e5f64, pose(), any::<bool>(), proptest::option::of(0.0..std::f64::consts::TAU), -160.0..0.0f64, any::<bool>())
        .prop_map(|(sme, target, t, pose, dir, heading, v, valid)| MeasurementReport {
            sme_id: sme,
            target_id: target,
            timestamp_s: t,
            pose,
            mode: if dir { SmeMode::Directional } else { SmeMode::Omni },
            heading_rad: heading,
            rssi: RssiSample { value_dbm: v, timestamp_s: t, valid },
        })
}

fn estimate() -> impl Strategy<Value = PositionEstimate> {
    (point(), 0.1..1.0e4f64, -50.0..50.0f64, 0.1..1.0e4f64, proptest::option::of(0usize..12), 0usize..10_000, 0.0..1.0e5f64, any::<bool>())
        .prop_map(|(xy, xx, xy_c, yy, floor, n, t, degenerate)| PositionEstimate {
            xy,
            cov: Cov2 { xx, xy: xy_c, yy },
            floor_index: floor,
            n_reports_used: n,
            timestamp_s: t,
            degenerate,
        })
}

fn boundary() -> impl Strategy<Value = SearchBoundary> {
    (point(), 0.1..500.0f64, 0.1..500.0f64, -std::f64::consts::PI..std::f64::consts::PI, rect()).prop_map(|(center, a, b, o, bounding)| SearchBoundary {
        center,
        semi_major_m: a.max(b),
        semi_minor_m: a.min(b),
        orientation_rad: o,
        bounding,
    })
}

fn contour() -> impl Strategy<Value = ContourMap> {
    (1usize..6, 1usize..6)
        .prop_flat_map(|(nx, ny)| {
            (
                Just(nx),
                Just(ny),
                prop_oneof![
                    rect().prop_map(|area| MapRegion::Outdoor { area }),
                    (0usize..30, 0usize..12, rect()).prop_map(|(building, floor, area)| MapRegion::Floor { building, floor, area }),
                ],
                0.5..10.0f64,
                proptest::collection::vec(proptest::option::of(-160.0..0.0f64), nx * ny),
                any::<u64>(),
            )
        })
        .prop_map(|(nx, ny, region, cell, values, generation)| {
            let peak = values
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (i, v)))
                .fold(None::<(usize, f64)>, |b, (i, v)| if b.is_none_or(|b| v > b.1) { Some((i, v)) } else { b })
                .map(|(i, v)| Peak { row: i / nx, col: i % nx, value_dbm: v });
            ContourMap { region, cell_size: cell, nx, ny, values, peak, generation }
        })
}

fn assignment() -> impl Strategy<Value = Assignment> {
    let area = prop_oneof![
        rect().prop_map(|rect| AssignmentArea::Strip { rect }),
        (0usize..30, proptest::collection::vec(0usize..12, 0..5)).prop_map(|(building, floors)| AssignmentArea::Floors { building, floors }),
        point().prop_map(|at| AssignmentArea::Waypoint { at }),
    ];
    let leg = (level(), proptest::collection::vec(point(), 0..5)).prop_map(|(level, pts)| RouteLeg { level, path: Polyline::new(pts) });
    (ident(), area, proptest::collection::vec(leg, 0..4)).prop_map(|(rescuer_id, area, legs)| Assignment { rescuer_id, area, legs })
}

fn profile() -> impl Strategy<Value = BearingProfile> {
    (ident(), pose(), 0.0..1.0e5f64, proptest::collection::vec((-160.0..0.0f64, 0usize..50), 1..17)).prop_map(|(id, pose, t, e)| {
        let n = e.len();
        let entries = e
            .into_iter()
            .enumerate()
            .map(|(i, (v, s))| BearingSample { bearing_rad: i as f64 * std::f64::consts::TAU / n as f64, mean_rssi_dbm: v, samples: s })
            .collect();
        BearingProfile::from_entries(id, pose, t, entries)
    })
}

fn event() -> impl Strategy<Value = EventRecord> {
    (0.0..1.0e5f64, ident(), ident(), text(), -1.0e6..1.0e6f64, any::<i32>()).prop_map(|(t, actor, ev, s, f, i)| EventRecord {
        time_s: t,
        actor,
        event: ev,
        payload: json!({ "note": s, "value": f, "count": i, "list": [i, f] }),
    })
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop_oneof![
        Just(ErrorCode::MalformedFrame),
        Just(ErrorCode::UnknownSession),
        Just(ErrorCode::UnregisteredSender),
        Just(ErrorCode::StaleSchema),
        Just(ErrorCode::AlreadyActive),
        Just(ErrorCode::TargetUnreachable),
        Just(ErrorCode::Unauthorized),
        Just(ErrorCode::BadRequest),
    ]
}

pub fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        (ident(), ident()).prop_map(|(target_id, requester)| Message::CallConnectRequest { target_id, requester }),
        channel_config().prop_map(Message::ChannelConfig),
        report().prop_map(Message::MeasurementReport),
        (estimate(), boundary()).prop_map(|(estimate, boundary)| Message::LocationEstimate { estimate, boundary }),
        contour().prop_map(Message::ContourMap),
        (any::<bool>(), any::<u64>(), assignment()).prop_map(|(b, revision, assignment)| Message::TaskAssignment {
            phase: if b { PlanPhase::Building } else { PlanPhase::FloorRoom },
            revision,
            assignment,
        }),
        profile().prop_map(Message::SweepResult),
        event().prop_map(Message::SessionEvent),
        (error_code(), text()).prop_map(|(code, detail)| Message::Error { code, detail }),
    ]
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    (ident(), ident(), any::<u64>(), message()).prop_map(|(s, sender, seq, m)| Envelope::new(s, sender, seq, m))
}

/// One fixed message of every type, in a stable order.
pub fn golden_messages() -> Vec<Envelope> {
    let pose = Pose::outdoor(Point::new(125.5, 80.25), 1.5);
    let indoor = Pose::indoor(12, 2, Point::new(131.0, 146.0), 0.0, 3.5);
    let report = MeasurementReport {
        sme_id: "sme-1".into(),
        target_id: "target-1".into(),
        timestamp_s: 12.32,
        pose,
        mode: SmeMode::Omni,
        heading_rad: None,
        rssi: RssiSample { value_dbm: -71.437, timestamp_s: 12.32, valid: true },
    };
    let estimate = PositionEstimate {
        xy: Point::new(120.0, 150.0),
        cov: Cov2 { xx: 400.0, xy: 25.0, yy: 225.0 },
        floor_index: None,
        n_reports_used: 200,
        timestamp_s: 30.0,
        degenerate: false,
    };
    let boundary = SearchBoundary {
        center: Point::new(120.0, 150.0),
        semi_major_m: 60.0,
        semi_minor_m: 45.0,
        orientation_rad: 0.25,
        bounding: Rect::new(60.0, 105.0, 180.0, 195.0),
    };
    let contour = ContourMap {
        region: MapRegion::Floor { building: 12, floor: 2, area: Rect::new(105.0, 141.0, 108.0, 143.0) },
        cell_size: 1.0,
        nx: 3,
        ny: 2,
        values: vec![Some(-60.5), Some(-58.0), None, Some(-62.25), Some(-61.0), Some(-70.0)],
        peak: Some(Peak { row: 0, col: 1, value_dbm: -58.0 }),
        generation: 4,
    };
    let assignment = Assignment {
        rescuer_id: "sme-2".into(),
        area: AssignmentArea::Floors { building: 12, floors: vec![1, 4] },
        legs: vec![
            RouteLeg { level: Level::Indoor { building: 12, floor: 1 }, path: Polyline::new(vec![Point::new(106.0, 150.0), Point::new(144.0, 150.0)]) },
            RouteLeg { level: Level::Indoor { building: 12, floor: 4 }, path: Polyline::new(vec![Point::new(144.0, 150.0), Point::new(106.0, 150.0)]) },
        ],
    };
    let sweep = BearingProfile::from_entries(
        "sme-3",
        indoor,
        95.0,
        (0..4)
            .map(|i| BearingSample { bearing_rad: i as f64 * std::f64::consts::FRAC_PI_2, mean_rssi_dbm: -65.0 + i as f64, samples: 6 })
            .collect(),
    );
    let messages = vec![
        Message::CallConnectRequest { target_id: "target-1".into(), requester: "console-1".into() },
        Message::ChannelConfig(ChannelConfig::default()),
        Message::MeasurementReport(report),
        Message::LocationEstimate { estimate, boundary },
        Message::ContourMap(contour),
        Message::TaskAssignment { phase: PlanPhase::FloorRoom, revision: 7, assignment },
        Message::SweepResult(sweep),
        Message::SessionEvent(EventRecord {
            time_s: 101.2,
            actor: "lcs".into(),
            event: "building_identified".into(),
            payload: json!({ "building": 12 }),
        }),
        Message::Error { code: ErrorCode::UnknownSession, detail: "no open session session-9".into() },
    ];
    messages.into_iter().enumerate().map(|(i, m)| Envelope::new("session-1", "lcs", i as u64 + 1, m)).collect()
}

pub const GOLDEN_PATH: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden_messages.ndjson");

/// Valid omnidirectional outdoor report.
pub fn omni_report(sme: &str, t: f64, x: f64, y: f64, v: f64) -> MeasurementReport {
    MeasurementReport {
        sme_id: sme.into(),
        target_id: "target-1".into(),
        timestamp_s: t,
        pose: Pose::outdoor(Point::new(x, y), 0.0),
        mode: SmeMode::Omni,
        heading_rad: None,
        rssi: RssiSample { value_dbm: v, timestamp_s: t, valid: true },
    }
}
