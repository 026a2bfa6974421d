mod common;

use helps_core::geometry::{Point, Rect};
use helps_core::harness::{quantile, run_batch, summarize, write_csv, BatchSpec, Placement};
use helps_core::lcs::{area_ratio, derive_boundary, interpolate_idw, Cov2, LcsParams, MapRegion, PositionEstimate};
use helps_core::orchestrator::{Phase, Policy, RescuerDistance, SearchOutcome};
use helps_core::protocol::{decode, decode_frame, encode, encode_line, Frame};
use helps_core::world::scenarios;
use proptest::prelude::*;

fn outcome() -> impl Strategy<Value = SearchOutcome> {
    (any::<u64>(), any::<bool>(), 1.0..2000.0f64, 0.0..1.0f64, any::<bool>()).prop_map(|(seed, success, total, frac, b_ok)| SearchOutcome {
        policy: Policy::Helps,
        seed,
        success,
        final_phase: if success { Phase::Found } else { Phase::Failed },
        building_id_time_s: Some(total * frac),
        room_id_time_s: success.then_some(total),
        total_time_s: total,
        building_correct: success || b_ok,
        room_correct: success,
        first_room_correct: success,
        identified_building: Some(0),
        identified_room: None,
        retries: 0,
        distance_traveled_m: vec![RescuerDistance { id: "sme-1".into(), distance_m: total }],
    })
}

proptest! {
    #[test]
    fn envelope_round_trip(env in common::envelope()) {
        let line = encode_line(&env);
        prop_assert!(line.ends_with('\n'));
        prop_assert_eq!(line.matches('\n').count(), 1);
        prop_assert_eq!(decode(line.as_bytes()).unwrap(), env.clone());
        match decode_frame(&encode(&env)).unwrap() {
            Frame::Message(back) => prop_assert_eq!(back, env),
            Frame::Control(_) => prop_assert!(false, "decoded as control"),
        }
    }

    #[test]
    fn truncated_lines_are_rejected(env in common::envelope(), cut in 1usize..40) {
        let bytes = encode(&env);
        let keep = bytes.len().saturating_sub(cut + 1).max(1);
        prop_assert!(decode(&bytes[..keep]).is_err());
    }

    #[test]
    fn idw_stays_in_range(
        pts in proptest::collection::vec((0.0..60.0f64, 0.0..40.0f64, -140.0..-30.0f64), 1..40),
        cell in 0.5..6.0f64,
    ) {
        let reports: Vec<_> = pts.iter().map(|&(x, y, v)| common::omni_report("s", 0.0, x, y, v)).collect();
        let map = interpolate_idw(&reports, MapRegion::Outdoor { area: Rect::new(0.0, 0.0, 60.0, 40.0) }, cell, &LcsParams::default()).unwrap();
        let lo = pts.iter().map(|p| p.2).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.2).fold(f64::NEG_INFINITY, f64::max);
        for v in map.values.iter().flatten() {
            prop_assert!(*v >= lo && *v <= hi);
        }
        let peak = map.peak.unwrap();
        prop_assert!(map.values.iter().flatten().all(|v| *v <= peak.value_dbm));
    }

    #[test]
    fn idw_ignores_report_order(
        pts in proptest::collection::vec((0.0..30.0f64, 0.0..30.0f64, -140.0..-30.0f64), 2..20),
        rot in 0usize..20,
    ) {
        let reports: Vec<_> = pts.iter().map(|&(x, y, v)| common::omni_report("s", 0.0, x, y, v)).collect();
        let mut rotated = reports.clone();
        rotated.rotate_left(rot % reports.len());
        rotated.reverse();
        let region = MapRegion::Outdoor { area: Rect::new(0.0, 0.0, 30.0, 30.0) };
        let a = interpolate_idw(&reports, region, 2.0, &LcsParams::default()).unwrap();
        let b = interpolate_idw(&rotated, region, 2.0, &LcsParams::default()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn boundary_area_matches_covariance(var_a in 0.5..5000.0f64, var_b in 0.5..5000.0f64, angle in 0.0..std::f64::consts::PI, k in 1.0..4.0f64) {
        let cov = Cov2::from_principal(var_a.max(var_b), var_a.min(var_b), (angle.cos(), angle.sin()));
        let est = PositionEstimate { cov, ..PositionEstimate::from_fix(Point::new(10.0, -4.0), 1.0, 0.0) };
        let b = derive_boundary(&est, k).unwrap();
        let expect = std::f64::consts::PI * k * k * (var_a * var_b).sqrt();
        prop_assert!((b.area_m2() - expect).abs() <= 1e-6 * expect);
        prop_assert!(b.semi_major_m >= b.semi_minor_m);
        prop_assert!(b.contains(est.xy));
    }

    #[test]
    fn area_ratio_is_squared_radius_ratio(r_new in 0.1..500.0f64, r_old in 0.1..500.0f64) {
        let r = area_ratio(r_new, r_old);
        prop_assert!((r - (r_new / r_old).powi(2)).abs() <= 1e-12 * r.max(1.0));
        prop_assert_eq!(area_ratio(r_old, r_old), 1.0);
    }

    #[test]
    fn summarize_ignores_order(mut outs in proptest::collection::vec(outcome(), 1..40), seed in any::<u64>()) {
        let a = summarize(&outs, 180.0, "x").unwrap();
        let n = outs.len();
        outs.rotate_left((seed as usize) % n);
        outs.reverse();
        let b = summarize(&outs, 180.0, "x").unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!((0.0..=1.0).contains(&a.success_rate_within_deadline));
        if let (Some(m), Some(p)) = (a.median_time_s, a.p90_time_s) {
            prop_assert!(p >= m && m >= 0.0);
        }
    }

    #[test]
    fn quantile_is_a_sample_with_enough_mass(times in proptest::collection::vec(0.0..1000.0f64, 1..50), q in 0.01..1.0f64) {
        let t = quantile(&times, q).unwrap();
        prop_assert!(times.contains(&t));
        let below = times.iter().filter(|&&x| x <= t).count() as f64 / times.len() as f64;
        prop_assert!(below >= q - 1e-12);
        let strictly = times.iter().filter(|&&x| x < t).count() as f64 / times.len() as f64;
        prop_assert!(strictly < q);
    }
}

#[test]
fn p90_of_ten_evenly_spaced_times() {
    let times: Vec<f64> = (1..=10).map(|i| 10.0 * i as f64).collect();
    assert_eq!(quantile(&times, 0.9), Some(90.0));
}

#[test]
fn same_fingerprint_same_summary() {
    let mut spec = BatchSpec::new(scenarios::room_building(), Policy::Helps, 6);
    spec.placement = Placement::UniformRandomRoom;
    let a = run_batch(&spec).unwrap();
    spec.workers = 3;
    let b = run_batch(&spec).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.records, b.records);
    assert_eq!(a.summary.fingerprint, spec.fingerprint());
    spec.seed_base += 1;
    assert_ne!(a.summary.fingerprint, spec.fingerprint());

    let mut csv = Vec::new();
    write_csv(&a.records, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("seed,success,building_time,room_time,total_time,dist_sme-1,dist_sme-2,dist_sme-3"));
    assert_eq!(lines.count(), 6);
}
