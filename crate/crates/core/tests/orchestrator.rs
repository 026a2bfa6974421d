use helps_core::harness::{place_target, Placement};
use helps_core::orchestrator::{phase_sequence, run_session, run_session_with, Phase, Policy, RunOptions, SearchOutcome};
use helps_core::world::{scenarios, Scenario};

/// Scenario with shadowing, measurement noise, pose error and packet loss off.
fn quiet(mut s: Scenario) -> Scenario {
    s.rf = s.rf.without_shadowing();
    s.sme.noise.per_observation_sigma_db = 0.0;
    s.sme.self_pose_sigma_m = 0.0;
    s.network.loss_p = 0.0;
    s
}

fn check_outcome(o: &SearchOutcome) {
    if o.success {
        assert!(o.building_correct && o.room_correct, "seed {}: success on a wrong room", o.seed);
        assert_eq!(o.final_phase, Phase::Found);
    }
    if let (Some(b), Some(r)) = (o.building_id_time_s, o.room_id_time_s) {
        assert!(b <= r, "seed {}: milestones out of order", o.seed);
    }
    if let Some(r) = o.room_id_time_s {
        assert!(r <= o.total_time_s);
    }
}

fn check_phases(s: &Scenario, policy: Policy, seed: u64) -> SearchOutcome {
    let run = run_session_with(s, policy, seed, &RunOptions::default());
    let phases = phase_sequence(&run.session.events);
    assert_eq!(phases.first(), Some(&Phase::Setup));
    for w in phases.windows(2) {
        assert!(w[0].can_transition_to(w[1]), "seed {seed}: {:?} -> {:?}", w[0], w[1]);
    }
    assert_eq!(phases.last(), Some(&run.outcome.final_phase));
    let times: Vec<f64> = run.session.events.iter().map(|e| e.time_s).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: event clock went backwards");
    check_outcome(&run.outcome);
    run.outcome
}

#[test]
fn phase_graph_and_success_invariants() {
    for seed in 0..12 {
        let s = place_target(&scenarios::testbed(), Placement::UniformRandomRoom, seed).unwrap();
        check_phases(&s, Policy::Helps, seed);
        check_phases(&s, Policy::KnockBaseline, seed);
        let r = place_target(&scenarios::room_building(), Placement::UniformRandomRoom, seed).unwrap();
        check_phases(&r, Policy::Helps, seed);
        check_phases(&r, Policy::KnockBaseline, seed);
    }
    check_phases(&scenarios::minimal(), Policy::Helps, 0);
}

#[test]
fn noise_free_single_building_always_finds_the_room() {
    let base = quiet(scenarios::room_building());
    let mut misses = Vec::new();
    for seed in 0..50 {
        let s = place_target(&base, Placement::UniformRandomRoom, seed).unwrap();
        let o = run_session(&s, Policy::Helps, seed);
        check_outcome(&o);
        if !o.success {
            misses.push(seed);
        }
    }
    assert!(misses.is_empty(), "missed seeds {misses:?}");
}

#[test]
fn corner_rooms_noise_free() {
    let base = quiet(scenarios::room_building());
    let fl = &base.buildings[0].floors[1];
    for room in [0, 9, 10, 19] {
        let p = fl.rooms[room].center();
        let s = base.with_target(base.indoor_pose(0, 1, p, 0.0));
        let o = run_session(&s, Policy::Helps, 7);
        assert!(o.success, "corner room {room}");
        let id = o.identified_room.unwrap();
        assert_eq!((id.building, id.floor, id.room), (0, 1, room));
    }
}

#[test]
fn nearby_outdoor_caller_is_found_quickly() {
    let s = quiet(scenarios::minimal());
    let start = s.rescuers[0].start;
    assert!((start.dist(s.target.pose.xy()) - 10.0).abs() < 1e-9);
    let o = run_session(&s, Policy::Helps, 1);
    assert!(o.success);
    assert!(o.total_time_s < 60.0, "{}", o.total_time_s);
}

#[test]
fn testbed_building_is_identified_from_outside() {
    let s = scenarios::testbed();
    let run = run_session_with(&s, Policy::Helps, s.seed, &RunOptions { stop_after_building: true, ..RunOptions::default() });
    assert!(run.outcome.building_correct);
    assert!(run.outcome.building_id_time_s.unwrap() <= 180.0);
    let events = &run.session.events;
    assert!(events.iter().any(|e| e.event == "building_identified"));
    assert!(!events.iter().any(|e| e.event == "door_opened"));
    assert_eq!(events.last().map(|e| e.event.as_str()), Some("stopped"));
}

#[test]
fn same_seed_same_outcome() {
    let s = place_target(&scenarios::testbed(), Placement::UniformRandomRoom, 4).unwrap();
    assert_eq!(run_session(&s, Policy::Helps, 4), run_session(&s, Policy::Helps, 4));
    let a = run_session_with(&s, Policy::Helps, 4, &RunOptions { record_messages: true, ..RunOptions::default() });
    let b = run_session_with(&s, Policy::Helps, 4, &RunOptions { record_messages: true, ..RunOptions::default() });
    assert_eq!(a.session.events, b.session.events);
    assert_eq!(a.messages, b.messages);
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    0.5 * (v[(n - 1) / 2] + v[n / 2])
}

#[test]
fn more_rescuers_never_slow_the_median() {
    let base = scenarios::testbed();
    let medians: Vec<f64> = (1..=3)
        .map(|k| {
            let mut s = base.clone();
            s.rescuers.truncate(k);
            median(
                (0..100)
                    .map(|seed| {
                        let placed = place_target(&s, Placement::UniformRandomRoom, seed).unwrap();
                        run_session(&placed, Policy::Helps, seed).total_time_s
                    })
                    .collect(),
            )
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] <= w[0]), "medians by rescuer count {medians:?}");
}
