//! End-to-end caller search sessions.
//!
//! A session runs on one fixed-step logical clock. Rescuer agents measure and
//! move; their reports reach the location server over lossy virtual links and
//! are stored in the session registry, and every decision the server takes
//! (contour peaks, building and room choices) is computed from what it has
//! received. Plans travel back to the agents as task-assignment messages.

mod agent;
pub mod baseline;
pub mod confirm;

pub use baseline::knock_baseline;
pub use confirm::{building_confirm, candidate_buildings, rank_buildings, rank_rooms, room_confirm, ConfirmError};

use crate::geometry::{Point, Polyline, Rect};
use crate::lcs::{
    derive_boundary, interpolate_idw, partition_and_route, Assignment, AssignmentArea, ContourMap, LcsParams, MapRegion,
    PlanPhase, PlanTarget, PositionEstimate, RouteLeg, SearchPlan, SequentialEstimator,
};
use crate::protocol::{
    decode_frame, encode_control, encode_line, BaseStation, Control, Envelope, EventRecord, Frame, Ingest, Message,
    Role, SessionRegistry, VirtualLink,
};
use crate::rf::ShadowingField;
use crate::seeding::{stream, streams, SimRng};
use crate::sme::{BearingProfile, Level, SmeState};
use crate::world::{Pose, Scenario};
use agent::{Agent, Task};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    BuildingSearch,
    MoveToPeak,
    BuildingConfirm,
    FloorRoomSearch,
    RoomConfirm,
    Found,
    Failed,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Found | Phase::Failed)
    }

    /// Allowed transitions of the search state machine.
    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        if next == Failed {
            return !self.is_terminal();
        }
        matches!(
            (self, next),
            (Setup, BuildingSearch)
                | (BuildingSearch, MoveToPeak)
                | (MoveToPeak, BuildingConfirm)
                | (BuildingConfirm, FloorRoomSearch)
                | (BuildingConfirm, BuildingSearch)
                | (FloorRoomSearch, RoomConfirm)
                | (RoomConfirm, FloorRoomSearch)
                | (RoomConfirm, Found)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Helps,
    KnockBaseline,
}

impl std::str::FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "helps" => Ok(Policy::Helps),
            "knock_baseline" | "knock-baseline" | "knock" => Ok(Policy::KnockBaseline),
            _ => Err(format!("unknown policy {s:?} (expected helps or knock_baseline)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomRef {
    pub building: usize,
    pub floor: usize,
    pub room: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescuerDistance {
    pub id: String,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub policy: Policy,
    pub seed: u64,
    pub success: bool,
    pub final_phase: Phase,
    pub building_id_time_s: Option<f64>,
    pub room_id_time_s: Option<f64>,
    pub total_time_s: f64,
    pub building_correct: bool,
    pub room_correct: bool,
    /// The first room tried was the caller's.
    pub first_room_correct: bool,
    pub identified_building: Option<usize>,
    pub identified_room: Option<RoomRef>,
    pub retries: u32,
    pub distance_traveled_m: Vec<RescuerDistance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub dt_s: f64,
    /// Cadence of the live position estimate during the building phase;
    /// `None` disables it.
    pub live_estimate_interval_s: Option<f64>,
    /// Keep every envelope exchanged in [`SessionRun::messages`].
    pub record_messages: bool,
    /// End the session as soon as a building has been identified.
    pub stop_after_building: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { dt_s: 0.08, live_estimate_interval_s: Some(5.0), record_messages: false, stop_after_building: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSession {
    pub session_id: String,
    pub phase: Phase,
    pub clock_s: f64,
    pub plan: Option<SearchPlan>,
    pub events: Vec<EventRecord>,
}

impl SearchSession {
    fn new() -> Self {
        let mut s = SearchSession { session_id: String::new(), phase: Phase::Setup, clock_s: 0.0, plan: None, events: Vec::new() };
        s.log("lcs", "phase", json!({ "from": null, "to": Phase::Setup }));
        s
    }

    pub fn log(&mut self, actor: &str, event: &str, payload: serde_json::Value) {
        self.events.push(EventRecord { time_s: self.clock_s, actor: actor.into(), event: event.into(), payload });
    }

    fn transition(&mut self, to: Phase) {
        assert!(self.phase.can_transition_to(to), "illegal transition {:?} -> {:?}", self.phase, to);
        let from = self.phase;
        self.phase = to;
        self.log("lcs", "phase", json!({ "from": from, "to": to }));
    }

    fn walk(&mut self, path: &[Phase]) {
        for p in path {
            self.transition(*p);
        }
    }
}

/// Phases in the order recorded by an event log.
pub fn phase_sequence(events: &[EventRecord]) -> Vec<Phase> {
    events
        .iter()
        .filter(|e| e.event == "phase")
        .filter_map(|e| serde_json::from_value(e.payload["to"].clone()).ok())
        .collect()
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub outcome: SearchOutcome,
    pub session: SearchSession,
    /// Contour maps in the order they were produced.
    pub contours: Vec<ContourMap>,
    pub estimates: Vec<PositionEstimate>,
    pub messages: Vec<Envelope>,
}

pub fn run_session(scenario: &Scenario, policy: Policy, seed: u64) -> SearchOutcome {
    run_session_with(scenario, policy, seed, &RunOptions::default()).outcome
}

pub fn run_session_with(scenario: &Scenario, policy: Policy, seed: u64, opts: &RunOptions) -> SessionRun {
    match policy {
        Policy::KnockBaseline => {
            let (outcome, events) = baseline::run(scenario, seed);
            let mut session = SearchSession::new();
            session.events = events;
            session.phase = outcome.final_phase;
            session.clock_s = outcome.total_time_s;
            SessionRun { outcome, session, contours: Vec::new(), estimates: Vec::new(), messages: Vec::new() }
        }
        Policy::Helps => Sim::new(scenario, seed, opts).run(),
    }
}

const LCS: &str = "lcs";
const RESEND_S: f64 = 0.5;
/// Homing steps before an outdoor search gives up.
const MAX_HOMING_STEPS: u32 = 40;
const HOMING_STEP_M: f64 = 5.0;
/// Stand-off from a wall for perimeter verification.
const VERIFY_OFFSET_M: f64 = 2.0;

#[derive(Debug, Clone)]
enum Stage {
    Connecting,
    AreaSweep,
    MoveToPeak { agent: usize, peak_dbm: f64 },
    BuildingSweep { agent: usize, peak_dbm: f64, candidates: Vec<usize> },
    VerifyMove { agent: usize, peak_dbm: f64, ranked: Vec<usize>, idx: usize },
    VerifyDwell { agent: usize, peak_dbm: f64, ranked: Vec<usize>, idx: usize, start: f64 },
    Homing { agent: usize, steps: u32, sweeping: bool },
    FloorSweep { building: usize },
    RoomSweeps { agent: usize, building: usize, floor: usize, peak: Point, positions: Vec<Point>, next: usize, moving: bool },
    RoomDoor { agent: usize, building: usize, floor: usize, ranked: Vec<usize>, idx: usize },
    Knock { agent: usize, building: usize, floor: usize, ranked: Vec<usize>, idx: usize },
    Done,
}

struct Pending {
    agent: usize,
    seq: u64,
    line: String,
    last_sent: f64,
}

struct Sim<'a> {
    sc: &'a Scenario,
    seed: u64,
    opts: RunOptions,
    lcs_params: LcsParams,
    shadow: ShadowingField,
    now: f64,
    session: SearchSession,
    registry: SessionRegistry,
    agents: Vec<Agent>,
    agent_seq: Vec<u64>,
    agent_pending: Vec<Vec<(u64, String, f64)>>,
    uplinks: Vec<VirtualLink<String>>,
    downlinks: Vec<VirtualLink<String>>,
    link_rng: Vec<(SimRng, SimRng)>,
    lcs_pending: Vec<Pending>,
    expected_revision: Vec<u64>,
    revision: u64,
    stage: Stage,
    settle_until: Option<f64>,
    search_area: Rect,
    estimator: Option<SequentialEstimator>,
    sweeps: Vec<BearingProfile>,
    contours: Vec<ContourMap>,
    estimates: Vec<PositionEstimate>,
    messages: Vec<Envelope>,
    retries: u32,
    building_time: Option<f64>,
    room_time: Option<f64>,
    identified_building: Option<usize>,
    identified_room: Option<RoomRef>,
    first_room: Option<bool>,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario, seed: u64, opts: &RunOptions) -> Self {
        let shadow = ShadowingField::generate(sc, &sc.rf, seed);
        let agents: Vec<Agent> = sc
            .rescuers
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let sme = SmeState::new(r.id.clone(), Pose::outdoor(r.start, 0.0), r.speed(), sc.sme.clone());
                Agent::new(r, sme, stream(seed, streams::SME_BASE + i as u64))
            })
            .collect();
        let n = agents.len();
        let mut registry = SessionRegistry::new(
            BaseStation { setup_delay_s: sc.timing.setup_delay_s, reachable: sc.network.target_reachable },
            sc.lcs.resolve_interval_s,
        );
        for a in &agents {
            registry.register(a.id.clone(), Role::Sme);
        }
        let mut lcs_params = sc.lcs.clone();
        if let Some(iv) = opts.live_estimate_interval_s {
            lcs_params.resolve_interval_s = iv;
        }
        Sim {
            sc,
            seed,
            opts: opts.clone(),
            shadow,
            now: 0.0,
            session: SearchSession::new(),
            registry,
            agent_seq: vec![0; n],
            agent_pending: vec![Vec::new(); n],
            uplinks: (0..n).map(|_| VirtualLink::from_params(&sc.network)).collect(),
            downlinks: (0..n).map(|_| VirtualLink::from_params(&sc.network)).collect(),
            link_rng: (0..n as u64)
                .map(|i| (stream(seed, streams::LINK_BASE + 2 * i), stream(seed, streams::LINK_BASE + 2 * i + 1)))
                .collect(),
            agents,
            lcs_pending: Vec::new(),
            expected_revision: vec![0; n],
            revision: 0,
            stage: Stage::Connecting,
            settle_until: None,
            search_area: sc.extent,
            estimator: opts.live_estimate_interval_s.map(|_| SequentialEstimator::new(&lcs_params)),
            lcs_params,
            sweeps: Vec::new(),
            contours: Vec::new(),
            estimates: Vec::new(),
            messages: Vec::new(),
            retries: 0,
            building_time: None,
            room_time: None,
            identified_building: None,
            identified_room: None,
            first_room: None,
        }
    }

    fn run(mut self) -> SessionRun {
        self.begin();
        let dt = self.opts.dt_s;
        let mut tick: u64 = 0;
        while !self.session.phase.is_terminal() {
            if self.opts.stop_after_building && self.building_time.is_some() {
                self.session.log(LCS, "stopped", json!({ "after": "building" }));
                break;
            }
            tick += 1;
            self.now = tick as f64 * dt;
            self.session.clock_s = self.now;
            self.step_agents(dt);
            self.lcs_receive();
            self.lcs_poll();
            self.decide();
            if !self.session.phase.is_terminal() && self.now >= self.sc.timing.timeout_s - 1e-9 {
                self.session.log(LCS, "timeout", json!({ "timeout_s": self.sc.timing.timeout_s }));
                self.fail("timeout");
            }
        }
        self.finish()
    }

    // ---- messaging ----

    fn record(&mut self, env: &Envelope) {
        if self.opts.record_messages {
            self.messages.push(env.clone());
        }
    }

    fn lcs_send(&mut self, agent: usize, env: Envelope, reliable: bool) {
        self.record(&env);
        let line = encode_line(&env);
        if reliable {
            self.lcs_pending.push(Pending { agent, seq: env.seq, line: line.clone(), last_sent: self.now });
        }
        let rng = &mut self.link_rng[agent].1;
        self.downlinks[agent].send(self.now, line, rng);
    }

    fn agent_send(&mut self, i: usize, message: Message, reliable: bool) {
        self.agent_seq[i] += 1;
        let env = Envelope::new(self.session.session_id.clone(), self.agents[i].id.clone(), self.agent_seq[i], message);
        self.record(&env);
        let line = encode_line(&env);
        if reliable {
            self.agent_pending[i].push((env.seq, line.clone(), self.now));
        }
        let rng = &mut self.link_rng[i].0;
        self.uplinks[i].send(self.now, line, rng);
    }

    fn agent_control(&mut self, i: usize, c: Control) {
        let rng = &mut self.link_rng[i].0;
        self.uplinks[i].send(self.now, encode_control(&c), rng);
    }

    fn publish(&mut self, message: Message) {
        let sid = self.session.session_id.clone();
        let env = self.registry.envelope(&sid, message);
        self.record(&env);
    }

    fn assign(&mut self, agent: usize, phase: PlanPhase, assignment: Assignment) {
        self.revision += 1;
        self.expected_revision[agent] = self.revision;
        let sid = self.session.session_id.clone();
        self.session.log(
            LCS,
            "task_assignment",
            json!({ "rescuer": assignment.rescuer_id, "revision": self.revision, "legs": assignment.legs.len() }),
        );
        let env = self.registry.envelope(&sid, Message::TaskAssignment { phase, revision: self.revision, assignment });
        self.lcs_send(agent, env, true);
    }

    fn assign_plan(&mut self, plan: SearchPlan) {
        for a in &plan.assignments {
            let i = self.agents.iter().position(|x| x.id == a.rescuer_id).expect("rescuer in plan");
            self.assign(i, plan.phase, a.clone());
        }
        self.session.plan = Some(plan);
    }

    fn move_agent(&mut self, agent: usize, level: Level, to: Point) {
        let from = self.agents[agent].position();
        let assignment = Assignment {
            rescuer_id: self.agents[agent].id.clone(),
            area: AssignmentArea::Waypoint { at: to },
            legs: vec![RouteLeg { level, path: Polyline::new(vec![to]) }],
        };
        let _ = from;
        let phase = match level {
            Level::Outdoor => PlanPhase::Building,
            Level::Indoor { .. } => PlanPhase::FloorRoom,
        };
        self.assign(agent, phase, assignment);
    }

    fn ready(&self, i: usize) -> bool {
        self.agents[i].applied_revision >= self.expected_revision[i] && self.agents[i].idle()
    }

    fn step_agents(&mut self, dt: f64) {
        for i in 0..self.agents.len() {
            for line in self.downlinks[i].recv(self.now - dt) {
                self.agent_handle(i, &line);
            }
            let out = self.agents[i].tick(dt, self.sc, &self.shadow);
            for r in out.reports {
                self.agent_send(i, Message::MeasurementReport(r), false);
            }
            if let Some(p) = out.sweep {
                self.session.log(&self.agents[i].id.clone(), "sweep_done", json!({ "argmax_bearing_rad": p.argmax_bearing_rad, "peak_dbm": p.peak_rssi_dbm() }));
                self.agent_send(i, Message::SweepResult(p), true);
            }
            let now = self.now;
            let due: Vec<String> = self.agent_pending[i]
                .iter_mut()
                .filter(|p| now - p.2 >= RESEND_S)
                .map(|p| {
                    p.2 = now;
                    p.1.clone()
                })
                .collect();
            for line in due {
                let rng = &mut self.link_rng[i].0;
                self.uplinks[i].send(now, line, rng);
            }
        }
    }

    fn agent_handle(&mut self, i: usize, line: &str) {
        match decode_frame(line.as_bytes()) {
            Ok(Frame::Message(env)) => {
                let ack = Control::Ack { session_id: env.session_id.clone(), seq: env.seq };
                match env.message {
                    Message::ChannelConfig(cfg) => {
                        if self.agents[i].config.is_none() {
                            self.session.log(&self.agents[i].id.clone(), "configured", json!({ "period_ms": cfg.period_ms }));
                        }
                        self.agents[i].config = Some(cfg);
                    }
                    Message::TaskAssignment { revision, assignment, .. } if revision > self.agents[i].applied_revision => {
                        let timing = &self.sc.timing;
                        self.agents[i].load_assignment(self.sc, timing, &assignment, revision);
                    }
                    _ => {}
                }
                self.agent_control(i, ack);
            }
            Ok(Frame::Control(Control::Ack { seq, .. })) => self.agent_pending[i].retain(|p| p.0 != seq),
            _ => {}
        }
    }

    fn lcs_receive(&mut self) {
        for i in 0..self.agents.len() {
            for line in self.uplinks[i].recv(self.now) {
                let Ok(frame) = decode_frame(line.as_bytes()) else { continue };
                match frame {
                    Frame::Control(Control::Ack { seq, .. }) => self.lcs_pending.retain(|p| !(p.agent == i && p.seq == seq)),
                    Frame::Control(_) => {}
                    Frame::Message(env) => self.lcs_handle(i, env),
                }
            }
        }
    }

    fn lcs_handle(&mut self, i: usize, env: Envelope) {
        match &env.message {
            Message::MeasurementReport(r) => {
                if let Ok(Ingest::Appended { recompute }) = self.registry.ingest_report(&env, self.now) {
                    if let Some(est) = self.estimator.as_mut() {
                        if matches!(self.stage, Stage::AreaSweep) {
                            est.push(r.clone());
                        }
                    }
                    if recompute {
                        self.refresh_estimate();
                    }
                }
            }
            Message::SweepResult(p) => {
                let ack = Control::Ack { session_id: env.session_id.clone(), seq: env.seq };
                let rng = &mut self.link_rng[i].1;
                self.downlinks[i].send(self.now, encode_control(&ack), rng);
                let key = (p.sme_id.clone(), p.start_s.to_bits());
                if !self.sweeps.iter().any(|s| (s.sme_id.clone(), s.start_s.to_bits()) == key) {
                    self.sweeps.push(p.clone());
                }
            }
            _ => {}
        }
    }

    fn refresh_estimate(&mut self) {
        if !matches!(self.stage, Stage::AreaSweep) {
            return;
        }
        let area = self.search_area;
        let Some(est) = self.estimator.as_mut() else { return };
        if let Some(e) = est.maybe_solve(self.now, area, &self.sc.rf, &self.lcs_params).cloned() {
            if let Ok(boundary) = derive_boundary(&e, self.lcs_params.boundary_sigmas) {
                self.session.log(
                    LCS,
                    "estimate",
                    json!({ "x": e.xy.x, "y": e.xy.y, "area_m2": boundary.area_m2(), "n": e.n_reports_used }),
                );
                self.publish(Message::LocationEstimate { estimate: e.clone(), boundary });
            }
            self.estimates.push(e);
        }
    }

    fn lcs_poll(&mut self) {
        let activated = self.registry.poll(self.now);
        let predefined = self.sc.network.predefined_uplink;
        for o in activated {
            if o.to == LCS {
                continue;
            }
            if let Some(i) = self.agents.iter().position(|a| a.id == o.to) {
                if predefined {
                    if let Message::ChannelConfig(cfg) = &o.envelope.message {
                        self.agents[i].config = Some(cfg.clone());
                    }
                } else {
                    self.lcs_send(i, o.envelope, true);
                }
            }
        }
        for id in self.registry.due_recomputes(self.now) {
            if id == self.session.session_id {
                self.refresh_estimate();
            }
        }
        let now = self.now;
        let due: Vec<(usize, String)> = self
            .lcs_pending
            .iter_mut()
            .filter(|p| now - p.last_sent >= RESEND_S)
            .map(|p| {
                p.last_sent = now;
                (p.agent, p.line.clone())
            })
            .collect();
        for (i, line) in due {
            let rng = &mut self.link_rng[i].1;
            self.downlinks[i].send(now, line, rng);
        }
    }

    // ---- decisions ----

    fn begin(&mut self) {
        let target_id = self.sc.target.tx_profile.target_id.clone();
        self.session.log(LCS, "call_connect_request", json!({ "target_id": target_id, "requester": LCS }));
        match self.registry.start_session(&target_id, LCS, self.sc.target.tx_profile.clone(), 0.0) {
            Ok(id) => {
                self.session.session_id = id.clone();
                for a in &self.agents {
                    let _ = self.registry.subscribe(&id, a.id.clone());
                }
            }
            Err(r) => {
                self.session.log(LCS, "call_connect_failed", json!({ "code": r.code, "detail": r.detail }));
                self.fail("call connection failed");
                return;
            }
        }
        let ids: Vec<String> = self.agents.iter().map(|a| a.id.clone()).collect();
        let plan = match self.sc.search.known_building {
            Some(b) => {
                self.search_area = self.sc.buildings[b].footprint;
                partition_and_route(PlanTarget::Building { index: b, building: &self.sc.buildings[b] }, &ids, 1)
            }
            None => {
                let fix = self.sc.initial_fix();
                let prior = PositionEstimate::from_fix(fix.center, fix.sigma_m, 0.0);
                let boundary = derive_boundary(&prior, self.lcs_params.boundary_sigmas).expect("prior covariance is PSD");
                self.search_area = boundary.bounding.intersection(&self.sc.extent).unwrap_or(self.sc.extent);
                self.session.log(
                    LCS,
                    "search_boundary",
                    json!({ "center": boundary.center, "semi_major_m": boundary.semi_major_m, "rect": self.search_area }),
                );
                self.estimates.push(prior);
                partition_and_route(
                    PlanTarget::Area {
                        rect: self.search_area,
                        roads: &self.sc.roads,
                        lane_spacing_m: self.sc.timing.sweep_lane_spacing_m,
                    },
                    &ids,
                    1,
                )
            }
        };
        match plan {
            Ok(plan) => self.assign_plan(plan),
            Err(e) => self.fail(&e.to_string()),
        }
    }

    fn fail(&mut self, reason: &str) {
        self.session.log(LCS, "failed", json!({ "reason": reason }));
        self.session.transition(Phase::Failed);
        self.stage = Stage::Done;
    }

    fn all_ready(&self) -> bool {
        (0..self.agents.len()).all(|i| self.ready(i))
    }

    /// True once the reports sent before everyone stopped have had time to land.
    fn settled(&mut self) -> bool {
        let lag = self.sc.network.latency_max_s + self.opts.dt_s;
        match self.settle_until {
            None => {
                self.settle_until = Some(self.now + lag);
                false
            }
            Some(t) if self.now >= t - 1e-9 => {
                self.settle_until = None;
                true
            }
            Some(_) => false,
        }
    }

    fn reports(&self) -> Vec<crate::sme::MeasurementReport> {
        self.registry
            .session(&self.session.session_id)
            .map(|s| s.measurement_reports())
            .unwrap_or_default()
    }

    fn sweeps_from(&self, agent: usize, since: f64) -> Vec<BearingProfile> {
        let id = &self.agents[agent].id;
        self.sweeps.iter().filter(|s| &s.sme_id == id && s.start_s >= since - 1e-9).cloned().collect()
    }

    fn decide(&mut self) {
        let stage = std::mem::replace(&mut self.stage, Stage::Done);
        self.stage = match stage {
            Stage::Connecting => self.on_connecting(),
            Stage::AreaSweep => self.on_area_sweep(),
            Stage::MoveToPeak { agent, peak_dbm } => self.on_move_to_peak(agent, peak_dbm),
            Stage::BuildingSweep { agent, peak_dbm, candidates } => self.on_building_sweep(agent, peak_dbm, candidates),
            Stage::VerifyMove { agent, peak_dbm, ranked, idx } => {
                if self.ready(agent) {
                    self.agents[agent].push(Task::Dwell { secs: self.sc.timing.verify_dwell_s });
                    Stage::VerifyDwell { agent, peak_dbm, ranked, idx, start: self.now }
                } else {
                    Stage::VerifyMove { agent, peak_dbm, ranked, idx }
                }
            }
            Stage::VerifyDwell { agent, peak_dbm, ranked, idx, start } => self.on_verify_dwell(agent, peak_dbm, ranked, idx, start),
            Stage::Homing { agent, steps, sweeping } => self.on_homing(agent, steps, sweeping),
            Stage::FloorSweep { building } => self.on_floor_sweep(building),
            Stage::RoomSweeps { agent, building, floor, peak, positions, next, moving } => {
                self.on_room_sweeps(agent, building, floor, peak, positions, next, moving)
            }
            Stage::RoomDoor { agent, building, floor, ranked, idx } => self.on_room_door(agent, building, floor, ranked, idx),
            Stage::Knock { agent, building, floor, ranked, idx } => {
                if self.ready(agent) {
                    self.session.walk(&[Phase::FloorRoomSearch, Phase::RoomConfirm]);
                    self.try_room(agent, building, floor, ranked, idx + 1)
                } else {
                    Stage::Knock { agent, building, floor, ranked, idx }
                }
            }
            Stage::Done => Stage::Done,
        };
    }

    fn on_connecting(&mut self) -> Stage {
        let active = self.registry.session(&self.session.session_id).is_some_and(|s| s.is_active());
        if !active {
            return Stage::Connecting;
        }
        self.session.log(LCS, "call_connected", json!({ "session_id": self.session.session_id }));
        self.session.transition(Phase::BuildingSearch);
        match self.sc.search.known_building {
            Some(b) => {
                self.session.log(LCS, "building_known", json!({ "building": b }));
                self.session.walk(&[Phase::MoveToPeak, Phase::BuildingConfirm]);
                self.accept_building(b)
            }
            None => Stage::AreaSweep,
        }
    }

    fn on_area_sweep(&mut self) -> Stage {
        if !self.all_ready() || !self.settled() {
            return Stage::AreaSweep;
        }
        let region = MapRegion::Outdoor { area: self.search_area };
        let map = match interpolate_idw(&self.reports(), region, self.lcs_params.outdoor_cell_m, &self.lcs_params) {
            Ok(m) => m,
            Err(e) => {
                self.fail(&format!("no contour map: {e}"));
                return Stage::Done;
            }
        };
        let Some(peak) = map.peak else {
            self.fail("contour map fully masked");
            return Stage::Done;
        };
        let peak_xy = map.cell_center(peak.row, peak.col);
        self.session.log(LCS, "contour_peak", json!({ "x": peak_xy.x, "y": peak_xy.y, "rssi_dbm": peak.value_dbm }));
        // steer by measured cells only; between lanes the map is extrapolated
        let reports = self.reports();
        let peak = map.sampled_peak(reports.iter().filter(|r| r.rssi.valid).map(|r| r.pose.xy())).unwrap_or(peak);
        let goal = self.on_road(map.cell_center(peak.row, peak.col));
        self.push_contour(map);
        let agent = self.nearest_agent(goal);
        self.move_agent(agent, Level::Outdoor, goal);
        self.session.transition(Phase::MoveToPeak);
        Stage::MoveToPeak { agent, peak_dbm: peak.value_dbm }
    }

    fn push_contour(&mut self, mut map: ContourMap) {
        map.generation = self.contours.len() as u64 + 1;
        self.publish(Message::ContourMap(map.clone()));
        self.contours.push(map);
    }

    /// Nearest road point to `p`, or `p` itself when there are no roads.
    fn on_road(&self, p: Point) -> Point {
        self.sc
            .roads
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| r.sample(r.project(p)).0)
            .min_by(|a, b| a.dist(p).total_cmp(&b.dist(p)))
            .unwrap_or(p)
    }

    fn nearest_agent(&self, p: Point) -> usize {
        let mut best = 0;
        for i in 1..self.agents.len() {
            if self.agents[i].position().dist(p) < self.agents[best].position().dist(p) {
                best = i;
            }
        }
        best
    }

    fn start_building_sweeps(&mut self, agent: usize) {
        let sw = self.sc.timing.building_sweep;
        let here = self.agents[agent].position();
        let k = sw.positions.max(1);
        let speed = self.agents[agent].outdoor_speed;
        let mut at = here;
        for j in 0..k {
            let off = sw.spacing_m * (j as f64 - (k as f64 - 1.0) / 2.0);
            let p = self.sc.extent.closest_point(Point::new(here.x + off, here.y));
            if p.dist(at) > 1e-6 {
                self.agents[agent].push(Task::Travel {
                    path: Polyline::new(vec![at, p]),
                    level: Level::Outdoor,
                    speed,
                    plan_leg: false,
                });
                at = p;
            }
            self.agents[agent].push(Task::Sweep { n: sw.n_bearings, dwell: sw.dwell_s });
        }
    }

    fn on_move_to_peak(&mut self, agent: usize, peak_dbm: f64) -> Stage {
        if !self.ready(agent) {
            return Stage::MoveToPeak { agent, peak_dbm };
        }
        self.session.transition(Phase::BuildingConfirm);
        let here = self.agents[agent].position();
        let candidates = candidate_buildings(self.sc, here, confirm::CANDIDATE_RADIUS_M);
        if candidates.is_empty() {
            self.session.log(LCS, "no_candidate_buildings", json!({ "x": here.x, "y": here.y }));
            return self.on_homing(agent, 0, false);
        }
        self.sweeps.clear();
        self.start_building_sweeps(agent);
        Stage::BuildingSweep { agent, peak_dbm, candidates }
    }

    fn on_building_sweep(&mut self, agent: usize, peak_dbm: f64, candidates: Vec<usize>) -> Stage {
        let need = self.sc.timing.building_sweep.positions.max(1);
        let got = self.sweeps_from(agent, 0.0);
        if got.len() < need {
            return Stage::BuildingSweep { agent, peak_dbm, candidates };
        }
        let best = got
            .iter()
            .max_by(|a, b| a.peak_rssi_dbm().total_cmp(&b.peak_rssi_dbm()))
            .expect("at least one sweep");
        let ranked = rank_buildings(self.sc, best, &candidates);
        self.session.log(
            LCS,
            "building_ranking",
            json!({ "argmax_bearing_rad": best.argmax_bearing_rad, "ranked": ranked.iter().take(3).collect::<Vec<_>>() }),
        );
        self.try_building(agent, peak_dbm, ranked, 0)
    }

    fn try_building(&mut self, agent: usize, peak_dbm: f64, ranked: Vec<usize>, idx: usize) -> Stage {
        let Some(&b) = ranked.get(idx) else {
            self.fail("no building candidates left");
            return Stage::Done;
        };
        if self.sc.timing.verify_dwell_s <= 0.0 {
            return self.accept_building(b);
        }
        let fp = self.sc.buildings[b].footprint;
        let here = self.agents[agent].position();
        let cp = fp.closest_point(here);
        let d = here.dist(cp);
        let out = if d > 1e-6 {
            cp.lerp(here, VERIFY_OFFSET_M / d)
        } else {
            cp.offset(fp.center().bearing_to(cp), VERIFY_OFFSET_M)
        };
        self.move_agent(agent, Level::Outdoor, out);
        Stage::VerifyMove { agent, peak_dbm, ranked, idx }
    }

    fn on_verify_dwell(&mut self, agent: usize, peak_dbm: f64, ranked: Vec<usize>, idx: usize, start: f64) -> Stage {
        if !self.ready(agent) || !self.settled() {
            return Stage::VerifyDwell { agent, peak_dbm, ranked, idx, start };
        }
        let id = self.agents[agent].id.clone();
        let vals: Vec<f64> = self
            .reports()
            .iter()
            .filter(|r| r.sme_id == id && r.timestamp_s > start && r.rssi.valid)
            .map(|r| r.rssi.value_dbm)
            .collect();
        let mean = if vals.is_empty() { f64::NEG_INFINITY } else { vals.iter().sum::<f64>() / vals.len() as f64 };
        let b = ranked[idx];
        let ok = mean >= peak_dbm - self.sc.timing.verify_margin_db;
        self.session.log(
            LCS,
            "building_verification",
            json!({ "building": b, "mean_dbm": if mean.is_finite() { json!(mean) } else { json!(null) }, "peak_dbm": peak_dbm, "accepted": ok }),
        );
        if ok {
            return self.accept_building(b);
        }
        self.retries += 1;
        if self.retries > self.sc.timing.max_retries {
            self.fail("retries exhausted");
            return Stage::Done;
        }
        self.session.walk(&[Phase::BuildingSearch, Phase::MoveToPeak, Phase::BuildingConfirm]);
        self.try_building(agent, peak_dbm, ranked, idx + 1)
    }

    fn accept_building(&mut self, b: usize) -> Stage {
        self.building_time = Some(self.now);
        self.identified_building = Some(b);
        self.session.log(LCS, "building_identified", json!({ "building": b }));
        self.session.transition(Phase::FloorRoomSearch);
        self.search_area = self.sc.buildings[b].footprint;
        let ids: Vec<String> = self.agents.iter().map(|a| a.id.clone()).collect();
        let known_plan_sent = self.sc.search.known_building == Some(b) && self.revision > 0 && self.session.plan.as_ref().is_some_and(|p| p.phase == PlanPhase::FloorRoom);
        if !known_plan_sent {
            match partition_and_route(PlanTarget::Building { index: b, building: &self.sc.buildings[b] }, &ids, self.revision + 1) {
                Ok(plan) => self.assign_plan(plan),
                Err(e) => {
                    self.fail(&e.to_string());
                    return Stage::Done;
                }
            }
        }
        for a in &mut self.agents {
            a.legs_done.clear();
        }
        Stage::FloorSweep { building: b }
    }

    fn on_homing(&mut self, agent: usize, steps: u32, sweeping: bool) -> Stage {
        if !self.ready(agent) {
            return Stage::Homing { agent, steps, sweeping };
        }
        let target = self.sc.target.pose;
        let here = self.agents[agent].position();
        if !target.is_indoor() && here.dist(target.xy()) <= self.sc.timing.outdoor_found_radius_m {
            self.building_time = Some(self.now);
            self.room_time = Some(self.now);
            self.session.log(LCS, "caller_found_outdoors", json!({ "x": here.x, "y": here.y }));
            self.session.walk(&[Phase::FloorRoomSearch, Phase::RoomConfirm, Phase::Found]);
            return Stage::Done;
        }
        if sweeping {
            let Some(s) = self.sweeps.last().cloned() else {
                return Stage::Homing { agent, steps, sweeping };
            };
            self.sweeps.clear();
            let to = here.offset(s.argmax_bearing_rad, HOMING_STEP_M);
            let to = self.sc.extent.closest_point(to);
            self.move_agent(agent, Level::Outdoor, to);
            return Stage::Homing { agent, steps: steps + 1, sweeping: false };
        }
        if steps >= MAX_HOMING_STEPS {
            self.fail("outdoor homing did not converge");
            return Stage::Done;
        }
        self.sweeps.clear();
        let sw = self.sc.timing.building_sweep;
        self.agents[agent].push(Task::Sweep { n: sw.n_bearings, dwell: sw.dwell_s });
        Stage::Homing { agent, steps, sweeping: true }
    }

    /// Peak of each floor of `b` that has reports.
    fn floor_maps(&self, b: usize, floors: &[usize]) -> Vec<(usize, ContourMap)> {
        let reports = self.reports();
        let fp = self.sc.buildings[b].footprint;
        floors
            .iter()
            .filter_map(|&f| {
                let region = MapRegion::Floor { building: b, floor: f, area: fp };
                interpolate_idw(&reports, region, self.lcs_params.indoor_cell_m, &self.lcs_params).ok().map(|m| (f, m))
            })
            .filter(|(_, m)| m.peak.is_some())
            .collect()
    }

    /// Floors whose assigned corridor has been walked completely.
    fn walked_floors(&self, b: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .agents
            .iter()
            .flat_map(|a| a.legs_done.iter())
            .filter_map(|l| match *l {
                Level::Indoor { building, floor } if building == b => Some(floor),
                _ => None,
            })
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn early_stop(&self, b: usize) -> bool {
        let Some(margin) = self.sc.timing.early_peak_margin_db else { return false };
        let walked = self.walked_floors(b);
        if walked.is_empty() {
            return false;
        }
        let maps = self.floor_maps(b, &walked);
        let peak_of = |f: usize| maps.iter().find(|(g, _)| *g == f).and_then(|(_, m)| m.peak).map(|p| p.value_dbm);
        let Some((best, best_v)) = walked
            .iter()
            .filter_map(|&f| peak_of(f).map(|v| (f, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        else {
            return false;
        };
        let n = self.sc.buildings[b].floor_count;
        let neighbours = [best.checked_sub(1), (best + 1 < n).then_some(best + 1)];
        neighbours.iter().flatten().all(|&g| walked.contains(&g) && peak_of(g).is_none_or(|v| best_v - v >= margin))
    }

    fn on_floor_sweep(&mut self, b: usize) -> Stage {
        let stop_early = !self.all_ready() && self.early_stop(b);
        if stop_early {
            self.session.log(LCS, "floor_search_stopped_early", json!({ "walked": self.walked_floors(b) }));
            for a in &mut self.agents {
                a.cancel();
            }
            self.expected_revision.iter_mut().for_each(|r| *r = 0);
        }
        if !(stop_early || self.all_ready()) || !self.settled() {
            return Stage::FloorSweep { building: b };
        }
        let floors: Vec<usize> = (0..self.sc.buildings[b].floor_count).collect();
        let maps = self.floor_maps(b, &floors);
        let Some((floor, map)) = maps
            .iter()
            .max_by(|x, y| {
                let (px, py) = (x.1.peak.unwrap().value_dbm, y.1.peak.unwrap().value_dbm);
                px.total_cmp(&py).then(y.0.cmp(&x.0))
            })
            .cloned()
        else {
            self.fail("no indoor reports");
            return Stage::Done;
        };
        for (_, m) in maps {
            self.push_contour(m);
        }
        let peak = map.peak_point().expect("peak exists");
        self.session.log(
            LCS,
            "floor_peak",
            json!({ "floor": floor, "x": peak.x, "y": peak.y, "rssi_dbm": map.peak.unwrap().value_dbm }),
        );
        let corridor = &self.sc.buildings[b].floors[floor].corridor;
        let s_peak = corridor.project(peak);
        let sw = self.sc.timing.room_sweep;
        let k = sw.positions.max(1);
        let positions: Vec<Point> = (0..k)
            .map(|j| {
                let s = s_peak + sw.spacing_m * (j as f64 - (k as f64 - 1.0) / 2.0);
                corridor.sample(s.clamp(0.0, corridor.length())).0
            })
            .collect();
        let level = Level::Indoor { building: b, floor };
        let timing = &self.sc.timing;
        let agent = (0..self.agents.len())
            .min_by(|&x, &y| {
                let ex = self.agents[x].eta(self.sc, timing, level, positions[0]);
                let ey = self.agents[y].eta(self.sc, timing, level, positions[0]);
                ex.total_cmp(&ey).then(x.cmp(&y))
            })
            .expect("at least one rescuer");
        self.session.transition(Phase::RoomConfirm);
        self.sweeps.clear();
        self.move_agent(agent, level, positions[0]);
        Stage::RoomSweeps { agent, building: b, floor, peak, positions, next: 0, moving: true }
    }

    #[allow(clippy::too_many_arguments)]
    fn on_room_sweeps(
        &mut self,
        agent: usize,
        building: usize,
        floor: usize,
        peak: Point,
        positions: Vec<Point>,
        next: usize,
        moving: bool,
    ) -> Stage {
        if moving {
            if !self.ready(agent) {
                return Stage::RoomSweeps { agent, building, floor, peak, positions, next, moving };
            }
            let sw = self.sc.timing.room_sweep;
            self.agents[agent].push(Task::Sweep { n: sw.n_bearings, dwell: sw.dwell_s });
            return Stage::RoomSweeps { agent, building, floor, peak, positions, next, moving: false };
        }
        if self.sweeps.len() <= next {
            return Stage::RoomSweeps { agent, building, floor, peak, positions, next, moving };
        }
        let next = next + 1;
        if next < positions.len() {
            self.move_agent(agent, Level::Indoor { building, floor }, positions[next]);
            return Stage::RoomSweeps { agent, building, floor, peak, positions, next, moving: true };
        }
        let sweeps = self.sweeps.clone();
        let ranked = match rank_rooms(self.sc, building, floor, &sweeps, peak, confirm::ROOM_RAY_RANGE_M) {
            Ok(r) => r,
            Err(e) => {
                self.fail(&e.to_string());
                return Stage::Done;
            }
        };
        self.session.log(
            LCS,
            "room_ranking",
            json!({ "floor": floor, "ranked": ranked.iter().take(3).collect::<Vec<_>>(), "bearings": sweeps.iter().map(|s| s.argmax_bearing_rad).collect::<Vec<_>>() }),
        );
        self.try_room(agent, building, floor, ranked, 0)
    }

    fn door_of(&self, building: usize, floor: usize, room: usize) -> Point {
        let f = &self.sc.buildings[building].floors[floor];
        let c = f.rooms[room].center();
        f.corridor.sample(f.corridor.project(c)).0
    }

    fn try_room(&mut self, agent: usize, building: usize, floor: usize, ranked: Vec<usize>, idx: usize) -> Stage {
        let Some(&room) = ranked.get(idx) else {
            self.fail("no rooms left");
            return Stage::Done;
        };
        let door = self.door_of(building, floor, room);
        self.session.log(LCS, "room_identified", json!({ "building": building, "floor": floor, "room": room, "attempt": idx + 1 }));
        self.identified_room = Some(RoomRef { building, floor, room });
        self.move_agent(agent, Level::Indoor { building, floor }, door);
        Stage::RoomDoor { agent, building, floor, ranked, idx }
    }

    fn on_room_door(&mut self, agent: usize, building: usize, floor: usize, ranked: Vec<usize>, idx: usize) -> Stage {
        if !self.ready(agent) {
            return Stage::RoomDoor { agent, building, floor, ranked, idx };
        }
        let room = ranked[idx];
        let t = &self.sc.target;
        let correct = t.pose.building_index == Some(building) && t.pose.floor_index == Some(floor) && t.room == Some(room);
        if self.first_room.is_none() {
            self.first_room = Some(correct);
        }
        let actor = self.agents[agent].id.clone();
        self.session.log(&actor, "door_opened", json!({ "floor": floor, "room": room, "caller_inside": correct }));
        if correct {
            self.room_time = Some(self.now);
            self.session.transition(Phase::Found);
            return Stage::Done;
        }
        self.retries += 1;
        if self.retries > self.sc.timing.max_retries {
            self.fail("retries exhausted");
            return Stage::Done;
        }
        self.agents[agent].push(Task::Wait { secs: self.sc.timing.knock_time_s });
        Stage::Knock { agent, building, floor, ranked, idx }
    }

    fn finish(self) -> SessionRun {
        let t = &self.sc.target;
        let building_correct = self.identified_building.is_some() && self.identified_building == t.pose.building_index
            || (!t.pose.is_indoor() && self.session.phase == Phase::Found);
        let room_correct = match self.identified_room {
            Some(r) => Some(r.building) == t.pose.building_index && Some(r.floor) == t.pose.floor_index && Some(r.room) == t.room,
            None => !t.pose.is_indoor() && self.session.phase == Phase::Found,
        };
        let success = self.session.phase == Phase::Found;
        let outcome = SearchOutcome {
            policy: Policy::Helps,
            seed: self.seed,
            success,
            final_phase: self.session.phase,
            building_id_time_s: self.building_time,
            room_id_time_s: self.room_time,
            total_time_s: self.now,
            building_correct,
            room_correct: room_correct && success,
            first_room_correct: self.first_room.unwrap_or(success),
            identified_building: self.identified_building,
            identified_room: self.identified_room,
            retries: self.retries,
            distance_traveled_m: self
                .agents
                .iter()
                .map(|a| RescuerDistance { id: a.id.clone(), distance_m: a.sme.odometer_m })
                .collect(),
        };
        SessionRun { outcome, session: self.session, contours: self.contours, estimates: self.estimates, messages: self.messages }
    }
}
