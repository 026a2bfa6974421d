//! Rescuer agents: an SME plus the queue of things its carrier is doing.

use crate::geometry::{Point, Polyline};
use crate::lcs::Assignment;
use crate::rf::ShadowingField;
use crate::seeding::SimRng;
use crate::sme::{level_pose, BearingProfile, Level, MeasurementReport, SmeState};
use crate::uplink::ChannelConfig;
use crate::world::{RescuerSpec, Scenario, TimingParams};
use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Task {
    Travel { path: Polyline, level: Level, speed: f64, plan_leg: bool },
    /// Idle for a fixed time without measuring (stairs, knocking).
    Wait { secs: f64 },
    Sweep { n: usize, dwell: f64 },
    /// Stationary omnidirectional measurement.
    Dwell { secs: f64 },
    /// Instant level change at a point (entering or leaving a building).
    Enter { level: Level, at: Point },
}

impl Task {
    fn duration(&self) -> f64 {
        match self {
            Task::Travel { path, speed, .. } => path.length() / speed,
            Task::Wait { secs } | Task::Dwell { secs } => *secs,
            Task::Sweep { n, dwell } => *n as f64 * dwell,
            Task::Enter { .. } => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Active {
    Travel { plan_leg: bool },
    Wait { until: f64 },
    Sweep { until: f64, profile: Box<BearingProfile> },
    Dwell { until: f64 },
}

/// What an agent produced during one tick.
#[derive(Debug, Default)]
pub(crate) struct TickOutput {
    pub reports: Vec<MeasurementReport>,
    pub sweep: Option<BearingProfile>,
}

#[derive(Debug, Clone)]
pub(crate) struct Agent {
    pub id: String,
    pub outdoor_speed: f64,
    pub sme: SmeState,
    pub rng: SimRng,
    pub config: Option<ChannelConfig>,
    pub level: Level,
    tasks: VecDeque<Task>,
    active: Option<Active>,
    /// Latest plan revision whose tasks this agent has loaded.
    pub applied_revision: u64,
    pub legs_done: Vec<Level>,
}

impl Agent {
    pub fn new(spec: &RescuerSpec, sme: SmeState, rng: SimRng) -> Self {
        Agent {
            id: spec.id.clone(),
            outdoor_speed: spec.speed(),
            sme,
            rng,
            config: None,
            level: Level::Outdoor,
            tasks: VecDeque::new(),
            active: None,
            applied_revision: 0,
            legs_done: Vec::new(),
        }
    }

    pub fn idle(&self) -> bool {
        self.active.is_none() && self.tasks.is_empty()
    }

    pub fn position(&self) -> Point {
        self.sme.pose.xy()
    }

    /// Drops everything queued or in progress.
    pub fn cancel(&mut self) {
        self.tasks.clear();
        self.active = None;
        self.sme.hold();
    }

    pub fn push(&mut self, t: Task) {
        self.tasks.push_back(t);
    }

    /// Replaces the queue with the travel needed to walk `assignment`.
    pub fn load_assignment(&mut self, scenario: &Scenario, timing: &TimingParams, assignment: &Assignment, revision: u64) {
        self.cancel();
        let mut cur = Cursor { at: self.position(), level: self.level };
        for leg in &assignment.legs {
            let Some(start) = leg.path.first() else { continue };
            route_to(scenario, timing, self.outdoor_speed, &mut cur, leg.level, start, &mut self.tasks);
            if leg.path.length() > 1e-9 {
                self.tasks.push_back(Task::Travel {
                    path: leg.path.clone(),
                    level: leg.level,
                    speed: speed_on(leg.level, self.outdoor_speed, timing),
                    plan_leg: true,
                });
            }
            cur.at = leg.path.last().unwrap_or(start);
        }
        self.applied_revision = revision;
    }

    /// Time to reach `p` on `level` from where the agent stands now.
    pub fn eta(&self, scenario: &Scenario, timing: &TimingParams, level: Level, p: Point) -> f64 {
        let mut cur = Cursor { at: self.position(), level: self.level };
        let mut tasks = VecDeque::new();
        route_to(scenario, timing, self.outdoor_speed, &mut cur, level, p, &mut tasks);
        tasks.iter().map(Task::duration).sum()
    }

    /// Advances the agent to `t1 = clock + dt`.
    pub fn tick(&mut self, dt: f64, scenario: &Scenario, shadowing: &ShadowingField) -> TickOutput {
        let mut out = TickOutput::default();
        let t1 = self.sme.clock_s + dt;
        loop {
            match self.active.take() {
                None => {
                    let Some(task) = self.tasks.pop_front() else {
                        self.sme.step(dt, scenario, None, shadowing, &mut self.rng);
                        break;
                    };
                    self.start(task, scenario, shadowing);
                    if self.active.is_none() {
                        continue;
                    }
                }
                Some(Active::Travel { plan_leg }) => {
                    out.reports.extend(self.sme.step(dt, scenario, self.config.as_ref(), shadowing, &mut self.rng));
                    if self.sme.route_done() {
                        if plan_leg {
                            self.legs_done.push(self.level);
                        }
                    } else {
                        self.active = Some(Active::Travel { plan_leg });
                    }
                    break;
                }
                Some(Active::Wait { until }) => {
                    self.sme.step(dt, scenario, None, shadowing, &mut self.rng);
                    if self.sme.clock_s < until - 1e-9 {
                        self.active = Some(Active::Wait { until });
                    }
                    break;
                }
                Some(Active::Dwell { until }) => {
                    out.reports.extend(self.sme.step(dt, scenario, self.config.as_ref(), shadowing, &mut self.rng));
                    if self.sme.clock_s < until - 1e-9 {
                        self.active = Some(Active::Dwell { until });
                    }
                    break;
                }
                Some(Active::Sweep { until, profile }) => {
                    self.sme.clock_s = t1;
                    if t1 >= until - 1e-9 {
                        out.sweep = Some(*profile);
                    } else {
                        self.active = Some(Active::Sweep { until, profile });
                    }
                    break;
                }
            }
        }
        self.sme.pending_reports.clear();
        out
    }

    fn start(&mut self, task: Task, scenario: &Scenario, shadowing: &ShadowingField) {
        let now = self.sme.clock_s;
        match task {
            Task::Travel { path, level, speed, plan_leg } => {
                self.level = level;
                self.sme.speed_mps = speed;
                self.sme.assign_route(path, level, scenario);
                self.active = Some(Active::Travel { plan_leg });
            }
            Task::Wait { secs } => {
                self.sme.hold();
                self.active = Some(Active::Wait { until: now + secs });
            }
            Task::Dwell { secs } => {
                self.sme.hold();
                self.active = Some(Active::Dwell { until: now + secs });
            }
            Task::Enter { level, at } => {
                self.level = level;
                let heading = self.sme.pose.heading;
                self.sme.teleport(level_pose(scenario, level, at, heading));
            }
            Task::Sweep { n, dwell } => {
                match self.sme.directional_sweep(n, dwell, scenario, self.config.as_ref(), shadowing, &mut self.rng) {
                    Ok(profile) => {
                        self.active = Some(Active::Sweep { until: self.sme.clock_s, profile: Box::new(profile) });
                        // the wall clock catches up with the sweep while the agent waits
                        self.sme.clock_s = now;
                    }
                    Err(_) => {
                        // no configuration yet: stand by for one dwell
                        self.active = Some(Active::Wait { until: now + dwell });
                    }
                }
            }
        }
    }
}

fn speed_on(level: Level, outdoor_speed: f64, timing: &TimingParams) -> f64 {
    match level {
        Level::Outdoor => outdoor_speed,
        Level::Indoor { .. } => timing.walk_speed_mps,
    }
}

#[derive(Debug, Clone, Copy)]
struct Cursor {
    at: Point,
    level: Level,
}

fn travel(cur: &mut Cursor, p: Point, speed: f64, out: &mut VecDeque<Task>) {
    if cur.at.dist(p) > 1e-6 {
        out.push_back(Task::Travel {
            path: Polyline::new(vec![cur.at, p]),
            level: cur.level,
            speed,
            plan_leg: false,
        });
    }
    cur.at = p;
}

/// Appends the moves that bring `cur` to `p` on `level`. Buildings are
/// entered and left through their entrance; floors change on the spot at a
/// fixed cost.
fn route_to(
    scenario: &Scenario,
    timing: &TimingParams,
    outdoor_speed: f64,
    cur: &mut Cursor,
    level: Level,
    p: Point,
    out: &mut VecDeque<Task>,
) {
    let walk = timing.walk_speed_mps;
    match (cur.level, level) {
        (Level::Outdoor, Level::Outdoor) => travel(cur, p, outdoor_speed, out),
        (Level::Outdoor, Level::Indoor { building, .. }) => {
            let e = scenario.buildings[building].entrance();
            travel(cur, e, outdoor_speed, out);
            let ground = Level::Indoor { building, floor: 0 };
            out.push_back(Task::Enter { level: ground, at: e });
            cur.level = ground;
            route_to(scenario, timing, outdoor_speed, cur, level, p, out);
        }
        (Level::Indoor { building, .. }, Level::Outdoor) => {
            let e = scenario.buildings[building].entrance();
            route_to(scenario, timing, outdoor_speed, cur, Level::Indoor { building, floor: 0 }, e, out);
            out.push_back(Task::Enter { level: Level::Outdoor, at: e });
            cur.level = Level::Outdoor;
            travel(cur, p, outdoor_speed, out);
        }
        (Level::Indoor { building: b0, floor: f0 }, Level::Indoor { building: b1, floor: f1 }) => {
            if b0 != b1 {
                let e = scenario.buildings[b1].entrance();
                route_to(scenario, timing, outdoor_speed, cur, Level::Outdoor, e, out);
                route_to(scenario, timing, outdoor_speed, cur, level, p, out);
                return;
            }
            travel(cur, p, walk, out);
            if f0 != f1 {
                out.push_back(Task::Wait { secs: timing.floor_change_s });
                out.push_back(Task::Enter { level, at: p });
                cur.level = level;
            }
        }
    }
}
