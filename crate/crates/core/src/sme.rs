//! Portable signal measurement equipment carried by a rescuer.
//!
//! An [`SmeState`] follows its assigned route at constant speed and measures
//! every uplink burst of the target, producing one [`MeasurementReport`] per
//! burst. In directional mode it stands still and can run a bearing sweep.

use crate::geometry::{wrap_2pi, Point, Polyline};
use crate::rf::{AntennaPattern, ShadowingField};
use crate::uplink::{synthesize_rssi, tx_times_in_step, ChannelConfig, MeasurementNoise, RssiSample};
use crate::world::{Pose, Scenario};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SmeError {
    #[error("sweep needs at least 4 bearings, got {0}")]
    TooFewBearings(usize),
    #[error("dwell {dwell_s} s is shorter than one uplink period ({period_s} s)")]
    InsufficientSamples { dwell_s: f64, period_s: f64 },
    #[error("SME has no uplink channel configuration")]
    NotConfigured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmeParams {
    pub noise: MeasurementNoise,
    pub omni: AntennaPattern,
    pub directional: AntennaPattern,
    /// Standard deviation of the SME's own position error (0 = exact).
    pub self_pose_sigma_m: f64,
}

impl Default for SmeParams {
    fn default() -> Self {
        SmeParams {
            noise: MeasurementNoise::default(),
            omni: AntennaPattern::omni(),
            directional: AntennaPattern::directional(),
            self_pose_sigma_m: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmeMode {
    Omni,
    Directional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementReport {
    pub sme_id: String,
    pub target_id: String,
    pub timestamp_s: f64,
    pub pose: Pose,
    pub mode: SmeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading_rad: Option<f64>,
    pub rssi: RssiSample,
}

/// Where a route is walked or driven.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Outdoor,
    Indoor { building: usize, floor: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveRoute {
    pub path: Polyline,
    pub level: Level,
    pub progress: f64,
    length: f64,
}

impl ActiveRoute {
    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn remaining(&self) -> f64 {
        self.length - self.progress
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearingSample {
    pub bearing_rad: f64,
    pub mean_rssi_dbm: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearingProfile {
    pub sme_id: String,
    pub position: Pose,
    pub start_s: f64,
    pub entries: Vec<BearingSample>,
    pub argmax_bearing_rad: f64,
}

impl BearingProfile {
    /// Builds a profile from per-bearing means; ties resolve to the lowest
    /// bearing index.
    pub fn from_entries(sme_id: impl Into<String>, position: Pose, start_s: f64, entries: Vec<BearingSample>) -> Self {
        let mut best = 0;
        for (i, e) in entries.iter().enumerate() {
            if e.mean_rssi_dbm > entries[best].mean_rssi_dbm {
                best = i;
            }
        }
        let argmax_bearing_rad = entries.get(best).map_or(0.0, |e| e.bearing_rad);
        BearingProfile {
            sme_id: sme_id.into(),
            position,
            start_s,
            entries,
            argmax_bearing_rad,
        }
    }

    pub fn peak_rssi_dbm(&self) -> f64 {
        self.entries.iter().map(|e| e.mean_rssi_dbm).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SmeState {
    pub id: String,
    pub pose: Pose,
    pub mode: SmeMode,
    pub speed_mps: f64,
    pub route: Option<ActiveRoute>,
    pub pending_reports: VecDeque<MeasurementReport>,
    pub clock_s: f64,
    pub odometer_m: f64,
    pub params: SmeParams,
}

impl SmeState {
    pub fn new(id: impl Into<String>, pose: Pose, speed_mps: f64, params: SmeParams) -> Self {
        SmeState {
            id: id.into(),
            pose,
            mode: SmeMode::Omni,
            speed_mps,
            route: None,
            pending_reports: VecDeque::new(),
            clock_s: 0.0,
            odometer_m: 0.0,
            params,
        }
    }

    /// Starts following `path` from its first vertex.
    pub fn assign_route(&mut self, path: Polyline, level: Level, scenario: &Scenario) {
        let length = path.length();
        self.mode = SmeMode::Omni;
        self.pose = level_pose(scenario, level, path.first().unwrap_or(self.pose.xy()), self.pose.heading);
        self.route = Some(ActiveRoute {
            path,
            level,
            progress: 0.0,
            length,
        });
    }

    /// Moves the SME to `pose` without travelling (floor changes).
    pub fn teleport(&mut self, pose: Pose) {
        self.pose = pose;
        self.route = None;
    }

    pub fn hold(&mut self) {
        self.route = None;
    }

    pub fn route_done(&self) -> bool {
        self.route.as_ref().is_none_or(|r| r.remaining() <= 1e-9)
    }

    pub fn is_moving(&self) -> bool {
        self.mode == SmeMode::Omni && !self.route_done()
    }

    fn pattern(&self) -> AntennaPattern {
        match self.mode {
            SmeMode::Omni => self.params.omni,
            SmeMode::Directional => self.params.directional,
        }
    }

    fn pose_at_progress(&self, scenario: &Scenario, s: f64) -> Pose {
        match &self.route {
            Some(r) => {
                let (p, h) = r.path.sample(s);
                level_pose(scenario, r.level, p, h)
            }
            None => self.pose,
        }
    }

    fn reported_pose<R: Rng + ?Sized>(&self, true_pose: Pose, rng: &mut R) -> Pose {
        let sigma = self.params.self_pose_sigma_m;
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("finite sigma");
            true_pose.with_xy(Point::new(true_pose.x + n.sample(rng), true_pose.y + n.sample(rng)))
        } else {
            true_pose
        }
    }

    /// Advances the SME by `dt_s` and measures every burst in
    /// `(clock, clock + dt]`. Reports are returned and also queued on
    /// `pending_reports`.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        dt_s: f64,
        scenario: &Scenario,
        config: Option<&ChannelConfig>,
        shadowing: &ShadowingField,
        rng: &mut R,
    ) -> Vec<MeasurementReport> {
        debug_assert!(dt_s > 0.0);
        let t0 = self.clock_s;
        let t1 = t0 + dt_s;
        let moving = self.mode == SmeMode::Omni;
        let (s0, len) = self.route.as_ref().map_or((0.0, 0.0), |r| (r.progress, r.length));
        let speed = if moving { self.speed_mps } else { 0.0 };
        let mut out = Vec::new();
        if let Some(cfg) = config {
            let pattern = self.pattern();
            for t in tx_times_in_step(cfg, t0, t1) {
                let s = (s0 + speed * (t - t0)).min(len);
                let mut pose = self.pose_at_progress(scenario, s);
                if self.mode == SmeMode::Directional {
                    pose.heading = self.pose.heading;
                }
                let heading = pose.heading;
                let rssi = synthesize_rssi(
                    cfg,
                    &self.params.noise,
                    &pose,
                    &pattern,
                    heading,
                    scenario,
                    shadowing,
                    t,
                    rng,
                );
                let reported = self.reported_pose(pose, rng);
                out.push(MeasurementReport {
                    sme_id: self.id.clone(),
                    target_id: cfg.target_id.clone(),
                    timestamp_s: t,
                    pose: reported,
                    mode: self.mode,
                    heading_rad: (self.mode == SmeMode::Directional).then_some(heading),
                    rssi,
                });
            }
        }
        if self.route.is_some() {
            let s1 = (s0 + speed * dt_s).min(len);
            self.odometer_m += s1 - s0;
            let pose = self.pose_at_progress(scenario, s1);
            if let Some(r) = self.route.as_mut() {
                r.progress = s1;
            }
            if moving {
                self.pose = pose;
            }
        }
        self.clock_s = t1;
        self.pending_reports.extend(out.iter().cloned());
        out
    }

    /// Stationary directional sweep over `n_bearings` evenly spaced headings,
    /// dwelling `dwell_s` on each and averaging every burst in the dwell.
    /// Advances the SME clock by `n_bearings × dwell_s`.
    #[allow(clippy::too_many_arguments)]
    pub fn directional_sweep<R: Rng + ?Sized>(
        &mut self,
        n_bearings: usize,
        dwell_s: f64,
        scenario: &Scenario,
        config: Option<&ChannelConfig>,
        shadowing: &ShadowingField,
        rng: &mut R,
    ) -> Result<BearingProfile, SmeError> {
        let cfg = config.ok_or(SmeError::NotConfigured)?;
        if n_bearings < 4 {
            return Err(SmeError::TooFewBearings(n_bearings));
        }
        if dwell_s < cfg.period_s() {
            return Err(SmeError::InsufficientSamples {
                dwell_s,
                period_s: cfg.period_s(),
            });
        }
        let start = self.clock_s;
        let prev_mode = self.mode;
        self.mode = SmeMode::Directional;
        self.hold();
        let mut entries = Vec::with_capacity(n_bearings);
        for i in 0..n_bearings {
            let bearing = wrap_2pi(2.0 * PI * i as f64 / n_bearings as f64);
            self.pose.heading = bearing;
            let reports = self.step(dwell_s, scenario, Some(cfg), shadowing, rng);
            self.pending_reports.clear();
            let n = reports.len();
            let mean = reports.iter().map(|r| r.rssi.value_dbm).sum::<f64>() / n.max(1) as f64;
            entries.push(BearingSample {
                bearing_rad: bearing,
                mean_rssi_dbm: if n == 0 { f64::NEG_INFINITY } else { mean },
                samples: n,
            });
        }
        self.mode = prev_mode;
        Ok(BearingProfile::from_entries(self.id.clone(), self.pose, start, entries))
    }
}

/// Pose for a point at a route level.
pub fn level_pose(scenario: &Scenario, level: Level, p: Point, heading: f64) -> Pose {
    match level {
        Level::Outdoor => Pose::outdoor(p, heading),
        Level::Indoor { building, floor } => scenario.indoor_pose(building, floor, p, heading),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;
    use crate::uplink::next_tx_times;
    use crate::world::scenarios;

    fn quiet() -> SmeParams {
        let mut p = SmeParams::default();
        p.noise.per_observation_sigma_db = 0.0;
        p
    }

    fn sme_on_line(s: &Scenario, speed: f64) -> SmeState {
        let mut sme = SmeState::new("a", Pose::outdoor(Point::new(5.0, 20.0), 0.0), speed, quiet());
        sme.assign_route(Polyline::new(vec![Point::new(5.0, 20.0), Point::new(95.0, 20.0)]), Level::Outdoor, s);
        sme
    }

    #[test]
    fn one_report_per_period() {
        let s = scenarios::minimal();
        let f = ShadowingField::disabled();
        let cfg = ChannelConfig::default();
        let mut rng = seeding::stream(1, 1);
        let mut sme = sme_on_line(&s, 1.2);
        assert_eq!(sme.step(0.08, &s, Some(&cfg), &f, &mut rng).len(), 1);
    }

    #[test]
    fn stationary_second_gives_twelve_reports() {
        let s = scenarios::minimal();
        let f = ShadowingField::disabled();
        let cfg = ChannelConfig::default();
        let mut rng = seeding::stream(1, 1);
        let mut sme = sme_on_line(&s, 0.0);
        let before = sme.pose;
        let r = sme.step(1.0, &s, Some(&cfg), &f, &mut rng);
        assert_eq!(r.len(), 12);
        assert_eq!(sme.pose, before);
        assert_eq!(sme.pending_reports.len(), 12);
    }

    #[test]
    fn route_end_clamps() {
        let s = scenarios::minimal();
        let f = ShadowingField::disabled();
        let mut rng = seeding::stream(1, 1);
        let mut sme = sme_on_line(&s, 8.0);
        for _ in 0..30 {
            sme.step(1.0, &s, None, &f, &mut rng);
        }
        assert!(sme.route_done());
        assert_eq!(sme.pose.xy(), Point::new(95.0, 20.0));
        assert_eq!(sme.route.as_ref().unwrap().progress, 90.0);
        assert!((sme.odometer_m - 90.0).abs() < 1e-9);
    }

    #[test]
    fn reports_interpolate_pose_and_match_schedule() {
        let s = scenarios::minimal();
        let f = ShadowingField::disabled();
        let cfg = ChannelConfig::default();
        let mut rng = seeding::stream(1, 1);
        let mut sme = sme_on_line(&s, 2.0);
        let mut all = Vec::new();
        for _ in 0..7 {
            all.extend(sme.step(0.3, &s, Some(&cfg), &f, &mut rng));
        }
        let sched = next_tx_times(&cfg, 0.0, 2.2).unwrap();
        for r in &all {
            assert!(sched.iter().any(|t| (t - r.timestamp_s).abs() < 1e-9));
            assert!((r.pose.x - (5.0 + 2.0 * r.timestamp_s)).abs() < 1e-9);
        }
        assert!((sme.odometer_m - 2.0 * 2.1).abs() <= 1e-9 * 4.2);
    }

    #[test]
    fn omni_rssi_non_increasing_moving_away() {
        let s = scenarios::minimal();
        let f = ShadowingField::disabled();
        let cfg = ChannelConfig::default();
        let mut rng = seeding::stream(1, 1);
        let mut sme = SmeState::new("a", Pose::outdoor(Point::new(52.0, 50.0), 0.0), 1.2, quiet());
        sme.assign_route(Polyline::new(vec![Point::new(52.0, 50.0), Point::new(99.0, 50.0)]), Level::Outdoor, &s);
        let mut last = f64::INFINITY;
        for _ in 0..300 {
            for r in sme.step(0.1, &s, Some(&cfg), &f, &mut rng) {
                assert!(r.rssi.value_dbm <= last);
                last = r.rssi.value_dbm;
            }
        }
    }

    #[test]
    fn sweep_points_at_target() {
        let s = scenarios::minimal();
        let f = ShadowingField::disabled();
        let cfg = ChannelConfig::default();
        let mut rng = seeding::stream(2, 2);
        for (dx, dy) in [(20.0, 0.0), (-15.0, 7.0), (3.0, -25.0), (-10.0, -10.0)] {
            let pos = Point::new(50.0 - dx, 50.0 - dy);
            let mut sme = SmeState::new("a", Pose::outdoor(pos, 0.0), 0.0, quiet());
            let n = 12;
            let prof = sme.directional_sweep(n, 1.25, &s, Some(&cfg), &f, &mut rng).unwrap();
            let truth = pos.bearing_to(Point::new(50.0, 50.0));
            let err = crate::geometry::wrap_pi(prof.argmax_bearing_rad - truth).abs();
            assert!(err <= PI / n as f64 + 1e-9, "err {err}");
            assert!((sme.clock_s - 15.0).abs() < 1e-9);
            assert!(prof.entries.iter().all(|e| e.samples >= 15));
        }
    }

    #[test]
    fn sweep_preconditions() {
        let s = scenarios::minimal();
        let f = ShadowingField::disabled();
        let cfg = ChannelConfig::default();
        let mut rng = seeding::stream(2, 2);
        let mut sme = SmeState::new("a", Pose::outdoor(Point::new(1.0, 1.0), 0.0), 0.0, quiet());
        assert!(matches!(
            sme.directional_sweep(12, 0.05, &s, Some(&cfg), &f, &mut rng),
            Err(SmeError::InsufficientSamples { .. })
        ));
        assert_eq!(sme.directional_sweep(3, 1.0, &s, Some(&cfg), &f, &mut rng), Err(SmeError::TooFewBearings(3)));
        assert_eq!(sme.directional_sweep(8, 1.0, &s, None, &f, &mut rng), Err(SmeError::NotConfigured));
    }
}
