//! Simulated environment: extent, buildings, roads, target placement and the
//! rescuer roster, plus scenario-document ingestion and validation.
//!
//! A [`Scenario`] is immutable once loaded and is shared read-only between
//! simulation workers.

mod obstruction;
pub mod scenarios;

pub use obstruction::{first_building_on_ray, walls_between, ObstructionCount};

use crate::geometry::{Point, Polyline, Rect};
use crate::rf::RfParams;
use crate::sme::SmeParams;
use crate::uplink::ChannelConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current scenario document schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Antenna height above the local floor (or ground) level.
pub const DEVICE_HEIGHT_M: f64 = 1.5;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported scenario schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("scenario validation failed: {0}")]
    Validation(String),
    #[error("arc length {s} outside route of length {len}")]
    RouteOutOfRange { s: f64, len: f64 },
}

pub type Result<T, E = WorldError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    pub corridor: Polyline,
    pub rooms: Vec<Rect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub footprint: Rect,
    pub floor_count: usize,
    pub floor_height: f64,
    pub floors: Vec<Floor>,
}

impl Building {
    /// Height of the device plane on floor `floor`.
    pub fn device_z(&self, floor: usize) -> f64 {
        floor as f64 * self.floor_height + DEVICE_HEIGHT_M
    }

    /// Floor containing height `z`, clamped to the building.
    pub fn floor_at(&self, z: f64) -> usize {
        let f = (z / self.floor_height).floor();
        if f <= 0.0 {
            0
        } else {
            (f as usize).min(self.floor_count - 1)
        }
    }

    pub fn room_at(&self, floor: usize, p: Point) -> Option<usize> {
        self.floors.get(floor)?.rooms.iter().position(|r| r.contains(p))
    }

    /// Building entrance: the start of the ground-floor corridor.
    pub fn entrance(&self) -> Point {
        self.floors[0].corridor.first().unwrap_or_else(|| self.footprint.center())
    }

    pub fn room_count(&self) -> usize {
        self.floors.iter().map(|f| f.rooms.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    #[serde(default = "default_z")]
    pub z: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub building_index: Option<usize>,
}

fn default_z() -> f64 {
    DEVICE_HEIGHT_M
}

impl Pose {
    pub fn outdoor(p: Point, heading: f64) -> Self {
        Pose {
            x: p.x,
            y: p.y,
            z: DEVICE_HEIGHT_M,
            heading,
            floor_index: None,
            building_index: None,
        }
    }

    pub fn indoor(building: usize, floor: usize, p: Point, heading: f64, floor_height: f64) -> Self {
        Pose {
            x: p.x,
            y: p.y,
            z: floor as f64 * floor_height + DEVICE_HEIGHT_M,
            heading,
            floor_index: Some(floor),
            building_index: Some(building),
        }
    }

    pub fn xy(&self) -> Point {
        Point::new(self.x, self.y)
    }

    pub fn is_indoor(&self) -> bool {
        self.building_index.is_some()
    }

    /// Same pose moved to `p`, keeping level and heading.
    pub fn with_xy(mut self, p: Point) -> Self {
        self.x = p.x;
        self.y = p.y;
        self
    }

    pub fn dist3(&self, o: &Pose) -> f64 {
        let dz = self.z - o.z;
        (self.xy().dist2(o.xy()) + dz * dz).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPlacement {
    pub pose: Pose,
    /// Room index on `pose.floor_index`; filled in on load when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<usize>,
    pub tx_profile: ChannelConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mobility {
    Vehicle,
    Foot,
}

impl Mobility {
    pub fn default_speed(self) -> f64 {
        match self {
            Mobility::Vehicle => 8.0,
            Mobility::Foot => 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescuerSpec {
    pub id: String,
    pub start: Point,
    pub mode: Mobility,
    #[serde(default)]
    pub speed_mps: Option<f64>,
}

impl RescuerSpec {
    pub fn speed(&self) -> f64 {
        self.speed_mps.unwrap_or_else(|| self.mode.default_speed())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub n_bearings: usize,
    pub dwell_s: f64,
    /// Number of sweep positions used for one confirmation.
    pub positions: usize,
    /// Spacing between sweep positions along the corridor.
    #[serde(default)]
    pub spacing_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingParams {
    pub setup_delay_s: f64,
    pub floor_change_s: f64,
    pub knock_time_s: f64,
    pub walk_speed_mps: f64,
    pub building_sweep: SweepParams,
    pub room_sweep: SweepParams,
    /// Omni dwell at the chosen building's wall before accepting it; 0
    /// accepts the first ranked building without a check.
    pub verify_dwell_s: f64,
    pub verify_margin_db: f64,
    pub max_retries: u32,
    pub timeout_s: f64,
    /// Lane spacing for raw boustrophedon sweeps.
    pub sweep_lane_spacing_m: f64,
    /// Radius within which an outdoor target counts as found.
    pub outdoor_found_radius_m: f64,
    /// Peak-dominance margin that lets the floor phase end before every floor
    /// has been walked; `None` waits for all floors.
    pub early_peak_margin_db: Option<f64>,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            setup_delay_s: 2.0,
            floor_change_s: 20.0,
            knock_time_s: 20.0,
            walk_speed_mps: 1.2,
            building_sweep: SweepParams {
                n_bearings: 12,
                dwell_s: 1.25,
                positions: 1,
                spacing_m: 0.0,
            },
            room_sweep: SweepParams {
                n_bearings: 16,
                dwell_s: 0.5,
                positions: 2,
                spacing_m: 3.0,
            },
            verify_dwell_s: 0.0,
            verify_margin_db: 3.0,
            max_retries: 3,
            timeout_s: 1800.0,
            sweep_lane_spacing_m: 50.0,
            outdoor_found_radius_m: 10.0,
            early_peak_margin_db: None,
        }
    }
}

/// Prior position fix handed over by the carrier before the search starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialFix {
    pub center: Point,
    /// One-sigma horizontal error (isotropic).
    pub sigma_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    /// Building handed to the search up front (skips the building phase).
    pub known_building: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkParams {
    pub loss_p: f64,
    pub latency_min_s: f64,
    pub latency_max_s: f64,
    /// SMEs hold the uplink configuration already; no broadcast is needed.
    pub predefined_uplink: bool,
    pub target_reachable: bool,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            loss_p: 0.01,
            latency_min_s: 0.03,
            latency_max_s: 0.12,
            predefined_uplink: false,
            target_reachable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub extent: Rect,
    pub buildings: Vec<Building>,
    pub roads: Vec<Polyline>,
    pub target: TargetPlacement,
    pub rf: RfParams,
    pub rescuers: Vec<RescuerSpec>,
    #[serde(default)]
    pub timing: TimingParams,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_fix: Option<InitialFix>,
    #[serde(default)]
    pub search: SearchParams,
    #[serde(default)]
    pub network: NetworkParams,
    #[serde(default)]
    pub sme: SmeParams,
    #[serde(default)]
    pub lcs: crate::lcs::LcsParams,
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario> {
    let mut s: Scenario = serde_json::from_str(text)?;
    if s.schema_version != SCHEMA_VERSION {
        return Err(WorldError::SchemaVersion(s.schema_version));
    }
    s.normalize();
    s.validate()?;
    Ok(s)
}

pub fn load_scenario_file(path: impl AsRef<std::path::Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| WorldError::Validation(format!("cannot read {}: {e}", path.as_ref().display())))?;
    load_scenario(&text)
}

/// Point at arc length `s` along `route`, heading along the tangent.
pub fn route_point_at(route: &Polyline, s: f64) -> Result<Pose> {
    let len = route.length();
    if route.is_empty() || !(0.0..=len).contains(&s) {
        return Err(WorldError::RouteOutOfRange { s, len });
    }
    let (p, heading) = route.sample(s);
    Ok(Pose::outdoor(p, heading))
}

macro_rules! invalid {
    ($($arg:tt)*) => { return Err(WorldError::Validation(format!($($arg)*))) };
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Fills derived fields (target height and room index).
    pub fn normalize(&mut self) {
        let t = &mut self.target;
        match (t.pose.building_index, t.pose.floor_index) {
            (Some(b), Some(f)) => {
                if let Some(bld) = self.buildings.get(b) {
                    t.pose.z = bld.device_z(f);
                    if t.room.is_none() {
                        t.room = bld.room_at(f, t.pose.xy());
                    }
                }
            }
            _ => t.pose.z = DEVICE_HEIGHT_M,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.extent.is_valid() || self.extent.area() <= 0.0 {
            invalid!("extent must have positive area");
        }
        for (bi, b) in self.buildings.iter().enumerate() {
            if !b.footprint.is_valid() {
                invalid!("building {bi}: degenerate footprint");
            }
            if !self.extent.contains_rect(&b.footprint) {
                invalid!("building {bi}: footprint outside extent");
            }
            if b.floor_count == 0 {
                invalid!("building {bi}: needs at least one floor");
            }
            if b.floor_count != b.floors.len() {
                invalid!("building {bi}: floor_count {} but {} floors listed", b.floor_count, b.floors.len());
            }
            if !(b.floor_height > 0.0) {
                invalid!("building {bi}: floor_height must be positive");
            }
            for (fi, f) in b.floors.iter().enumerate() {
                if f.rooms.is_empty() {
                    invalid!("building {bi} floor {fi}: needs at least one room");
                }
                for (ri, r) in f.rooms.iter().enumerate() {
                    if !r.is_valid() {
                        invalid!("building {bi} floor {fi} room {ri}: degenerate rectangle");
                    }
                    if !b.footprint.contains_rect(r) {
                        invalid!("building {bi} floor {fi} room {ri}: outside floor footprint");
                    }
                    for (rj, other) in f.rooms.iter().enumerate().skip(ri + 1) {
                        if r.overlap_area(other) > 1e-9 {
                            invalid!("building {bi} floor {fi}: rooms {ri} and {rj} overlap");
                        }
                    }
                }
                if f.corridor.points().iter().any(|p| !b.footprint.contains(*p)) {
                    invalid!("building {bi} floor {fi}: corridor leaves the footprint");
                }
            }
        }
        for (i, road) in self.roads.iter().enumerate() {
            if road.points().len() < 2 {
                invalid!("road {i}: needs at least two points");
            }
            if road.points().iter().any(|p| !self.extent.contains(*p)) {
                invalid!("road {i}: leaves the extent");
            }
        }
        self.validate_target()?;
        for r in &self.rescuers {
            if !self.extent.contains(r.start) {
                invalid!("rescuer {}: start outside extent", r.id);
            }
            if !(r.speed() > 0.0) {
                invalid!("rescuer {}: speed must be positive", r.id);
            }
        }
        let mut ids: Vec<&str> = self.rescuers.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            invalid!("duplicate rescuer id");
        }
        self.rf.validate().map_err(WorldError::Validation)?;
        self.target.tx_profile.validate().map_err(WorldError::Validation)?;
        if let Some(b) = self.search.known_building {
            if b >= self.buildings.len() {
                invalid!("search.known_building {b} does not exist");
            }
        }
        if let Some(fix) = &self.initial_fix {
            if !(fix.sigma_m > 0.0) {
                invalid!("initial_fix.sigma_m must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.network.loss_p)
            || self.network.latency_min_s < 0.0
            || self.network.latency_max_s < self.network.latency_min_s
        {
            invalid!("network: loss_p must be in [0,1] and 0 <= latency_min <= latency_max");
        }
        Ok(())
    }

    fn validate_target(&self) -> Result<()> {
        let t = &self.target;
        let p = t.pose.xy();
        if !self.extent.contains(p) {
            invalid!("target outside extent");
        }
        match (t.pose.building_index, t.pose.floor_index) {
            (None, None) => {
                if self.buildings.iter().any(|b| b.footprint.contains(p)) {
                    invalid!("outdoor target lies inside a building footprint");
                }
                if t.room.is_some() {
                    invalid!("outdoor target cannot name a room");
                }
            }
            (Some(bi), Some(fi)) => {
                let Some(b) = self.buildings.get(bi) else {
                    invalid!("target building {bi} does not exist");
                };
                let Some(floor) = b.floors.get(fi) else {
                    invalid!("target floor {fi} does not exist in building {bi}");
                };
                let Some(ri) = t.room else {
                    invalid!("target is not inside any room of building {bi} floor {fi}");
                };
                match floor.rooms.get(ri) {
                    Some(r) if r.contains(p) => {}
                    Some(_) => invalid!("target not inside its declared room {ri}"),
                    None => invalid!("target room {ri} does not exist"),
                }
            }
            _ => invalid!("indoor poses need both building_index and floor_index"),
        }
        Ok(())
    }

    /// Copy of this scenario with the target moved to `pose` (room derived).
    pub fn with_target(&self, pose: Pose) -> Scenario {
        let mut s = self.clone();
        s.target.pose = pose;
        s.target.room = None;
        s.normalize();
        s
    }

    /// Pose for a device standing at `p` on `floor` of `building`.
    pub fn indoor_pose(&self, building: usize, floor: usize, p: Point, heading: f64) -> Pose {
        Pose::indoor(building, floor, p, heading, self.buildings[building].floor_height)
    }

    /// Initial fix, defaulting to the extent centre with 3σ spanning half the
    /// longer side.
    pub fn initial_fix(&self) -> InitialFix {
        self.initial_fix.unwrap_or(InitialFix {
            center: self.extent.center(),
            sigma_m: self.extent.width().max(self.extent.height()) / 6.0,
        })
    }

    /// Index of the building whose footprint contains `p`.
    pub fn building_at(&self, p: Point) -> Option<usize> {
        self.buildings.iter().position(|b| b.footprint.contains(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_loads() {
        let s = load_scenario(&scenarios::minimal().to_json()).unwrap();
        assert!(s.buildings.is_empty());
        assert_eq!(s.rescuers.len(), 1);
        assert!(!s.target.pose.is_indoor());
    }

    #[test]
    fn testbed_document_loads() {
        let s = load_scenario(&scenarios::testbed().to_json()).unwrap();
        assert_eq!(s.extent.width(), 250.0);
        assert_eq!(s.extent.height(), 300.0);
        assert_eq!(s.buildings.len(), 25);
        assert!(s.buildings.iter().all(|b| b.floor_count >= 5));
    }

    #[test]
    fn room_outside_footprint_rejected() {
        let mut s = scenarios::room_building();
        s.buildings[0].floors[1].rooms[0].x0 -= 30.0;
        let err = load_scenario(&s.to_json()).unwrap_err();
        assert!(matches!(err, WorldError::Validation(ref m) if m.contains("outside floor footprint")), "{err}");
    }

    #[test]
    fn overlapping_rooms_rejected() {
        let mut s = scenarios::room_building();
        let r = s.buildings[0].floors[0].rooms[0];
        s.buildings[0].floors[0].rooms[1] = r;
        assert!(matches!(load_scenario(&s.to_json()), Err(WorldError::Validation(_))));
    }

    #[test]
    fn target_outside_room_rejected() {
        let mut s = scenarios::room_building();
        s.target.room = Some(3);
        assert!(load_scenario(&s.to_json()).is_err());
    }

    #[test]
    fn malformed_and_wrong_version() {
        assert!(matches!(load_scenario("{ not json"), Err(WorldError::Parse(_))));
        let text = scenarios::minimal().to_json().replace("\"schema_version\": 1", "\"schema_version\": 7");
        assert!(matches!(load_scenario(&text), Err(WorldError::SchemaVersion(7))));
    }

    #[test]
    fn room_index_derived_on_load() {
        let mut s = scenarios::room_building();
        let want = s.target.room;
        s.target.room = None;
        let loaded = load_scenario(&s.to_json()).unwrap();
        assert_eq!(loaded.target.room, want);
    }

    #[test]
    fn route_point_endpoints_and_midpoint() {
        let route = Polyline::new(vec![Point::new(0.0, 0.0), Point::new(100.0, 0.0)]);
        assert_eq!(route_point_at(&route, 0.0).unwrap().xy(), Point::new(0.0, 0.0));
        assert_eq!(route_point_at(&route, 100.0).unwrap().xy(), Point::new(100.0, 0.0));
        let mid = route_point_at(&route, 50.0).unwrap();
        assert_eq!(mid.xy(), Point::new(50.0, 0.0));
        assert_eq!(mid.heading, 0.0);
        assert!(route_point_at(&route, 100.5).is_err());
        assert!(route_point_at(&route, -1.0).is_err());
    }

    #[test]
    fn heading_follows_tangent() {
        let route = Polyline::new(vec![Point::new(0.0, 0.0), Point::new(0.0, 10.0), Point::new(-10.0, 10.0)]);
        let p = route_point_at(&route, 15.0).unwrap();
        assert!((p.heading - std::f64::consts::PI).abs() < 1e-12);
        assert!((p.x + 5.0).abs() < 1e-12);
    }
}
