//! Radio channel between the target phone and an SME.
//!
//! Received power is a log-distance path loss with per-wall and per-slab
//! attenuation, an antenna gain at the receiver, and a fixed spatially
//! correlated log-normal shadowing field sampled at the receiver position.

mod shadowing;

pub use shadowing::{RegionKey, ShadowingField};

use crate::geometry::wrap_pi;
use crate::world::{walls_between, Pose, Scenario};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum RfError {
    #[error("transmitter and receiver positions coincide")]
    CoincidentPoses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfParams {
    pub uplink_carrier_hz: f64,
    pub downlink_carrier_hz: f64,
    pub path_loss_exponent_outdoor: f64,
    pub path_loss_exponent_indoor: f64,
    pub exterior_wall_loss_db: f64,
    pub interior_wall_loss_db: f64,
    pub floor_loss_db: f64,
    pub shadowing_sigma_outdoor_db: f64,
    pub shadowing_sigma_indoor_db: f64,
    pub decorrelation_distance_outdoor_m: f64,
    pub decorrelation_distance_indoor_m: f64,
    pub noise_figure_db: f64,
    pub reference_distance_m: f64,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            uplink_carrier_hz: 738e6,
            downlink_carrier_hz: 793e6,
            path_loss_exponent_outdoor: 3.0,
            path_loss_exponent_indoor: 2.2,
            exterior_wall_loss_db: 12.0,
            interior_wall_loss_db: 5.0,
            floor_loss_db: 18.0,
            shadowing_sigma_outdoor_db: 6.0,
            shadowing_sigma_indoor_db: 4.0,
            decorrelation_distance_outdoor_m: 25.0,
            decorrelation_distance_indoor_m: 3.0,
            noise_figure_db: 7.0,
            reference_distance_m: 1.0,
        }
    }
}

impl RfParams {
    pub fn validate(&self) -> Result<(), String> {
        let losses = [
            self.exterior_wall_loss_db,
            self.interior_wall_loss_db,
            self.floor_loss_db,
            self.shadowing_sigma_outdoor_db,
            self.shadowing_sigma_indoor_db,
        ];
        if losses.iter().any(|v| !(*v >= 0.0)) {
            return Err("rf: losses and shadowing sigmas must be >= 0".into());
        }
        if !(self.path_loss_exponent_outdoor >= 2.0 && self.path_loss_exponent_indoor >= 2.0) {
            return Err("rf: path loss exponents must be >= 2".into());
        }
        if !(self.decorrelation_distance_outdoor_m > 0.0 && self.decorrelation_distance_indoor_m > 0.0) {
            return Err("rf: decorrelation distances must be > 0".into());
        }
        if !(self.reference_distance_m > 0.0 && self.uplink_carrier_hz > 0.0) {
            return Err("rf: reference distance and carrier must be > 0".into());
        }
        Ok(())
    }

    /// Free-space loss at the reference distance on the uplink carrier.
    pub fn reference_loss_db(&self) -> f64 {
        free_space_loss_db(self.reference_distance_m, self.uplink_carrier_hz)
    }

    /// Copy with shadowing switched off.
    pub fn without_shadowing(&self) -> RfParams {
        RfParams {
            shadowing_sigma_outdoor_db: 0.0,
            shadowing_sigma_indoor_db: 0.0,
            ..self.clone()
        }
    }
}

pub fn free_space_loss_db(d_m: f64, carrier_hz: f64) -> f64 {
    20.0 * (4.0 * PI * d_m * carrier_hz / SPEED_OF_LIGHT).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Omni,
    Directional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaPattern {
    pub kind: PatternKind,
    pub hpbw_deg: f64,
    pub front_to_back_db: f64,
    pub gain_db: f64,
}

impl AntennaPattern {
    pub fn omni() -> Self {
        AntennaPattern {
            kind: PatternKind::Omni,
            hpbw_deg: 360.0,
            front_to_back_db: 0.0,
            gain_db: 0.0,
        }
    }

    pub fn directional() -> Self {
        AntennaPattern {
            kind: PatternKind::Directional,
            hpbw_deg: 60.0,
            front_to_back_db: 15.0,
            gain_db: 6.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.kind == PatternKind::Directional && !(self.hpbw_deg > 0.0 && self.hpbw_deg < 180.0) {
            return Err("antenna: hpbw_deg must be in (0, 180)".into());
        }
        if !(self.front_to_back_db >= 0.0) {
            return Err("antenna: front_to_back_db must be >= 0".into());
        }
        Ok(())
    }
}

impl Default for AntennaPattern {
    fn default() -> Self {
        AntennaPattern::omni()
    }
}

/// Receive gain for a signal arriving `bearing_error_rad` off boresight.
///
/// The directional main lobe is Gaussian in linear power (parabolic in dB),
/// 3 dB down at ±hpbw/2, and never drops below the front-to-back floor.
pub fn antenna_gain_db(pattern: &AntennaPattern, bearing_error_rad: f64) -> f64 {
    match pattern.kind {
        PatternKind::Omni => pattern.gain_db,
        PatternKind::Directional => {
            let half = 0.5 * pattern.hpbw_deg.to_radians();
            let err = wrap_pi(bearing_error_rad);
            let lobe = pattern.gain_db - 3.0 * (err / half).powi(2);
            lobe.max(pattern.gain_db - pattern.front_to_back_db)
        }
    }
}

/// Path loss between two poses in dB.
///
/// The exponent is the indoor one when both ends are inside the same
/// building, the outdoor one otherwise. Distances below the reference
/// distance are clamped to it.
pub fn path_loss_db(tx: &Pose, rx: &Pose, params: &RfParams, scenario: &Scenario) -> Result<f64, RfError> {
    let d = tx.dist3(rx);
    if d < 1e-9 {
        return Err(RfError::CoincidentPoses);
    }
    let same_building = tx.building_index.is_some() && tx.building_index == rx.building_index;
    let n = if same_building {
        params.path_loss_exponent_indoor
    } else {
        params.path_loss_exponent_outdoor
    };
    let d_ref = params.reference_distance_m;
    let obs = walls_between(tx, rx, scenario);
    Ok(params.reference_loss_db()
        + 10.0 * n * (d.max(d_ref) / d_ref).log10()
        + params.exterior_wall_loss_db * obs.exterior_walls as f64
        + params.interior_wall_loss_db * obs.interior_walls as f64
        + params.floor_loss_db * obs.floors_crossed as f64)
}

/// Received power at `rx` from a transmitter at `tx`.
#[allow(clippy::too_many_arguments)]
pub fn received_power_dbm(
    tx_power_dbm: f64,
    tx: &Pose,
    rx: &Pose,
    rx_pattern: &AntennaPattern,
    rx_heading: f64,
    params: &RfParams,
    scenario: &Scenario,
    shadowing: &ShadowingField,
) -> Result<f64, RfError> {
    let pl = path_loss_db(tx, rx, params, scenario)?;
    let bearing = rx.xy().bearing_to(tx.xy());
    let gain = antenna_gain_db(rx_pattern, bearing - rx_heading);
    Ok(tx_power_dbm - pl + gain + shadowing.sample(rx))
}
