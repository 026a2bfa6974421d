//! The target phone's periodic PUSCH uplink: channel configuration, the
//! transmission schedule, per-burst RSSI synthesis and duty-cycle power
//! accounting.

use crate::rf::{received_power_dbm, AntennaPattern, ShadowingField};
use crate::world::{Pose, Scenario};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// LTE system bandwidth of the test network.
pub const SYSTEM_BANDWIDTH_HZ: f64 = 10e6;
/// UE maximum transmit power.
pub const MAX_TX_POWER_DBM: f64 = 23.0;
/// Nominal voice-call PUSCH power used as the consumption baseline.
pub const VOICE_TX_POWER_DBM: f64 = 13.0;
/// Margin above the thermal noise floor for a burst to count as detected.
pub const DETECTION_MARGIN_DB: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum UplinkError {
    #[error("empty time window [{0}, {1})")]
    EmptyWindow(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub subframe_duration_ms: f64,
    pub bandwidth_hz: f64,
    pub period_ms: f64,
    pub tx_power_dbm: f64,
    pub dmrs_symbols_per_subframe: u32,
    pub carrier_hz: f64,
    pub target_id: String,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            subframe_duration_ms: 1.0,
            bandwidth_hz: 7.5e6,
            period_ms: 80.0,
            tx_power_dbm: MAX_TX_POWER_DBM,
            dmrs_symbols_per_subframe: 2,
            carrier_hz: 738e6,
            target_id: "target-1".into(),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.subframe_duration_ms > 0.0 && self.period_ms >= self.subframe_duration_ms) {
            return Err("channel config: period_ms must be >= subframe_duration_ms > 0".into());
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz <= SYSTEM_BANDWIDTH_HZ) {
            return Err("channel config: bandwidth must be in (0, 10 MHz]".into());
        }
        if self.tx_power_dbm > MAX_TX_POWER_DBM {
            return Err("channel config: tx_power_dbm exceeds 23 dBm".into());
        }
        if self.dmrs_symbols_per_subframe == 0 {
            return Err("channel config: needs at least one DM-RS symbol".into());
        }
        Ok(())
    }

    pub fn period_s(&self) -> f64 {
        self.period_ms * 1e-3
    }

    /// Thermal noise floor over the PUSCH bandwidth.
    pub fn noise_floor_dbm(&self, noise_figure_db: f64) -> f64 {
        -174.0 + 10.0 * self.bandwidth_hz.log10() + noise_figure_db
    }

    pub fn detection_threshold_dbm(&self, noise_figure_db: f64) -> f64 {
        self.noise_floor_dbm(noise_figure_db) + DETECTION_MARGIN_DB
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssiSample {
    pub value_dbm: f64,
    pub timestamp_s: f64,
    pub valid: bool,
}

/// Transmission instants `k · period` (k ≥ 0) inside `[t0, t1)`, anchored at
/// session start `t = 0`.
pub fn next_tx_times(config: &ChannelConfig, t0: f64, t1: f64) -> Result<Vec<f64>, UplinkError> {
    if !(t0 < t1) {
        return Err(UplinkError::EmptyWindow(t0, t1));
    }
    let p = config.period_s();
    let first = ((t0 / p) - 1e-9).ceil().max(0.0) as u64;
    let mut out = Vec::new();
    let mut k = first;
    loop {
        let t = k as f64 * p;
        if t >= t1 - 1e-12 {
            break;
        }
        if t >= t0 - 1e-12 {
            out.push(t);
        }
        k += 1;
    }
    Ok(out)
}

/// Transmission instants inside the half-open window `(t0, t1]`, the window
/// covered by one simulation step from `t0` to `t1`.
pub fn tx_times_in_step(config: &ChannelConfig, t0: f64, t1: f64) -> Vec<f64> {
    let p = config.period_s();
    let mut k = ((t0 / p) + 1e-9).floor().max(-1.0) as i64 + 1;
    let mut out = Vec::new();
    loop {
        let t = k as f64 * p;
        if t > t1 + 1e-9 {
            break;
        }
        if t > t0 + 1e-9 {
            out.push(t);
        }
        k += 1;
    }
    out
}

/// Receiver-side noise model for one RSSI report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    /// Standard deviation of one DM-RS symbol observation on one antenna.
    pub per_observation_sigma_db: f64,
    pub rx_antennas: u32,
}

impl Default for MeasurementNoise {
    fn default() -> Self {
        MeasurementNoise {
            per_observation_sigma_db: 1.0,
            rx_antennas: 2,
        }
    }
}

impl MeasurementNoise {
    /// Standard deviation of the averaged report.
    pub fn report_sigma_db(&self, config: &ChannelConfig) -> f64 {
        let obs = (config.dmrs_symbols_per_subframe * self.rx_antennas).max(1) as f64;
        self.per_observation_sigma_db / obs.sqrt()
    }
}

/// RSSI reported by an SME at `sme_pose` for one burst at `timestamp_s`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_rssi<R: Rng + ?Sized>(
    config: &ChannelConfig,
    noise: &MeasurementNoise,
    sme_pose: &Pose,
    sme_pattern: &AntennaPattern,
    sme_heading: f64,
    scenario: &Scenario,
    shadowing: &ShadowingField,
    timestamp_s: f64,
    rng: &mut R,
) -> RssiSample {
    let tx = &scenario.target.pose;
    let mut rx = *sme_pose;
    if rx.dist3(tx) < 1e-6 {
        // co-located receiver: nudge to the reference distance
        rx.x += scenario.rf.reference_distance_m;
    }
    let mean = received_power_dbm(
        config.tx_power_dbm,
        tx,
        &rx,
        sme_pattern,
        sme_heading,
        &scenario.rf,
        scenario,
        shadowing,
    )
    .expect("poses separated above");
    let sigma = noise.report_sigma_db(config);
    let e = if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    };
    let value = mean + e;
    RssiSample {
        value_dbm: value,
        timestamp_s,
        valid: value >= config.detection_threshold_dbm(scenario.rf.noise_figure_db),
    }
}

/// Average transmit power during a session relative to a voice call.
pub fn avg_tx_power_ratio(config: &ChannelConfig, voice_tx_power_dbm: f64) -> f64 {
    10f64.powf((config.tx_power_dbm - voice_tx_power_dbm) / 10.0) * (config.subframe_duration_ms / config.period_ms)
}
