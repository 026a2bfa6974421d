//! Monte Carlo batches over a scenario and their summary statistics.

use crate::geometry::Point;
use crate::orchestrator::{run_session_with, Policy, RunOptions, SearchOutcome};
use crate::seeding::{stream, streams};
use crate::world::Scenario;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no outcomes to summarize")]
    Empty,
    #[error("placement {0:?} needs a scenario with rooms")]
    NoRooms(Placement),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    Fixed,
    UniformRandomRoom,
    UniformRandomBuilding,
}

impl std::str::FromStr for Placement {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(Placement::Fixed),
            "uniform-random-room" => Ok(Placement::UniformRandomRoom),
            "uniform-random-building" => Ok(Placement::UniformRandomBuilding),
            _ => Err(format!("unknown placement {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub scenario: Scenario,
    pub policy: Policy,
    pub n_trials: usize,
    pub seed_base: u64,
    pub deadline_s: f64,
    pub placement: Placement,
    /// End each trial once a building is identified.
    #[serde(default)]
    pub stop_after_building: bool,
    /// Worker threads; does not affect results.
    #[serde(skip)]
    pub workers: usize,
}

impl BatchSpec {
    pub fn new(scenario: Scenario, policy: Policy, n_trials: usize) -> Self {
        BatchSpec {
            seed_base: scenario.seed,
            scenario,
            policy,
            n_trials,
            deadline_s: 180.0,
            placement: Placement::Fixed,
            stop_after_building: false,
            workers: 1,
        }
    }

    /// FNV-1a over the canonical JSON of everything that determines results.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub success: bool,
    /// Time the correct building was identified.
    pub building_time: Option<f64>,
    /// Time the correct room was reached.
    pub room_time: Option<f64>,
    pub total_time: f64,
    pub distances_m: Vec<(String, f64)>,
}

impl From<&SearchOutcome> for TrialRecord {
    fn from(o: &SearchOutcome) -> Self {
        TrialRecord {
            seed: o.seed,
            success: o.success,
            building_time: o.building_id_time_s.filter(|_| o.building_correct),
            room_time: o.room_id_time_s.filter(|_| o.room_correct),
            total_time: o.total_time_s,
            distances_m: o.distance_traveled_m.iter().map(|d| (d.id.clone(), d.distance_m)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Milestone {
    /// Fraction of trials reaching the milestone correctly within the deadline.
    pub rate: f64,
    pub mean_time_s: Option<f64>,
    pub p90_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n_trials: usize,
    pub success_rate_within_deadline: f64,
    pub mean_time_s: Option<f64>,
    pub median_time_s: Option<f64>,
    pub p90_time_s: Option<f64>,
    pub building: Milestone,
    pub room: Milestone,
    pub fingerprint: String,
}

/// Smallest sample whose empirical CDF reaches `q`.
pub fn quantile(times: &[f64], q: f64) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    let k = ((q * t.len() as f64).ceil() as usize).clamp(1, t.len());
    Some(t[k - 1])
}

/// Mean summed in sorted order, so the result does not depend on input order.
fn mean(v: &[f64]) -> Option<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
}

fn milestone(times: Vec<f64>, n: usize, deadline_s: f64) -> Milestone {
    Milestone {
        rate: times.iter().filter(|&&t| t <= deadline_s).count() as f64 / n as f64,
        mean_time_s: mean(&times),
        p90_time_s: quantile(&times, 0.9),
    }
}

pub fn summarize(outcomes: &[SearchOutcome], deadline_s: f64, fingerprint: &str) -> Result<MetricsSummary, HarnessError> {
    let n = outcomes.len();
    if n == 0 {
        return Err(HarnessError::Empty);
    }
    let times: Vec<f64> = outcomes.iter().filter(|o| o.success).map(|o| o.total_time_s).collect();
    let on_time = outcomes.iter().filter(|o| o.success && o.total_time_s <= deadline_s).count();
    let building: Vec<f64> = outcomes.iter().filter(|o| o.building_correct).filter_map(|o| o.building_id_time_s).collect();
    let room: Vec<f64> = outcomes.iter().filter(|o| o.room_correct).filter_map(|o| o.room_id_time_s).collect();
    Ok(MetricsSummary {
        n_trials: n,
        success_rate_within_deadline: on_time as f64 / n as f64,
        mean_time_s: mean(&times),
        median_time_s: quantile(&times, 0.5),
        p90_time_s: quantile(&times, 0.9),
        building: milestone(building, n, deadline_s),
        room: milestone(room, n, deadline_s),
        fingerprint: fingerprint.to_string(),
    })
}

/// Scenario for one trial with the target placed per `placement`.
pub fn place_target(scenario: &Scenario, placement: Placement, seed: u64) -> Result<Scenario, HarnessError> {
    if placement == Placement::Fixed {
        return Ok(scenario.clone());
    }
    let mut rng = stream(seed, streams::PLACEMENT);
    let buildings: Vec<usize> = match (placement, scenario.search.known_building) {
        (Placement::UniformRandomRoom, Some(b)) => vec![b],
        _ => (0..scenario.buildings.len()).filter(|&b| scenario.buildings[b].room_count() > 0).collect(),
    };
    if buildings.is_empty() {
        return Err(HarnessError::NoRooms(placement));
    }
    let rooms: Vec<(usize, usize, usize)> = match placement {
        Placement::UniformRandomBuilding => {
            let b = buildings[rng.gen_range(0..buildings.len())];
            rooms_of(scenario, &[b])
        }
        _ => rooms_of(scenario, &buildings),
    };
    let (b, f, r) = rooms[rng.gen_range(0..rooms.len())];
    let rect = scenario.buildings[b].floors[f].rooms[r];
    let margin = 0.5_f64.min(rect.width() / 4.0).min(rect.height() / 4.0);
    let p = Point::new(
        rng.gen_range(rect.x0 + margin..rect.x1 - margin),
        rng.gen_range(rect.y0 + margin..rect.y1 - margin),
    );
    let mut s = scenario.with_target(scenario.indoor_pose(b, f, p, 0.0));
    s.target.room = Some(r);
    Ok(s)
}

fn rooms_of(scenario: &Scenario, buildings: &[usize]) -> Vec<(usize, usize, usize)> {
    buildings
        .iter()
        .flat_map(|&b| {
            scenario.buildings[b]
                .floors
                .iter()
                .enumerate()
                .flat_map(move |(f, fl)| (0..fl.rooms.len()).map(move |r| (b, f, r)))
        })
        .collect()
}

pub fn run_trial(spec: &BatchSpec, i: usize) -> Result<SearchOutcome, HarnessError> {
    let seed = spec.seed_base.wrapping_add(i as u64);
    let scenario = place_target(&spec.scenario, spec.placement, seed)?;
    let opts = RunOptions { stop_after_building: spec.stop_after_building, ..RunOptions::default() };
    Ok(run_session_with(&scenario, spec.policy, seed, &opts).outcome)
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub summary: MetricsSummary,
    pub outcomes: Vec<SearchOutcome>,
    pub records: Vec<TrialRecord>,
}

pub fn run_batch(spec: &BatchSpec) -> Result<BatchResult, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let outcomes: Vec<SearchOutcome> =
        pool.install(|| (0..spec.n_trials).into_par_iter().map(|i| run_trial(spec, i)).collect::<Result<_, _>>())?;
    let summary = summarize(&outcomes, spec.deadline_s, &spec.fingerprint())?;
    let records = outcomes.iter().map(TrialRecord::from).collect();
    Ok(BatchResult { summary, outcomes, records })
}

fn opt(v: Option<f64>) -> String {
    v.map(|t| t.to_string()).unwrap_or_default()
}

/// Per-trial CSV: seed, success, milestone times, total time, then one
/// distance column per rescuer.
pub fn write_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["seed".to_string(), "success".into(), "building_time".into(), "room_time".into(), "total_time".into()];
    if let Some(r) = records.first() {
        header.extend(r.distances_m.iter().map(|(id, _)| format!("dist_{id}")));
    }
    out.write_record(&header)?;
    for r in records {
        let mut row = vec![r.seed.to_string(), r.success.to_string(), opt(r.building_time), opt(r.room_time), r.total_time.to_string()];
        row.extend(r.distances_m.iter().map(|(_, d)| d.to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
