//! Spatially correlated log-normal shadowing.
//!
//! Each region (outdoors, or one floor of one building) carries its own
//! zero-mean Gaussian field with exponential autocorrelation
//! `ρ(h) = exp(-|h| / d_corr)`. Fields are realized by the spectral
//! (random-phase sum of cosines) method: wave vectors are drawn from the
//! normalized 2D power spectrum of the exponential kernel, so the ensemble
//! correlation equals the target kernel exactly and the field can be
//! evaluated at any continuous point.

use super::RfParams;
use crate::geometry::{Point, Rect};
use crate::seeding::{self, streams};
use crate::world::{Pose, Scenario};
use rand::Rng;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

/// Number of spectral components per region.
pub const COMPONENTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegionKey {
    Outdoor,
    Floor { building: usize, floor: usize },
}

impl RegionKey {
    pub fn of(pose: &Pose) -> RegionKey {
        match (pose.building_index, pose.floor_index) {
            (Some(building), Some(floor)) => RegionKey::Floor { building, floor },
            _ => RegionKey::Outdoor,
        }
    }
}

#[derive(Debug, Clone)]
struct Component {
    kx: f64,
    ky: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
struct RegionField {
    amplitude: f64,
    components: Vec<Component>,
}

impl RegionField {
    fn generate<R: Rng>(rng: &mut R, sigma: f64, d_corr: f64) -> RegionField {
        let components = (0..COMPONENTS)
            .map(|_| {
                let u: f64 = rng.gen();
                // inverse CDF of the radial spectrum: F(k) = 1 - (1 + d²k²)^(-1/2)
                let k = ((1.0 - u).powi(-2) - 1.0).max(0.0).sqrt() / d_corr;
                let dir: f64 = rng.gen_range(0.0..2.0 * PI);
                let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                Component {
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase,
                }
            })
            .collect();
        RegionField {
            amplitude: sigma * (2.0 / COMPONENTS as f64).sqrt(),
            components,
        }
    }

    fn eval(&self, p: Point) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * self.components.iter().map(|c| (c.kx * p.x + c.ky * p.y + c.phase).cos()).sum::<f64>()
    }
}

/// Immutable per-scenario shadowing realization.
#[derive(Debug, Clone)]
pub struct ShadowingField {
    seed: u64,
    regions: HashMap<RegionKey, RegionField>,
}

impl ShadowingField {
    /// Realizes every region of `scenario` from `seed`. Identical inputs give
    /// a bit-identical field.
    pub fn generate(scenario: &Scenario, params: &RfParams, seed: u64) -> ShadowingField {
        let mut rng = seeding::stream(seed, streams::SHADOWING);
        let mut regions = HashMap::new();
        regions.insert(
            RegionKey::Outdoor,
            RegionField::generate(&mut rng, params.shadowing_sigma_outdoor_db, params.decorrelation_distance_outdoor_m),
        );
        for (b, bld) in scenario.buildings.iter().enumerate() {
            for f in 0..bld.floor_count {
                regions.insert(
                    RegionKey::Floor { building: b, floor: f },
                    RegionField::generate(
                        &mut rng,
                        params.shadowing_sigma_indoor_db,
                        params.decorrelation_distance_indoor_m,
                    ),
                );
            }
        }
        ShadowingField { seed, regions }
    }

    /// A field that is zero everywhere.
    pub fn disabled() -> ShadowingField {
        ShadowingField {
            seed: 0,
            regions: HashMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn value(&self, region: RegionKey, p: Point) -> f64 {
        self.regions.get(&region).map_or(0.0, |r| r.eval(p))
    }

    /// Shadowing seen by a receiver at `pose`.
    pub fn sample(&self, pose: &Pose) -> f64 {
        self.value(RegionKey::of(pose), pose.xy())
    }

    /// Writes the field over `area` as `x,y,shadowing_db` CSV rows at cell
    /// centres.
    pub fn write_csv<W: Write>(&self, region: RegionKey, area: Rect, cell: f64, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "shadowing_db"])?;
        let nx = (area.width() / cell).ceil() as usize;
        let ny = (area.height() / cell).ceil() as usize;
        for j in 0..ny {
            for i in 0..nx {
                let p = Point::new(area.x0 + (i as f64 + 0.5) * cell, area.y0 + (j as f64 + 0.5) * cell);
                w.write_record(&[format!("{:.3}", p.x), format!("{:.3}", p.y), format!("{:.4}", self.value(region, p))])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
