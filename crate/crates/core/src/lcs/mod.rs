//! Location calculation server kernel.
//!
//! Pure functions over measurement reports: contour interpolation, peak
//! finding, grid maximum-likelihood positioning with a Laplace covariance,
//! search boundaries and work partitioning. State (report storage, throttled
//! recomputation) lives in the protocol service.

mod boundary;
pub(crate) mod contour;
mod estimate;
mod plan;

pub use boundary::{area_ratio, derive_boundary, SearchBoundary};
pub use contour::{find_peak, interpolate_idw, ContourMap, MapRegion, Peak};
pub use estimate::{estimate_position, Cov2, PositionEstimate, SequentialEstimator};
pub use plan::{partition_and_route, Assignment, AssignmentArea, PlanPhase, PlanTarget, RouteLeg, SearchPlan};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LcsError {
    #[error("no valid omnidirectional reports in region")]
    NoValidReports,
    #[error("contour map has no unmasked cell")]
    FullyMasked,
    #[error("insufficient reports: {0}")]
    InsufficientReports(String),
    #[error("covariance is not positive semi-definite")]
    NonPsdCovariance,
    #[error("no rescuers to assign")]
    NoRescuers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcsParams {
    pub outdoor_cell_m: f64,
    pub indoor_cell_m: f64,
    pub idw_power: f64,
    pub idw_k: usize,
    pub estimator_cell_m: f64,
    pub residual_sigma_db: f64,
    /// Reports kept by the sequential estimator.
    pub window_reports: usize,
    pub resolve_interval_s: f64,
    /// Boundary ellipse size in standard deviations.
    pub boundary_sigmas: f64,
}

impl Default for LcsParams {
    fn default() -> Self {
        LcsParams {
            outdoor_cell_m: 5.0,
            indoor_cell_m: 1.0,
            idw_power: 2.0,
            idw_k: 8,
            estimator_cell_m: 5.0,
            residual_sigma_db: 4.0,
            window_reports: 200,
            resolve_interval_s: 1.0,
            boundary_sigmas: 3.0,
        }
    }
}
