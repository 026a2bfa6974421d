//! Grid maximum-likelihood positioning from received power.
//!
//! For a candidate position the obstruction-free log-distance model predicts
//! `b - 10·n·log10(d_i)` at report `i`; the offset `b` (transmit power plus an
//! average wall loss) is profiled out by least squares. The residuals are
//! Gaussian with σ_r, so the negative log-likelihood is `SSR / (2 σ_r²)`. The
//! best grid cell is refined with a quadratic fit over its 3 × 3 stencil and
//! the inverse Hessian of that fit is the Laplace covariance.

use super::{LcsError, LcsParams};
use crate::geometry::{Point, Rect};
use crate::rf::RfParams;
use crate::sme::{MeasurementReport, SmeMode};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

/// Symmetric 2 × 2 covariance `[[xx, xy], [xy, yy]]` in m².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Cov2 {
    pub fn isotropic(var: f64) -> Self {
        Cov2 { xx: var, xy: 0.0, yy: var }
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Eigenvalues (descending) and the unit eigenvector of the larger one.
    pub fn eigen(&self) -> ((f64, f64), (f64, f64)) {
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        let (l1, l2) = (m + r, m - r);
        let v = if self.xy.abs() > 1e-300 {
            let (vx, vy) = (l1 - self.yy, self.xy);
            let n = vx.hypot(vy);
            (vx / n, vy / n)
        } else if self.xx >= self.yy {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        ((l1, l2), v)
    }

    /// Rebuilds from principal variances along `v` and its normal.
    pub fn from_principal(var_major: f64, var_minor: f64, v: (f64, f64)) -> Self {
        let (c, s) = v;
        Cov2 {
            xx: var_major * c * c + var_minor * s * s,
            xy: (var_major - var_minor) * c * s,
            yy: var_major * s * s + var_minor * c * c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub xy: Point,
    pub cov: Cov2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_index: Option<usize>,
    pub n_reports_used: usize,
    pub timestamp_s: f64,
    /// Report geometry could not resolve one axis; the covariance along it was
    /// inflated to the search-area scale.
    #[serde(default)]
    pub degenerate: bool,
}

impl PositionEstimate {
    /// Estimate standing for a prior fix with isotropic one-sigma error.
    pub fn from_fix(center: Point, sigma_m: f64, timestamp_s: f64) -> Self {
        PositionEstimate {
            xy: center,
            cov: Cov2::isotropic(sigma_m * sigma_m),
            floor_index: None,
            n_reports_used: 0,
            timestamp_s,
            degenerate: false,
        }
    }
}

struct Obs {
    p: Point,
    v: f64,
}

/// Profiled negative log-likelihood of a candidate position.
struct Likelihood<'a> {
    obs: &'a [Obs],
    ten_n: f64,
    d_ref: f64,
    inv_two_var: f64,
}

impl Likelihood<'_> {
    fn nll(&self, c: Point) -> f64 {
        let n = self.obs.len() as f64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for o in self.obs {
            let a = o.v + self.ten_n * (o.p.dist(c).max(self.d_ref) / self.d_ref).log10();
            sum += a;
            sum2 += a * a;
        }
        let ssr = (sum2 - sum * sum / n).max(0.0);
        ssr * self.inv_two_var
    }
}

fn has_spread(obs: &[Obs]) -> bool {
    let p0 = obs[0].p;
    let far = obs.iter().map(|o| o.p.dist(p0)).fold(0.0, f64::max);
    if far >= 1.0 {
        return true;
    }
    if far < 0.5 {
        return false;
    }
    obs.iter().enumerate().any(|(i, a)| obs[i + 1..].iter().any(|b| a.p.dist(b.p) >= 1.0))
}

/// Principal direction of the report positions and the largest perpendicular
/// offset from the principal line.
fn principal_spread(obs: &[Obs]) -> ((f64, f64), f64) {
    let n = obs.len() as f64;
    let cx = obs.iter().map(|o| o.p.x).sum::<f64>() / n;
    let cy = obs.iter().map(|o| o.p.y).sum::<f64>() / n;
    let mut c = Cov2 { xx: 0.0, xy: 0.0, yy: 0.0 };
    for o in obs {
        let (dx, dy) = (o.p.x - cx, o.p.y - cy);
        c.xx += dx * dx;
        c.xy += dx * dy;
        c.yy += dy * dy;
    }
    let (_, v) = c.eigen();
    let perp = obs
        .iter()
        .map(|o| ((o.p.x - cx) * -v.1 + (o.p.y - cy) * v.0).abs())
        .fold(0.0, f64::max);
    (v, perp)
}

/// Grid maximum-likelihood position over `area`.
pub fn estimate_position(
    reports: &[MeasurementReport],
    area: Rect,
    rf: &RfParams,
    params: &LcsParams,
    timestamp_s: f64,
) -> Result<PositionEstimate, LcsError> {
    let obs: Vec<Obs> = reports
        .iter()
        .filter(|r| r.rssi.valid && r.mode == SmeMode::Omni)
        .map(|r| Obs { p: r.pose.xy(), v: r.rssi.value_dbm })
        .collect();
    if obs.len() < 4 {
        return Err(LcsError::InsufficientReports(format!("{} valid omni reports, need 4", obs.len())));
    }
    if !has_spread(&obs) {
        return Err(LcsError::InsufficientReports("reports come from fewer than 2 positions 1 m apart".into()));
    }
    let lik = Likelihood {
        obs: &obs,
        ten_n: 10.0 * rf.path_loss_exponent_outdoor,
        d_ref: rf.reference_distance_m,
        inv_two_var: 1.0 / (2.0 * params.residual_sigma_db.powi(2)),
    };
    let h = params.estimator_cell_m;
    let nx = ((area.width() / h).ceil() as usize).max(1);
    let ny = ((area.height() / h).ceil() as usize).max(1);
    let center = |row: usize, col: usize| Point::new(area.x0 + (col as f64 + 0.5) * h, area.y0 + (row as f64 + 0.5) * h);
    let mut best = (f64::INFINITY, 0, 0);
    for row in 0..ny {
        for col in 0..nx {
            let v = lik.nll(center(row, col));
            if v < best.0 {
                best = (v, row, col);
            }
        }
    }
    let coarse = center(best.1, best.2);

    // fine pass at h/5 over the coarse cell and its neighbours
    let hf = h / 5.0;
    let mut fine = (best.0, coarse);
    for j in -5..=5 {
        for i in -5..=5 {
            let c = Point::new(coarse.x + i as f64 * hf, coarse.y + j as f64 * hf);
            let v = lik.nll(c);
            if v < fine.0 {
                fine = (v, c);
            }
        }
    }
    let c0 = fine.1;

    let stencil = |step: f64| {
        // 3 × 3 stencil, f[j][i] at offset (i - 1, j - 1) steps
        let mut f = [[0.0; 3]; 3];
        for (j, rowv) in f.iter_mut().enumerate() {
            for (i, v) in rowv.iter_mut().enumerate() {
                *v = lik.nll(Point::new(c0.x + (i as f64 - 1.0) * step, c0.y + (j as f64 - 1.0) * step));
            }
        }
        let col_sum = |i: usize| f[0][i] + f[1][i] + f[2][i];
        let row_sum = |j: usize| f[j][0] + f[j][1] + f[j][2];
        let gx = (col_sum(2) - col_sum(0)) / (6.0 * step);
        let gy = (row_sum(2) - row_sum(0)) / (6.0 * step);
        let dxx = (col_sum(0) + col_sum(2) - 2.0 * col_sum(1)) / (6.0 * step * step);
        let dyy = (row_sum(0) + row_sum(2) - 2.0 * row_sum(1)) / (6.0 * step * step);
        let exy = (f[2][2] - f[0][2] - f[2][0] + f[0][0]) / (4.0 * step * step);
        ((gx, gy), Cov2 { xx: 2.0 * dxx, xy: exy, yy: 2.0 * dyy })
    };

    // sub-cell step from the fine stencil; curvature for the covariance from
    // the coarse one, which is less sensitive to the log kink at the peak
    let ((gx, gy), hf_hess) = stencil(hf);
    let mut xy = c0;
    let det = hf_hess.det();
    if hf_hess.xx > 0.0 && det > 0.0 {
        let dx = -(hf_hess.yy * gx - hf_hess.xy * gy) / det;
        let dy = -(-hf_hess.xy * gx + hf_hess.xx * gy) / det;
        let cand = Point::new(c0.x + dx.clamp(-hf, hf), c0.y + dy.clamp(-hf, hf));
        if lik.nll(cand) <= fine.0 {
            xy = cand;
        }
    }
    let (_, hess) = stencil(h);

    let scale_sigma = area.width().hypot(area.height()) / 6.0;
    let big_var = scale_sigma * scale_sigma;
    let floor_var = (h / 2.0).powi(2);
    let ((l1, l2), v) = hess.eigen();
    // eigenvalues of the Hessian map to variances 1/λ along the same axes
    let inv = |l: f64| if l > 0.0 { (1.0 / l).min(big_var) } else { big_var };
    let mut cov = Cov2::from_principal(inv(l1).max(floor_var), inv(l2).max(floor_var), v);

    let (dir, perp) = principal_spread(&obs);
    let degenerate = perp <= 0.5;
    if degenerate {
        let ((c1, c2), cv) = cov.eigen();
        let along = (cv.0 * dir.0 + cv.1 * dir.1).abs();
        // variance along the report line, then inflate its normal
        let var_line = if along > std::f64::consts::FRAC_1_SQRT_2 { c1 } else { c2 };
        cov = Cov2::from_principal(var_line, big_var.max(var_line), dir);
    }

    Ok(PositionEstimate {
        xy,
        cov,
        floor_index: None,
        n_reports_used: obs.len(),
        timestamp_s,
        degenerate,
    })
}

/// Sliding-window wrapper that re-solves at a fixed cadence, giving a
/// filter-like estimate whose ellipse shrinks as SMEs close in.
#[derive(Debug, Clone)]
pub struct SequentialEstimator {
    window: VecDeque<MeasurementReport>,
    capacity: usize,
    interval_s: f64,
    last_solve_s: Option<f64>,
    pub latest: Option<PositionEstimate>,
}

impl SequentialEstimator {
    pub fn new(params: &LcsParams) -> Self {
        SequentialEstimator {
            window: VecDeque::with_capacity(params.window_reports),
            capacity: params.window_reports.max(4),
            interval_s: params.resolve_interval_s,
            last_solve_s: None,
            latest: None,
        }
    }

    pub fn push(&mut self, r: MeasurementReport) {
        if !(r.rssi.valid && r.mode == SmeMode::Omni) {
            return;
        }
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(r);
    }

    /// Re-solves when at least one interval has elapsed since the last solve.
    pub fn maybe_solve(&mut self, now_s: f64, area: Rect, rf: &RfParams, params: &LcsParams) -> Option<&PositionEstimate> {
        if self.last_solve_s.is_some_and(|t| now_s - t < self.interval_s - 1e-9) {
            return None;
        }
        let reports: Vec<MeasurementReport> = self.window.iter().cloned().collect();
        match estimate_position(&reports, area, rf, params, now_s) {
            Ok(est) => {
                self.last_solve_s = Some(now_s);
                self.latest = Some(est);
                self.latest.as_ref()
            }
            Err(_) => None,
        }
    }
}
