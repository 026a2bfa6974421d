//! Search boundaries from position covariance.

use super::{Cov2, LcsError, PositionEstimate};
use crate::geometry::{Point, Rect};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBoundary {
    pub center: Point,
    pub semi_major_m: f64,
    pub semi_minor_m: f64,
    /// Direction of the major axis, radians from +x.
    pub orientation_rad: f64,
    pub bounding: Rect,
}

impl SearchBoundary {
    pub fn area_m2(&self) -> f64 {
        std::f64::consts::PI * self.semi_major_m * self.semi_minor_m
    }

    pub fn contains(&self, p: Point) -> bool {
        let (c, s) = (self.orientation_rad.cos(), self.orientation_rad.sin());
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.semi_major_m).powi(2) + (v / self.semi_minor_m).powi(2) <= 1.0
    }
}

/// Ellipse at `sigmas` standard deviations around the estimate, with its
/// axis-aligned bounding rectangle.
pub fn derive_boundary(est: &PositionEstimate, sigmas: f64) -> Result<SearchBoundary, LcsError> {
    let c: Cov2 = est.cov;
    let scale = c.xx.abs().max(c.yy.abs()).max(1e-300);
    if ![c.xx, c.xy, c.yy].iter().all(|v| v.is_finite()) {
        return Err(LcsError::NonPsdCovariance);
    }
    let ((l1, l2), v) = c.eigen();
    if l2 < -1e-12 * scale || l1 <= 0.0 || l2 <= 0.0 {
        return Err(LcsError::NonPsdCovariance);
    }
    let a = sigmas * l1.sqrt();
    let b = sigmas * l2.sqrt();
    let theta = v.1.atan2(v.0);
    let (ct, st) = (theta.cos(), theta.sin());
    let hx = (a * a * ct * ct + b * b * st * st).sqrt();
    let hy = (a * a * st * st + b * b * ct * ct).sqrt();
    Ok(SearchBoundary {
        center: est.xy,
        semi_major_m: a,
        semi_minor_m: b,
        orientation_rad: theta,
        bounding: Rect::new(est.xy.x - hx, est.xy.y - hy, est.xy.x + hx, est.xy.y + hy),
    })
}

/// Ratio of search areas for two boundary radii.
pub fn area_ratio(r_new_m: f64, r_old_m: f64) -> f64 {
    (r_new_m * r_new_m) / (r_old_m * r_old_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(cov: Cov2) -> PositionEstimate {
        PositionEstimate {
            xy: Point::new(10.0, 20.0),
            cov,
            floor_index: None,
            n_reports_used: 10,
            timestamp_s: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn isotropic_is_circle() {
        let b = derive_boundary(&est(Cov2::isotropic(16.0)), 3.0).unwrap();
        assert_eq!((b.semi_major_m, b.semi_minor_m), (12.0, 12.0));
        assert_eq!(b.bounding, Rect::new(-2.0, 8.0, 22.0, 32.0));
    }

    #[test]
    fn eigenvalue_axes() {
        let v = (0.6, 0.8);
        let b = derive_boundary(&est(Cov2::from_principal(100.0, 25.0, v)), 3.0).unwrap();
        assert!((b.semi_major_m - 30.0).abs() < 1e-9);
        assert!((b.semi_minor_m - 15.0).abs() < 1e-9);
        assert!((b.orientation_rad.tan() - 0.8 / 0.6).abs() < 1e-9);
        // ellipse inside its bounding box
        for k in 0..360 {
            let t = (k as f64).to_radians();
            let (c, s) = (b.orientation_rad.cos(), b.orientation_rad.sin());
            let (u, w) = (b.semi_major_m * t.cos(), b.semi_minor_m * t.sin());
            let p = Point::new(b.center.x + u * c - w * s, b.center.y + u * s + w * c);
            assert!(b.bounding.distance_to(p) < 1e-9);
        }
    }

    #[test]
    fn testbed_prior_radius() {
        let e = PositionEstimate::from_fix(Point::new(125.0, 150.0), 125.0 / 3.0, 0.0);
        let b = derive_boundary(&e, 3.0).unwrap();
        assert!((b.semi_major_m - 125.0).abs() < 1e-9);
        assert!((b.bounding.width() - 250.0).abs() < 1e-9);
    }

    #[test]
    fn non_psd_rejected() {
        assert_eq!(derive_boundary(&est(Cov2 { xx: 1.0, xy: 5.0, yy: 1.0 }), 3.0), Err(LcsError::NonPsdCovariance));
        assert_eq!(derive_boundary(&est(Cov2 { xx: f64::NAN, xy: 0.0, yy: 1.0 }), 3.0), Err(LcsError::NonPsdCovariance));
    }

    #[test]
    fn area_ratios() {
        assert_eq!(area_ratio(50.0, 125.0), 0.16);
        assert_eq!(area_ratio(7.5, 7.5), 1.0);
        assert!((area_ratio(25.0, 125.0) - 0.04).abs() < 1e-15);
    }
}
