//! RSSI contour maps by inverse-distance weighting.

use super::{LcsError, LcsParams};
use crate::geometry::{Point, Rect};
use crate::sme::{MeasurementReport, SmeMode};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapRegion {
    Outdoor { area: Rect },
    Floor { building: usize, floor: usize, area: Rect },
}

impl MapRegion {
    pub fn area(&self) -> Rect {
        match self {
            MapRegion::Outdoor { area } | MapRegion::Floor { area, .. } => *area,
        }
    }

    /// Whether a report belongs to this region. Indoor reports are attributed
    /// to the floor of the measuring SME.
    pub fn admits(&self, r: &MeasurementReport) -> bool {
        let p = r.pose.xy();
        match *self {
            MapRegion::Outdoor { area } => !r.pose.is_indoor() && area.contains(p),
            MapRegion::Floor { building, floor, area } => {
                r.pose.building_index == Some(building) && r.pose.floor_index == Some(floor) && area.contains(p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub row: usize,
    pub col: usize,
    pub value_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourMap {
    pub region: MapRegion,
    pub cell_size: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major (row = y index) cell values; `None` marks unsupported cells.
    pub values: Vec<Option<f64>>,
    pub peak: Option<Peak>,
    pub generation: u64,
}

impl ContourMap {
    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        let a = self.region.area();
        Point::new(a.x0 + (col as f64 + 0.5) * self.cell_size, a.y0 + (row as f64 + 0.5) * self.cell_size)
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.nx + col]
    }

    pub fn peak_point(&self) -> Option<Point> {
        self.peak.map(|p| self.cell_center(p.row, p.col))
    }

    /// Cell containing `p`, if inside the map.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let a = self.region.area();
        if !a.contains(p) {
            return None;
        }
        let col = (((p.x - a.x0) / self.cell_size) as usize).min(self.nx - 1);
        let row = (((p.y - a.y0) / self.cell_size) as usize).min(self.ny - 1);
        Some((row, col))
    }

    /// Highest-valued cell among those containing one of `points`; ties go
    /// to the lowest (row, col).
    pub fn sampled_peak(&self, points: impl IntoIterator<Item = Point>) -> Option<Peak> {
        let mut cells: Vec<(usize, usize)> = points.into_iter().filter_map(|p| self.cell_of(p)).collect();
        cells.sort_unstable();
        cells.dedup();
        let mut best: Option<Peak> = None;
        for (row, col) in cells {
            if let Some(v) = self.get(row, col) {
                if best.is_none_or(|b| v > b.value_dbm) {
                    best = Some(Peak { row, col, value_dbm: v });
                }
            }
        }
        best
    }

    pub fn unmasked(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// CSV dump: `row,col,x,y,rssi_dbm` (empty value for masked cells).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "col", "x", "y", "rssi_dbm"])?;
        for row in 0..self.ny {
            for col in 0..self.nx {
                let c = self.cell_center(row, col);
                let v = self.get(row, col).map(|v| format!("{v:.3}")).unwrap_or_default();
                w.write_record(&[row.to_string(), col.to_string(), format!("{:.3}", c.x), format!("{:.3}", c.y), v])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

struct Sample {
    p: Point,
    v: f64,
}

/// Orders candidate neighbours by distance, then position and value, so the
/// selected set does not depend on input order.
fn neighbour_key(a: &(f64, &Sample), b: &(f64, &Sample)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.p.x.total_cmp(&b.1.p.x))
        .then(a.1.p.y.total_cmp(&b.1.p.y))
        .then(a.1.v.total_cmp(&b.1.v))
}

/// Interpolates valid omnidirectional reports inside `region` onto a grid of
/// `cell_size` cells.
///
/// Each cell takes the IDW mean (in dB) of its `k` nearest reports. A cell
/// whose centre lies within `cell_size / 4` of a report takes that report's
/// value; cells farther than `3 · cell_size · √k` from every report are masked.
pub fn interpolate_idw(
    reports: &[MeasurementReport],
    region: MapRegion,
    cell_size: f64,
    params: &LcsParams,
) -> Result<ContourMap, LcsError> {
    let samples: Vec<Sample> = reports
        .iter()
        .filter(|r| r.rssi.valid && r.mode == SmeMode::Omni && region.admits(r))
        .map(|r| Sample { p: r.pose.xy(), v: r.rssi.value_dbm })
        .collect();
    if samples.is_empty() {
        return Err(LcsError::NoValidReports);
    }
    let area = region.area();
    let nx = ((area.width() / cell_size).ceil() as usize).max(1);
    let ny = ((area.height() / cell_size).ceil() as usize).max(1);
    let k = params.idw_k.max(1);
    let exact_r = cell_size / 4.0;
    let mask_r = 3.0 * cell_size * (k as f64).sqrt();
    let mut values = Vec::with_capacity(nx * ny);
    let mut near: Vec<(f64, &Sample)> = Vec::with_capacity(k + 1);
    for row in 0..ny {
        for col in 0..nx {
            let c = Point::new(area.x0 + (col as f64 + 0.5) * cell_size, area.y0 + (row as f64 + 0.5) * cell_size);
            near.clear();
            for s in &samples {
                let d = s.p.dist(c);
                let cand = (d, s);
                if near.len() < k || neighbour_key(&cand, near.last().unwrap()).is_lt() {
                    let pos = near.partition_point(|x| neighbour_key(x, &cand).is_lt());
                    near.insert(pos, cand);
                    near.truncate(k);
                }
            }
            let (d0, s0) = near[0];
            let v = if d0 <= exact_r {
                Some(s0.v)
            } else if d0 > mask_r {
                None
            } else {
                // Weighted offsets from the neighbourhood minimum keep constant
                // inputs exact; the clamp absorbs rounding at the range ends.
                let lo = near.iter().map(|x| x.1.v).fold(f64::INFINITY, f64::min);
                let hi = near.iter().map(|x| x.1.v).fold(f64::NEG_INFINITY, f64::max);
                let (mut num, mut den) = (0.0, 0.0);
                for (d, s) in &near {
                    let w = d.powf(-params.idw_power);
                    num += w * (s.v - lo);
                    den += w;
                }
                Some((lo + num / den).clamp(lo, hi))
            };
            values.push(v);
        }
    }
    let mut map = ContourMap {
        region,
        cell_size,
        nx,
        ny,
        values,
        peak: None,
        generation: 0,
    };
    map.peak = find_peak(&map).ok();
    Ok(map)
}

/// Highest unmasked cell; ties go to the lowest `(row, col)`.
pub fn find_peak(map: &ContourMap) -> Result<Peak, LcsError> {
    let mut best: Option<Peak> = None;
    for row in 0..map.ny {
        for col in 0..map.nx {
            if let Some(v) = map.get(row, col) {
                if best.is_none_or(|b| v > b.value_dbm) {
                    best = Some(Peak { row, col, value_dbm: v });
                }
            }
        }
    }
    best.ok_or(LcsError::FullyMasked)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::uplink::RssiSample;
    use crate::world::Pose;

    pub fn report(x: f64, y: f64, v: f64) -> MeasurementReport {
        MeasurementReport {
            sme_id: "s".into(),
            target_id: "t".into(),
            timestamp_s: 0.0,
            pose: Pose::outdoor(Point::new(x, y), 0.0),
            mode: SmeMode::Omni,
            heading_rad: None,
            rssi: RssiSample { value_dbm: v, timestamp_s: 0.0, valid: true },
        }
    }

    fn region() -> MapRegion {
        MapRegion::Outdoor { area: Rect::new(0.0, 0.0, 50.0, 50.0) }
    }

    #[test]
    fn single_report_fills_unmasked_cells() {
        let m = interpolate_idw(&[report(20.0, 20.0, -71.5)], region(), 5.0, &LcsParams::default()).unwrap();
        assert!(m.unmasked() > 0);
        assert!(m.values.iter().flatten().all(|v| *v == -71.5));
    }

    #[test]
    fn exact_at_report_location() {
        let reps = [report(12.5, 7.5, -60.0), report(30.0, 30.0, -90.0), report(14.0, 9.0, -75.0)];
        let m = interpolate_idw(&reps, region(), 5.0, &LcsParams::default()).unwrap();
        assert_eq!(m.get(1, 2), Some(-60.0));
    }

    #[test]
    fn equidistant_pair_averages() {
        // cell (row 2, col 2) centre is (12.5, 12.5)
        let reps = [report(2.5, 12.5, -60.0), report(22.5, 12.5, -80.0)];
        let m = interpolate_idw(&reps, region(), 5.0, &LcsParams::default()).unwrap();
        assert!((m.get(2, 2).unwrap() + 70.0).abs() < 1e-12);
    }

    #[test]
    fn masks_far_cells_and_skips_invalid() {
        let mut bad = report(45.0, 45.0, -50.0);
        bad.rssi.valid = false;
        let mut dir = report(40.0, 45.0, -40.0);
        dir.mode = SmeMode::Directional;
        let m = interpolate_idw(&[report(2.0, 2.0, -80.0), bad, dir], region(), 5.0, &LcsParams::default()).unwrap();
        assert_eq!(m.get(9, 9), None);
        assert_eq!(m.peak.unwrap().value_dbm, -80.0);
        assert_eq!(
            interpolate_idw(&[report(60.0, 60.0, -50.0)], region(), 5.0, &LcsParams::default()),
            Err(LcsError::NoValidReports)
        );
    }

    #[test]
    fn peak_tie_rule_and_single_cell() {
        let mut m = ContourMap {
            region: region(),
            cell_size: 10.0,
            nx: 3,
            ny: 2,
            values: vec![None, Some(-5.0), None, Some(-5.0), None, None],
            peak: None,
            generation: 0,
        };
        assert_eq!(find_peak(&m).unwrap(), Peak { row: 0, col: 1, value_dbm: -5.0 });
        m.values = vec![None, None, None, None, Some(-9.0), None];
        assert_eq!(find_peak(&m).unwrap(), Peak { row: 1, col: 1, value_dbm: -9.0 });
        m.values = vec![None; 6];
        assert_eq!(find_peak(&m), Err(LcsError::FullyMasked));
    }

    #[test]
    fn radial_field_peak_at_centre() {
        let mut values = Vec::new();
        let (cr, cc) = (7usize, 4usize);
        for r in 0..12 {
            for c in 0..10 {
                let d = ((r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2)).sqrt();
                values.push(Some(-40.0 - 3.0 * d));
            }
        }
        let m = ContourMap { region: region(), cell_size: 5.0, nx: 10, ny: 12, values, peak: None, generation: 0 };
        let p = find_peak(&m).unwrap();
        assert_eq!((p.row, p.col), (cr, cc));
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let m = interpolate_idw(&[report(20.0, 20.0, -71.5)], region(), 10.0, &LcsParams::default()).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 26);
    }
}
