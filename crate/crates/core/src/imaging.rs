//! Line stitching, anomaly detection and metal/wood classification.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scan::ScanSession;

/// Baseline-removed anomaly map. Rows run across track (row 0 is the first
/// line), columns along track at the encoder pitch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsurfaceImage {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// World position of cell (0, 0).
    pub origin_mm: [f64; 2],
    pub along: [f64; 2],
    pub across: [f64; 2],
    pub x_pitch_mm: f64,
    pub y_pitch_mm: f64,
    /// Converter quantization step; floor for the detection threshold.
    pub noise_floor_pf: f64,
    pub provenance: String,
}

impl SubsurfaceImage {
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// World coordinates of a cell center.
    pub fn position_mm(&self, r: f64, c: f64) -> [f64; 2] {
        let s = c * self.x_pitch_mm;
        let t = r * self.y_pitch_mm;
        [
            self.origin_mm[0] + s * self.along[0] + t * self.across[0],
            self.origin_mm[1] + s * self.along[1] + t * self.across[1],
        ]
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    median(&dev)
}

/// Stitch the lines of a session into an image with rows every `y_pitch_mm`.
pub fn assemble(session: &ScanSession, y_pitch_mm: f64) -> Result<SubsurfaceImage> {
    if !(y_pitch_mm.is_finite() && y_pitch_mm > 0.0) {
        return Err(Error::InvalidParameter(format!("y_pitch must be positive, got {y_pitch_mm}")));
    }
    let lines = &session.lines;
    if lines.is_empty() || lines[0].samples.is_empty() {
        return Err(Error::InvalidParameter("session has no samples".into()));
    }
    let cols = lines[0].samples.len();
    if let Some((j, l)) = lines.iter().enumerate().find(|(_, l)| l.samples.len() != cols) {
        return Err(Error::InvalidParameter(format!(
            "line {j} has {} samples, line 0 has {cols}",
            l.samples.len()
        )));
    }
    let anomalies: Vec<Vec<f64>> = lines
        .iter()
        .map(|l| {
            let cal: Vec<f64> = l.samples.iter().map(|s| s.calibrated_pf).collect();
            let b = median(&cal);
            cal.iter().map(|c| c - b).collect()
        })
        .collect();
    let offsets: Vec<f64> = lines.iter().map(|l| l.offset_mm).collect();
    let t0 = offsets[0];
    let span = offsets[offsets.len() - 1] - t0;
    let mut values = Vec::new();
    let rows;
    if lines.len() == 1 {
        rows = 1;
        values.extend_from_slice(&anomalies[0]);
    } else {
        rows = (span / y_pitch_mm + 1e-9).floor() as usize + 1;
        for r in 0..rows {
            let t = t0 + r as f64 * y_pitch_mm;
            let k = offsets
                .windows(2)
                .position(|w| t <= w[1] + 1e-9)
                .unwrap_or(offsets.len() - 2);
            let w = ((t - offsets[k]) / (offsets[k + 1] - offsets[k])).clamp(0.0, 1.0);
            for c in 0..cols {
                values.push((1.0 - w) * anomalies[k][c] + w * anomalies[k + 1][c]);
            }
        }
    }
    let path = &session.path;
    let across = path.across();
    Ok(SubsurfaceImage {
        rows,
        cols,
        values,
        origin_mm: [path.origin_mm[0] + t0 * across[0], path.origin_mm[1] + t0 * across[1]],
        along: path.direction,
        across,
        x_pitch_mm: session.encoder.tick_distance_mm(),
        y_pitch_mm,
        noise_floor_pf: session.converter.resolution_pf,
        provenance: session.digest(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Metal,
    Wood,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub centroid_mm: [f64; 2],
    pub yaw_deg: f64,
    /// `[x_min, y_min, x_max, y_max]` over the member cell centers.
    pub bbox_mm: [f64; 4],
    pub peak_anomaly_pf: f64,
    pub area_mm2: f64,
    pub cells: usize,
    pub klass: ObjectClass,
}

pub const DEFAULT_K_MAD: f64 = 4.0;
pub const DEFAULT_METAL_RATIO: f64 = 3.0;

/// `k_mad` times the MAD of the image, never below `k_mad` quantization steps.
pub fn threshold_pf(img: &SubsurfaceImage, k_mad: f64) -> f64 {
    k_mad * mad(&img.values).max(img.noise_floor_pf)
}

/// Anomaly-weighted principal-axis angle of a point set, degrees in [0, 180).
pub fn principal_yaw_deg(points: &[([f64; 2], f64)]) -> f64 {
    let wsum: f64 = points.iter().map(|p| p.1).sum();
    let cx = points.iter().map(|p| p.0[0] * p.1).sum::<f64>() / wsum;
    let cy = points.iter().map(|p| p.0[1] * p.1).sum::<f64>() / wsum;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (p, w) in points {
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        sxx += w * dx * dx;
        syy += w * dy * dy;
        sxy += w * dx * dy;
    }
    let yaw = 0.5 * (2.0 * sxy).atan2(sxx - syy).to_degrees();
    crate::scene::normalize_yaw(yaw)
}

pub fn detect(img: &SubsurfaceImage, k_mad: f64) -> Vec<Detection> {
    let thr = threshold_pf(img, k_mad);
    let (rows, cols) = (img.rows, img.cols);
    let above: Vec<bool> = img.values.iter().map(|v| *v > thr).collect();
    let mut seen = vec![false; above.len()];
    let mut out = Vec::new();
    for start in 0..above.len() {
        if !above[start] || seen[start] {
            continue;
        }
        let mut group = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            group.push(i);
            let (r, c) = ((i / cols) as i64, (i % cols) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    let j = nr as usize * cols + nc as usize;
                    if above[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if group.len() < 2 {
            continue;
        }
        group.sort_unstable();
        let points: Vec<([f64; 2], f64)> = group
            .iter()
            .map(|&i| (img.position_mm((i / cols) as f64, (i % cols) as f64), img.values[i]))
            .collect();
        let wsum: f64 = points.iter().map(|p| p.1).sum();
        let centroid = [
            points.iter().map(|p| p.0[0] * p.1).sum::<f64>() / wsum,
            points.iter().map(|p| p.0[1] * p.1).sum::<f64>() / wsum,
        ];
        let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for (p, _) in &points {
            bbox[0] = bbox[0].min(p[0]);
            bbox[1] = bbox[1].min(p[1]);
            bbox[2] = bbox[2].max(p[0]);
            bbox[3] = bbox[3].max(p[1]);
        }
        out.push(Detection {
            centroid_mm: centroid,
            yaw_deg: principal_yaw_deg(&points),
            bbox_mm: bbox,
            peak_anomaly_pf: points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
            area_mm2: group.len() as f64 * img.x_pitch_mm * img.y_pitch_mm,
            cells: group.len(),
            klass: ObjectClass::Unknown,
        });
    }
    out
}

pub fn classify(detections: &[Detection], img: &SubsurfaceImage, k_mad: f64, metal_ratio: f64) -> Vec<Detection> {
    let thr = threshold_pf(img, k_mad);
    detections
        .iter()
        .map(|d| {
            let klass = if d.peak_anomaly_pf >= metal_ratio * thr {
                ObjectClass::Metal
            } else if d.peak_anomaly_pf > thr {
                ObjectClass::Wood
            } else {
                ObjectClass::Unknown
            };
            Detection { klass, ..d.clone() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> SubsurfaceImage {
        SubsurfaceImage {
            rows,
            cols,
            values: (0..rows * cols).map(|i| f(i / cols, i % cols)).collect(),
            origin_mm: [0.0, 0.0],
            along: [1.0, 0.0],
            across: [0.0, 1.0],
            x_pitch_mm: 10.0,
            y_pitch_mm: 10.0,
            noise_floor_pf: 0.0005,
            provenance: String::new(),
        }
    }

    #[test]
    fn median_and_mad() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mad(&[1.0, 1.0, 2.0, 2.0, 4.0, 6.0, 9.0]), 1.0);
    }

    #[test]
    fn zero_image_has_no_detections() {
        assert!(detect(&image(5, 9, |_, _| 0.0), 4.0).is_empty());
    }

    #[test]
    fn axis_aligned_bars_give_axis_yaws() {
        let horiz = image(9, 20, |r, c| if r == 4 && (3..15).contains(&c) { 1.0 } else { 0.0 });
        let d = detect(&horiz, 4.0);
        assert_eq!(d.len(), 1);
        assert!(d[0].yaw_deg.abs() < 1e-9);
        assert_eq!(d[0].centroid_mm, [85.0, 40.0]);
        let vert = image(12, 9, |r, c| if c == 2 && (1..11).contains(&r) { 0.5 } else { 0.0 });
        let d = detect(&vert, 4.0);
        assert!((d[0].yaw_deg - 90.0).abs() < 1e-9);
    }

    #[test]
    fn single_cells_are_discarded() {
        let img = image(5, 5, |r, c| if r == 2 && c == 2 { 1.0 } else { 0.0 });
        assert!(detect(&img, 4.0).is_empty());
    }

    #[test]
    fn diagonal_neighbors_join() {
        let img = image(6, 6, |r, c| if r == c { 1.0 } else { 0.0 });
        let d = detect(&img, 4.0);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].cells, 6);
        assert!((d[0].yaw_deg - 45.0).abs() < 1e-9);
    }

    #[test]
    fn classes_follow_peak_ratio() {
        let img = image(4, 12, |r, c| match (r, c) {
            (1, 1..=3) => 1.0,
            (1, 7..=9) => 0.004,
            _ => 0.0,
        });
        let thr = threshold_pf(&img, 4.0);
        assert_eq!(thr, 0.002);
        let d = classify(&detect(&img, 4.0), &img, 4.0, 3.0);
        let classes: Vec<_> = d.iter().map(|d| d.klass).collect();
        assert_eq!(classes, vec![ObjectClass::Metal, ObjectClass::Wood]);
        assert!(classify(&[], &img, 4.0, 3.0).is_empty());
    }
}
