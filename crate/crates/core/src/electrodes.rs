//! Parametric coplanar electrode pairs.
//!
//! Every pair is laid out in a local frame whose origin is the midpoint of the
//! inter-electrode gap: the positive electrode lies at negative local x, the
//! negative one at positive x. A pair of combs is interdigitated instead, with
//! teeth alternating along y. Electrodes are zero-thickness and are rasterized
//! onto one voxel plane above the sample surface.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::PermittivityGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ElectrodeShape {
    /// `pitch_mm` is the center spacing of adjacent, oppositely charged teeth
    /// when two combs interleave.
    Comb {
        teeth: u32,
        tooth_width_mm: f64,
        tooth_length_mm: f64,
        pitch_mm: f64,
        spine_width_mm: f64,
    },
    Circular {
        radius_mm: f64,
    },
    /// Isosceles; `base_mm` runs along y, `height_mm` along the pair axis with
    /// the apex pointing at the other electrode.
    Triangular {
        base_mm: f64,
        height_mm: f64,
    },
    /// `width_mm` along the pair axis, `height_mm` across it.
    Plate {
        width_mm: f64,
        height_mm: f64,
    },
}

impl ElectrodeShape {
    pub fn area_mm2(&self) -> f64 {
        match *self {
            ElectrodeShape::Comb {
                teeth,
                tooth_width_mm,
                tooth_length_mm,
                pitch_mm,
                spine_width_mm,
            } => {
                let n = teeth as f64;
                n * tooth_width_mm * tooth_length_mm
                    + spine_width_mm * comb_span(teeth, tooth_width_mm, pitch_mm)
            }
            ElectrodeShape::Circular { radius_mm } => PI * radius_mm * radius_mm,
            ElectrodeShape::Triangular { base_mm, height_mm } => 0.5 * base_mm * height_mm,
            ElectrodeShape::Plate {
                width_mm,
                height_mm,
            } => width_mm * height_mm,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ElectrodeShape::Comb { .. } => "comb",
            ElectrodeShape::Circular { .. } => "circular",
            ElectrodeShape::Triangular { .. } => "triangular",
            ElectrodeShape::Plate { .. } => "plate",
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidAssembly(format!("{} {name} must be > 0", self.name())))
            }
        };
        match *self {
            ElectrodeShape::Comb {
                teeth,
                tooth_width_mm,
                tooth_length_mm,
                pitch_mm,
                spine_width_mm,
            } => {
                if teeth == 0 {
                    return Err(Error::InvalidAssembly("comb needs at least one tooth".into()));
                }
                positive("tooth_width_mm", tooth_width_mm)?;
                positive("tooth_length_mm", tooth_length_mm)?;
                positive("pitch_mm", pitch_mm)?;
                positive("spine_width_mm", spine_width_mm)?;
                if pitch_mm <= tooth_width_mm {
                    return Err(Error::InvalidAssembly("comb pitch must exceed tooth width".into()));
                }
                Ok(())
            }
            ElectrodeShape::Circular { radius_mm } => positive("radius_mm", radius_mm),
            ElectrodeShape::Triangular { base_mm, height_mm } => {
                positive("base_mm", base_mm)?;
                positive("height_mm", height_mm)
            }
            ElectrodeShape::Plate {
                width_mm,
                height_mm,
            } => {
                positive("width_mm", width_mm)?;
                positive("height_mm", height_mm)
            }
        }
    }

    /// Extent along the pair axis and across it, for side-by-side layout.
    fn extent(&self) -> (f64, f64) {
        match *self {
            ElectrodeShape::Comb {
                teeth,
                tooth_width_mm,
                tooth_length_mm,
                pitch_mm,
                spine_width_mm,
            } => (
                spine_width_mm + tooth_length_mm,
                comb_span(teeth, tooth_width_mm, pitch_mm),
            ),
            ElectrodeShape::Circular { radius_mm } => (2.0 * radius_mm, 2.0 * radius_mm),
            ElectrodeShape::Triangular { base_mm, height_mm } => (height_mm, base_mm),
            ElectrodeShape::Plate {
                width_mm,
                height_mm,
            } => (width_mm, height_mm),
        }
    }

    /// Containment for a shape whose edge nearest the partner sits at `u = 0`
    /// and which extends toward `u > 0` (away from the partner), centered in y.
    fn contains_side(&self, u: f64, v: f64) -> bool {
        let (len, _) = self.extent();
        if !(-EDGE_EPS..=len + EDGE_EPS).contains(&u) {
            return false;
        }
        match *self {
            ElectrodeShape::Comb {
                teeth,
                tooth_width_mm,
                tooth_length_mm,
                pitch_mm,
                ..
            } => {
                // single comb facing its partner: teeth toward u = 0, spine behind
                if u >= tooth_length_mm - EDGE_EPS {
                    return v.abs() <= comb_span(teeth, tooth_width_mm, pitch_mm) / 2.0 + EDGE_EPS;
                }
                let spacing = 2.0 * pitch_mm;
                (0..teeth).any(|k| {
                    let c = (k as f64 - (teeth as f64 - 1.0) / 2.0) * spacing;
                    (v - c).abs() <= tooth_width_mm / 2.0 + EDGE_EPS
                })
            }
            ElectrodeShape::Circular { radius_mm } => {
                let du = u - radius_mm;
                du * du + v * v <= radius_mm * radius_mm + EDGE_EPS
            }
            ElectrodeShape::Triangular { base_mm, height_mm } => {
                v.abs() <= base_mm / 2.0 * (u / height_mm) + EDGE_EPS
            }
            ElectrodeShape::Plate { height_mm, .. } => v.abs() <= height_mm / 2.0 + EDGE_EPS,
        }
    }
}

const EDGE_EPS: f64 = 1e-9;

fn comb_span(teeth: u32, tooth_width_mm: f64, pitch_mm: f64) -> f64 {
    // spine covers both interleaved tooth rows
    (2.0 * teeth as f64 - 1.0) * pitch_mm + tooth_width_mm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeAssembly {
    pub positive: ElectrodeShape,
    pub negative: ElectrodeShape,
    /// Nearest-edge gap between the electrodes (tooth tip to opposite spine
    /// for interleaved combs).
    pub separation_mm: f64,
    /// Electrode plane to sample top surface.
    #[serde(default = "default_lift_off")]
    pub lift_off_mm: f64,
    #[serde(default = "default_excitation")]
    pub excitation_v: f64,
    /// Grounded plane 1 mm behind the electrode plane.
    #[serde(default)]
    pub shield: bool,
}

fn default_lift_off() -> f64 {
    1.0
}

fn default_excitation() -> f64 {
    5.0
}

pub const STANDARD_NAMES: [&str; 4] = [
    "comb_default",
    "circular_default",
    "triangular_default",
    "plate_default",
];

pub const DEFAULT_SEPARATION_MM: f64 = 4.0;

/// Voxel sets of one placed assembly, as signed lattice indices `[ix, iy, iz]`
/// where `iz < 0` is above the sample surface.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    pub positive: Vec<[i64; 3]>,
    pub negative: Vec<[i64; 3]>,
    pub shield: Vec<[i64; 3]>,
    /// Lattice node nearest the requested head position; origin of the local frame.
    pub anchor: [i64; 2],
    pub electrode_layer: i64,
    /// Half-open cell ranges covered by the electrodes in x and y.
    pub x_range: (i64, i64),
    pub y_range: (i64, i64),
}

impl Footprint {
    pub fn cell_count(&self) -> usize {
        self.positive.len() + self.negative.len() + self.shield.len()
    }

    /// Highest occupied layer (the shield if present).
    pub fn top_layer(&self) -> i64 {
        self.shield
            .first()
            .map(|c| c[2])
            .unwrap_or(self.electrode_layer)
    }
}

impl ElectrodeAssembly {
    pub fn new(positive: ElectrodeShape, negative: ElectrodeShape, separation_mm: f64) -> Self {
        ElectrodeAssembly {
            positive,
            negative,
            separation_mm,
            lift_off_mm: default_lift_off(),
            excitation_v: default_excitation(),
            shield: false,
        }
    }

    pub fn symmetric(shape: ElectrodeShape, separation_mm: f64) -> Self {
        ElectrodeAssembly::new(shape, shape, separation_mm)
    }

    pub fn validate(&self) -> Result<()> {
        self.positive.validate()?;
        self.negative.validate()?;
        if !(self.separation_mm.is_finite() && self.separation_mm > 0.0) {
            return Err(Error::InvalidAssembly("separation must be > 0".into()));
        }
        if !(self.lift_off_mm.is_finite() && self.lift_off_mm >= 0.0) {
            return Err(Error::InvalidAssembly("lift-off must be >= 0".into()));
        }
        if !(self.excitation_v.is_finite() && self.excitation_v > 0.0) {
            return Err(Error::InvalidAssembly("excitation must be > 0".into()));
        }
        if let (ElectrodeShape::Comb { tooth_length_mm, .. }, ElectrodeShape::Comb { .. }) =
            (self.positive, self.negative)
        {
            if tooth_length_mm <= self.separation_mm {
                return Err(Error::InvalidAssembly(
                    "interleaved comb teeth must be longer than the separation".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn total_area_mm2(&self) -> f64 {
        self.positive.area_mm2() + self.negative.area_mm2()
    }

    pub fn lookup(name: &str) -> Result<ElectrodeAssembly> {
        standard_assemblies()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::UnknownPreset(name.to_owned()))
    }

    fn interleaved(&self) -> bool {
        matches!(
            (self.positive, self.negative),
            (ElectrodeShape::Comb { .. }, ElectrodeShape::Comb { .. })
        )
    }

    /// Local-frame bounding box `(x0, x1, y0, y1)` in mm.
    pub fn local_bounds(&self) -> (f64, f64, f64, f64) {
        let s = self.separation_mm;
        if let (
            ElectrodeShape::Comb {
                teeth,
                tooth_width_mm,
                tooth_length_mm,
                pitch_mm,
                spine_width_mm,
            },
            ElectrodeShape::Comb {
                spine_width_mm: neg_spine,
                ..
            },
        ) = (self.positive, self.negative)
        {
            let half_x = (spine_width_mm + neg_spine + s + tooth_length_mm) / 2.0;
            let half_y = comb_span(teeth, tooth_width_mm, pitch_mm) / 2.0;
            return (-half_x, half_x, -half_y, half_y);
        }
        let (lp, wp) = self.positive.extent();
        let (ln, wn) = self.negative.extent();
        let half_y = wp.max(wn) / 2.0;
        (-s / 2.0 - lp, s / 2.0 + ln, -half_y, half_y)
    }

    /// Polarity of a local-frame point: `Some(true)` positive, `Some(false)` negative.
    pub fn polarity_at(&self, x: f64, y: f64) -> Option<bool> {
        let s = self.separation_mm;
        if self.interleaved() {
            return self.interleaved_polarity(x, y);
        }
        if self.positive.contains_side(-s / 2.0 - x, y) {
            Some(true)
        } else if self.negative.contains_side(x - s / 2.0, y) {
            Some(false)
        } else {
            None
        }
    }

    fn interleaved_polarity(&self, x: f64, y: f64) -> Option<bool> {
        let ElectrodeShape::Comb {
            teeth,
            tooth_width_mm,
            tooth_length_mm,
            pitch_mm,
            spine_width_mm,
        } = self.positive
        else {
            unreachable!()
        };
        let s = self.separation_mm;
        let (x0, x1, y0, y1) = self.local_bounds();
        if y < y0 - EDGE_EPS || y > y1 + EDGE_EPS || x < x0 - EDGE_EPS || x > x1 + EDGE_EPS {
            return None;
        }
        let neg_spine = match self.negative {
            ElectrodeShape::Comb { spine_width_mm, .. } => spine_width_mm,
            _ => unreachable!(),
        };
        if x <= x0 + spine_width_mm + EDGE_EPS {
            return Some(true);
        }
        if x >= x1 - neg_spine - EDGE_EPS {
            return Some(false);
        }
        let count = 2 * teeth as usize;
        let tooth = (0..count).find(|&k| {
            let c = (k as f64 - (count as f64 - 1.0) / 2.0) * pitch_mm;
            (y - c).abs() <= tooth_width_mm / 2.0 + EDGE_EPS
        })?;
        let pos_tip = x0 + spine_width_mm + tooth_length_mm;
        let neg_tip = x0 + spine_width_mm + s;
        if tooth % 2 == 0 {
            (x <= pos_tip + EDGE_EPS).then_some(true)
        } else {
            (x >= neg_tip - EDGE_EPS).then_some(false)
        }
    }

    /// Index of the voxel layer holding the electrodes (negative: above surface).
    pub fn electrode_layer(&self, voxel_mm: f64) -> i64 {
        // layer whose center is nearest the lift-off plane, ties toward the surface
        let k = (self.lift_off_mm / voxel_mm - 1.0 - 1e-9).ceil().max(0.0) as i64;
        -(k + 1)
    }

    /// Place the assembly on the grid lattice with its local origin at the
    /// lattice node nearest `head_mm`. Cells are selected by center containment.
    pub fn footprint(&self, grid: &PermittivityGrid, head_mm: [f64; 2]) -> Result<Footprint> {
        self.validate()?;
        let h = grid.voxel_size_mm();
        let [nx, ny, _] = grid.dims();
        let fp = self.footprint_unchecked(h, head_mm);
        let mut overhang = Vec::new();
        if fp.x_range.0 < 0 {
            overhang.push(format!("{} cells below x = 0", -fp.x_range.0));
        }
        if fp.x_range.1 > nx as i64 {
            overhang.push(format!("{} cells beyond x = {nx}", fp.x_range.1 - nx as i64));
        }
        if fp.y_range.0 < 0 {
            overhang.push(format!("{} cells below y = 0", -fp.y_range.0));
        }
        if fp.y_range.1 > ny as i64 {
            overhang.push(format!("{} cells beyond y = {ny}", fp.y_range.1 - ny as i64));
        }
        if !overhang.is_empty() {
            return Err(Error::OutOfDomain(format!(
                "head at ({:.3}, {:.3}) mm overhangs the grid: {}",
                head_mm[0],
                head_mm[1],
                overhang.join(", ")
            )));
        }
        Ok(fp)
    }

    /// As [`footprint`](Self::footprint) without bounds checks.
    pub fn footprint_unchecked(&self, voxel_mm: f64, head_mm: [f64; 2]) -> Footprint {
        let anchor = [
            (head_mm[0] / voxel_mm).round() as i64,
            (head_mm[1] / voxel_mm).round() as i64,
        ];
        let local = self.local_cells(voxel_mm);
        let layer = self.electrode_layer(voxel_mm);
        let place = |cells: &[[i64; 2]], iz| -> Vec<[i64; 3]> {
            cells
                .iter()
                .map(|c| [c[0] + anchor[0], c[1] + anchor[1], iz])
                .collect()
        };
        let shield_layer = layer - ((1.0 / voxel_mm).round() as i64).max(1);
        let (lx, ly) = (local.x_range, local.y_range);
        let shield = if self.shield {
            let mut v = Vec::new();
            for iy in ly.0..ly.1 {
                for ix in lx.0..lx.1 {
                    v.push([ix + anchor[0], iy + anchor[1], shield_layer]);
                }
            }
            v
        } else {
            Vec::new()
        };
        Footprint {
            positive: place(&local.positive, layer),
            negative: place(&local.negative, layer),
            shield,
            anchor,
            electrode_layer: layer,
            x_range: (lx.0 + anchor[0], lx.1 + anchor[0]),
            y_range: (ly.0 + anchor[1], ly.1 + anchor[1]),
        }
    }

    fn local_cells(&self, h: f64) -> LocalCells {
        let (x0, x1, y0, y1) = self.local_bounds();
        let i0 = (x0 / h - 0.5).floor() as i64;
        let i1 = (x1 / h - 0.5).ceil() as i64 + 1;
        let j0 = (y0 / h - 0.5).floor() as i64;
        let j1 = (y1 / h - 0.5).ceil() as i64 + 1;
        let mut positive = Vec::new();
        let mut negative = Vec::new();
        for j in j0..j1 {
            for i in i0..i1 {
                let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                match self.polarity_at(x, y) {
                    Some(true) => positive.push([i, j]),
                    Some(false) => negative.push([i, j]),
                    None => {}
                }
            }
        }
        let all = positive.iter().chain(&negative);
        let x_range = all
            .clone()
            .fold((i64::MAX, i64::MIN), |(a, b), c| (a.min(c[0]), b.max(c[0] + 1)));
        let y_range = all.fold((i64::MAX, i64::MIN), |(a, b), c| (a.min(c[1]), b.max(c[1] + 1)));
        LocalCells {
            positive,
            negative,
            x_range,
            y_range,
        }
    }
}

struct LocalCells {
    positive: Vec<[i64; 2]>,
    negative: Vec<[i64; 2]>,
    x_range: (i64, i64),
    y_range: (i64, i64),
}

/// Preset comb: one wide tooth per electrode, interleaved across the
/// standard gap. More teeth at the same area pull the field toward the surface.
pub fn default_comb() -> ElectrodeShape {
    ElectrodeShape::Comb {
        teeth: 1,
        tooth_width_mm: 14.0,
        tooth_length_mm: 25.5,
        pitch_mm: 14.0 + DEFAULT_SEPARATION_MM,
        spine_width_mm: 2.0,
    }
}

/// The four shape presets. Shapes carry (nearly) equal area so the shape
/// study compares geometry only.
pub fn standard_assemblies() -> Vec<(String, ElectrodeAssembly)> {
    let shapes = [
        ("comb_default", default_comb()),
        ("circular_default", ElectrodeShape::Circular { radius_mm: 11.5 }),
        (
            "triangular_default",
            ElectrodeShape::Triangular {
                base_mm: 30.0,
                height_mm: 28.0,
            },
        ),
        (
            "plate_default",
            ElectrodeShape::Plate {
                width_mm: 20.0,
                height_mm: 21.0,
            },
        ),
    ];
    shapes
        .into_iter()
        .map(|(name, shape)| {
            (
                name.to_owned(),
                ElectrodeAssembly::symmetric(shape, DEFAULT_SEPARATION_MM),
            )
        })
        .collect()
}
