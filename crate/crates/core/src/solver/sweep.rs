use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{solve, DepthProfile, SolverConfig};
use crate::electrodes::ElectrodeAssembly;
use crate::error::{Error, Result};
use crate::scene::{Material, PermittivityGrid, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Separation,
    LiftOff,
    Shape,
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "separation" => Ok(SweepParam::Separation),
            "liftoff" | "lift_off" | "lift-off" => Ok(SweepParam::LiftOff),
            "shape" => Ok(SweepParam::Shape),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep parameter `{other}` (expected separation, liftoff or shape)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: String,
    pub capacitance_pf: f64,
    pub profile: DepthProfile,
}

/// Homogeneous plywood sample used by the parameter studies.
pub fn sweep_scene(voxel_mm: f64) -> Scene {
    Scene::slab([160.0, 160.0, 60.0], voxel_mm, Material::plywood(), 60.0)
}

/// The assembly for one sweep value, derived from `base`.
pub fn variant(base: &ElectrodeAssembly, param: SweepParam, value: &str) -> Result<ElectrodeAssembly> {
    let number = || -> Result<f64> {
        value
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::InvalidParameter(format!("sweep value `{value}` is not a number")))
    };
    let mut a = base.clone();
    match param {
        SweepParam::Separation => a.separation_mm = number()?,
        SweepParam::LiftOff => a.lift_off_mm = number()?,
        SweepParam::Shape => {
            let named = ElectrodeAssembly::lookup(value.trim())?;
            a.positive = named.positive;
            a.negative = named.negative;
        }
    }
    a.validate()?;
    Ok(a)
}

/// One solve per value with the head over the grid center. Rows come back in
/// input order; the first failing value (in input order) is reported.
pub fn sweep(
    grid: &PermittivityGrid,
    base: &ElectrodeAssembly,
    param: SweepParam,
    values: &[String],
    config: &SolverConfig,
) -> Result<Vec<SweepPoint>> {
    let ext = grid.extents_mm();
    let head = [ext[0] / 2.0, ext[1] / 2.0];
    let rows: Vec<Result<SweepPoint>> = values
        .par_iter()
        .map(|v| {
            let run = || -> Result<SweepPoint> {
                let a = variant(base, param, v)?;
                let f = solve(grid, &a, head, config)?;
                Ok(SweepPoint {
                    value: v.clone(),
                    capacitance_pf: f.capacitance_energy_pf(),
                    profile: f.centerline_profile(),
                })
            };
            run().map_err(|e| Error::Sweep {
                value: v.clone(),
                source: Box::new(e),
            })
        })
        .collect();
    rows.into_iter().collect()
}

pub const SWEEP_CSV_HEADER: &str = "value,capacitance_pF,depth_mm,field_V_per_mm";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for p in points {
        for (d, e) in p.profile.depth_mm.iter().zip(&p.profile.field_v_per_mm) {
            writeln!(out, "{},{:.9},{:.3},{:.9e}", p.value, p.capacitance_pf, d, e).unwrap();
        }
    }
    out
}
