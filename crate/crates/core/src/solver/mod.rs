//! Electrostatic field solver: cell-centered finite volumes with harmonic-mean
//! face permittivities, solved by multigrid-preconditioned conjugate gradients.

mod linear;
pub mod sweep;

use serde::{Deserialize, Serialize};

use crate::electrodes::{ElectrodeAssembly, Footprint};
use crate::error::{Error, Result};
use crate::scene::PermittivityGrid;

/// Vacuum permittivity in pF/mm.
pub const EPS0_PF_PER_MM: f64 = 8.854_187_812_8e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Outer faces see a ghost layer held at 0 V.
    #[default]
    GroundedBox,
    /// Zero normal flux on the outer faces.
    InsulatedBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub rel_residual_tol: f64,
    pub max_iterations: usize,
    pub boundary: Boundary,
    pub conductor_eps: f64,
    /// Lateral window size as a multiple of the larger footprint extent; the
    /// same multiple, less one, is split between the space above the
    /// electrodes and below the sample.
    pub padding_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_residual_tol: 1e-8,
            max_iterations: 2000,
            boundary: Boundary::GroundedBox,
            conductor_eps: 1e5,
            padding_factor: 3.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_residual_tol > 0.0 && self.rel_residual_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rel_residual_tol must lie in (0, 1), got {}",
                self.rel_residual_tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be at least 1".into()));
        }
        if !(self.conductor_eps.is_finite() && self.conductor_eps > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "conductor_eps must be finite and > 1, got {}",
                self.conductor_eps
            )));
        }
        if !(self.padding_factor.is_finite() && self.padding_factor >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "padding_factor must be >= 1, got {}",
                self.padding_factor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellRole {
    Free,
    Positive,
    Negative,
    Shield,
}

/// The box that is actually solved: permittivity and electrode roles per
/// cell, placed on the global voxel lattice by `origin`.
#[derive(Debug, Clone)]
pub struct Domain {
    pub dims: [usize; 3],
    pub origin: [i64; 3],
    pub voxel_mm: f64,
    pub eps: Vec<f64>,
    pub role: Vec<CellRole>,
    pub boundary: Boundary,
    pub excitation_v: f64,
    /// Lattice node (in global cell units) under the electrode gap.
    pub gap_node: [i64; 2],
}

impl Domain {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[0] + ix
    }

    /// Local index of a global cell, if inside the box.
    pub fn local(&self, g: [i64; 3]) -> Option<usize> {
        let mut l = [0usize; 3];
        for a in 0..3 {
            let v = g[a] - self.origin[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            l[a] = v as usize;
        }
        Some(self.index(l[0], l[1], l[2]))
    }

    fn fixed_value(&self, i: usize) -> Option<f64> {
        match self.role[i] {
            CellRole::Free => None,
            CellRole::Positive => Some(self.excitation_v),
            CellRole::Negative | CellRole::Shield => Some(0.0),
        }
    }

    /// Solve window around an assembly footprint on a scene grid.
    pub fn around_footprint(
        grid: &PermittivityGrid,
        assembly: &ElectrodeAssembly,
        fp: &Footprint,
        config: &SolverConfig,
    ) -> Domain {
        let fx = fp.x_range.1 - fp.x_range.0;
        let fy = fp.y_range.1 - fp.y_range.0;
        let ext = fx.max(fy);
        let total = ((config.padding_factor * ext as f64).ceil() as i64).max(ext + 2);
        let pad_z = (((config.padding_factor - 1.0) / 2.0 * ext as f64).ceil() as i64).max(1);
        let x0 = fp.x_range.0 - (total - fx) / 2;
        let y0 = fp.y_range.0 - (total - fy) / 2;
        let z0 = fp.top_layer() - pad_z;
        let z1 = grid.dims()[2] as i64 + pad_z;
        let dims = [total as usize, total as usize, (z1 - z0) as usize];
        let n = dims.iter().product();
        let mut eps = Vec::with_capacity(n);
        for iz in 0..dims[2] as i64 {
            for iy in 0..dims[1] as i64 {
                for ix in 0..dims[0] as i64 {
                    let c = grid.cell(x0 + ix, y0 + iy, z0 + iz);
                    eps.push(if c.conductor { config.conductor_eps } else { c.eps_r });
                }
            }
        }
        let mut d = Domain {
            dims,
            origin: [x0, y0, z0],
            voxel_mm: grid.voxel_size_mm(),
            eps,
            role: vec![CellRole::Free; n],
            boundary: config.boundary,
            excitation_v: assembly.excitation_v,
            gap_node: fp.anchor,
        };
        for (cells, role) in [
            (&fp.shield, CellRole::Shield),
            (&fp.positive, CellRole::Positive),
            (&fp.negative, CellRole::Negative),
        ] {
            for &c in cells {
                let i = d.local(c).expect("footprint inside its own window");
                d.role[i] = role;
                d.eps[i] = 1.0;
            }
        }
        d
    }

    fn stencil(&self) -> (linear::Stencil, Vec<f64>) {
        let [nx, ny, nz] = self.dims;
        let n = self.len();
        let mut st = linear::Stencil {
            nx,
            ny,
            nz,
            diag: vec![0.0; n],
            cx: vec![0.0; n],
            cy: vec![0.0; n],
            cz: vec![0.0; n],
            free: self.role.iter().map(|r| *r == CellRole::Free).collect(),
        };
        let mut b = vec![0.0; n];
        let strides = [1, nx, nx * ny];
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = self.index(ix, iy, iz);
                    let pos = [ix, iy, iz];
                    for a in 0..3 {
                        if pos[a] + 1 == self.dims[a] {
                            continue;
                        }
                        let j = i + strides[a];
                        let w = harmonic(self.eps[i], self.eps[j]);
                        match (st.free[i], st.free[j]) {
                            (true, true) => {
                                st.diag[i] += w;
                                st.diag[j] += w;
                                match a {
                                    0 => st.cx[i] = w,
                                    1 => st.cy[i] = w,
                                    _ => st.cz[i] = w,
                                }
                            }
                            (true, false) => {
                                st.diag[i] += w;
                                b[i] += w * self.fixed_value(j).unwrap();
                            }
                            (false, true) => {
                                st.diag[j] += w;
                                b[j] += w * self.fixed_value(i).unwrap();
                            }
                            (false, false) => {}
                        }
                    }
                    if st.free[i] && self.boundary == Boundary::GroundedBox {
                        let outer = (0..3)
                            .map(|a| (pos[a] == 0) as usize + (pos[a] + 1 == self.dims[a]) as usize)
                            .sum::<usize>();
                        st.diag[i] += outer as f64 * self.eps[i];
                    }
                }
            }
        }
        for i in 0..n {
            if !st.free[i] {
                st.diag[i] = 1.0;
            } else if st.diag[i] == 0.0 {
                // isolated cell under an insulated boundary: pin it to 0 V
                st.diag[i] = 1.0;
                st.free[i] = false;
            }
        }
        (st, b)
    }

    /// Solve for the potential. `guess` seeds the free cells (warm start).
    pub fn solve(self, config: &SolverConfig, guess: Option<&[f64]>) -> Result<PotentialField> {
        config.validate()?;
        let (st, b) = self.stencil();
        let n = self.len();
        let mut u = vec![0.0; n];
        if let Some(g) = guess.filter(|g| g.len() == n) {
            for i in 0..n {
                if st.free[i] {
                    u[i] = g[i];
                }
            }
        }
        let out = linear::pcg(&st, &b, &mut u, config.rel_residual_tol, config.max_iterations);
        if !out.converged {
            return Err(Error::NonConvergence {
                iterations: out.iterations,
                achieved_residual: out.rel_residual,
            });
        }
        for i in 0..n {
            if let Some(v) = self.fixed_value(i) {
                u[i] = v;
            } else if !st.free[i] {
                u[i] = 0.0;
            }
        }
        Ok(PotentialField {
            phi: u,
            domain: self,
            iterations_used: out.iterations,
            achieved_residual: out.rel_residual,
        })
    }
}

#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// `d w / d a` for `w = harmonic(a, b)`.
#[inline]
fn harmonic_da(a: f64, b: f64) -> f64 {
    2.0 * b * b / ((a + b) * (a + b))
}

/// Solve the field of `assembly` centered at `head_mm` over `grid`.
pub fn solve(
    grid: &PermittivityGrid,
    assembly: &ElectrodeAssembly,
    head_mm: [f64; 2],
    config: &SolverConfig,
) -> Result<PotentialField> {
    solve_with_guess(grid, assembly, head_mm, config, None)
}

pub fn solve_with_guess(
    grid: &PermittivityGrid,
    assembly: &ElectrodeAssembly,
    head_mm: [f64; 2],
    config: &SolverConfig,
    guess: Option<&[f64]>,
) -> Result<PotentialField> {
    config.validate()?;
    let fp = assembly.footprint(grid, head_mm)?;
    Domain::around_footprint(grid, assembly, &fp, config).solve(config, guess)
}

/// Two square plates stacked along z, `gap_mm` apart center to center, in a
/// box `padding_factor` times the plate side.
pub fn parallel_plate_domain(side_mm: f64, gap_mm: f64, voxel_mm: f64, config: &SolverConfig) -> Result<Domain> {
    let cells = |mm: f64, what: &str| -> Result<i64> {
        let c = mm / voxel_mm;
        if (c - c.round()).abs() > 1e-6 || c.round() < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "{what} {mm} mm is not a whole number of {voxel_mm} mm voxels"
            )));
        }
        Ok(c.round() as i64)
    };
    let side = cells(side_mm, "plate side")?;
    let gap = cells(gap_mm, "plate gap")?;
    let box_n = ((config.padding_factor * side as f64).ceil() as i64).max(side + 2);
    let n = box_n as usize;
    let dims = [n, n, n];
    let mut d = Domain {
        dims,
        origin: [0, 0, 0],
        voxel_mm,
        eps: vec![1.0; n * n * n],
        role: vec![CellRole::Free; n * n * n],
        boundary: config.boundary,
        excitation_v: 5.0,
        gap_node: [box_n / 2, box_n / 2],
    };
    let lo = (box_n - side) / 2;
    let z_pos = (box_n - gap) / 2;
    for iy in lo..lo + side {
        for ix in lo..lo + side {
            let ip = d.index(ix as usize, iy as usize, z_pos as usize);
            let ineg = d.index(ix as usize, iy as usize, (z_pos + gap) as usize);
            d.role[ip] = CellRole::Positive;
            d.role[ineg] = CellRole::Negative;
        }
    }
    d.gap_node = [lo + side / 2, lo + side / 2];
    Ok(d)
}

#[derive(Debug, Clone)]
pub struct PotentialField {
    pub domain: Domain,
    /// Volts per domain cell, electrode values included.
    pub phi: Vec<f64>,
    pub iterations_used: usize,
    pub achieved_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthProfile {
    pub depth_mm: Vec<f64>,
    pub field_v_per_mm: Vec<f64>,
}

impl DepthProfile {
    /// Linear interpolation between plane centers, clamped at the ends.
    pub fn at_depth(&self, depth_mm: f64) -> f64 {
        let d = &self.depth_mm;
        let e = &self.field_v_per_mm;
        if d.is_empty() {
            return 0.0;
        }
        if depth_mm <= d[0] {
            return e[0];
        }
        for k in 1..d.len() {
            if depth_mm <= d[k] {
                let t = (depth_mm - d[k - 1]) / (d[k] - d[k - 1]);
                return e[k - 1] + t * (e[k] - e[k - 1]);
            }
        }
        *e.last().unwrap()
    }
}

/// First-order capacitance sensitivity per cell, in 1/mm^2.
#[derive(Debug, Clone)]
pub struct SensitivityMap {
    pub dims: [usize; 3],
    pub origin: [i64; 3],
    pub voxel_mm: f64,
    pub values: Vec<f64>,
}

impl SensitivityMap {
    pub fn at(&self, g: [i64; 3]) -> f64 {
        let mut l = [0usize; 3];
        for a in 0..3 {
            let v = g[a] - self.origin[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return 0.0;
            }
            l[a] = v as usize;
        }
        self.values[(l[2] * self.dims[1] + l[1]) * self.dims[0] + l[0]]
    }
}

impl PotentialField {
    pub fn excitation_v(&self) -> f64 {
        self.domain.excitation_v
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.phi
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }

    /// Potential at a global cell; outside the box the boundary value applies.
    pub fn phi_at(&self, g: [i64; 3]) -> f64 {
        self.domain.local(g).map_or(0.0, |i| self.phi[i])
    }

    /// Visit every interior face once as `(i, j, weight)` and every grounded
    /// outer face as `(i, usize::MAX, weight)`.
    fn for_each_face(&self, mut f: impl FnMut(usize, usize, f64)) {
        let d = &self.domain;
        let [nx, ny, nz] = d.dims;
        let strides = [1, nx, nx * ny];
        let grounded = d.boundary == Boundary::GroundedBox;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = d.index(ix, iy, iz);
                    let pos = [ix, iy, iz];
                    for a in 0..3 {
                        if pos[a] + 1 < d.dims[a] {
                            let j = i + strides[a];
                            f(i, j, harmonic(d.eps[i], d.eps[j]));
                        } else if grounded {
                            f(i, usize::MAX, d.eps[i]);
                        }
                        if grounded && pos[a] == 0 {
                            f(i, usize::MAX, d.eps[i]);
                        }
                    }
                }
            }
        }
    }

    fn phi_or_ground(&self, j: usize) -> f64 {
        if j == usize::MAX {
            0.0
        } else {
            self.phi[j]
        }
    }

    /// `C = 2W / V^2` from the discrete field energy.
    pub fn capacitance_energy_pf(&self) -> f64 {
        let mut s = 0.0;
        self.for_each_face(|i, j, w| {
            let dphi = self.phi[i] - self.phi_or_ground(j);
            s += w * dphi * dphi;
        });
        let v = self.excitation_v();
        EPS0_PF_PER_MM * self.domain.voxel_mm * s / (v * v)
    }

    /// `C = Q / V` with `Q` the displacement flux leaving the positive
    /// electrode grown by one cell into the surrounding free space.
    pub fn capacitance_charge_pf(&self) -> f64 {
        let d = &self.domain;
        let n = d.len();
        let mut inside = vec![false; n];
        for i in 0..n {
            if d.role[i] == CellRole::Positive {
                inside[i] = true;
            }
        }
        let [nx, ny, nz] = d.dims;
        let mut grown = inside.clone();
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = d.index(ix, iy, iz);
                    if d.role[i] != CellRole::Free {
                        continue;
                    }
                    let pos = [ix as i64, iy as i64, iz as i64];
                    let touches = NEIGHBORS.iter().any(|o| {
                        let q = [pos[0] + o[0], pos[1] + o[1], pos[2] + o[2]];
                        in_box(q, d.dims) && inside[d.index(q[0] as usize, q[1] as usize, q[2] as usize)]
                    });
                    if touches {
                        grown[i] = true;
                    }
                }
            }
        }
        let mut q = 0.0;
        self.for_each_face(|i, j, w| {
            let gi = grown[i];
            let gj = j != usize::MAX && grown[j];
            if gi != gj {
                let flux = w * (self.phi[i] - self.phi_or_ground(j));
                q += if gi { flux } else { -flux };
            }
        });
        EPS0_PF_PER_MM * self.domain.voxel_mm * q / self.excitation_v()
    }

    fn neighbor_phi(&self, pos: [i64; 3], axis: usize, step: i64, own: f64) -> f64 {
        let mut q = pos;
        q[axis] += step;
        if in_box(q, self.domain.dims) {
            self.phi[self.domain.index(q[0] as usize, q[1] as usize, q[2] as usize)]
        } else if self.domain.boundary == Boundary::GroundedBox {
            0.0
        } else {
            own
        }
    }

    /// `|E|` at a local cell center by central differences.
    fn field_magnitude(&self, pos: [i64; 3]) -> f64 {
        let own = self.phi[self.domain.index(pos[0] as usize, pos[1] as usize, pos[2] as usize)];
        let mut s = 0.0;
        for a in 0..3 {
            let g = (self.neighbor_phi(pos, a, 1, own) - self.neighbor_phi(pos, a, -1, own))
                / (2.0 * self.domain.voxel_mm);
            s += g * g;
        }
        s.sqrt()
    }

    /// `|E|` down the vertical line through the gap midpoint, one entry per
    /// cell plane from the sample surface to the bottom of the box.
    pub fn centerline_profile(&self) -> DepthProfile {
        let d = &self.domain;
        let ax = d.gap_node[0] - d.origin[0];
        let ay = d.gap_node[1] - d.origin[1];
        let z_start = (-d.origin[2]).max(0);
        let mut depth = Vec::new();
        let mut field = Vec::new();
        for lz in z_start..d.dims[2] as i64 {
            let mut acc = 0.0;
            let mut count = 0;
            for (cx, cy) in [(ax - 1, ay - 1), (ax, ay - 1), (ax - 1, ay), (ax, ay)] {
                if in_box([cx, cy, lz], d.dims) {
                    acc += self.field_magnitude([cx, cy, lz]);
                    count += 1;
                }
            }
            depth.push((lz + d.origin[2]) as f64 * d.voxel_mm + 0.5 * d.voxel_mm);
            field.push(if count > 0 { acc / count as f64 } else { 0.0 });
        }
        DepthProfile {
            depth_mm: depth,
            field_v_per_mm: field,
        }
    }

    /// `dC/d eps_i / (eps0 h^3)` for every free cell, from the discrete energy.
    pub fn sensitivity_map(&self) -> SensitivityMap {
        let d = &self.domain;
        let mut s = vec![0.0; d.len()];
        self.for_each_face(|i, j, _| {
            let dphi = self.phi[i] - self.phi_or_ground(j);
            let g = dphi * dphi;
            if j == usize::MAX {
                s[i] += g;
            } else {
                s[i] += harmonic_da(d.eps[i], d.eps[j]) * g;
                s[j] += harmonic_da(d.eps[j], d.eps[i]) * g;
            }
        });
        let v = self.excitation_v();
        let scale = 1.0 / (v * v * d.voxel_mm * d.voxel_mm);
        for (k, val) in s.iter_mut().enumerate() {
            *val = if d.role[k] == CellRole::Free { *val * scale } else { 0.0 };
        }
        SensitivityMap {
            dims: d.dims,
            origin: d.origin,
            voxel_mm: d.voxel_mm,
            values: s,
        }
    }
}

const NEIGHBORS: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn in_box(q: [i64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Material, Scene};

    fn air_grid(voxel: f64) -> PermittivityGrid {
        Scene::empty([120.0, 120.0, 40.0], voxel).rasterize().unwrap()
    }

    fn plate_pair() -> ElectrodeAssembly {
        ElectrodeAssembly::lookup("plate_default").unwrap()
    }

    #[test]
    fn mid_plane_sits_at_half_excitation() {
        let grid = air_grid(2.0);
        let a = plate_pair();
        let cfg = SolverConfig {
            boundary: Boundary::InsulatedBox,
            ..SolverConfig::default()
        };
        let f = solve(&grid, &a, [60.0, 60.0], &cfg).unwrap();
        let d = &f.domain;
        // the plane x = gap node separates the mirrored halves; its potential
        // is the average of the two cells either side
        let gx = d.gap_node[0];
        for gz in [d.origin[2] + 2, 0, 5, 15] {
            for gy in [d.gap_node[1] - 3, d.gap_node[1], d.gap_node[1] + 7] {
                let m = 0.5 * (f.phi_at([gx - 1, gy, gz]) + f.phi_at([gx, gy, gz]));
                assert!((m - 2.5).abs() < 1e-6, "mid {m} at z {gz}");
            }
        }
    }

    #[test]
    fn maximum_principle_and_dirichlet_values() {
        let grid = Scene::preset("fig7_plywood_cross_bars").unwrap().rasterize().unwrap();
        let a = ElectrodeAssembly::lookup("comb_default").unwrap();
        let f = solve(&grid, &a, [100.0, 30.0], &SolverConfig::default()).unwrap();
        let (lo, hi) = f.min_max();
        assert!(lo >= -1e-9 && hi <= 5.0 + 1e-9, "{lo} {hi}");
        for (i, r) in f.domain.role.iter().enumerate() {
            match r {
                CellRole::Positive => assert_eq!(f.phi[i], 5.0),
                CellRole::Negative | CellRole::Shield => assert_eq!(f.phi[i], 0.0),
                CellRole::Free => {}
            }
        }
    }

    #[test]
    fn excitation_scaling_leaves_capacitance_unchanged() {
        let grid = air_grid(2.0);
        let mut a = plate_pair();
        let c5 = solve(&grid, &a, [60.0, 60.0], &SolverConfig::default()).unwrap();
        a.excitation_v = 1.0;
        let c1 = solve(&grid, &a, [60.0, 60.0], &SolverConfig::default()).unwrap();
        let (e5, e1) = (c5.capacitance_energy_pf(), c1.capacitance_energy_pf());
        assert!((e5 - e1).abs() / e5 < 1e-7);
    }

    #[test]
    fn sample_and_metal_raise_capacitance() {
        let cfg = SolverConfig::default();
        let a = plate_pair();
        let c_air = solve(&air_grid(2.0), &a, [60.0, 60.0], &cfg).unwrap();
        let slab = Scene::slab([120.0, 120.0, 40.0], 2.0, Material::plywood(), 25.0);
        let c_slab = solve(&slab.rasterize().unwrap(), &a, [60.0, 60.0], &cfg).unwrap();
        let mut bar = slab.clone();
        bar.objects.push(crate::scene::EmbeddedObject::new(
            crate::scene::ObjectShape::Box {
                width_mm: 30.0,
                length_mm: 100.0,
                height_mm: 20.0,
            },
            [60.0, 60.0, 15.0],
            90.0,
            Material::metal(),
        ));
        let c_bar = solve(&bar.rasterize().unwrap(), &a, [60.0, 60.0], &cfg).unwrap();
        for route in [PotentialField::capacitance_energy_pf, PotentialField::capacitance_charge_pf] {
            assert!(route(&c_slab) > route(&c_air));
            assert!(route(&c_bar) > route(&c_slab));
        }
    }

    #[test]
    fn profile_decays_and_kernel_is_nonnegative() {
        let slab = Scene::slab([120.0, 120.0, 60.0], 2.0, Material::plywood(), 60.0);
        let f = solve(&slab.rasterize().unwrap(), &plate_pair(), [60.0, 60.0], &SolverConfig::default()).unwrap();
        let p = f.centerline_profile();
        assert_eq!(p.depth_mm[0], 1.0);
        assert!(p.field_v_per_mm[0] > 0.0);
        for k in 1..p.depth_mm.len() {
            if p.depth_mm[k] < 58.0 {
                assert!(p.field_v_per_mm[k] < p.field_v_per_mm[k - 1], "plane {k}: {p:?}");
            }
        }
        let s = f.sensitivity_map();
        assert!(s.values.iter().all(|v| *v >= 0.0));
        let g = f.domain.gap_node;
        let h = f.domain.voxel_mm;
        let at = |depth: f64| s.at([g[0], g[1], (depth / h) as i64]);
        assert!(at(5.0) > at(25.0));
    }

    #[test]
    fn insufficient_iterations_are_an_error() {
        let cfg = SolverConfig {
            max_iterations: 1,
            ..SolverConfig::default()
        };
        match solve(&air_grid(2.0), &plate_pair(), [60.0, 60.0], &cfg) {
            Err(Error::NonConvergence { iterations, achieved_residual }) => {
                assert_eq!(iterations, 1);
                assert!(achieved_residual > 1e-8);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            SolverConfig {
                rel_residual_tol: 0.0,
                ..Default::default()
            },
            SolverConfig {
                max_iterations: 0,
                ..Default::default()
            },
            SolverConfig {
                padding_factor: 0.5,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
