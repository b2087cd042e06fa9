//! Symmetric 7-point operators on a box, an aggregation multigrid V-cycle and
//! the preconditioned conjugate-gradient driver.
//!
//! Unknowns live on every cell of the box. Cells held at a fixed potential
//! carry an identity row (`diag = 1`, no couplings, zero right-hand side), so
//! the iterate stays zero there and the fixed values enter only through `b`.

/// `A x` where `A = diag - couplings`; `cx[i]` couples cell `i` with `i + 1`
/// (zero at the end of a row), `cy` with `i + nx`, `cz` with `i + nx*ny`.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub diag: Vec<f64>,
    pub cx: Vec<f64>,
    pub cy: Vec<f64>,
    pub cz: Vec<f64>,
    pub free: Vec<bool>,
}

impl Stencil {
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.len();
        let sx = 1;
        let sy = self.nx;
        let sz = self.nx * self.ny;
        if self.nz >= 3 {
            let lo = sz;
            let m = n - 2 * sz;
            let (d, yy) = (&self.diag[lo..lo + m], &mut y[lo..lo + m]);
            let xc = &x[lo..lo + m];
            let (xe, xw) = (&x[lo + sx..lo + sx + m], &x[lo - sx..lo - sx + m]);
            let (xn, xs) = (&x[lo + sy..lo + sy + m], &x[lo - sy..lo - sy + m]);
            let (xu, xd) = (&x[lo + sz..lo + sz + m], &x[lo - sz..lo - sz + m]);
            let (ce, cw) = (&self.cx[lo..lo + m], &self.cx[lo - sx..lo - sx + m]);
            let (cn, cs) = (&self.cy[lo..lo + m], &self.cy[lo - sy..lo - sy + m]);
            let (cu, cd) = (&self.cz[lo..lo + m], &self.cz[lo - sz..lo - sz + m]);
            for k in 0..m {
                yy[k] = d[k] * xc[k]
                    - ce[k] * xe[k]
                    - cw[k] * xw[k]
                    - cn[k] * xn[k]
                    - cs[k] * xs[k]
                    - cu[k] * xu[k]
                    - cd[k] * xd[k];
            }
            for i in (0..lo).chain(lo + m..n) {
                y[i] = self.row_product(x, i);
            }
        } else {
            for i in 0..n {
                y[i] = self.row_product(x, i);
            }
        }
    }

    #[inline]
    fn neighbor_sum(&self, x: &[f64], i: usize) -> f64 {
        let n = self.len();
        let sy = self.nx;
        let sz = self.nx * self.ny;
        let mut s = 0.0;
        if i + 1 < n {
            s += self.cx[i] * x[i + 1];
        }
        if i >= 1 {
            s += self.cx[i - 1] * x[i - 1];
        }
        if i + sy < n {
            s += self.cy[i] * x[i + sy];
        }
        if i >= sy {
            s += self.cy[i - sy] * x[i - sy];
        }
        if i + sz < n {
            s += self.cz[i] * x[i + sz];
        }
        if i >= sz {
            s += self.cz[i - sz] * x[i - sz];
        }
        s
    }

    #[inline]
    fn row_product(&self, x: &[f64], i: usize) -> f64 {
        self.diag[i] * x[i] - self.neighbor_sum(x, i)
    }

    pub fn gauss_seidel_forward(&self, b: &[f64], x: &mut [f64]) {
        for i in 0..self.len() {
            if self.free[i] {
                x[i] = (b[i] + self.neighbor_sum(x, i)) / self.diag[i];
            }
        }
    }

    pub fn gauss_seidel_backward(&self, b: &[f64], x: &mut [f64]) {
        for i in (0..self.len()).rev() {
            if self.free[i] {
                x[i] = (b[i] + self.neighbor_sum(x, i)) / self.diag[i];
            }
        }
    }

    /// Galerkin operator for piecewise-constant prolongation over 2x2x2 blocks.
    /// The result is again a 7-point stencil.
    fn coarsen(&self) -> Stencil {
        let (nx, ny, nz) = (self.nx, self.ny, self.nz);
        let (cnx, cny, cnz) = (nx.div_ceil(2), ny.div_ceil(2), nz.div_ceil(2));
        let cn = cnx * cny * cnz;
        let mut diag = vec![0.0; cn];
        let mut cx = vec![0.0; cn];
        let mut cy = vec![0.0; cn];
        let mut cz = vec![0.0; cn];
        let mut free = vec![false; cn];
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let i = (iz * ny + iy) * nx + ix;
                    let c = ((iz / 2) * cny + iy / 2) * cnx + ix / 2;
                    if self.free[i] {
                        free[c] = true;
                        diag[c] += self.diag[i];
                    }
                    // faces to the +x/+y/+z neighbor: internal to the block
                    // when the neighbor maps to the same coarse cell
                    let w = self.cx[i];
                    if w != 0.0 {
                        if ix % 2 == 0 {
                            diag[c] -= 2.0 * w;
                        } else {
                            cx[c] += w;
                        }
                    }
                    let w = self.cy[i];
                    if w != 0.0 {
                        if iy % 2 == 0 {
                            diag[c] -= 2.0 * w;
                        } else {
                            cy[c] += w;
                        }
                    }
                    let w = self.cz[i];
                    if w != 0.0 {
                        if iz % 2 == 0 {
                            diag[c] -= 2.0 * w;
                        } else {
                            cz[c] += w;
                        }
                    }
                }
            }
        }
        for c in 0..cn {
            if !free[c] {
                diag[c] = 1.0;
            }
        }
        Stencil {
            nx: cnx,
            ny: cny,
            nz: cnz,
            diag,
            cx,
            cy,
            cz,
            free,
        }
    }

    fn restrict(&self, fine: &[f64], coarse: &mut [f64]) {
        coarse.iter_mut().for_each(|v| *v = 0.0);
        let (cnx, cny) = (self.nx.div_ceil(2), self.ny.div_ceil(2));
        for iz in 0..self.nz {
            for iy in 0..self.ny {
                let row = (iz * self.ny + iy) * self.nx;
                let crow = ((iz / 2) * cny + iy / 2) * cnx;
                for ix in 0..self.nx {
                    coarse[crow + ix / 2] += fine[row + ix];
                }
            }
        }
    }

    fn prolong_add(&self, coarse: &[f64], fine: &mut [f64], scale: f64) {
        let (cnx, cny) = (self.nx.div_ceil(2), self.ny.div_ceil(2));
        for iz in 0..self.nz {
            for iy in 0..self.ny {
                let row = (iz * self.ny + iy) * self.nx;
                let crow = ((iz / 2) * cny + iy / 2) * cnx;
                for ix in 0..self.nx {
                    if self.free[row + ix] {
                        fine[row + ix] += scale * coarse[crow + ix / 2];
                    }
                }
            }
        }
    }
}

/// Over-correction applied to the piecewise-constant coarse-grid update.
const COARSE_SCALE: f64 = 1.6;
const COARSEST_CELLS: usize = 512;
const COARSEST_SWEEPS: usize = 16;

struct Level {
    op: Stencil,
    x: Vec<f64>,
    b: Vec<f64>,
    r: Vec<f64>,
}

/// Symmetric V-cycle used as a fixed linear preconditioner.
pub(crate) struct Multigrid {
    levels: Vec<Level>,
}

impl Multigrid {
    pub fn new(fine: &Stencil) -> Self {
        let mut levels = Vec::new();
        let mut op = fine.clone();
        loop {
            let n = op.len();
            let stop = n <= COARSEST_CELLS || op.nx.min(op.ny).min(op.nz) <= 2;
            let next = (!stop).then(|| op.coarsen());
            levels.push(Level {
                op,
                x: vec![0.0; n],
                b: vec![0.0; n],
                r: vec![0.0; n],
            });
            match next {
                Some(c) => op = c,
                None => break,
            }
        }
        Multigrid { levels }
    }

    /// `z = M^-1 r`.
    pub fn apply(&mut self, r: &[f64], z: &mut [f64]) {
        self.levels[0].b.copy_from_slice(r);
        self.cycle(0);
        z.copy_from_slice(&self.levels[0].x);
    }

    fn cycle(&mut self, l: usize) {
        let last = l + 1 == self.levels.len();
        {
            let lv = &mut self.levels[l];
            lv.x.iter_mut().for_each(|v| *v = 0.0);
            if last {
                for _ in 0..COARSEST_SWEEPS {
                    lv.op.gauss_seidel_forward(&lv.b, &mut lv.x);
                    lv.op.gauss_seidel_backward(&lv.b, &mut lv.x);
                }
                return;
            }
            lv.op.gauss_seidel_forward(&lv.b, &mut lv.x);
            lv.op.apply(&lv.x, &mut lv.r);
            for (r, b) in lv.r.iter_mut().zip(&lv.b) {
                *r = b - *r;
            }
        }
        let (head, tail) = self.levels.split_at_mut(l + 1);
        head[l].op.restrict(&head[l].r, &mut tail[0].b);
        self.cycle(l + 1);
        let (head, tail) = self.levels.split_at_mut(l + 1);
        let lv = &mut head[l];
        lv.op.prolong_add(&tail[0].x, &mut lv.x, COARSE_SCALE);
        lv.op.gauss_seidel_backward(&lv.b, &mut lv.x);
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CgOutcome {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multigrid-preconditioned CG on `A x = b`, starting from `x`.
pub(crate) fn pcg(op: &Stencil, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome {
    let n = op.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome {
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        };
    }
    let mut r = vec![0.0; n];
    op.apply(x, &mut r);
    for i in 0..n {
        r[i] = if op.free[i] { b[i] - r[i] } else { 0.0 };
    }
    let mut rel = dot(&r, &r).sqrt() / b_norm;
    if rel <= tol {
        return CgOutcome {
            iterations: 0,
            rel_residual: rel,
            converged: true,
        };
    }
    let mut mg = Multigrid::new(op);
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    mg.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        op.apply(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rel = dot(&r, &r).sqrt() / b_norm;
        if rel <= tol {
            return CgOutcome {
                iterations: it,
                rel_residual: rel,
                converged: true,
            };
        }
        mg.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome {
        iterations: max_iter,
        rel_residual: rel,
        converged: false,
    }
}
