//! Matrix-free finite-difference operators on masked voxel grids.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::linalg::{cg, pcg, CgOptions, LinearOperator, Preconditioner, SolveStats};
use crate::sphgrid::VoxelGrid;

/// Free-node view of `h^3 L^T L`, with `L` the seven-point Laplacian and every
/// non-free node held at a prescribed value (zero outside the domain).
pub struct ClampedBiharmonic {
    pub grid: VoxelGrid,
    pub free: Vec<usize>,
    lo: [usize; 3],
    hi: [usize; 3],
    work_u: RefCell<Vec<f64>>,
    work_w: RefCell<Vec<f64>>,
}

impl ClampedBiharmonic {
    /// `free` must avoid the two outermost node layers.
    pub fn new(grid: VoxelGrid, free: Vec<usize>) -> Self {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for &i in &free {
            let c = grid.coords(i);
            for a in 0..3 {
                debug_assert!(c[a] >= 2 && c[a] + 2 < grid.dims[a]);
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        if free.is_empty() {
            lo = [1; 3];
            hi = [1; 3];
        }
        let n = grid.len();
        ClampedBiharmonic { grid, free, lo, hi, work_u: RefCell::new(vec![0.0; n]), work_w: RefCell::new(vec![0.0; n]) }
    }

    /// Seven-point Laplacian of `u` into `w` over nodes within one layer of the
    /// box `[lo, hi]` (clipped to the grid interior); `w` is zero elsewhere in that box.
    fn lap_box(&self, u: &[f64], w: &mut [f64], lo: [usize; 3], hi: [usize; 3]) {
        let g = &self.grid;
        let [nx, ny, _] = g.dims;
        let inv = 1.0 / (g.h * g.h);
        let sy = nx;
        let sz = nx * ny;
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                let base = nx * (j + ny * k);
                for i in lo[0]..=hi[0] {
                    let c = base + i;
                    w[c] = (u[c - 1] + u[c + 1] + u[c - sy] + u[c + sy] + u[c - sz] + u[c + sz] - 6.0 * u[c]) * inv;
                }
            }
        }
    }

    fn expand(&self, by: usize) -> ([usize; 3], [usize; 3]) {
        let mut lo = [0; 3];
        let mut hi = [0; 3];
        for a in 0..3 {
            lo[a] = self.lo[a].saturating_sub(by).max(1);
            hi[a] = (self.hi[a] + by).min(self.grid.dims[a] - 2);
        }
        (lo, hi)
    }

    /// `L u` on every node whose stencil fits (zero on the outer layer).
    pub fn laplacian_full(&self, u: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.grid.len()];
        let g = &self.grid;
        self.lap_box(u, &mut w, [1; 3], [g.dims[0] - 2, g.dims[1] - 2, g.dims[2] - 2]);
        w
    }

    /// Discrete energy `h^3 sum (L u)^2` of a full-grid field.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let w = self.laplacian_full(u);
        w.iter().map(|x| x * x).sum::<f64>() * self.grid.h.powi(3)
    }

    /// `-h^3 (L^T L u_fixed)` on free nodes, the right-hand side after eliminating fixed values.
    pub fn rhs_from_fixed(&self, fixed: &[f64]) -> Vec<f64> {
        let w = self.laplacian_full(fixed);
        let z = self.laplacian_full(&w);
        let h3 = self.grid.h.powi(3);
        self.free.iter().map(|&i| -h3 * z[i]).collect()
    }

    /// `h^3 (L^T L)` applied to a full-grid field, read on free nodes.
    pub fn apply_full(&self, u: &[f64]) -> Vec<f64> {
        let w = self.laplacian_full(u);
        let z = self.laplacian_full(&w);
        let h3 = self.grid.h.powi(3);
        self.free.iter().map(|&i| h3 * z[i]).collect()
    }

    pub fn scatter(&self, x: &[f64], base: &[f64]) -> Vec<f64> {
        let mut u = base.to_vec();
        for (p, &i) in self.free.iter().enumerate() {
            u[i] = x[p];
        }
        u
    }
}

impl LinearOperator for ClampedBiharmonic {
    fn len(&self) -> usize {
        self.free.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut u = self.work_u.borrow_mut();
        let mut w = self.work_w.borrow_mut();
        for (p, &i) in self.free.iter().enumerate() {
            u[i] = x[p];
        }
        let (lo1, hi1) = self.expand(1);
        self.lap_box(&u, &mut w, lo1, hi1);
        let inv = 1.0 / (self.grid.h * self.grid.h);
        let h3 = self.grid.h.powi(3);
        let [nx, ny, _] = self.grid.dims;
        let sy = nx;
        let sz = nx * ny;
        for (p, &c) in self.free.iter().enumerate() {
            y[p] = h3 * inv * (w[c - 1] + w[c + 1] + w[c - sy] + w[c + sy] + w[c - sz] + w[c + sz] - 6.0 * w[c]);
        }
        for &i in &self.free {
            u[i] = 0.0;
        }
    }
}

/// Inverse of `h^3 L_D^2` on the bounding box of the free nodes, with `L_D`
/// the Dirichlet Laplacian of that box, applied by sine transforms. Exact up
/// to a boundary term when the free nodes fill the box.
pub struct SquaredPoissonPreconditioner {
    free_box: Vec<usize>,
    m: [usize; 3],
    inv_eig: Vec<f64>,
    ffts: [Arc<dyn Fft<f64>>; 3],
    work: RefCell<(Vec<f64>, Vec<Complex<f64>>)>,
}

impl SquaredPoissonPreconditioner {
    pub fn new(op: &ClampedBiharmonic) -> Self {
        let g = &op.grid;
        let m: [usize; 3] = std::array::from_fn(|a| op.hi[a] + 1 - op.lo[a]);
        let free_box = op
            .free
            .iter()
            .map(|&i| {
                let c = g.coords(i);
                (c[0] - op.lo[0]) + m[0] * ((c[1] - op.lo[1]) + m[1] * (c[2] - op.lo[2]))
            })
            .collect();
        let h2 = g.h * g.h;
        let lam = |a: usize| -> Vec<f64> {
            (1..=m[a]).map(|k| 4.0 / h2 * (std::f64::consts::PI * k as f64 / (2.0 * (m[a] + 1) as f64)).sin().powi(2)).collect()
        };
        let (lx, ly, lz) = (lam(0), lam(1), lam(2));
        let h3 = g.h.powi(3);
        let norm: f64 = (0..3).map(|a| 2.0 / (m[a] + 1) as f64).product();
        let mut inv_eig = Vec::with_capacity(m[0] * m[1] * m[2]);
        for c in &lz {
            for b in &ly {
                for a in &lx {
                    inv_eig.push(norm / (h3 * (a + b + c).powi(2)));
                }
            }
        }
        let mut planner = FftPlanner::new();
        let ffts = std::array::from_fn(|a| planner.plan_fft_forward(2 * (m[a] + 1)));
        let longest = 2 * (m.iter().max().unwrap() + 1);
        SquaredPoissonPreconditioner {
            free_box,
            m,
            inv_eig,
            ffts,
            work: RefCell::new((vec![0.0; m[0] * m[1] * m[2]], vec![Complex::default(); longest])),
        }
    }

    /// Unnormalised DST-I along axis `a` of the box array.
    fn dst_axis(&self, a: usize, data: &mut [f64], buf: &mut [Complex<f64>]) {
        let m = self.m;
        let len = m[a];
        let stride = [1, m[0], m[0] * m[1]][a];
        let n2 = 2 * (len + 1);
        let buf = &mut buf[..n2];
        let lines: Vec<usize> = match a {
            0 => (0..m[1] * m[2]).map(|q| q * m[0]).collect(),
            1 => (0..m[2]).flat_map(|k| (0..m[0]).map(move |i| i + k * m[0] * m[1])).collect(),
            _ => (0..m[0] * m[1]).collect(),
        };
        // two real lines per complex transform: odd sequences have imaginary spectra
        for pair in lines.chunks(2) {
            let (s0, s1) = (pair[0], pair.get(1).copied());
            buf[0] = Complex::default();
            buf[len + 1] = Complex::default();
            for j in 0..len {
                let a = data[s0 + j * stride];
                let b = s1.map_or(0.0, |q| data[q + j * stride]);
                buf[j + 1] = Complex::new(a, b);
                buf[n2 - 1 - j] = Complex::new(-a, -b);
            }
            self.ffts[a].process(buf);
            for k in 0..len {
                data[s0 + k * stride] = -0.5 * buf[k + 1].im;
                if let Some(q) = s1 {
                    data[q + k * stride] = 0.5 * buf[k + 1].re;
                }
            }
        }
    }
}

impl Preconditioner for SquaredPoissonPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut w = self.work.borrow_mut();
        let (data, buf) = &mut *w;
        data.iter_mut().for_each(|v| *v = 0.0);
        for (p, &b) in self.free_box.iter().enumerate() {
            data[b] = r[p];
        }
        for a in 0..3 {
            self.dst_axis(a, data, buf);
        }
        for (v, e) in data.iter_mut().zip(&self.inv_eig) {
            *v *= e;
        }
        for a in 0..3 {
            self.dst_axis(a, data, buf);
        }
        for (p, &b) in self.free_box.iter().enumerate() {
            z[p] = data[b];
        }
    }
}

/// Solves `op x = b` from `x`, with the sine preconditioner when the free
/// nodes fill all but a thousandth of their bounding box.
pub fn solve_clamped(op: &ClampedBiharmonic, b: &[f64], x: &mut [f64], opts: CgOptions) -> Result<SolveStats> {
    let volume: usize = (0..3).map(|a| op.hi[a] + 1 - op.lo[a]).product();
    if !op.free.is_empty() && (volume - op.free.len()) * 1000 <= volume {
        pcg(op, &SquaredPoissonPreconditioner::new(op), b, x, opts)
    } else {
        cg(op, b, x, opts)
    }
}

/// Boundary treatment for the Dirichlet energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HarmonicBoundary {
    /// Zero on the outer node layer.
    Clamped,
    /// Far-field term `int_{box face} (x.n)/|x|^2 u^2`, exact for `c/|x|` decay.
    FarField,
}

/// Free-node view of the Dirichlet energy Hessian `sum_edges h (u_a - u_b)^2`.
pub struct Dirichlet {
    pub grid: VoxelGrid,
    pub free: Vec<usize>,
    pos: Vec<u32>,
    diag_extra: Vec<f64>,
    boundary: HarmonicBoundary,
    work: RefCell<Vec<f64>>,
}

impl Dirichlet {
    pub fn new(grid: VoxelGrid, free: Vec<usize>, boundary: HarmonicBoundary) -> Self {
        let n = grid.len();
        let mut pos = vec![u32::MAX; n];
        for (p, &i) in free.iter().enumerate() {
            pos[i] = p as u32;
        }
        let mut diag_extra = vec![0.0; n];
        if boundary == HarmonicBoundary::FarField {
            for (idx, d) in diag_extra.iter_mut().enumerate() {
                *d = far_field_coeff(&grid, idx);
            }
        }
        Dirichlet { grid, free, pos, diag_extra, boundary, work: RefCell::new(vec![0.0; n]) }
    }

    #[inline]
    fn edge_weight(&self, c: [usize; 3], axis: usize) -> f64 {
        if self.boundary == HarmonicBoundary::Clamped {
            return 1.0;
        }
        let mut w = 1.0;
        for a in 0..3 {
            if a != axis && (c[a] == 0 || c[a] + 1 == self.grid.dims[a]) {
                w *= 0.5;
            }
        }
        w
    }

    /// Energy `h sum w_e (u_a - u_b)^2 + far-field term` of a full-grid field.
    pub fn energy(&self, u: &[f64]) -> f64 {
        let g = &self.grid;
        let mut e = 0.0;
        for idx in 0..g.len() {
            let c = g.coords(idx);
            let mut step = 1;
            for a in 0..3 {
                if c[a] + 1 < g.dims[a] {
                    let d = u[idx] - u[idx + step];
                    e += self.edge_weight(c, a) * d * d;
                }
                step *= g.dims[a];
            }
        }
        e *= g.h;
        e + u.iter().zip(&self.diag_extra).map(|(x, d)| d * x * x).sum::<f64>()
    }

    /// Node-wise `(1/2) grad E` of a full-grid field.
    fn half_gradient(&self, u: &[f64], out: &mut [f64], only: Option<&[usize]>) {
        let g = &self.grid;
        let strides = [1, g.dims[0], g.dims[0] * g.dims[1]];
        let node = |idx: usize| -> f64 {
            let c = g.coords(idx);
            let mut acc = 0.0;
            for a in 0..3 {
                if c[a] > 0 {
                    let mut cc = c;
                    cc[a] -= 1;
                    acc += self.edge_weight(cc, a) * (u[idx] - u[idx - strides[a]]);
                }
                if c[a] + 1 < g.dims[a] {
                    acc += self.edge_weight(c, a) * (u[idx] - u[idx + strides[a]]);
                }
            }
            g.h * acc + self.diag_extra[idx] * u[idx]
        };
        match only {
            Some(list) => {
                for (p, &i) in list.iter().enumerate() {
                    out[p] = node(i);
                }
            }
            None => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = node(i);
                }
            }
        }
    }

    pub fn rhs_from_fixed(&self, fixed: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.free.len()];
        self.half_gradient(fixed, &mut out, Some(&self.free));
        out.iter_mut().for_each(|v| *v = -*v);
        out
    }

    pub fn scatter(&self, x: &[f64], base: &[f64]) -> Vec<f64> {
        let mut u = base.to_vec();
        for (p, &i) in self.free.iter().enumerate() {
            u[i] = x[p];
        }
        u
    }

    pub fn is_free(&self, idx: usize) -> bool {
        self.pos[idx] != u32::MAX
    }
}

fn far_field_coeff(g: &VoxelGrid, idx: usize) -> f64 {
    let c = g.coords(idx);
    let x = g.pos(idx);
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    if r2 == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for a in 0..3 {
        for (hit, sign) in [(c[a] == 0, -1.0), (c[a] + 1 == g.dims[a], 1.0)] {
            if !hit {
                continue;
            }
            let mut area = g.h * g.h;
            for b in 0..3 {
                if b != a && (c[b] == 0 || c[b] + 1 == g.dims[b]) {
                    area *= 0.5;
                }
            }
            total += area * sign * x[a] / r2;
        }
    }
    total
}

impl LinearOperator for Dirichlet {
    fn len(&self) -> usize {
        self.free.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut u = self.work.borrow_mut();
        for (p, &i) in self.free.iter().enumerate() {
            u[i] = x[p];
        }
        self.half_gradient(&u, y, Some(&self.free));
        for &i in &self.free {
            u[i] = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;

    #[test]
    fn sine_preconditioner_inverts_squared_dirichlet_laplacian() {
        let g = VoxelGrid::new([0.0; 3], 0.1, [9, 8, 10]).unwrap();
        let free: Vec<usize> = (0..g.len()).filter(|&i| g.is_interior(i, 2)).collect();
        let op = ClampedBiharmonic::new(g, free.clone());
        let pc = SquaredPoissonPreconditioner::new(&op);
        let x: Vec<f64> = (0..free.len()).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let lap_in_box = |v: &[f64]| -> Vec<f64> {
            let full = op.scatter(v, &vec![0.0; g.len()]);
            let l = op.laplacian_full(&full);
            free.iter().map(|&i| l[i]).collect::<Vec<_>>()
        };
        let mx: Vec<f64> = lap_in_box(&lap_in_box(&x)).iter().map(|v| v * g.h.powi(3)).collect();
        let mut back = vec![0.0; x.len()];
        pc.apply(&mx, &mut back);
        for (a, b) in back.iter().zip(&x) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn biharmonic_operator_is_symmetric_and_matches_energy() {
        let g = VoxelGrid::centered(10, 1.0).unwrap();
        let free: Vec<usize> = (0..g.len()).filter(|&i| g.is_interior(i, 2) && i % 3 != 0).collect();
        let op = ClampedBiharmonic::new(g, free.clone());
        let n = free.len();
        let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let z: Vec<f64> = (0..n).map(|i| ((i * 104729) % 37) as f64 / 37.0 - 0.5).collect();
        let mut ax = vec![0.0; n];
        let mut az = vec![0.0; n];
        op.apply(&x, &mut ax);
        op.apply(&z, &mut az);
        assert!((dot(&ax, &z) - dot(&az, &x)).abs() < 1e-9 * dot(&ax, &x).abs());
        let base = vec![0.0; g.len()];
        let e = op.energy(&op.scatter(&x, &base));
        assert!((dot(&ax, &x) - e).abs() < 1e-9 * e);
        let full = op.apply_full(&op.scatter(&x, &base));
        assert!(full.iter().zip(&ax).all(|(a, b)| (a - b).abs() < 1e-9 * (1.0 + b.abs())));
    }

    #[test]
    fn dirichlet_operator_matches_energy() {
        let g = VoxelGrid::centered(6, 1.0).unwrap();
        for bnd in [HarmonicBoundary::Clamped, HarmonicBoundary::FarField] {
            let free: Vec<usize> = (0..g.len()).filter(|&i| i % 5 != 0 && (bnd == HarmonicBoundary::FarField || g.is_interior(i, 1))).collect();
            let op = Dirichlet::new(g, free.clone(), bnd);
            let x: Vec<f64> = (0..free.len()).map(|i| ((i * 31) % 17) as f64 / 17.0).collect();
            let mut ax = vec![0.0; free.len()];
            op.apply(&x, &mut ax);
            let e = op.energy(&op.scatter(&x, &vec![0.0; g.len()]));
            assert!((dot(&ax, &x) - e).abs() < 1e-10 * e, "{bnd:?}");
        }
    }
}
