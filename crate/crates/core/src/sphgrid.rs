//! Coordinates, structured grids, scalar fields and the discrete operators
//! acting on them.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::models::CuspShape;

pub type Vec3 = [f64; 3];

pub fn norm(x: Vec3) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub fn dist(a: Vec3, b: Vec3) -> f64 {
    norm([a[0] - b[0], a[1] - b[1], a[2] - b[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalPoint {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl SphericalPoint {
    pub fn new(r: f64, theta: f64, phi: f64) -> Result<Self> {
        if !(r > 0.0) || !(0.0..=PI).contains(&theta) || !(0.0..2.0 * PI).contains(&phi) {
            return Err(Error::Domain(format!("spherical point ({r}, {theta}, {phi}) out of range")));
        }
        Ok(SphericalPoint { r, theta, phi })
    }

    pub fn from_cartesian(x: Vec3) -> Result<Self> {
        let r = norm(x);
        if r == 0.0 {
            return Err(Error::Domain("origin has no spherical coordinates".into()));
        }
        let theta = (x[2] / r).clamp(-1.0, 1.0).acos();
        let mut phi = x[1].atan2(x[0]);
        if phi < 0.0 {
            phi += 2.0 * PI;
        }
        if phi >= 2.0 * PI {
            phi = 0.0;
        }
        Ok(SphericalPoint { r, theta, phi })
    }

    pub fn to_cartesian(&self) -> Vec3 {
        let s = self.theta.sin();
        [self.r * s * self.phi.cos(), self.r * s * self.phi.sin(), self.r * self.theta.cos()]
    }
}

/// A point written as `t = log(1/|x|)` and direction `omega = x/|x|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogPoint {
    pub t: f64,
    pub omega: Vec3,
}

pub fn to_log_coords(x: Vec3) -> Result<LogPoint> {
    let r = norm(x);
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Domain("log coordinates need a finite nonzero point".into()));
    }
    Ok(LogPoint { t: -r.ln(), omega: [x[0] / r, x[1] / r, x[2] / r] })
}

pub fn from_log_coords(p: &LogPoint) -> Vec3 {
    let r = (-p.t).exp();
    [r * p.omega[0], r * p.omega[1], r * p.omega[2]]
}

/// Uniform axis-aligned node lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub h: f64,
    pub dims: [usize; 3],
}

impl VoxelGrid {
    pub fn new(origin: Vec3, h: f64, dims: [usize; 3]) -> Result<Self> {
        if !(h > 0.0) || dims.iter().any(|&d| d < 3) {
            return Err(Error::Invalid(format!("voxel grid needs h > 0 and at least 3 nodes per axis, got h={h}, dims={dims:?}")));
        }
        Ok(VoxelGrid { origin, h, dims })
    }

    /// Cube `[-half_width, half_width]^3` split into `n_cells` cells per axis.
    pub fn centered(n_cells: usize, half_width: f64) -> Result<Self> {
        let h = 2.0 * half_width / n_cells as f64;
        Self::new([-half_width; 3], h, [n_cells + 1; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn pos(&self, idx: usize) -> Vec3 {
        let c = self.coords(idx);
        self.pos_ijk(c[0], c[1], c[2])
    }

    #[inline]
    pub fn pos_ijk(&self, i: usize, j: usize, k: usize) -> Vec3 {
        [
            self.origin[0] + self.h * i as f64,
            self.origin[1] + self.h * j as f64,
            self.origin[2] + self.h * k as f64,
        ]
    }

    /// Node nearest to `x`, if `x` lies within the grid hull.
    pub fn nearest(&self, x: Vec3) -> Option<usize> {
        let mut c = [0usize; 3];
        for a in 0..3 {
            let f = (x[a] - self.origin[a]) / self.h;
            let r = f.round();
            if r < 0.0 || r > (self.dims[a] - 1) as f64 {
                return None;
            }
            c[a] = r as usize;
        }
        Some(self.index(c[0], c[1], c[2]))
    }

    pub fn is_interior(&self, idx: usize, depth: usize) -> bool {
        let c = self.coords(idx);
        (0..3).all(|a| c[a] >= depth && c[a] + depth < self.dims[a])
    }

    /// Trilinear interpolation of node values; `None` outside the grid hull.
    pub fn interpolate(&self, values: &[f64], x: Vec3) -> Option<f64> {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let f = (x[a] - self.origin[a]) / self.h;
            let n = (self.dims[a] - 1) as f64;
            if !(f >= -1e-12 && f <= n + 1e-12) {
                return None;
            }
            let f = f.clamp(0.0, n);
            let b = (f.floor() as usize).min(self.dims[a] - 2);
            base[a] = b;
            frac[a] = f - b as f64;
        }
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                        * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                        * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                    if w != 0.0 {
                        acc += w * values[self.index(base[0] + dx, base[1] + dy, base[2] + dz)];
                    }
                }
            }
        }
        Some(acc)
    }
}

/// Colatitude/longitude grid on the unit sphere. Colatitudes sit half a step
/// away from the poles; longitudes are periodic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SphereDims", into = "SphereDims")]
pub struct SphereGrid {
    pub n_theta: usize,
    pub n_phi: usize,
    cache: SphereCache,
}

#[derive(Serialize, Deserialize)]
struct SphereDims {
    n_theta: usize,
    n_phi: usize,
}

impl TryFrom<SphereDims> for SphereGrid {
    type Error = Error;
    fn try_from(d: SphereDims) -> Result<Self> {
        SphereGrid::new(d.n_theta, d.n_phi)
    }
}

impl From<SphereGrid> for SphereDims {
    fn from(s: SphereGrid) -> Self {
        SphereDims { n_theta: s.n_theta, n_phi: s.n_phi }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct SphereCache {
    theta: Vec<f64>,
    sin_t: Vec<f64>,
    cos_t: Vec<f64>,
    weights: Vec<f64>,
    d1_theta: Vec<f64>,
    d2_theta: Vec<f64>,
    d1_phi: Vec<f64>,
    d2_phi: Vec<f64>,
}

fn fourier_diff(m: usize) -> (Vec<f64>, Vec<f64>) {
    let h = 2.0 * PI / m as f64;
    let mut d1 = vec![0.0; m * m];
    let mut d2 = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                d2[i * m + j] = -PI * PI / (3.0 * h * h) - 1.0 / 6.0;
            } else {
                let k = i as i64 - j as i64;
                let sgn = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let x = k as f64 * h / 2.0;
                d1[i * m + j] = 0.5 * sgn / x.tan();
                d2[i * m + j] = -0.5 * sgn / (x.sin() * x.sin());
            }
        }
    }
    (d1, d2)
}

impl SphereGrid {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 2 || n_phi < 4 || n_phi % 2 != 0 {
            return Err(Error::Invalid(format!("sphere grid needs n_theta >= 2 and even n_phi >= 4, got {n_theta}x{n_phi}")));
        }
        let dt = PI / n_theta as f64;
        let theta: Vec<f64> = (0..n_theta).map(|j| (j as f64 + 0.5) * dt).collect();
        let sin_t: Vec<f64> = theta.iter().map(|t| t.sin()).collect();
        let cos_t: Vec<f64> = theta.iter().map(|t| t.cos()).collect();
        // Fejér's first rule in cos(theta)
        let weights = theta
            .iter()
            .map(|&th| {
                let mut s = 0.0;
                for k in 1..=n_theta / 2 {
                    let kf = k as f64;
                    s += (2.0 * kf * th).cos() / (4.0 * kf * kf - 1.0);
                }
                2.0 / n_theta as f64 * (1.0 - 2.0 * s) * (2.0 * PI / n_phi as f64)
            })
            .collect();
        let (d1_theta, d2_theta) = fourier_diff(2 * n_theta);
        let (d1_phi, d2_phi) = fourier_diff(n_phi);
        Ok(SphereGrid {
            n_theta,
            n_phi,
            cache: SphereCache { theta, sin_t, cos_t, weights, d1_theta, d2_theta, d1_phi, d2_phi },
        })
    }

    fn ensure(&self) -> &SphereCache {
        &self.cache
    }

    pub fn len(&self) -> usize {
        self.n_theta * self.n_phi
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta(&self, j: usize) -> f64 {
        self.ensure().theta[j]
    }

    pub fn phi(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_phi as f64
    }

    pub fn d_theta(&self) -> f64 {
        PI / self.n_theta as f64
    }

    pub fn d_phi(&self) -> f64 {
        2.0 * PI / self.n_phi as f64
    }

    pub fn sin_theta(&self) -> &[f64] {
        &self.ensure().sin_t
    }

    pub fn omega(&self, j: usize, k: usize) -> Vec3 {
        let c = self.ensure();
        let p = self.phi(k);
        [c.sin_t[j] * p.cos(), c.sin_t[j] * p.sin(), c.cos_t[j]]
    }

    /// Quadrature weight of node `(j, k)`; weights sum to `4*pi`.
    pub fn weight(&self, j: usize) -> f64 {
        self.ensure().weights[j]
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        let c = self.ensure();
        let mut acc = 0.0;
        for j in 0..self.n_theta {
            let row: f64 = f[j * self.n_phi..(j + 1) * self.n_phi].iter().sum();
            acc += c.weights[j] * row;
        }
        acc
    }

    pub fn sample<F: Fn(Vec3) -> f64>(&self, f: F) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.n_theta {
            for k in 0..self.n_phi {
                out.push(f(self.omega(j, k)));
            }
        }
        out
    }

    /// Five-point Laplace-Beltrami stencil with flux form in colatitude.
    pub fn lb_stencil(&self, f: &[f64], out: &mut [f64]) {
        let (nt, np) = (self.n_theta, self.n_phi);
        let c = self.ensure();
        let dt = self.d_theta();
        let dp = self.d_phi();
        for j in 0..nt {
            let sp = ((j as f64 + 1.0) * dt).sin();
            let sm = (j as f64 * dt).sin();
            let s = c.sin_t[j];
            for k in 0..np {
                let f0 = f[j * np + k];
                let mut acc = 0.0;
                if j + 1 < nt {
                    acc += sp * (f[(j + 1) * np + k] - f0);
                }
                if j > 0 {
                    acc -= sm * (f0 - f[(j - 1) * np + k]);
                }
                acc /= s * dt * dt;
                let kp = (k + 1) % np;
                let km = (k + np - 1) % np;
                acc += (f[j * np + kp] - 2.0 * f0 + f[j * np + km]) / (s * s * dp * dp);
                out[j * np + k] = acc;
            }
        }
    }

    /// Spectral colatitude derivatives (first, second) via the doubled sphere.
    pub fn theta_derivs(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nt, np) = (self.n_theta, self.n_phi);
        let c = self.ensure();
        let m = 2 * nt;
        let mut d1 = vec![0.0; nt * np];
        let mut d2 = vec![0.0; nt * np];
        let mut ext = vec![0.0; m];
        for k in 0..np / 2 {
            let ko = k + np / 2;
            for i in 0..nt {
                ext[i] = f[i * np + k];
                ext[m - 1 - i] = f[i * np + ko];
            }
            for i in 0..m {
                let r1 = &c.d1_theta[i * m..(i + 1) * m];
                let r2 = &c.d2_theta[i * m..(i + 1) * m];
                let mut a1 = 0.0;
                let mut a2 = 0.0;
                for q in 0..m {
                    a1 += r1[q] * ext[q];
                    a2 += r2[q] * ext[q];
                }
                if i < nt {
                    d1[i * np + k] = a1;
                    d2[i * np + k] = a2;
                } else {
                    let jj = m - 1 - i;
                    d1[jj * np + ko] = -a1;
                    d2[jj * np + ko] = a2;
                }
            }
        }
        (d1, d2)
    }

    /// Spectral longitude derivatives (first, second).
    pub fn phi_derivs(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (nt, np) = (self.n_theta, self.n_phi);
        let c = self.ensure();
        let mut d1 = vec![0.0; nt * np];
        let mut d2 = vec![0.0; nt * np];
        for j in 0..nt {
            let row = &f[j * np..(j + 1) * np];
            for k in 0..np {
                let r1 = &c.d1_phi[k * np..(k + 1) * np];
                let r2 = &c.d2_phi[k * np..(k + 1) * np];
                d1[j * np + k] = r1.iter().zip(row).map(|(a, b)| a * b).sum();
                d2[j * np + k] = r2.iter().zip(row).map(|(a, b)| a * b).sum();
            }
        }
        (d1, d2)
    }

    /// Spectral angular gradient `(d_theta f, d_phi f / sin theta)` and
    /// Laplace-Beltrami operator.
    pub fn grad_lb_spectral(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nt, np) = (self.n_theta, self.n_phi);
        let c = self.ensure();
        let (ft, ftt) = self.theta_derivs(f);
        let (fp, fpp) = self.phi_derivs(f);
        let mut gt = vec![0.0; nt * np];
        let mut gp = vec![0.0; nt * np];
        let mut lb = vec![0.0; nt * np];
        for j in 0..nt {
            let s = c.sin_t[j];
            let cot = c.cos_t[j] / s;
            for k in 0..np {
                let i = j * np + k;
                gt[i] = ft[i];
                gp[i] = fp[i] / s;
                lb[i] = ftt[i] + cot * ft[i] + fpp[i] / (s * s);
            }
        }
        (gt, gp, lb)
    }
}

/// Log-radial shell grid for `s_inner <= |x| <= s_outer`, uniform in `t = log(1/r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnulusGrid {
    pub s_inner: f64,
    pub s_outer: f64,
    pub n_t: usize,
    pub sphere: SphereGrid,
}

impl AnnulusGrid {
    pub fn new(s_inner: f64, s_outer: f64, n_t: usize, n_theta: usize, n_phi: usize) -> Result<Self> {
        if !(s_inner > 0.0 && s_inner < s_outer) {
            return Err(Error::Invalid(format!("annulus radii must satisfy 0 < {s_inner} < {s_outer}")));
        }
        if n_t < 4 {
            return Err(Error::Invalid("annulus grid needs at least 4 radial nodes".into()));
        }
        Ok(AnnulusGrid { s_inner, s_outer, n_t, sphere: SphereGrid::new(n_theta, n_phi)? })
    }

    /// Same resolution `n` in all three directions (`2n` in longitude).
    pub fn uniform(s_inner: f64, s_outer: f64, n: usize) -> Result<Self> {
        Self::new(s_inner, s_outer, n, n, 2 * n)
    }

    pub fn t_min(&self) -> f64 {
        -self.s_outer.ln()
    }

    pub fn t_max(&self) -> f64 {
        -self.s_inner.ln()
    }

    pub fn dt(&self) -> f64 {
        (self.t_max() - self.t_min()) / (self.n_t - 1) as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t_min() + self.dt() * i as f64
    }

    pub fn slice_len(&self) -> usize {
        self.sphere.len()
    }

    pub fn len(&self) -> usize {
        self.n_t * self.sphere.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pos(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let r = (-self.t(i)).exp();
        let w = self.sphere.omega(j, k);
        [r * w[0], r * w[1], r * w[2]]
    }

    /// Trapezoid weight in `t` for node `i`.
    pub fn t_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_t {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    /// Integral over `(t, omega)` of `f * jac(t)`.
    pub fn integrate_with<J: Fn(f64) -> f64>(&self, f: &[f64], jac: J) -> f64 {
        let m = self.slice_len();
        (0..self.n_t)
            .map(|i| self.t_weight(i) * jac(self.t(i)) * self.sphere.integrate(&f[i * m..(i + 1) * m]))
            .sum()
    }

    /// Integral over the shell in Cartesian measure, `dx = e^{-3t} dt d omega`.
    pub fn integrate_volume(&self, f: &[f64]) -> f64 {
        self.integrate_with(f, |t| (-3.0 * t).exp())
    }

    /// First and second `t` derivatives, centered inside and one-sided at the ends.
    pub fn t_derivs(&self, f: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.slice_len();
        let n = self.n_t;
        let dt = self.dt();
        let mut d1 = vec![0.0; f.len()];
        let mut d2 = vec![0.0; f.len()];
        for i in 0..n {
            for q in 0..m {
                let at = |ii: usize| f[ii * m + q];
                let (a, b) = if i == 0 {
                    ((-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * dt), (2.0 * at(0) - 5.0 * at(1) + 4.0 * at(2) - at(3)) / (dt * dt))
                } else if i + 1 == n {
                    (
                        (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * dt),
                        (2.0 * at(n - 1) - 5.0 * at(n - 2) + 4.0 * at(n - 3) - at(n - 4)) / (dt * dt),
                    )
                } else {
                    ((at(i + 1) - at(i - 1)) / (2.0 * dt), (at(i + 1) - 2.0 * at(i) + at(i - 1)) / (dt * dt))
                };
                d1[i * m + q] = a;
                d2[i * m + q] = b;
            }
        }
        (d1, d2)
    }

    /// Range of radial indices holding nonzero values, padded by `pad` nodes.
    pub fn support_range(&self, f: &[f64], pad: usize) -> Option<(usize, usize)> {
        let m = self.slice_len();
        let nz: Vec<usize> = (0..self.n_t).filter(|&i| f[i * m..(i + 1) * m].iter().any(|&v| v != 0.0)).collect();
        let lo = *nz.first()?;
        let hi = *nz.last()?;
        Some((lo.saturating_sub(pad), (hi + pad).min(self.n_t - 1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Grid {
    Voxel(VoxelGrid),
    Annulus(AnnulusGrid),
}

impl Grid {
    pub fn len(&self) -> usize {
        match self {
            Grid::Voxel(g) => g.len(),
            Grid::Annulus(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Node values on a structured grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} nodes", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("field values must be finite".into()));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        ScalarField { grid, values: vec![0.0; n] }
    }

    pub fn on_voxels<F: Fn(Vec3) -> f64>(g: &VoxelGrid, f: F) -> Self {
        let values = (0..g.len()).map(|i| f(g.pos(i))).collect();
        ScalarField { grid: Grid::Voxel(*g), values }
    }

    pub fn on_annulus<F: Fn(Vec3) -> f64>(g: &AnnulusGrid, f: F) -> Self {
        let mut values = Vec::with_capacity(g.len());
        for i in 0..g.n_t {
            for j in 0..g.sphere.n_theta {
                for k in 0..g.sphere.n_phi {
                    values.push(f(g.pos(i, j, k)));
                }
            }
        }
        ScalarField { grid: Grid::Annulus(g.clone()), values }
    }

    pub fn annulus(&self) -> Result<&AnnulusGrid> {
        match &self.grid {
            Grid::Annulus(g) => Ok(g),
            Grid::Voxel(_) => Err(Error::GridMismatch("expected an annulus grid".into())),
        }
    }

    pub fn voxel(&self) -> Result<&VoxelGrid> {
        match &self.grid {
            Grid::Voxel(g) => Ok(g),
            Grid::Annulus(_) => Err(Error::GridMismatch("expected a voxel grid".into())),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Seven-point Laplacian on the nodes whose stencil fits; other nodes get zero.
pub fn voxel_laplacian(g: &VoxelGrid, f: &[f64], out: &mut [f64]) {
    let [nx, ny, nz] = g.dims;
    let inv = 1.0 / (g.h * g.h);
    let sy = nx;
    let sz = nx * ny;
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 1..nz - 1 {
        for j in 1..ny - 1 {
            let base = nx * (j + ny * k);
            for i in 1..nx - 1 {
                let c = base + i;
                out[c] = (f[c - 1] + f[c + 1] + f[c - sy] + f[c + sy] + f[c - sz] + f[c + sz] - 6.0 * f[c]) * inv;
            }
        }
    }
}

/// Discrete Laplacian. On shells this is `e^{2t}(d_t^2 - d_t + LB)` with the
/// five-point sphere stencil.
pub fn laplacian(field: &ScalarField) -> Result<ScalarField> {
    match &field.grid {
        Grid::Voxel(g) => {
            let mut out = vec![0.0; g.len()];
            voxel_laplacian(g, &field.values, &mut out);
            Ok(ScalarField { grid: field.grid.clone(), values: out })
        }
        Grid::Annulus(g) => {
            let m = g.slice_len();
            let (d1, d2) = g.t_derivs(&field.values);
            let mut out = vec![0.0; g.len()];
            let mut lb = vec![0.0; m];
            for i in 0..g.n_t {
                g.sphere.lb_stencil(&field.values[i * m..(i + 1) * m], &mut lb);
                let e = (2.0 * g.t(i)).exp();
                for q in 0..m {
                    let idx = i * m + q;
                    out[idx] = e * (d2[idx] - d1[idx] + lb[q]);
                }
            }
            Ok(ScalarField { grid: field.grid.clone(), values: out })
        }
    }
}

pub fn bilaplacian(field: &ScalarField) -> Result<ScalarField> {
    if let Grid::Voxel(g) = &field.grid {
        if g.dims.iter().any(|&d| d < 5) {
            return Err(Error::Invalid("bilaplacian needs at least 5 nodes per axis".into()));
        }
    }
    laplacian(&laplacian(field)?)
}

/// Kelvin transform `U(y) = |y| u(y/|y|^2)` of a shell field. The image grid
/// mirrors the radial nodes, so no interpolation is needed.
pub fn kelvin_transform(field: &ScalarField) -> Result<ScalarField> {
    let g = field.annulus()?;
    let img = AnnulusGrid { s_inner: 1.0 / g.s_outer, s_outer: 1.0 / g.s_inner, n_t: g.n_t, sphere: g.sphere.clone() };
    let m = g.slice_len();
    let mut values = vec![0.0; g.len()];
    for i in 0..g.n_t {
        let src = g.n_t - 1 - i;
        let r = (-img.t(i)).exp();
        for q in 0..m {
            values[i * m + q] = r * field.values[src * m + q];
        }
    }
    Ok(ScalarField { grid: Grid::Annulus(img), values })
}

/// Kelvin transform of a voxel field resampled trilinearly onto `target`.
/// Image points falling outside the source grid, and the origin, get zero.
pub fn kelvin_resample(field: &ScalarField, target: &VoxelGrid) -> Result<ScalarField> {
    let g = field.voxel()?;
    let values = (0..target.len())
        .map(|i| {
            let y = target.pos(i);
            let r2 = y[0] * y[0] + y[1] * y[1] + y[2] * y[2];
            if r2 == 0.0 {
                return 0.0;
            }
            let x = [y[0] / r2, y[1] / r2, y[2] / r2];
            g.interpolate(&field.values, x).map_or(0.0, |u| r2.sqrt() * u)
        })
        .collect();
    Ok(ScalarField { grid: Grid::Voxel(*target), values })
}

/// Declarative description of a compactum away from the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CompactumSpec {
    /// Nodes of `grid` flagged in `mask`.
    VoxelMask { grid: VoxelGrid, mask: Vec<bool> },
    /// `{s <= |x| <= s_outer, theta <= h(|x|)}` around the positive `x3` axis.
    CuspLayer { shape: CuspShape, s_inner: f64, s_outer: f64 },
    /// Points of the shell within angular half-width `thickness` of `b0|x| + b.x = 0`.
    ConeSection { b: [f64; 4], r_inner: f64, r_outer: f64, thickness: f64 },
    /// Closed balls around the listed points.
    PointSet { points: Vec<(Vec3, f64)> },
    /// Closed shell, minus the polar caps `|x3|/|x| > cap_cos`.
    Shell { r_inner: f64, r_outer: f64, cap_cos: f64 },
    Union(Vec<CompactumSpec>),
}

impl CompactumSpec {
    pub fn full_shell(r_inner: f64, r_outer: f64) -> Self {
        CompactumSpec::Shell { r_inner, r_outer, cap_cos: 1.0 }
    }

    /// Radii `(min, max)` of a shell containing the compactum.
    pub fn radial_bounds(&self) -> (f64, f64) {
        match self {
            CompactumSpec::VoxelMask { grid, mask } => {
                let mut lo = f64::INFINITY;
                let mut hi: f64 = 0.0;
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        let r = norm(grid.pos(i));
                        lo = lo.min(r);
                        hi = hi.max(r);
                    }
                }
                (lo, hi)
            }
            CompactumSpec::CuspLayer { s_inner, s_outer, .. } => (*s_inner, *s_outer),
            CompactumSpec::ConeSection { r_inner, r_outer, .. } => (*r_inner, *r_outer),
            CompactumSpec::PointSet { points } => points.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), (p, rad)| {
                let r = norm(*p);
                (lo.min(r - rad), hi.max(r + rad))
            }),
            CompactumSpec::Shell { r_inner, r_outer, .. } => (*r_inner, *r_outer),
            CompactumSpec::Union(parts) => parts.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), p| {
                let (a, b) = p.radial_bounds();
                (lo.min(a), hi.max(b))
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CompactumSpec::VoxelMask { grid, mask } => {
                if mask.len() != grid.len() {
                    return Err(Error::GridMismatch("mask length differs from grid size".into()));
                }
                if !mask.iter().any(|&m| m) {
                    return Err(Error::EmptyCompactum);
                }
            }
            CompactumSpec::PointSet { points } if points.is_empty() => return Err(Error::EmptyCompactum),
            CompactumSpec::Union(parts) => {
                if parts.is_empty() {
                    return Err(Error::EmptyCompactum);
                }
                for p in parts {
                    p.validate()?;
                }
            }
            CompactumSpec::CuspLayer { shape, s_inner, s_outer } => {
                if !(*s_inner > 0.0 && s_inner < s_outer) {
                    return Err(Error::Invalid("cusp layer radii must satisfy 0 < s < s_outer".into()));
                }
                shape.validate()?;
            }
            CompactumSpec::ConeSection { b, r_inner, r_outer, thickness } => {
                if !(*r_inner > 0.0 && r_inner <= r_outer) || *thickness < 0.0 {
                    return Err(Error::Invalid("cone section needs 0 < r_inner <= r_outer and thickness >= 0".into()));
                }
                if b[1..].iter().all(|&v| v == 0.0) {
                    return Err(Error::Invalid("cone section needs a nonzero direction part".into()));
                }
            }
            CompactumSpec::Shell { r_inner, r_outer, .. } => {
                if !(*r_inner > 0.0 && r_inner <= r_outer) {
                    return Err(Error::Invalid("shell needs 0 < r_inner <= r_outer".into()));
                }
            }
            _ => {}
        }
        let (lo, _) = self.radial_bounds();
        if !(lo > 0.0) {
            return Err(Error::Invalid("compactum must stay away from the origin".into()));
        }
        Ok(())
    }

    /// Part of the compactum inside the closed shell `r_inner <= |x| <= r_outer`;
    /// point balls are kept when their centre lies in the shell.
    pub fn restrict(&self, r_inner: f64, r_outer: f64) -> Option<CompactumSpec> {
        let clip = |lo: f64, hi: f64| {
            let (a, b) = (lo.max(r_inner), hi.min(r_outer));
            (a <= b).then_some((a, b))
        };
        match self {
            CompactumSpec::VoxelMask { grid, mask } => {
                let mask: Vec<bool> = mask
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| {
                        let r = norm(grid.pos(i));
                        m && r >= r_inner && r <= r_outer
                    })
                    .collect();
                mask.iter().any(|&m| m).then(|| CompactumSpec::VoxelMask { grid: *grid, mask })
            }
            CompactumSpec::CuspLayer { shape, s_inner, s_outer } => clip(*s_inner, *s_outer)
                .filter(|(a, b)| a < b)
                .map(|(a, b)| CompactumSpec::CuspLayer { shape: shape.clone(), s_inner: a, s_outer: b }),
            CompactumSpec::ConeSection { b, r_inner: lo, r_outer: hi, thickness } => {
                clip(*lo, *hi).map(|(x, y)| CompactumSpec::ConeSection { b: *b, r_inner: x, r_outer: y, thickness: *thickness })
            }
            CompactumSpec::PointSet { points } => {
                let points: Vec<_> = points
                    .iter()
                    .filter(|(p, _)| {
                        let r = norm(*p);
                        r >= r_inner && r <= r_outer
                    })
                    .copied()
                    .collect();
                (!points.is_empty()).then_some(CompactumSpec::PointSet { points })
            }
            CompactumSpec::Shell { r_inner: lo, r_outer: hi, cap_cos } => {
                clip(*lo, *hi).map(|(a, b)| CompactumSpec::Shell { r_inner: a, r_outer: b, cap_cos: *cap_cos })
            }
            CompactumSpec::Union(parts) => {
                let parts: Vec<_> = parts.iter().filter_map(|p| p.restrict(r_inner, r_outer)).collect();
                match parts.len() {
                    0 => None,
                    1 => parts.into_iter().next(),
                    _ => Some(CompactumSpec::Union(parts)),
                }
            }
        }
    }

    /// Membership of a point, with `slack` widening thin sets to the grid scale.
    pub fn contains(&self, x: Vec3, slack: f64) -> bool {
        let r = norm(x);
        match self {
            CompactumSpec::VoxelMask { grid, mask } => grid.nearest(x).is_some_and(|i| mask[i]),
            CompactumSpec::CuspLayer { shape, s_inner, s_outer } => {
                if r < *s_inner || r > *s_outer {
                    return false;
                }
                let th = (x[2] / r).clamp(-1.0, 1.0).acos();
                th <= shape.eval(r)
            }
            CompactumSpec::ConeSection { b, r_inner, r_outer, thickness } => {
                if r < *r_inner || r > *r_outer || r == 0.0 {
                    return false;
                }
                let bn = norm([b[1], b[2], b[3]]);
                let f = b[0] + (b[1] * x[0] + b[2] * x[1] + b[3] * x[2]) / r;
                // distance to the cone surface, to first order
                (f / bn).abs() * r <= thickness * r + slack
            }
            CompactumSpec::PointSet { points } => points.iter().any(|(p, rad)| dist(*p, x) <= *rad),
            CompactumSpec::Shell { r_inner, r_outer, cap_cos } => {
                r >= *r_inner && r <= *r_outer && (r == 0.0 || (x[2] / r).abs() <= *cap_cos)
            }
            CompactumSpec::Union(parts) => parts.iter().any(|p| p.contains(x, slack)),
        }
    }
}

/// Six-neighbour dilation of a node mask.
pub fn dilate(g: &VoxelGrid, mask: &[bool]) -> Vec<bool> {
    let mut out = mask.to_vec();
    let [nx, ny, nz] = g.dims;
    for idx in 0..g.len() {
        if !mask[idx] {
            continue;
        }
        let [i, j, k] = g.coords(idx);
        if i > 0 {
            out[idx - 1] = true;
        }
        if i + 1 < nx {
            out[idx + 1] = true;
        }
        if j > 0 {
            out[idx - nx] = true;
        }
        if j + 1 < ny {
            out[idx + nx] = true;
        }
        if k > 0 {
            out[idx - nx * ny] = true;
        }
        if k + 1 < nz {
            out[idx + nx * ny] = true;
        }
    }
    out
}

/// Nodes of the compactum together with a one-cell neighbourhood.
pub fn rasterize(spec: &CompactumSpec, g: &VoxelGrid) -> Result<Vec<bool>> {
    spec.validate()?;
    let mut core = vec![false; g.len()];
    let slack = 0.5 * g.h;
    for (idx, c) in core.iter_mut().enumerate() {
        *c = spec.contains(g.pos(idx), slack);
    }
    let add_points = |pts: &[(Vec3, f64)], core: &mut Vec<bool>| {
        for (p, _) in pts {
            if let Some(i) = g.nearest(*p) {
                core[i] = true;
            }
        }
    };
    // isolated points smaller than a cell still mark their nearest node
    fn collect_points(s: &CompactumSpec, out: &mut Vec<(Vec3, f64)>) {
        match s {
            CompactumSpec::PointSet { points } => out.extend(points.iter().copied()),
            CompactumSpec::Union(parts) => parts.iter().for_each(|p| collect_points(p, out)),
            _ => {}
        }
    }
    let mut pts = Vec::new();
    collect_points(spec, &mut pts);
    add_points(&pts, &mut core);
    if !core.iter().any(|&c| c) {
        return Err(Error::EmptyCompactum);
    }
    Ok(dilate(g, &core))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_coords_examples() {
        let p = to_log_coords([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(p.t, 0.0);
        assert_eq!(p.omega, [0.0, 0.0, 1.0]);
        let p = to_log_coords([(-1.0f64).exp(), 0.0, 0.0]).unwrap();
        assert!((p.t - 1.0).abs() < 1e-15);
        let p = to_log_coords([0.0, 2.0, 0.0]).unwrap();
        assert!((p.t + 2.0f64.ln()).abs() < 1e-15);
        assert_eq!(p.omega, [0.0, 1.0, 0.0]);
        assert!(to_log_coords([0.0; 3]).is_err());
    }

    #[test]
    fn spherical_round_trip() {
        let s = SphericalPoint::new(2.0, 1.0, 4.0).unwrap();
        let back = SphericalPoint::from_cartesian(s.to_cartesian()).unwrap();
        assert!((back.r - 2.0).abs() < 1e-14 && (back.theta - 1.0).abs() < 1e-14 && (back.phi - 4.0).abs() < 1e-14);
        assert!(SphericalPoint::new(-1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn sphere_quadrature_exact_for_low_degree() {
        let s = SphereGrid::new(16, 32).unwrap();
        let ones = vec![1.0; s.len()];
        assert!((s.integrate(&ones) - 4.0 * PI).abs() < 1e-12);
        let z2 = s.sample(|w| w[2] * w[2]);
        assert!((s.integrate(&z2) - 4.0 * PI / 3.0).abs() < 1e-12);
        let x2y2 = s.sample(|w| w[0] * w[0] * w[1] * w[1]);
        assert!((s.integrate(&x2y2) - 4.0 * PI / 15.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_lb_of_first_harmonics() {
        let s = SphereGrid::new(12, 24).unwrap();
        for a in 0..3 {
            let f = s.sample(|w| w[a]);
            let (_, _, lb) = s.grad_lb_spectral(&f);
            for i in 0..f.len() {
                assert!((lb[i] + 2.0 * f[i]).abs() < 1e-10, "axis {a} node {i}: {} vs {}", lb[i], -2.0 * f[i]);
            }
        }
    }

    #[test]
    fn stencil_lb_converges() {
        let err = |n: usize| {
            let s = SphereGrid::new(n, 2 * n).unwrap();
            let f = s.sample(|w| w[0]);
            let mut lb = vec![0.0; f.len()];
            s.lb_stencil(&f, &mut lb);
            let e: Vec<f64> = lb.iter().zip(&f).map(|(l, v)| (l + 2.0 * v).powi(2)).collect();
            s.integrate(&e).sqrt()
        };
        let (e1, e2) = (err(16), err(32));
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn voxel_laplacian_of_quadratic() {
        let g = VoxelGrid::centered(10, 1.0).unwrap();
        let f = ScalarField::on_voxels(&g, |x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        let l = laplacian(&f).unwrap();
        for i in 0..g.len() {
            if g.is_interior(i, 1) {
                assert!((l.values[i] - 6.0).abs() < 1e-9);
            }
        }
        let c = ScalarField::on_voxels(&g, |_| 3.0);
        let l = laplacian(&c).unwrap();
        assert!(l.values.iter().enumerate().all(|(i, v)| !g.is_interior(i, 1) || v.abs() < 1e-12));
    }

    #[test]
    fn voxel_bilaplacian_of_quartic() {
        // the seven-point stencil maps r^4 to 20 r^2 + 6 h^2, whose image is exactly 120
        let g = VoxelGrid::centered(12, 1.0).unwrap();
        let f = ScalarField::on_voxels(&g, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            r2 * r2
        });
        let b = bilaplacian(&f).unwrap();
        for i in 0..g.len() {
            if g.is_interior(i, 2) {
                assert!((b.values[i] - 120.0).abs() < 1e-7, "{}", b.values[i]);
            }
        }
        let q = ScalarField::on_voxels(&g, |x| x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
        let b = bilaplacian(&q).unwrap();
        assert!(b.values.iter().enumerate().all(|(i, v)| !g.is_interior(i, 2) || v.abs() < 1e-8));
    }

    #[test]
    fn annulus_laplacian_of_profile() {
        let err = |n: usize| {
            let g = AnnulusGrid::uniform(1.0, 2.0, n).unwrap();
            let f = ScalarField::on_annulus(&g, |x| x[2] / norm(x));
            let l = laplacian(&f).unwrap();
            let ex = ScalarField::on_annulus(&g, |x| -2.0 * x[2] / norm(x).powi(3));
            let diff: Vec<f64> = l.values.iter().zip(&ex.values).map(|(a, b)| (a - b).powi(2)).collect();
            g.integrate_volume(&diff).sqrt()
        };
        let (e1, e2) = (err(12), err(24));
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn kelvin_examples() {
        let g = AnnulusGrid::uniform(1.0, 2.0, 8).unwrap();
        let u = ScalarField::on_annulus(&g, norm);
        let k = kelvin_transform(&u).unwrap();
        let img = k.annulus().unwrap();
        assert!((img.s_inner - 0.5).abs() < 1e-15 && (img.s_outer - 1.0).abs() < 1e-15);
        assert!(k.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let one = ScalarField::on_annulus(&g, |_| 1.0);
        let k = kelvin_transform(&one).unwrap();
        let expect = ScalarField::on_annulus(k.annulus().unwrap(), norm);
        for (a, b) in k.values.iter().zip(&expect.values) {
            assert!((a - b).abs() < 1e-12);
        }
        let back = kelvin_transform(&kelvin_transform(&u).unwrap()).unwrap();
        for (a, b) in back.values.iter().zip(&u.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn kelvin_resample_inverts_linear_image() {
        let src = VoxelGrid::centered(40, 4.0).unwrap();
        let u = ScalarField::on_voxels(&src, norm);
        let target = VoxelGrid::new([0.3, 0.3, 0.3], 0.05, [5, 5, 5]).unwrap();
        let k = kelvin_resample(&u, &target).unwrap();
        for v in &k.values {
            assert!((v - 1.0).abs() < 0.02, "{v}");
        }
    }

    #[test]
    fn rasterize_single_point() {
        let g = VoxelGrid::centered(8, 1.0).unwrap();
        let p = g.pos(g.index(6, 4, 4));
        let m = rasterize(&CompactumSpec::PointSet { points: vec![(p, 0.0)] }, &g).unwrap();
        assert_eq!(m.iter().filter(|&&b| b).count(), 7);
        assert!(m[g.index(7, 4, 4)] && m[g.index(6, 5, 4)] && m[g.index(6, 4, 3)]);
    }

    #[test]
    fn rasterize_rejects_empty() {
        let g = VoxelGrid::centered(8, 1.0).unwrap();
        let far = CompactumSpec::full_shell(5.0, 6.0);
        assert_eq!(rasterize(&far, &g), Err(Error::EmptyCompactum));
        assert_eq!(CompactumSpec::PointSet { points: vec![] }.validate(), Err(Error::EmptyCompactum));
    }

    #[test]
    fn cone_section_hugs_surface() {
        let g = VoxelGrid::centered(40, 1.0).unwrap();
        let spec = CompactumSpec::ConeSection { b: [0.0, 0.0, 0.0, 1.0], r_inner: 0.3, r_outer: 0.9, thickness: 0.0 };
        let m = rasterize(&spec, &g).unwrap();
        for (i, &on) in m.iter().enumerate() {
            if on {
                assert!(g.pos(i)[2].abs() <= 1.5 * g.h + 1e-12);
            }
        }
    }
}
