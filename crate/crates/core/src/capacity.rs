//! Biharmonic capacity relative to a profile, its Gram-matrix form, and the
//! harmonic capacity.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::{solve_clamped, ClampedBiharmonic, Dirichlet, HarmonicBoundary};
use crate::linalg::{cg, sym_eigen, CgOptions, SolveStats};
use crate::pispace::PiProfile;
use crate::sphgrid::{norm, rasterize, CompactumSpec, Grid, ScalarField, VoxelGrid};

/// Discretised capacity problem: nodes where the field may vary, and the
/// neighbourhood of the compactum where it is pinned to a profile.
#[derive(Debug, Clone)]
pub struct CapacityProblem {
    pub compactum: CompactumSpec,
    pub grid: VoxelGrid,
    pub domain: Vec<bool>,
    pub pinned: Vec<bool>,
    pub tol: f64,
}

impl CapacityProblem {
    /// Problem on an explicit domain mask; the two outermost node layers are
    /// always excluded.
    pub fn with_domain(compactum: CompactumSpec, grid: VoxelGrid, domain: Vec<bool>, tol: f64) -> Result<Self> {
        if domain.len() != grid.len() {
            return Err(Error::GridMismatch("domain mask length differs from grid size".into()));
        }
        let mask = rasterize(&compactum, &grid)?;
        let mut domain = domain;
        for (i, d) in domain.iter_mut().enumerate() {
            if !grid.is_interior(i, 2) {
                *d = false;
            }
        }
        let pinned: Vec<bool> = mask.iter().zip(&domain).map(|(&m, &d)| m && d).collect();
        if !pinned.iter().any(|&p| p) {
            return Err(Error::EmptyCompactum);
        }
        Ok(CapacityProblem { compactum, grid, domain, pinned, tol })
    }

    /// Default computational domain: the shell `s/2 < |x| < 2as` on a cube with
    /// `n_cells` cells per axis.
    pub fn annulus(compactum: CompactumSpec, s: f64, a: f64, n_cells: usize, tol: f64) -> Result<Self> {
        if !(s > 0.0 && a > 1.0) || n_cells < 8 {
            return Err(Error::Invalid("annulus problem needs s > 0, a > 1 and at least 8 cells".into()));
        }
        let r_out = 2.0 * a * s;
        let r_in = 0.5 * s;
        let w = r_out * n_cells as f64 / (n_cells as f64 - 5.0);
        let grid = VoxelGrid::centered(n_cells, w)?;
        let domain = (0..grid.len())
            .map(|i| {
                let r = norm(grid.pos(i));
                r > r_in && r < r_out
            })
            .collect();
        Self::with_domain(compactum, grid, domain, tol)
    }

    /// Cube `[-half_width, half_width]^3`, optionally without the origin node.
    pub fn boxed(compactum: CompactumSpec, half_width: f64, n_cells: usize, punctured: bool, tol: f64) -> Result<Self> {
        let grid = VoxelGrid::centered(n_cells, half_width)?;
        let domain = (0..grid.len()).map(|i| !(punctured && norm(grid.pos(i)) < 0.5 * grid.h)).collect();
        Self::with_domain(compactum, grid, domain, tol)
    }

    fn free_nodes(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.domain[i] && !self.pinned[i]).collect()
    }

    fn pinned_values(&self, p: &PiProfile) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| if self.pinned[i] { p.eval(self.grid.pos(i)).unwrap_or(p.b[0]) } else { 0.0 })
            .collect()
    }

    fn opts(&self) -> CgOptions {
        CgOptions { tol: self.tol, max_iter: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CapacityResult {
    pub value: f64,
    pub profile: PiProfile,
    #[serde(skip)]
    pub minimizer: ScalarField,
    pub stats: SolveStats,
}

/// Symmetric 4x4 matrix whose quadratic form is the profile capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct GramMatrix {
    pub g: [[f64; 4]; 4],
}

impl GramMatrix {
    pub fn new(g: [[f64; 4]; 4]) -> Result<Self> {
        let scale = (0..4).map(|i| g[i][i].abs()).sum::<f64>().max(f64::MIN_POSITIVE);
        for i in 0..4 {
            for j in 0..4 {
                if !g[i][j].is_finite() {
                    return Err(Error::Invalid("Gram entries must be finite".into()));
                }
                if (g[i][j] - g[j][i]).abs() > 1e-12 * scale {
                    return Err(Error::Invalid(format!("Gram matrix not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(GramMatrix { g })
    }

    pub fn zero() -> Self {
        GramMatrix { g: [[0.0; 4]; 4] }
    }

    pub fn quad(&self, b: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += b[i] * self.g[i][j] * b[j];
            }
        }
        acc
    }

    pub fn scaled(&self, w: f64) -> Self {
        GramMatrix { g: self.g.map(|r| r.map(|v| v * w)) }
    }

    pub fn add(&self, o: &GramMatrix) -> Self {
        let mut g = self.g;
        for i in 0..4 {
            for j in 0..4 {
                g[i][j] += o.g[i][j];
            }
        }
        GramMatrix { g }
    }

    pub fn trace(&self) -> f64 {
        (0..4).map(|i| self.g[i][i]).sum()
    }

    /// Smallest eigenvalue is not below `-1e-10 * trace`.
    pub fn is_psd(&self) -> bool {
        let (vals, _) = sym_eigen(&self.g);
        vals[0] >= -1e-10 * self.trace().abs()
    }
}

/// Minimum of `b^T G b` over unit `b`, with a minimiser.
pub fn cap_inf(g: &GramMatrix) -> Result<(f64, [f64; 4])> {
    let checked = GramMatrix::new(g.g)?;
    let (vals, vecs) = sym_eigen(&checked.g);
    Ok((vals[0], std::array::from_fn(|r| vecs[r][0])))
}

fn solve_biharmonic(problem: &CapacityProblem, op: &ClampedBiharmonic, fixed: &[f64]) -> Result<(Vec<f64>, f64, SolveStats)> {
    let rhs = op.rhs_from_fixed(fixed);
    let mut x = vec![0.0; op.free.len()];
    let stats = solve_clamped(op, &rhs, &mut x, problem.opts())?;
    let u = op.scatter(&x, fixed);
    let e = op.energy(&u);
    Ok((u, e, stats))
}

/// Capacity of the compactum relative to the profile `p`.
pub fn cap_p(problem: &CapacityProblem, p: &PiProfile) -> Result<CapacityResult> {
    let op = ClampedBiharmonic::new(problem.grid, problem.free_nodes());
    let fixed = problem.pinned_values(p);
    let (u, value, stats) = solve_biharmonic(problem, &op, &fixed)?;
    Ok(CapacityResult { value, profile: *p, minimizer: ScalarField { grid: Grid::Voxel(problem.grid), values: u }, stats })
}

#[derive(Debug, Clone, Serialize)]
pub struct GramResult {
    pub gram: GramMatrix,
    pub stats: Vec<SolveStats>,
}

/// Gram matrix from the four basis-profile minimisers.
pub fn cap_gram(problem: &CapacityProblem) -> Result<GramResult> {
    let free = problem.free_nodes();
    let sols: Vec<Result<(Vec<f64>, SolveStats)>> = (0..4)
        .into_par_iter()
        .map(|e| {
            let op = ClampedBiharmonic::new(problem.grid, free.clone());
            let fixed = problem.pinned_values(&PiProfile::basis(e));
            solve_biharmonic(problem, &op, &fixed).map(|(u, _, st)| (op.laplacian_full(&u), st))
        })
        .collect();
    let mut laps = Vec::with_capacity(4);
    let mut stats = Vec::with_capacity(4);
    for s in sols {
        let (l, st) = s?;
        laps.push(l);
        stats.push(st);
    }
    let h3 = problem.grid.h.powi(3);
    let mut g = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in i..4 {
            let v: f64 = laps[i].iter().zip(&laps[j]).map(|(a, b)| a * b).sum::<f64>() * h3;
            g[i][j] = v;
            g[j][i] = v;
        }
    }
    Ok(GramResult { gram: GramMatrix::new(g)?, stats })
}

/// Harmonic capacity: minimal Dirichlet energy of fields equal to one near the
/// compactum.
pub fn harmonic_cap(problem: &CapacityProblem, boundary: HarmonicBoundary) -> Result<CapacityResult> {
    let g = &problem.grid;
    let free: Vec<usize> = (0..g.len())
        .filter(|&i| {
            !problem.pinned[i]
                && match boundary {
                    HarmonicBoundary::Clamped => problem.domain[i],
                    HarmonicBoundary::FarField => problem.domain[i] || !g.is_interior(i, 2),
                }
        })
        .collect();
    let op = Dirichlet::new(*g, free, boundary);
    let fixed: Vec<f64> = problem.pinned.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
    let rhs = op.rhs_from_fixed(&fixed);
    let mut x = vec![0.0; op.free.len()];
    let stats = cg(&op, &rhs, &mut x, problem.opts())?;
    let u = op.scatter(&x, &fixed);
    let value = op.energy(&u);
    Ok(CapacityResult { value, profile: PiProfile::basis(0), minimizer: ScalarField { grid: Grid::Voxel(*g), values: u }, stats })
}

/// Ratio of the profile capacity on the default shell domain to the one on a
/// punctured cube of half-width `box_factor * 2as`, at the same spacing.
pub fn cap_domain_equivalence_check(compactum: &CompactumSpec, s: f64, a: f64, n_cells: usize, box_factor: f64, p: &PiProfile, tol: f64) -> Result<f64> {
    let shell = CapacityProblem::annulus(compactum.clone(), s, a, n_cells, tol)?;
    let h = shell.grid.h;
    let half = box_factor * 2.0 * a * s;
    let n_big = (2.0 * half / h).round() as usize;
    let big = CapacityProblem::boxed(compactum.clone(), n_big as f64 * h / 2.0, n_big, true, tol)?;
    let c_shell = cap_p(&shell, p)?.value;
    let c_big = cap_p(&big, p)?.value;
    if c_big <= 0.0 {
        return Err(Error::Domain("vanishing capacity on the large domain".into()));
    }
    Ok(c_shell / c_big)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cap_inf_examples() {
        let g = GramMatrix::new([[4.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0], [0.0, 0.0, 0.0, 1.0]]).unwrap();
        let (v, b) = cap_inf(&g).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(b, [0.0, 0.0, 0.0, 1.0]);
        let id = GramMatrix::new([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]).unwrap();
        let (v, b) = cap_inf(&id).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!((b.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(GramMatrix::new([[1.0, 2.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0; 4], [0.0; 4]]).is_err());
    }

    #[test]
    fn empty_compactum_is_an_error() {
        let far = CompactumSpec::full_shell(50.0, 60.0);
        let e = CapacityProblem::annulus(far, 1.0, 2.0, 16, 1e-8).unwrap_err();
        assert_eq!(e, Error::EmptyCompactum);
    }

    #[test]
    fn gram_diagonal_and_parity() {
        let k = CompactumSpec::full_shell(1.0, 2.0);
        let prob = CapacityProblem::annulus(k, 1.0, 2.0, 16, 1e-10).unwrap();
        let gr = cap_gram(&prob).unwrap();
        assert!(gr.gram.is_psd());
        for e in 0..4 {
            let c = cap_p(&prob, &PiProfile::basis(e)).unwrap().value;
            assert!((gr.gram.g[e][e] - c).abs() <= 1e-8 * c, "{e}: {} vs {c}", gr.gram.g[e][e]);
        }
        let scale = gr.gram.trace();
        for i in 1..4 {
            assert!(gr.gram.g[0][i].abs() < 1e-8 * scale);
        }
    }
}
