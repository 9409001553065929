//! Clamped biharmonic Dirichlet problems on voxel domains, Green's function
//! samples and the experiments built on them.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fd::{solve_clamped, ClampedBiharmonic};
use crate::linalg::{CgOptions, SolveStats};
use crate::sphgrid::{dist, norm, rasterize, CompactumSpec, Grid, ScalarField, Vec3, VoxelGrid};
use crate::wiener::{decay_factor, layer_capacities, LayerLayout, LayerSolver};

/// Node mask of an open set on a voxel grid. Nodes in the two outermost
/// layers are never free.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub grid: VoxelGrid,
    pub mask: Vec<bool>,
}

impl Domain {
    pub fn new(grid: VoxelGrid, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::GridMismatch("domain mask length differs from grid size".into()));
        }
        Ok(Domain { grid, mask })
    }

    pub fn from_fn(grid: VoxelGrid, inside: impl Fn(Vec3) -> bool) -> Self {
        let mask = (0..grid.len()).map(|i| inside(grid.pos(i))).collect();
        Domain { grid, mask }
    }

    /// Whole cube `[-half_width, half_width]^3`.
    pub fn full_box(n_cells: usize, half_width: f64) -> Result<Self> {
        Ok(Self::from_fn(VoxelGrid::centered(n_cells, half_width)?, |_| true))
    }

    /// Ball of `radius` in the cube, optionally without the origin node.
    pub fn ball(n_cells: usize, half_width: f64, radius: f64, punctured: bool) -> Result<Self> {
        let g = VoxelGrid::centered(n_cells, half_width)?;
        let eps = 0.5 * g.h;
        Ok(Self::from_fn(g, |x| {
            let r = norm(x);
            r < radius && !(punctured && r < eps)
        }))
    }

    /// Star-shaped domain `|x| < r0 (1 + sum c_k Y_k(x/|x|))` with random
    /// first- and second-order angular modes of total amplitude `amplitude`.
    pub fn blob(n_cells: usize, half_width: f64, r0: f64, amplitude: f64, seed: u64) -> Result<Self> {
        let g = VoxelGrid::centered(n_cells, half_width)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let scale = amplitude / c.iter().map(|v| v.abs()).sum::<f64>().max(1e-12);
        Ok(Self::from_fn(g, move |x| {
            let r = norm(x);
            if r == 0.0 {
                return true;
            }
            let w = [x[0] / r, x[1] / r, x[2] / r];
            let modes = [w[0], w[1], w[2], w[0] * w[1], w[1] * w[2], w[0] * w[2], w[0] * w[0] - w[1] * w[1], 3.0 * w[2] * w[2] - 1.0];
            let pert: f64 = modes.iter().zip(&c).map(|(m, k)| m * k).sum::<f64>() * scale;
            r < r0 * (1.0 + pert)
        }))
    }

    /// Domain minus a rasterised compactum and, optionally, the origin node.
    pub fn without(mut self, obstacle: Option<&CompactumSpec>, puncture: bool) -> Result<Self> {
        if let Some(k) = obstacle {
            let m = rasterize(k, &self.grid)?;
            for (d, o) in self.mask.iter_mut().zip(m) {
                *d &= !o;
            }
        }
        if puncture {
            if let Some(o) = self.grid.nearest([0.0; 3]) {
                if norm(self.grid.pos(o)) < 0.5 * self.grid.h {
                    self.mask[o] = false;
                }
            }
        }
        Ok(self)
    }

    pub fn is_free(&self, idx: usize) -> bool {
        self.mask[idx] && self.grid.is_interior(idx, 2)
    }

    pub fn free_nodes(&self) -> Vec<usize> {
        (0..self.grid.len()).filter(|&i| self.is_free(i)).collect()
    }

    /// Six-neighbour components of the free nodes, as node lists.
    fn components(&self) -> Vec<Vec<usize>> {
        let [nx, ny, _] = self.grid.dims;
        let mut seen = vec![false; self.grid.len()];
        let mut out = Vec::new();
        for start in self.free_nodes() {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(c) = queue.pop_front() {
                for nb in [c - 1, c + 1, c - nx, c + nx, c - nx * ny, c + nx * ny] {
                    if !seen[nb] && self.is_free(nb) {
                        seen[nb] = true;
                        comp.push(nb);
                        queue.push_back(nb);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Drops every free node outside the largest component.
    pub fn largest_component(mut self) -> Self {
        let comps = self.components();
        if let Some(best) = comps.iter().enumerate().max_by_key(|(_, c)| c.len()).map(|(k, _)| k) {
            for (k, c) in comps.iter().enumerate() {
                if k != best {
                    for &i in c {
                        self.mask[i] = false;
                    }
                }
            }
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct DirichletProblem {
    pub domain: Domain,
    /// Right-hand side on every node; zero off the free nodes.
    pub rhs: Vec<f64>,
    pub tol: f64,
}

impl DirichletProblem {
    pub fn new(domain: Domain, rhs: Vec<f64>, tol: f64) -> Result<Self> {
        if rhs.len() != domain.grid.len() {
            return Err(Error::GridMismatch("rhs length differs from grid size".into()));
        }
        if let Some(i) = (0..rhs.len()).find(|&i| rhs[i] != 0.0 && !domain.is_free(i)) {
            return Err(Error::Domain(format!("rhs is nonzero at node {i} outside the domain")));
        }
        if !domain.is_connected() {
            return Err(Error::Domain("domain mask is empty or disconnected".into()));
        }
        Ok(DirichletProblem { domain, rhs, tol })
    }

    /// Right-hand side sampled from `f` on the free nodes.
    pub fn sampled(domain: Domain, f: impl Fn(Vec3) -> f64, tol: f64) -> Result<Self> {
        let rhs = (0..domain.grid.len()).map(|i| if domain.is_free(i) { f(domain.grid.pos(i)) } else { 0.0 }).collect();
        Self::new(domain, rhs, tol)
    }
}

#[derive(Debug, Clone)]
pub struct DirichletSolution {
    pub field: ScalarField,
    pub stats: SolveStats,
    /// `h^3 sum (L u)^2`.
    pub energy: f64,
    /// `h^3 sum f u`.
    pub work: f64,
}

fn solve_free(grid: VoxelGrid, free: Vec<usize>, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, SolveStats, f64)> {
    let op = ClampedBiharmonic::new(grid, free);
    let h3 = grid.h.powi(3);
    let b: Vec<f64> = op.free.iter().map(|&i| h3 * rhs[i]).collect();
    let mut x = vec![0.0; b.len()];
    let stats = solve_clamped(&op, &b, &mut x, CgOptions { tol, max_iter: None })?;
    let u = op.scatter(&x, &vec![0.0; grid.len()]);
    let e = op.energy(&u);
    Ok((u, stats, e))
}

/// Minimiser of `h^3 sum (L u)^2 / 2 - h^3 sum f u` over fields vanishing off the free nodes.
pub fn solve_dirichlet(problem: &DirichletProblem) -> Result<DirichletSolution> {
    let grid = problem.domain.grid;
    let (u, stats, energy) = solve_free(grid, problem.domain.free_nodes(), &problem.rhs, problem.tol)?;
    let work = u.iter().zip(&problem.rhs).map(|(a, b)| a * b).sum::<f64>() * grid.h.powi(3);
    Ok(DirichletSolution { field: ScalarField { grid: Grid::Voxel(grid), values: u }, stats, energy, work })
}

#[derive(Debug, Clone)]
pub struct GreenSample {
    pub source: usize,
    pub field: ScalarField,
    pub stats: SolveStats,
}

/// Discrete Green's function with pole at node `y`: the solution for the
/// right-hand side `h^-3` at `y`.
pub fn green_sample(domain: &Domain, y: usize, tol: f64) -> Result<GreenSample> {
    if y >= domain.grid.len() || !domain.is_free(y) {
        return Err(Error::Domain(format!("source node {y} is not an interior domain node")));
    }
    let mut rhs = vec![0.0; domain.grid.len()];
    rhs[y] = domain.grid.h.powi(-3);
    let (u, stats, _) = solve_free(domain.grid, domain.free_nodes(), &rhs, tol)?;
    Ok(GreenSample { source: y, field: ScalarField { grid: Grid::Voxel(domain.grid), values: u }, stats })
}

/// Central-difference gradient at an interior node.
pub fn central_gradient(grid: &VoxelGrid, u: &[f64], idx: usize) -> Option<Vec3> {
    if !grid.is_interior(idx, 1) {
        return None;
    }
    let s = [1, grid.dims[0], grid.dims[0] * grid.dims[1]];
    Some(std::array::from_fn(|a| (u[idx + s[a]] - u[idx - s[a]]) / (2.0 * grid.h)))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PairSample {
    pub x: Vec3,
    pub distance: f64,
    /// `|x - y| |grad_x grad_y G|` with the Frobenius norm.
    pub mixed: f64,
    pub gradient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixedGradientReport {
    pub source: Vec3,
    pub h: f64,
    pub pairs: Vec<PairSample>,
    pub mixed_sup: f64,
    pub gradient_sup: f64,
    pub stats: Vec<SolveStats>,
}

/// `|x - y| |grad_x grad_y Gamma|` for `Gamma = |x - y| / 8 pi`.
pub const FREE_SPACE_MIXED: f64 = std::f64::consts::SQRT_2 / (8.0 * PI);

/// Sup of `|x - y| |grad_x grad_y G(x, y)|` and of `|grad_x G|` over the
/// points `xs` at distance at least `max(min_dist, 4h)` from `y`. The `y`
/// derivatives come from solves at the six neighbours of `y`.
pub fn mixed_gradient_sup(domain: &Domain, y: Vec3, xs: &[Vec3], min_dist: f64, tol: f64) -> Result<MixedGradientReport> {
    let g = domain.grid;
    let yi = g.nearest(y).ok_or_else(|| Error::Domain("source outside the grid".into()))?;
    let xi = pair_nodes(domain, yi, xs, min_dist)?;
    let s = [1, g.dims[0], g.dims[0] * g.dims[1]];
    let mut sources = Vec::with_capacity(6);
    for a in 0..3 {
        sources.push(yi + s[a]);
        sources.push(yi - s[a]);
    }
    let sols: Vec<Result<GreenSample>> = sources.par_iter().map(|&src| green_sample(domain, src, tol)).collect();
    let sols = sols.into_iter().collect::<Result<Vec<_>>>()?;
    let fields: Vec<&[f64]> = sols.iter().map(|s| s.field.values.as_slice()).collect();
    Ok(mixed_report(&g, yi, &xi, &fields, sols.iter().map(|s| s.stats).collect()))
}

fn pair_nodes(domain: &Domain, yi: usize, xs: &[Vec3], min_dist: f64) -> Result<Vec<usize>> {
    let g = domain.grid;
    let d = min_dist.max(4.0 * g.h);
    let yp = g.pos(yi);
    let xi: Vec<usize> = xs
        .iter()
        .filter_map(|&x| g.nearest(x))
        .filter(|&i| domain.is_free(i) && dist(g.pos(i), yp) >= d - 1e-9 * g.h)
        .collect();
    if xi.len() < 16 {
        return Err(Error::Invalid(format!("need at least 16 sample pairs, got {}", xi.len())));
    }
    Ok(xi)
}

/// `fields` holds the solutions with sources at `y + h e_a` and `y - h e_a`
/// for `a = 0, 1, 2`, in that order.
fn mixed_report(g: &VoxelGrid, yi: usize, xi: &[usize], fields: &[&[f64]], stats: Vec<SolveStats>) -> MixedGradientReport {
    let inv = 1.0 / (2.0 * g.h);
    let yp = g.pos(yi);
    let pairs: Vec<PairSample> = xi
        .iter()
        .map(|&x| {
            let mut m = 0.0;
            let mut grad = [0.0; 3];
            for a in 0..3 {
                let gp = central_gradient(g, fields[2 * a], x).unwrap_or([0.0; 3]);
                let gm = central_gradient(g, fields[2 * a + 1], x).unwrap_or([0.0; 3]);
                for b in 0..3 {
                    m += ((gp[b] - gm[b]) * inv).powi(2);
                    grad[b] += (gp[b] + gm[b]) / 6.0;
                }
            }
            let r = dist(g.pos(x), yp);
            PairSample { x: g.pos(x), distance: r, mixed: r * m.sqrt(), gradient: norm(grad) }
        })
        .collect();
    MixedGradientReport {
        source: yp,
        h: g.h,
        mixed_sup: pairs.iter().map(|p| p.mixed).fold(0.0, f64::max),
        gradient_sup: pairs.iter().map(|p| p.gradient).fold(0.0, f64::max),
        pairs,
        stats,
    }
}

/// `C^4` cutoff equal to 1 below `r0` and 0 above `r1`, with derivatives in `r`.
fn cutoff(r: f64, r0: f64, r1: f64) -> [f64; 5] {
    if r <= r0 {
        return [1.0, 0.0, 0.0, 0.0, 0.0];
    }
    if r >= r1 {
        return [0.0; 5];
    }
    let w = r1 - r0;
    let t = (r - r0) / w;
    // 1 - t^5 (126 - 420 t + 540 t^2 - 315 t^3 + 70 t^4)
    let c = [0.0, 0.0, 0.0, 0.0, 0.0, 126.0, -420.0, 540.0, -315.0, 70.0];
    let mut out = [0.0; 5];
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (p, &cp) in c.iter().enumerate().skip(k) {
            let fall: f64 = (0..k).map(|q| (p - q) as f64).product();
            acc += cp * fall * t.powi((p - k) as i32);
        }
        *o = -acc / w.powi(k as i32);
    }
    out[0] += 1.0;
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct PuncturedBallReport {
    pub n_cells: usize,
    pub h: f64,
    /// Sup of the central-difference `|grad u|` over `B_{1/4}` minus the origin.
    pub gradient_sup: f64,
    pub gradient_x_axis: Vec3,
    pub gradient_z_axis: Vec3,
    pub angle_deg: f64,
    /// Max of `|f|` on `B_{1/8}`.
    pub rhs_inner_max: f64,
    /// Max deviation from `eta |x|` over the grid.
    pub max_error: f64,
    pub stats: SolveStats,
}

/// Solves with `f = Delta^2 (eta |x|)` on the punctured ball `B_{3/5}` and
/// inspects the gradient of the solution next to the puncture.
pub fn punctured_ball_demo(n_cells: usize, tol: f64) -> Result<PuncturedBallReport> {
    if n_cells < 32 {
        return Err(Error::Invalid("punctured ball demo needs at least 32 cells".into()));
    }
    let n = n_cells + n_cells % 2;
    let domain = Domain::ball(n, 0.75, 0.6, true)?;
    let f = |x: Vec3| {
        let r = norm(x);
        let e = cutoff(r, 0.25, 0.5);
        if r == 0.0 {
            0.0
        } else {
            r * e[4] + 8.0 * e[3] + 12.0 * e[2] / r
        }
    };
    let problem = DirichletProblem::sampled(domain, f, tol)?;
    let sol = solve_dirichlet(&problem)?;
    let g = problem.domain.grid;
    let u = &sol.field.values;
    let mut sup: f64 = 0.0;
    let mut max_error: f64 = 0.0;
    let mut rhs_inner_max: f64 = 0.0;
    for i in 0..g.len() {
        let x = g.pos(i);
        let r = norm(x);
        max_error = max_error.max((u[i] - cutoff(r, 0.25, 0.5)[0] * r).abs());
        if r <= 0.125 {
            rhs_inner_max = rhs_inner_max.max(problem.rhs[i].abs());
        }
        if r > 0.5 * g.h && r <= 0.25 {
            if let Some(gr) = central_gradient(&g, u, i) {
                sup = sup.max(norm(gr));
            }
        }
    }
    let h = g.h;
    let gx = central_gradient(&g, u, g.nearest([h, 0.0, 0.0]).unwrap()).unwrap();
    let gz = central_gradient(&g, u, g.nearest([0.0, 0.0, h]).unwrap()).unwrap();
    let cos = (gx[0] * gz[0] + gx[1] * gz[1] + gx[2] * gz[2]) / (norm(gx) * norm(gz));
    Ok(PuncturedBallReport {
        n_cells: n,
        h,
        gradient_sup: sup,
        gradient_x_axis: gx,
        gradient_z_axis: gz,
        angle_deg: cos.clamp(-1.0, 1.0).acos().to_degrees(),
        rhs_inner_max,
        max_error,
        stats: sol.stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum ObstacleFamily {
    /// An obstacle in every layer.
    Full,
    /// Obstacles in odd layers only.
    Alternate,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct DecayConfig {
    pub family: ObstacleFamily,
    pub n_cells: usize,
    /// Layers are `[R a^-2j, R a^-2(j-1)]`.
    pub a: f64,
    pub r_outer: f64,
    /// Number of layers carrying obstacles.
    pub layers: usize,
    /// Relative half-thickness of each obstacle shell.
    pub thickness: f64,
    /// Obstacles omit the polar caps `|x3|/|x| > cap_cos`.
    pub cap_cos: f64,
    /// Grid cells per axis for the layer capacities.
    pub layer_cells: usize,
    pub tol: f64,
}

impl Default for DecayConfig {
    fn default() -> Self {
        DecayConfig {
            family: ObstacleFamily::Full,
            n_cells: 96,
            a: 1.6f64.sqrt(),
            r_outer: 0.8,
            layers: 5,
            thickness: 0.06,
            cap_cos: 0.6,
            layer_cells: 24,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub config: DecayConfig,
    pub l: Vec<i32>,
    /// `sup (|grad u| + |u|/|x|)` over `|x| <= R a^-2l`.
    pub sup: Vec<f64>,
    /// Capacity sums of the layers `2..=l`.
    pub capacity_sum: Vec<f64>,
    pub slope_vs_capacity: Option<f64>,
    pub r2_vs_capacity: Option<f64>,
    pub slope_vs_layer: f64,
    pub r2_vs_layer: f64,
    pub monotone: bool,
    pub stats: SolveStats,
}

/// Slope, intercept and coefficient of determination of a least-squares line.
pub fn linear_regression(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// Obstacle shells of a decay family, centred in their layers.
pub fn decay_obstacles(cfg: &DecayConfig) -> Option<CompactumSpec> {
    let layout = LayerLayout::decay(cfg.a, cfg.r_outer);
    let parts: Vec<CompactumSpec> = (1..=cfg.layers as i32)
        .filter(|j| match cfg.family {
            ObstacleFamily::Full => true,
            ObstacleFamily::Alternate => j % 2 == 1,
            ObstacleFamily::Empty => false,
        })
        .map(|j| {
            let rho = layout.inner(j) * cfg.a;
            CompactumSpec::Shell { r_inner: rho * (1.0 - cfg.thickness), r_outer: rho * (1.0 + cfg.thickness), cap_cos: cfg.cap_cos }
        })
        .collect();
    (!parts.is_empty()).then_some(CompactumSpec::Union(parts))
}

/// Solves on the punctured cube `[-1, 1]^3` minus the obstacle shells with a
/// source near the cube's inscribed sphere, and relates the local size of the
/// solution near the origin to the capacity sums of the layers.
pub fn decay_experiment(cfg: &DecayConfig) -> Result<DecayReport> {
    if cfg.layers < 3 || cfg.a <= 1.0 || !(cfg.r_outer > 0.0 && cfg.r_outer < 0.85) {
        return Err(Error::Invalid("decay experiment needs at least 3 layers, a > 1 and 0 < R < 0.85".into()));
    }
    let obstacles = decay_obstacles(cfg);
    let domain = Domain::full_box(cfg.n_cells, 1.0)?.without(obstacles.as_ref(), true)?.largest_component();
    let f = |x: Vec3| {
        let r = norm(x);
        let t = (r - 0.9) / 0.05;
        if t.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - t * t).powi(3) * (1.0 + 0.5 * x[0] / r + 0.3 * x[1] * x[2] / (r * r))
        }
    };
    let problem = DirichletProblem::sampled(domain, f, cfg.tol)?;
    let sol = solve_dirichlet(&problem)?;
    let g = problem.domain.grid;
    let u = &sol.field.values;
    let layout = LayerLayout::decay(cfg.a, cfg.r_outer);
    let ls: Vec<i32> = (2..=cfg.layers as i32).collect();
    let mut sup = vec![0.0f64; ls.len()];
    for i in 0..g.len() {
        let x = g.pos(i);
        let r = norm(x);
        if r < 0.5 * g.h || !problem.domain.is_free(i) {
            continue;
        }
        let Some(gr) = central_gradient(&g, u, i) else { continue };
        let v = norm(gr) + u[i].abs() / r;
        for (k, &l) in ls.iter().enumerate() {
            if r <= layout.inner(l) {
                sup[k] = sup[k].max(v);
            }
        }
    }
    let capacity_sum = match &obstacles {
        Some(k) => {
            let series = layer_capacities(k, layout, 1, cfg.layers as i32, LayerSolver { n_cells: cfg.layer_cells, tol: cfg.tol })?;
            ls.iter().map(|&l| decay_factor(&series, l)).collect::<Result<Vec<_>>>()?
        }
        None => vec![0.0; ls.len()],
    };
    let logs: Vec<f64> = sup.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let lf: Vec<f64> = ls.iter().map(|&l| l as f64).collect();
    let (slope_l, _, r2_l) = linear_regression(&lf, &logs);
    let (slope_c, r2_c) = if capacity_sum.iter().any(|&c| c > 0.0) {
        let (s, _, r2) = linear_regression(&capacity_sum, &logs);
        (Some(s), Some(r2))
    } else {
        (None, None)
    };
    Ok(DecayReport {
        config: *cfg,
        l: ls,
        monotone: sup.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
        sup,
        capacity_sum,
        slope_vs_capacity: slope_c,
        r2_vs_capacity: r2_c,
        slope_vs_layer: slope_l,
        r2_vs_layer: r2_l,
        stats: sol.stats,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RieszSample {
    pub x: Vec3,
    /// `|grad u(x)|`.
    pub lhs: f64,
    /// `int |f(y)|/|x - y| dy + int |h(y)| dy`.
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RieszReport {
    pub samples: Vec<RieszSample>,
    pub sup_ratio: f64,
    pub stats: SolveStats,
}

/// Solves `Delta^2 u = div f + h` and compares `|grad u|` with the potential
/// bound at the sample points.
pub fn riesz_estimate_check(domain: &Domain, f: impl Fn(Vec3) -> Vec3, h_src: impl Fn(Vec3) -> f64, points: &[Vec3], tol: f64) -> Result<RieszReport> {
    let g = domain.grid;
    let fv: Vec<Vec3> = (0..g.len()).map(|i| if domain.is_free(i) { f(g.pos(i)) } else { [0.0; 3] }).collect();
    let hv: Vec<f64> = (0..g.len()).map(|i| if domain.is_free(i) { h_src(g.pos(i)) } else { 0.0 }).collect();
    let s = [1, g.dims[0], g.dims[0] * g.dims[1]];
    let rhs: Vec<f64> = (0..g.len())
        .map(|i| {
            if !domain.is_free(i) {
                return 0.0;
            }
            let div: f64 = (0..3).map(|a| (fv[i + s[a]][a] - fv[i - s[a]][a]) / (2.0 * g.h)).sum();
            div + hv[i]
        })
        .collect();
    let problem = DirichletProblem::new(domain.clone(), rhs, tol)?;
    let sol = solve_dirichlet(&problem)?;
    let h3 = g.h.powi(3);
    let mass_h: f64 = hv.iter().map(|v| v.abs()).sum::<f64>() * h3;
    let samples: Vec<RieszSample> = points
        .iter()
        .filter_map(|&x| g.nearest(x))
        .filter_map(|xi| {
            let xp = g.pos(xi);
            let gr = central_gradient(&g, &sol.field.values, xi)?;
            let pot: f64 = (0..g.len())
                .filter(|&j| fv[j] != [0.0; 3])
                .map(|j| norm(fv[j]) / dist(xp, g.pos(j)).max(0.5 * g.h))
                .sum::<f64>()
                * h3;
            Some(RieszSample { x: xp, lhs: norm(gr), rhs: pot + mass_h })
        })
        .collect();
    let sup_ratio = samples.iter().filter(|s| s.rhs > 0.0).map(|s| s.lhs / s.rhs).fold(0.0, f64::max);
    Ok(RieszReport { samples, sup_ratio, stats: sol.stats })
}

/// Writes dims, spacing and origin as little-endian 64-bit values followed by
/// the node values in x-fastest order.
pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    let g = field.voxel()?;
    let mut buf = Vec::with_capacity(56 + 8 * field.values.len());
    for d in g.dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    buf.extend_from_slice(&g.h.to_le_bytes());
    for o in g.origin {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    for v in &field.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 56 {
        return Err(Error::Invalid("field file shorter than its header".into()));
    }
    let word = |k: usize| -> [u8; 8] { buf[8 * k..8 * k + 8].try_into().unwrap() };
    let dims = [0, 1, 2].map(|k| u64::from_le_bytes(word(k)) as usize);
    let h = f64::from_le_bytes(word(3));
    let origin = [4, 5, 6].map(|k| f64::from_le_bytes(word(k)));
    let grid = VoxelGrid::new(origin, h, dims)?;
    if buf.len() != 56 + 8 * grid.len() {
        return Err(Error::Invalid("field file length does not match its header".into()));
    }
    let values = (0..grid.len()).map(|k| f64::from_le_bytes(word(7 + k))).collect();
    Ok(ScalarField { grid: Grid::Voxel(grid), values })
}

/// Deterministic random interior nodes of a domain.
pub fn random_free_nodes(domain: &Domain, count: usize, seed: u64) -> Vec<usize> {
    let free = domain.free_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| free[rng.gen_range(0..free.len())]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::LinearOperator;

    fn bump(x: Vec3, c: Vec3, w: f64) -> f64 {
        let t = dist(x, c) / w;
        if t >= 1.0 {
            0.0
        } else {
            (1.0 - t * t).powi(4)
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let d = Domain::ball(16, 1.0, 0.8, false).unwrap();
        let p = DirichletProblem::sampled(d, |_| 0.0, 1e-10).unwrap();
        let s = solve_dirichlet(&p).unwrap();
        assert_eq!(s.field.max_abs(), 0.0);
    }

    #[test]
    fn manufactured_solution_and_energy() {
        let d = Domain::full_box(20, 1.0).unwrap();
        let g = d.grid;
        let free = d.free_nodes();
        let op = ClampedBiharmonic::new(g, free.clone());
        let ustar: Vec<f64> = (0..g.len()).map(|i| if d.is_free(i) { bump(g.pos(i), [0.1, 0.0, -0.1], 0.7) } else { 0.0 }).collect();
        let x: Vec<f64> = free.iter().map(|&i| ustar[i]).collect();
        let mut y = vec![0.0; x.len()];
        op.apply(&x, &mut y);
        let h3 = g.h.powi(3);
        let mut rhs = vec![0.0; g.len()];
        for (p, &i) in free.iter().enumerate() {
            rhs[i] = y[p] / h3;
        }
        let prob = DirichletProblem::new(d, rhs, 1e-12).unwrap();
        let s = solve_dirichlet(&prob).unwrap();
        let err = s.field.values.iter().zip(&ustar).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        assert!((s.energy - s.work).abs() < 1e-8 * s.energy);
    }

    #[test]
    fn radial_symmetry_is_preserved() {
        let d = Domain::ball(20, 1.0, 0.8, false).unwrap();
        let p = DirichletProblem::sampled(d, |x| bump(x, [0.0; 3], 0.5), 1e-11).unwrap();
        let s = solve_dirichlet(&p).unwrap();
        let g = p.domain.grid;
        let u = &s.field.values;
        let m = s.field.max_abs();
        for i in 0..g.len() {
            let [a, b, c] = g.coords(i);
            let j = g.index(b, c, a);
            let k = g.index(g.dims[0] - 1 - a, b, c);
            assert!((u[i] - u[j]).abs() < 1e-8 * m && (u[i] - u[k]).abs() < 1e-8 * m);
        }
    }

    #[test]
    fn green_symmetry_and_errors() {
        let d = Domain::blob(16, 1.0, 0.75, 0.2, 3).unwrap();
        let nodes = random_free_nodes(&d, 6, 11);
        let sols: Vec<GreenSample> = nodes.iter().map(|&y| green_sample(&d, y, 1e-10).unwrap()).collect();
        for a in 0..nodes.len() {
            for b in 0..a {
                let gab = sols[a].field.values[nodes[b]];
                let gba = sols[b].field.values[nodes[a]];
                let scale = gab.abs().max(gba.abs()).max(1e-3);
                assert!((gab - gba).abs() < 1e-8 * scale.max(1.0), "{gab} {gba}");
            }
            assert!(sols[a].field.values.iter().all(|v| v.is_finite()));
        }
        assert!(green_sample(&d, 0, 1e-8).is_err());
    }

    #[test]
    fn cutoff_derivatives() {
        for r in [0.3, 0.37, 0.45] {
            let e = cutoff(r, 0.25, 0.5);
            let eps = 1e-5;
            for k in 0..4 {
                let fd = (cutoff(r + eps, 0.25, 0.5)[k] - cutoff(r - eps, 0.25, 0.5)[k]) / (2.0 * eps);
                assert!((fd - e[k + 1]).abs() < 1e-4 * (1.0 + e[k + 1].abs()), "k={k} r={r}: {fd} vs {}", e[k + 1]);
            }
        }
        assert_eq!(cutoff(0.1, 0.25, 0.5), [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(cutoff(0.6, 0.25, 0.5), [0.0; 5]);
    }

    #[test]
    fn field_file_round_trip() {
        let g = VoxelGrid::new([0.5, -1.0, 2.0], 0.25, [3, 4, 5]).unwrap();
        let f = ScalarField { grid: Grid::Voxel(g), values: (0..g.len()).map(|i| (i as f64).sin()).collect() };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.bin");
        write_field(&p, &f).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 56 + 8 * 60);
        let back = read_field(&p).unwrap();
        assert_eq!(back.values, f.values);
        assert_eq!(back.voxel().unwrap(), &g);
    }

    #[test]
    fn regression_of_a_line() {
        let (s, i, r2) = linear_regression(&[1.0, 2.0, 3.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-12 && (i + 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
