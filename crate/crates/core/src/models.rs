//! Model geometries with closed-form or semi-closed-form answers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::capacity::{cap_gram, cap_inf, cap_p, CapacityProblem, GramMatrix};
use crate::error::{Error, Result};
use crate::linalg::{mat_mul_t, sym_eigen};
use crate::pispace::PiProfile;
use crate::sphgrid::{norm, CompactumSpec, Vec3, VoxelGrid};
use crate::wiener::{necessity_sum, sufficiency_sum, verdict, LayerLayout, LayerSeries, RegularityVerdict, TailModel, VerdictKind};

/// Opening profile `h(r)` of a cusp around the positive `x3` axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CuspShape {
    /// `h = theta0`.
    Constant { theta0: f64 },
    /// `h = c r^lambda`.
    Power { c: f64, lambda: f64 },
    /// `h = c (log 1/r)^(-p)`, meaningful for `r < 1`.
    InverseLog { c: f64, p: f64 },
    /// Piecewise log-linear through `(r, h)` samples, constant outside.
    Tabulated { r: Vec<f64>, h: Vec<f64> },
}

impl CuspShape {
    pub fn eval(&self, r: f64) -> f64 {
        let v = match self {
            CuspShape::Constant { theta0 } => *theta0,
            CuspShape::Power { c, lambda } => c * r.powf(*lambda),
            CuspShape::InverseLog { c, p } => c * (1.0 / r).ln().powf(-p),
            CuspShape::Tabulated { r: rs, h } => {
                let n = rs.len();
                if r <= rs[0] {
                    h[0]
                } else if r >= rs[n - 1] {
                    h[n - 1]
                } else {
                    let i = rs.partition_point(|&x| x <= r) - 1;
                    let w = (r / rs[i]).ln() / (rs[i + 1] / rs[i]).ln();
                    h[i] + w * (h[i + 1] - h[i])
                }
            }
        };
        v.min(PI)
    }

    /// Radius below which the profile is defined.
    pub fn outer_radius(&self) -> f64 {
        match self {
            CuspShape::InverseLog { .. } => 1.0,
            _ => f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            CuspShape::Constant { theta0 } => *theta0 > 0.0 && *theta0 <= PI,
            CuspShape::Power { c, lambda } => *c > 0.0 && *lambda >= 0.0,
            CuspShape::InverseLog { c, p } => *c > 0.0 && *p >= 0.0,
            CuspShape::Tabulated { r, h } => {
                r.len() >= 2
                    && r.len() == h.len()
                    && r[0] > 0.0
                    && r.windows(2).all(|w| w[1] > w[0])
                    && h.windows(2).all(|w| w[1] >= w[0])
                    && h[0] > 0.0
                    && h[h.len() - 1] <= PI
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("cusp profile {self:?} is not a positive nondecreasing opening")))
        }
    }
}

/// Frozen constants of the two-sided layer bound `C s^-1 h(s)^2`.
pub const CUSP_LOWER: f64 = 3.0;
pub const CUSP_UPPER: f64 = 16.0;

/// `(lower, upper)` bounds on the capacity of the cusp layer `[s, a s]`.
pub fn cusp_layer_bounds(shape: &CuspShape, s: f64, a: f64) -> Result<(f64, f64)> {
    shape.validate()?;
    if !(s > 0.0) || a * s >= shape.outer_radius() || a <= 1.0 {
        return Err(Error::Domain(format!("layer [{s}, {}] outside the profile domain", a * s)));
    }
    let v = shape.eval(s).powi(2) / s;
    Ok((CUSP_LOWER * v, CUSP_UPPER * v))
}

/// Discretisation of a cusp layer capacity on a cone around the cusp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspSolver {
    /// Aperture of the computational cone over the largest opening.
    pub aperture_factor: f64,
    /// Grid cells across the opening radius at the inner end.
    pub cells: f64,
    pub tol: f64,
}

impl Default for CuspSolver {
    fn default() -> Self {
        CuspSolver { aperture_factor: 2.0, cells: 2.0, tol: 1e-8 }
    }
}

/// `inf_P Cap_P` of the cusp inside `[s, a s]`, on `{theta < k h(a s)}` within
/// `s/2 < |x| < 2 a s`.
pub fn cusp_layer_capacity(shape: &CuspShape, s: f64, a: f64, solver: &CuspSolver) -> Result<f64> {
    Ok(cap_inf(&cusp_layer_gram(shape, s, a, solver)?)?.0)
}

/// Gram matrix of the cusp layer behind [`cusp_layer_capacity`].
pub fn cusp_layer_gram(shape: &CuspShape, s: f64, a: f64, solver: &CuspSolver) -> Result<GramMatrix> {
    cusp_layer_bounds(shape, s, a)?;
    let theta_dom = (solver.aperture_factor * shape.eval(a * s)).min(PI);
    let r_out = 2.0 * a * s;
    let h = shape.eval(s) * s / solver.cells;
    let half = if theta_dom >= PI / 2.0 { r_out } else { r_out * theta_dom.sin() };
    let z_lo = if theta_dom >= PI / 2.0 { -r_out } else { 0.5 * s * theta_dom.cos() };
    let pad = 3.0 * h;
    let nxy = ((2.0 * (half + pad)) / h).ceil() as usize + 1;
    let nz = ((r_out - z_lo + 2.0 * pad) / h).ceil() as usize + 1;
    let origin = [-((nxy - 1) as f64) * h / 2.0, -((nxy - 1) as f64) * h / 2.0, z_lo - pad];
    let grid = VoxelGrid::new(origin, h, [nxy, nxy, nz])?;
    let domain = (0..grid.len())
        .map(|i| {
            let x = grid.pos(i);
            let r = norm(x);
            r > 0.5 * s && r < r_out && (x[2] / r).clamp(-1.0, 1.0).acos() < theta_dom
        })
        .collect();
    let k = CompactumSpec::CuspLayer { shape: shape.clone(), s_inner: s, s_outer: a * s };
    let problem = CapacityProblem::with_domain(k, grid, domain, solver.tol)?;
    Ok(cap_gram(&problem)?.gram)
}

/// Integral test for `int_0^c s^-1 h(s)^2 ds`: analytic for the tagged
/// families, numeric trend otherwise. Partial sums over dyadic layers down to
/// `1e-12` are attached as evidence.
pub fn cusp_criterion(shape: &CuspShape) -> Result<RegularityVerdict> {
    shape.validate()?;
    let sums = cusp_quadrature(shape, 1e-12);
    let analytic = match shape {
        CuspShape::Constant { .. } => Some(true),
        CuspShape::Power { lambda, .. } => Some(*lambda == 0.0),
        CuspShape::InverseLog { p, .. } => Some(*p <= 0.5),
        CuspShape::Tabulated { .. } => None,
    };
    match analytic {
        Some(div) => Ok(RegularityVerdict {
            kind: if div { VerdictKind::AnalyticDivergent } else { VerdictKind::AnalyticConvergent },
            model: None,
            residuals: [0.0; 3],
            slope: 0.0,
            partial_sums: sums,
            source: format!("integral test for {shape:?}"),
        }),
        None => {
            let mut v = verdict(&sums)?;
            v.source = "dyadic quadrature of the opening profile".into();
            Ok(v)
        }
    }
}

/// Partial sums of `int s^-1 h(s)^2 ds` over dyadic layers `[2^-j-1, 2^-j]`
/// starting below `min(1/2, outer radius)` and stopping at `floor`.
pub fn cusp_quadrature(shape: &CuspShape, floor: f64) -> Vec<f64> {
    let top = 0.5f64.min(shape.outer_radius() / 2.0);
    let mut sums = Vec::new();
    let mut acc = 0.0;
    let mut hi = top;
    while hi / 2.0 >= floor {
        let (lo, hi_l) = ((hi / 2.0).ln(), hi.ln());
        // Gauss-Legendre in log s
        const X: [f64; 4] = [-0.861136311594053, -0.339981043584856, 0.339981043584856, 0.861136311594053];
        const W: [f64; 4] = [0.347854845137454, 0.652145154862546, 0.652145154862546, 0.347854845137454];
        let (m, d) = (0.5 * (lo + hi_l), 0.5 * (hi_l - lo));
        acc += (0..4).map(|i| W[i] * shape.eval((m + d * X[i]).exp()).powi(2)).sum::<f64>() * d;
        sums.push(acc);
        hi /= 2.0;
    }
    sums
}

/// True when the verdict's series trend agrees with a divergent or convergent label.
pub fn trend_is_divergent(v: &RegularityVerdict) -> Option<bool> {
    match v.kind {
        VerdictKind::AnalyticDivergent => Some(true),
        VerdictKind::AnalyticConvergent => Some(false),
        VerdictKind::NumericTrend => v.model.map(|m| m != TailModel::Bounded),
    }
}

/// Profile `(b0 + b.x/|x|)/|b|` vanishing on the cone `b0|x| + b.x = 0`.
pub fn cone_profile(b: [f64; 4]) -> Result<PiProfile> {
    if b[1..].iter().all(|&v| v == 0.0) {
        return Err(Error::Invalid("cone needs a nonzero direction part".into()));
    }
    PiProfile::new(b)?.normalized()
}

/// `Cap_P` of a finite set on the cone `b0|x| + b.x = 0`, for each grid
/// resolution in `cells`, with `P` the cone profile (or `profile` when given).
/// Each solve runs on a box around the points padded by a quarter of their
/// smallest radius.
pub fn cone_null_capacity(b: [f64; 4], points: &[Vec3], cells: &[usize], profile: Option<PiProfile>, tol: f64) -> Result<Vec<f64>> {
    let p = match profile {
        Some(p) => p,
        None => cone_profile(b)?,
    };
    let bn = norm([b[1], b[2], b[3]]);
    for x in points {
        let r = norm(*x);
        if r == 0.0 || (b[0] * r + b[1] * x[0] + b[2] * x[1] + b[3] * x[2]).abs() > 1e-9 * bn * r {
            return Err(Error::Domain(format!("point {x:?} is not on the cone")));
        }
    }
    if points.is_empty() {
        return Ok(vec![0.0; cells.len()]);
    }
    let rmin = points.iter().map(|x| norm(*x)).fold(f64::INFINITY, f64::min);
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for x in points {
        for d in 0..3 {
            lo[d] = lo[d].min(x[d]);
            hi[d] = hi[d].max(x[d]);
        }
    }
    let center: Vec3 = std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]));
    let half = (0..3).map(|d| 0.5 * (hi[d] - lo[d])).fold(0.0, f64::max) + 0.25 * rmin;
    let k = CompactumSpec::PointSet { points: points.iter().map(|&x| (x, 0.0)).collect() };
    cells
        .iter()
        .map(|&n| {
            let n = n + n % 2;
            let h = 2.0 * half / n as f64;
            let grid = VoxelGrid::new(std::array::from_fn(|d| center[d] - half), h, [n + 1; 3])?;
            let domain = (0..grid.len()).map(|i| norm(grid.pos(i)) > 0.5 * h).collect();
            let problem = CapacityProblem::with_domain(k.clone(), grid, domain, tol)?;
            Ok(cap_p(&problem, &p)?.value)
        })
        .collect()
}

/// Points `(1, omega)` evaluations of the basis profiles at four directions
/// `(phi, theta) = (0, alpha), (pi/2, alpha), (pi, alpha), (3pi/2, beta)`, one
/// point per column.
pub fn four_point_matrix(alpha: f64, beta: f64) -> Result<[[f64; 4]; 4]> {
    check_four_point(alpha, beta)?;
    let (sa, ca, sb, cb) = (alpha.sin(), alpha.cos(), beta.sin(), beta.cos());
    Ok([[1.0, 1.0, 1.0, 1.0], [sa, 0.0, -sa, 0.0], [0.0, sa, 0.0, -sb], [ca, ca, ca, cb]])
}

fn check_four_point(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < PI / 2.0) || !((beta - alpha).abs() < alpha / 2.0) {
        return Err(Error::Invalid(format!("need 0 < alpha < pi/2 and |beta - alpha| < alpha/2, got alpha={alpha}, beta={beta}")));
    }
    Ok(())
}

/// Smallest eigenvalue of `M M^T` with its eigenvector.
pub fn four_point_min_eig(alpha: f64, beta: f64) -> Result<(f64, [f64; 4])> {
    let m = four_point_matrix(alpha, beta)?;
    let (vals, vecs) = sym_eigen(&mat_mul_t(&m));
    Ok((vals[0], std::array::from_fn(|r| vecs[r][0])))
}

/// `max |alpha - beta| / |cos alpha - cos beta|` over the admissible `beta`,
/// sampled densely.
pub fn mean_value_constant(alpha: f64) -> Result<f64> {
    check_four_point(alpha, alpha)?;
    let n = 20_000;
    let mut best = 1.0 / alpha.sin();
    for i in 0..=n {
        let beta = alpha / 2.0 + alpha * i as f64 / n as f64;
        let d = (alpha.cos() - beta.cos()).abs();
        if d > 0.0 {
            best = best.max((alpha - beta).abs() / d);
        }
    }
    Ok(best)
}

/// `(lambda_min(M M^T), sin^2(alpha) |alpha - beta|^2 / (100 C0^2))`.
pub fn four_point_lower_bound_check(alpha: f64, beta: f64) -> Result<(f64, f64)> {
    let (lam, _) = four_point_min_eig(alpha, beta)?;
    let c0 = mean_value_constant(alpha)?;
    let bound = alpha.sin().powi(2) * (alpha - beta).powi(2) / (100.0 * c0 * c0);
    Ok((lam.max(0.0), bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourPointConfig {
    pub alpha: f64,
    /// One angle per layer `k = 1, 2, ...`.
    pub betas: Vec<f64>,
    pub a: f64,
}

impl FourPointConfig {
    pub fn new(alpha: f64, betas: Vec<f64>, a: f64) -> Result<Self> {
        if a < 4.0 {
            return Err(Error::Invalid("four-point layers need a >= 4".into()));
        }
        for &b in &betas {
            check_four_point(alpha, b)?;
        }
        Ok(FourPointConfig { alpha, betas, a })
    }

    /// Points of layer `k` (1-based): three at radius `a^-k` and one at `a^(1/2-k)`.
    pub fn layer_points(&self, k: usize) -> [Vec3; 4] {
        let r = self.a.powi(-(k as i32));
        let r4 = r * self.a.sqrt();
        let (sa, ca) = (self.alpha.sin(), self.alpha.cos());
        let b = self.betas[k - 1];
        [[r * sa, 0.0, r * ca], [0.0, r * sa, r * ca], [-r * sa, 0.0, r * ca], [0.0, -r4 * b.sin(), r4 * b.cos()]]
    }

    pub fn points(&self) -> Vec<Vec3> {
        (1..=self.betas.len()).flat_map(|k| self.layer_points(k)).collect()
    }
}

/// Gram matrix `s^-1 sum_i e(x_i) e(x_i)^T` of point constraints at scale `s`,
/// with `e(x) = (1, x/|x|)`. It bounds the layer capacity from below up to a
/// constant and vanishes in the directions of profiles null on every point.
pub fn point_constraint_gram(points: &[Vec3], s: f64) -> Result<GramMatrix> {
    let mut g = [[0.0; 4]; 4];
    for x in points {
        let r = norm(*x);
        if r == 0.0 {
            return Err(Error::Domain("point at the origin".into()));
        }
        let e = [1.0, x[0] / r, x[1] / r, x[2] / r];
        for i in 0..4 {
            for j in 0..4 {
                g[i][j] += e[i] * e[j] / s;
            }
        }
    }
    GramMatrix::new(g)
}

/// Layer series of the point-constraint model over closed layers
/// `[s_j, width s_j]`, `s_j = step^-j`, `j = 1..=j_max`.
pub fn point_layer_series(points: &[Vec3], layout: LayerLayout, j_max: i32) -> Result<LayerSeries> {
    let grams = (1..=j_max)
        .map(|j| {
            let s = layout.inner(j);
            let tol = 1e-12 * s;
            let inside: Vec<Vec3> = points
                .iter()
                .filter(|x| {
                    let r = norm(**x);
                    r >= s - tol && r <= s * layout.width + tol
                })
                .copied()
                .collect();
            if inside.is_empty() {
                Ok(None)
            } else {
                point_constraint_gram(&inside, s).map(Some)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    LayerSeries::from_grams(layout, 1, grams)
}

#[derive(Debug, Clone, Serialize)]
pub struct InstabilityReport {
    pub alpha: f64,
    pub epsilon: f64,
    pub k_max: usize,
    /// Necessity sums of the on-cone configuration.
    pub on_cone: Vec<f64>,
    /// Sufficiency sums of the perturbed configuration.
    pub perturbed: Vec<f64>,
    /// `sum_{k<=l} (beta_k - alpha)^2`.
    pub lower_bound: Vec<f64>,
    /// Per-layer `weight * gamma` after re-binning the on-cone set at ratio `a^(1/5)`.
    pub rebinned: Vec<f64>,
    pub on_cone_verdict: RegularityVerdict,
    pub perturbed_verdict: RegularityVerdict,
}

/// On-cone versus tilted four-point configurations, and the on-cone set
/// re-binned at a finer layer ratio.
pub fn instability_demo(alpha: f64, epsilon: f64, k_max: usize, a: f64) -> Result<InstabilityReport> {
    if !(epsilon >= 0.0) || k_max == 0 {
        return Err(Error::Invalid("need epsilon >= 0 and k_max >= 1".into()));
    }
    let on = FourPointConfig::new(alpha, vec![alpha; k_max], a)?;
    let tilted = FourPointConfig::new(alpha, vec![alpha + epsilon; k_max], a)?;
    let nec_layout = LayerLayout { scale: 1.0, step: a, width: a };
    let on_series = point_layer_series(&on.points(), nec_layout, k_max as i32)?;
    let on_cone: Vec<f64> = necessity_sum(&on_series).iter().map(|t| t.value.max(0.0)).collect();
    let tilted_series = point_layer_series(&tilted.points(), nec_layout, k_max as i32)?;
    let perturbed = sufficiency_sum(&tilted_series);
    let mut acc = 0.0;
    let lower_bound = tilted
        .betas
        .iter()
        .map(|b| {
            acc += (b - alpha).powi(2);
            acc
        })
        .collect();
    let fine = LayerLayout { scale: 1.0, step: a.powf(0.2), width: a.powf(0.2) };
    let rebinned = point_layer_series(&on.points(), fine, 5 * k_max as i32)?;
    let rebinned_terms = rebinned.terms.iter().map(|t| t.weight * t.gamma).collect();
    Ok(InstabilityReport {
        alpha,
        epsilon,
        k_max,
        on_cone_verdict: verdict(&on_cone)?,
        perturbed_verdict: verdict(&perturbed)?,
        on_cone,
        perturbed,
        lower_bound,
        rebinned: rebinned_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_point_examples() {
        let a = PI / 4.0;
        let (l, _) = four_point_min_eig(a, a).unwrap();
        assert!(l.abs() < 1e-12);
        let m = four_point_matrix(a, PI / 3.0).unwrap();
        let pts = [(0.0, a), (PI / 2.0, a), (PI, a), (1.5 * PI, PI / 3.0)];
        for (c, (phi, th)) in pts.iter().enumerate() {
            let w = [th.sin() * phi.cos(), th.sin() * phi.sin(), th.cos()];
            let col = [1.0, w[0], w[1], w[2]];
            for r in 0..4 {
                assert!((m[r][c] - col[r]).abs() < 1e-15);
            }
        }
        assert!(four_point_min_eig(a, PI / 3.0).unwrap().0 > 0.0);
        assert!(four_point_matrix(a, a + a / 2.0).is_err());
        assert!(four_point_matrix(1.7, 1.7).is_err());
    }

    #[test]
    fn determinant_closed_form() {
        for (al, be) in [(0.5, 0.6), (PI / 4.0, PI / 3.0), (1.2, 1.0)] {
            let mm = mat_mul_t(&four_point_matrix(al, be).unwrap());
            let (vals, _) = sym_eigen(&mm);
            let det: f64 = vals.iter().product();
            let want = 4.0 * f64::sin(al).powi(4) * (f64::cos(al) - f64::cos(be)).powi(2);
            assert!((det - want).abs() < 1e-10, "{det} {want}");
        }
    }

    #[test]
    fn lower_bound_sweep() {
        let al = PI / 4.0;
        let (l, b) = four_point_lower_bound_check(al, al).unwrap();
        assert!(l.abs() < 1e-12 && b == 0.0);
        let (l, b) = four_point_lower_bound_check(al, al + 0.1).unwrap();
        assert!(l >= b);
        for i in 1..50 {
            let be = al / 2.0 + al * i as f64 / 50.0;
            let (l, b) = four_point_lower_bound_check(al, be).unwrap();
            assert!(l >= b, "beta={be}: {l} < {b}");
        }
    }

    #[test]
    fn cusp_verdicts() {
        let half = CuspShape::Power { c: 1.0, lambda: 0.5 };
        assert_eq!(cusp_criterion(&half).unwrap().kind, VerdictKind::AnalyticConvergent);
        let il = CuspShape::InverseLog { c: 1.0, p: 0.5 };
        assert_eq!(cusp_criterion(&il).unwrap().kind, VerdictKind::AnalyticDivergent);
        let c = CuspShape::Constant { theta0: 0.2 };
        assert_eq!(cusp_criterion(&c).unwrap().kind, VerdictKind::AnalyticDivergent);
        assert!(CuspShape::Tabulated { r: vec![0.1, 0.2], h: vec![0.3, 0.2] }.validate().is_err());
        assert!(cusp_layer_bounds(&CuspShape::Power { c: 1.0, lambda: -1.0 }, 0.1, 2.0).is_err());
    }

    #[test]
    fn quadrature_trends_agree() {
        for shape in [
            CuspShape::Power { c: 1.0, lambda: 0.5 },
            CuspShape::InverseLog { c: 1.0, p: 0.5 },
            CuspShape::Constant { theta0: 0.2 },
        ] {
            let analytic = trend_is_divergent(&cusp_criterion(&shape).unwrap()).unwrap();
            let numeric = trend_is_divergent(&verdict(&cusp_quadrature(&shape, 1e-12)).unwrap()).unwrap();
            assert_eq!(analytic, numeric, "{shape:?}");
        }
        let il = verdict(&cusp_quadrature(&CuspShape::InverseLog { c: 1.0, p: 0.5 }, 1e-12)).unwrap();
        assert_eq!(il.model, Some(TailModel::Logarithmic));
    }

    #[test]
    fn instability_and_rebinning() {
        let rep = instability_demo(PI / 4.0, 0.05, 40, 4.0).unwrap();
        assert!(rep.on_cone.iter().all(|v| v.abs() < 1e-12));
        assert!((rep.lower_bound[39] - 0.1).abs() < 1e-12);
        assert_eq!(rep.perturbed_verdict.model, Some(TailModel::Linear));
        assert!(rep.rebinned.iter().all(|g| g.abs() < 1e-12));
        let steps: Vec<f64> = rep.perturbed.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|d| (d / steps[0] - 1.0).abs() < 1e-9));
    }
}
