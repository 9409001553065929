//! Verification suites behind `bicap verify`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::biharm::{decay_experiment, mixed_gradient_sup, punctured_ball_demo, DecayConfig, Domain, ObstacleFamily, FREE_SPACE_MIXED};
use crate::capacity::{cap_gram, cap_inf, cap_p, harmonic_cap, CapacityProblem};
use crate::error::{Error, Result};
use crate::fd::HarmonicBoundary;
use crate::forms::{b_form, b_tilde_form, delta_energy, log_field, main_identity_check, psi_form, spectral_gap_ratio, sphere_trace, WeightProfile};
use crate::kernel;
use crate::models::{
    cone_null_capacity, cusp_criterion, cusp_layer_bounds, cusp_layer_capacity, cusp_quadrature, four_point_lower_bound_check, four_point_min_eig,
    instability_demo, trend_is_divergent, CuspShape, CuspSolver,
};
use crate::pispace::PiProfile;
use crate::sphgrid::{norm, AnnulusGrid, CompactumSpec, ScalarField, SphereGrid, Vec3};
use crate::wiener::{verdict, TailModel};

pub const SUITES: [&str; 9] = ["kernel", "identity", "capacity", "spectral", "desk", "demo", "cusp", "fourpoint", "decay"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Reference resolution; `None` runs every suite at its full size, and
    /// `Some(n)` scales all resolutions by `n / 64`.
    pub grid: Option<usize>,
    pub seed: u64,
    pub tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { grid: None, seed: 0, tol: 1e-8 }
    }
}

impl VerifyOptions {
    fn n(&self, full: usize, min: usize) -> usize {
        let n = match self.grid {
            None => full,
            Some(g) => (full * g + 32) / 64,
        };
        let n = n.max(min);
        n + n % 2
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: impl Into<String>, value: f64, bound: impl Into<String>, pass: bool) {
        self.0.push(Check { name: name.into(), value, bound: bound.into(), pass: pass && !value.is_nan() });
    }

    fn below(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.add(name, value, format!("<= {limit:e}"), value <= limit);
    }

    fn above(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.add(name, value, format!(">= {limit:e}"), value >= limit);
    }

    fn within(&mut self, name: impl Into<String>, value: f64, lo: f64, hi: f64) {
        self.add(name, value, format!("in [{lo}, {hi}]"), value >= lo && value <= hi);
    }

    fn truth(&mut self, name: impl Into<String>, ok: bool) {
        self.add(name, if ok { 1.0 } else { 0.0 }, "== 1", ok);
    }
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut c = Checks::default();
    let out = match name {
        "kernel" => kernel_suite(&mut c),
        "identity" => identity_suite(&mut c, opts),
        "capacity" => capacity_suite(&mut c, opts),
        "spectral" => spectral_suite(&mut c, opts),
        "desk" => desk_suite(&mut c, opts),
        "demo" => demo_suite(&mut c, opts),
        "cusp" => cusp_suite(&mut c, opts),
        "fourpoint" => fourpoint_suite(&mut c, opts),
        "decay" => decay_suite(&mut c, opts),
        other => return Err(Error::Invalid(format!("unknown suite `{other}`; expected all or one of {}", SUITES.join(", ")))),
    };
    if let Err(e) = out {
        c.add(format!("completed: {e}"), f64::NAN, "no error", false);
    }
    let passed = !c.0.is_empty() && c.0.iter().all(|k| k.pass);
    Ok(SuiteReport { suite: name.to_string(), passed, checks: c.0 })
}

fn kernel_suite(c: &mut Checks) -> Result<()> {
    let n = 10_000;
    let ts: Vec<f64> = (0..n).map(|k| -50.0 + 100.0 * (k as f64 + 0.5) / n as f64).collect();
    let mut res: f64 = 0.0;
    for &t in &ts {
        res = res.max(kernel::ode_residual(t)?.abs());
    }
    c.below("ode_residual_max", res, 1e-12);
    c.below("g_at_zero_error", (kernel::g(0.0) - 1.0 / 3.0).abs(), 0.0);
    c.below("w2_at_zero_error", (kernel::weight_w2(0.0) - 7.0 / 6.0).abs(), 0.0);
    c.below("third_derivative_jump_error", (kernel::third_derivative_jump() - 1.0).abs(), 1e-9);
    let grid: Vec<f64> = (0..=n).map(|k| -50.0 + 100.0 * k as f64 / n as f64).collect();
    c.add("w1_min", grid.iter().map(|&t| kernel::weight_w1(t)).fold(f64::INFINITY, f64::min), "> 0", grid.iter().all(|&t| kernel::weight_w1(t) > 0.0));
    c.add("w2_min", grid.iter().map(|&t| kernel::weight_w2(t)).fold(f64::INFINITY, f64::min), "> 0", grid.iter().all(|&t| kernel::weight_w2(t) > 0.0));
    Ok(())
}

fn bump(x: Vec3, r0: f64, w: f64) -> f64 {
    let s = (norm(x) - r0) / w;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - s * s).powi(4)
    }
}

type Field = fn(Vec3) -> f64;

const TEST_FIELDS: [Field; 5] = [
    |x| bump(x, 1.0, 0.5),
    |x| bump(x, 1.0, 0.5) * (1.0 + 0.5 * x[0] / norm(x)),
    |x| bump(x, 1.1, 0.6) * x[0] * x[1] / (norm(x) * norm(x)),
    |x| bump(x, 0.9, 0.4) * (x[2] / norm(x)).powi(3),
    |x| bump(x, 1.2, 0.7) * (1.0 + (x[0] + x[2]) / norm(x)).powi(2),
];

/// Negative least-squares slope of `log err` against `log n`.
fn order(ns: &[usize], errs: &[f64]) -> f64 {
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.max(1e-300).ln()).collect();
    -crate::biharm::linear_regression(&x, &y).0
}

fn identity_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    let ns = [opts.n(32, 8), opts.n(48, 12), opts.n(64, 16)];
    let mut psi_err: f64 = 0.0;
    let mut id_err: f64 = 0.0;
    let mut psi_order = f64::INFINITY;
    let mut id_order = f64::INFINITY;
    let mut relation: f64 = 0.0;
    let mut shift: f64 = 0.0;
    let pm = PiProfile::new([0.3, 0.5, -0.2, 0.4])?;
    for f in TEST_FIELDS {
        let mut pe = Vec::new();
        let mut ie = Vec::new();
        for (k, &n) in ns.iter().enumerate() {
            let g = AnnulusGrid::uniform(0.3, 3.0, n)?;
            let u = ScalarField::on_annulus(&g, f);
            let p = psi_form(&u)?.value;
            let e = delta_energy(&u, None)?;
            let (l, r) = main_identity_check(&u, &WeightProfile::kernel(0.0))?;
            pe.push((p - e).abs() / e);
            ie.push((l - r).abs() / r.abs());
            if k == ns.len() - 1 {
                let v = log_field(&u)?;
                for tau in [-0.3, 0.0, 0.4] {
                    let wt = WeightProfile::kernel(tau);
                    let b = b_form(&v, &v, &wt)?.value;
                    let bt = b_tilde_form(&v, &v, &wt)?.value;
                    let tr = sphere_trace(&v, tau)?;
                    relation = relation.max((b - bt - 0.5 * tr).abs() / b.abs().max(1.0));
                }
                let w = ScalarField::on_annulus(&g, |x| pm.eval_lifted(x) / norm(x) - f(x));
                shift = shift.max((psi_form(&w)?.value - p).abs() / p);
            }
        }
        psi_err = psi_err.max(*pe.last().unwrap());
        id_err = id_err.max(*ie.last().unwrap());
        psi_order = psi_order.min(order(&ns, &pe));
        id_order = id_order.min(order(&ns, &ie));
    }
    c.below("psi_vs_energy_rel_err_max", psi_err, 0.02);
    c.above("psi_vs_energy_order_min", psi_order, 1.5);
    c.below("main_identity_rel_err_max", id_err, 0.02);
    c.above("main_identity_order_min", id_order, 1.5);
    c.below("form_difference_vs_half_trace", relation, 1e-10);
    c.below("profile_shift_rel_change", shift, 1e-6);
    Ok(())
}

fn capacity_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    let tol = opts.tol;
    // harmonic capacity of the ball of radius 1/4 against 4 pi r
    let n = opts.n(96, 16);
    let ball = CompactumSpec::full_shell(0.15, 0.25);
    let prob = CapacityProblem::boxed(ball, 1.0, n, false, tol)?;
    let cap = harmonic_cap(&prob, HarmonicBoundary::FarField)?.value;
    c.within("harmonic_ball_ratio", cap / (4.0 * PI * 0.25), 0.95, 1.05);

    let nl = opts.n(24, 12);
    let shape = |s: f64| CompactumSpec::Shell { r_inner: 1.2 * s, r_outer: 1.6 * s, cap_cos: 0.5 };
    let b = PiProfile::new([0.6, 0.3, -0.5, 0.2])?;
    let big = cap_p(&CapacityProblem::annulus(shape(1.0), 1.0, 2.0, nl, tol)?, &b)?.value;
    let small = cap_p(&CapacityProblem::annulus(shape(0.25), 0.25, 2.0, nl, tol)?, &b)?.value;
    c.below("scaling_law_rel_err", (big / (0.25 * small) - 1.0).abs(), 0.05);

    let mut worst: f64 = 0.0;
    for fam in 0..10 {
        let r0 = 1.05 + 0.04 * fam as f64;
        let cc = 0.3 + 0.05 * fam as f64;
        let caps = (0..3)
            .map(|m| {
                let k = CompactumSpec::Shell { r_inner: r0, r_outer: r0 + 0.15 * (m + 1) as f64, cap_cos: cc };
                cap_p(&CapacityProblem::annulus(k, 1.0, 2.0, nl, tol)?, &b).map(|r| r.value)
            })
            .collect::<Result<Vec<_>>>()?;
        for w in caps.windows(2) {
            worst = worst.max((w[0] - w[1]) / w[1]);
        }
        let k = CompactumSpec::Shell { r_inner: r0, r_outer: r0 + 0.15, cap_cos: cc };
        let small_dom = CapacityProblem::annulus(k.clone(), 1.0, 2.0, nl, tol)?;
        let wide: Vec<bool> = (0..small_dom.grid.len()).map(|i| norm(small_dom.grid.pos(i)) > 0.25).collect();
        let large_dom = CapacityProblem::with_domain(k, small_dom.grid, wide, tol)?;
        let (cs, cl) = (cap_p(&small_dom, &b)?.value, cap_p(&large_dom, &b)?.value);
        worst = worst.max((cl - cs) / cs);
    }
    c.below("monotonicity_violation", worst, 10.0 * tol);

    let k = CompactumSpec::Union(vec![
        CompactumSpec::Shell { r_inner: 1.2, r_outer: 1.4, cap_cos: 0.6 },
        CompactumSpec::PointSet { points: vec![([0.3, 1.1, 1.0], 0.15)] },
    ]);
    let prob = CapacityProblem::annulus(k, 1.0, 2.0, nl, 1e-11)?;
    let gram = cap_gram(&prob)?.gram;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut gerr: f64 = 0.0;
    for _ in 0..20 {
        let v: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let p = PiProfile::new(v)?.normalized()?;
        let direct = cap_p(&prob, &p)?.value;
        gerr = gerr.max((gram.quad(&p.b) - direct).abs() / direct);
    }
    c.below("gram_consistency_rel_err", gerr, 1e-6);

    let cs: Vec<f64> = [0.25, 1.0, 4.0]
        .iter()
        .map(|&s| {
            let prob = CapacityProblem::annulus(CompactumSpec::full_shell(s, 2.0 * s), s, 2.0, nl, tol)?;
            Ok(cap_inf(&cap_gram(&prob)?.gram)?.0 * s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = cs.iter().sum::<f64>() / 3.0;
    let spread = cs.iter().map(|v| (v / mean - 1.0).abs()).fold(0.0, f64::max);
    c.below("upper_bound_constant_spread", spread, 0.2);
    Ok(())
}

fn spectral_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    let m = opts.n(24, 12);
    let s = SphereGrid::new(m, 2 * m)?;
    let harmonics: [(Field, f64); 4] = [
        (|w| w[2], 1.0),
        (|w| w[0] * w[1], 2.0),
        (|w| w[0] * w[0] - w[1] * w[1], 2.0),
        (|w| 5.0 * w[2].powi(3) - 3.0 * w[2], 3.0),
    ];
    let mut worst: f64 = 0.0;
    for (f, l) in harmonics {
        worst = worst.max((spectral_gap_ratio(&s, &s.sample(f))? - l * (l + 1.0)).abs());
    }
    c.below("spectral_gap_error", worst, 1e-6);

    let ns = [opts.n(16, 8), opts.n(24, 10), opts.n(32, 12), opts.n(48, 16)];
    let mut deficits = Vec::new();
    for &n in &ns {
        let g = AnnulusGrid::uniform(0.3, 3.0, n)?;
        let mut d: f64 = 0.0;
        for f in TEST_FIELDS {
            let v = log_field(&ScalarField::on_annulus(&g, f))?;
            for tau in [-0.5, 0.0, 0.3] {
                let b = b_form(&v, &v, &WeightProfile::kernel(tau))?.value;
                let half = 0.5 * sphere_trace(&v, tau)?;
                d = d.max((half - b) / half.max(1e-300));
            }
        }
        deficits.push(d.max(0.0));
    }
    c.below("trace_deficit_finest", *deficits.last().unwrap(), 1e-3);
    c.truth("trace_deficit_nonincreasing", deficits.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    Ok(())
}

/// Lattice of spacing `1/8` in `[-1, 1]^3`.
fn lattice() -> Vec<Vec3> {
    let mut out = Vec::new();
    for i in -8..=8 {
        for j in -8..=8 {
            for k in -8..=8 {
                out.push([i as f64 / 8.0, j as f64 / 8.0, k as f64 / 8.0]);
            }
        }
    }
    out
}

fn desk_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    let xs = lattice();
    let cases: [(&str, Vec3); 3] = [("punctured_ball", [0.25, 0.125, 0.0]), ("blob1", [0.125, 0.0, 0.125]), ("blob2", [0.0, -0.125, 0.125])];
    let make = |name: &str, n: usize| -> Result<Domain> {
        match name {
            "punctured_ball" => Domain::ball(n, 1.0, 0.8, true),
            "blob1" => Domain::blob(n, 1.0, 0.7, 0.25, 1),
            _ => Domain::blob(n, 1.0, 0.7, 0.25, 2),
        }
    };
    let (n0, n1) = (opts.n(48, 12), opts.n(64, 16));
    for (name, y) in cases {
        let a = mixed_gradient_sup(&make(name, n0)?, y, &xs, 0.25, opts.tol)?;
        let b = mixed_gradient_sup(&make(name, n1)?, y, &xs, 0.25, opts.tol)?;
        c.below(format!("{name}_mixed_change"), (b.mixed_sup / a.mixed_sup - 1.0).abs(), 0.1);
        c.below(format!("{name}_gradient_change"), (b.gradient_sup / a.gradient_sup - 1.0).abs(), 0.1);
    }
    let n = opts.n(128, 16);
    let dom = Domain::full_box(n, 1.0)?;
    let h = dom.grid.h;
    let near: Vec<Vec3> = (0..dom.grid.len()).map(|i| dom.grid.pos(i)).filter(|&x| norm(x) <= 4.5 * h).collect();
    let rep = mixed_gradient_sup(&dom, [0.0; 3], &near, 4.0 * h, opts.tol)?;
    c.within("free_space_mixed_ratio", rep.mixed_sup / FREE_SPACE_MIXED, 0.85, 1.15);
    Ok(())
}

fn demo_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    for full in [48, 64] {
        let rep = punctured_ball_demo(opts.n(full, 32), opts.tol)?;
        c.within(format!("gradient_sup_n{}", rep.n_cells), rep.gradient_sup, 0.95, 1.05);
        c.above(format!("axis_angle_deg_n{}", rep.n_cells), rep.angle_deg, 85.0);
    }
    Ok(())
}

fn cusp_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    let cases = [
        ("sqrt", CuspShape::Power { c: 1.0, lambda: 0.5 }, false),
        ("constant", CuspShape::Constant { theta0: 0.2 }, true),
        ("inverse_log", CuspShape::InverseLog { c: 1.0, p: 0.5 }, true),
    ];
    for (name, shape, divergent) in &cases {
        let analytic = trend_is_divergent(&cusp_criterion(shape)?);
        let numeric = trend_is_divergent(&verdict(&cusp_quadrature(shape, 1e-12))?);
        c.truth(format!("{name}_analytic_verdict"), analytic == Some(*divergent));
        c.truth(format!("{name}_integral_test_agrees"), numeric == analytic);
    }
    let solver = CuspSolver { tol: opts.tol, ..CuspSolver::default() };
    let (s, a) = (0.25, 2.0);
    let mut ratios = Vec::new();
    let mut inside = true;
    for theta0 in [0.1, 0.2, 0.4] {
        let shape = CuspShape::Constant { theta0 };
        let cap = cusp_layer_capacity(&shape, s, a, &solver)?;
        let (lo, hi) = cusp_layer_bounds(&shape, s, a)?;
        inside &= cap >= lo && cap <= hi;
        ratios.push(cap * s / (theta0 * theta0));
    }
    let spread = ratios.iter().cloned().fold(0.0, f64::max) / ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    c.below("theta_squared_tracking_factor", spread, 2.0);
    c.truth("layer_bounds_hold", inside);
    Ok(())
}

fn fourpoint_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    let al = PI / 4.0;
    c.below("min_eig_on_cone", four_point_min_eig(al, al)?.0.abs(), 1e-12);
    let mut worst = f64::INFINITY;
    for i in 0..50 {
        let be = al / 2.0 + al * (i as f64 + 0.5) / 50.0;
        let (l, b) = four_point_lower_bound_check(al, be)?;
        worst = worst.min(l - b);
    }
    c.above("lower_bound_margin_min", worst, 0.0);
    let rep = instability_demo(al, 0.05, 40, 4.0)?;
    c.below("on_cone_necessity_max", rep.on_cone.iter().map(|v| v.abs()).fold(0.0, f64::max), 1e-12);
    c.below("lower_bound_final_error", (rep.lower_bound[39] - 40.0 * 0.05f64.powi(2)).abs(), 1e-12);
    c.truth("perturbed_series_linear", rep.perturbed_verdict.model == Some(TailModel::Linear));
    c.below("rebinned_layer_cap_max", rep.rebinned.iter().map(|v| v.abs()).fold(0.0, f64::max), opts.tol);

    let b = [-al.cos(), 0.0, 0.0, 1.0];
    let x = [al.sin(), 0.0, al.cos()];
    let cells: Vec<usize> = [8, 16, 32, 64].iter().map(|&n| opts.n(n, 4)).collect();
    let on = cone_null_capacity(b, &[x], &cells, None, opts.tol)?;
    let off = cone_null_capacity(b, &[x], &cells[..1], Some(PiProfile::basis(0)), opts.tol)?;
    c.truth("cone_capacity_decreasing", on.windows(2).all(|w| w[1] < w[0]));
    c.below("cone_capacity_reduction", on[on.len() - 1] / on[0], 0.15);
    c.above("constant_profile_contrast", off[0] / on[on.len() - 1], 10.0);
    Ok(())
}

fn decay_suite(c: &mut Checks, opts: &VerifyOptions) -> Result<()> {
    let base = DecayConfig { n_cells: opts.n(96, 24), tol: opts.tol, ..DecayConfig::default() };
    let full = decay_experiment(&DecayConfig { family: ObstacleFamily::Full, ..base })?;
    c.above("full_slope_vs_capacity_neg", -full.slope_vs_capacity.unwrap_or(f64::NAN), 0.0);
    c.above("full_r2_vs_capacity", full.r2_vs_capacity.unwrap_or(f64::NAN), 0.8);
    c.truth("full_sup_monotone", full.monotone);
    let empty = decay_experiment(&DecayConfig { family: ObstacleFamily::Empty, ..base })?;
    c.below("empty_slope_abs", empty.slope_vs_layer.abs(), 0.05);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_suite_passes() {
        let r = run_suite("kernel", &VerifyOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checks.len(), 6);
    }

    #[test]
    fn unknown_suite() {
        assert!(run_suite("nope", &VerifyOptions::default()).is_err());
    }

    #[test]
    fn scaled_resolutions() {
        let o = VerifyOptions { grid: Some(16), ..VerifyOptions::default() };
        assert_eq!(o.n(64, 8), 16);
        assert_eq!(o.n(96, 8), 24);
        assert_eq!(o.n(24, 12), 12);
        assert_eq!(VerifyOptions::default().n(47, 8), 48);
    }
}
