//! Command-line frontend.

pub mod report;
pub mod scene;
pub mod suites;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::biharm::{mixed_gradient_sup, solve_dirichlet, write_field, DirichletProblem};
use crate::capacity::{cap_gram, cap_inf, cap_p, harmonic_cap, CapacityProblem};
use crate::error::{Error, Result};
use crate::fd::HarmonicBoundary;
use crate::models::{
    cone_null_capacity, cusp_criterion, cusp_layer_bounds, cusp_layer_capacity, cusp_layer_gram, cusp_quadrature, four_point_lower_bound_check,
    four_point_matrix, four_point_min_eig, instability_demo, CuspSolver,
};
use crate::linalg::{mat_mul_t, sym_eigen};
use crate::pispace::PiProfile;
use crate::sphgrid::{norm, Vec3};
use crate::wiener::{layer_capacities, sufficiency_sum, verdict, LayerLayout, LayerSeries, LayerSolver};

use report::{Provenance, Report, Table, SCHEMA_VERSION};
use scene::{sha256_hex, Scene};
use suites::{run_suite, VerifyOptions, SUITES};

#[derive(Debug, Parser)]
#[command(name = "bicap", version, about = "Biharmonic capacity, Wiener-type series and Green's function checks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, global = true)]
    pub scene: Option<PathBuf>,
    /// Layer ratio.
    #[arg(long, global = true)]
    pub a: Option<f64>,
    #[arg(long, global = true)]
    pub jmax: Option<i32>,
    /// Grid cells per axis.
    #[arg(long, global = true)]
    pub grid: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub json: Option<PathBuf>,
    #[arg(long, global = true)]
    pub csv: Option<PathBuf>,
    #[arg(long, global = true)]
    pub no_timings: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Profile capacities, Gram matrix and its minimum.
    Capacity,
    /// Layer capacities and the regularity verdict.
    Wiener,
    /// Closed-form model geometries.
    Model {
        #[command(subcommand)]
        model: Model,
    },
    /// Dirichlet problem for the bilaplacian.
    Solve {
        /// Binary dump of the solution.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Green's function samples and gradient sups.
    Green,
    /// Verification suites.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum Model {
    Cusp,
    Cone,
    Fourpoint {
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, allow_negative_numbers = true)]
        beta: f64,
    },
    Instability {
        #[arg(long, default_value_t = PI / 4.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 40)]
        kmax: usize,
    },
}

/// Output of one command before serialization.
pub struct Outcome {
    pub task: String,
    pub scene_hash: String,
    pub inputs: Value,
    pub results: Value,
    pub grid: Option<usize>,
    pub tol: f64,
    pub table: Option<Table>,
    pub passed: Option<bool>,
    pub timings: BTreeMap<String, f64>,
}

impl Outcome {
    fn new(task: &str, scene_hash: String, inputs: Value, results: Value) -> Self {
        Outcome { task: task.into(), scene_hash, inputs, results, grid: None, tol: 0.0, table: None, passed: None, timings: BTreeMap::new() }
    }

    pub fn report(&self, c: &Common) -> Report {
        Report {
            schema_version: SCHEMA_VERSION,
            task: self.task.clone(),
            scene_hash: self.scene_hash.clone(),
            inputs: self.inputs.clone(),
            results: self.results.clone(),
            provenance: Provenance { grid: self.grid, tol: self.tol, seed: c.seed, timings: (!c.no_timings).then(|| self.timings.clone()) },
            passed: self.passed,
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("results serialize")
}

fn load_scene(c: &Common) -> Result<Scene> {
    let path = c.scene.as_ref().ok_or_else(|| Error::Invalid("this command needs --scene PATH".into()))?;
    Scene::load(path)
}

fn hash_of_inputs(inputs: &Value) -> String {
    sha256_hex(inputs.to_string().as_bytes())
}

fn grid_and_tol(c: &Common, s: &Scene, default_grid: usize) -> Result<(usize, f64)> {
    let grid = match c.grid {
        Some(g) => g,
        None => s.count("solver.grid")?.unwrap_or(default_grid),
    };
    let tol = match c.tol {
        Some(t) => t,
        None => s.num_or("solver.tol", 1e-8)?,
    };
    if grid < 8 {
        return Err(Error::Scene { key: "solver.grid".into(), msg: format!("grid {grid} is below the minimum of 8 cells") });
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Scene { key: "solver.tol".into(), msg: format!("tolerance {tol} must lie in (0, 1)") });
    }
    Ok((grid, tol))
}

fn capacity_cmd(c: &Common) -> Result<Outcome> {
    let s = load_scene(c)?;
    s.only("solver", &["grid", "tol"])?;
    s.only("domain", &["kind", "s", "a", "half_width", "punctured"])?;
    s.only("task", &["b", "harmonic"])?;
    let (grid, tol) = grid_and_tol(c, &s, 24)?;
    let k = s.compactum()?.ok_or_else(|| Error::Scene { key: "geometry".into(), msg: "missing section".into() })?;
    let problem = match s.text("domain.kind")?.unwrap_or("annulus") {
        "annulus" => {
            let (lo, hi) = k.radial_bounds();
            let sv = s.num_or("domain.s", lo)?;
            let a = s.num_or("domain.a", hi / sv)?;
            CapacityProblem::annulus(k.clone(), sv, a, grid, tol)
        }
        "box" => CapacityProblem::boxed(k.clone(), s.num_or("domain.half_width", 1.0)?, grid, s.flag("domain.punctured")?.unwrap_or(true), tol),
        other => return Err(Error::Scene { key: "domain.kind".into(), msg: format!("unknown domain `{other}`; expected annulus or box") }),
    }
    .map_err(|e| match e {
        Error::EmptyCompactum => Error::Scene { key: "geometry".into(), msg: "compactum does not meet the grid".into() },
        e => e,
    })?;
    let gr = cap_gram(&problem)?;
    let (value, b_min) = cap_inf(&gr.gram)?;
    let mut results = json!({ "gram": gr.gram, "cap_inf": value, "b_min": b_min, "stats": gr.stats });
    if let Some(b) = s.fixed::<4>("task.b")? {
        let p = PiProfile::new(b).map_err(|e| Error::Scene { key: "task.b".into(), msg: e.to_string() })?;
        let r = cap_p(&problem, &p)?;
        results["cap_p"] = json!({ "b": b, "value": r.value, "stats": r.stats });
    }
    if s.flag("task.harmonic")?.unwrap_or(false) {
        let r = harmonic_cap(&problem, HarmonicBoundary::FarField)?;
        results["harmonic"] = json!({ "value": r.value, "stats": r.stats });
    }
    let mut t = Table::new(&["row", "g0", "g1", "g2", "g3"]);
    for (i, row) in gr.gram.g.iter().enumerate() {
        t.push(vec![i as f64, row[0], row[1], row[2], row[3]]);
    }
    let mut o = Outcome::new("capacity", s.hash.clone(), json!({ "compactum": k, "grid": grid, "tol": tol }), results);
    o.grid = Some(grid);
    o.tol = tol;
    o.table = Some(t);
    Ok(o)
}

fn wiener_cmd(c: &Common) -> Result<Outcome> {
    let s = load_scene(c)?;
    s.only("solver", &["grid", "tol", "aperture_factor", "cells"])?;
    s.only("task", &["a", "jmax", "j_start"])?;
    let (grid, tol) = grid_and_tol(c, &s, 24)?;
    let a = match c.a {
        Some(a) => a,
        None => s.num_or("task.a", 2.0)?,
    };
    let jmax = match c.jmax {
        Some(j) => j,
        None => s.num_or("task.jmax", 12.0)? as i32,
    };
    let j_start = s.num_or("task.j_start", 2.0)? as i32;
    if !(a > 1.0) {
        return Err(Error::Invalid(format!("layer ratio --a {a} must exceed 1")));
    }
    if jmax < j_start {
        return Err(Error::Invalid(format!("--jmax {jmax} is below the first layer {j_start}")));
    }
    let layout = LayerLayout::sufficiency(a);
    let (series, geometry) = if s.text("geometry.kind")? == Some("cusp") {
        s.only("geometry", &["kind", "shape", "theta0", "c", "lambda", "p", "r", "h"])?;
        let shape = s.cusp_shape()?;
        let solver = CuspSolver {
            aperture_factor: s.num_or("solver.aperture_factor", CuspSolver::default().aperture_factor)?,
            cells: s.num_or("solver.cells", CuspSolver::default().cells)?,
            tol,
        };
        let grams = (j_start..=jmax)
            .into_par_iter()
            .map(|j| cusp_layer_gram(&shape, layout.inner(j), a, &solver).map(Some))
            .collect::<Result<Vec<_>>>()?;
        (LayerSeries::from_grams(layout, j_start, grams)?, to_value(&shape))
    } else {
        let k = s.compactum()?.ok_or_else(|| Error::Scene { key: "geometry".into(), msg: "missing section".into() })?;
        (layer_capacities(&k, layout, j_start, jmax, LayerSolver { n_cells: grid, tol })?, to_value(&k))
    };
    let sums = sufficiency_sum(&series);
    let v = if sums.len() >= 8 { Some(verdict(&sums)?) } else { None };
    let mut o = Outcome::new(
        "wiener",
        s.hash.clone(),
        json!({ "geometry": geometry, "a": a, "j_start": j_start, "jmax": jmax, "grid": grid, "tol": tol }),
        json!({ "series": series, "partial_sums": sums, "verdict": v }),
    );
    o.grid = Some(grid);
    o.tol = tol;
    o.table = Some(Table::series(&series));
    Ok(o)
}

fn model_cmd(c: &Common, m: &Model) -> Result<Outcome> {
    match m {
        Model::Cusp => {
            let s = load_scene(c)?;
            s.only("geometry", &["kind", "shape", "theta0", "c", "lambda", "p", "r", "h"])?;
            s.only("task", &["s", "a", "numeric"])?;
            let shape = s.cusp_shape()?;
            let crit = cusp_criterion(&shape)?;
            let sv = s.num_or("task.s", 0.25)?;
            let a = c.a.map_or_else(|| s.num_or("task.a", 2.0), Ok)?;
            let (lo, hi) = cusp_layer_bounds(&shape, sv, a)?;
            let mut results = json!({ "verdict": crit, "layer_bounds": [lo, hi] });
            let tol = c.tol.unwrap_or(1e-8);
            if s.flag("task.numeric")?.unwrap_or(false) {
                results["layer_capacity"] = json!(cusp_layer_capacity(&shape, sv, a, &CuspSolver { tol, ..CuspSolver::default() })?);
            }
            let mut t = Table::new(&["layer", "partial_sum"]);
            for (i, v) in cusp_quadrature(&shape, 1e-12).iter().enumerate() {
                t.push(vec![(i + 1) as f64, *v]);
            }
            let mut o = Outcome::new("model cusp", s.hash.clone(), json!({ "shape": shape, "s": sv, "a": a }), results);
            o.tol = tol;
            o.table = Some(t);
            Ok(o)
        }
        Model::Cone => {
            let s = load_scene(c)?;
            s.only("geometry", &["kind", "b", "points"])?;
            s.only("task", &["cells", "profile"])?;
            s.only("solver", &["tol"])?;
            let b = s.fixed::<4>("geometry.b")?.ok_or_else(|| Error::Scene { key: "geometry.b".into(), msg: "missing cone coefficients".into() })?;
            let pts = s.points("geometry.points")?.unwrap_or_default();
            let cells: Vec<usize> = match s.vector("task.cells")? {
                Some(v) => v.iter().map(|&x| x as usize).collect(),
                None => vec![8, 16, 32],
            };
            let profile = s.fixed::<4>("task.profile")?.map(PiProfile::new).transpose()?;
            let tol = c.tol.map_or_else(|| s.num_or("solver.tol", 1e-8), Ok)?;
            let caps = cone_null_capacity(b, &pts, &cells, profile, tol).map_err(|e| match e {
                Error::Domain(msg) => Error::Scene { key: "geometry.points".into(), msg },
                e => e,
            })?;
            let mut t = Table::new(&["cells", "capacity"]);
            for (n, v) in cells.iter().zip(&caps) {
                t.push(vec![*n as f64, *v]);
            }
            let mut o = Outcome::new("model cone", s.hash.clone(), json!({ "b": b, "points": pts, "cells": cells }), json!({ "capacity": caps }));
            o.tol = tol;
            o.table = Some(t);
            Ok(o)
        }
        Model::Fourpoint { alpha, beta } => {
            let (lmin, v) = four_point_min_eig(*alpha, *beta)?;
            let (l, bound) = four_point_lower_bound_check(*alpha, *beta)?;
            let (vals, _) = sym_eigen(&mat_mul_t(&four_point_matrix(*alpha, *beta)?));
            let inputs = json!({ "alpha": alpha, "beta": beta });
            let results = json!({ "lambda_min": lmin, "eigenvector": v, "eigenvalues": vals, "lower_bound": bound, "lower_bound_holds": l >= bound });
            Ok(Outcome::new("model fourpoint", hash_of_inputs(&inputs), inputs, results))
        }
        Model::Instability { alpha, epsilon, kmax } => {
            let a = c.a.unwrap_or(4.0);
            let rep = instability_demo(*alpha, *epsilon, *kmax, a)?;
            let mut t = Table::new(&["k", "on_cone", "perturbed", "lower_bound"]);
            for k in 0..rep.on_cone.len() {
                t.push(vec![(k + 1) as f64, rep.on_cone[k], rep.perturbed[k], rep.lower_bound[k]]);
            }
            let inputs = json!({ "alpha": alpha, "epsilon": epsilon, "kmax": kmax, "a": a });
            let mut o = Outcome::new("model instability", hash_of_inputs(&inputs), inputs, to_value(&rep));
            o.table = Some(t);
            Ok(o)
        }
    }
}

fn solve_cmd(c: &Common, field: Option<&PathBuf>) -> Result<Outcome> {
    let s = load_scene(c)?;
    s.only("solver", &["grid", "tol"])?;
    s.only("task", &["rhs", "value", "center", "radius"])?;
    let (grid, tol) = grid_and_tol(c, &s, 32)?;
    let domain = s.voxel_domain(grid)?;
    let rhs: Box<dyn Fn(Vec3) -> f64> = match s.text("task.rhs")?.unwrap_or("constant") {
        "constant" => {
            let v = s.num_or("task.value", 1.0)?;
            Box::new(move |_| v)
        }
        "bump" => {
            let c0 = s.fixed::<3>("task.center")?.unwrap_or([0.0; 3]);
            let r = s.num_or("task.radius", 0.25)?;
            Box::new(move |x: Vec3| {
                let q = norm([x[0] - c0[0], x[1] - c0[1], x[2] - c0[2]]) / r;
                if q < 1.0 {
                    (1.0 - q * q).powi(3)
                } else {
                    0.0
                }
            })
        }
        other => return Err(Error::Scene { key: "task.rhs".into(), msg: format!("unknown right-hand side `{other}`; expected constant or bump") }),
    };
    let problem = DirichletProblem::sampled(domain, rhs, tol)?;
    let sol = solve_dirichlet(&problem)?;
    if let Some(p) = field {
        write_field(p, &sol.field)?;
    }
    let g = problem.domain.grid;
    let mut t = Table::new(&["x", "u"]);
    let (j, k) = (g.dims[1] / 2, g.dims[2] / 2);
    for i in 0..g.dims[0] {
        t.push(vec![g.pos_ijk(i, j, k)[0], sol.field.values[g.index(i, j, k)]]);
    }
    let results = json!({ "energy": sol.energy, "max_abs": sol.field.max_abs(), "stats": sol.stats, "free_nodes": problem.domain.free_nodes().len() });
    let mut o = Outcome::new("solve", s.hash.clone(), json!({ "grid": grid, "tol": tol }), results);
    o.grid = Some(grid);
    o.tol = tol;
    o.table = Some(t);
    Ok(o)
}

fn green_cmd(c: &Common) -> Result<Outcome> {
    let s = load_scene(c)?;
    s.only("solver", &["grid", "tol"])?;
    s.only("task", &["source", "min_dist", "spacing"])?;
    let (grid, tol) = grid_and_tol(c, &s, 32)?;
    let domain = s.voxel_domain(grid)?;
    let y = s.fixed::<3>("task.source")?.ok_or_else(|| Error::Scene { key: "task.source".into(), msg: "missing source point".into() })?;
    let step = s.num_or("task.spacing", 0.125)?;
    if !(step > 0.0) {
        return Err(Error::Scene { key: "task.spacing".into(), msg: "spacing must be positive".into() });
    }
    let min_dist = s.num_or("task.min_dist", 0.25)?;
    let g = domain.grid;
    let hi: Vec3 = std::array::from_fn(|d| g.origin[d] + g.h * (g.dims[d] - 1) as f64);
    let mut xs = Vec::new();
    let idx = |d: usize| ((g.origin[d] / step).ceil() as i64)..=((hi[d] / step).floor() as i64);
    for i in idx(0) {
        for j in idx(1) {
            for k in idx(2) {
                xs.push([i as f64 * step, j as f64 * step, k as f64 * step]);
            }
        }
    }
    let rep = mixed_gradient_sup(&domain, y, &xs, min_dist, tol).map_err(|e| match e {
        Error::Invalid(msg) => Error::Scene { key: "task.min_dist".into(), msg },
        Error::Domain(msg) => Error::Scene { key: "task.source".into(), msg },
        e => e,
    })?;
    let mut t = Table::new(&["x", "y", "z", "distance", "mixed", "gradient"]);
    for p in &rep.pairs {
        t.push(vec![p.x[0], p.x[1], p.x[2], p.distance, p.mixed, p.gradient]);
    }
    let results = json!({ "source": rep.source, "h": rep.h, "pairs": rep.pairs.len(), "mixed_sup": rep.mixed_sup, "gradient_sup": rep.gradient_sup, "stats": rep.stats });
    let mut o = Outcome::new("green", s.hash.clone(), json!({ "grid": grid, "tol": tol, "source": y, "spacing": step, "min_dist": min_dist }), results);
    o.grid = Some(grid);
    o.tol = tol;
    o.table = Some(t);
    Ok(o)
}

fn verify_cmd(c: &Common, suite: &str) -> Result<Outcome> {
    let names: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite] };
    if let Some(bad) = names.iter().find(|n| !SUITES.contains(n)) {
        return Err(Error::Invalid(format!("unknown suite `{bad}`; expected all or one of {}", SUITES.join(", "))));
    }
    let opts = VerifyOptions { grid: c.grid, seed: c.seed, tol: c.tol.unwrap_or(1e-8) };
    let mut reports = Vec::new();
    let mut timings = BTreeMap::new();
    for n in names {
        let t0 = Instant::now();
        reports.push(run_suite(n, &opts)?);
        timings.insert(n.to_string(), t0.elapsed().as_secs_f64());
    }
    let passed = reports.iter().all(|r| r.passed);
    let mut t = Table::new(&["suite", "check", "value", "pass"]);
    for (si, r) in reports.iter().enumerate() {
        for (ci, k) in r.checks.iter().enumerate() {
            t.push(vec![si as f64, ci as f64, k.value, if k.pass { 1.0 } else { 0.0 }]);
        }
    }
    let inputs = json!({ "suite": suite, "grid": c.grid, "seed": c.seed, "tol": opts.tol });
    let mut o = Outcome::new("verify", hash_of_inputs(&inputs), inputs, json!({ "suites": reports }));
    o.grid = c.grid;
    o.tol = opts.tol;
    o.passed = Some(passed);
    o.table = Some(t);
    o.timings = timings;
    Ok(o)
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let t0 = Instant::now();
    let c = &cli.common;
    let mut o = match &cli.command {
        Command::Capacity => capacity_cmd(c),
        Command::Wiener => wiener_cmd(c),
        Command::Model { model } => model_cmd(c, model),
        Command::Solve { field } => solve_cmd(c, field.as_ref()),
        Command::Green => green_cmd(c),
        Command::Verify { suite } => verify_cmd(c, suite),
    }?;
    o.timings.insert("total".into(), t0.elapsed().as_secs_f64());
    Ok(o)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("BICAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Invalid(format!("BICAP_THREADS={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Error::Invalid(format!("thread pool: {e}")))
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    let outcome = match execute(&cli) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let c = &cli.common;
    let json = outcome.report(c).to_json();
    let written = match &c.json {
        Some(p) => std::fs::write(p, &json).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{json}");
            Ok(())
        }
    };
    let written = written.and_then(|_| match (&c.csv, &outcome.table) {
        (Some(p), Some(t)) => t.write(p),
        (Some(_), None) => Err(Error::Invalid(format!("`{}` produces no series for --csv", outcome.task))),
        _ => Ok(()),
    });
    if let Err(e) = written {
        eprintln!("error: {e}");
        return 1;
    }
    match outcome.passed {
        Some(false) => 2,
        _ => 0,
    }
}
