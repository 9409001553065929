use bicap::capacity::{self, CapacityProblem};
use bicap::kernel::{self, Side};
use bicap::models::{self, CuspShape};
use bicap::pispace;
use bicap::sphgrid::{self, CompactumSpec, LogPoint};
use bicap::cli::suites::{run_suite, VerifyOptions, SUITES};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(pybicap, BicapError, PyValueError);

fn err(e: bicap::Error) -> PyErr {
    BicapError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| BicapError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

#[pyfunction]
fn g(t: f64) -> f64 {
    kernel::g(t)
}

#[pyfunction]
#[pyo3(signature = (t, order, side = "right"))]
fn g_deriv(t: f64, order: u32, side: &str) -> PyResult<f64> {
    let side = match side {
        "left" => Side::Left,
        "right" => Side::Right,
        _ => return Err(BicapError::new_err(format!("side must be 'left' or 'right', got '{side}'"))),
    };
    kernel::g_deriv(t, order, side).map_err(err)
}

#[pyfunction]
fn ode_residual(t: f64) -> PyResult<f64> {
    kernel::ode_residual(t).map_err(err)
}

#[pyfunction]
fn weight_w1(t: f64) -> f64 {
    kernel::weight_w1(t)
}

#[pyfunction]
fn weight_w2(t: f64) -> f64 {
    kernel::weight_w2(t)
}

#[pyfunction]
fn third_derivative_jump() -> f64 {
    kernel::third_derivative_jump()
}

#[pyfunction]
fn to_log_coords(x: [f64; 3]) -> PyResult<(f64, [f64; 3])> {
    let p = sphgrid::to_log_coords(x).map_err(err)?;
    Ok((p.t, p.omega))
}

#[pyfunction]
fn from_log_coords(t: f64, omega: [f64; 3]) -> [f64; 3] {
    sphgrid::from_log_coords(&LogPoint { t, omega })
}

#[pyclass(name = "PiProfile", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPiProfile(pispace::PiProfile);

#[pymethods]
impl PyPiProfile {
    #[new]
    fn new(b: [f64; 4]) -> PyResult<Self> {
        pispace::PiProfile::new(b).map(PyPiProfile).map_err(err)
    }

    #[getter]
    fn b(&self) -> [f64; 4] {
        self.0.b
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn normalized(&self) -> PyResult<Self> {
        self.0.normalized().map(PyPiProfile).map_err(err)
    }

    fn eval(&self, x: [f64; 3]) -> PyResult<f64> {
        self.0.eval(x).map_err(err)
    }

    fn eval_lifted(&self, x: [f64; 3]) -> f64 {
        self.0.eval_lifted(x)
    }

    fn sphere_l2_sq(&self) -> f64 {
        self.0.sphere_l2_sq()
    }

    fn __repr__(&self) -> String {
        format!("PiProfile({:?})", self.0.b)
    }
}

#[pyclass(name = "GramMatrix", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGramMatrix(capacity::GramMatrix);

#[pymethods]
impl PyGramMatrix {
    #[new]
    fn new(rows: [[f64; 4]; 4]) -> PyResult<Self> {
        capacity::GramMatrix::new(rows).map(PyGramMatrix).map_err(err)
    }

    #[getter]
    fn rows(&self) -> [[f64; 4]; 4] {
        self.0.g
    }

    fn quad(&self, b: [f64; 4]) -> f64 {
        self.0.quad(&b)
    }

    fn trace(&self) -> f64 {
        self.0.trace()
    }

    fn is_psd(&self) -> bool {
        self.0.is_psd()
    }

    fn cap_inf(&self) -> PyResult<(f64, [f64; 4])> {
        capacity::cap_inf(&self.0).map_err(err)
    }
}

/// Gram matrix of the shell `r_inner <= |x| <= r_outer` in the annulus `C_{s, a s}`.
#[pyfunction]
#[pyo3(signature = (r_inner, r_outer, s = 1.0, a = 2.0, n_cells = 32, tol = 1e-8))]
fn shell_gram(py: Python<'_>, r_inner: f64, r_outer: f64, s: f64, a: f64, n_cells: usize, tol: f64) -> PyResult<PyGramMatrix> {
    py.detach(|| {
        let problem = CapacityProblem::annulus(CompactumSpec::full_shell(r_inner, r_outer), s, a, n_cells, tol)?;
        capacity::cap_gram(&problem).map(|r| PyGramMatrix(r.gram))
    })
    .map_err(err)
}

#[pyfunction]
fn four_point_min_eig(alpha: f64, beta: f64) -> PyResult<(f64, [f64; 4])> {
    models::four_point_min_eig(alpha, beta).map_err(err)
}

#[pyfunction]
fn four_point_lower_bound_check(alpha: f64, beta: f64) -> PyResult<(f64, f64)> {
    models::four_point_lower_bound_check(alpha, beta).map_err(err)
}

/// Regularity verdict for the cusp `h = theta0`, `c r^lambda` or `c (log 1/r)^-p`.
#[pyfunction]
#[pyo3(signature = (kind, c = 1.0, exponent = 0.5))]
fn cusp_criterion<'py>(py: Python<'py>, kind: &str, c: f64, exponent: f64) -> PyResult<Bound<'py, PyAny>> {
    let shape = match kind {
        "constant" => CuspShape::Constant { theta0: c },
        "power" => CuspShape::Power { c, lambda: exponent },
        "inverse_log" => CuspShape::InverseLog { c, p: exponent },
        _ => return Err(BicapError::new_err(format!("unknown cusp kind '{kind}'"))),
    };
    let v = models::cusp_criterion(&shape).map_err(err)?;
    to_py(py, &v)
}

#[pyfunction]
#[pyo3(signature = (suite, grid = None, seed = 0, tol = 1e-8))]
fn verify<'py>(py: Python<'py>, suite: &str, grid: Option<usize>, seed: u64, tol: f64) -> PyResult<Bound<'py, PyAny>> {
    let opts = VerifyOptions { grid, seed, tol };
    let r = py.detach(|| run_suite(suite, &opts)).map_err(err)?;
    to_py(py, &r)
}

#[pymodule]
fn pybicap(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("BicapError", m.py().get_type::<BicapError>())?;
    m.add("SUITES", SUITES.to_vec())?;
    m.add_class::<PyPiProfile>()?;
    m.add_class::<PyGramMatrix>()?;
    m.add_function(wrap_pyfunction!(g, m)?)?;
    m.add_function(wrap_pyfunction!(g_deriv, m)?)?;
    m.add_function(wrap_pyfunction!(ode_residual, m)?)?;
    m.add_function(wrap_pyfunction!(weight_w1, m)?)?;
    m.add_function(wrap_pyfunction!(weight_w2, m)?)?;
    m.add_function(wrap_pyfunction!(third_derivative_jump, m)?)?;
    m.add_function(wrap_pyfunction!(to_log_coords, m)?)?;
    m.add_function(wrap_pyfunction!(from_log_coords, m)?)?;
    m.add_function(wrap_pyfunction!(shell_gram, m)?)?;
    m.add_function(wrap_pyfunction!(four_point_min_eig, m)?)?;
    m.add_function(wrap_pyfunction!(four_point_lower_bound_check, m)?)?;
    m.add_function(wrap_pyfunction!(cusp_criterion, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
