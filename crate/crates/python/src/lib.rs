//! Python bindings: benchmark systems, libraries, identification, CARE, and the
//! experiment runner. Matrices cross the boundary as lists of rows.

use kronic::basis::{MonomialLibrary, TrigTerm};
use kronic::control::{energy_control, solve_care as care};
use kronic::experiments::{self, ExperimentConfig, ExperimentName};
use kronic::identify::{self, EigenfunctionModel, NullspaceOptions};
use kronic::systems::{self, ControlAffineSystem, Trajectory};
use kronic::KronicError;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: KronicError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Monomial candidate library (graded-lex order), optionally with `cos`/`sin` terms.
#[pyclass(name = "MonomialLibrary", module = "kronic_py", skip_from_py_object)]
#[derive(Clone)]
struct PyLibrary {
    inner: MonomialLibrary,
}

#[pymethods]
impl PyLibrary {
    #[new]
    #[pyo3(signature = (n, degree, include_constant = true))]
    fn new(n: usize, degree: u32, include_constant: bool) -> PyResult<Self> {
        Ok(Self {
            inner: MonomialLibrary::new(n, degree, include_constant).map_err(err)?,
        })
    }

    /// Append `cos(freq·x_var)` (kind="cos") or `sin(freq·x_var)` (kind="sin").
    fn with_trig(&self, kind: &str, var: usize, freq: f64) -> PyResult<Self> {
        let term = match kind {
            "cos" => TrigTerm::Cos { var, freq },
            "sin" => TrigTerm::Sin { var, freq },
            _ => return Err(PyValueError::new_err("kind must be 'cos' or 'sin'")),
        };
        Ok(Self {
            inner: self.inner.clone().with_trig(term).map_err(err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn term_names(&self) -> Vec<String> {
        self.inner.term_names()
    }

    fn eval_theta(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_matrix(&self.inner.eval_theta(&to_matrix(&x)?).map_err(err)?))
    }

    fn eval_gamma(&self, x: Vec<Vec<f64>>, xdot: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_matrix(&self.inner.eval_gamma(&to_matrix(&x)?, &to_matrix(&xdot)?).map_err(err)?))
    }

    #[pyo3(signature = (xi, tol = 1e-12))]
    fn pretty_print(&self, xi: Vec<f64>, tol: f64) -> String {
        self.inner.pretty_print(&xi, tol)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: MonomialLibrary::from_json(s).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("MonomialLibrary(n={}, degree={}, terms={})", self.inner.n, self.inner.degree, self.inner.len())
    }
}

/// Sampled trajectory: `times`, `states` (rows), optional `inputs` and `derivatives`.
#[pyclass(name = "Trajectory", module = "kronic_py")]
struct PyTrajectory {
    inner: Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times.clone()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        from_matrix(&self.inner.states)
    }

    #[getter]
    fn inputs(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.inputs.as_ref().map(from_matrix)
    }

    #[getter]
    fn derivatives(&self) -> Option<Vec<Vec<f64>>> {
        self.inner.derivatives.as_ref().map(from_matrix)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(err)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

fn benchmark(name: &str, params: &[f64]) -> PyResult<ControlAffineSystem> {
    let p = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
    match name {
        "pendulum" => Ok(systems::make_pendulum()),
        "duffing" => Ok(systems::make_duffing()),
        "double_well" => Ok(systems::make_double_well(p(0, -0.25))),
        "slow_manifold" => systems::make_slow_manifold(
            p(0, -0.1),
            p(1, 1.0),
            DMatrix::from_column_slice(2, 1, &[p(2, 0.0), p(3, 1.0)]),
        )
        .map_err(err),
        "double_gyre" => Ok(systems::make_double_gyre_drifter(
            systems::DoubleGyreParams::new(p(0, 0.25), p(1, 2.0 * std::f64::consts::PI), p(2, 0.25))
                .map_err(err)?,
        )),
        other => Err(PyValueError::new_err(format!(
            "unknown system `{other}` (pendulum, duffing, double_well, slow_manifold, double_gyre)"
        ))),
    }
}

/// Unforced trajectory of a benchmark system with exact derivatives attached.
///
/// `params`: double_well `[a]`; slow_manifold `[mu, lambda, b1, b2]`;
/// double_gyre `[amplitude, omega, epsilon]`.
#[pyfunction]
#[pyo3(signature = (system, x0, t_final, dt, params = vec![]))]
fn simulate_unforced(system: &str, x0: Vec<f64>, t_final: f64, dt: f64, params: Vec<f64>) -> PyResult<PyTrajectory> {
    let sys = benchmark(system, &params)?;
    let mut t = systems::simulate_unforced(&sys, &DVector::from_vec(x0), (0.0, t_final), dt).map_err(err)?;
    t.derivatives = Some(systems::derivatives_exact(&sys, &t).map_err(err)?);
    Ok(PyTrajectory { inner: t })
}

/// Closed-loop run of the closed-form energy law `u = −sign(∂H/∂x2)√(Q/R)(H − E)`
/// on the pendulum or Duffing oscillator (analytic Hamiltonian).
#[pyfunction]
#[pyo3(signature = (system, x0, target, t_final, dt, q = 1.0, r = 1.0))]
fn energy_control_run(system: &str, x0: Vec<f64>, target: f64, t_final: f64, dt: f64, q: f64, r: f64) -> PyResult<PyTrajectory> {
    let sys = benchmark(system, &[])?;
    let h = sys.hamiltonian_fn().ok_or_else(|| PyValueError::new_err("system has no Hamiltonian"))?;
    let g = sys.hamiltonian_gradient_fn().expect("paired with the Hamiltonian");
    let ctrl = energy_control(move |x: &DVector<f64>| h(x), move |x: &DVector<f64>| g(x)[1], q, r, target).map_err(err)?;
    let t = systems::simulate(&sys, &DVector::from_vec(x0), &ctrl, (0.0, t_final), dt, false).map_err(err)?;
    Ok(PyTrajectory { inner: t })
}

fn model_dict<'py>(py: Python<'py>, m: &EigenfunctionModel) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lambda", (m.lambda.re, m.lambda.im))?;
    d.set_item("xi", m.xi_re())?;
    if !m.is_real() {
        d.set_item("xi_imag", m.xi_im())?;
    }
    d.set_item("support", m.support())?;
    d.set_item("residual", m.residual)?;
    d.set_item("nnz", m.nnz)?;
    d.set_item("expression", m.expression(1e-12))?;
    Ok(d)
}

type Matrices = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Stacked `(Theta, Gamma)` for trajectories returned by `simulate_unforced`.
#[pyfunction]
fn data_matrices(lib: &PyLibrary, trajectories: Vec<PyRef<'_, PyTrajectory>>) -> PyResult<Matrices> {
    let refs: Vec<&Trajectory> = trajectories.iter().map(|t| &t.inner).collect();
    let (theta, gamma) = identify::data_matrices(&lib.inner, &refs).map_err(err)?;
    Ok((from_matrix(&theta), from_matrix(&gamma)))
}

/// Sparse solution of `(λΘ − Γ)ξ = 0`.
#[pyfunction]
#[pyo3(signature = (lib, theta, gamma, lambda_re, lambda_im = 0.0, svd_tol = 1e-8, sparse_tol = 0.05, max_iter = 20))]
#[allow(clippy::too_many_arguments)]
fn nullspace_sparse<'py>(
    py: Python<'py>,
    lib: &PyLibrary,
    theta: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    lambda_re: f64,
    lambda_im: f64,
    svd_tol: f64,
    sparse_tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = NullspaceOptions {
        svd_tol,
        sparse_tol,
        max_iter,
        column_scaling: false,
    };
    let m = identify::nullspace_sparse(&to_matrix(&theta)?, &to_matrix(&gamma)?, Complex64::new(lambda_re, lambda_im), &opts)
        .map_err(err)?
        .with_library(&lib.inner);
    model_dict(py, &m)
}

/// Conserved quantity (`λ = 0`).
#[pyfunction]
#[pyo3(signature = (lib, theta, gamma, svd_tol = 1e-8, sparse_tol = 0.05))]
fn identify_conserved<'py>(
    py: Python<'py>,
    lib: &PyLibrary,
    theta: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    svd_tol: f64,
    sparse_tol: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = identify::identify_conserved(&to_matrix(&theta)?, &to_matrix(&gamma)?, svd_tol, sparse_tol)
        .map_err(err)?
        .with_library(&lib.inner);
    model_dict(py, &m)
}

/// Eigenvalues `(re, im)` of the least-squares generator `K = Θ†Γ`.
#[pyfunction]
fn generator_eigenvalues(theta: Vec<Vec<f64>>, gamma: Vec<Vec<f64>>) -> PyResult<Vec<(f64, f64)>> {
    let k = identify::generator_ls(&to_matrix(&theta)?, &to_matrix(&gamma)?).map_err(err)?;
    Ok(identify::generator_eigs(&k).map_err(err)?.into_iter().map(|(l, _)| (l.re, l.im)).collect())
}

/// Stabilizing CARE solution: `{"p", "gain", "residual"}`; raises `ValueError`
/// for unstabilizable or undetectable data.
#[pyfunction]
fn solve_care<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    r: Vec<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let sol = care(&to_matrix(&a)?, &to_matrix(&b)?, &to_matrix(&q)?, &to_matrix(&r)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("p", from_matrix(&sol.p))?;
    d.set_item("gain", from_matrix(&sol.gain))?;
    d.set_item("residual", sol.residual)?;
    Ok(d)
}

/// `[(name, topic, description)]` for every experiment.
#[pyfunction]
fn list_experiments() -> Vec<(String, String, String)> {
    experiments::list_experiments()
        .into_iter()
        .map(|e| (e.name, e.topic, e.description))
        .collect()
}

/// Run an experiment and return its summary as a JSON string.
#[pyfunction]
#[pyo3(signature = (name, out_dir, overrides = vec![]))]
fn run_experiment(name: &str, out_dir: std::path::PathBuf, overrides: Vec<(String, String)>) -> PyResult<String> {
    let exp: ExperimentName = name.parse().map_err(err)?;
    let cfg = ExperimentConfig::resolve(exp, None, &overrides, Some(out_dir)).map_err(err)?;
    let res = experiments::run(&cfg).map_err(err)?;
    serde_json::to_string(&res).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn kronic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLibrary>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(simulate_unforced, m)?)?;
    m.add_function(wrap_pyfunction!(energy_control_run, m)?)?;
    m.add_function(wrap_pyfunction!(data_matrices, m)?)?;
    m.add_function(wrap_pyfunction!(nullspace_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(identify_conserved, m)?)?;
    m.add_function(wrap_pyfunction!(generator_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(solve_care, m)?)?;
    m.add_function(wrap_pyfunction!(list_experiments, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
