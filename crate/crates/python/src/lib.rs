use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fedrep_core::baselines;
use fedrep_core::fedrep::{self, DataMode, FedConfig, GradMode, InitMode};
use fedrep_core::fullmeas::{self, FullMeasProblem};
use fedrep_core::harness::{self, VerifyOptions};
use fedrep_core::linalg::{self, Matrix};
use fedrep_core::synthetic;

fn to_py(e: fedrep_core::Error) -> PyErr {
    match e {
        fedrep_core::Error::Config { .. }
        | fedrep_core::Error::Dimension(_)
        | fedrep_core::Error::DimensionMismatch(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

type Rows = Vec<Vec<f64>>;

fn from_matrix(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_enum<T: FromName>(name: &str) -> PyResult<T> {
    T::from_name(name).ok_or_else(|| PyValueError::new_err(format!("unknown mode {name:?}")))
}

trait FromName: Sized {
    fn from_name(s: &str) -> Option<Self>;
}

impl FromName for DataMode {
    fn from_name(s: &str) -> Option<Self> {
        match s {
            "fresh" => Some(DataMode::Fresh),
            "fixed" => Some(DataMode::Fixed),
            _ => None,
        }
    }
}

impl FromName for GradMode {
    fn from_name(s: &str) -> Option<Self> {
        match s {
            "empirical" => Some(GradMode::Empirical),
            "population" => Some(GradMode::Population),
            _ => None,
        }
    }
}

impl FromName for InitMode {
    fn from_name(s: &str) -> Option<Self> {
        match s {
            "random" => Some(InitMode::Random),
            "spectral" => Some(InitMode::Spectral),
            _ => None,
        }
    }
}

/// Ground truth `(W*, B*)` for `n` clients in dimension `d` with rank `k`.
#[pyclass(name = "GroundTruth", module = "fedrep_lab", from_py_object)]
#[derive(Clone)]
struct PyGroundTruth {
    inner: synthetic::GroundTruth,
}

#[pymethods]
impl PyGroundTruth {
    #[new]
    #[pyo3(signature = (n, d, k, seed=0))]
    fn new(n: usize, d: usize, k: usize, seed: u64) -> PyResult<Self> {
        synthetic::generate_ground_truth(n, d, k, seed)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn w_star(&self) -> Vec<Vec<f64>> {
        from_matrix(&self.inner.w_star)
    }

    #[getter]
    fn b_star(&self) -> Vec<Vec<f64>> {
        from_matrix(self.inner.b_star.matrix())
    }

    fn __repr__(&self) -> String {
        format!(
            "GroundTruth(n={}, d={}, k={}, seed={})",
            self.inner.n(),
            self.inner.d(),
            self.inner.k(),
            self.inner.seed
        )
    }
}

/// Federated run parameters.
#[pyclass(name = "FedConfig", module = "fedrep_lab", from_py_object)]
#[derive(Clone)]
struct PyFedConfig {
    inner: FedConfig,
}

#[pymethods]
impl PyFedConfig {
    #[new]
    #[pyo3(signature = (
        n=100, d=10, k=2, m=5, r=0.1, eta=None, rounds=500, seed=0, noise_var=1e-3,
        ortho=false, data_mode="fresh", grad_mode="empirical", init="random", init_steps=10
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n: usize,
        d: usize,
        k: usize,
        m: usize,
        r: f64,
        eta: Option<f64>,
        rounds: usize,
        seed: u64,
        noise_var: f64,
        ortho: bool,
        data_mode: &str,
        grad_mode: &str,
        init: &str,
        init_steps: usize,
    ) -> PyResult<Self> {
        let inner = FedConfig {
            n,
            d,
            k,
            m,
            r,
            eta,
            rounds,
            seed,
            noise_var,
            ortho,
            data_mode: parse_enum(data_mode)?,
            grad_mode: parse_enum(grad_mode)?,
            init: parse_enum(init)?,
            init_steps,
        };
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn participants(&self) -> usize {
        self.inner.participants()
    }

    #[getter]
    fn eta(&self) -> Option<f64> {
        self.inner.eta
    }

    #[getter]
    fn rounds(&self) -> usize {
        self.inner.rounds
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
}

/// Per-round trace of a federated run.
#[pyclass(name = "FedTrace", module = "fedrep_lab")]
struct PyFedTrace {
    inner: fedrep::FedTrace,
}

#[pymethods]
impl PyFedTrace {
    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn e0(&self) -> f64 {
        self.inner.e0
    }

    #[getter]
    fn rate_bound(&self) -> f64 {
        self.inner.rate_bound()
    }

    #[getter]
    fn final_dist(&self) -> f64 {
        self.inner.final_dist()
    }

    #[getter]
    fn dists(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.dist).collect()
    }

    #[getter]
    fn pop_losses(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.pop_loss).collect()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.inner.warnings.clone()
    }

    #[getter]
    fn final_b(&self) -> Vec<Vec<f64>> {
        from_matrix(&self.inner.final_state.b)
    }

    fn max_contraction_ratio(&self) -> f64 {
        self.inner.max_contraction_ratio()
    }

    fn rounds_to(&self, threshold: f64) -> Option<usize> {
        self.inner.rounds_to(threshold)
    }

    fn to_csv(&self) -> String {
        self.inner.table().to_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.records.len()
    }
}

#[pyfunction]
fn run_fedrep(gt: &PyGroundTruth, config: &PyFedConfig) -> PyResult<PyFedTrace> {
    fedrep::run_fedrep(&gt.inner, &config.inner)
        .map(|inner| PyFedTrace { inner })
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (gt, config, tau=1, alpha=None))]
fn run_gdgd(
    gt: &PyGroundTruth,
    config: &PyFedConfig,
    tau: usize,
    alpha: Option<f64>,
) -> PyResult<PyFedTrace> {
    baselines::run_gdgd(&gt.inner, &config.inner, tau, alpha)
        .map(|inner| PyFedTrace { inner })
        .map_err(to_py)
}

/// Full-measurement run on a random rank-`k` target; returns a dict.
#[pyfunction]
#[pyo3(signature = (n=30, d=20, k=3, rounds=100, seed=0, eta=None))]
fn run_fullmeas(
    py: Python<'_>,
    n: usize,
    d: usize,
    k: usize,
    rounds: usize,
    seed: u64,
    eta: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let problem = FullMeasProblem::random(n, d, k, seed).map_err(to_py)?;
    let v0 = fullmeas::random_orthonormal_start(d, k, seed).map_err(to_py)?;
    let eta = match eta {
        Some(e) => e,
        None => fullmeas::theorem_step_size(&problem, &Matrix::identity(k, k)).map_err(to_py)?,
    };
    let trace = fullmeas::run_fullmeas(&problem, &v0, eta, rounds).map_err(to_py)?;
    let checks = trace.check_theorem();
    let out = pyo3::types::PyDict::new(py);
    out.set_item("eta", trace.eta)?;
    out.set_item("rate", trace.rate())?;
    out.set_item("final_loss", trace.final_loss())?;
    out.set_item("loss_bound", trace.loss_bound())?;
    out.set_item(
        "losses",
        trace.records.iter().map(|r| r.loss).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "dists",
        trace.records.iter().map(|r| r.dist).collect::<Vec<_>>(),
    )?;
    let named = pyo3::types::PyDict::new(py);
    for (name, ok) in checks.named() {
        named.set_item(name, ok)?;
    }
    out.set_item("checks", named)?;
    Ok(out.into_any().unbind())
}

/// Subspace distance `‖B̂₁⊥ᵀ B̂₂‖₂` after orthonormalizing both inputs.
#[pyfunction]
fn principal_angle_distance(b1: Vec<Vec<f64>>, b2: Vec<Vec<f64>>) -> PyResult<f64> {
    linalg::principal_angle_distance(&to_matrix(b1)?, &to_matrix(b2)?).map_err(to_py)
}

/// Thin QR; returns `(Q, R)` with a nonnegative diagonal in `R`.
#[pyfunction]
fn qr(a: Rows) -> PyResult<(Rows, Rows)> {
    let res = linalg::qr_decompose(&to_matrix(a)?).map_err(to_py)?;
    Ok((from_matrix(res.q.matrix()), from_matrix(&res.r)))
}

/// New-client mean squared errors for a learned representation.
#[pyfunction]
#[pyo3(signature = (gt, b_learned, m_new, noise_var=1e-3, seed=0, test_size=baselines::DEFAULT_TEST_SIZE))]
fn new_client_eval(
    gt: &PyGroundTruth,
    b_learned: Vec<Vec<f64>>,
    m_new: usize,
    noise_var: f64,
    seed: u64,
    test_size: usize,
) -> PyResult<(f64, f64, f64)> {
    let b = to_matrix(b_learned)?;
    let rep = baselines::new_client_eval(&gt.inner, &b, m_new, noise_var, seed, test_size)
        .map_err(to_py)?;
    Ok((rep.mse_fedrep, rep.mse_fedavg_style, rep.mse_local))
}

/// Runs the acceptance battery; returns `(id, name, status, detail)` tuples.
#[pyfunction]
#[pyo3(signature = (eta_scale=1.0, threads=None))]
fn verify(
    py: Python<'_>,
    eta_scale: f64,
    threads: Option<usize>,
) -> Vec<(u32, String, String, String)> {
    let report = py.detach(|| harness::verify_suite(&VerifyOptions { eta_scale, threads }));
    report
        .checks
        .iter()
        .map(|c| {
            (
                c.id,
                c.name.to_string(),
                c.status().to_string(),
                c.detail.clone(),
            )
        })
        .collect()
}

#[pymodule]
fn fedrep_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGroundTruth>()?;
    m.add_class::<PyFedConfig>()?;
    m.add_class::<PyFedTrace>()?;
    m.add_function(wrap_pyfunction!(run_fedrep, m)?)?;
    m.add_function(wrap_pyfunction!(run_gdgd, m)?)?;
    m.add_function(wrap_pyfunction!(run_fullmeas, m)?)?;
    m.add_function(wrap_pyfunction!(principal_angle_distance, m)?)?;
    m.add_function(wrap_pyfunction!(qr, m)?)?;
    m.add_function(wrap_pyfunction!(new_client_eval, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
