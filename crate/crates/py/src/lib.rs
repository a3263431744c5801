//! Python bindings: the personalization kernels plus a config-driven
//! experiment runner.
//!
//! Build the extension with `cargo build -p pfedsop-py --release` and place
//! `libpfedsop.so` on the Python path as `pfedsop.so` (see
//! `python/smoke_test.py`).

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pfedsop_core::config::parse_config;
use pfedsop_core::numkit::ParamVector;
use pfedsop_core::runner::run_in_memory;
use pfedsop_core::{pfedsop as alg, verify};

fn err(e: pfedsop_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Gompertz normalization of the angle between local and global updates.
#[pyfunction]
fn gompertz_weight(theta: f64, lam: f64) -> PyResult<f64> {
    alg::gompertz_weight(theta, lam).map_err(err)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    pfedsop_core::numkit::cosine_similarity(&ParamVector::new(a), &ParamVector::new(b)).map_err(err)
}

#[pyfunction]
fn angle_from_similarity(sim: f64) -> PyResult<f64> {
    pfedsop_core::numkit::angle_from_similarity(sim).map_err(err)
}

/// `(1 - beta) * delta_local + beta * delta_global`.
#[pyfunction]
fn personalized_update(
    delta_local: Vec<f64>,
    delta_global: Vec<f64>,
    beta: f64,
) -> PyResult<Vec<f64>> {
    alg::personalized_update(
        &ParamVector::new(delta_local),
        &ParamVector::new(delta_global),
        beta,
    )
    .map(ParamVector::into_vec)
    .map_err(err)
}

/// Closed-form second-order step through `delta delta^T + rho I`.
#[pyfunction]
fn fim_step(delta: Vec<f64>, rho: f64) -> PyResult<Vec<f64>> {
    alg::fim_step(&ParamVector::new(delta), rho)
        .map(ParamVector::into_vec)
        .map_err(err)
}

/// One full personalization step over flat parameter lists.
#[pyclass]
struct PersonalizeResult {
    #[pyo3(get)]
    model: Vec<f64>,
    #[pyo3(get)]
    sim: f64,
    #[pyo3(get)]
    theta: f64,
    #[pyo3(get)]
    beta: f64,
    #[pyo3(get)]
    step_norm: f64,
}

#[pyfunction]
#[pyo3(signature = (x_prev, delta_local, delta_global, eta1=1.0, rho=1.0, lam=1.0))]
fn personalize_model(
    x_prev: Vec<f64>,
    delta_local: Vec<f64>,
    delta_global: Vec<f64>,
    eta1: f64,
    rho: f64,
    lam: f64,
) -> PyResult<PersonalizeResult> {
    let (model, report) = alg::personalize_model(
        &ParamVector::new(x_prev),
        &ParamVector::new(delta_local),
        &ParamVector::new(delta_global),
        eta1,
        rho,
        lam,
    )
    .map_err(err)?;
    Ok(PersonalizeResult {
        model: model.into_vec(),
        sim: report.sim,
        theta: report.theta,
        beta: report.beta,
        step_norm: report.step_norm,
    })
}

/// Results of a full experiment run.
#[pyclass]
struct RunResult {
    /// (round, avg_train_loss, avg_test_accuracy) per round.
    #[pyo3(get)]
    summary: Vec<(u64, f64, f64)>,
    /// (client_id, best_test_accuracy) for every client ever sampled.
    #[pyo3(get)]
    best_per_client: Vec<(usize, f64)>,
    #[pyo3(get)]
    best_overall: Option<f64>,
}

/// Parse a flat `key = value` config and run it in memory.
#[pyfunction]
#[pyo3(signature = (config_text, threads=0))]
fn run_config(config_text: &str, threads: usize) -> PyResult<RunResult> {
    let config = parse_config(config_text).map_err(err)?;
    let output = run_in_memory(&config, threads).map_err(err)?;
    Ok(RunResult {
        summary: output
            .rounds
            .iter()
            .map(|m| (m.round, m.avg_train_loss, m.avg_test_accuracy))
            .collect(),
        best_per_client: output.best.per_client().collect(),
        best_overall: output.best.overall(),
    })
}

/// Run the numerical oracle suites; returns (name, passed, detail) triples.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn run_verification(seed: u64) -> Vec<(String, bool, String)> {
    verify::run_all(seed)
        .into_iter()
        .map(|r| (r.name.to_string(), r.passed, r.detail))
        .collect()
}

#[pymodule]
fn pfedsop(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gompertz_weight, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(angle_from_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(personalized_update, m)?)?;
    m.add_function(wrap_pyfunction!(fim_step, m)?)?;
    m.add_function(wrap_pyfunction!(personalize_model, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_verification, m)?)?;
    m.add_class::<PersonalizeResult>()?;
    m.add_class::<RunResult>()?;
    Ok(())
}
