//! Python bindings for `algotest`.

use algotest::adversary;
use algotest::bounds::{self, BoundInputs};
use algotest::btest::{self, BinomTestConfig};
use algotest::dist::{self, FiniteDistribution};
use algotest::estimate::{self, StabilityMode};
use algotest::harness::run_test_seeded;
use algotest::rng::{stream, TrialStreams};
use algotest::runner::{self, ExperimentConfig};
use algotest::{
    parse_algorithm, Algorithm as _, AlgorithmHandle, DataPoint, Dataset, Error, LossFn, Seed,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Distribution(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn loss(name: &str) -> PyResult<LossFn> {
    name.parse().map_err(py_err)
}

fn points(data: Vec<(i64, i64)>) -> Vec<DataPoint> {
    data.into_iter()
        .map(|(x, y)| DataPoint::new(x, y))
        .collect()
}

/// A finite distribution over integer `(x, y)` pairs.
#[pyclass(name = "Distribution", module = "algotest_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyDistribution {
    inner: FiniteDistribution,
}

#[pymethods]
impl PyDistribution {
    /// `atoms` is a list of `(x, y, p)`; masses must sum to 1.
    #[new]
    #[pyo3(signature = (atoms, name = "custom"))]
    fn new(atoms: Vec<(i64, i64, f64)>, name: &str) -> PyResult<Self> {
        let atoms = atoms
            .into_iter()
            .map(|(x, y, p)| (DataPoint::new(x, y), p))
            .collect();
        Ok(Self {
            inner: FiniteDistribution::new(name, atoms).map_err(py_err)?,
        })
    }

    /// `two-atom`, `toy`, `three-atom` or `bernoulli:<r>`.
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: runner::preset_distribution(name).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: FiniteDistribution::from_json(s).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn atoms(&self) -> Vec<(i64, i64, f64)> {
        self.inner
            .atoms()
            .iter()
            .map(|a| (a.point.x, a.point.y, a.p))
            .collect()
    }

    fn total_variation(&self, other: &PyDistribution) -> f64 {
        dist::total_variation(&self.inner, &other.inner)
    }

    /// `n` i.i.d. points drawn with a seeded stream.
    fn sample(&self, n: usize, seed: u64) -> Vec<(i64, i64)> {
        self.inner
            .sample_dataset(n, &mut stream(seed, 0))
            .iter()
            .map(|p| (p.x, p.y))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Distribution({:?}, {} atoms)",
            self.inner.name(),
            self.inner.len()
        )
    }
}

/// A built-in learning algorithm given by spec, e.g. `knn:1`, `majority`,
/// `constant:0`, `seed-coin:0.5`.
#[pyclass(name = "Algorithm", module = "algotest_py", frozen)]
struct PyAlgorithm {
    inner: AlgorithmHandle,
}

#[pymethods]
impl PyAlgorithm {
    #[new]
    fn new(spec: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_algorithm(spec).map_err(py_err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    /// Fit on `data` with `seed` and predict at each of `xs`.
    #[pyo3(signature = (data, xs, seed = 0))]
    fn fit_predict(&self, data: Vec<(i64, i64)>, xs: Vec<i64>, seed: u64) -> PyResult<Vec<f64>> {
        let model = self.inner.fit(&points(data), Seed(seed)).map_err(py_err)?;
        Ok(xs.into_iter().map(|x| model.predict(x)).collect())
    }

    /// Exact `R_{P,n}(A)` by enumeration.
    #[pyo3(signature = (dist, n, loss_name = "zero-one"))]
    fn risk_exact(&self, dist: &PyDistribution, n: usize, loss_name: &str) -> PyResult<f64> {
        let l = loss(loss_name)?;
        Ok(
            estimate::algorithm_risk_exact(&self.inner, &dist.inner, n, &l)
                .map_err(py_err)?
                .value,
        )
    }

    /// Exact `beta_q` by enumeration.
    #[pyo3(signature = (dist, n, q, loss_name = "zero-one"))]
    fn stability_exact(
        &self,
        dist: &PyDistribution,
        n: usize,
        q: u32,
        loss_name: &str,
    ) -> PyResult<f64> {
        let l = loss(loss_name)?;
        Ok(
            estimate::stability_exact(&self.inner, &dist.inner, n, q, &l)
                .map_err(py_err)?
                .value(),
        )
    }

    /// Monte Carlo `beta_q` as `(value, stderr)`.
    #[pyo3(signature = (dist, n, q, trials, seed = 0, loss_name = "zero-one", workers = None))]
    #[allow(clippy::too_many_arguments)]
    fn stability_mc(
        &self,
        py: Python<'_>,
        dist: &PyDistribution,
        n: usize,
        q: u32,
        trials: u64,
        seed: u64,
        loss_name: &str,
        workers: Option<usize>,
    ) -> PyResult<(f64, f64)> {
        let l = loss(loss_name)?;
        let est = py
            .detach(|| {
                estimate::stability_mc(
                    &self.inner,
                    &dist.inner,
                    n,
                    q,
                    &l,
                    StabilityMode::AllIndices,
                    trials,
                    TrialStreams::new(seed),
                    workers,
                )
            })
            .map_err(py_err)?;
        Ok((est.value(), est.estimate.stderr))
    }

    /// Run the Binomial test on `data`; returns 1 to certify `R < tau`.
    #[pyo3(signature = (data, n, tau, alpha, seed = 0, loss_name = "zero-one"))]
    fn binomial_test(
        &self,
        data: Vec<(i64, i64)>,
        n: usize,
        tau: f64,
        alpha: f64,
        seed: u64,
        loss_name: &str,
    ) -> PyResult<u8> {
        let protocol = btest::binom_test_protocol(BinomTestConfig {
            n,
            tau,
            alpha,
            loss: loss(loss_name)?,
        })
        .map_err(py_err)?;
        let t = run_test_seeded(&protocol, &self.inner, &Dataset::new(points(data)), seed)
            .map_err(py_err)?;
        Ok(t.to_record().decision)
    }

    fn __repr__(&self) -> String {
        format!("Algorithm({:?})", self.inner.name())
    }
}

/// `(k_star, a_star)` of the randomized Binomial test.
#[pyfunction]
fn binomial_critical(m: u64, tau: f64, alpha: f64) -> PyResult<(u64, f64)> {
    let cv = btest::binomial_critical(m, tau, alpha).map_err(py_err)?;
    Ok((cv.k_star, cv.a_star))
}

#[pyfunction]
fn binom_test_exact_power(m: u64, tau: f64, alpha: f64, r: f64) -> PyResult<f64> {
    btest::binom_test_exact_power(m, tau, alpha, r).map_err(py_err)
}

/// Closed-form power when `alpha < (1 - tau)^m`, else `None`.
#[pyfunction]
fn binom_closed_form_power(m: u64, tau: f64, alpha: f64, r: f64) -> Option<f64> {
    btest::binom_closed_form_power(m, tau, alpha, r)
}

#[pyfunction]
fn compare_binom_exact_power(m: u64, p_plus: f64, p_minus: f64, alpha: f64) -> PyResult<f64> {
    btest::compare_binom_exact_power(m, p_plus, p_minus, alpha).map_err(py_err)
}

#[pyfunction]
fn tilde_tau(tau: f64, alpha: f64, big_n: f64) -> f64 {
    bounds::tilde_tau(tau, alpha, big_n)
}

/// Power limit for evaluation tests; raises on violated provisos.
#[pyfunction]
#[pyo3(signature = (alpha, tau, big_n, n, r, r_max = 1.0))]
fn eval_power_bound(alpha: f64, tau: f64, big_n: f64, n: f64, r: f64, r_max: f64) -> PyResult<f64> {
    bounds::eval_power_bound(&BoundInputs {
        alpha,
        tau,
        big_n,
        n,
        r,
        r_max,
        b: r_max,
    })
    .map_err(py_err)
}

/// Power limit for comparison tests; raises on violated provisos.
#[pyfunction]
#[pyo3(signature = (alpha, big_n, n, delta, delta_max, b = 1.0))]
fn compare_power_bound(
    alpha: f64,
    big_n: f64,
    n: f64,
    delta: f64,
    delta_max: f64,
    b: f64,
) -> PyResult<f64> {
    bounds::compare_power_bound(&BoundInputs {
        alpha,
        tau: 0.0,
        big_n,
        n,
        r: delta,
        r_max: delta_max,
        b,
    })
    .map_err(py_err)
}

/// `(regime, threshold, margin)` for a stability level.
#[pyfunction]
#[pyo3(signature = (gamma_q, q, n, b = 1.0, comparison = false))]
fn regime_classify(
    gamma_q: f64,
    q: u32,
    n: usize,
    b: f64,
    comparison: bool,
) -> PyResult<(String, f64, f64)> {
    let r = bounds::regime_classify(gamma_q, q, n, b, comparison).map_err(py_err)?;
    Ok((r.regime.to_string(), r.threshold, r.margin))
}

/// Injected mass `c` for the evaluation adversary.
#[pyfunction]
fn choose_c(alpha: f64, tau: f64, big_n: f64, n: f64, r: f64, r_max: f64) -> PyResult<f64> {
    adversary::choose_c(alpha, tau, big_n, n, r, r_max).map_err(py_err)
}

/// Run an experiment from its JSON configuration. Returns a dict with
/// `csv`, `json` (either may be `None`) and `failures`.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(py_err)?;
    let out = py.detach(|| runner::run_experiment(&cfg)).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("csv", out.csv)?;
    d.set_item("json", out.json)?;
    d.set_item("failures", out.failures)?;
    Ok(d)
}

/// Re-run a recorded transcript; `True` when every round matches.
#[pyfunction]
fn replay(record_json: &str) -> PyResult<bool> {
    Ok(runner::replay(record_json).map_err(py_err)?.matches)
}

#[pymodule]
fn algotest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDistribution>()?;
    m.add_class::<PyAlgorithm>()?;
    m.add_function(wrap_pyfunction!(binomial_critical, m)?)?;
    m.add_function(wrap_pyfunction!(binom_test_exact_power, m)?)?;
    m.add_function(wrap_pyfunction!(binom_closed_form_power, m)?)?;
    m.add_function(wrap_pyfunction!(compare_binom_exact_power, m)?)?;
    m.add_function(wrap_pyfunction!(tilde_tau, m)?)?;
    m.add_function(wrap_pyfunction!(eval_power_bound, m)?)?;
    m.add_function(wrap_pyfunction!(compare_power_bound, m)?)?;
    m.add_function(wrap_pyfunction!(regime_classify, m)?)?;
    m.add_function(wrap_pyfunction!(choose_c, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    Ok(())
}
