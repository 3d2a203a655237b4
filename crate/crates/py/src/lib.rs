//! Python bindings for the grouped network estimators.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gmegnn_core::balance::{GroupData, GroupedPopulation};
use gmegnn_core::baselines::mundlak_ols;
use gmegnn_core::drestimator::{self, EstimatorConfig, TrainingScope};
use gmegnn_core::exposure::ExposureMapping;
use gmegnn_core::hacinfer;
use gmegnn_core::netgraph::{self, GraphStats};
use gmegnn_core::simlab::{self, Dependence, Heterogeneity, Method, Scenario, SimulationPlan};
use gmegnn_core::Error;

fn to_py(e: Error) -> PyErr {
    match e.exit_code() {
        2 | 3 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Graph", module = "gmegnn", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyGraph {
    inner: netgraph::Graph,
}

#[pymethods]
impl PyGraph {
    #[new]
    fn new(n: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        netgraph::Graph::from_edges(n, &edges).map(|inner| PyGraph { inner }).map_err(to_py)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    #[getter]
    fn n_edges(&self) -> usize {
        self.inner.n_edges()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.edges()
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        if i >= self.inner.n_nodes() {
            return Err(PyValueError::new_err(format!("node {i} out of range")));
        }
        Ok(self.inner.neighbors(i).to_vec())
    }

    #[pyo3(signature = (source, cap=None))]
    fn bfs_distances(&self, source: usize, cap: Option<usize>) -> PyResult<Vec<Option<usize>>> {
        self.inner.bfs_distances(source, cap).map_err(to_py)
    }

    fn neighborhood(&self, i: usize, radius: usize) -> PyResult<Vec<usize>> {
        self.inner.neighborhood(i, radius).map_err(to_py)
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.stats())
    }

    fn __repr__(&self) -> String {
        format!("Graph(n_nodes={}, n_edges={})", self.inner.n_nodes(), self.inner.n_edges())
    }
}

#[pyfunction]
#[pyo3(signature = (n, k, p, seed=0))]
fn ws_generate(n: usize, k: usize, p: f64, seed: u64) -> PyResult<PyGraph> {
    netgraph::ws_generate(n, k, p, seed).map(|inner| PyGraph { inner }).map_err(to_py)
}

/// Balancing statistic `(w̄, x̄, mean A·w, mean A·x)` of one group.
#[pyfunction]
fn balancing_statistic(graph: &PyGraph, w: Vec<u8>, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let n = w.len();
    let g = GroupData::new("g", graph.inner.clone(), w, x, vec![0.0; n]).map_err(to_py)?;
    Ok(g.balancing_statistic().to_vec())
}

#[pyfunction]
fn unit_dr(y: f64, level: usize, contrast: (usize, usize), p_t: f64, p_tp: f64, mu_t: f64, mu_tp: f64) -> f64 {
    drestimator::unit_dr(y, level, contrast, p_t, p_tp, mu_t, mu_tp)
}

/// HAC bandwidth from average path length, average degree and group size.
#[pyfunction]
#[pyo3(signature = (avg_path_length, avg_degree, n))]
fn bandwidth(avg_path_length: Option<f64>, avg_degree: f64, n: usize) -> (usize, String) {
    let stats = GraphStats {
        n_nodes: n,
        n_edges: 0,
        avg_degree,
        avg_path_length,
        n_components: 1,
    };
    let (b, branch) = hacinfer::bandwidth(&stats, n);
    (b, format!("{branch:?}"))
}

#[pyclass(name = "Population", module = "gmegnn", frozen)]
pub struct PyPopulation {
    inner: GroupedPopulation,
}

#[pymethods]
impl PyPopulation {
    #[staticmethod]
    fn from_csv(nodes: PathBuf, edges: PathBuf) -> PyResult<Self> {
        gmegnn_core::io::read_population(&nodes, &edges)
            .map(|inner| PyPopulation { inner })
            .map_err(to_py)
    }

    fn to_csv(&self, nodes: PathBuf, edges: PathBuf) -> PyResult<()> {
        gmegnn_core::io::write_population(&self.inner, &nodes, &edges).map_err(to_py)
    }

    #[getter]
    fn n_groups(&self) -> usize {
        self.inner.n_groups()
    }

    #[getter]
    fn n_total(&self) -> usize {
        self.inner.n_total()
    }

    fn group_ids(&self) -> Vec<String> {
        self.inner.groups().iter().map(|g| g.group_id.clone()).collect()
    }

    fn graph(&self, index: usize) -> PyResult<PyGraph> {
        self.inner
            .groups()
            .get(index)
            .map(|g| PyGraph { inner: g.graph.clone() })
            .ok_or_else(|| PyValueError::new_err(format!("group index {index} out of range")))
    }

    fn __repr__(&self) -> String {
        format!("Population(n_groups={}, n_total={})", self.inner.n_groups(), self.inner.n_total())
    }
}

/// Pooled Mundlak OLS; returns `(tau_hat, fit)`.
#[pyfunction]
fn mundlak<'py>(py: Python<'py>, pop: &PyPopulation) -> PyResult<(f64, Bound<'py, PyAny>)> {
    let (tau, fit) = mundlak_ols(&pop.inner).map_err(to_py)?;
    Ok((tau, json_to_py(py, &fit)?))
}

fn scenario(heterogeneity: &str, dependence: &str, groups: usize, ng_min: usize, ng_max: usize, seed: u64) -> PyResult<Scenario> {
    let h: Heterogeneity = heterogeneity.parse().map_err(to_py)?;
    let d: Dependence = dependence.parse().map_err(to_py)?;
    Ok(Scenario {
        heterogeneity: h,
        dependence: d,
        groups,
        ng_min,
        ng_max,
        replications: 1,
        base_seed: seed,
    })
}

#[pyfunction]
#[pyo3(signature = (heterogeneity="low", dependence="weak", groups=20, ng_min=100, ng_max=200, seed=0, rep=0))]
fn generate_replication(
    heterogeneity: &str,
    dependence: &str,
    groups: usize,
    ng_min: usize,
    ng_max: usize,
    seed: u64,
    rep: usize,
) -> PyResult<PyPopulation> {
    let s = scenario(heterogeneity, dependence, groups, ng_min, ng_max, seed)?;
    let (pop, _) = simlab::generate_replication(&s, rep).map_err(to_py)?;
    Ok(PyPopulation { inner: pop })
}

#[allow(clippy::too_many_arguments)]
fn estimator_config(
    exposure: &str,
    contrast: (usize, usize),
    eta: f64,
    seed: u64,
    lr: f64,
    epochs: usize,
    hidden: usize,
    dropout: f64,
    scope: &str,
) -> PyResult<EstimatorConfig> {
    let mut cfg = EstimatorConfig {
        mapping: exposure.parse::<ExposureMapping>().map_err(to_py)?,
        contrast,
        eta,
        scope: scope.parse::<TrainingScope>().map_err(to_py)?,
        ..EstimatorConfig::default()
    };
    cfg.gnn.seed = seed;
    cfg.gnn.learning_rate = lr;
    cfg.gnn.epochs = epochs;
    cfg.gnn.hidden_channels = hidden;
    cfg.gnn.dropout_rate = dropout;
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Exposure-contrast estimate as a dict (every estimate field plus
/// per-group diagnostics).
#[pyfunction]
#[pyo3(signature = (pop, method="gme-gnn", exposure="any-neighbor", contrast=(1, 0), eta=0.01, seed=0, lr=0.005, epochs=300, hidden=16, dropout=0.1, scope="pooled"))]
#[allow(clippy::too_many_arguments)]
fn estimate<'py>(
    py: Python<'py>,
    pop: &PyPopulation,
    method: &str,
    exposure: &str,
    contrast: (usize, usize),
    eta: f64,
    seed: u64,
    lr: f64,
    epochs: usize,
    hidden: usize,
    dropout: f64,
    scope: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = estimator_config(exposure, contrast, eta, seed, lr, epochs, hidden, dropout, scope)?;
    cfg.include_balance = match method {
        "gme-gnn" => true,
        "gnn-only" => false,
        _ => return Err(PyValueError::new_err(format!("unknown method {method:?}"))),
    };
    let est = py
        .detach(|| drestimator::estimate_full(&pop.inner, &cfg))
        .map_err(to_py)?
        .0;
    json_to_py(py, &est)
}

/// Runs a simulation campaign; returns `{"summaries": [...], "rows": [...]}`.
#[pyfunction]
#[pyo3(signature = (heterogeneity="low", dependence="weak", groups=20, ng_min=100, ng_max=200, replications=50, seed=0, methods=vec!["gme-gnn".to_string(), "gnn-only".to_string(), "mundlak".to_string()], lr=0.005, epochs=300))]
#[allow(clippy::too_many_arguments)]
fn run_scenario<'py>(
    py: Python<'py>,
    heterogeneity: &str,
    dependence: &str,
    groups: usize,
    ng_min: usize,
    ng_max: usize,
    replications: usize,
    seed: u64,
    methods: Vec<String>,
    lr: f64,
    epochs: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let mut s = scenario(heterogeneity, dependence, groups, ng_min, ng_max, seed)?;
    s.replications = replications;
    let methods = methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let mut est = EstimatorConfig::default();
    est.gnn.learning_rate = lr;
    est.gnn.epochs = epochs;
    let plan = SimulationPlan::new(s, est, methods);
    let report = py.detach(|| simlab::run_scenario(&plan)).map_err(to_py)?;
    json_to_py(py, &report)
}

#[pymodule]
fn gmegnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyPopulation>()?;
    m.add_function(wrap_pyfunction!(ws_generate, m)?)?;
    m.add_function(wrap_pyfunction!(balancing_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(unit_dr, m)?)?;
    m.add_function(wrap_pyfunction!(bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(mundlak, m)?)?;
    m.add_function(wrap_pyfunction!(generate_replication, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
