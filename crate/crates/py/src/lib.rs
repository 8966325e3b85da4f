//! Python bindings for `gane`.

use std::path::PathBuf;

use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray2};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gane::checkpoint::{self, Checkpoint};
use gane::evaluator;
use gane::experiments;
use gane::model::{self, Mode, ModelConfig, ModelParams};
use gane::network_data::{self as data, Edge};
use gane::ot_solver::{self, CostMatrix, OtConfig};
use gane::trainer::{self, TrainConfig};
use gane::Error;

fn to_py(e: Error) -> PyErr {
    match &e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::NonFiniteGradient { .. } | Error::Diverged { .. } => {
            PyArithmeticError::new_err(e.to_string())
        }
        Error::Checkpoint(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Edges = Vec<(usize, usize, f64)>;
type EmbeddingPair<'py> = (Bound<'py, PyArray1<f64>>, Bound<'py, PyArray1<f64>>);

fn edges_from(raw: Edges) -> Vec<Edge> {
    raw.into_iter()
        .map(|(src, dst, weight)| Edge { src, dst, weight })
        .collect()
}

fn edges_to(edges: &[Edge]) -> Edges {
    edges.iter().map(|e| (e.src, e.dst, e.weight)).collect()
}

/// A directed, weighted graph with one text per node.
#[pyclass(module = "gane", name = "TextualNetwork", frozen)]
struct PyNetwork {
    inner: data::TextualNetwork,
    labels: Option<data::LabelMap>,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (edges, texts, min_count = 1))]
    fn new(edges: Edges, texts: Vec<String>, min_count: usize) -> PyResult<Self> {
        let inner = data::TextualNetwork::from_raw(edges_from(edges), &texts, min_count).map_err(to_py)?;
        Ok(PyNetwork { inner, labels: None })
    }

    #[staticmethod]
    #[pyo3(signature = (graph, text, labels = None, min_count = 1))]
    fn load(graph: PathBuf, text: PathBuf, labels: Option<PathBuf>, min_count: usize) -> PyResult<Self> {
        let (inner, labels) = data::load_dataset(&graph, &text, labels.as_deref(), min_count).map_err(to_py)?;
        Ok(PyNetwork { inner, labels })
    }

    #[getter]
    fn num_nodes(&self) -> usize {
        self.inner.num_nodes()
    }

    #[getter]
    fn edges(&self) -> Edges {
        edges_to(self.inner.edges())
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab().len()
    }

    /// Class index per node (`None` when unlabeled), if labels were loaded.
    #[getter]
    fn labels(&self) -> Option<Vec<Option<usize>>> {
        self.labels.as_ref().map(|l| l.labels.clone())
    }

    fn tokens(&self, node: usize) -> PyResult<Vec<String>> {
        let text = self.inner.text(node).map_err(to_py)?;
        Ok(text
            .ids()
            .iter()
            .map(|&i| self.inner.vocab().token(i).unwrap_or("<unk>").to_string())
            .collect())
    }

    /// `(train_edges, test_edges)` with `round(ratio * |E|)` training edges.
    fn split(&self, ratio: f64, seed: u64) -> PyResult<(Edges, Edges)> {
        let s = data::split_edges(&self.inner, ratio, seed).map_err(to_py)?;
        Ok((edges_to(&s.train), edges_to(&s.test)))
    }

    /// Same nodes and texts with a different edge list.
    fn with_edges(&self, edges: Edges) -> PyResult<Self> {
        let inner = self.inner.with_edges(edges_from(edges)).map_err(to_py)?;
        Ok(PyNetwork {
            inner,
            labels: self.labels.clone(),
        })
    }

    fn __repr__(&self) -> String {
        let s = self.inner.stats();
        format!(
            "TextualNetwork(nodes={}, edges={}, avg_text_len={:.1})",
            s.nodes, s.edges, s.avg_text_len
        )
    }
}

/// Trained parameters plus the per-epoch loss trace.
#[pyclass(module = "gane", name = "Model", frozen)]
struct PyModel {
    params: ModelParams,
    loss_trace: Vec<f64>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ckpt = checkpoint::load(&path).map_err(to_py)?;
        Ok(PyModel {
            params: ckpt.params,
            loss_trace: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &Checkpoint::new(self.params.clone())).map_err(to_py)
    }

    #[getter]
    fn loss_trace(&self) -> Vec<f64> {
        self.loss_trace.clone()
    }

    #[getter]
    fn mode(&self) -> String {
        self.params.config.mode.to_string()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.params.config.dim
    }

    fn score(&self, network: &PyNetwork, u: usize, v: usize) -> PyResult<f64> {
        model::pair_score(u, v, &network.inner, &self.params).map_err(to_py)
    }

    /// `(z_{u|v}, z_{v|u})` as 1-d arrays.
    fn contextual_embedding<'py>(
        &self,
        py: Python<'py>,
        network: &PyNetwork,
        u: usize,
        v: usize,
    ) -> PyResult<EmbeddingPair<'py>> {
        let (zu, zv) = model::contextual_embedding(u, v, &network.inner, &self.params).map_err(to_py)?;
        Ok((zu.to_vector().into_pyarray(py), zv.to_vector().into_pyarray(py)))
    }

    /// Neighbor-averaged embeddings, one row per node.
    fn static_embeddings<'py>(&self, py: Python<'py>, network: &PyNetwork) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let emb = model::static_embeddings(&network.inner, &self.params).map_err(to_py)?;
        Ok(emb.into_pyarray(py))
    }

    /// Plan, parsed weights and softmax baseline for one pair.
    fn attention<'py>(&self, py: Python<'py>, network: &PyNetwork, u: usize, v: usize) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let d = experiments::attention_dump(u, v, &network.inner, &self.params).map_err(to_py)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("tokens_u", d.tokens_u.clone())?;
        out.set_item("tokens_v", d.tokens_v.clone())?;
        out.set_item("plan_nonzero_fraction", d.plan_nonzero_fraction())?;
        out.set_item("softmax_nonzero_fraction", d.baseline_nonzero_fraction())?;
        out.set_item("plan", d.plan.into_pyarray(py))?;
        out.set_item("softmax_baseline", d.baseline.into_pyarray(py))?;
        out.set_item("parsed_weights", d.parsed.map(|w| w.into_pyarray(py)))?;
        Ok(out)
    }

    fn link_auc(&self, network: &PyNetwork, test_edges: Edges, seed: u64) -> PyResult<f64> {
        evaluator::auc_link_prediction(&self.params, &edges_from(test_edges), &network.inner, seed).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(mode={}, dim={}, nodes={})",
            self.params.config.mode,
            self.params.config.dim,
            self.params.num_nodes()
        )
    }
}

/// Trains a model on every edge of `network`.
#[pyfunction]
#[pyo3(signature = (
    network, mode = "gane-ot", dim = 100, word_dim = 100, lr = 1e-3, epochs = 10,
    batch = 64, neg = 1, seed = 1, beta = 0.5, ot_iters = 50, ngram = 21, max_len = 300
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    network: &PyNetwork,
    mode: &str,
    dim: usize,
    word_dim: usize,
    lr: f64,
    epochs: usize,
    batch: usize,
    neg: usize,
    seed: u64,
    beta: f64,
    ot_iters: usize,
    ngram: usize,
    max_len: usize,
) -> PyResult<PyModel> {
    let mode: Mode = mode.parse().map_err(to_py)?;
    let cfg = TrainConfig {
        model: ModelConfig {
            mode,
            dim,
            word_dim,
            ot: OtConfig {
                beta,
                outer_iters: ot_iters,
                ..OtConfig::default()
            },
            ngram,
            max_len,
            ..ModelConfig::default()
        },
        lr,
        epochs,
        batch_size: batch,
        negatives: neg,
        seed,
    };
    let net = &network.inner;
    let out = py.detach(|| trainer::train(net, &cfg)).map_err(to_py)?;
    Ok(PyModel {
        params: out.params,
        loss_trace: out.loss_trace,
    })
}

/// Entropic proximal-point OT with uniform marginals.
#[pyfunction]
#[pyo3(signature = (cost, beta = 0.5, outer_iters = 50, inner_iters = 1))]
fn solve_ot<'py>(
    py: Python<'py>,
    cost: PyReadonlyArray2<'py, f64>,
    beta: f64,
    outer_iters: usize,
    inner_iters: usize,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let cost = CostMatrix::new(cost.as_array().to_owned()).map_err(to_py)?;
    let cfg = OtConfig {
        beta,
        outer_iters,
        inner_iters,
        ..OtConfig::default()
    };
    let plan = ot_solver::solve_ot(&cost, &cfg).map_err(to_py)?;
    Ok(plan.into_entries().into_pyarray(py))
}

/// Exact OT for at most 4x4 costs.
#[pyfunction]
fn exact_ot<'py>(py: Python<'py>, cost: PyReadonlyArray2<'py, f64>) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let cost = CostMatrix::new(cost.as_array().to_owned()).map_err(to_py)?;
    let plan = ot_solver::exact_ot_small(&cost).map_err(to_py)?;
    Ok(plan.into_entries().into_pyarray(py))
}

#[pyfunction]
fn macro_f1(predictions: Vec<usize>, truth: Vec<usize>) -> PyResult<f64> {
    evaluator::macro_f1(&predictions, &truth).map_err(to_py)
}

/// AUC over `(positive, negative)` score pairs, ties counted half.
#[pyfunction]
fn auc(pairs: Vec<(f64, f64)>) -> PyResult<f64> {
    evaluator::auc_from_scores(&pairs).map_err(to_py)
}

#[pymodule]
#[pyo3(name = "gane")]
fn gane_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(solve_ot, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ot, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    Ok(())
}
