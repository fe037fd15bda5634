//! Python bindings: tensors, the synthetic graph, structural pretraining,
//! training, checkpoints and filtered evaluation.

use std::collections::BTreeSet;
use std::path::PathBuf;

use imf_core::data::{
    default_feature_path, load_features as read_features, write_features, Direction, FilterIndex, MissingFill,
    Modality, Query, Split,
};
use imf_core::eval::{evaluate, rank_one};
use imf_core::fusion::{contrastive_loss as cl_loss, MODALITY_PAIRS};
use imf_core::model::{Ablation, Features, ImfModel, ModelMeta, Snapshot};
use imf_core::structural::pretrain as gat_pretrain;
use imf_core::synthetic::{generate, RunSettings, SyntheticConfig, SyntheticKg};
use imf_core::trainer::{train as fit, TrainConfig};
use imf_core::{checkpoint, Error, Tensor};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_)
        | Error::Data(_)
        | Error::Parse { .. }
        | Error::Vocab(_)
        | Error::Checkpoint(_)
        | Error::Shape { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn direction(s: &str) -> PyResult<Direction> {
    match s {
        "tail" => Ok(Direction::Tail),
        "head" => Ok(Direction::Head),
        other => Err(PyValueError::new_err(format!(
            "direction must be \"tail\" or \"head\", got {other:?}"
        ))),
    }
}

/// Python dict to JSON through the standard json module.
fn to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_json<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (value.to_string(),))
}

/// Overlays `overlay` onto `base`, rejecting keys `base` does not have.
fn merge(base: &mut Value, overlay: Value, path: &str) -> PyResult<()> {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let key = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => return Err(PyValueError::new_err(format!("unknown setting {key:?}"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn settings(py: Python<'_>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<RunSettings> {
    let mut value = serde_json::to_value(RunSettings::default()).expect("settings serialize");
    if let Some(d) = overrides {
        merge(&mut value, to_json(py, d.as_any())?, "")?;
    }
    serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Dense row-major f64 tensor.
#[pyclass(name = "Tensor", module = "imf", skip_from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::new(&shape, data).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Self {
            inner: Tensor::from_rows(&rows).map_err(py_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (shape, seed=0))]
    fn xavier(shape: Vec<usize>, seed: u64) -> Self {
        Self {
            inner: Tensor::xavier_uniform(&shape, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    /// Nested lists for 2-d tensors, a flat list otherwise.
    fn tolist(&self) -> Vec<Vec<f64>> {
        if self.inner.ndim() == 2 {
            (0..self.inner.rows()).map(|i| self.inner.row(i).to_vec()).collect()
        } else {
            vec![self.inner.data().to_vec()]
        }
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.matmul(&other.inner).map_err(py_err)?,
        })
    }

    fn transpose(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.transpose().map_err(py_err)?,
        })
    }

    fn __matmul__(&self, other: &PyTensor) -> PyResult<Self> {
        self.matmul(other)
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.inner == other.inner
    }

    fn __len__(&self) -> usize {
        self.inner.shape().first().copied().unwrap_or(1)
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }

    /// Writes the tensor as a binary feature matrix.
    fn save_features(&self, path: PathBuf) -> PyResult<()> {
        write_features(&path, &self.inner).map_err(py_err)
    }
}

/// Seeded synthetic multimodal graph with visual and textual features.
#[pyclass(name = "SyntheticGraph", module = "imf")]
struct PyGraph {
    inner: SyntheticKg,
}

#[pymethods]
impl PyGraph {
    #[new]
    #[pyo3(signature = (seed=7, entities=300, noise=0.3))]
    fn new(seed: u64, entities: usize, noise: f64) -> PyResult<Self> {
        let config = SyntheticConfig {
            seed,
            num_entities: entities,
            noise,
            ..SyntheticConfig::default()
        };
        Ok(Self {
            inner: generate(&config).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_entities(&self) -> usize {
        self.inner.dataset.num_entities()
    }

    #[getter]
    fn num_relations(&self) -> usize {
        self.inner.dataset.num_relations()
    }

    #[getter]
    fn relations(&self) -> Vec<String> {
        self.inner.dataset.vocab.relations().to_vec()
    }

    #[getter]
    fn visual(&self) -> PyTensor {
        PyTensor {
            inner: self.inner.visual.clone(),
        }
    }

    #[getter]
    fn textual(&self) -> PyTensor {
        PyTensor {
            inner: self.inner.textual.clone(),
        }
    }

    /// `(head, relation, tail)` id triples of a split.
    #[pyo3(signature = (split="train"))]
    fn triples(&self, split: &str) -> PyResult<Vec<(usize, usize, usize)>> {
        let split: Split = parse(split)?;
        Ok(self
            .inner
            .dataset
            .triples
            .split(split)
            .iter()
            .map(|t| (t.head, t.relation, t.tail))
            .collect())
    }

    /// Dataset directory plus visual and textual feature files, as `imf synth` writes them.
    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.dataset.save_dir(&dir).map_err(py_err)?;
        write_features(&default_feature_path(&dir, Modality::Visual), &self.inner.visual).map_err(py_err)?;
        write_features(&default_feature_path(&dir, Modality::Textual), &self.inner.textual).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let s = self.inner.dataset.stats();
        format!(
            "SyntheticGraph(entities={}, relations={}, train={}, valid={}, test={})",
            s.entities, s.relations, s.train, s.valid, s.test
        )
    }
}

fn features_from(dict: &Bound<'_, PyDict>) -> PyResult<Features> {
    let mut features = Features::new();
    for (k, v) in dict.iter() {
        let m: Modality = parse(&k.extract::<String>()?)?;
        let t = v.extract::<PyRef<'_, PyTensor>>()?;
        features.insert(m, t.inner.clone()).map_err(py_err)?;
    }
    Ok(features)
}

/// Trained or loaded model parameters.
#[pyclass(name = "Model", module = "imf")]
struct PyModel {
    inner: ImfModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, info=None))]
    fn save(&self, py: Python<'_>, path: PathBuf, info: Option<&Bound<'_, PyAny>>) -> PyResult<()> {
        let info = match info {
            Some(obj) => to_json(py, obj)?,
            None => Value::Null,
        };
        checkpoint::save(&path, &self.inner, info).map_err(py_err)
    }

    #[getter]
    fn ablation(&self) -> &'static str {
        self.inner.config().ablation.label()
    }

    /// Decision weights of the scorers, keyed by modality tag.
    fn gammas(&self) -> PyResult<Vec<(String, f64)>> {
        let w = self.inner.decision_weights().map_err(py_err)?;
        Ok(w.modalities()
            .iter()
            .map(|m| m.tag().to_string())
            .zip(w.gammas())
            .collect())
    }

    /// Parameter names and shapes.
    fn parameters(&self) -> Vec<(String, Vec<usize>)> {
        self.inner
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    }

    /// Binds feature matrices (`{"s": Tensor, "v": ..., "t": ...}`) for inference.
    fn predictor(&self, features: &Bound<'_, PyDict>) -> PyResult<PyPredictor> {
        let features = features_from(features)?;
        Ok(PyPredictor {
            snapshot: self.inner.snapshot(&features).map_err(py_err)?,
            num_relations: self.inner.meta.num_relations,
        })
    }
}

/// Frozen model with its features, answering 1-vs-all queries.
#[pyclass(name = "Predictor", module = "imf")]
struct PyPredictor {
    snapshot: Snapshot,
    num_relations: usize,
}

impl PyPredictor {
    fn query(&self, entity: usize, relation: usize, dir: &str) -> PyResult<Query> {
        if relation >= self.num_relations {
            return Err(PyValueError::new_err(format!("relation {relation} out of range")));
        }
        Ok(match direction(dir)? {
            Direction::Tail => Query::tail(entity, relation),
            Direction::Head => Query::head(entity, relation),
        })
    }
}

#[pymethods]
impl PyPredictor {
    /// Joint scores of every candidate entity.
    #[pyo3(signature = (entity, relation, direction="tail"))]
    fn predict(&self, entity: usize, relation: usize, direction: &str) -> PyResult<Vec<f64>> {
        let q = self.query(entity, relation, direction)?;
        Ok(self.snapshot.predict(&q).map_err(py_err)?.values().to_vec())
    }

    /// Scores of each modality's scorer, keyed by modality tag.
    #[pyo3(signature = (entity, relation, direction="tail"))]
    fn modality_scores(&self, entity: usize, relation: usize, direction: &str) -> PyResult<Vec<(String, Vec<f64>)>> {
        let q = self.query(entity, relation, direction)?;
        let scores = self.snapshot.modality_scores(&q).map_err(py_err)?;
        Ok(self
            .snapshot
            .modalities()
            .iter()
            .map(|m| m.tag().to_string())
            .zip(scores.into_iter().map(|s| s.values().to_vec()))
            .collect())
    }

    /// Entity table (`"s"`, `"v"`, `"t"` or `"m"`) in the shared latent space.
    fn entity_table(&self, modality: &str) -> PyResult<PyTensor> {
        let m: Modality = parse(modality)?;
        Ok(PyTensor {
            inner: self.snapshot.entity_table(m).map_err(py_err)?.clone(),
        })
    }

    #[pyo3(signature = (modality, entity, relation, direction="tail"))]
    fn contextual_embedding(
        &self,
        modality: &str,
        entity: usize,
        relation: usize,
        direction: &str,
    ) -> PyResult<Vec<f64>> {
        let m: Modality = parse(modality)?;
        let d = self::direction(direction)?;
        self.snapshot
            .contextual_embedding(m, entity, relation, d)
            .map_err(py_err)
    }

    /// Filtered ranking metrics on a split of `graph`, as a nested dict.
    #[pyo3(signature = (graph, split="test", seed=0))]
    fn evaluate<'py>(&self, py: Python<'py>, graph: &PyGraph, split: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let split: Split = parse(split)?;
        let store = &graph.inner.dataset.triples;
        let filter = FilterIndex::build(store);
        let eval = py
            .detach(|| evaluate(&self.snapshot, store.split(split), &filter, seed))
            .map_err(py_err)?;
        from_json(py, &serde_json::to_value(eval.report).expect("report serializes"))
    }
}

#[pyclass(name = "TrainResult", module = "imf", get_all)]
struct PyTrainResult {
    model: Py<PyModel>,
    best_epoch: usize,
    best_valid_mrr: Option<f64>,
    initial_loss: Option<f64>,
    epoch_losses: Vec<f64>,
    stopped_early: bool,
}

/// Pretrains the graph-attention encoder on the training split and returns structural features.
#[pyfunction]
#[pyo3(signature = (graph, seed=0, config=None))]
fn pretrain(py: Python<'_>, graph: &PyGraph, seed: u64, config: Option<&Bound<'_, PyDict>>) -> PyResult<PyTensor> {
    let gat = settings(py, None)?.gat;
    let mut value = serde_json::to_value(&gat).expect("config serializes");
    if let Some(d) = config {
        merge(&mut value, to_json(py, d.as_any())?, "")?;
    }
    let mut gat: imf_core::structural::GatConfig =
        serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    gat.seed = seed;
    let data = &graph.inner.dataset;
    let out = py
        .detach(|| gat_pretrain(data.num_entities(), data.num_relations(), &data.triples.train, &gat))
        .map_err(py_err)?;
    Ok(PyTensor {
        inner: out.features.matrix,
    })
}

/// Trains a model on `graph`. `config` overlays the defaults, e.g.
/// `{"model": {"dim": 16}, "train": {"epochs": 5}}`.
#[pyfunction]
#[pyo3(signature = (graph, features, ablation="S+V+T", seed=0, config=None))]
fn train(
    py: Python<'_>,
    graph: &PyGraph,
    features: &Bound<'_, PyDict>,
    ablation: &str,
    seed: u64,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<PyTrainResult> {
    let ablation: Ablation = parse(ablation)?;
    let features = features_from(features)?;
    let s = settings(py, config)?;
    let data = &graph.inner.dataset;
    let mut widths = [0; 3];
    for m in ablation.required() {
        widths[m.index()] = features
            .width(m)
            .ok_or_else(|| PyValueError::new_err(format!("{} features required by {}", m.name(), ablation.label())))?;
    }
    let meta = ModelMeta {
        config: imf_core::model::ModelConfig { ablation, ..s.model },
        num_entities: data.num_entities(),
        num_relations: data.num_relations(),
        feature_widths: widths,
    };
    let train_config = TrainConfig { seed, ..s.train };
    let out = py
        .detach(|| fit(meta, &features, &data.triples, &train_config, &mut |_| Ok(())))
        .map_err(py_err)?;
    Ok(PyTrainResult {
        model: Py::new(py, PyModel { inner: out.best })?,
        best_epoch: out.best_epoch,
        best_valid_mrr: out.best_valid_mrr,
        initial_loss: out.initial_loss,
        epoch_losses: out.epoch_losses,
        stopped_early: out.stopped_early,
    })
}

/// Cross-modal contrastive loss of two or three row-aligned views.
#[pyfunction]
fn contrastive_loss(views: Vec<PyRef<'_, PyTensor>>) -> PyResult<f64> {
    let refs: Vec<&Tensor> = views.iter().map(|v| &v.inner).collect();
    let pairs: &[(usize, usize)] = match refs.len() {
        2 => &MODALITY_PAIRS[..1],
        3 => &MODALITY_PAIRS,
        n => return Err(PyValueError::new_err(format!("need 2 or 3 views, got {n}"))),
    };
    cl_loss(&refs, pairs).map_err(py_err)
}

/// 1-based rank of `true_id` with filtered candidates skipped and ties placed at random.
#[pyfunction]
#[pyo3(signature = (scores, true_id, filter=None, seed=0))]
fn rank(scores: Vec<f64>, true_id: usize, filter: Option<Vec<usize>>, seed: u64) -> PyResult<usize> {
    let filter: Option<BTreeSet<usize>> = filter.map(|f| f.into_iter().collect());
    rank_one(&scores, true_id, filter.as_ref(), &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)
}

/// Reads a binary or CSV feature matrix with `num_entities` rows.
#[pyfunction]
#[pyo3(signature = (path, num_entities, fill="zero"))]
fn load_features(path: PathBuf, num_entities: usize, fill: &str) -> PyResult<PyTensor> {
    let fill = match fill {
        "zero" => MissingFill::Zero,
        "mean" => MissingFill::Mean,
        other => {
            return Err(PyValueError::new_err(format!(
                "fill must be \"zero\" or \"mean\", got {other:?}"
            )))
        }
    };
    let f = read_features(&path, Modality::Visual, num_entities, fill).map_err(py_err)?;
    Ok(PyTensor { inner: f.matrix })
}

#[pymodule]
fn imf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyGraph>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPredictor>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(load_features, m)?)?;
    Ok(())
}
