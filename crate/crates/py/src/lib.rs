//! Python bindings for the backdoor laboratory: datasets, poisoning,
//! victim training, trigger detection, and the attack metrics.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use backdoor_lab::corpus::{self, FileFormat, Split};
use backdoor_lab::detect::{verdict, Lexicons};
use backdoor_lab::evaluate;
use backdoor_lab::fixtures;
use backdoor_lab::poison::{
    build_poisoned_test, build_poisoned_train, InsertPosition, PoisonPlan, Rewriter, TriggerSpec,
};
use backdoor_lab::victim::{self, FeatureHasher, TrainConfig};
use backdoor_lab::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn spec_from(kind: &str, payload: Option<&str>, position: &str) -> PyResult<TriggerSpec> {
    let position = match position {
        "random" => InsertPosition::Random,
        "begin" => InsertPosition::Begin,
        "middle" => InsertPosition::Middle,
        "end" => InsertPosition::End,
        other => return Err(PyValueError::new_err(format!("unknown position {other:?}"))),
    };
    let spec = match kind {
        "rare_word" => TriggerSpec::rare_word(payload.unwrap_or_default(), position),
        "fixed_sentence" => TriggerSpec::fixed_sentence(payload.unwrap_or_default(), position),
        "dual_trigger" => TriggerSpec::dual_trigger(),
        "subjunctive_only" => TriggerSpec::subjunctive_only(),
        other => return Err(PyValueError::new_err(format!("unknown trigger {other:?}"))),
    };
    spec.validate().map_err(to_py)?;
    Ok(spec)
}

/// A labeled text dataset with provenance tracking.
#[pyclass(name = "Dataset")]
#[derive(Clone)]
struct PyDataset {
    inner: corpus::Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.label_space.names.clone()
    }

    /// Rows as (id, text, label_name, poisoned) tuples.
    fn samples(&self) -> Vec<(String, String, String, bool)> {
        self.inner
            .samples
            .iter()
            .map(|s| {
                (
                    s.id.clone(),
                    s.text.clone(),
                    self.inner.label_space.names[s.label].clone(),
                    s.is_poisoned(),
                )
            })
            .collect()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        corpus::save_dataset(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (path, labels, split = "test"))]
    fn load(path: &str, labels: Vec<String>, split: &str) -> PyResult<Self> {
        let label_space = corpus::LabelSpace::new(labels).map_err(to_py)?;
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(PyValueError::new_err(format!("unknown split {other:?}"))),
        };
        let format = if path.ends_with(".tsv") {
            FileFormat::Tsv
        } else {
            FileFormat::Jsonl
        };
        corpus::load_dataset(path, format, &label_space, split)
            .map(|inner| PyDataset { inner })
            .map_err(to_py)
    }
}

/// Trained victim classifier.
#[pyclass(name = "VictimModel")]
struct PyVictimModel {
    inner: victim::VictimModel,
}

#[pymethods]
impl PyVictimModel {
    /// Predicted label name and class probabilities.
    fn predict(&self, text: &str) -> (String, Vec<f64>) {
        let (label, probs) = self.inner.predict(text);
        (self.inner.label_space.names[label].clone(), probs)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        victim::save_model(&self.inner, path).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        victim::load_model(path)
            .map(|inner| PyVictimModel { inner })
            .map_err(to_py)
    }
}

/// Deterministic synthetic two-class review corpus: (train, test).
#[pyfunction]
fn synthetic_reviews(n_train: usize, n_test: usize, seed: u64) -> (PyDataset, PyDataset) {
    let (train, test) = fixtures::synthetic_reviews(n_train, n_test, seed);
    (PyDataset { inner: train }, PyDataset { inner: test })
}

fn plan_for(d: &corpus::Dataset, rate: f64, target_label: &str, seed: u64) -> PyResult<PoisonPlan> {
    let target = d
        .label_space
        .index_of(target_label)
        .ok_or_else(|| PyValueError::new_err(format!("unknown label {target_label:?}")))?;
    Ok(PoisonPlan::new(rate, target, seed))
}

/// Mixed training set: floor(rate * len) samples replaced by poisoned
/// versions carrying the target label.
#[pyfunction]
#[pyo3(signature = (d, kind, rate, target_label, seed, payload = None, position = "random"))]
fn poison_train(
    d: &PyDataset,
    kind: &str,
    rate: f64,
    target_label: &str,
    seed: u64,
    payload: Option<&str>,
    position: &str,
) -> PyResult<PyDataset> {
    let spec = spec_from(kind, payload, position)?;
    let plan = plan_for(&d.inner, rate, target_label, seed)?;
    build_poisoned_train(&d.inner, &spec, &plan, &Rewriter::default())
        .map(|inner| PyDataset { inner })
        .map_err(to_py)
}

/// Fully poisoned, relabeled test set (target-class samples excluded).
#[pyfunction]
#[pyo3(signature = (d, kind, target_label, seed, payload = None, position = "random"))]
fn poison_test(
    d: &PyDataset,
    kind: &str,
    target_label: &str,
    seed: u64,
    payload: Option<&str>,
    position: &str,
) -> PyResult<PyDataset> {
    let spec = spec_from(kind, payload, position)?;
    let plan = plan_for(&d.inner, 1.0, target_label, seed)?;
    build_poisoned_test(&d.inner, &spec, &plan, &Rewriter::default())
        .map(|inner| PyDataset { inner })
        .map_err(to_py)
}

/// Trains the hashed bag-of-n-grams softmax classifier.
#[pyfunction]
#[pyo3(signature = (d, seed, epochs = 5, eta_max = 5.0e-4, batch_size = 32, dimension = 1 << 18))]
fn train_victim(
    d: &PyDataset,
    seed: u64,
    epochs: usize,
    eta_max: f64,
    batch_size: usize,
    dimension: usize,
) -> PyResult<PyVictimModel> {
    let hasher = FeatureHasher::new(dimension, vec![1, 2], true).map_err(to_py)?;
    let cfg = TrainConfig {
        epochs,
        batch_size,
        eta_max,
        seed,
        ..TrainConfig::default()
    };
    victim::train(&d.inner, &hasher, &cfg)
        .map(|inner| PyVictimModel { inner })
        .map_err(to_py)
}

/// Clean accuracy on an unpoisoned test set.
#[pyfunction]
fn cacc(model: &PyVictimModel, d: &PyDataset) -> PyResult<f64> {
    evaluate::cacc(&model.inner, &d.inner).map_err(to_py)
}

/// Attack success rate on a poisoned, relabeled test set.
#[pyfunction]
fn asr(model: &PyVictimModel, d: &PyDataset, target_label: &str) -> PyResult<f64> {
    let target = d
        .inner
        .label_space
        .index_of(target_label)
        .ok_or_else(|| PyValueError::new_err(format!("unknown label {target_label:?}")))?;
    evaluate::asr(&model.inner, &d.inner, target).map_err(to_py)
}

/// (syntactic_template, subjunctive_mood) trigger verdict for a text.
#[pyfunction]
fn detect(text: &str) -> (bool, bool) {
    let v = verdict(text, &Lexicons::default());
    (v.syntactic_match, v.subjunctive_match)
}

/// Deterministic dual-trigger rewrite of a text.
#[pyfunction]
fn rewrite_dual(text: &str) -> PyResult<String> {
    let sample = corpus::LabeledSample::clean("0", text, 0);
    Rewriter::default()
        .dual_trigger(&sample)
        .map(|p| p.poisoned_text)
        .map_err(to_py)
}

#[pymodule]
fn backdoor_lab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyVictimModel>()?;
    m.add_function(wrap_pyfunction!(synthetic_reviews, m)?)?;
    m.add_function(wrap_pyfunction!(poison_train, m)?)?;
    m.add_function(wrap_pyfunction!(poison_test, m)?)?;
    m.add_function(wrap_pyfunction!(train_victim, m)?)?;
    m.add_function(wrap_pyfunction!(cacc, m)?)?;
    m.add_function(wrap_pyfunction!(asr, m)?)?;
    m.add_function(wrap_pyfunction!(detect, m)?)?;
    m.add_function(wrap_pyfunction!(rewrite_dual, m)?)?;
    Ok(())
}
