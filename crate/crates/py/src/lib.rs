use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use textid_core::config::RunConfig;
use textid_core::corpus::{self, Dataset, ItemRecord, PreparedData};
use textid_core::eval::{self, EvalOptions, EvalReport};
use textid_core::prompting::TemplateBank;
use textid_core::synth::{generate, SynthSpec};
use textid_core::training::{self, alternate_train};
use textid_core::Error;

fn py_err(e: Error) -> PyErr {
    match (&e, e.exit_code()) {
        (Error::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, 2) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("dataset", &r.dataset)?;
    let mode = match r.mode {
        eval::EvalMode::Standard => "standard",
        eval::EvalMode::ZeroShot => "zero_shot",
        eval::EvalMode::Validation => "validation",
    };
    d.set_item("mode", mode)?;
    d.set_item("users", r.users)?;
    d.set_item("hr@5", r.hr5)?;
    d.set_item("hr@10", r.hr10)?;
    d.set_item("ndcg@5", r.ndcg5)?;
    d.set_item("ndcg@10", r.ndcg10)?;
    let ranks: Vec<(String, String, Option<usize>)> = r
        .ranks
        .iter()
        .map(|x| (x.user.clone(), x.target.clone(), x.rank))
        .collect();
    d.set_item("ranks", ranks)?;
    Ok(d)
}

/// Writes a synthetic raw dataset and returns `(users, items)`.
#[pyfunction]
#[pyo3(signature = (out, pattern = "cyclic", seed = 0, name = None, users = None))]
fn synth(out: PathBuf, pattern: &str, seed: u64, name: Option<String>, users: Option<usize>) -> PyResult<(usize, usize)> {
    let mut spec = match pattern {
        "cyclic" => SynthSpec::cyclic(seed),
        "periodic" => SynthSpec::periodic("periodic", seed),
        other => return Err(PyValueError::new_err(format!("unknown pattern {other:?}"))),
    };
    if let Some(name) = name {
        spec.name = name;
    }
    if let Some(users) = users {
        spec.users = users;
    }
    let data = generate(&spec).map_err(py_err)?;
    data.write_dir(&out).map_err(py_err)?;
    Ok((data.logs.len(), data.items.len()))
}

/// Filters a raw dataset to its k-core, splits it and writes the result.
/// Returns the number of users kept.
#[pyfunction]
#[pyo3(signature = (data, out, k = 5, name = None))]
fn ingest(data: PathBuf, out: PathBuf, k: usize, name: Option<String>) -> PyResult<usize> {
    let name = name.unwrap_or_else(|| {
        data.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "data".into())
    });
    let raw = Dataset::load_dir(&data, &name).map_err(py_err)?;
    let filtered = corpus::drop_short_logs(&corpus::filter_k_core(&raw, k).map_err(py_err)?);
    let prepared = PreparedData::from_dataset(&filtered).map_err(py_err)?;
    prepared.write_dir(&out).map_err(py_err)?;
    Ok(prepared.split.test.len())
}

/// Runs alternating training on a prepared dataset and writes bundles under
/// `out`. `overrides` take the `section.field=value` form.
#[pyfunction]
#[pyo3(signature = (data, out, config = None, overrides = Vec::new(), seed = None))]
fn train(
    py: Python<'_>,
    data: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    overrides: Vec<String>,
    seed: Option<u64>,
) -> PyResult<usize> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p).map_err(py_err)?,
        None => RunConfig::default(),
    };
    for o in &overrides {
        cfg.set(o).map_err(py_err)?;
    }
    if let Some(seed) = seed {
        cfg.train.seed = seed;
    }
    let data = PreparedData::load_dir(&data).map_err(py_err)?;
    let bundle = py
        .detach(|| alternate_train(&data, TemplateBank::default(), &cfg.model, &cfg.allocator, &cfg.train, Some(&out)))
        .map_err(py_err)?;
    Ok(bundle.iteration)
}

/// Flattens `(field, value)` pairs into the text fed to the ID generator.
#[pyfunction]
fn flatten_metadata(fields: Vec<(String, String)>) -> String {
    let item = ItemRecord {
        item_key: String::new(),
        metadata: fields,
    };
    corpus::flatten_metadata(&item).0
}

/// `(hit, ndcg)` contribution of one 1-based rank at cutoff `k`.
#[pyfunction]
fn metric_at_k(rank: usize, k: usize) -> (f64, f64) {
    eval::metric_at_k(rank, k)
}

/// A trained bundle directory loaded into memory.
#[pyclass(name = "Bundle", frozen)]
struct PyBundle {
    inner: training::Bundle,
}

#[pymethods]
impl PyBundle {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        let inner = training::Bundle::load(&path).map_err(py_err)?;
        Ok(PyBundle { inner })
    }

    #[getter]
    fn iteration(&self) -> usize {
        self.inner.iteration
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab.size()
    }

    /// `(item_key, id_text)` pairs in registry order.
    fn item_ids(&self) -> Vec<(String, String)> {
        self.inner
            .registry
            .entries()
            .iter()
            .map(|e| (e.item_key.clone(), e.id.text.clone()))
            .collect()
    }

    /// Scores the held-out test items of a prepared dataset. With
    /// `zero_shot`, IDs are regenerated for the dataset's catalog first.
    #[pyo3(signature = (data, zero_shot = false, beam = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        data: PathBuf,
        zero_shot: bool,
        beam: Option<usize>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let prepared = PreparedData::load_dir(&data).map_err(py_err)?;
        let opts = EvalOptions {
            use_user_id: self.inner.use_user_id,
            beam,
            ..EvalOptions::default()
        };
        let bundle = &self.inner;
        let report = py
            .detach(|| {
                if zero_shot {
                    let hash = vocab_hash_of(&data)?;
                    eval::zero_shot_evaluate(bundle, &prepared, hash.as_deref(), &opts)
                } else {
                    eval::evaluate(bundle, &prepared, &opts)
                }
            })
            .map_err(py_err)?;
        report_dict(py, &report)
    }
}

fn vocab_hash_of(dir: &Path) -> textid_core::Result<Option<String>> {
    let path = dir.join("vocab.tsv");
    if path.exists() {
        Ok(Some(textid_core::tokenizer::Vocabulary::load(&path)?.hash()))
    } else {
        Ok(None)
    }
}

#[pymodule]
fn textid(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(ingest, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(flatten_metadata, m)?)?;
    m.add_function(wrap_pyfunction!(metric_at_k, m)?)?;
    m.add_class::<PyBundle>()?;
    Ok(())
}
