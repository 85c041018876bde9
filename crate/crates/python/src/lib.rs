//! Python bindings over `eegtext_core`.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use eegtext_core::cape::{parse_channel_name, ChannelId};
use eegtext_core::config::RunConfig;
use eegtext_core::diffcore::Tensor;
use eegtext_core::encoders::{ReportText, Section, SignalMatrix};
use eegtext_core::evalsuite::{self, MetricRecord};
use eegtext_core::{dcl, pipeline, synthdata, train, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::ChannelParse { .. } | Error::Contract(_) | Error::Shape { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } | Error::Data(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyArithmeticError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// (task, method, metric, k, value)
type PyRecord = (String, String, String, Option<usize>, f64);

fn records_to_py(records: &[MetricRecord]) -> Vec<PyRecord> {
    records
        .iter()
        .map(|r| {
            (
                r.task.clone(),
                r.method.clone(),
                r.metric.as_str().to_string(),
                r.k,
                r.value,
            )
        })
        .collect()
}

/// Run configuration; built from TOML text or defaults.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => RunConfig::from_toml_str(text).map_err(py_err)?,
            None => RunConfig::default(),
        };
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }
}

#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: synthdata::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn generate(config: &PyConfig) -> PyResult<Self> {
        let inner = synthdata::generate_corpus(&config.inner.data).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(config: &PyConfig, dir: PathBuf) -> PyResult<Self> {
        let inner = pipeline::load_corpus(&config.inner, &dir).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn write(&self, config: &PyConfig, dir: PathBuf) -> PyResult<()> {
        synthdata::write_corpus(&dir, &config.inner.data, &self.inner).map_err(py_err)
    }

    /// Sample counts per split.
    fn sizes(&self) -> Vec<(String, usize)> {
        self.inner
            .splits()
            .iter()
            .map(|(n, s)| (n.to_string(), s.len()))
            .collect()
    }

    /// Labels of one split as (pathological, gender, age_group) tuples.
    fn labels(&self, split: &str) -> PyResult<Vec<(String, String, String)>> {
        let samples = self.split(split)?;
        Ok(samples
            .iter()
            .map(|s| {
                (
                    s.labels.pathological.clone(),
                    s.labels.gender.clone(),
                    s.labels.age_group.clone(),
                )
            })
            .collect())
    }

    fn report(&self, split: &str, index: usize) -> PyResult<String> {
        let samples = self.split(split)?;
        let s = samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of {}", samples.len())))?;
        Ok(s.report.concatenated())
    }
}

impl PyCorpus {
    fn split(&self, name: &str) -> PyResult<&[synthdata::Sample]> {
        match name {
            "train" => Ok(&self.inner.train),
            "val" => Ok(&self.inner.val),
            "test" => Ok(&self.inner.test),
            _ => Err(PyValueError::new_err(format!("unknown split `{name}`"))),
        }
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: eegtext_core::model::Model,
    config: RunConfig,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let inner = eegtext_core::model::Model::new(config.inner.model.clone(), seed).map_err(py_err)?;
        Ok(Self {
            inner,
            config: config.inner.clone(),
        })
    }

    /// Trains from scratch and returns the best-validation model with its loss curve.
    #[staticmethod]
    #[pyo3(signature = (config, corpus, seed = 0))]
    fn train(py: Python<'_>, config: &PyConfig, corpus: &PyCorpus, seed: u64) -> PyResult<(Self, Vec<f64>)> {
        let outcome = py
            .detach(|| train::train(&config.inner, &corpus.inner, seed))
            .map_err(py_err)?;
        let curve = outcome.curve.iter().map(|p| p.loss).collect();
        Ok((
            Self {
                inner: outcome.model,
                config: config.inner.clone(),
            },
            curve,
        ))
    }

    #[staticmethod]
    fn load(config: &PyConfig, path: PathBuf) -> PyResult<Self> {
        let inner = pipeline::load_model(&config.inner, &path).map_err(py_err)?;
        Ok(Self {
            inner,
            config: config.inner.clone(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let ckpt = self
            .inner
            .checkpoint([("config_hash".to_string(), self.config.hash())])
            .map_err(py_err)?;
        ckpt.save(&path).map_err(py_err)
    }

    /// Global embedding of one recording given as rows of samples per channel.
    #[pyo3(signature = (rows, channels, reference = "average", sample_rate = 128.0))]
    fn embed_eeg(
        &self,
        rows: Vec<Vec<f64>>,
        channels: Vec<String>,
        reference: &str,
        sample_rate: f64,
    ) -> PyResult<Vec<f64>> {
        let ids = channels
            .iter()
            .map(|c| match c.split_once('-') {
                Some((a, b)) => ChannelId::bipolar(a, b),
                None => ChannelId::unipolar(c),
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(py_err)?;
        let reference = serde_json::from_value(serde_json::Value::String(reference.to_string()))
            .map_err(|e| PyValueError::new_err(format!("reference `{reference}`: {e}")))?;
        let t = rows.first().map(Vec::len).unwrap_or(0);
        let values = Tensor::from_rows(rows.len(), t, rows.concat()).map_err(py_err)?;
        let signal = SignalMatrix::new(ids, reference, values, sample_rate).map_err(py_err)?;
        let mut out = self.inner.eeg_global(&[&signal]).map_err(py_err)?;
        Ok(out.remove(0))
    }

    /// Report-only text embedding; the text is treated as one description section.
    fn embed_text(&self, text: &str) -> PyResult<Vec<f64>> {
        let report = ReportText::single(Section::Description, text);
        let feat = self.inner.text_feature(&report).map_err(py_err)?;
        let mut out = self.inner.text_global(&[&feat]).map_err(py_err)?;
        Ok(out.remove(0))
    }

    fn tau(&self) -> PyResult<f64> {
        self.inner.tau().map_err(py_err)
    }

    fn parameter_count(&self) -> usize {
        self.inner.store.trainable_scalar_count()
    }

    /// Zero-shot, probe and prompt-similarity records: (task, method, metric, k, value).
    #[pyo3(signature = (corpus, seed = 0))]
    fn evaluate(&self, py: Python<'_>, corpus: &PyCorpus, seed: u64) -> PyResult<Vec<PyRecord>> {
        let report = py
            .detach(|| pipeline::evaluate(&self.config, &self.inner, &corpus.inner, seed))
            .map_err(py_err)?;
        Ok(records_to_py(&report.records))
    }

    #[pyo3(signature = (corpus, seed = 0))]
    fn retrieval(&self, py: Python<'_>, corpus: &PyCorpus, seed: u64) -> PyResult<Vec<PyRecord>> {
        let records = py
            .detach(|| pipeline::retrieval(&self.config, &self.inner, &corpus.inner, seed))
            .map_err(py_err)?;
        Ok(records_to_py(&records))
    }
}

/// (region, hemisphere, number) of a 10-20 electrode label.
#[pyfunction]
fn parse_channel(name: &str) -> PyResult<(String, String, u32)> {
    let site = parse_channel_name(name).map_err(py_err)?;
    Ok((
        site.region.as_str().to_string(),
        site.hemisphere.as_str().to_string(),
        site.number,
    ))
}

#[pyfunction]
fn info_nce(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    dcl::info_nce(&a, &b, tau).map_err(py_err)
}

#[pyfunction]
fn balanced_accuracy(preds: Vec<usize>, labels: Vec<usize>, n_classes: usize) -> PyResult<f64> {
    evalsuite::balanced_accuracy(&preds, &labels, n_classes).map_err(py_err)
}

#[pyfunction]
fn auc_pr(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    evalsuite::auc_pr(&scores, &labels).map_err(py_err)
}

/// Maximum relative error of the training-objective gradient check per seed.
#[pyfunction]
#[pyo3(signature = (config, seed = 0, seeds = 3))]
fn gradcheck(config: &PyConfig, seed: u64, seeds: u64) -> PyResult<Vec<f64>> {
    let reports = pipeline::cmd_gradcheck(&config.inner, seed, seeds).map_err(py_err)?;
    Ok(reports.iter().map(|r| r.max_rel_error).collect())
}

#[pymodule]
fn eegtext(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(parse_channel, m)?)?;
    m.add_function(wrap_pyfunction!(info_nce, m)?)?;
    m.add_function(wrap_pyfunction!(balanced_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(auc_pr, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
