//! Python bindings: CSI features, streaming curation, geodesics, metrics,
//! trained charts, record files and the pipeline commands.

use std::path::PathBuf;

use ndarray::Array2;
use num_complex::Complex64;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use streamchart::config::{RunConfig, Strategy};
use streamchart::io::{self, CsiRecord, ModelCheckpoint, SyntheticScenario, SyntheticStream};
use streamchart::pipeline;
use streamchart::{
    AntennaLayout, CoreMemory, CsiMatrix, DelayDomainCsi, DelayTransform, Error, GroundTruthPosition,
    MetricParams,
};

create_exception!(streamchart, StreamchartError, PyException);
create_exception!(streamchart, ConfigError, StreamchartError);
create_exception!(streamchart, DataError, StreamchartError);
create_exception!(streamchart, NumericError, StreamchartError);

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => ConfigError::new_err(msg),
        3 => DataError::new_err(msg),
        _ => NumericError::new_err(msg),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for streamchart::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn flatten<T: Copy>(rows: &[Vec<T>]) -> PyResult<(usize, usize, Vec<T>)> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(DataError::new_err("rows have different lengths"));
    }
    Ok((rows.len(), cols, rows.concat()))
}

fn csi_matrix(rows: &[Vec<Complex64>], index: u64, groups: Option<usize>) -> PyResult<CsiMatrix> {
    let (b, w, data) = flatten(rows)?;
    let m = CsiMatrix::new(b, w, data, index).py()?;
    match groups {
        Some(per) if per == 0 || b % per != 0 => Err(ConfigError::new_err(format!(
            "{b} antennas cannot be split into groups of {per}"
        ))),
        Some(per) => m.with_layout(AntennaLayout::uniform(b / per, per)).py(),
        None => Ok(m),
    }
}

fn delay_csi(rows: &[Vec<Complex64>], groups: Option<usize>) -> PyResult<DelayDomainCsi> {
    let (b, c, data) = flatten(rows)?;
    match groups {
        Some(per) if per == 0 || b % per != 0 => Err(ConfigError::new_err(format!(
            "{b} antennas cannot be split into groups of {per}"
        ))),
        Some(per) => DelayDomainCsi::with_layout(AntennaLayout::uniform(b / per, per), c, data).py(),
        None => DelayDomainCsi::new(b, c, data).py(),
    }
}

fn rows_of<T: Copy>(data: &[T], cols: usize) -> Vec<Vec<T>> {
    data.chunks(cols).map(<[T]>::to_vec).collect()
}

fn points(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    let (n, d, data) = flatten(rows)?;
    if d < 2 {
        return Err(DataError::new_err(format!("{what} needs at least two coordinates per point")));
    }
    let full = Array2::from_shape_vec((n, d), data).expect("shape checked");
    Ok(full.slice(ndarray::s![.., 0..2]).to_owned())
}

/// Truncated delay-domain CSI (first `taps` taps of the scaled inverse DFT),
/// one row per antenna.
#[pyfunction]
#[pyo3(signature = (csi, taps = 16))]
fn to_delay_domain(csi: Vec<Vec<Complex64>>, taps: usize) -> PyResult<Vec<Vec<Complex64>>> {
    let dd = streamchart::to_delay_domain(&csi_matrix(&csi, 0, None)?, taps).py()?;
    Ok(rows_of(dd.data(), dd.taps()))
}

/// Unit-norm vector of delay-tap magnitudes, antenna-major.
#[pyfunction]
fn extract_feature(delay: Vec<Vec<Complex64>>) -> PyResult<Vec<f64>> {
    Ok(streamchart::extract_feature(&delay_csi(&delay, None)?).py()?.into_vec())
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    streamchart::cosine_similarity(&a, &b).py()
}

/// A bounded CSI memory together with its curation strategy.
#[pyclass(unsendable)]
struct Curator {
    memory: CoreMemory,
    strategy: Strategy,
    curator: Box<dyn streamchart::Curator>,
    groups: Option<usize>,
}

#[pymethods]
impl Curator {
    #[new]
    #[pyo3(signature = (strategy = "sims", capacity = 1000, taps = 16, p_update = 0.5, p_tiebreak = 0.5, seed = 0, antennas_per_ap = None))]
    fn new(
        strategy: &str,
        capacity: usize,
        taps: usize,
        p_update: f64,
        p_tiebreak: f64,
        seed: u64,
        antennas_per_ap: Option<usize>,
    ) -> PyResult<Self> {
        let cfg = RunConfig {
            strategy: strategy.parse().py()?,
            capacity,
            taps,
            p_update,
            p_tiebreak,
            seed,
            ..RunConfig::default()
        };
        let curator = pipeline::make_curator(&cfg, cfg.strategy).py()?;
        Ok(Self {
            memory: CoreMemory::new(capacity, taps, cfg.storage).py()?,
            strategy: cfg.strategy,
            curator,
            groups: antennas_per_ap,
        })
    }

    /// Offers one CSI sample (antennas x subcarriers). Returns "filled",
    /// "replaced" or "discarded".
    #[pyo3(signature = (csi, index, position = None))]
    fn offer(&mut self, csi: Vec<Vec<Complex64>>, index: u64, position: Option<Vec<f64>>) -> PyResult<&'static str> {
        let m = csi_matrix(&csi, index, self.groups)?;
        let pos = position.map(GroundTruthPosition::new).transpose().py()?;
        let d = self.curator.offer(&mut self.memory, m, pos).py()?;
        Ok(match d.action {
            streamchart::CurationAction::InsertedWhileFilling { .. } => "filled",
            streamchart::CurationAction::Replaced { .. } => "replaced",
            streamchart::CurationAction::Discarded => "discarded",
        })
    }

    fn __len__(&self) -> usize {
        self.memory.len()
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.strategy.name()
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.memory.capacity()
    }

    /// Largest pairwise cosine similarity in the memory, if it holds two samples.
    #[getter]
    fn max_similarity(&self) -> Option<f64> {
        self.memory.max_pair().map(|p| p.similarity)
    }

    fn arrival_indices(&self) -> Vec<u64> {
        self.memory.samples().iter().map(|s| s.arrival_index).collect()
    }

    fn positions(&self) -> Vec<Option<Vec<f64>>> {
        self.memory
            .samples()
            .iter()
            .map(|s| s.position.as_ref().map(|p| p.coords().to_vec()))
            .collect()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.memory.samples().iter().map(|s| s.feature.as_slice().to_vec()).collect()
    }

    /// Geodesic dissimilarities over the stored samples.
    #[pyo3(signature = (neighbors = 20))]
    fn geodesics(&self, neighbors: usize) -> PyResult<Vec<Vec<f64>>> {
        let taps: Vec<_> = self.memory.samples().iter().map(|s| s.taps.clone()).collect();
        let (_, m) = streamchart::geodesic_dissimilarities(&taps, neighbors).py()?;
        Ok(rows_of(m.values(), m.len().max(1)))
    }

    /// Writes a memory checkpoint that `train` accepts.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_memory(path, &self.memory, self.strategy.name()).py()
    }
}

/// Iterator over the synthetic scenario: yields `(index, csi, position)`.
#[pyclass(unsendable)]
struct SyntheticRoute {
    stream: SyntheticStream,
}

#[pymethods]
impl SyntheticRoute {
    #[new]
    #[pyo3(signature = (samples = None, subcarriers = 1024, seed = 0, noise_std = 0.05, test = false))]
    fn new(samples: Option<usize>, subcarriers: usize, seed: u64, noise_std: f64, test: bool) -> PyResult<Self> {
        let mut s = SyntheticScenario::default().with_subcarriers(subcarriers).with_seed(seed);
        s.noise_std = noise_std;
        let s = match (test, samples) {
            (true, n) => s.test_variant(n.unwrap_or(1000)).py()?,
            (false, Some(n)) => s.with_num_samples(n).py()?,
            (false, None) => s,
        };
        Ok(Self { stream: s.stream().py()? })
    }

    fn __len__(&self) -> usize {
        self.stream.len()
    }

    fn __iter__(slf: PyRef<'_, Self>) -> PyRef<'_, Self> {
        slf
    }

    fn __next__(&mut self) -> Option<(u64, Vec<Vec<Complex64>>, Option<Vec<f64>>)> {
        self.stream.next().map(record_tuple)
    }
}

fn record_tuple(r: CsiRecord) -> (u64, Vec<Vec<Complex64>>, Option<Vec<f64>>) {
    (
        r.csi.sample_index,
        rows_of(r.csi.data(), r.csi.subcarriers()),
        r.position.map(|p| p.coords().to_vec()),
    )
}

/// All-pairs geodesic dissimilarities over delay-domain samples.
#[pyfunction]
#[pyo3(signature = (delay, neighbors = 20, antennas_per_ap = None))]
fn geodesic_dissimilarities(
    delay: Vec<Vec<Vec<Complex64>>>,
    neighbors: usize,
    antennas_per_ap: Option<usize>,
) -> PyResult<Vec<Vec<f64>>> {
    let set = delay
        .iter()
        .map(|d| delay_csi(d, antennas_per_ap))
        .collect::<PyResult<Vec<_>>>()?;
    let (_, m) = streamchart::geodesic_dissimilarities(&set, neighbors).py()?;
    Ok(rows_of(m.values(), m.len().max(1)))
}

/// Trustworthiness, continuity, Kruskal stress and Rajski distance of a
/// chart against ground truth (first two coordinates are used).
#[pyfunction]
#[pyo3(signature = (ground_truth, chart, neighbors = None, bins = 128, max_pairs = 1_000_000, seed = 0))]
fn evaluate<'py>(
    py: Python<'py>,
    ground_truth: Vec<Vec<f64>>,
    chart: Vec<Vec<f64>>,
    neighbors: Option<usize>,
    bins: usize,
    max_pairs: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let gt = points(&ground_truth, "ground truth")?;
    let ch = points(&chart, "chart")?;
    let params = MetricParams {
        neighbors,
        bins,
        max_pairs,
        seed,
    };
    let r = streamchart::evaluate(gt.view(), ch.view(), &params).py()?;
    let d = PyDict::new(py);
    d.set_item("tw", r.tw)?;
    d.set_item("ct", r.ct)?;
    d.set_item("ks", r.ks)?;
    d.set_item("rd", r.rd)?;
    d.set_item("neighbors", r.neighborhood_k)?;
    d.set_item("samples", r.samples)?;
    Ok(d)
}

/// A trained chart network loaded from a model checkpoint.
#[pyclass]
struct ChartModel {
    inner: ModelCheckpoint,
    label: String,
}

#[pymethods]
impl ChartModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, label) = io::load_model(path).py()?;
        Ok(Self { inner, label })
    }

    #[getter]
    fn label(&self) -> &str {
        &self.label
    }

    #[getter]
    fn taps(&self) -> usize {
        self.inner.taps
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.model.input_dim()
    }

    /// Chart position of one feature vector.
    fn forward(&self, feature: Vec<f64>) -> PyResult<(f64, f64)> {
        let [x, y] = self.inner.model.forward(&feature).py()?;
        Ok((x, y))
    }

    /// Chart position of one raw CSI sample.
    #[pyo3(signature = (csi, antennas_per_ap = None))]
    fn chart_csi(&self, csi: Vec<Vec<Complex64>>, antennas_per_ap: Option<usize>) -> PyResult<(f64, f64)> {
        let m = csi_matrix(&csi, 0, antennas_per_ap)?;
        let dd = DelayTransform::new(m.subcarriers(), self.inner.taps).py()?.apply(&m).py()?;
        let f = streamchart::extract_feature(&dd).py()?;
        self.forward(f.into_vec())
    }
}

/// Writes `(index, csi, position)` tuples to a record file; returns the count.
#[pyfunction]
fn write_records(path: PathBuf, records: Vec<(u64, Vec<Vec<Complex64>>, Option<Vec<f64>>)>) -> PyResult<u64> {
    let recs = records
        .into_iter()
        .map(|(idx, csi, pos)| {
            Ok(CsiRecord {
                csi: csi_matrix(&csi, idx, None)?,
                position: pos.map(GroundTruthPosition::new).transpose().py()?,
            })
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok(io::write_records(path, &recs).py()?.count)
}

/// Reads every record of a record file as `(index, csi, position)` tuples.
#[pyfunction]
fn read_records(path: PathBuf) -> PyResult<Vec<(u64, Vec<Vec<Complex64>>, Option<Vec<f64>>)>> {
    io::RecordReader::open(path)
        .py()?
        .map(|r| r.map(record_tuple).py())
        .collect()
}

fn config_from(settings: Option<&Bound<'_, PyDict>>) -> PyResult<RunConfig> {
    let mut text = String::new();
    if let Some(d) = settings {
        for (k, v) in d.iter() {
            text += &format!("{} = {}\n", k.str()?, v.str()?);
        }
    }
    let cfg = RunConfig::from_kv_str(&text).py()?;
    cfg.validate().py()?;
    Ok(cfg)
}

/// Resolved configuration (every key as a string) for the given settings.
#[pyfunction]
#[pyo3(signature = (**settings))]
fn config(settings: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, String)>> {
    let cfg = config_from(settings)?;
    Ok(streamchart::config::KEYS
        .iter()
        .map(|k| (k.to_string(), cfg.get(k).unwrap_or_default()))
        .collect())
}

/// Runs `stream`, `train`, `evaluate` or `reproduce` with configuration keys
/// as keyword arguments. `path` is the memory (train) or model (evaluate)
/// checkpoint. Returns the main output path and metrics where available.
#[pyfunction]
#[pyo3(signature = (command, path = None, **settings))]
fn run<'py>(
    py: Python<'py>,
    command: &str,
    path: Option<PathBuf>,
    settings: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_from(settings)?;
    let d = PyDict::new(py);
    let put_metrics = |d: &Bound<'py, PyDict>, key: &str, m: &Option<streamchart::MetricReport>| -> PyResult<()> {
        if let Some(m) = m {
            d.set_item(key, (m.tw, m.ct, m.ks, m.rd))?;
        }
        Ok(())
    };
    match command {
        "stream" => {
            let o = py.detach(|| pipeline::cmd_stream(&cfg)).py()?;
            d.set_item("checkpoint", o.checkpoint)?;
            d.set_item("accepted", o.accepted)?;
            d.set_item("offered", o.offered)?;
        }
        "train" => {
            let o = py.detach(|| pipeline::cmd_train(&cfg, path.as_deref())).py()?;
            d.set_item("checkpoint", o.checkpoint)?;
            d.set_item("final_loss", o.chart.report.final_loss)?;
        }
        "evaluate" => {
            let model = path.ok_or_else(|| ConfigError::new_err("evaluate needs a model checkpoint path"))?;
            let o = py.detach(|| pipeline::cmd_evaluate(&cfg, &model)).py()?;
            d.set_item("chart_csv", o.chart_csv)?;
            put_metrics(&d, "metrics", &o.metrics)?;
        }
        "reproduce" => {
            let o = py.detach(|| pipeline::cmd_reproduce(&cfg)).py()?;
            d.set_item("table", o.table)?;
            for (s, m) in &o.rows {
                put_metrics(&d, s.name(), m)?;
            }
        }
        other => {
            return Err(ConfigError::new_err(format!(
                "unknown command '{other}' (stream, train, evaluate or reproduce)"
            )))
        }
    }
    Ok(d)
}

#[pymodule]
#[pyo3(name = "streamchart")]
fn streamchart_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("StreamchartError", py.get_type::<StreamchartError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add("NumericError", py.get_type::<NumericError>())?;
    m.add_function(wrap_pyfunction!(to_delay_domain, m)?)?;
    m.add_function(wrap_pyfunction!(extract_feature, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(geodesic_dissimilarities, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(write_records, m)?)?;
    m.add_function(wrap_pyfunction!(read_records, m)?)?;
    m.add_function(wrap_pyfunction!(config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_class::<Curator>()?;
    m.add_class::<SyntheticRoute>()?;
    m.add_class::<ChartModel>()?;
    Ok(())
}
