//! Python bindings for the heart-rate estimation toolkit: synthetic
//! recordings, the stage-two signal chain, feature building, model fitting,
//! tuning and evaluation. Wrappers stay thin; library errors surface as
//! `ValueError`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use pulsehr::dataset::{self, FeatureMatrix, SplitSpec};
use pulsehr::models::{self, Hyperparams, ModelArtifact, ModelKind};
use pulsehr::signal::Scenario;
use pulsehr::sigproc::SigprocConfig;
use pulsehr::synth::{gen_ppg, gen_truth_hr, SynthConfig};
use pulsehr::tuning::{self, TuneSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A raw PPG recording: one or more channels sampled at a fixed rate.
#[pyclass]
struct Recording(pulsehr::signal::PpgRecording);

#[pymethods]
impl Recording {
    /// Build a single-channel recording from samples.
    #[new]
    #[pyo3(signature = (fs_hz, samples, t0_s = 0.0))]
    fn new(fs_hz: f64, samples: Vec<f64>, t0_s: f64) -> PyResult<Self> {
        let rec = pulsehr::signal::PpgRecording::new(fs_hz, vec![samples], t0_s);
        pulsehr::signal::validate_recording(rec)
            .map(Recording)
            .map_err(value_err)
    }

    #[getter]
    fn fs_hz(&self) -> f64 {
        self.0.fs_hz
    }

    #[getter]
    fn t0_s(&self) -> f64 {
        self.0.t0_s
    }

    #[getter]
    fn n_channels(&self) -> usize {
        self.0.channels.len()
    }

    fn duration_s(&self) -> f64 {
        self.0.duration_s()
    }

    #[pyo3(signature = (channel = 0))]
    fn samples(&self, channel: usize) -> PyResult<Vec<f64>> {
        if channel >= self.0.channels.len() {
            return Err(value_err(format!(
                "channel {channel} out of range, recording has {}",
                self.0.channels.len()
            )));
        }
        Ok(self.0.channels[channel].clone())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// A heart-rate series at a fixed reading rate, values in bpm.
#[pyclass]
struct Series(pulsehr::signal::HrSeries);

#[pymethods]
impl Series {
    #[new]
    #[pyo3(signature = (rate_hz, values, t0_s = 0.0))]
    fn new(rate_hz: f64, values: Vec<f64>, t0_s: f64) -> Self {
        Series(pulsehr::signal::HrSeries::new(rate_hz, values, t0_s))
    }

    #[getter]
    fn rate_hz(&self) -> f64 {
        self.0.rate_hz
    }

    #[getter]
    fn t0_s(&self) -> f64 {
        self.0.t0_s
    }

    fn values(&self) -> Vec<f64> {
        self.0.values.clone()
    }

    fn times(&self) -> Vec<f64> {
        (0..self.0.len()).map(|i| self.0.time_of(i)).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// Lagged feature rows with their labels and times.
#[pyclass]
struct FeatureSet(FeatureMatrix);

#[pymethods]
impl FeatureSet {
    #[getter]
    fn k(&self) -> usize {
        self.0.k()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.0.len() {
            return Err(value_err(format!("row {i} out of range, have {}", self.0.len())));
        }
        Ok(self.0.row(i).to_vec())
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.0.len()).map(|i| self.0.row(i).to_vec()).collect()
    }

    fn labels(&self) -> Vec<f64> {
        self.0.labels().to_vec()
    }

    fn times(&self) -> Vec<f64> {
        self.0.times().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// A trained model; predicts one reading from a row of lagged values.
#[pyclass]
struct Model(ModelArtifact);

#[pymethods]
impl Model {
    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.name()
    }

    #[getter]
    fn k(&self) -> usize {
        self.0.meta.k
    }

    #[getter]
    fn size_bytes(&self) -> u64 {
        models::model_size(&self.0)
    }

    fn predict(&self, row: Vec<f64>) -> PyResult<f64> {
        models::predict(&self.0, &row).map_err(value_err)
    }

    fn hyperparams_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0.hyperparams).map_err(value_err)
    }

    /// Serialized model in the binary interchange format.
    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &models::serialize(&self.0))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        models::deserialize(data).map(Model).map_err(value_err)
    }
}

/// Generate a labeled synthetic recording; returns `(recording, truth)`.
#[pyfunction]
#[pyo3(signature = (scenario = "daily", duration_s = 120.0, fs_hz = 25.0, seed = 0, *,
    hr_start_bpm = None, hr_min_bpm = None, hr_max_bpm = None, hr_slew_bpm_per_s = None,
    noise_std = None, wander_amp = None, ma_rate_per_min = None, ma_amp = None, ma_dur_s = None))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    scenario: &str,
    duration_s: f64,
    fs_hz: f64,
    seed: u64,
    hr_start_bpm: Option<f64>,
    hr_min_bpm: Option<f64>,
    hr_max_bpm: Option<f64>,
    hr_slew_bpm_per_s: Option<f64>,
    noise_std: Option<f64>,
    wander_amp: Option<f64>,
    ma_rate_per_min: Option<f64>,
    ma_amp: Option<f64>,
    ma_dur_s: Option<f64>,
) -> PyResult<(Recording, Series)> {
    let scenario: Scenario = scenario.parse().map_err(value_err)?;
    let mut cfg = SynthConfig::for_scenario(scenario);
    cfg.duration_s = duration_s;
    cfg.fs_hz = fs_hz;
    cfg.seed = seed;
    if let Some(v) = hr_start_bpm {
        cfg.hr_start_bpm = v;
    }
    if let Some(v) = hr_min_bpm {
        cfg.hr_bounds_bpm.0 = v;
    }
    if let Some(v) = hr_max_bpm {
        cfg.hr_bounds_bpm.1 = v;
    }
    if let Some(v) = hr_slew_bpm_per_s {
        cfg.hr_max_slew_bpm_per_s = v;
    }
    if let Some(v) = noise_std {
        cfg.noise_std = v;
    }
    if let Some(v) = wander_amp {
        cfg.baseline_wander_amp = v;
    }
    if let Some(v) = ma_rate_per_min {
        cfg.ma_rate_per_min = v;
    }
    if let Some(v) = ma_amp {
        cfg.ma_amp = v;
    }
    if let Some(v) = ma_dur_s {
        cfg.ma_dur_s = v;
    }
    let truth = gen_truth_hr(&cfg).map_err(value_err)?;
    let rec = gen_ppg(&truth, &cfg).map_err(value_err)?;
    Ok((Recording(rec), Series(truth)))
}

/// Run the signal-processing chain: peaks, outlier filter, smoothing, clamp.
#[pyfunction]
#[pyo3(signature = (rec, *, channel = None, window_s = None, hop_s = None,
    detrend_window_s = None, min_prominence_factor = None, max_hr_bpm = None,
    z_threshold = None, z_window_readings = None, clamp_bound = None))]
#[allow(clippy::too_many_arguments)]
fn stage2(
    rec: &Recording,
    channel: Option<usize>,
    window_s: Option<f64>,
    hop_s: Option<f64>,
    detrend_window_s: Option<f64>,
    min_prominence_factor: Option<f64>,
    max_hr_bpm: Option<f64>,
    z_threshold: Option<f64>,
    z_window_readings: Option<usize>,
    clamp_bound: Option<f64>,
) -> PyResult<Series> {
    let mut cfg = SigprocConfig::default();
    if let Some(v) = channel {
        cfg.channel = v;
    }
    if let Some(v) = window_s {
        cfg.window_s = v;
    }
    if let Some(v) = hop_s {
        cfg.hop_s = v;
    }
    if let Some(v) = detrend_window_s {
        cfg.detrend_window_s = v;
    }
    if let Some(v) = min_prominence_factor {
        cfg.min_prominence_factor = v;
    }
    if let Some(v) = max_hr_bpm {
        cfg.max_hr_bpm = v;
    }
    if let Some(v) = z_threshold {
        cfg.z_threshold = v;
    }
    if let Some(v) = z_window_readings {
        cfg.z_window_readings = v;
    }
    if let Some(v) = clamp_bound {
        cfg.clamp_bound = v;
    }
    pulsehr::sigproc::stage2(&rec.0, &cfg)
        .map(Series)
        .map_err(value_err)
}

/// Build rows of the latest `k` processed readings labeled with the truth
/// at each row's time.
#[pyfunction]
fn build_features(pphr: &Series, truth: &Series, k: usize) -> PyResult<FeatureSet> {
    dataset::build_features(&pphr.0, &truth.0, k)
        .map(FeatureSet)
        .map_err(value_err)
}

/// Partition rows into `(train, test)`.
#[pyfunction]
#[pyo3(signature = (features, train_frac = 0.8, mode = "chronological", seed = 0))]
fn split_features(
    features: &FeatureSet,
    train_frac: f64,
    mode: &str,
    seed: u64,
) -> PyResult<(FeatureSet, FeatureSet)> {
    let mode = mode.parse().map_err(value_err)?;
    let spec = SplitSpec {
        train_frac,
        mode,
        seed,
    };
    dataset::split(&features.0, &spec)
        .map(|(a, b)| (FeatureSet(a), FeatureSet(b)))
        .map_err(value_err)
}

/// Fit one model kind with its default hyperparameters.
#[pyfunction]
#[pyo3(signature = (train, model = "dt", seed = 0))]
fn fit(train: &FeatureSet, model: &str, seed: u64) -> PyResult<Model> {
    let kind: ModelKind = model.parse().map_err(value_err)?;
    models::fit(&train.0, &Hyperparams::default_for(kind), seed)
        .map(Model)
        .map_err(value_err)
}

/// Random-search hyperparameters with cross-validation and refit the best
/// draw; returns `(model, best_cv_mape_pct)`.
#[pyfunction]
#[pyo3(signature = (train, model = "dt", iters = 20, folds = 5, seed = 0))]
fn tune(train: &FeatureSet, model: &str, iters: usize, folds: usize, seed: u64) -> PyResult<(Model, f64)> {
    let kind: ModelKind = model.parse().map_err(value_err)?;
    let spec = TuneSpec {
        kind,
        n_iter: iters,
        n_folds: folds,
        seed,
    };
    let result = tuning::tune(&train.0, &spec).map_err(value_err)?;
    let best = result.best().mean_mape_pct;
    Ok((Model(result.model), best))
}

/// Score a model on held-out rows; returns a dict of accuracy fields.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, model: &Model, test: &FeatureSet) -> PyResult<Bound<'py, PyDict>> {
    let acc = pulsehr::eval::evaluate(&model.0, &test.0).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("mape_pct", acc.mape_pct)?;
    d.set_item("ape_sd_pct", acc.ape_sd_pct)?;
    d.set_item("n_rows", acc.n_rows)?;
    d.set_item("model_size_bytes", acc.model_size_bytes)?;
    d.set_item("baseline_mape_pct", acc.baseline_mape_pct)?;
    Ok(d)
}

/// Mean absolute percentage error of predictions against truth, percent.
#[pyfunction]
fn mape(pred: Vec<f64>, truth: Vec<f64>) -> PyResult<f64> {
    pulsehr::eval::mape(&pred, &truth).map_err(value_err)
}

#[pymodule]
fn pulsehr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Recording>()?;
    m.add_class::<Series>()?;
    m.add_class::<FeatureSet>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(stage2, m)?)?;
    m.add_function(wrap_pyfunction!(build_features, m)?)?;
    m.add_function(wrap_pyfunction!(split_features, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(tune, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    Ok(())
}
