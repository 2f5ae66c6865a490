//! Feature matrices for the regression stage: lagged processed heart-rate
//! readings as features, ground truth as labels.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::signal::HrSeries;

/// Alignment slack between the two 1 Hz series, in seconds.
const ALIGN_TOL_S: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("series do not align: {0}")]
    AlignmentError(String),
    #[error("need {needed} aligned seconds, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("feature count must be at least 1")]
    InvalidK,
    #[error("matrix has no rows")]
    EmptyMatrix,
}

/// Rows of `k` lagged readings with a label and a timestamp each.
///
/// Row `i` holds readings for seconds `t-k+1 ..= t` oldest first, labeled
/// with the true rate at second `t`; `times` is strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    k: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
    times: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            features: Vec::new(),
            labels: Vec::new(),
            times: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.k..(i + 1) * self.k]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn push_row(&mut self, features: &[f64], label: f64, time: f64) {
        debug_assert_eq!(features.len(), self.k);
        debug_assert!(self.times.last().is_none_or(|&t| time > t));
        self.features.extend_from_slice(features);
        self.labels.push(label);
        self.times.push(time);
    }

    /// New matrix holding the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> FeatureMatrix {
        let mut out = FeatureMatrix::new(self.k);
        for &i in indices {
            out.push_row(self.row(i), self.labels[i], self.times[i]);
        }
        out
    }
}

/// Build the lagged-feature matrix over the aligned span of the two series.
///
/// Both series must be 1 Hz and offset by a whole number of seconds. One row
/// is emitted per overlapping second that has `k` processed readings behind
/// it.
pub fn build_features(
    pphr: &HrSeries,
    truth: &HrSeries,
    k: usize,
) -> Result<FeatureMatrix, DatasetError> {
    if k == 0 {
        return Err(DatasetError::InvalidK);
    }
    for (name, s) in [("processed", pphr), ("truth", truth)] {
        if (s.rate_hz - 1.0).abs() > ALIGN_TOL_S {
            return Err(DatasetError::AlignmentError(format!(
                "{name} series rate is {} Hz, expected 1 Hz",
                s.rate_hz
            )));
        }
    }
    let offset = pphr.t0_s - truth.t0_s;
    if (offset - offset.round()).abs() > ALIGN_TOL_S {
        return Err(DatasetError::AlignmentError(format!(
            "series start times differ by {offset} s, not a whole second"
        )));
    }
    if pphr.is_empty() || truth.is_empty() {
        return Err(DatasetError::InsufficientData { needed: k, got: 0 });
    }

    // work in whole seconds relative to the truth start
    let p0 = offset.round() as i64;
    let t_start = p0.max(0);
    let t_end = (p0 + pphr.len() as i64 - 1).min(truth.len() as i64 - 1);
    let overlap = (t_end - t_start + 1).max(0) as usize;
    let first_row = t_start + k as i64 - 1;
    if overlap < k || first_row > t_end {
        return Err(DatasetError::InsufficientData {
            needed: k,
            got: overlap,
        });
    }

    let mut fm = FeatureMatrix::new(k);
    for t in first_row..=t_end {
        let j = (t - p0) as usize; // index of second t in pphr
        let features = &pphr.values[j + 1 - k..=j];
        fm.push_row(features, truth.values[t as usize], truth.t0_s + t as f64);
    }
    Ok(fm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// First `train_frac` of rows train, the rest test. Default: respects
    /// the time ordering, so no future data leaks into training.
    Chronological,
    /// Seeded random row assignment; each side stays in time order.
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.8,
            mode: SplitMode::Chronological,
            seed: 0,
        }
    }
}

/// Partition rows into train and test. The train side gets
/// `ceil(train_frac * n)` rows; together the sides hold every input row
/// exactly once.
pub fn split(
    fm: &FeatureMatrix,
    spec: &SplitSpec,
) -> Result<(FeatureMatrix, FeatureMatrix), DatasetError> {
    let n = fm.len();
    if n == 0 {
        return Err(DatasetError::EmptyMatrix);
    }
    // the small slack keeps exact products like 0.8 * 5 from ceiling up
    let n_train = ((spec.train_frac * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n);
    let train_idx: Vec<usize>;
    let test_idx: Vec<usize>;
    match spec.mode {
        SplitMode::Chronological => {
            train_idx = (0..n_train).collect();
            test_idx = (n_train..n).collect();
        }
        SplitMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut train: Vec<usize> = order[..n_train].to_vec();
            let mut test: Vec<usize> = order[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            train_idx = train;
            test_idx = test;
        }
    }
    Ok((fm.subset(&train_idx), fm.subset(&test_idx)))
}
