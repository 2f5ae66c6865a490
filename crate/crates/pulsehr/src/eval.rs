//! Accuracy and latency metrics: MAPE against reference heart rate,
//! per-subject aggregation, and wall-clock prediction latency.

use std::time::Instant;

use thiserror::Error;

use crate::dataset::FeatureMatrix;
use crate::models::{model_size, predict, ModelArtifact, ModelError};

/// Latency runs are padded up to this many calls so quantiles mean
/// something.
const MIN_BENCH_REPS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("got {got} predictions for {expected} reference values")]
    LengthMismatch { got: usize, expected: usize },
    #[error("reference heart rate at index {index} is {value}, must be positive")]
    NonPositiveTruth { index: usize, value: f64 },
    #[error("no values to aggregate")]
    EmptyList,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Absolute percentage error of each prediction, in percent.
pub fn ape(pred: &[f64], truth: &[f64]) -> Result<Vec<f64>, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            got: pred.len(),
            expected: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyList);
    }
    pred.iter()
        .zip(truth)
        .enumerate()
        .map(|(index, (&p, &t))| {
            if t <= 0.0 {
                Err(EvalError::NonPositiveTruth { index, value: t })
            } else {
                Ok(100.0 * (p - t).abs() / t)
            }
        })
        .collect()
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64, EvalError> {
    let a = ape(pred, truth)?;
    Ok(a.iter().sum::<f64>() / a.len() as f64)
}

fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Mean and sample standard deviation over per-subject scores. A single
/// subject reports deviation 0.
pub fn summarize_subjects(scores: &[f64]) -> Result<(f64, f64), EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((mean, sample_sd(scores)))
}

/// Model predictions for every row of a matrix.
pub fn predict_rows(m: &ModelArtifact, fm: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
    (0..fm.len()).map(|i| predict(m, fm.row(i))).collect()
}

/// Accuracy report of one model on one feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub mape_pct: f64,
    /// Sample standard deviation of the per-row percentage errors.
    pub ape_sd_pct: f64,
    pub n_rows: usize,
    pub model_size_bytes: u64,
    /// Error of predicting the most recent processed reading unchanged,
    /// the no-model reference point.
    pub baseline_mape_pct: f64,
}

/// Score a model on held-out rows, alongside the no-model baseline that
/// repeats each row's most recent reading.
pub fn evaluate(m: &ModelArtifact, test: &FeatureMatrix) -> Result<Accuracy, EvalError> {
    let pred = predict_rows(m, test)?;
    let apes = ape(&pred, test.labels())?;
    let k = test.k();
    let baseline: Vec<f64> = (0..test.len()).map(|i| test.row(i)[k - 1]).collect();
    Ok(Accuracy {
        mape_pct: apes.iter().sum::<f64>() / apes.len() as f64,
        ape_sd_pct: sample_sd(&apes),
        n_rows: test.len(),
        model_size_bytes: model_size(m),
        baseline_mape_pct: mape(&baseline, test.labels())?,
    })
}

/// Per-call prediction latency, measured one call at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latency {
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
    pub reps: usize,
}

/// Time single predictions over the given probe rows, cycling through them.
/// `reps` and `warmup` are floored at 100 calls each.
pub fn bench_latency(
    m: &ModelArtifact,
    probes: &FeatureMatrix,
    reps: usize,
    warmup: usize,
) -> Result<Latency, EvalError> {
    if probes.is_empty() {
        return Err(EvalError::EmptyList);
    }
    let reps = reps.max(MIN_BENCH_REPS);
    let warmup = warmup.max(MIN_BENCH_REPS);
    let n = probes.len();
    for i in 0..warmup {
        let x = std::hint::black_box(probes.row(i % n));
        std::hint::black_box(predict(m, x)?);
    }
    let mut times_us = Vec::with_capacity(reps);
    for i in 0..reps {
        let x = std::hint::black_box(probes.row(i % n));
        let start = Instant::now();
        let p = predict(m, x)?;
        let elapsed = start.elapsed();
        std::hint::black_box(p);
        times_us.push(elapsed.as_nanos() as f64 / 1000.0);
    }
    times_us.sort_by(f64::total_cmp);
    let mean_us = times_us.iter().sum::<f64>() / reps as f64;
    let median_us = if reps % 2 == 0 {
        (times_us[reps / 2 - 1] + times_us[reps / 2]) / 2.0
    } else {
        times_us[reps / 2]
    };
    let p99_us = times_us[(0.99 * reps as f64).ceil() as usize - 1];
    Ok(Latency {
        mean_us,
        median_us,
        p99_us,
        reps,
    })
}

/// Flat metrics document written by the command-line tools; absent
/// sections are omitted from the JSON.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct Metrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mape_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ape_sd_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_size_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_mape_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_mean_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_median_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency_p99_us: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
}

impl Metrics {
    pub fn with_accuracy(mut self, a: &Accuracy) -> Self {
        self.mape_pct = Some(a.mape_pct);
        self.ape_sd_pct = Some(a.ape_sd_pct);
        self.n_rows = Some(a.n_rows);
        self.model_size_bytes = Some(a.model_size_bytes);
        self.baseline_mape_pct = Some(a.baseline_mape_pct);
        self
    }

    pub fn with_latency(mut self, l: &Latency) -> Self {
        self.latency_mean_us = Some(l.mean_us);
        self.latency_median_us = Some(l.median_us);
        self.latency_p99_us = Some(l.p99_us);
        self.reps = Some(l.reps);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{fit, Hyperparams, KnnParams, Metric};

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn mape_of_known_errors() {
        close(mape(&[72.0, 68.0], &[70.0, 70.0]).unwrap(), 200.0 / 70.0);
        close(mape(&[70.0, 70.0], &[70.0, 70.0]).unwrap(), 0.0);
    }

    #[test]
    fn mape_rejects_bad_input() {
        assert!(matches!(
            mape(&[70.0], &[70.0, 71.0]),
            Err(EvalError::LengthMismatch { got: 1, expected: 2 })
        ));
        assert!(matches!(mape(&[], &[]), Err(EvalError::EmptyList)));
        assert!(matches!(
            mape(&[70.0, 70.0], &[70.0, 0.0]),
            Err(EvalError::NonPositiveTruth { index: 1, .. })
        ));
    }

    #[test]
    fn subject_summary_uses_sample_deviation() {
        let (mean, sd) = summarize_subjects(&[2.0, 4.0]).unwrap();
        close(mean, 3.0);
        close(sd, 2.0f64.sqrt());
        let (mean, sd) = summarize_subjects(&[5.0]).unwrap();
        close(mean, 5.0);
        close(sd, 0.0);
        assert!(matches!(summarize_subjects(&[]), Err(EvalError::EmptyList)));
    }

    fn memorizing_model() -> (ModelArtifact, FeatureMatrix) {
        let mut fm = FeatureMatrix::new(2);
        for i in 0..8 {
            let x = [68.0 + i as f64, 70.0 + i as f64];
            fm.push_row(&x, 72.0 + i as f64, i as f64);
        }
        let m = fit(
            &fm,
            &Hyperparams::Knn(KnnParams {
                n_neighbors: 1,
                metric: Metric::Euclidean,
            }),
            0,
        )
        .unwrap();
        (m, fm)
    }

    #[test]
    fn evaluate_scores_model_and_baseline() {
        let (m, fm) = memorizing_model();
        let acc = evaluate(&m, &fm).unwrap();
        close(acc.mape_pct, 0.0);
        close(acc.ape_sd_pct, 0.0);
        assert_eq!(acc.n_rows, 8);
        assert!(acc.model_size_bytes > 0);
        // baseline repeats row[k-1] = label - 2, so each ape is 200/label
        let expected = (0..8)
            .map(|i| 200.0 / (72.0 + i as f64))
            .sum::<f64>()
            / 8.0;
        close(acc.baseline_mape_pct, expected);
    }

    #[test]
    fn latency_run_reports_ordered_quantiles() {
        let (m, fm) = memorizing_model();
        let l = bench_latency(&m, &fm, 200, 50).unwrap();
        assert_eq!(l.reps, 200);
        assert!(l.mean_us > 0.0);
        assert!(l.median_us <= l.p99_us);
        assert!(l.p99_us < 10_000.0, "implausible latency {l:?}");
    }

    #[test]
    fn metrics_json_omits_absent_sections() {
        let (m, fm) = memorizing_model();
        let acc = evaluate(&m, &fm).unwrap();
        let doc = Metrics::default().with_accuracy(&acc);
        let json = serde_json::to_string(&doc).unwrap();
        assert!(json.contains("\"mape_pct\""));
        assert!(!json.contains("latency_mean_us"));
        let l = bench_latency(&m, &fm, 100, 10).unwrap();
        let full = serde_json::to_string(&Metrics::default().with_accuracy(&acc).with_latency(&l))
            .unwrap();
        assert!(full.contains("latency_p99_us"));
        assert!(full.contains("\"reps\":100"));
    }
}
