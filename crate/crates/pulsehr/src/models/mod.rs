//! Lightweight regression models trained on lagged heart-rate features:
//! decision tree, random forest, k-nearest-neighbors, support-vector
//! regression and a small multilayer perceptron. All five are implemented
//! here directly so their size, latency and serialized form stay under our
//! control.

mod codec;
mod forest;
mod knn;
mod mlp;
mod svr;
mod tree;

pub use codec::{deserialize, model_size, serialize};
pub use forest::fit_rf;
pub use knn::fit_knn;
pub use mlp::{batch_gradient, fit_mlp, MlpNet};
pub use svr::fit_svr;
pub use tree::{fit_dt, Tree};

use thiserror::Error;

use crate::dataset::FeatureMatrix;
use crate::signal::{HR_MAX_BPM, HR_MIN_BPM};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("need at least {needed} training rows, got {got}")]
    NotEnoughRows { needed: usize, got: usize },
    #[error("solver stopped at the iteration cap with KKT violation {violation:.3e}")]
    NoConvergence {
        violation: f64,
        /// Best-effort model at the cap; callers may still use it.
        artifact: Box<ModelArtifact>,
    },
    #[error("input has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u8),
    #[error("model file is truncated or has trailing bytes")]
    TruncatedPayload,
    #[error("model file field is invalid: {0}")]
    BadFieldEncoding(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Rf,
    Knn,
    Svr,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Dt,
        ModelKind::Rf,
        ModelKind::Knn,
        ModelKind::Svr,
        ModelKind::Mlp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Knn => "knn",
            ModelKind::Svr => "svr",
            ModelKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dt" => Ok(ModelKind::Dt),
            "rf" => Ok(ModelKind::Rf),
            "knn" => Ok(ModelKind::Knn),
            "svr" => Ok(ModelKind::Svr),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(format!(
                "unknown model kind {other:?}, expected one of: dt, rf, knn, svr, mlp"
            )),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Manhattan,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Rbf,
    Sigmoid,
    Polynomial,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaMode {
    /// `1 / (k * var(features))`, computed on the standardized matrix.
    Scale,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DtParams {
    /// Splits stop at this depth; range 1..=20.
    pub max_depth: u32,
}

impl Default for DtParams {
    fn default() -> Self {
        Self { max_depth: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RfParams {
    /// Ensemble size; range 1..=30.
    pub n_trees: u32,
    /// Per-tree depth cap; range 3..=7.
    pub max_depth: u32,
    /// Train each tree on a seeded bootstrap resample of the full size.
    /// Disabled, every tree sees the full training set.
    pub bootstrap: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        Self {
            n_trees: 10,
            max_depth: 5,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KnnParams {
    /// Neighbors averaged per query; range 1..=30.
    pub n_neighbors: u32,
    pub metric: Metric,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            n_neighbors: 5,
            metric: Metric::Euclidean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SvrParams {
    pub kernel: Kernel,
    /// Box constraint on the dual coefficients; sampled over [1e-5, 10].
    pub c: f64,
    /// Half-width of the insensitive tube, in bpm.
    pub epsilon_bpm: f64,
    pub gamma: GammaMode,
    /// Polynomial kernel degree; ignored by the other kernels.
    pub degree: u32,
    /// Additive constant of the sigmoid and polynomial kernels.
    pub coef0: f64,
}

impl Default for SvrParams {
    fn default() -> Self {
        Self {
            kernel: Kernel::Rbf,
            c: 1.0,
            epsilon_bpm: 0.5,
            gamma: GammaMode::Scale,
            degree: 3,
            coef0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpParams {
    /// Three hidden layer widths, each in 2..=15.
    pub hidden: [u32; 3],
    pub activation: Activation,
    /// L2 penalty on weights; sampled over [1e-5, 10].
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub max_epochs: u32,
    /// Epochs without validation improvement before stopping early.
    pub patience: u32,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            hidden: [8, 8, 8],
            activation: Activation::Relu,
            alpha: 1e-4,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparams {
    Dt(DtParams),
    Rf(RfParams),
    Knn(KnnParams),
    Svr(SvrParams),
    Mlp(MlpParams),
}

impl Hyperparams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::Dt(_) => ModelKind::Dt,
            Hyperparams::Rf(_) => ModelKind::Rf,
            Hyperparams::Knn(_) => ModelKind::Knn,
            Hyperparams::Svr(_) => ModelKind::Svr,
            Hyperparams::Mlp(_) => ModelKind::Mlp,
        }
    }

    /// Reference defaults for a kind, used by direct training.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Dt => Hyperparams::Dt(DtParams::default()),
            ModelKind::Rf => Hyperparams::Rf(RfParams::default()),
            ModelKind::Knn => Hyperparams::Knn(KnnParams::default()),
            ModelKind::Svr => Hyperparams::Svr(SvrParams::default()),
            ModelKind::Mlp => Hyperparams::Mlp(MlpParams::default()),
        }
    }
}

/// Provenance recorded with every trained model.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainMeta {
    pub k: usize,
    pub n_rows: usize,
    pub seed: u64,
}

/// Per-column standardization stats (z-score with std 0 treated as 1), used
/// by the SVR and MLP payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub(crate) fn fit(train: &FeatureMatrix) -> Self {
        let k = train.k();
        let n = train.len() as f64;
        let mut mean = vec![0.0; k];
        for i in 0..train.len() {
            for (m, &v) in mean.iter_mut().zip(train.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; k];
        for i in 0..train.len() {
            for (j, &v) in train.row(i).iter().enumerate() {
                var[j] += (v - mean[j]).powi(2);
            }
        }
        let std = var
            .iter()
            .map(|&v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub(crate) fn apply(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = (x[i] - self.mean[i]) / self.std[i];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnStore {
    /// Training rows, row-major `n x k`.
    pub rows: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrStore {
    /// Support vectors in standardized feature space, row-major.
    pub support: Vec<f64>,
    /// Signed dual coefficients `alpha - alpha*`, one per support vector.
    pub coefs: Vec<f64>,
    pub bias: f64,
    /// Resolved kernel width actually used in training.
    pub gamma: f64,
    pub scaler: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpStore {
    pub net: MlpNet,
    pub scaler: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dt(Tree),
    Rf(Vec<Tree>),
    Knn(KnnStore),
    Svr(SvrStore),
    Mlp(MlpStore),
}

/// A trained model: hyperparameters, training provenance and the fitted
/// state needed for prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    pub hyperparams: Hyperparams,
    pub meta: TrainMeta,
    pub payload: Payload,
}

/// Train a model of the kind selected by `hp`. `seed` drives the forest
/// bootstrap and the MLP initialization; the tree, KNN and SVR fits are
/// fully deterministic in their inputs.
pub fn fit(train: &FeatureMatrix, hp: &Hyperparams, seed: u64) -> Result<ModelArtifact, ModelError> {
    match hp {
        Hyperparams::Dt(p) => fit_dt(train, p),
        Hyperparams::Rf(p) => fit_rf(train, p, seed),
        Hyperparams::Knn(p) => fit_knn(train, p),
        Hyperparams::Svr(p) => fit_svr(train, p),
        Hyperparams::Mlp(p) => fit_mlp(train, p, seed),
    }
}

/// Like `fit`, but a solver that stops at its iteration cap still yields
/// its best-effort model, paired with the residual KKT violation.
pub fn fit_lenient(
    train: &FeatureMatrix,
    hp: &Hyperparams,
    seed: u64,
) -> Result<(ModelArtifact, Option<f64>), ModelError> {
    match fit(train, hp, seed) {
        Ok(m) => Ok((m, None)),
        Err(ModelError::NoConvergence {
            violation,
            artifact,
        }) => Ok((*artifact, Some(violation))),
        Err(e) => Err(e),
    }
}

/// Predict one heart rate from `k` lagged readings. The output is clamped
/// to the physiological range [20, 230] bpm.
pub fn predict(m: &ModelArtifact, x: &[f64]) -> Result<f64, ModelError> {
    if x.len() != m.meta.k {
        return Err(ModelError::DimensionMismatch {
            expected: m.meta.k,
            got: x.len(),
        });
    }
    let raw = match (&m.payload, &m.hyperparams) {
        (Payload::Dt(tree), _) => tree.predict(x),
        (Payload::Rf(trees), _) => {
            trees.iter().map(|t| t.predict(x)).sum::<f64>() / trees.len() as f64
        }
        (Payload::Knn(store), Hyperparams::Knn(p)) => knn::predict(store, p, m.meta.k, x),
        (Payload::Svr(store), Hyperparams::Svr(p)) => svr::predict(store, p, m.meta.k, x),
        (Payload::Mlp(store), _) => mlp::predict(store, x),
        _ => unreachable!("payload kind always matches hyperparams"),
    };
    Ok(raw.clamp(HR_MIN_BPM, HR_MAX_BPM))
}
