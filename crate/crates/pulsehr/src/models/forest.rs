//! Random forest: an ensemble of CART trees fit on bootstrap resamples,
//! averaged at prediction time. Every split still considers all features,
//! so tree diversity comes from the resampling alone.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::FeatureMatrix;
use crate::synth::splitmix64;

use super::tree::{grow_tree, grow_tree_from, Tree};
use super::{Hyperparams, ModelArtifact, ModelError, ModelKind, Payload, RfParams, TrainMeta};

/// Fit a random forest. Each tree draws its bootstrap sample from its own
/// RNG, derived from `seed` and the tree index, so the ensemble is
/// reproducible and trees stay decorrelated.
pub fn fit_rf(
    train: &FeatureMatrix,
    params: &RfParams,
    seed: u64,
) -> Result<ModelArtifact, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let n = train.len();
    let trees: Vec<Tree> = (0..params.n_trees)
        .map(|t| {
            if params.bootstrap {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(t as u64 + 1)));
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow_tree_from(train, idx, params.max_depth)
            } else {
                grow_tree(train, params.max_depth)
            }
        })
        .collect();
    Ok(ModelArtifact {
        kind: ModelKind::Rf,
        hyperparams: Hyperparams::Rf(params.clone()),
        meta: TrainMeta {
            k: train.k(),
            n_rows: n,
            seed,
        },
        payload: Payload::Rf(trees),
    })
}
