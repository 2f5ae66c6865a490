//! K-nearest-neighbors regression. Training memorizes the rows; prediction
//! averages the labels of the closest ones.

use crate::dataset::FeatureMatrix;

use super::{
    Hyperparams, KnnParams, KnnStore, Metric, ModelArtifact, ModelError, ModelKind, Payload,
    TrainMeta,
};

/// Fit (memorize) the training matrix; needs at least `n_neighbors` rows.
pub fn fit_knn(train: &FeatureMatrix, params: &KnnParams) -> Result<ModelArtifact, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let needed = params.n_neighbors as usize;
    if train.len() < needed {
        return Err(ModelError::NotEnoughRows {
            needed,
            got: train.len(),
        });
    }
    let mut rows = Vec::with_capacity(train.len() * train.k());
    for i in 0..train.len() {
        rows.extend_from_slice(train.row(i));
    }
    Ok(ModelArtifact {
        kind: ModelKind::Knn,
        hyperparams: Hyperparams::Knn(params.clone()),
        meta: TrainMeta {
            k: train.k(),
            n_rows: train.len(),
            seed: 0,
        },
        payload: Payload::Knn(KnnStore {
            rows,
            labels: train.labels().to_vec(),
        }),
    })
}

fn distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Metric::Manhattan => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
    }
}

/// Unweighted mean label of the `n_neighbors` nearest rows. Equal distances
/// resolve to the earlier row, via the stable sort.
pub(crate) fn predict(store: &KnnStore, params: &KnnParams, k: usize, x: &[f64]) -> f64 {
    let n = store.labels.len();
    let mut by_dist: Vec<(f64, usize)> = (0..n)
        .map(|i| (distance(params.metric, &store.rows[i * k..(i + 1) * k], x), i))
        .collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    let take = (params.n_neighbors as usize).min(n);
    by_dist[..take]
        .iter()
        .map(|&(_, i)| store.labels[i])
        .sum::<f64>()
        / take as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::predict as model_predict;

    fn matrix(rows: &[(&[f64], f64)]) -> FeatureMatrix {
        let mut fm = FeatureMatrix::new(rows[0].0.len());
        for (i, (x, y)) in rows.iter().enumerate() {
            fm.push_row(x, *y, i as f64);
        }
        fm
    }

    fn knn(n_neighbors: u32, metric: Metric) -> KnnParams {
        KnnParams {
            n_neighbors,
            metric,
        }
    }

    #[test]
    fn averages_the_two_nearest() {
        let fm = matrix(&[(&[60.0], 60.0), (&[70.0], 70.0), (&[80.0], 80.0)]);
        let m = fit_knn(&fm, &knn(2, Metric::Euclidean)).unwrap();
        assert_eq!(model_predict(&m, &[62.0]).unwrap(), 65.0);
    }

    #[test]
    fn exact_match_with_one_neighbor_returns_its_label() {
        let fm = matrix(&[(&[60.0, 61.0], 64.0), (&[90.0, 91.0], 94.0)]);
        let m = fit_knn(&fm, &knn(1, Metric::Euclidean)).unwrap();
        assert_eq!(model_predict(&m, &[60.0, 61.0]).unwrap(), 64.0);
    }

    #[test]
    fn distance_ties_keep_the_earlier_row() {
        let fm = matrix(&[(&[70.0], 66.0), (&[70.0], 74.0), (&[70.0], 80.0)]);
        let m = fit_knn(&fm, &knn(1, Metric::Euclidean)).unwrap();
        assert_eq!(model_predict(&m, &[70.0]).unwrap(), 66.0);
    }

    #[test]
    fn all_rows_as_neighbors_gives_the_global_mean() {
        let fm = matrix(&[(&[60.0], 60.0), (&[70.0], 70.0), (&[80.0], 86.0)]);
        let m = fit_knn(&fm, &knn(3, Metric::Euclidean)).unwrap();
        assert_eq!(model_predict(&m, &[100.0]).unwrap(), 72.0);
    }

    #[test]
    fn metrics_rank_differently() {
        let fm = matrix(&[(&[5.0, 0.0], 100.0), (&[3.0, 3.0], 200.0)]);
        let e = fit_knn(&fm, &knn(1, Metric::Euclidean)).unwrap();
        let m = fit_knn(&fm, &knn(1, Metric::Manhattan)).unwrap();
        // query at the origin: euclidean prefers (3,3), manhattan (5,0)
        assert_eq!(model_predict(&e, &[0.0, 0.0]).unwrap(), 200.0);
        assert_eq!(model_predict(&m, &[0.0, 0.0]).unwrap(), 100.0);
    }

    #[test]
    fn too_few_rows_rejected() {
        let fm = matrix(&[(&[60.0], 60.0), (&[70.0], 70.0)]);
        let err = fit_knn(&fm, &knn(5, Metric::Euclidean)).unwrap_err();
        assert!(matches!(
            err,
            ModelError::NotEnoughRows { needed: 5, got: 2 }
        ));
        assert!(matches!(
            fit_knn(&FeatureMatrix::new(1), &knn(1, Metric::Euclidean)),
            Err(ModelError::EmptyTrainingSet)
        ));
    }
}
