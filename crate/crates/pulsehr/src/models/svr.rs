//! Epsilon-insensitive support-vector regression, solved in the dual with
//! sequential minimal optimization over the doubled variable vector
//! `[alpha; alpha*]`. Features are standardized before the kernel sees
//! them; labels stay in bpm, so `c` and `epsilon_bpm` act on that scale.

use crate::dataset::FeatureMatrix;

use super::{
    GammaMode, Hyperparams, Kernel, ModelArtifact, ModelError, ModelKind, Payload, Standardizer,
    SvrParams, SvrStore, TrainMeta,
};

/// Stop once the maximal KKT violation drops to this.
const SMO_TOL: f64 = 1e-3;
/// Hard cap on pair updates; hitting it with a violation above
/// `10 * SMO_TOL` reports `NoConvergence`.
const MAX_SMO_ITER: usize = 1_000_000;
/// Full kernel matrix is precomputed up to this many rows; beyond it the
/// two active rows are recomputed per iteration.
const KERNEL_CACHE_MAX: usize = 2048;
/// Floor on the pair curvature, for numerically flat directions.
const CURVATURE_FLOOR: f64 = 1e-12;

fn kernel(params: &SvrParams, gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    match params.kernel {
        Kernel::Rbf => {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            (-gamma * d2).exp()
        }
        Kernel::Sigmoid => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (gamma * dot + params.coef0).tanh()
        }
        Kernel::Polynomial => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (gamma * dot + params.coef0).powi(params.degree as i32)
        }
    }
}

/// `1 / (k * var)` over the standardized feature entries; per-column
/// z-scoring makes the flat variance about 1, so this lands near `1/k`.
fn resolve_gamma(params: &SvrParams, xs: &[f64], k: usize) -> f64 {
    match params.gamma {
        GammaMode::Fixed(g) => g,
        GammaMode::Scale => {
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                1.0 / (k as f64 * var)
            } else {
                1.0 / k as f64
            }
        }
    }
}

struct SmoResult {
    beta: Vec<f64>,
    bias: f64,
    violation: f64,
}

/// One SMO run. Doubled variables `u < n` carry sign +1 (the `alpha` block),
/// `u >= n` sign -1 (`alpha*`); the equality constraint `sum(s*alpha) = 0`
/// is preserved by every pair step.
fn smo(
    xs: &[f64],
    y: &[f64],
    k: usize,
    params: &SvrParams,
    gamma: f64,
    max_iter: usize,
) -> SmoResult {
    let n = y.len();
    let two_n = 2 * n;
    let c = params.c;
    let eps = params.epsilon_bpm;
    let sign = |u: usize| if u < n { 1.0 } else { -1.0 };
    let feat = |i: usize| &xs[i * k..(i + 1) * k];

    let mut alpha = vec![0.0f64; two_n];
    let mut grad: Vec<f64> = (0..two_n)
        .map(|u| if u < n { eps - y[u] } else { eps + y[u - n] })
        .collect();

    let cache: Option<Vec<f64>> = (n <= KERNEL_CACHE_MAX).then(|| {
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel(params, gamma, feat(i), feat(j));
                m[i * n + j] = v;
                m[j * n + i] = v;
            }
        }
        m
    });
    let diag: Vec<f64> = (0..n)
        .map(|i| match &cache {
            Some(m) => m[i * n + i],
            None => kernel(params, gamma, feat(i), feat(i)),
        })
        .collect();
    let mut row_i_buf = vec![0.0; n];
    let mut row_j_buf = vec![0.0; n];

    // max/min of -s*grad over coordinates still movable in each direction;
    // their gap is the KKT violation
    let extremes = |alpha: &[f64], grad: &[f64]| {
        let mut up_max = f64::NEG_INFINITY;
        let mut up_arg = 0usize;
        let mut low_min = f64::INFINITY;
        for u in 0..two_n {
            let s = sign(u);
            let v = -s * grad[u];
            let movable_up = if s > 0.0 { alpha[u] < c } else { alpha[u] > 0.0 };
            let movable_down = if s > 0.0 { alpha[u] > 0.0 } else { alpha[u] < c };
            if movable_up && v > up_max {
                up_max = v;
                up_arg = u;
            }
            if movable_down && v < low_min {
                low_min = v;
            }
        }
        (up_max, up_arg, low_min)
    };

    for _ in 0..max_iter {
        let (m_up, i, m_low) = extremes(&alpha, &grad);
        if m_up - m_low <= SMO_TOL {
            break;
        }
        let ib = i % n;
        let si = sign(i);
        let row_i: &[f64] = match &cache {
            Some(m) => &m[ib * n..(ib + 1) * n],
            None => {
                for (t, slot) in row_i_buf.iter_mut().enumerate() {
                    *slot = kernel(params, gamma, feat(ib), feat(t));
                }
                &row_i_buf
            }
        };

        // second-order choice of the partner: largest expected decrease
        let mut best_score = f64::NEG_INFINITY;
        let mut j_pick = None;
        for u in 0..two_n {
            let s = sign(u);
            let movable_down = if s > 0.0 { alpha[u] > 0.0 } else { alpha[u] < c };
            if !movable_down {
                continue;
            }
            let v = -s * grad[u];
            if v < m_up {
                let gap = m_up - v;
                let curv = (diag[ib] + diag[u % n] - 2.0 * row_i[u % n]).max(CURVATURE_FLOOR);
                let score = gap * gap / curv;
                if score > best_score {
                    best_score = score;
                    j_pick = Some(u);
                }
            }
        }
        let Some(j) = j_pick else { break };
        let jb = j % n;
        let sj = sign(j);

        let curv = (diag[ib] + diag[jb] - 2.0 * row_i[jb]).max(CURVATURE_FLOOR);
        let headroom_i = if si > 0.0 { c - alpha[i] } else { alpha[i] };
        let headroom_j = if sj > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = ((m_up - (-sj * grad[j])) / curv)
            .min(headroom_i)
            .min(headroom_j);

        let row_j: &[f64] = match &cache {
            Some(m) => &m[jb * n..(jb + 1) * n],
            None => {
                for (t, slot) in row_j_buf.iter_mut().enumerate() {
                    *slot = kernel(params, gamma, feat(jb), feat(t));
                }
                &row_j_buf
            }
        };

        alpha[i] = (alpha[i] + si * step).clamp(0.0, c);
        alpha[j] = (alpha[j] - sj * step).clamp(0.0, c);
        for u in 0..two_n {
            grad[u] += sign(u) * step * (row_i[u % n] - row_j[u % n]);
        }
    }

    let (m_up, _, m_low) = extremes(&alpha, &grad);
    let free: Vec<f64> = (0..two_n)
        .filter(|&u| alpha[u] > 0.0 && alpha[u] < c)
        .map(|u| -sign(u) * grad[u])
        .collect();
    let bias = if free.is_empty() {
        (m_up + m_low) / 2.0
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    let beta: Vec<f64> = (0..n).map(|i| alpha[i] - alpha[i + n]).collect();
    SmoResult {
        beta,
        bias,
        violation: m_up - m_low,
    }
}

fn fit_with_cap(
    train: &FeatureMatrix,
    params: &SvrParams,
    max_iter: usize,
) -> Result<ModelArtifact, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let n = train.len();
    let k = train.k();
    let scaler = Standardizer::fit(train);
    let mut xs = vec![0.0; n * k];
    for i in 0..n {
        scaler.apply(train.row(i), &mut xs[i * k..(i + 1) * k]);
    }
    let gamma = resolve_gamma(params, &xs, k);
    let out = smo(&xs, train.labels(), k, params, gamma, max_iter);

    let mut support = Vec::new();
    let mut coefs = Vec::new();
    for (i, &b) in out.beta.iter().enumerate() {
        if b != 0.0 {
            support.extend_from_slice(&xs[i * k..(i + 1) * k]);
            coefs.push(b);
        }
    }
    let artifact = ModelArtifact {
        kind: ModelKind::Svr,
        hyperparams: Hyperparams::Svr(params.clone()),
        meta: TrainMeta {
            k,
            n_rows: n,
            seed: 0,
        },
        payload: Payload::Svr(SvrStore {
            support,
            coefs,
            bias: out.bias,
            gamma,
            scaler,
        }),
    };
    if out.violation > 10.0 * SMO_TOL {
        return Err(ModelError::NoConvergence {
            violation: out.violation,
            artifact: Box::new(artifact),
        });
    }
    Ok(artifact)
}

/// Fit an epsilon-SVR.
pub fn fit_svr(train: &FeatureMatrix, params: &SvrParams) -> Result<ModelArtifact, ModelError> {
    fit_with_cap(train, params, MAX_SMO_ITER)
}

pub(crate) fn predict(store: &SvrStore, params: &SvrParams, k: usize, x: &[f64]) -> f64 {
    let mut z = vec![0.0; k];
    store.scaler.apply(x, &mut z);
    store
        .coefs
        .iter()
        .enumerate()
        .map(|(i, &b)| b * kernel(params, store.gamma, &store.support[i * k..(i + 1) * k], &z))
        .sum::<f64>()
        + store.bias
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::predict as model_predict;

    fn wave_matrix(n: usize) -> FeatureMatrix {
        let mut fm = FeatureMatrix::new(1);
        for i in 0..n {
            let x = i as f64;
            fm.push_row(&[x], 70.0 + 10.0 * (x / 3.0).sin(), x);
        }
        fm
    }

    fn params(c: f64, epsilon_bpm: f64) -> SvrParams {
        SvrParams {
            c,
            epsilon_bpm,
            ..SvrParams::default()
        }
    }

    /// Recover each training row's dual coefficient from the stored support
    /// set by matching its standardized features.
    fn beta_of_rows(m: &ModelArtifact, fm: &FeatureMatrix) -> Vec<f64> {
        let Payload::Svr(store) = &m.payload else { unreachable!() };
        let k = fm.k();
        let mut z = vec![0.0; k];
        (0..fm.len())
            .map(|i| {
                store.scaler.apply(fm.row(i), &mut z);
                for (s, &coef) in store.coefs.iter().enumerate() {
                    let sv = &store.support[s * k..(s + 1) * k];
                    if sv.iter().zip(&z).all(|(a, b)| (a - b).abs() < 1e-12) {
                        return coef;
                    }
                }
                0.0
            })
            .collect()
    }

    #[test]
    fn residuals_respect_the_insensitive_tube() {
        let fm = wave_matrix(30);
        let p = params(1000.0, 0.5);
        let m = fit_svr(&fm, &p).unwrap();
        let beta = beta_of_rows(&m, &fm);
        for i in 0..fm.len() {
            let r = fm.label(i) - model_predict(&m, fm.row(i)).unwrap();
            if beta[i].abs() < p.c - 1e-9 {
                assert!(r.abs() <= p.epsilon_bpm + 0.01, "row {i}: residual {r}");
            }
        }
    }

    #[test]
    fn capped_coefficients_sit_outside_the_tube() {
        // c too small to chase the wave: every violated row must be capped
        let fm = wave_matrix(30);
        let p = params(0.05, 0.5);
        let m = fit_svr(&fm, &p).unwrap();
        let beta = beta_of_rows(&m, &fm);
        for i in 0..fm.len() {
            let r = fm.label(i) - model_predict(&m, fm.row(i)).unwrap();
            if beta[i] >= p.c - 1e-9 {
                assert!(r >= p.epsilon_bpm - 0.01, "row {i}: residual {r}");
            }
            if beta[i] <= -p.c + 1e-9 {
                assert!(r <= -p.epsilon_bpm + 0.01, "row {i}: residual {r}");
            }
            if beta[i].abs() < p.c - 1e-9 {
                assert!(r.abs() <= p.epsilon_bpm + 0.01, "row {i}: residual {r}");
            }
        }
    }

    #[test]
    fn dual_solution_is_feasible() {
        for c in [0.05, 1.0, 1000.0] {
            let fm = wave_matrix(40);
            let m = fit_svr(&fm, &params(c, 0.5)).unwrap();
            let Payload::Svr(store) = &m.payload else { unreachable!() };
            assert!(store.coefs.iter().all(|b| b.abs() <= c + 1e-12));
            assert!(store.coefs.iter().sum::<f64>().abs() <= 1e-6);
        }
    }

    #[test]
    fn tiny_c_predicts_near_the_label_center() {
        let mut fm = FeatureMatrix::new(1);
        for i in 0..12 {
            fm.push_row(&[i as f64], if i % 2 == 0 { 90.0 } else { 110.0 }, i as f64);
        }
        let m = fit_svr(&fm, &params(1e-6, 0.5)).unwrap();
        for i in 0..fm.len() {
            let p = model_predict(&m, fm.row(i)).unwrap();
            assert!((p - 100.0).abs() <= 3.0, "row {i}: {p}");
        }
    }

    #[test]
    fn iteration_cap_reports_the_partial_model() {
        let fm = wave_matrix(30);
        let err = fit_with_cap(&fm, &params(1000.0, 0.01), 3).unwrap_err();
        let ModelError::NoConvergence { violation, artifact } = err else {
            panic!("expected NoConvergence");
        };
        assert!(violation > 10.0 * SMO_TOL);
        let p = model_predict(&artifact, fm.row(0)).unwrap();
        assert!(p.is_finite());
    }

    #[test]
    fn fit_is_deterministic() {
        let fm = wave_matrix(35);
        let a = fit_svr(&fm, &params(10.0, 0.5)).unwrap();
        let b = fit_svr(&fm, &params(10.0, 0.5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sigmoid_and_polynomial_kernels_fit() {
        let fm = wave_matrix(25);
        for kernel in [Kernel::Sigmoid, Kernel::Polynomial] {
            let p = SvrParams {
                kernel,
                c: 10.0,
                coef0: 1.0,
                ..SvrParams::default()
            };
            let m = fit_svr(&fm, &p).unwrap();
            let Payload::Svr(store) = &m.payload else { unreachable!() };
            assert!(store.coefs.iter().sum::<f64>().abs() <= 1e-6);
            let pred = model_predict(&m, fm.row(5)).unwrap();
            assert!(pred.is_finite());
        }
    }

    #[test]
    fn single_row_predicts_its_own_label() {
        let mut fm = FeatureMatrix::new(2);
        fm.push_row(&[70.0, 71.0], 72.0, 0.0);
        let m = fit_svr(&fm, &params(1.0, 0.5)).unwrap();
        assert_eq!(model_predict(&m, &[70.0, 71.0]).unwrap(), 72.0);
    }
}
