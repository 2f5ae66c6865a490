//! Small fully-connected regressor: three hidden layers, linear output,
//! Adam on mini-batches with L2 weight decay and early stopping against a
//! chronological validation tail. Inputs are standardized; labels stay in
//! bpm, so the output bias starts at the label mean to keep early epochs
//! sane.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::FeatureMatrix;
use crate::synth::{splitmix64, uniform01};

use super::{
    Activation, Hyperparams, MlpParams, MlpStore, ModelArtifact, ModelError, ModelKind, Payload,
    Standardizer, TrainMeta,
};

/// Validation improvements smaller than this don't reset the patience.
const EARLY_STOP_MIN_DELTA: f64 = 1e-10;
/// Chronological tail fraction held out for early stopping.
const VALIDATION_FRAC: f64 = 0.1;
/// Stream tag mixed into the seed for weight initialization.
const STREAM_INIT: u64 = 0x4d4c50;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Dense network weights. `weights[l]` maps layer `l` activations to layer
/// `l + 1`, stored row-major `out x in`; hidden layers apply the
/// activation, the output neuron is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    /// Layer widths, input first, single output last.
    pub sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

impl MlpNet {
    fn act(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn act_deriv(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh() * z.tanh(),
        }
    }

    /// Forward pass on an already-standardized input.
    pub fn forward(&self, x: &[f64]) -> f64 {
        let last = self.weights.len() - 1;
        let mut a = x.to_vec();
        for l in 0..=last {
            let n_out = self.sizes[l + 1];
            let n_in = self.sizes[l];
            let mut next = vec![0.0; n_out];
            for (o, slot) in next.iter_mut().enumerate() {
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                let z = row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + self.biases[l][o];
                *slot = if l < last { self.act(z) } else { z };
            }
            a = next;
        }
        a[0]
    }

    pub fn weight_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }
}

/// Per-parameter buffers shaped like a net's weights and biases.
struct Shaped {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl Shaped {
    fn zeroed_like(net: &MlpNet) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn zero(&mut self) {
        for w in &mut self.weights {
            w.fill(0.0);
        }
        for b in &mut self.biases {
            b.fill(0.0);
        }
    }
}

/// Batch loss `mean((pred - y)^2) + (alpha/2) * sum(w^2)` (biases
/// unpenalized) and its gradient. `rows` indexes into `xs`, which holds
/// standardized features row-major.
fn loss_and_grad(
    net: &MlpNet,
    xs: &[f64],
    ys: &[f64],
    rows: &[usize],
    alpha: f64,
    grad: &mut Shaped,
) -> f64 {
    let k = net.sizes[0];
    let last = net.weights.len() - 1;
    let batch = rows.len() as f64;
    grad.zero();

    let mut sq_sum = 0.0;
    // per-layer pre-activations and activations, reused across samples
    let mut zs: Vec<Vec<f64>> = net.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
    let mut acts: Vec<Vec<f64>> = net.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
    let mut deltas: Vec<Vec<f64>> = net.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();

    for &r in rows {
        let x = &xs[r * k..(r + 1) * k];
        for l in 0..=last {
            let n_in = net.sizes[l];
            for o in 0..net.sizes[l + 1] {
                let row = &net.weights[l][o * n_in..(o + 1) * n_in];
                let z = if l == 0 {
                    row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                } else {
                    let prev = &acts[l - 1];
                    row.iter().zip(prev).map(|(w, v)| w * v).sum::<f64>()
                } + net.biases[l][o];
                zs[l][o] = z;
                acts[l][o] = if l < last { net.act(z) } else { z };
            }
        }
        let pred = acts[last][0];
        let err = pred - ys[r];
        sq_sum += err * err;

        deltas[last][0] = 2.0 * err / batch;
        for l in (0..last).rev() {
            let n_here = net.sizes[l + 1];
            let n_up = net.sizes[l + 2];
            for o in 0..n_here {
                let mut back = 0.0;
                for u in 0..n_up {
                    back += net.weights[l + 1][u * n_here + o] * deltas[l + 1][u];
                }
                deltas[l][o] = back * net.act_deriv(zs[l][o]);
            }
        }
        for l in 0..=last {
            let n_in = net.sizes[l];
            for o in 0..net.sizes[l + 1] {
                let d = deltas[l][o];
                let g_row = &mut grad.weights[l][o * n_in..(o + 1) * n_in];
                if l == 0 {
                    for (g, v) in g_row.iter_mut().zip(x) {
                        *g += d * v;
                    }
                } else {
                    for (g, v) in g_row.iter_mut().zip(&acts[l - 1]) {
                        *g += d * v;
                    }
                }
                grad.biases[l][o] += d;
            }
        }
    }

    let mut reg = 0.0;
    for (w, g) in net.weights.iter().zip(&mut grad.weights) {
        for (wi, gi) in w.iter().zip(g.iter_mut()) {
            reg += wi * wi;
            *gi += alpha * wi;
        }
    }
    sq_sum / batch + 0.5 * alpha * reg
}

/// Loss over every row of `xs` (row-major, `ys.len()` rows of `net.sizes[0]`
/// features) and its gradient, returned as weight and bias buffers shaped
/// like the net's own.
pub fn batch_gradient(
    net: &MlpNet,
    xs: &[f64],
    ys: &[f64],
    alpha: f64,
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rows: Vec<usize> = (0..ys.len()).collect();
    let mut grad = Shaped::zeroed_like(net);
    let loss = loss_and_grad(net, xs, ys, &rows, alpha, &mut grad);
    (loss, grad.weights, grad.biases)
}

fn mse_on(net: &MlpNet, xs: &[f64], ys: &[f64], rows: &[usize], k: usize) -> f64 {
    rows.iter()
        .map(|&r| {
            let e = net.forward(&xs[r * k..(r + 1) * k]) - ys[r];
            e * e
        })
        .sum::<f64>()
        / rows.len() as f64
}

/// Fit the network. `seed` drives the weight initialization and the batch
/// shuffling; everything else is deterministic.
pub fn fit_mlp(
    train: &FeatureMatrix,
    params: &MlpParams,
    seed: u64,
) -> Result<ModelArtifact, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let n = train.len();
    if n < 2 {
        return Err(ModelError::NotEnoughRows { needed: 2, got: n });
    }
    let k = train.k();
    let n_val = ((n as f64 * VALIDATION_FRAC) as usize).max(1);
    let n_fit = n - n_val;
    let fit_rows: Vec<usize> = (0..n_fit).collect();
    let val_rows: Vec<usize> = (n_fit..n).collect();

    let fit_subset = train.subset(&fit_rows);
    let scaler = Standardizer::fit(&fit_subset);
    let mut xs = vec![0.0; n * k];
    for i in 0..n {
        scaler.apply(train.row(i), &mut xs[i * k..(i + 1) * k]);
    }
    let ys = train.labels();
    let label_mean = fit_rows.iter().map(|&r| ys[r]).sum::<f64>() / n_fit as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(STREAM_INIT)));
    let sizes = vec![
        k,
        params.hidden[0] as usize,
        params.hidden[1] as usize,
        params.hidden[2] as usize,
        1,
    ];
    let mut net = MlpNet {
        sizes: sizes.clone(),
        weights: Vec::new(),
        biases: Vec::new(),
        activation: params.activation,
    };
    for l in 0..sizes.len() - 1 {
        let bound = 1.0 / (sizes[l] as f64).sqrt();
        let w = (0..sizes[l] * sizes[l + 1])
            .map(|_| (uniform01(&mut rng) * 2.0 - 1.0) * bound)
            .collect();
        net.weights.push(w);
        net.biases.push(vec![0.0; sizes[l + 1]]);
    }
    *net.biases.last_mut().unwrap().last_mut().unwrap() = label_mean;

    let mut grad = Shaped::zeroed_like(&net);
    let mut adam_m = Shaped::zeroed_like(&net);
    let mut adam_v = Shaped::zeroed_like(&net);
    let mut step = 0u64;
    let batch_size = (params.batch_size as usize).max(1);

    let mut best_net = net.clone();
    let mut best_val = mse_on(&net, &xs, ys, &val_rows, k);
    let mut stale = 0u32;
    let mut order = fit_rows.clone();

    for _ in 0..params.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            loss_and_grad(&net, &xs, ys, batch, params.alpha, &mut grad);
            step += 1;
            let c1 = 1.0 - ADAM_BETA1.powi(step as i32);
            let c2 = 1.0 - ADAM_BETA2.powi(step as i32);
            for l in 0..net.weights.len() {
                for (idx, g) in grad.weights[l].iter().enumerate() {
                    let m = &mut adam_m.weights[l][idx];
                    let v = &mut adam_v.weights[l][idx];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    net.weights[l][idx] -=
                        params.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
                for (idx, g) in grad.biases[l].iter().enumerate() {
                    let m = &mut adam_m.biases[l][idx];
                    let v = &mut adam_v.biases[l][idx];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    net.biases[l][idx] -=
                        params.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
        }
        let val = mse_on(&net, &xs, ys, &val_rows, k);
        if val < best_val - EARLY_STOP_MIN_DELTA {
            best_val = val;
            best_net = net.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                break;
            }
        }
    }

    Ok(ModelArtifact {
        kind: ModelKind::Mlp,
        hyperparams: Hyperparams::Mlp(params.clone()),
        meta: TrainMeta {
            k,
            n_rows: n,
            seed,
        },
        payload: Payload::Mlp(MlpStore {
            net: best_net,
            scaler,
        }),
    })
}

pub(crate) fn predict(store: &MlpStore, x: &[f64]) -> f64 {
    let mut z = vec![0.0; x.len()];
    store.scaler.apply(x, &mut z);
    store.net.forward(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::predict as model_predict;

    fn line_matrix(n: usize) -> FeatureMatrix {
        let mut fm = FeatureMatrix::new(2);
        for i in 0..n {
            let x = [60.0 + (i % 17) as f64, 60.0 + ((i * 5) % 23) as f64];
            fm.push_row(&x, 0.8 * x[0] + 0.2 * x[1] + 2.0, i as f64);
        }
        fm
    }

    /// Central finite differences against the analytic gradient; relative
    /// error per parameter stays under 1e-4.
    #[test]
    fn gradient_matches_finite_differences() {
        let fm = line_matrix(6);
        let k = fm.k();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sizes = vec![k, 3, 2, 2, 1];
        let mut net = MlpNet {
            sizes: sizes.clone(),
            weights: Vec::new(),
            biases: Vec::new(),
            activation: Activation::Tanh,
        };
        for l in 0..sizes.len() - 1 {
            net.weights.push(
                (0..sizes[l] * sizes[l + 1])
                    .map(|_| uniform01(&mut rng) - 0.5)
                    .collect(),
            );
            net.biases.push(
                (0..sizes[l + 1])
                    .map(|_| uniform01(&mut rng) - 0.5)
                    .collect(),
            );
        }

        let scaler = Standardizer::fit(&fm);
        let mut xs = vec![0.0; fm.len() * k];
        for i in 0..fm.len() {
            scaler.apply(fm.row(i), &mut xs[i * k..(i + 1) * k]);
        }
        let rows: Vec<usize> = (0..fm.len()).collect();
        let alpha = 0.1;

        let mut grad = Shaped::zeroed_like(&net);
        loss_and_grad(&net, &xs, fm.labels(), &rows, alpha, &mut grad);

        let h = 1e-6;
        let mut scratch = Shaped::zeroed_like(&net);
        let mut check = |get: &mut dyn FnMut(&mut MlpNet) -> &mut f64, analytic: f64| {
            let mut plus = net.clone();
            *get(&mut plus) += h;
            let mut minus = net.clone();
            *get(&mut minus) -= h;
            let lp = loss_and_grad(&plus, &xs, fm.labels(), &rows, alpha, &mut scratch);
            let lm = loss_and_grad(&minus, &xs, fm.labels(), &rows, alpha, &mut scratch);
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "analytic {analytic} vs numeric {numeric}");
        };
        for l in 0..net.weights.len() {
            for idx in 0..net.weights[l].len() {
                let a = grad.weights[l][idx];
                check(&mut |n: &mut MlpNet| &mut n.weights[l][idx], a);
            }
            for idx in 0..net.biases[l].len() {
                let a = grad.biases[l][idx];
                check(&mut |n: &mut MlpNet| &mut n.biases[l][idx], a);
            }
        }
    }

    #[test]
    fn constant_labels_learn_the_constant() {
        let mut fm = FeatureMatrix::new(1);
        for i in 0..20 {
            fm.push_row(&[60.0 + (i % 7) as f64], 77.0, i as f64);
        }
        let p = MlpParams {
            alpha: 0.0,
            ..MlpParams::default()
        };
        let m = fit_mlp(&fm, &p, 1).unwrap();
        for i in 0..fm.len() {
            let pred = model_predict(&m, fm.row(i)).unwrap();
            assert!((pred - 77.0).abs() <= 0.5, "row {i}: {pred}");
        }
    }

    #[test]
    fn fits_a_linear_relation_better_than_the_mean() {
        let fm = line_matrix(80);
        let m = fit_mlp(&fm, &MlpParams::default(), 2).unwrap();
        let labels = fm.labels();
        let mean = labels.iter().sum::<f64>() / labels.len() as f64;
        let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / labels.len() as f64;
        let mse = (0..fm.len())
            .map(|i| {
                let e = model_predict(&m, fm.row(i)).unwrap() - fm.label(i);
                e * e
            })
            .sum::<f64>()
            / fm.len() as f64;
        assert!(mse < 0.5 * var, "mse {mse} vs label variance {var}");
    }

    #[test]
    fn seed_controls_the_fit() {
        let fm = line_matrix(40);
        let a = fit_mlp(&fm, &MlpParams::default(), 9).unwrap();
        let b = fit_mlp(&fm, &MlpParams::default(), 9).unwrap();
        let c = fit_mlp(&fm, &MlpParams::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.payload, c.payload);
    }

    #[test]
    fn needs_two_rows() {
        let mut fm = FeatureMatrix::new(1);
        fm.push_row(&[70.0], 71.0, 0.0);
        assert!(matches!(
            fit_mlp(&fm, &MlpParams::default(), 0),
            Err(ModelError::NotEnoughRows { needed: 2, got: 1 })
        ));
        assert!(matches!(
            fit_mlp(&FeatureMatrix::new(1), &MlpParams::default(), 0),
            Err(ModelError::EmptyTrainingSet)
        ));
    }
}
