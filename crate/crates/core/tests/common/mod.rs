//! Reference implementations used as test oracles. Everything here is plain
//! loops over `Vec<f64>`, deliberately independent of the library's tensor and
//! graph code.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surrogate_core::autodiff::Graph;
use surrogate_core::model::{forward, MlpParams};
use surrogate_core::{MlpConfig, Tensor};

pub type Weights = Vec<(Vec<Vec<f64>>, Vec<f64>)>;

pub fn weights_of(params: &MlpParams<f64>) -> Weights {
    params
        .layers
        .iter()
        .map(|l| {
            let w = (0..l.weight.rows()).map(|r| l.weight.row(r).to_vec()).collect();
            (w, l.bias.data().to_vec())
        })
        .collect()
}

/// Output rows and the sign pattern of every hidden pre-activation.
pub fn naive_forward(weights: &Weights, x: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut signs = Vec::new();
    let last = weights.len() - 1;
    let out = x
        .iter()
        .map(|row| {
            let mut h = row.clone();
            for (idx, (w, b)) in weights.iter().enumerate() {
                let mut z = b.clone();
                for (i, hi) in h.iter().enumerate() {
                    for (o, zo) in z.iter_mut().enumerate() {
                        *zo += hi * w[i][o];
                    }
                }
                if idx != last {
                    signs.extend(z.iter().map(|&v| v > 0.0));
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                h = z;
            }
            h
        })
        .collect();
    (out, signs)
}

pub fn naive_mse(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, t) in pred.iter().zip(target) {
        for (a, b) in p.iter().zip(t) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    sum / n as f64
}

/// Relative error with a small absolute floor so that near-zero gradients are
/// judged on absolute error instead.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn to_tensor(rows: &[Vec<f64>]) -> Tensor<f64> {
    Tensor::from_rows(rows).unwrap()
}

/// Compares reverse-mode gradients of an MSE loss on a random MLP (≤ 3 hidden
/// layers, width ≤ 8) against central differences of the naive loss, for
/// every parameter and every input coordinate. Coordinates whose ±h probes
/// flip a ReLU are skipped: the loss is not differentiable across the kink.
pub fn gradient_check(seed: u64, h: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let config = MlpConfig {
        input_dim: rng.random_range(1..=5),
        hidden_layers: (0..depth).map(|_| rng.random_range(2..=8)).collect(),
        output_dim: rng.random_range(1..=4),
        seed: rng.random(),
    };
    let mut params = MlpParams::<f64>::init(&config).unwrap();
    for layer in &mut params.layers {
        for b in layer.bias.data_mut() {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let batch = rng.random_range(1..=4);
    let x = random_rows(&mut rng, batch, config.input_dim);
    let y = random_rows(&mut rng, batch, config.output_dim);

    let mut g = Graph::new();
    let xv = g.input(to_tensor(&x));
    let yv = g.constant(to_tensor(&y));
    let (leaves, out) = forward(&mut g, &params, xv, true).unwrap();
    let loss = g.mse_loss(out, yv).unwrap();
    let grads = g.backward(loss).unwrap();

    let base = weights_of(&params);
    let (_, base_signs) = naive_forward(&base, &x);
    let mut result = GradCheck {
        max_rel_err: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut judge = |analytic: f64, plus: (f64, Vec<bool>), minus: (f64, Vec<bool>)| {
        if plus.1 != base_signs || minus.1 != base_signs {
            result.skipped_kinks += 1;
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * h);
        result.max_rel_err = result.max_rel_err.max(rel_err(analytic, numeric));
        result.checked += 1;
    };
    let eval = |w: &Weights, x: &[Vec<f64>]| {
        let (p, s) = naive_forward(w, x);
        (naive_mse(&p, &y), s)
    };

    for (li, (w, b)) in base.iter().enumerate() {
        let gw = grads.get(leaves[2 * li]).unwrap();
        let gb = grads.get(leaves[2 * li + 1]).unwrap();
        for i in 0..w.len() {
            for o in 0..w[i].len() {
                let mut plus = base.clone();
                plus[li].0[i][o] += h;
                let mut minus = base.clone();
                minus[li].0[i][o] -= h;
                judge(gw.get(i, o), eval(&plus, &x), eval(&minus, &x));
            }
        }
        for o in 0..b.len() {
            let mut plus = base.clone();
            plus[li].1[o] += h;
            let mut minus = base.clone();
            minus[li].1[o] -= h;
            judge(gb.data()[o], eval(&plus, &x), eval(&minus, &x));
        }
    }
    let gx = grads.get(xv).unwrap();
    for r in 0..x.len() {
        for c in 0..x[r].len() {
            let mut plus = x.clone();
            plus[r][c] += h;
            let mut minus = x.clone();
            minus[r][c] -= h;
            judge(gx.get(r, c), eval(&base, &plus), eval(&base, &minus));
        }
    }
    result
}

/// Textbook Adam (no weight decay) on a flat parameter vector.
pub struct ReferenceAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
}

impl ReferenceAdam {
    pub fn new(n: usize, lr: f64, b1: f64, b2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            b1,
            b2,
            eps,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * grad[i];
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - self.b1.powi(self.t));
            let v_hat = self.v[i] / (1.0 - self.b2.powi(self.t));
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Median over defined entries of |S^σ_fd − S^σ_closed| / S^σ_closed for the
/// oracle with `n_blocks` finite-difference blocks drawn from `seed`.
pub fn fd_dgsm_median_error(
    oracle: &surrogate_core::OracleCoefficients<f64>,
    n_blocks: usize,
    seed: u64,
) -> f64 {
    use surrogate_core::sampling::{build_dgsm_blocks, InputSchema};
    use surrogate_core::sensitivity::{dgsm_closed_form, dgsm_finite_diff};
    let schema = InputSchema::default();
    let blocks = build_dgsm_blocks(n_blocks, 0.01, &schema, seed).unwrap();
    let fd = dgsm_finite_diff(&blocks, &schema, |x| oracle.eval_batch(x)).unwrap();
    let base: Vec<&[f64]> = blocks.iter().map(|b| b.base.values.as_slice()).collect();
    let cf = dgsm_closed_form(oracle, &Tensor::from_rows(&base).unwrap(), &schema).unwrap();
    let mut errs = Vec::new();
    for i in 0..cf.n_inputs() {
        for j in (0..cf.n_outputs()).filter(|&j| cf.defined[j] && fd.defined[j]) {
            let truth = cf.normalized.get(i, j);
            if truth > 0.0 {
                errs.push((fd.normalized.get(i, j) - truth).abs() / truth);
            }
        }
    }
    median(&mut errs)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
