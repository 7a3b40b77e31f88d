//! Mini-batch MSE training with AdamW, plus a seeded random-search tuner.
//!
//! The loss is computed in z-scored output space, so every output contributes
//! on the same footing regardless of its physical units.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward, Emulator, MlpConfig, MlpParams, Normalizer};
use crate::sampling::Split;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 500,
            batch_size: 64,
            weight_decay: 0.0,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "learning_rate must be > 0, epochs and batch_size >= 1".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("weight_decay must be >= 0 and eps > 0".into()));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Moment estimates for a list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::len).collect();
        Self {
            first: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Position of the first gradient tensor holding a NaN or infinity.
    pub fn first_non_finite(grads: &[Tensor<T>]) -> Option<usize> {
        grads.iter().position(|g| !g.is_finite())
    }

    /// One update. Weight decay is decoupled: `θ ← θ·(1 − lr·λ)` is applied
    /// independently of the bias-corrected Adam step.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], cfg: &TrainConfig) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.first[i].len() {
                return Err(Error::Shape {
                    op: "adamw_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if let Some(i) = Self::first_non_finite(grads) {
            return Err(Error::NonFiniteGradient(format!("parameter tensor {i}")));
        }

        self.steps += 1;
        let t = self.steps as f64;
        let (b1, b2) = cfg.betas;
        let lr = T::lit(cfg.learning_rate);
        let decay = T::lit(1.0 - cfg.learning_rate * cfg.weight_decay);
        let (beta1, beta2) = (T::lit(b1), T::lit(b2));
        let (one_m_b1, one_m_b2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
        let bc1 = T::lit(1.0 - b1.powf(t));
        let bc2 = T::lit(1.0 - b2.powf(t));
        let eps = T::lit(cfg.eps);
        let apply_decay = cfg.weight_decay != 0.0;

        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                if apply_decay {
                    *theta *= decay;
                }
                *mi = beta1 * *mi + one_m_b1 * gi;
                *vi = beta2 * *vi + one_m_b2 * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean normalized MSE over the training batches of each epoch.
    pub train_loss: Vec<f64>,
    /// Normalized MSE on the validation split after each epoch.
    pub val_loss: Vec<f64>,
    pub seconds: f64,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn final_val_loss(&self) -> f64 {
        self.val_loss.last().copied().unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub emulator: Emulator<T>,
    pub report: TrainReport,
}

fn normalized_loss<T: Scalar>(params: &MlpParams<T>, x: &Tensor<T>, z: &Tensor<T>) -> Result<T> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let zv = g.constant(z.clone());
    let (_, out) = forward(&mut g, params, xv, false)?;
    let loss = g.mse_loss(out, zv)?;
    g.value(loss).item()
}

/// Trains an emulator on the train split, tracking validation loss per epoch.
/// Returns the final-epoch parameters.
pub fn train<T: Scalar>(model: &MlpConfig, cfg: &TrainConfig, data: &Dataset<T>) -> Result<TrainOutcome<T>> {
    model.validate()?;
    cfg.validate()?;
    let (x_train, y_train) = data.subset(Split::Train)?;
    let (x_val, y_val) = data.subset(Split::Val)?;
    if x_train.rows() == 0 || x_val.rows() == 0 {
        return Err(Error::Config(format!(
            "training needs non-empty train and val splits (got {} and {})",
            x_train.rows(),
            x_val.rows()
        )));
    }
    if x_train.cols() != model.input_dim || y_train.cols() != model.output_dim {
        return Err(Error::Config(format!(
            "model expects {} inputs / {} outputs, dataset has {} / {}",
            model.input_dim,
            model.output_dim,
            x_train.cols(),
            y_train.cols()
        )));
    }

    let normalizer = Normalizer::fit(&y_train)?;
    let z_train = normalizer.training_targets(&y_train)?;
    let z_val = normalizer.training_targets(&y_val)?;
    let mut params = MlpParams::init(model)?;
    let mut opt = AdamW::new(params.tensors());

    let started = Instant::now();
    let n = x_train.rows();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_loss = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut total = T::zero();
        for batch in order.chunks(cfg.batch_size) {
            let xb = x_train.select_rows(batch);
            let zb = z_train.select_rows(batch);
            let grads = {
                let mut g = Graph::new();
                let xv = g.constant(xb);
                let zv = g.constant(zb);
                let (leaves, out) = forward(&mut g, &params, xv, true)?;
                let loss = g.mse_loss(out, zv)?;
                total += g.value(loss).item()? * T::lit(batch.len() as f64);
                let mut grads = g.backward(loss)?;
                leaves
                    .iter()
                    .map(|&v| grads.take(v).expect("parameter leaf"))
                    .collect::<Vec<_>>()
            };
            if let Some(i) = AdamW::first_non_finite(&grads) {
                return Err(Error::NonFiniteGradient(format!(
                    "{} (epoch {epoch})",
                    MlpParams::<T>::tensor_name(i)
                )));
            }
            opt.step(&mut params.tensors_mut(), &grads, cfg)?;
        }
        train_loss.push((total / T::lit(n as f64)).as_f64());
        val_loss.push(normalized_loss(&params, &x_val, &z_val)?.as_f64());
        log::debug!(
            "epoch {epoch}: train {:.6e} val {:.6e}",
            train_loss[epoch],
            val_loss[epoch]
        );
    }

    let best_epoch = val_loss
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    let report = TrainReport {
        train_loss,
        val_loss,
        seconds: started.elapsed().as_secs_f64(),
        best_epoch,
    };
    Ok(TrainOutcome {
        emulator: Emulator::new(model.clone(), params, normalizer)?,
        report,
    })
}

/// Ranges explored by [`random_search_hpo`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    pub batch_sizes: Vec<usize>,
    /// Log-uniform bounds for non-zero weight decay.
    pub weight_decay: (f64, f64),
    /// Probability of trying no weight decay at all.
    pub zero_weight_decay: f64,
    pub hidden_widths: Vec<usize>,
    pub hidden_depths: Vec<usize>,
    /// Epochs per trial; usually far fewer than a full run.
    pub epochs: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate: (1e-4, 1e-2),
            batch_sizes: vec![32, 64, 128],
            weight_decay: (1e-6, 1e-2),
            zero_weight_decay: 0.25,
            hidden_widths: vec![64, 128, 256],
            hidden_depths: vec![2, 3, 4],
            epochs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub model: MlpConfig,
    pub train: TrainConfig,
    pub val_mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Trial,
    /// Ascending by validation MSE.
    pub leaderboard: Vec<Trial>,
}

fn log_uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo >= hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Seeded random search. The first trial is always the base configuration
/// (at the search epoch budget), so the winner never does worse than it.
pub fn random_search_hpo<T: Scalar>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    base_model: &MlpConfig,
    base_train: &TrainConfig,
    data: &Dataset<T>,
) -> Result<SearchOutcome> {
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    if space.batch_sizes.is_empty() || space.hidden_widths.is_empty() || space.hidden_depths.is_empty() {
        return Err(Error::Config("search space choices must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates = Vec::with_capacity(budget);
    let mut first = base_train.clone();
    first.epochs = space.epochs;
    candidates.push((base_model.clone(), first));
    while candidates.len() < budget {
        let mut train = base_train.clone();
        train.epochs = space.epochs;
        train.learning_rate = log_uniform(&mut rng, space.learning_rate);
        train.batch_size = space.batch_sizes[rng.random_range(0..space.batch_sizes.len())];
        train.weight_decay = if rng.random_bool(space.zero_weight_decay.clamp(0.0, 1.0)) {
            0.0
        } else {
            log_uniform(&mut rng, space.weight_decay)
        };
        let width = space.hidden_widths[rng.random_range(0..space.hidden_widths.len())];
        let depth = space.hidden_depths[rng.random_range(0..space.hidden_depths.len())];
        let model = MlpConfig {
            hidden_layers: vec![width; depth],
            ..base_model.clone()
        };
        candidates.push((model, train));
    }

    let mut leaderboard = Vec::with_capacity(budget);
    for (i, (model, train_cfg)) in candidates.into_iter().enumerate() {
        let outcome = train(&model, &train_cfg, data)?;
        let val = outcome.report.final_val_loss();
        log::info!("trial {i}: val mse {val:.6e}");
        leaderboard.push(Trial {
            model,
            train: train_cfg,
            val_mse: if val.is_nan() { f64::INFINITY } else { val },
        });
    }
    leaderboard.sort_by(|a, b| a.val_mse.total_cmp(&b.val_mse));
    Ok(SearchOutcome {
        best: leaderboard[0].clone(),
        leaderboard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            weight_decay: wd,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_decoupled_decay() {
        let mut p: Tensor<f64> = Tensor::vector(vec![1.0, -2.5, 0.125]);
        let zeros = Tensor::zeros(&[3]);
        let mut opt = AdamW::new([&p]);
        let c = cfg(0.1, 0.01);
        let mut expected = p.data().to_vec();
        for _ in 0..100 {
            opt.step(&mut [&mut p], &[zeros.clone()], &c).unwrap();
            for e in expected.iter_mut() {
                *e *= 1.0 - 0.001;
            }
        }
        for (a, b) in p.data().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn converges_on_one_dimensional_quadratic() {
        let mut theta: Tensor<f64> = Tensor::vector(vec![0.0]);
        let mut opt = AdamW::new([&theta]);
        let c = cfg(0.05, 0.0);
        for _ in 0..200 {
            let g = Tensor::vector(vec![2.0 * (theta.data()[0] - 3.0)]);
            opt.step(&mut [&mut theta], &[g], &c).unwrap();
        }
        assert!((theta.data()[0] - 3.0).abs() < 0.01, "{}", theta.data()[0]);
    }

    #[test]
    fn rejects_non_finite_and_mismatched_gradients() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let mut opt = AdamW::new([&p]);
        let bad = Tensor::vector(vec![f64::NAN, 0.0]);
        assert!(matches!(
            opt.step(&mut [&mut p], &[bad], &cfg(0.1, 0.0)),
            Err(Error::NonFiniteGradient(_))
        ));
        assert_eq!(p.data(), &[1.0, 2.0]);
        let short = Tensor::vector(vec![1.0]);
        assert!(opt.step(&mut [&mut p], &[short], &cfg(0.1, 0.0)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(cfg(0.0, 0.0).validate().is_err());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }
}
