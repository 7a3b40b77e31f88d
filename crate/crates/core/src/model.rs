//! Feed-forward emulator.
//!
//! Hidden layers are fully connected with ReLU activations; the output head is
//! linear because it predicts z-scored values. Inputs are used as-is (they
//! already live on the unit interval) while outputs are standardized per
//! column with training-set statistics held in a [`Normalizer`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
    pub seed: u64,
}

impl MlpConfig {
    /// Four hidden layers of 256 units over twelve inputs.
    pub fn standard(output_dim: usize, seed: u64) -> Self {
        Self {
            input_dim: 12,
            hidden_layers: vec![256; 4],
            output_dim,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input_dim and output_dim must be at least 1".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::Config("at least one hidden layer is required".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every layer including the output head.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_layers.len() + 2);
        widths.push(self.input_dim);
        widths.extend_from_slice(&self.hidden_layers);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// fan_in × fan_out
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> MlpParams<T> {
    /// He-normal weights (variance 2/fan_in), zero biases.
    pub fn init(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let w = (0..fan_in * fan_out).map(|_| T::lit(dist.sample(&mut rng))).collect();
                Layer {
                    weight: Tensor::matrix(fan_in, fan_out, w).expect("sized"),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(config: &MlpConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            layers: config
                .layer_dims()
                .into_iter()
                .map(|(i, o)| Layer {
                    weight: Tensor::zeros(&[i, o]),
                    bias: Tensor::zeros(&[o]),
                })
                .collect(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weight and bias tensors in layer order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Human-readable name of the tensor at position `i` of [`MlpParams::tensors`].
    pub fn tensor_name(i: usize) -> String {
        format!("layer {} {}", i / 2, if i.is_multiple_of(2) { "weight" } else { "bias" })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    fn check_against(&self, config: &MlpConfig) -> Result<()> {
        let dims = config.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::Schema(format!(
                "config describes {} layers, parameters have {}",
                dims.len(),
                self.layers.len()
            )));
        }
        for (idx, ((i, o), layer)) in dims.iter().zip(&self.layers).enumerate() {
            if layer.weight.shape() != [*i, *o] || layer.bias.shape() != [*o] {
                return Err(Error::Schema(format!(
                    "layer {idx}: expected weight [{i}, {o}] and bias [{o}], got {:?} and {:?}",
                    layer.weight.shape(),
                    layer.bias.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Builds the forward pass for `x` on `graph`. Returns the parameter leaves
/// (`w0, b0, ...`) and the normalized output node.
pub fn forward<T: Scalar>(
    graph: &mut Graph<T>,
    params: &MlpParams<T>,
    x: Var,
    trainable: bool,
) -> Result<(Vec<Var>, Var)> {
    let mut leaves = Vec::with_capacity(params.layers.len() * 2);
    let mut h = x;
    let last = params.layers.len() - 1;
    for (idx, layer) in params.layers.iter().enumerate() {
        let (w, b) = if trainable {
            (graph.parameter(layer.weight.clone()), graph.parameter(layer.bias.clone()))
        } else {
            (graph.constant(layer.weight.clone()), graph.constant(layer.bias.clone()))
        };
        leaves.push(w);
        leaves.push(b);
        let z = graph.matmul(h, w)?;
        let z = graph.add_bias(z, b)?;
        h = if idx == last { z } else { graph.relu(z) };
    }
    Ok((leaves, h))
}

pub const DEFAULT_SIGMA_FLOOR: f64 = stats::SIGMA_FLOOR;

/// Per-output z-score statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub sigma_floor: T,
}

impl<T: Scalar> Normalizer<T> {
    /// Column means and population standard deviations of an n×d matrix.
    pub fn fit(outputs: &Tensor<T>) -> Result<Self> {
        if outputs.rank() != 2 || outputs.rows() < 2 {
            return Err(Error::InsufficientData(format!(
                "normalizer needs at least 2 rows, got shape {:?}",
                outputs.shape()
            )));
        }
        let d = outputs.cols();
        let mut mu = Vec::with_capacity(d);
        let mut sigma = Vec::with_capacity(d);
        for j in 0..d {
            let col = outputs.column(j);
            mu.push(stats::mean(&col));
            sigma.push(stats::population_std(&col));
        }
        Ok(Self {
            mu,
            sigma,
            sigma_floor: T::lit(DEFAULT_SIGMA_FLOOR),
        })
    }

    /// Identity statistics (μ = 0, σ = 1).
    pub fn identity(d: usize) -> Self {
        Self {
            mu: vec![T::zero(); d],
            sigma: vec![T::one(); d],
            sigma_floor: T::lit(DEFAULT_SIGMA_FLOOR),
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn effective_sigma(&self, j: usize) -> T {
        self.sigma[j].max(self.sigma_floor)
    }

    pub fn is_constant(&self, j: usize) -> bool {
        self.sigma[j] < self.sigma_floor
    }

    pub fn constant_outputs(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.is_constant(j)).collect()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Shape {
                op: "normalizer",
                lhs: vec![len],
                rhs: vec![self.dim()],
            });
        }
        Ok(())
    }

    pub fn normalize(&self, y: &[T]) -> Result<Vec<T>> {
        self.check_len(y.len())?;
        Ok(y.iter()
            .enumerate()
            .map(|(j, &v)| (v - self.mu[j]) / self.effective_sigma(j))
            .collect())
    }

    pub fn denormalize(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_len(z.len())?;
        Ok(z.iter()
            .enumerate()
            .map(|(j, &v)| v * self.effective_sigma(j) + self.mu[j])
            .collect())
    }

    /// Row-wise [`Normalizer::normalize`] of an n×d matrix.
    pub fn normalize_rows(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_len(y.cols())?;
        let mut out = Vec::with_capacity(y.len());
        for r in 0..y.rows() {
            out.extend(self.normalize(y.row(r))?);
        }
        Tensor::matrix(y.rows(), y.cols(), out)
    }

    /// Regression targets: [`Normalizer::normalize_rows`] with constant
    /// outputs pinned to zero, so the network learns to predict their mean.
    /// Without the pin, rounding residue in `y − μ` is divided by the floor
    /// and the target would depend on output units.
    pub fn training_targets(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let mut z = self.normalize_rows(y)?;
        let constant = self.constant_outputs();
        if !constant.is_empty() {
            let d = self.dim();
            let data = z.data_mut();
            for r in 0..y.rows() {
                for &j in &constant {
                    data[r * d + j] = T::zero();
                }
            }
        }
        Ok(z)
    }

    pub fn denormalize_rows(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_len(z.cols())?;
        let mut out = Vec::with_capacity(z.len());
        for r in 0..z.rows() {
            out.extend(self.denormalize(z.row(r))?);
        }
        Tensor::matrix(z.rows(), z.cols(), out)
    }
}

/// A trained (or freshly initialized) emulator: architecture, weights and
/// output statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Emulator<T> {
    pub config: MlpConfig,
    pub params: MlpParams<T>,
    pub normalizer: Normalizer<T>,
}

impl<T: Scalar> Emulator<T> {
    pub fn new(config: MlpConfig, params: MlpParams<T>, normalizer: Normalizer<T>) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        if normalizer.dim() != config.output_dim {
            return Err(Error::Schema(format!(
                "normalizer has {} outputs, config expects {}",
                normalizer.dim(),
                config.output_dim
            )));
        }
        Ok(Self {
            config,
            params,
            normalizer,
        })
    }

    fn check_inputs(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != 2 || x.cols() != self.config.input_dim {
            return Err(Error::Shape {
                op: "predict",
                lhs: x.shape().to_vec(),
                rhs: vec![x.rows(), self.config.input_dim],
            });
        }
        let (lo, hi) = (T::zero(), T::one());
        if x.data().iter().any(|&v| v < lo || v > hi) {
            log::warn!("emulator input outside [0, 1]; extrapolating");
        }
        Ok(())
    }

    /// Network output before denormalization, n×output_dim.
    pub fn predict_normalized(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_inputs(x)?;
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (_, out) = forward(&mut g, &self.params, xv, false)?;
        Ok(g.value(out).clone())
    }

    /// Predictions in physical output units, n×output_dim.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let z = self.predict_normalized(x)?;
        self.normalizer.denormalize_rows(&z)
    }

    /// ∂y_j/∂x for the denormalized output `j` at a single input point.
    pub fn input_gradient(&self, x: &[T], j: usize) -> Result<Vec<T>> {
        let point = Tensor::matrix(1, x.len(), x.to_vec())?;
        let grads = self.input_gradients_batch(&point, j)?;
        Ok(grads.into_vec())
    }

    /// Row `r` of the result is ∂y_j(x_r)/∂x_r. Rows do not interact, so a
    /// single backward pass seeded with column `j` covers the whole batch.
    pub fn input_gradients_batch(&self, x: &Tensor<T>, j: usize) -> Result<Tensor<T>> {
        self.check_output_index(j)?;
        self.check_inputs(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (_, out) = forward(&mut g, &self.params, xv, false)?;
        let grads = self.seeded_input_gradient(&g, xv, out, j)?;
        Ok(grads)
    }

    fn check_output_index(&self, j: usize) -> Result<()> {
        if j >= self.config.output_dim {
            return Err(Error::OutOfRange {
                what: "output",
                index: j,
                limit: self.config.output_dim,
            });
        }
        Ok(())
    }

    fn seeded_input_gradient(&self, g: &Graph<T>, xv: Var, out: Var, j: usize) -> Result<Tensor<T>> {
        let (n, d) = (g.value(out).rows(), self.config.output_dim);
        let mut seed = vec![T::zero(); n * d];
        for r in 0..n {
            seed[r * d + j] = T::one();
        }
        let mut grads = g.backward_with_seed(out, Tensor::matrix(n, d, seed)?)?;
        let normalized = grads.take(xv).expect("input leaf is differentiable");
        let sigma = self.normalizer.effective_sigma(j);
        Ok(normalized.map(|v| v * sigma))
    }

    /// Calls `visit(j, grads)` for every output `j`, where `grads` is the
    /// n×input_dim matrix of ∂y_j/∂x at each row of `x`. The forward pass is
    /// shared across outputs.
    pub fn for_each_output_gradient(
        &self,
        x: &Tensor<T>,
        mut visit: impl FnMut(usize, &Tensor<T>) -> Result<()>,
    ) -> Result<Tensor<T>> {
        self.check_inputs(x)?;
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let (_, out) = forward(&mut g, &self.params, xv, false)?;
        for j in 0..self.config.output_dim {
            let grads = self.seeded_input_gradient(&g, xv, out, j)?;
            visit(j, &grads)?;
        }
        self.normalizer.denormalize_rows(g.value(out))
    }

    /// Full Jacobian at one point, output_dim × input_dim.
    pub fn jacobian(&self, x: &[T]) -> Result<Tensor<T>> {
        let point = Tensor::matrix(1, x.len(), x.to_vec())?;
        let mut rows = Vec::with_capacity(self.config.output_dim * x.len());
        self.for_each_output_gradient(&point, |_, g| {
            rows.extend_from_slice(g.data());
            Ok(())
        })?;
        Tensor::matrix(self.config.output_dim, x.len(), rows)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = CheckpointFile {
            param_count: self.params.param_count(),
            config: self.config.clone(),
            normalizer: NormalizerFile {
                mu: self.normalizer.mu.clone(),
                sigma: self.normalizer.sigma.clone(),
                sigma_floor: self.normalizer.sigma_floor,
            },
            layers: self
                .params
                .layers
                .iter()
                .map(|l| LayerFile {
                    w: (0..l.weight.rows()).map(|r| l.weight.row(r).to_vec()).collect(),
                    b: l.bias.data().to_vec(),
                })
                .collect(),
        };
        let mut out = BufWriter::new(File::create(path.as_ref())?);
        serde_json::to_writer(&mut out, &file).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path)?);
        let file: CheckpointFile<T> =
            serde_json::from_reader(reader).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            })?;
        file.into_emulator()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct NormalizerFile<T> {
    mu: Vec<T>,
    sigma: Vec<T>,
    sigma_floor: T,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct LayerFile<T> {
    w: Vec<Vec<T>>,
    b: Vec<T>,
}

/// On-disk checkpoint layout. `param_count` is written first so it can be
/// read without parsing the weights.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct CheckpointFile<T> {
    param_count: usize,
    config: MlpConfig,
    normalizer: NormalizerFile<T>,
    layers: Vec<LayerFile<T>>,
}

impl<T: Scalar> CheckpointFile<T> {
    fn into_emulator(self) -> Result<Emulator<T>> {
        self.config.validate()?;
        if self.param_count != self.config.param_count() {
            return Err(Error::Schema(format!(
                "param_count {} does not match config ({})",
                self.param_count,
                self.config.param_count()
            )));
        }
        let dims = self.config.layer_dims();
        if dims.len() != self.layers.len() {
            return Err(Error::Schema(format!(
                "config describes {} layers, file has {}",
                dims.len(),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(dims.len());
        for (idx, ((fan_in, fan_out), lf)) in dims.into_iter().zip(self.layers).enumerate() {
            if lf.w.len() != fan_in || lf.b.len() != fan_out {
                return Err(Error::Schema(format!(
                    "layer {idx}: expected {fan_in} weight rows and {fan_out} biases"
                )));
            }
            let weight = Tensor::from_rows(&lf.w)
                .map_err(|_| Error::Schema(format!("layer {idx}: ragged weight rows")))?;
            if weight.cols() != fan_out {
                return Err(Error::Schema(format!("layer {idx}: expected {fan_out} weight columns")));
            }
            layers.push(Layer {
                weight,
                bias: Tensor::vector(lf.b),
            });
        }
        let d = self.config.output_dim;
        if self.normalizer.mu.len() != d || self.normalizer.sigma.len() != d {
            return Err(Error::Schema(format!("normalizer vectors must have length {d}")));
        }
        let normalizer = Normalizer {
            mu: self.normalizer.mu,
            sigma: self.normalizer.sigma,
            sigma_floor: self.normalizer.sigma_floor,
        };
        Emulator::new(self.config, MlpParams { layers }, normalizer)
    }
}
