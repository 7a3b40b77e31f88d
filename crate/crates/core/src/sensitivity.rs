//! Derivative-based global sensitivity measures.
//!
//! For continuous input `i` and output `j`, `S_ij = E[(∂y_j/∂x_i)²]`, and the
//! σ-normalized form is `S^σ_ij = σ_xi / σ_yj · S_ij`. Both σ's are sample
//! standard deviations over the base points the estimate was built from.
//! Outputs whose σ_y is at or below [`SIGMA_FLOOR`] have no normalized value;
//! they are flagged rather than zero-filled so that agreement metrics can drop
//! them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Emulator;
use crate::oracle::{OracleCoefficients, OutputAxis, OutputSchema};
use crate::sampling::{DgsmBlock, InputSchema, ScenarioInput};
use crate::scalar::Scalar;
use crate::stats::{self, SIGMA_FLOOR};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FiniteDiff,
    Autodiff,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityMatrix<T> {
    /// continuous inputs × outputs
    pub raw: Tensor<T>,
    /// Same shape as `raw`; zero in columns where `defined` is false.
    pub normalized: Tensor<T>,
    pub defined: Vec<bool>,
    pub sigma_x: Vec<T>,
    pub sigma_y: Vec<T>,
    pub provenance: Provenance,
    pub sample_count: usize,
}

impl<T: Scalar> SensitivityMatrix<T> {
    pub fn from_raw(
        raw: Tensor<T>,
        sigma_x: Vec<T>,
        sigma_y: Vec<T>,
        provenance: Provenance,
        sample_count: usize,
    ) -> Result<Self> {
        let (normalized, defined) = sigma_normalize(&raw, &sigma_x, &sigma_y)?;
        Ok(Self {
            raw,
            normalized,
            defined,
            sigma_x,
            sigma_y,
            provenance,
            sample_count,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.raw.rows()
    }

    pub fn n_outputs(&self) -> usize {
        self.raw.cols()
    }

    pub fn defined_count(&self) -> usize {
        self.defined.iter().filter(|&&d| d).count()
    }
}

/// `S^σ = σ_x/σ_y · S`, plus the per-output definedness mask.
pub fn sigma_normalize<T: Scalar>(raw: &Tensor<T>, sigma_x: &[T], sigma_y: &[T]) -> Result<(Tensor<T>, Vec<bool>)> {
    if raw.rank() != 2 || raw.rows() != sigma_x.len() || raw.cols() != sigma_y.len() {
        return Err(Error::Shape {
            op: "sigma_normalize",
            lhs: raw.shape().to_vec(),
            rhs: vec![sigma_x.len(), sigma_y.len()],
        });
    }
    if sigma_x.iter().chain(sigma_y).any(|&s| s < T::zero() || s.is_nan()) {
        return Err(Error::Config("standard deviations must be non-negative".into()));
    }
    let floor = T::lit(SIGMA_FLOOR);
    let defined: Vec<bool> = sigma_y.iter().map(|&s| s > floor).collect();
    let d = raw.cols();
    let mut out = vec![T::zero(); raw.len()];
    for (i, &sx) in sigma_x.iter().enumerate() {
        for j in (0..d).filter(|&j| defined[j]) {
            out[i * d + j] = sx / sigma_y[j] * raw.get(i, j);
        }
    }
    Ok((Tensor::matrix(raw.rows(), d, out)?, defined))
}

/// Sample standard deviations of the continuous inputs and of every output
/// over a set of base points.
pub fn sample_sigmas<T: Scalar>(base_x: &Tensor<T>, base_y: &Tensor<T>, continuous: &[usize]) -> (Vec<T>, Vec<T>) {
    let sigma_x = continuous
        .iter()
        .map(|&i| stats::sample_std(&base_x.column(i)))
        .collect();
    let sigma_y = (0..base_y.cols())
        .map(|j| stats::sample_std(&base_y.column(j)))
        .collect();
    (sigma_x, sigma_y)
}

fn check_blocks<T: Scalar>(blocks: &[DgsmBlock<T>], schema: &InputSchema) -> Result<usize> {
    if blocks.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "DGSM needs at least 2 blocks, got {}",
            blocks.len()
        )));
    }
    let c = schema.continuous_indices().len();
    for (b, block) in blocks.iter().enumerate() {
        if block.perturbed.len() != c || block.steps.len() != c || block.base.values.len() != schema.len() {
            return Err(Error::Schema(format!(
                "block {b} has {} perturbations over {} inputs; expected {c} over {}",
                block.perturbed.len(),
                block.base.values.len(),
                schema.len()
            )));
        }
    }
    Ok(c)
}

/// All block scenarios stacked as `[base, perturbed_0, ...]` per block.
pub fn stack_blocks<T: Scalar>(blocks: &[DgsmBlock<T>]) -> Result<Tensor<T>> {
    let rows: Vec<&ScenarioInput<T>> = blocks.iter().flat_map(|b| b.scenarios()).collect();
    let rows: Vec<&[T]> = rows.iter().map(|s| s.values.as_slice()).collect();
    Tensor::from_rows(&rows)
}

/// Finite-difference DGSM for a batch-evaluated black box `f` (n×inputs →
/// n×outputs).
pub fn dgsm_finite_diff<T: Scalar>(
    blocks: &[DgsmBlock<T>],
    schema: &InputSchema,
    mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
) -> Result<SensitivityMatrix<T>> {
    check_blocks(blocks, schema)?;
    let x = stack_blocks(blocks)?;
    let y = f(&x)?;
    dgsm_from_evaluations(blocks, schema, &y)
}

/// Finite-difference DGSM from outputs already evaluated at
/// [`stack_blocks`] order.
pub fn dgsm_from_evaluations<T: Scalar>(
    blocks: &[DgsmBlock<T>],
    schema: &InputSchema,
    outputs: &Tensor<T>,
) -> Result<SensitivityMatrix<T>> {
    let c = check_blocks(blocks, schema)?;
    let size = c + 1;
    if outputs.rank() != 2 || outputs.rows() != blocks.len() * size {
        return Err(Error::Schema(format!(
            "{} evaluations for {} blocks of {size}",
            outputs.rows(),
            blocks.len()
        )));
    }
    let d = outputs.cols();
    let mut acc = vec![T::zero(); c * d];
    let mut base_rows = Vec::with_capacity(blocks.len());
    for (b, block) in blocks.iter().enumerate() {
        let base = outputs.row(b * size);
        base_rows.push(b * size);
        for (i, &step) in block.steps.iter().enumerate() {
            let moved = outputs.row(b * size + 1 + i);
            for j in 0..d {
                let deriv = (moved[j] - base[j]) / step;
                acc[i * d + j] += deriv * deriv;
            }
        }
    }
    let nb = T::lit(blocks.len() as f64);
    let raw = Tensor::matrix(c, d, acc.into_iter().map(|v| v / nb).collect())?;
    let base_x = Tensor::from_rows(&blocks.iter().map(|b| b.base.values.as_slice()).collect::<Vec<_>>())?;
    let base_y = outputs.select_rows(&base_rows);
    let (sigma_x, sigma_y) = sample_sigmas(&base_x, &base_y, &schema.continuous_indices());
    SensitivityMatrix::from_raw(raw, sigma_x, sigma_y, Provenance::FiniteDiff, blocks.len())
}

/// Exact-gradient DGSM of an emulator over a set of base points.
pub fn dgsm_autodiff<T: Scalar>(
    emulator: &Emulator<T>,
    base_points: &Tensor<T>,
    schema: &InputSchema,
) -> Result<SensitivityMatrix<T>> {
    let n = base_points.rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("DGSM needs at least 2 base points, got {n}")));
    }
    let cont = schema.continuous_indices();
    let c = cont.len();
    let d = emulator.config.output_dim;
    let mut raw = vec![T::zero(); c * d];
    let nt = T::lit(n as f64);
    let preds = emulator.for_each_output_gradient(base_points, |j, grads| {
        for (i, &idx) in cont.iter().enumerate() {
            let mut sum = T::zero();
            for r in 0..n {
                let g = grads.get(r, idx);
                sum += g * g;
            }
            raw[i * d + j] = sum / nt;
        }
        Ok(())
    })?;
    let (sigma_x, sigma_y) = sample_sigmas(base_points, &preds, &cont);
    SensitivityMatrix::from_raw(Tensor::matrix(c, d, raw)?, sigma_x, sigma_y, Provenance::Autodiff, n)
}

/// Closed-form oracle DGSM, σ-normalized with sample statistics of the oracle
/// over `base_points`.
pub fn dgsm_closed_form<T: Scalar>(
    oracle: &OracleCoefficients<T>,
    base_points: &Tensor<T>,
    schema: &InputSchema,
) -> Result<SensitivityMatrix<T>> {
    let base_y = oracle.eval_batch(base_points)?;
    let (sigma_x, sigma_y) = sample_sigmas(base_points, &base_y, &schema.continuous_indices());
    SensitivityMatrix::from_raw(
        oracle.dgsm_closed_form(),
        sigma_x,
        sigma_y,
        Provenance::ClosedForm,
        base_points.rows(),
    )
}

/// A sensitivity matrix averaged down to one output axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatedSensitivity<T> {
    pub axis: OutputAxis,
    /// continuous inputs × axis length
    pub values: Tensor<T>,
    pub defined: Vec<bool>,
    pub labels: Vec<String>,
}

/// Unweighted mean of the defined columns within each group along `axis`.
pub fn aggregate_columns<T: Scalar>(
    values: &Tensor<T>,
    defined: &[bool],
    schema: &OutputSchema,
    axis: OutputAxis,
) -> Result<(Tensor<T>, Vec<bool>)> {
    if values.cols() != schema.dim() || defined.len() != schema.dim() {
        return Err(Error::Schema(format!(
            "{} columns do not match output schema of dimension {}",
            values.cols(),
            schema.dim()
        )));
    }
    let groups = schema.axis_len(axis);
    let rows = values.rows();
    let mut sums = vec![T::zero(); rows * groups];
    let mut counts = vec![0usize; groups];
    for (col, _) in defined.iter().enumerate().filter(|(_, &d)| d) {
        let g = schema.coordinate(col, axis);
        counts[g] += 1;
        for r in 0..rows {
            sums[r * groups + g] += values.get(r, col);
        }
    }
    for r in 0..rows {
        for g in 0..groups {
            if counts[g] > 0 {
                sums[r * groups + g] /= T::lit(counts[g] as f64);
            }
        }
    }
    Ok((
        Tensor::matrix(rows, groups, sums)?,
        counts.iter().map(|&c| c > 0).collect(),
    ))
}

pub fn aggregate_sensitivity<T: Scalar>(
    m: &SensitivityMatrix<T>,
    schema: &OutputSchema,
    axis: OutputAxis,
) -> Result<AggregatedSensitivity<T>> {
    let (values, defined) = aggregate_columns(&m.normalized, &m.defined, schema, axis)?;
    Ok(AggregatedSensitivity {
        axis,
        values,
        defined,
        labels: schema.axis_labels(axis),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::build_dgsm_blocks;

    #[test]
    fn unit_sigmas_are_identity() {
        let raw = Tensor::from_rows(&[[1.0, 2.0], [3.0, 0.5]]).unwrap();
        let (n, d) = sigma_normalize(&raw, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(n, raw);
        assert_eq!(d, vec![true, true]);
    }

    #[test]
    fn output_rescale_multiplies_normalized_value() {
        // y_j → α y_j: S × α², σ_y × α, so S^σ × α
        let alpha: f64 = 1000.0;
        let raw: Tensor<f64> = Tensor::from_rows(&[[0.3], [1.2]]).unwrap();
        let (base, _) = sigma_normalize(&raw, &[0.29, 0.28], &[0.7]).unwrap();
        let scaled_raw = raw.map(|v| v * alpha * alpha);
        let (scaled, _) = sigma_normalize(&scaled_raw, &[0.29, 0.28], &[0.7 * alpha]).unwrap();
        for (a, b) in base.data().iter().zip(scaled.data()) {
            assert!((a * alpha - b).abs() < 1e-12 * b.abs());
        }
    }

    #[test]
    fn negative_sigma_is_contract_error() {
        let raw = Tensor::from_rows(&[[1.0]]).unwrap();
        assert!(sigma_normalize(&raw, &[-1.0], &[1.0]).is_err());
        assert!(sigma_normalize(&raw, &[1.0, 1.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_function_has_zero_s_and_undefined_normalization() {
        let schema = InputSchema::default();
        let blocks = build_dgsm_blocks::<f64>(10, 0.01, &schema, 3).unwrap();
        let m = dgsm_finite_diff(&blocks, &schema, |x| Ok(Tensor::full(&[x.rows(), 2], 4.2))).unwrap();
        assert!(m.raw.data().iter().all(|&v| v == 0.0));
        assert_eq!(m.defined, vec![false, false]);
        assert_eq!(m.provenance, Provenance::FiniteDiff);
        assert_eq!(m.sample_count, 10);
    }

    #[test]
    fn too_few_blocks() {
        let schema = InputSchema::default();
        let blocks = build_dgsm_blocks::<f64>(1, 0.01, &schema, 3).unwrap();
        assert!(dgsm_finite_diff(&blocks, &schema, |x| Ok(x.clone())).is_err());
    }

    #[test]
    fn aggregation_hand_built() {
        // 2 quantities × 2 regions × 2 years, one input row
        let full = OutputSchema::toy();
        let schema = OutputSchema {
            quantities: full.quantities[..2].to_vec(),
            regions: full.regions[..2].to_vec(),
            years: full.years[..2].to_vec(),
        };
        let vals: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let t = Tensor::matrix(1, 8, vals).unwrap();
        let all = vec![true; 8];
        let (q, _) = aggregate_columns(&t, &all, &schema, OutputAxis::Quantity).unwrap();
        assert_eq!(q.data(), &[1.5, 5.5]);
        let (r, _) = aggregate_columns(&t, &all, &schema, OutputAxis::Region).unwrap();
        assert_eq!(r.data(), &[2.5, 4.5]);
        let (y, _) = aggregate_columns(&t, &all, &schema, OutputAxis::Year).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);

        let mut some = all.clone();
        some[0] = false;
        some[1] = false;
        some[2] = false;
        some[3] = false;
        let (q, d) = aggregate_columns(&t, &some, &schema, OutputAxis::Quantity).unwrap();
        assert_eq!(d, vec![false, true]);
        assert_eq!(q.data()[1], 5.5);
    }
}
