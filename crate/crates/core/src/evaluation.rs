//! Predictive and sensitivity fidelity metrics.
//!
//! R² is `1 − SS_res/SS_tot` with `SS_tot` taken about the mean of the
//! reference values. A reference series with no spread has no R²; it is
//! reported as `None` and left out of medians instead of being scored.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{OutputAxis, OutputSchema};
use crate::scalar::Scalar;
use crate::sensitivity::{aggregate_columns, SensitivityMatrix};
use crate::stats::{self, SIGMA_FLOOR};
use crate::tensor::Tensor;

/// Coefficient of determination of `y_pred` against `y_true`.
pub fn r2<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<Option<T>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Shape {
            op: "r2",
            lhs: vec![y_true.len()],
            rhs: vec![y_pred.len()],
        });
    }
    if y_true.len() < 2 {
        return Err(Error::InsufficientData(format!("r2 needs at least 2 values, got {}", y_true.len())));
    }
    if stats::population_std(y_true) <= T::lit(SIGMA_FLOOR) {
        return Ok(None);
    }
    let ss_tot = stats::sum_sq_dev(y_true);
    let ss_res: T = y_true.iter().zip(y_pred).map(|(&t, &p)| (t - p) * (t - p)).sum();
    Ok(Some(T::one() - ss_res / ss_tot))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnR2<T> {
    pub values: Vec<Option<T>>,
    pub median: Option<T>,
    pub mean: Option<T>,
}

impl<T: Scalar> ColumnR2<T> {
    fn from_values(values: Vec<Option<T>>) -> Self {
        let defined: Vec<T> = values.iter().flatten().copied().collect();
        let mean = if defined.is_empty() { None } else { Some(stats::mean(&defined)) };
        Self {
            median: stats::median(&defined),
            mean,
            values,
        }
    }

    pub fn evaluated(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn excluded(&self) -> usize {
        self.values.len() - self.evaluated()
    }
}

/// R² for every output column; the median is over the columns that have one.
pub fn per_output_r2<T: Scalar>(y_true: &Tensor<T>, y_pred: &Tensor<T>) -> Result<ColumnR2<T>> {
    y_true.expect_same_shape(y_pred, "per_output_r2")?;
    let values = (0..y_true.cols())
        .map(|j| r2(&y_true.column(j), &y_pred.column(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ColumnR2::from_values(values))
}

/// Averages each scenario's outputs over the two axes other than `axis`.
pub fn aggregate_outputs<T: Scalar>(y: &Tensor<T>, schema: &OutputSchema, axis: OutputAxis) -> Result<Tensor<T>> {
    let all = vec![true; y.cols()];
    Ok(aggregate_columns(y, &all, schema, axis)?.0)
}

/// Per-output R² after collapsing onto `axis` (one value per quantity,
/// region, or year).
pub fn aggregated_r2<T: Scalar>(
    y_true: &Tensor<T>,
    y_pred: &Tensor<T>,
    schema: &OutputSchema,
    axis: OutputAxis,
) -> Result<ColumnR2<T>> {
    y_true.expect_same_shape(y_pred, "aggregated_r2")?;
    per_output_r2(
        &aggregate_outputs(y_true, schema, axis)?,
        &aggregate_outputs(y_pred, schema, axis)?,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Overall,
    Region,
    Year,
    Quantity,
}

impl Aggregation {
    pub fn axis(self) -> Option<OutputAxis> {
        match self {
            Aggregation::Overall => None,
            Aggregation::Region => Some(OutputAxis::Region),
            Aggregation::Year => Some(OutputAxis::Year),
            Aggregation::Quantity => Some(OutputAxis::Quantity),
        }
    }
}

/// R² between two σ-normalized sensitivity matrices over the entries defined
/// in both. Not symmetric: `reference` supplies `SS_tot`.
pub fn sensitivity_agreement<T: Scalar>(
    emulator: &SensitivityMatrix<T>,
    reference: &SensitivityMatrix<T>,
    schema: &OutputSchema,
    aggregation: Aggregation,
) -> Result<Option<T>> {
    emulator.raw.expect_same_shape(&reference.raw, "sensitivity_agreement")?;
    let (em_vals, em_def, ref_vals, ref_def) = match aggregation.axis() {
        None => (
            emulator.normalized.clone(),
            emulator.defined.clone(),
            reference.normalized.clone(),
            reference.defined.clone(),
        ),
        Some(axis) => {
            let (ev, ed) = aggregate_columns(&emulator.normalized, &emulator.defined, schema, axis)?;
            let (rv, rd) = aggregate_columns(&reference.normalized, &reference.defined, schema, axis)?;
            (ev, ed, rv, rd)
        }
    };
    let (truth, pred) = paired_entries(&ref_vals, &ref_def, &em_vals, &em_def);
    if truth.len() < 2 {
        return Ok(None);
    }
    r2(&truth, &pred)
}

/// Flattened entries whose column is defined in both matrices.
fn paired_entries<T: Scalar>(a: &Tensor<T>, a_def: &[bool], b: &Tensor<T>, b_def: &[bool]) -> (Vec<T>, Vec<T>) {
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    for i in 0..a.rows() {
        for j in (0..a.cols()).filter(|&j| a_def[j] && b_def[j]) {
            ta.push(a.get(i, j));
            tb.push(b.get(i, j));
        }
    }
    (ta, tb)
}

/// Number of matrix entries that enter the overall agreement.
pub fn paired_entry_count<T: Scalar>(a: &SensitivityMatrix<T>, b: &SensitivityMatrix<T>) -> usize {
    let cols = a.defined.iter().zip(&b.defined).filter(|(x, y)| **x && **y).count();
    cols * a.n_inputs()
}

/// One row of the summary table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub region: Option<f64>,
    pub year: Option<f64>,
    pub quantity: Option<f64>,
    pub overall: Option<f64>,
}

impl MetricRow {
    pub fn values(&self) -> [Option<f64>; 4] {
        [self.region, self.year, self.quantity, self.overall]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Median R² of predictions on the test split.
    pub predictions: MetricRow,
    /// R² agreement of σ-normalized sensitivities.
    pub sensitivity: Option<MetricRow>,
    pub test_scenarios: usize,
    pub evaluated_outputs: usize,
    /// Outputs without spread on the test split; no R².
    pub excluded_outputs: usize,
    /// Mean of the per-output R² values; diagnostic only.
    pub mean_r2: Option<f64>,
    pub sensitivity_entries: Option<usize>,
}

impl EvalReport {
    /// Two-row table: Predictions and Sensitivity × Region, Year, Quantity,
    /// Overall.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>8} {:>8} {:>9} {:>8}", "", "Region", "Year", "Quantity", "Overall");
        let empty = MetricRow::default();
        for (name, row) in [
            ("Predictions", &self.predictions),
            ("Sensitivity", self.sensitivity.as_ref().unwrap_or(&empty)),
        ] {
            let cells: Vec<String> = row
                .values()
                .iter()
                .map(|v| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}")))
                .collect();
            let _ = writeln!(
                out,
                "{:<12} {:>8} {:>8} {:>9} {:>8}",
                name, cells[0], cells[1], cells[2], cells[3]
            );
        }
        out
    }
}

/// Prediction half of the report.
pub fn evaluate_predictions<T: Scalar>(
    y_true: &Tensor<T>,
    y_pred: &Tensor<T>,
    schema: &OutputSchema,
) -> Result<EvalReport> {
    let per = per_output_r2(y_true, y_pred)?;
    let agg = |axis| -> Result<Option<f64>> {
        Ok(aggregated_r2(y_true, y_pred, schema, axis)?.median.map(Scalar::as_f64))
    };
    Ok(EvalReport {
        predictions: MetricRow {
            region: agg(OutputAxis::Region)?,
            year: agg(OutputAxis::Year)?,
            quantity: agg(OutputAxis::Quantity)?,
            overall: per.median.map(Scalar::as_f64),
        },
        sensitivity: None,
        test_scenarios: y_true.rows(),
        evaluated_outputs: per.evaluated(),
        excluded_outputs: per.excluded(),
        mean_r2: per.mean.map(Scalar::as_f64),
        sensitivity_entries: None,
    })
}

/// Sensitivity half of the report.
pub fn evaluate_sensitivity<T: Scalar>(
    emulator: &SensitivityMatrix<T>,
    reference: &SensitivityMatrix<T>,
    schema: &OutputSchema,
) -> Result<MetricRow> {
    let a = |agg| -> Result<Option<f64>> {
        Ok(sensitivity_agreement(emulator, reference, schema, agg)?.map(Scalar::as_f64))
    };
    Ok(MetricRow {
        region: a(Aggregation::Region)?,
        year: a(Aggregation::Year)?,
        quantity: a(Aggregation::Quantity)?,
        overall: a(Aggregation::Overall)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensitivity::Provenance;

    #[test]
    fn r2_reference_values() {
        let t: [f64; 3] = [1.0, 2.0, 3.0];
        assert_eq!(r2(&t, &t).unwrap(), Some(1.0));
        assert_eq!(r2(&t, &[2.0, 2.0, 2.0]).unwrap(), Some(0.0));
        let v = r2(&t, &[1.1, 2.0, 2.9]).unwrap().unwrap();
        assert!((v - 0.99).abs() < 1e-12, "{v}");
    }

    #[test]
    fn r2_constant_reference_is_undefined() {
        assert_eq!(r2(&[4.0, 4.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(r2(&[1.0], &[1.0]).is_err());
        assert!(r2(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_column_is_excluded_from_median() {
        let y = Tensor::from_rows(&[[1.0, 5.0, 0.0], [2.0, 5.0, 1.0], [3.0, 5.0, 3.0]]).unwrap();
        let p = Tensor::from_rows(&[[1.0, 0.0, 0.0], [2.0, 9.0, 1.0], [3.0, 1.0, 3.0]]).unwrap();
        let r = per_output_r2(&y, &p).unwrap();
        assert_eq!(r.values[1], None);
        assert_eq!(r.median, Some(1.0));
        assert_eq!((r.evaluated(), r.excluded()), (2, 1));
    }

    #[test]
    fn aggregated_r2_two_scenarios_by_hand() {
        let full = OutputSchema::toy();
        let schema = OutputSchema {
            quantities: full.quantities[..2].to_vec(),
            regions: full.regions[..1].to_vec(),
            years: full.years[..2].to_vec(),
        };
        // columns: (q0,y0) (q0,y1) (q1,y0) (q1,y1)
        let y: Tensor<f64> = Tensor::from_rows(&[[1.0, 3.0, 0.0, 2.0], [5.0, 7.0, 4.0, 4.0]]).unwrap();
        let p = Tensor::from_rows(&[[2.0, 3.0, 1.0, 1.0], [5.0, 6.0, 4.0, 5.0]]).unwrap();
        // quantity means: truth q0 = [2, 6], pred q0 = [2.5, 5.5] → R² = 1 − 0.5/8
        //                 truth q1 = [1, 4], pred q1 = [1, 4.5]   → R² = 1 − 0.25/4.5
        let r = aggregated_r2(&y, &p, &schema, OutputAxis::Quantity).unwrap();
        let q0 = 1.0 - 0.5 / 8.0;
        let q1 = 1.0 - 0.25 / 4.5;
        assert!((r.values[0].unwrap() - q0).abs() < 1e-12);
        assert!((r.values[1].unwrap() - q1).abs() < 1e-12);
        assert!((r.median.unwrap() - (q0 + q1) / 2.0).abs() < 1e-12);
    }

    fn matrix(values: Vec<f64>, defined: Vec<bool>) -> SensitivityMatrix<f64> {
        let d = defined.len();
        let t = Tensor::matrix(values.len() / d, d, values).unwrap();
        SensitivityMatrix {
            raw: t.clone(),
            normalized: t,
            defined,
            sigma_x: vec![],
            sigma_y: vec![],
            provenance: Provenance::ClosedForm,
            sample_count: 0,
        }
    }

    #[test]
    fn agreement_identity_mean_and_direction() {
        let schema = OutputSchema::toy();
        let vals: Vec<f64> = (0..9 * 48).map(|v| ((v * 37) % 101) as f64).collect();
        let reference = matrix(vals.clone(), vec![true; 48]);
        let same = matrix(vals.clone(), vec![true; 48]);
        assert_eq!(
            sensitivity_agreement(&same, &reference, &schema, Aggregation::Overall).unwrap(),
            Some(1.0)
        );
        let m = stats::mean(&vals);
        let flat = matrix(vec![m; vals.len()], vec![true; 48]);
        let v = sensitivity_agreement(&flat, &reference, &schema, Aggregation::Overall).unwrap().unwrap();
        assert!(v.abs() < 1e-12);
        // swapping roles: the flat matrix has no spread, so nothing to explain
        assert_eq!(
            sensitivity_agreement(&reference, &flat, &schema, Aggregation::Overall).unwrap(),
            None
        );
    }

    #[test]
    fn agreement_drops_undefined_pairs() {
        let schema = OutputSchema::toy();
        let vals: Vec<f64> = (0..9 * 48).map(|v| v as f64).collect();
        let mut corrupted = vals.clone();
        for i in 0..9 {
            corrupted[i * 48 + 5] = 1e9;
        }
        let mut def = vec![true; 48];
        def[5] = false;
        let reference = matrix(vals, vec![true; 48]);
        let em = matrix(corrupted, def);
        let v = sensitivity_agreement(&em, &reference, &schema, Aggregation::Overall).unwrap();
        assert_eq!(v, Some(1.0));
    }

    #[test]
    fn table_layout() {
        let report = EvalReport {
            predictions: MetricRow {
                region: Some(0.998),
                year: Some(0.998),
                quantity: Some(0.998),
                overall: Some(0.998),
            },
            ..Default::default()
        };
        let table = report.render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("Predictions"));
        assert!(lines[2].starts_with("Sensitivity"));
        assert_eq!(lines[1].split_whitespace().count(), 5);
    }
}
