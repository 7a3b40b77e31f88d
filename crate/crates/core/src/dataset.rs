use crate::error::{Error, Result};
use crate::sampling::Split;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scenario inputs, optional simulator outputs and a split label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub inputs: Tensor<T>,
    pub outputs: Option<Tensor<T>>,
    pub splits: Vec<Split>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(inputs: Tensor<T>, outputs: Option<Tensor<T>>, splits: Vec<Split>) -> Result<Self> {
        let n = inputs.rows();
        if inputs.rank() != 2 || splits.len() != n {
            return Err(Error::Schema(format!(
                "{} split labels for inputs of shape {:?}",
                splits.len(),
                inputs.shape()
            )));
        }
        if let Some(y) = &outputs {
            if y.rank() != 2 || y.rows() != n {
                return Err(Error::Schema(format!(
                    "outputs of shape {:?} for {n} scenarios",
                    y.shape()
                )));
            }
        }
        Ok(Self {
            inputs,
            outputs,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|&&s| s == split).count()
    }

    pub fn outputs(&self) -> Result<&Tensor<T>> {
        self.outputs
            .as_ref()
            .ok_or_else(|| Error::InsufficientData("dataset has no simulator outputs".into()))
    }

    /// `(inputs, outputs)` restricted to one split, in row order.
    pub fn subset(&self, split: Split) -> Result<(Tensor<T>, Tensor<T>)> {
        let idx = self.indices(split);
        let y = self.outputs()?;
        Ok((self.inputs.select_rows(&idx), y.select_rows(&idx)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_keeps_row_order() {
        let x = Tensor::from_rows(&[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        let y = Tensor::from_rows(&[[10.0], [11.0], [12.0], [13.0]]).unwrap();
        let ds = Dataset::new(x, Some(y), vec![Split::Test, Split::Train, Split::Test, Split::Val]).unwrap();
        let (xs, ys) = ds.subset(Split::Test).unwrap();
        assert_eq!(xs.data(), &[0.0, 2.0]);
        assert_eq!(ys.data(), &[10.0, 12.0]);
        assert_eq!(ds.count(Split::Train), 1);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let x = Tensor::<f64>::zeros(&[3, 2]);
        assert!(Dataset::new(x.clone(), None, vec![Split::Train; 2]).is_err());
        assert!(Dataset::new(x, Some(Tensor::zeros(&[2, 1])), vec![Split::Train; 3]).is_err());
    }
}
