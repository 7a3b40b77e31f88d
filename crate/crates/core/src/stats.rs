//! Small descriptive-statistics helpers shared by the normalizer, the
//! sensitivity estimators and the metrics.

use crate::scalar::Scalar;

/// Spread at or below this value is treated as zero (constant data).
pub const SIGMA_FLOOR: f64 = 1e-8;

pub fn mean<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    values.iter().copied().sum::<T>() / T::lit(values.len() as f64)
}

/// Two-pass sum of squared deviations about the mean.
pub fn sum_sq_dev<T: Scalar>(values: &[T]) -> T {
    let m = mean(values);
    values.iter().map(|&v| (v - m) * (v - m)).sum()
}

/// Population standard deviation (divisor n).
pub fn population_std<T: Scalar>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    (sum_sq_dev(values) / T::lit(values.len() as f64)).sqrt()
}

/// Sample standard deviation (divisor n − 1).
pub fn sample_std<T: Scalar>(values: &[T]) -> T {
    if values.len() < 2 {
        return T::zero();
    }
    (sum_sq_dev(values) / T::lit((values.len() - 1) as f64)).sqrt()
}

/// Median of the finite values; the mean of the two middle values for even
/// counts. `None` when nothing is left.
pub fn median<T: Scalar>(values: &[T]) -> Option<T> {
    let mut sorted: Vec<T> = values.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN filtered"));
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / T::lit(2.0)
    })
}
