//! Input-space sampling.
//!
//! The default input schema has twelve drivers. Nine are interpolable and
//! live on `[0, 1]`; the other three (`bio`, `elec`, `emiss`) only make sense
//! as presence/absence flags and stay binary. Continuous columns are drawn by
//! Latin hypercube, binary columns i.i.d. uniform on `{0, 1}`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDescriptor {
    pub key: String,
    pub kind: InputKind,
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSchema {
    pub inputs: Vec<InputDescriptor>,
}

impl Default for InputSchema {
    fn default() -> Self {
        use InputKind::{Binary, Continuous};
        let rows = [
            ("back", Continuous, "Systems needed to backup wind and solar"),
            ("bio", Binary, "Tax on bioenergy"),
            ("ccs", Continuous, "Carbon storage resource cost"),
            ("elec", Binary, "Share of electricity in building, industry, and transportation"),
            ("emiss", Binary, "CO2 emission constraints"),
            ("energy", Continuous, "Energy Demand - GDP and population assumptions"),
            ("ff", Continuous, "Cost of crude oil, unconventional oil, natural gas, and coal"),
            ("nuc", Continuous, "Capital overnight costs"),
            ("solarS", Continuous, "Solar storage capital overnight costs"),
            ("solarT", Continuous, "CSP and PV costs"),
            ("windS", Continuous, "Wind storage capital overnight costs"),
            ("windT", Continuous, "Wind and wind offshore capital overnight costs"),
        ];
        Self {
            inputs: rows
                .into_iter()
                .map(|(key, kind, description)| InputDescriptor {
                    key: key.to_string(),
                    kind,
                    description: description.to_string(),
                })
                .collect(),
        }
    }
}

impl InputSchema {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(Error::Config("input schema has no inputs".into()));
        }
        let mut seen = HashSet::new();
        for d in &self.inputs {
            if !seen.insert(d.key.as_str()) {
                return Err(Error::Config(format!("duplicate input key {:?}", d.key)));
            }
        }
        if self.continuous_indices().is_empty() {
            return Err(Error::Config("input schema has no continuous inputs".into()));
        }
        Ok(())
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        self.indices_of(InputKind::Continuous)
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        self.indices_of(InputKind::Binary)
    }

    fn indices_of(&self, kind: InputKind) -> Vec<usize> {
        self.inputs
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn continuous_keys(&self) -> Vec<&str> {
        self.continuous_indices()
            .into_iter()
            .map(|i| self.inputs[i].key.as_str())
            .collect()
    }
}

/// One scenario: a value per input, in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioInput<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> ScenarioInput<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn validate(&self, schema: &InputSchema) -> Result<()> {
        if self.values.len() != schema.len() {
            return Err(Error::Shape {
                op: "scenario",
                lhs: vec![self.values.len()],
                rhs: vec![schema.len()],
            });
        }
        for (v, d) in self.values.iter().zip(&schema.inputs) {
            let ok = match d.kind {
                InputKind::Continuous => *v >= T::zero() && *v <= T::one(),
                InputKind::Binary => *v == T::zero() || *v == T::one(),
            };
            if !ok {
                return Err(Error::Config(format!(
                    "input {:?} has out-of-domain value {v}",
                    d.key
                )));
            }
        }
        Ok(())
    }
}

/// Stacks scenarios into an n×d matrix.
pub fn scenarios_to_matrix<T: Scalar>(scenarios: &[ScenarioInput<T>]) -> Result<Tensor<T>> {
    let rows: Vec<&[T]> = scenarios.iter().map(|s| s.values.as_slice()).collect();
    Tensor::from_rows(&rows)
}

/// Latin hypercube sample of `n` points in `[0, 1)^d`.
///
/// For every dimension, exactly one point falls into each stratum
/// `[k/n, (k+1)/n)`; the offset within a stratum is uniform and the stratum
/// order is permuted independently per dimension.
pub fn lhs_sample<T: Scalar>(n: usize, d: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lhs_with_rng(n, d, &mut rng)
}

fn lhs_with_rng<T: Scalar, R: Rng>(n: usize, d: usize, rng: &mut R) -> Tensor<T> {
    assert!(n >= 1 && d >= 1, "latin hypercube needs n >= 1 and d >= 1");
    let mut data = vec![T::zero(); n * d];
    let nt = T::lit(n as f64);
    let mut strata: Vec<usize> = (0..n).collect();
    for dim in 0..d {
        strata.shuffle(rng);
        for (row, &k) in strata.iter().enumerate() {
            let u: f64 = rng.random();
            let lo = T::lit(k as f64) / nt;
            let hi = T::lit((k + 1) as f64) / nt;
            let mut x = (T::lit(k as f64) + T::lit(u)) / nt;
            // rounding can push the point onto the upper edge
            if x >= hi || x < lo {
                x = lo;
            }
            data[row * d + dim] = x;
        }
    }
    Tensor::matrix(n, d, data).expect("n*d elements")
}

fn fill_scenarios<T: Scalar, R: Rng>(
    n: usize,
    schema: &InputSchema,
    rng: &mut R,
) -> Vec<ScenarioInput<T>> {
    let cont = schema.continuous_indices();
    let bin = schema.binary_indices();
    let lhs: Tensor<T> = lhs_with_rng(n, cont.len(), rng);
    (0..n)
        .map(|row| {
            let mut values = vec![T::zero(); schema.len()];
            for (c, &idx) in cont.iter().enumerate() {
                values[idx] = lhs.get(row, c);
            }
            for &idx in &bin {
                values[idx] = if rng.random_bool(0.5) { T::one() } else { T::zero() };
            }
            ScenarioInput { values }
        })
        .collect()
}

/// `n` scenarios: LHS over the continuous inputs, fair coin flips for the
/// binary ones.
pub fn build_scenarios<T: Scalar>(
    n: usize,
    schema: &InputSchema,
    seed: u64,
) -> Result<Vec<ScenarioInput<T>>> {
    schema.validate()?;
    if n == 0 {
        return Err(Error::Config("scenario count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(fill_scenarios(n, schema, &mut rng))
}

/// A base scenario and one single-coordinate perturbation per continuous input.
#[derive(Clone, Debug, PartialEq)]
pub struct DgsmBlock<T> {
    pub base: ScenarioInput<T>,
    /// `perturbed[c]` moves continuous input number `c` only.
    pub perturbed: Vec<ScenarioInput<T>>,
    /// Signed step used for `perturbed[c]`: `+delta`, or `-delta` at the
    /// upper boundary.
    pub steps: Vec<T>,
    pub delta: T,
}

impl<T: Scalar> DgsmBlock<T> {
    pub fn size(&self) -> usize {
        1 + self.perturbed.len()
    }

    /// Base first, then perturbations in continuous-input order.
    pub fn scenarios(&self) -> impl Iterator<Item = &ScenarioInput<T>> {
        std::iter::once(&self.base).chain(self.perturbed.iter())
    }
}

/// Moves coordinate `idx` by `+delta`, or by `-delta` when that would leave
/// the unit interval. Returns the new point and the signed step.
pub fn perturb<T: Scalar>(base: &ScenarioInput<T>, idx: usize, delta: T) -> (ScenarioInput<T>, T) {
    let mut values = base.values.clone();
    let step = if values[idx] + delta > T::one() { -delta } else { delta };
    values[idx] += step;
    (ScenarioInput { values }, step)
}

pub const MAX_DGSM_DELTA: f64 = 0.1;

/// `n_base` finite-difference blocks, `n_base · (1 + #continuous)` scenarios
/// in total. Binary inputs are held fixed within a block.
pub fn build_dgsm_blocks<T: Scalar>(
    n_base: usize,
    delta: T,
    schema: &InputSchema,
    seed: u64,
) -> Result<Vec<DgsmBlock<T>>> {
    schema.validate()?;
    if !(delta > T::zero() && delta <= T::lit(MAX_DGSM_DELTA)) {
        return Err(Error::Config(format!(
            "dgsm delta must lie in (0, {MAX_DGSM_DELTA}], got {delta}"
        )));
    }
    if n_base == 0 {
        return Err(Error::Config("dgsm needs at least one base point".into()));
    }
    let cont = schema.continuous_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = fill_scenarios(n_base, schema, &mut rng);
    Ok(bases
        .into_iter()
        .map(|base| {
            let (perturbed, steps) = cont.iter().map(|&idx| perturb(&base, idx, delta)).unzip();
            DgsmBlock {
                base,
                perturbed,
                steps,
                delta,
            }
        })
        .collect())
}

/// Reassembles blocks from a flat scenario list laid out as
/// `[base, perturbed_0, .., perturbed_{c-1}]` per block.
pub fn blocks_from_rows<T: Scalar>(
    rows: &Tensor<T>,
    schema: &InputSchema,
    delta: T,
) -> Result<Vec<DgsmBlock<T>>> {
    let cont = schema.continuous_indices();
    let size = 1 + cont.len();
    if !rows.rows().is_multiple_of(size) || rows.cols() != schema.len() {
        return Err(Error::Schema(format!(
            "{} rows of width {} do not form blocks of {size} scenarios over {} inputs",
            rows.rows(),
            rows.cols(),
            schema.len()
        )));
    }
    let mut blocks = Vec::with_capacity(rows.rows() / size);
    for b in 0..rows.rows() / size {
        let base = ScenarioInput::new(rows.row(b * size).to_vec());
        let mut perturbed = Vec::with_capacity(cont.len());
        let mut steps = Vec::with_capacity(cont.len());
        for (c, &idx) in cont.iter().enumerate() {
            let p = ScenarioInput::new(rows.row(b * size + 1 + c).to_vec());
            for (j, (&pv, &bv)) in p.values.iter().zip(&base.values).enumerate() {
                if j != idx && pv != bv {
                    return Err(Error::Schema(format!(
                        "block {b}: perturbation {c} also changes input {j}"
                    )));
                }
            }
            let step = if p.values[idx] >= base.values[idx] { delta } else { -delta };
            perturbed.push(p);
            steps.push(step);
        }
        blocks.push(DgsmBlock {
            base,
            perturbed,
            steps,
            delta,
        });
    }
    Ok(blocks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Schema(format!("unknown split label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {parts:?} must be in [0,1] and sum to 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes: train rounds to nearest, val floors, test
    /// takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = (((n as f64) * self.train).round() as usize).min(n);
        let val = (((n as f64) * self.val).floor() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

pub const MIN_SPLIT_ROWS: usize = 10;

/// Seeded assignment of `n` rows to train/val/test.
pub fn split_dataset(n: usize, ratios: SplitRatios, seed: u64) -> Result<Vec<Split>> {
    ratios.validate()?;
    if n < MIN_SPLIT_ROWS {
        return Err(Error::InsufficientData(format!(
            "splitting needs at least {MIN_SPLIT_ROWS} rows, got {n}"
        )));
    }
    let (n_train, n_val, _) = ratios.counts(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut labels = vec![Split::Test; n];
    for (rank, &row) in order.iter().enumerate() {
        labels[row] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_shape() {
        let s = InputSchema::default();
        s.validate().unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.continuous_indices().len(), 9);
        let bin: Vec<&str> = s.binary_indices().iter().map(|&i| s.inputs[i].key.as_str()).collect();
        assert_eq!(bin, ["bio", "elec", "emiss"]);
    }

    #[test]
    fn duplicate_keys_rejected() {
        let mut s = InputSchema::default();
        s.inputs[1].key = "back".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn four_points_one_per_quartile() {
        let x = lhs_sample::<f64>(4, 1, 3);
        let mut v = x.data().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (k, val) in v.iter().enumerate() {
            assert!(*val >= k as f64 / 4.0 && *val < (k + 1) as f64 / 4.0);
        }
    }

    #[test]
    fn lhs_is_deterministic() {
        assert_eq!(lhs_sample::<f64>(50, 3, 11), lhs_sample::<f64>(50, 3, 11));
        assert_ne!(lhs_sample::<f64>(50, 3, 11), lhs_sample::<f64>(50, 3, 12));
    }

    #[test]
    fn single_scenario_is_valid() {
        let schema = InputSchema::default();
        let s = build_scenarios::<f64>(1, &schema, 0).unwrap();
        assert_eq!(s.len(), 1);
        s[0].validate(&schema).unwrap();
    }

    #[test]
    fn binary_columns_are_fair() {
        let schema = InputSchema::default();
        let s = build_scenarios::<f64>(4096, &schema, 2024).unwrap();
        for idx in schema.binary_indices() {
            let ones = s.iter().filter(|x| x.values[idx] == 1.0).count() as f64 / 4096.0;
            assert!((0.45..=0.55).contains(&ones), "fraction {ones}");
        }
        for x in &s {
            x.validate(&schema).unwrap();
        }
    }

    #[test]
    fn boundary_flip() {
        let schema = InputSchema::default();
        let mut values: Vec<f64> = vec![0.5; 12];
        for &b in &schema.binary_indices() {
            values[b] = 1.0;
        }
        values[0] = 0.999;
        let base = ScenarioInput::new(values);
        let (p, step) = perturb(&base, 0, 0.01);
        assert!((p.values[0] - 0.989).abs() < 1e-12);
        assert_eq!(step, -0.01);
        p.validate(&schema).unwrap();
        let (p, step) = perturb(&base, 2, 0.01);
        assert!((p.values[2] - 0.51).abs() < 1e-12);
        assert_eq!(step, 0.01);
    }

    #[test]
    fn dgsm_layout() {
        let schema = InputSchema::default();
        let blocks = build_dgsm_blocks::<f64>(400, 0.01, &schema, 5).unwrap();
        let total: usize = blocks.iter().map(|b| b.size()).sum();
        assert_eq!(total, 4000);
        let cont = schema.continuous_indices();
        for b in &blocks {
            for (c, p) in b.perturbed.iter().enumerate() {
                let changed: Vec<usize> = (0..12).filter(|&j| p.values[j] != b.base.values[j]).collect();
                assert_eq!(changed, vec![cont[c]]);
                p.validate(&schema).unwrap();
            }
        }
    }

    #[test]
    fn dgsm_delta_out_of_range() {
        let schema = InputSchema::default();
        assert!(build_dgsm_blocks::<f64>(4, 0.0, &schema, 0).is_err());
        assert!(build_dgsm_blocks::<f64>(4, 0.2, &schema, 0).is_err());
        assert!(build_dgsm_blocks::<f64>(4, 0.1, &schema, 0).is_ok());
    }

    #[test]
    fn blocks_survive_flattening() {
        let schema = InputSchema::default();
        let blocks = build_dgsm_blocks::<f64>(20, 0.05, &schema, 9).unwrap();
        let rows: Vec<ScenarioInput<f64>> = blocks.iter().flat_map(|b| b.scenarios().cloned()).collect();
        let m = scenarios_to_matrix(&rows).unwrap();
        let back = blocks_from_rows(&m, &schema, 0.05).unwrap();
        assert_eq!(back, blocks);
    }

    #[test]
    fn split_sizes() {
        let r = SplitRatios::default();
        assert_eq!(r.counts(4096), (3277, 409, 410));
        assert_eq!(r.counts(10), (8, 1, 1));
        let labels = split_dataset(4096, r, 1).unwrap();
        let count = |s| labels.iter().filter(|&&l| l == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (3277, 409, 410));
        assert_eq!(labels, split_dataset(4096, r, 1).unwrap());
        assert!(split_dataset(9, r, 1).is_err());
    }
}
