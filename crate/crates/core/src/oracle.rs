//! Synthetic ground-truth simulator.
//!
//! Each output `k` is a scaled quadratic in the continuous inputs `u` with
//! pairwise interactions, plus additive binary shifts:
//!
//! ```text
//! y_k = s_k · ( a_k + Σ_i b_ki u_i + Σ_i c_ki u_i² + Σ_{i<j} e_kij u_i u_j + Σ_m g_km z_m )
//! ```
//!
//! The family is smooth with non-constant derivatives, and its derivative
//! based sensitivity measure under independent `U(0, 1)` inputs has a closed
//! form, which makes it a checkable stand-in for an expensive simulator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{InputSchema, ScenarioInput};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantityInfo {
    pub resource: String,
    pub metric: String,
    pub sector: String,
    pub units: String,
    pub query: String,
}

impl QuantityInfo {
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.resource, self.metric, self.sector)
    }
}

const QUANTITIES: [(&str, &str, &str, &str, &str); 44] = [
    ("energy", "demand_electricity", "building", "EJ", "elec_consumption_by_demand_sector"),
    ("energy", "demand_electricity", "industry", "EJ", "elec_consumption_by_demand_sector"),
    ("energy", "demand_electricity", "transport", "EJ", "elec_consumption_by_demand_sector"),
    ("energy", "demand_fuel", "building", "EJ", "final_energy_consumption_by_sector_and_fuel"),
    ("energy", "demand_fuel", "industry", "EJ", "final_energy_consumption_by_sector_and_fuel"),
    ("energy", "demand_fuel", "building", "EJ", "final_energy_consumption_by_sector_and_fuel"),
    ("energy", "demand_fuel", "industry", "EJ", "final_energy_consumption_by_sector_and_fuel"),
    ("energy", "demand_fuel", "transport", "EJ", "final_energy_consumption_by_sector_and_fuel"),
    ("energy", "price", "coal", "1975$/GJ", "final_energy_prices"),
    ("energy", "price", "electricity", "1975$/GJ", "final_energy_prices"),
    ("energy", "price", "transport", "1975$/GJ", "final_energy_prices"),
    ("energy", "price", "transport", "1975$/GJ", "final_energy_prices"),
    ("energy", "supply_electricity", "biomass", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_electricity", "coal", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_electricity", "gas", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_electricity", "nuclear", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_electricity", "oil", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_electricity", "other", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_electricity", "solar", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_electricity", "wind", "EJ", "elec_gen_by_subsector"),
    ("energy", "supply_primary", "biomass", "EJ", "primary_energy_consumption_by_region"),
    ("energy", "supply_primary", "coal", "EJ", "primary_energy_consumption_by_region"),
    ("energy", "supply_primary", "gas", "EJ", "primary_energy_consumption_by_region"),
    ("energy", "supply_primary", "nuclear", "EJ", "primary_energy_consumption_by_region"),
    ("energy", "supply_primary", "oil", "EJ", "primary_energy_consumption_by_region"),
    ("energy", "supply_primary", "other", "EJ", "primary_energy_consumption_by_region"),
    ("energy", "supply_primary", "solar", "EJ", "primary_energy_consumption_by_region"),
    ("energy", "supply_primary", "wind", "EJ", "primary_energy_consumption_by_region"),
    ("land", "allocation", "biomass", "thousand km2", "aggregated_land_allocation"),
    ("land", "allocation", "forest", "thousand km2", "aggregated_land_allocation"),
    ("land", "allocation", "grass", "thousand km2", "aggregated_land_allocation"),
    ("land", "allocation", "other", "thousand km2", "aggregated_land_allocation"),
    ("land", "allocation", "pasture", "thousand km2", "aggregated_land_allocation"),
    ("land", "demand", "feed", "Mt", "demand_balances_by_crop_commodity"),
    ("land", "demand", "food", "Mt", "demand_balances_by_crop_commodity"),
    ("land", "price", "biomass", "1975$/GJ", "prices_by_sector"),
    ("land", "price", "forest", "1975$/m3", "prices_by_sector"),
    ("land", "production", "biomass", "EJ", "ag_production_by_crop_type"),
    ("land", "production", "forest", "billion m3", "ag_production_by_crop_type"),
    ("land", "production", "grass", "Mt", "ag_production_by_crop_type"),
    ("land", "production", "other", "Mt", "ag_production_by_crop_type"),
    ("land", "production", "pasture", "Mt", "ag_production_by_crop_type"),
    ("water", "demand", "crops", "km3", "water_withdrawals_by_tech"),
    ("water", "demand", "electricity", "km3", "water_withdrawals_by_tech"),
];

const REGIONS: [&str; 32] = [
    "Africa_Eastern",
    "Africa_Northern",
    "Africa_Southern",
    "Africa_Western",
    "Argentina",
    "Australia_NZ",
    "Brazil",
    "Canada",
    "Central America and Caribbean",
    "Central Asia",
    "China",
    "Colombia",
    "EU-12",
    "EU-15",
    "Europe_Eastern",
    "Europe_Non_EU",
    "European Free Trade Association",
    "India",
    "Indonesia",
    "Japan",
    "Mexico",
    "Middle East",
    "Pakistan",
    "Russia",
    "South Africa",
    "South America_Northern",
    "South America_Southern",
    "South Asia",
    "South Korea",
    "Southeast Asia",
    "Taiwan",
    "USA",
];

/// One of the three axes of the output tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputAxis {
    Quantity,
    Region,
    Year,
}

impl OutputAxis {
    pub const ALL: [OutputAxis; 3] = [OutputAxis::Region, OutputAxis::Year, OutputAxis::Quantity];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputAxis::Quantity => "quantity",
            OutputAxis::Region => "region",
            OutputAxis::Year => "year",
        }
    }
}

/// Output layout: quantity × region × year, flattened year-fastest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputSchema {
    pub quantities: Vec<QuantityInfo>,
    pub regions: Vec<String>,
    pub years: Vec<u32>,
}

impl OutputSchema {
    /// 44 quantities × 32 regions × 16 years (2025..=2100 step 5).
    pub fn full() -> Self {
        Self {
            quantities: QUANTITIES
                .iter()
                .map(|&(resource, metric, sector, units, query)| QuantityInfo {
                    resource: resource.into(),
                    metric: metric.into(),
                    sector: sector.into(),
                    units: units.into(),
                    query: query.into(),
                })
                .collect(),
            regions: REGIONS.iter().map(|r| r.to_string()).collect(),
            years: (0..16).map(|i| 2025 + 5 * i).collect(),
        }
    }

    /// Desk-scale schema: 4 quantities × 3 regions × 4 years = 48 outputs.
    pub fn toy() -> Self {
        let full = Self::full();
        Self {
            quantities: full.quantities[..4].to_vec(),
            regions: ["China", "India", "USA"].iter().map(|r| r.to_string()).collect(),
            years: vec![2025, 2050, 2075, 2100],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.quantities.is_empty() || self.regions.is_empty() || self.years.is_empty() {
            return Err(Error::Config("output schema axes must be non-empty".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.quantities.len() * self.regions.len() * self.years.len()
    }

    pub fn axis_len(&self, axis: OutputAxis) -> usize {
        match axis {
            OutputAxis::Quantity => self.quantities.len(),
            OutputAxis::Region => self.regions.len(),
            OutputAxis::Year => self.years.len(),
        }
    }

    pub fn index(&self, q: usize, r: usize, y: usize) -> usize {
        (q * self.regions.len() + r) * self.years.len() + y
    }

    pub fn unravel(&self, col: usize) -> (usize, usize, usize) {
        let ny = self.years.len();
        let nr = self.regions.len();
        (col / (nr * ny), (col / ny) % nr, col % ny)
    }

    /// Position of flat output `col` along `axis`.
    pub fn coordinate(&self, col: usize, axis: OutputAxis) -> usize {
        let (q, r, y) = self.unravel(col);
        match axis {
            OutputAxis::Quantity => q,
            OutputAxis::Region => r,
            OutputAxis::Year => y,
        }
    }

    pub fn axis_labels(&self, axis: OutputAxis) -> Vec<String> {
        match axis {
            OutputAxis::Quantity => self.quantities.iter().map(QuantityInfo::label).collect(),
            OutputAxis::Region => self.regions.clone(),
            OutputAxis::Year => self.years.iter().map(|y| y.to_string()).collect(),
        }
    }

    pub fn output_label(&self, col: usize) -> String {
        let (q, r, y) = self.unravel(col);
        format!("{}|{}|{}", self.quantities[q].label(), self.regions[r], self.years[y])
    }
}

/// Seed plus layout; the coefficients are regenerated from it on demand.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleDescriptor {
    pub seed: u64,
    pub outputs: OutputSchema,
}

/// Fraction of outputs generated as exact constants.
pub const CONSTANT_FRACTION: f64 = 0.02;
pub const LOG10_SCALE_RANGE: (f64, f64) = (-2.0, 2.0);

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCoefficients<T> {
    continuous: Vec<usize>,
    binary: Vec<usize>,
    n_inputs: usize,
    intercept: Vec<T>,
    /// D × C
    linear: Vec<T>,
    /// D × C
    quadratic: Vec<T>,
    /// D × C(C−1)/2, pairs (i<j) in row-major upper-triangle order
    interaction: Vec<T>,
    /// D × B
    binary_shift: Vec<T>,
    scale: Vec<T>,
    constant: Vec<bool>,
}

fn pair_count(c: usize) -> usize {
    c * (c.saturating_sub(1)) / 2
}

/// Index of pair `(i, j)`, `i < j`, among `c` continuous inputs.
fn pair_index(c: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < c);
    i * c - i * (i + 1) / 2 + (j - i - 1)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl<T: Scalar> OracleCoefficients<T> {
    /// Deterministic coefficients for `(seed, schemas)`.
    pub fn generate(seed: u64, outputs: &OutputSchema, inputs: &InputSchema) -> Result<Self> {
        outputs.validate()?;
        inputs.validate()?;
        let d = outputs.dim();
        let continuous = inputs.continuous_indices();
        let binary = inputs.binary_indices();
        let (c, b) = (continuous.len(), binary.len());
        let p = pair_count(c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut n_const = (CONSTANT_FRACTION * d as f64).round() as usize;
        if n_const >= d {
            n_const = 0;
        }
        let mut order: Vec<usize> = (0..d).collect();
        order.shuffle(&mut rng);
        let mut constant = vec![false; d];
        for &k in &order[..n_const] {
            constant[k] = true;
        }

        let mut me = Self {
            continuous,
            binary,
            n_inputs: inputs.len(),
            intercept: Vec::with_capacity(d),
            linear: Vec::with_capacity(d * c),
            quadratic: Vec::with_capacity(d * c),
            interaction: Vec::with_capacity(d * p),
            binary_shift: Vec::with_capacity(d * b),
            scale: Vec::with_capacity(d),
            constant,
        };
        let (lo, hi) = LOG10_SCALE_RANGE;
        for k in 0..d {
            // draws are taken for every output so a constant output does not
            // shift the stream for the others
            let keep = if me.constant[k] { 0.0 } else { 1.0 };
            me.intercept.push(T::lit(normal(&mut rng)));
            for _ in 0..c {
                me.linear.push(T::lit(keep * normal(&mut rng)));
            }
            for _ in 0..c {
                me.quadratic.push(T::lit(keep * normal(&mut rng)));
            }
            for _ in 0..p {
                me.interaction.push(T::lit(keep * normal(&mut rng)));
            }
            for _ in 0..b {
                let sign = [-1.0, 0.0, 1.0][rng.random_range(0..3)];
                me.binary_shift.push(T::lit(keep * sign * normal(&mut rng).abs()));
            }
            me.scale.push(T::lit(10f64.powf(rng.random_range(lo..hi))));
        }
        Ok(me)
    }

    /// Coefficients with only intercepts and scales set; everything else zero.
    /// The starting point for hand-built test oracles.
    pub fn zeros(d: usize, inputs: &InputSchema) -> Self {
        let continuous = inputs.continuous_indices();
        let binary = inputs.binary_indices();
        let (c, b) = (continuous.len(), binary.len());
        Self {
            n_inputs: inputs.len(),
            intercept: vec![T::zero(); d],
            linear: vec![T::zero(); d * c],
            quadratic: vec![T::zero(); d * c],
            interaction: vec![T::zero(); d * pair_count(c)],
            binary_shift: vec![T::zero(); d * b],
            scale: vec![T::one(); d],
            constant: vec![false; d],
            continuous,
            binary,
        }
    }

    pub fn from_descriptor(desc: &OracleDescriptor, inputs: &InputSchema) -> Result<Self> {
        Self::generate(desc.seed, &desc.outputs, inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.scale.len()
    }

    pub fn n_continuous(&self) -> usize {
        self.continuous.len()
    }

    pub fn is_constant(&self, k: usize) -> bool {
        self.constant[k]
    }

    pub fn constant_outputs(&self) -> Vec<usize> {
        (0..self.output_dim()).filter(|&k| self.constant[k]).collect()
    }

    pub fn scales(&self) -> &[T] {
        &self.scale
    }

    pub fn intercept_mut(&mut self, k: usize) -> &mut T {
        &mut self.intercept[k]
    }

    pub fn scale_mut(&mut self, k: usize) -> &mut T {
        &mut self.scale[k]
    }

    /// `c` indexes continuous inputs (0..C), not schema positions.
    pub fn linear_mut(&mut self, k: usize, c: usize) -> &mut T {
        let n = self.n_continuous();
        &mut self.linear[k * n + c]
    }

    pub fn quadratic_mut(&mut self, k: usize, c: usize) -> &mut T {
        let n = self.n_continuous();
        &mut self.quadratic[k * n + c]
    }

    pub fn interaction_mut(&mut self, k: usize, i: usize, j: usize) -> &mut T {
        let n = self.n_continuous();
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        &mut self.interaction[k * pair_count(n) + pair_index(n, i, j)]
    }

    pub fn binary_shift_mut(&mut self, k: usize, m: usize) -> &mut T {
        let n = self.binary.len();
        &mut self.binary_shift[k * n + m]
    }

    pub fn linear(&self, k: usize, c: usize) -> T {
        self.linear[k * self.n_continuous() + c]
    }

    pub fn quadratic(&self, k: usize, c: usize) -> T {
        self.quadratic[k * self.n_continuous() + c]
    }

    pub fn interaction(&self, k: usize, i: usize, j: usize) -> T {
        let n = self.n_continuous();
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.interaction[k * pair_count(n) + pair_index(n, i, j)]
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.n_inputs {
            return Err(Error::Shape {
                op: "oracle",
                lhs: vec![x.len()],
                rhs: vec![self.n_inputs],
            });
        }
        Ok(())
    }

    /// All D outputs at one scenario.
    pub fn eval(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let u: Vec<T> = self.continuous.iter().map(|&i| x[i]).collect();
        let z: Vec<T> = self.binary.iter().map(|&i| x[i]).collect();
        let c = u.len();
        let p = pair_count(c);
        let mut pairs = Vec::with_capacity(p);
        for i in 0..c {
            for j in i + 1..c {
                pairs.push(u[i] * u[j]);
            }
        }
        let sq: Vec<T> = u.iter().map(|&v| v * v).collect();
        let dot = |coef: &[T], vals: &[T]| -> T {
            coef.iter().zip(vals).map(|(&a, &b)| a * b).sum::<T>()
        };
        Ok((0..self.output_dim())
            .map(|k| {
                let inner = self.intercept[k]
                    + dot(&self.linear[k * c..(k + 1) * c], &u)
                    + dot(&self.quadratic[k * c..(k + 1) * c], &sq)
                    + dot(&self.interaction[k * p..(k + 1) * p], &pairs)
                    + dot(&self.binary_shift[k * z.len()..(k + 1) * z.len()], &z);
                self.scale[k] * inner
            })
            .collect())
    }

    pub fn eval_scenario(&self, x: &ScenarioInput<T>) -> Result<Vec<T>> {
        self.eval(&x.values)
    }

    /// Row-wise evaluation of an n×inputs matrix into n×D.
    pub fn eval_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = Vec::with_capacity(x.rows() * self.output_dim());
        for r in 0..x.rows() {
            out.extend(self.eval(x.row(r))?);
        }
        Tensor::matrix(x.rows(), self.output_dim(), out)
    }

    /// Analytic ∂y_k/∂u_i as a C×D matrix (rows follow continuous-input order).
    pub fn grad(&self, x: &[T]) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let u: Vec<T> = self.continuous.iter().map(|&i| x[i]).collect();
        let c = u.len();
        let d = self.output_dim();
        let two = T::lit(2.0);
        let mut out = vec![T::zero(); c * d];
        for k in 0..d {
            for i in 0..c {
                let mut m = self.linear(k, i) + two * self.quadratic(k, i) * u[i];
                for (j, &uj) in u.iter().enumerate() {
                    if j != i {
                        m += self.interaction(k, i, j) * uj;
                    }
                }
                out[i * d + k] = self.scale[k] * m;
            }
        }
        Tensor::matrix(c, d, out)
    }

    /// Closed-form `E[(∂y_k/∂u_i)²]` for independent `U(0, 1)` continuous inputs.
    ///
    /// With `m = b + 2c·U_i + Σ_j e_j U_j`: `E[m] = b + c + Σ_j e_j / 2` and
    /// `Var[m] = (4c² + Σ_j e_j²) / 12`, so `E[m²] = E[m]² + Var[m]`.
    pub fn dgsm_closed_form(&self) -> Tensor<T> {
        let c = self.n_continuous();
        let d = self.output_dim();
        let half = T::lit(0.5);
        let twelfth = T::lit(12.0);
        let mut out = vec![T::zero(); c * d];
        for k in 0..d {
            let s2 = self.scale[k] * self.scale[k];
            for i in 0..c {
                let b = self.linear(k, i);
                let q = self.quadratic(k, i);
                let (mut e_sum, mut e_sq) = (T::zero(), T::zero());
                for j in (0..c).filter(|&j| j != i) {
                    let e = self.interaction(k, i, j);
                    e_sum += e;
                    e_sq += e * e;
                }
                let m = b + q + e_sum * half;
                out[i * d + k] = s2 * (m * m + (T::lit(4.0) * q * q + e_sq) / twelfth);
            }
        }
        Tensor::matrix(c, d, out).expect("c*d elements")
    }
}
