//! Neural emulator for scenario ensembles of an integrated assessment model.
//!
//! The crate covers the whole loop: space-filling scenario design, a
//! deterministic stand-in simulator, an MLP emulator trained with AdamW,
//! derivative-based global sensitivity measures, and R² fidelity metrics.
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix it to `f64`.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod scalar;
pub mod sensitivity;
pub mod stats;
pub mod tensor;
pub mod training;

pub use autodiff::{Gradients, Graph, Var};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use evaluation::{Aggregation, EvalReport, MetricRow};
pub use model::{Emulator, MlpConfig, MlpParams, Normalizer};
pub use oracle::{OracleCoefficients, OracleDescriptor, OutputAxis, OutputSchema};
pub use sampling::{DgsmBlock, InputSchema, ScenarioInput, Split, SplitRatios};
pub use scalar::Scalar;
pub use sensitivity::{Provenance, SensitivityMatrix};
pub use tensor::Tensor;
pub use training::{AdamW, SearchSpace, TrainConfig, TrainReport};

pub type Tensor64 = Tensor<f64>;
pub type Emulator64 = Emulator<f64>;
pub type Dataset64 = Dataset<f64>;
pub type Oracle64 = OracleCoefficients<f64>;
pub type Sensitivity64 = SensitivityMatrix<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Emulator32 = Emulator<f32>;
