//! Family-aware auto-tuning of fused tensor-program subgraphs.
//!
//! Subgraphs are clustered into families by static analysis; each family
//! shares a gradient-boosted cost model, and the foresee scheduler spends a
//! slice of every tuning round on the bottleneck's siblings. Latencies come
//! from deterministic synthetic landscapes so policies can be compared under
//! identical conditions.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI uses.

pub mod costmodel;
pub mod error;
pub mod experiment;
pub mod family;
pub mod fixtures;
pub mod graph;
pub mod scalar;
pub mod scheduler;
pub mod searchspace;
pub mod simbackend;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type CostModel = costmodel::CostModelState<f64>;
pub type CostModelF32 = costmodel::CostModelState<f32>;
pub type Landscape = simbackend::Landscape<f64>;
pub type LandscapeF32 = simbackend::Landscape<f32>;
pub type Backend = simbackend::SimBackend<f64>;
pub type Record = searchspace::MeasurementRecord<f64>;
pub type TunerState = scheduler::TunerState<f64>;
pub type TunerStateF32 = scheduler::TunerState<f32>;
pub type Tuner = scheduler::Tuner<f64>;
pub type ComparisonReport = experiment::ComparisonReport<f64>;
