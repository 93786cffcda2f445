//! Dirichlet-process mixtures of categorical DAG models.
//!
//! The engine clusters multivariate categorical observations into groups that
//! share a DAG structure and its parameters, using a collapsed Gibbs sampler
//! with marginal likelihoods in closed form. On top of the posterior sample it
//! provides partition summaries (similarity matrices, variation of
//! information, point partitions and point DAGs) and subject-specific causal
//! effect estimates obtained by model averaging over the recorded draws.
//!
//! Modules:
//! - [`graph`]: DAGs, structural constraints, single-edge operators, the
//!   skeleton prior and a baseline DAG sampler.
//! - [`catmodel`]: categorical datasets, sufficient statistics, marginal
//!   likelihoods and posterior predictives.
//! - [`dpmix`]: the sampler state, its update moves, the driver loop and the
//!   on-disk trace format.
//! - [`causal`]: intervention distributions and averaged causal effects.
//! - [`summaries`]: posterior summaries of partitions and structures.
//! - [`synth`]: synthetic data generation and the benchmark harness.

pub mod catmodel;
pub mod causal;
pub mod dpmix;
mod error;
pub mod graph;
pub mod summaries;
pub mod synth;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = std::result::Result<T, Error>;
