//! Velocity-caching flow sampler and difficulty/diversity coreset selection.
//!
//! The crate has two halves that share the dataset and RNG plumbing:
//!
//! * [`flowsim`] and [`vcache`]: an explicit-Euler flow sampler and the
//!   three-stage scheduler that reuses cached velocities during the stable
//!   part of the trajectory.
//! * [`ingest`], [`difficulty`] and [`coreset`]: loading embedding datasets,
//!   aggregating per-step losses into difficulty scores, and greedy coreset
//!   selection over an RBF-weighted k-NN graph.
//!
//! [`metrics`] holds the sample-cloud comparisons used by the benches, and
//! [`cli`] wires everything into the `vcache` binary.

pub mod cli;
pub mod coreset;
pub mod difficulty;
pub mod flowsim;
pub mod ingest;
pub mod metrics;
pub mod rng;
pub mod vcache;

pub use coreset::{Budget, CoresetConfig, KnnGraph, SelectionManifest};
pub use difficulty::DifficultyConfig;
pub use flowsim::{FlowField, GmmField, MlpField, SamplerConfig, Trajectory};
pub use ingest::{Dataset, TrajectoryRecord};
pub use metrics::SampleCloud;
pub use vcache::{BenchReport, CacheConfig, Schedule, SmoothnessSeries};
