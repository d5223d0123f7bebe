//! driftbench-core: turn one labeled, timestamped tabular dataset into a
//! multi-domain, time-evolving transfer-learning benchmark.
//!
//! The pipeline has three data stages followed by an evaluation stage:
//!
//! 1. [`sampler`] resamples a dataset into correlated sub-domains around
//!    randomly chosen anchor rows, with inclusion probability decaying
//!    exponentially in row distance.
//! 2. [`transforms`] injects parameterized, optionally time-dependent
//!    distribution shifts per domain (feature rescaling, anchor blending,
//!    categorical resampling, gated label flips).
//! 3. [`schedule`] replays the data over a discrete timeline, decomposing
//!    every domain into labeled / unlabeled / test subsets at each step while
//!    honoring label delay.
//! 4. [`models`] trains pluggable scorers on the splits and [`eval`] measures
//!    them with recall at a fixed false-positive rate, paired t-tests, and
//!    Benjamini-Hochberg FDR control.
//!
//! [`experiment`] wires the stages into seeded, resumable suites and
//! [`report`] renders the result tables.

pub mod batch;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod models;
pub mod report;
pub mod sampler;
pub mod schedule;
pub mod schema;
pub mod seed;
pub mod transforms;

pub use dataset::{load_dataset, standardize, Dataset, FeatureStats, Instance};
pub use error::{Error, Result};
pub use schema::{FeatureDef, FeatureKind, Schema};
