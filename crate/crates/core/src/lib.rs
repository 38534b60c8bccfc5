//! Training binary classifiers under a group-Pareto objective instead of
//! strict equality constraints.
//!
//! The crate provides:
//!
//! * a shared data model ([`model`]): datasets, subgroup partitions,
//!   operating points, deterministic stratified splits;
//! * CSV/HTTP ingestion with schema-driven encoding ([`ingest`], [`fetch`]);
//! * synthetic distributions where a confounder drives the label ([`synth`]);
//! * a from-scratch feed-forward net with four composite losses ([`net`]);
//! * fairness metrics: parity loss, Pareto error, the PEF penalty
//!   ([`metrics`]);
//! * trainers: per-group bootstraps, iterative Pareto-efficient training,
//!   and parity/adversarial baselines ([`train`]);
//! * operating-point analysis: threshold sweeps, Pareto fronts,
//!   scalarization, disalignment, fairness frontiers ([`pareto`]);
//! * a config-driven experiment runner with JSON reports and plot-data CSVs
//!   ([`experiment`], [`report`]).
//!
//! The numeric core is generic over [`Scalar`] (`f32`/`f64`); everything
//! data- and experiment-facing uses the [`Real`] alias.

pub mod error;
pub mod experiment;
pub mod fetch;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod net;
pub mod pareto;
pub mod report;
pub mod scalar;
pub mod synth;
pub mod train;

/// Working precision of datasets, training and reports.
pub type Real = f64;

pub use error::{Error, Result};
pub use model::{Dataset, GroupKey, GroupPartition, OperatingPoint};
pub use scalar::Scalar;
