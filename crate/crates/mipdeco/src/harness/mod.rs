//! Reproducible experiment harness: seeded instance generation, batch
//! studies, comparison metrics, TOML configuration and run manifests.
//!
//! Everything here is deterministic given the configuration: instance targets
//! are generated from counter-based RNG streams, experiment batches fan out
//! over a thread pool but merge in instance order, and every run can write a
//! manifest (resolved configuration, seeds, versions, wall times) from which
//! the same build reproduces the outputs bit for bit.

pub mod config;
pub mod experiments;
pub mod instance;
pub mod manifest;

pub use config::{ExperimentConfig, OutputConfig, RunConfig};
pub use experiments::{
    compute_metrics, order_table, read_runs_csv, reduction_benchmark_fem, run_compare,
    sigma_decay, standard_variants, write_order_table_csv, Backend, CompareOutcome,
    OrderTableRow, RunRecord, SigmaDecay, ThetaRule, VariantMetrics, VariantSpec,
};
pub use instance::{generate_instance, generate_set, Instance, InstanceSpec, Profile};
pub use manifest::RunManifest;
