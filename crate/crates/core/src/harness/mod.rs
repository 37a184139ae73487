//! Configuration-driven experiment runner.
//!
//! A run resolves an [`ExperimentConfig`] into a target, a discretization
//! plan and a sampler, and produces a [`RunRecord`]: complexity counts,
//! residual traces, sample moments and a divergence to the target law
//! (exact for Gaussian targets, sample-based otherwise). A sweep repeats the
//! run over dimensions and searches the smallest Picard depth meeting a
//! residual target.

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;

pub use config::{ExperimentConfig, Implementation, PlanSpec, PresetConfig, TargetConfig};
pub use run::{run, run_with_samples, RunRecord};
pub use sweep::{sweep_dimension, SweepOptions, SweepRow, SweepStatus};
