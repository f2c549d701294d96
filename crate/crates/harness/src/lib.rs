//! Experiment driver for `pgrl-core`: spec files, sweeps over defense settings, per-run artifacts
//! and SVG plots.

pub mod plot;
pub mod run;
pub mod spec;

pub use run::{read_records, run_point, run_sweep, Outcome, RunRecord, SweepSummary};
pub use spec::{ExperimentSpec, RunSpec, SpecErrors};
