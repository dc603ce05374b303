//! Experiment driver: configuration, synthetic data, cycle schedules,
//! metrics and sweeps.

pub mod config;
pub mod data;
pub mod metrics;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{CycleSpec, DatasetSpec, ExperimentConfig, NodeSpec, ScheduleSpec};
pub use metrics::{auroc, mean_std, MetricsRow};
pub use report::report_dir;
pub use run::{run_experiment, CycleRecord, ExperimentOutput};
pub use sweep::{sweep, SweepAxis, SweepOutput};
