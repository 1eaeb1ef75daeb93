//! End-to-end runs: data, split plans, base models, stacks, ensembles,
//! scores and diversity for every partitioning regime, plus reports.

mod config;
mod report;
mod run;

pub use config::{DatasetSource, ExperimentConfig, ExperimentData, OodFile, Regime, SEED_ENV};
pub use report::{emit_report, render, render_table, ReportFormat};
pub use run::{
    run_experiment, Artifact, BaseModelScore, DiversitySummary, Evaluation, LeakageAudit,
    MetaReport, RegimeReport, ReportBundle, StageFailure, TestSet,
};
