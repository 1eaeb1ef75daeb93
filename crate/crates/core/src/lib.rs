//! Stacked-generalization ensembles over patient-structured data.
//!
//! The crate covers the whole two-stage pipeline:
//!
//! * [`data`]: datasets, CSV I/O, label-taxonomy remapping and a synthetic
//!   generator with per-patient random effects.
//! * [`split`]: fixed and k-fold partitions at patient or sample granularity,
//!   with an auditor for the partition invariants.
//! * [`learner`]: a small feedforward classifier trained with Adam and a cosine
//!   learning-rate schedule.
//! * [`ensemble`]: logit stacking, the mean-ensemble baseline and four
//!   meta-model variants.
//! * [`metrics`] and [`diversity`]: sensitivity/specificity scoring, relative
//!   rate of change, and pairwise diversity measures.
//! * [`experiment`]: the orchestrator that runs every regime and emits reports.

pub mod data;
pub mod diversity;
pub mod ensemble;
mod error;
pub mod experiment;
pub mod fingerprint;
pub mod learner;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod split;

pub use data::{
    dataset_summary, generate_benchmark, generate_synthetic, load_dataset, remap_labels,
    save_dataset, Dataset, DatasetSchema, DatasetSummary, LabelMap, OfficialPartition,
    SampleRecord, SyntheticSpec, Taxonomy,
};
pub use diversity::{error_correlation, mean_offdiag, pairwise_disagreement, PairMatrix};
pub use ensemble::{
    build_meta, extract_stacked, mean_ensemble, predict_final, train_meta, MetaKind, MetaModel,
    MetaVariant, StackedLogits,
};
pub use error::{Error, Result};
pub use experiment::{
    emit_report, run_experiment, ExperimentConfig, Regime, ReportBundle, ReportFormat,
};
pub use learner::{
    predict_logits, train, train_with_encoder, FeatureEncoder, MetadataPolicy, ModelSpec, Network,
    TrainConfig, TrainedModel,
};
pub use linalg::{LogitMatrix, Matrix};
pub use metrics::{
    aggregate_runs, confusion, icbhi_score, rrc, sensitivity, specificity, ConfusionMatrix,
    RunScore, ScoreReport,
};
pub use split::{
    materialize, split_fixed, split_kfold, validate_plan, Granularity, Selector, SplitPlan,
    Strategy,
};
