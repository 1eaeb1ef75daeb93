use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentData, Regime};
use crate::data::{save_dataset, Dataset, SampleRecord};
use crate::diversity::{error_correlation, pairwise_disagreement, PairMatrix};
use crate::ensemble::{
    build_meta, extract_stacked, mean_ensemble, predict_final, train_meta, MetaKind, MetaVariant,
};
use crate::error::{Error, Result};
use crate::fingerprint::fnv1a_hex;
use crate::learner::{
    predict_logits, train_with_encoder, FeatureEncoder, ModelSpec, TrainedModel, ValidationSet,
};
use crate::linalg::argmax;
use crate::metrics::{aggregate_runs, RunScore, ScoreReport};
use crate::split::{
    materialize, split_fixed, split_kfold, validate_plan, PlanAudit, Selector, SplitPlan, Strategy,
};

/// Which held-out set an evaluation ran on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSet {
    /// Unseen samples of the training patients.
    InDistribution,
    /// Samples of unseen patients or of a remapped external dataset.
    Ood,
}

impl TestSet {
    pub fn as_str(self) -> &'static str {
        match self {
            TestSet::InDistribution => "in_distribution",
            TestSet::Ood => "ood",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseModelScore {
    pub model_id: usize,
    pub seed: u64,
    pub score: RunScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub variant: MetaVariant,
    pub report: ScoreReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiversitySummary {
    pub disagreement: PairMatrix,
    pub mean_disagreement: f64,
    pub error_correlation: PairMatrix,
    pub mean_error_correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_set: TestSet,
    pub n_samples: usize,
    pub base_models: Vec<BaseModelScore>,
    /// Aggregate of the individual base models; the RRC baseline.
    pub base_mean: ScoreReport,
    pub mean_ensemble: ScoreReport,
    pub meta: Vec<MetaReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diversity: Option<DiversitySummary>,
}

impl Evaluation {
    pub fn meta_report(&self, kind: MetaKind) -> Option<&ScoreReport> {
        self.meta
            .iter()
            .find(|m| m.variant.kind == kind)
            .map(|m| &m.report)
    }
}

/// Check that no base-model training sample reached the meta stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub passed: bool,
    pub overlapping: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_audit: Option<PlanAudit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_audit: Option<LeakageAudit>,
    pub evaluations: Vec<Evaluation>,
}

impl RegimeReport {
    pub fn evaluation(&self, test_set: TestSet) -> Option<&Evaluation> {
        self.evaluations.iter().find(|e| e.test_set == test_set)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    /// FNV-1a of the file bytes, hex.
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub experiment_id: String,
    pub config: ExperimentConfig,
    pub dataset_fingerprint: String,
    pub regimes: Vec<RegimeReport>,
    pub artifacts: Vec<Artifact>,
}

impl ReportBundle {
    pub fn regime(&self, regime: Regime) -> Option<&RegimeReport> {
        self.regimes.iter().find(|r| r.regime == regime)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Writes files below an output directory and records their fingerprints.
struct Sink {
    dir: Option<PathBuf>,
    artifacts: Vec<Artifact>,
}

impl Sink {
    fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
        }
        Ok(Sink {
            dir: dir.map(Path::to_path_buf),
            artifacts: Vec::new(),
        })
    }

    /// `write` receives the absolute path; skipped without an output dir.
    fn put(&mut self, rel: &str, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
        write(&path)?;
        let bytes = std::fs::read(&path).map_err(|e| Error::file(&path, e))?;
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            fingerprint: fnv1a_hex(&bytes),
        });
        Ok(())
    }
}

/// Tags an error with the pipeline stage it came from.
trait Stage<T> {
    fn stage(self, name: &str) -> std::result::Result<T, StageFailure>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, name: &str) -> std::result::Result<T, StageFailure> {
        self.map_err(|e| StageFailure {
            stage: name.to_string(),
            message: e.to_string(),
        })
    }
}

fn map_ordered<T: Sync, U: Send>(
    parallel: bool,
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync + Send,
) -> Result<Vec<U>> {
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Runs every regime of `config`. A failing regime is reported with the
/// stage that failed; the others still run. Only configuration and data
/// errors abort the whole experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ReportBundle> {
    config.validate()?;
    let data = config.dataset.resolve()?;
    if data.dataset.official_test().is_empty() {
        return Err(Error::invalid(
            "dataset",
            "no samples are tagged as the in-distribution test set",
        ));
    }
    let mut sink = Sink::new(config.output_dir.as_deref())?;
    sink.put("data/dataset.csv", |p| save_dataset(&data.dataset, p))?;
    if let Some(ood) = &data.ood {
        sink.put("data/ood.csv", |p| save_dataset(ood, p))?;
    }

    let mut regimes = Vec::new();
    for &regime in &config.regimes {
        log::info!("regime {}", regime.name());
        let report = match run_regime(config, &data, regime, &mut sink) {
            Ok(r) => r,
            Err((failure, plan_audit)) => {
                log::warn!(
                    "regime {} failed in {}: {}",
                    regime.name(),
                    failure.stage,
                    failure.message
                );
                RegimeReport {
                    regime,
                    failure: Some(failure),
                    plan_audit,
                    leakage_audit: None,
                    evaluations: Vec::new(),
                }
            }
        };
        regimes.push(report);
    }

    let mut bundle = ReportBundle {
        experiment_id: config.id.clone(),
        config: config.echo(),
        dataset_fingerprint: data.dataset.fingerprint(),
        regimes,
        artifacts: Vec::new(),
    };
    bundle.artifacts = sink.artifacts;
    Ok(bundle)
}

type RegimeError = (StageFailure, Option<PlanAudit>);

fn run_regime(
    config: &ExperimentConfig,
    data: &ExperimentData,
    regime: Regime,
    sink: &mut Sink,
) -> std::result::Result<RegimeReport, RegimeError> {
    let ds = &data.dataset;
    let dir = regime.name();
    let bare = |f: StageFailure| (f, None);

    let plan = match regime.strategy {
        Strategy::Fixed => split_fixed(
            ds,
            config.base_fraction,
            regime.granularity,
            config.split_seed,
        ),
        Strategy::KFold { k } => split_kfold(
            ds,
            config.base_fraction,
            k,
            regime.granularity,
            config.split_seed,
        ),
    }
    .stage("split")
    .map_err(bare)?;
    let audit = validate_plan(&plan, ds).stage("audit").map_err(bare)?;
    if !audit.passed {
        let failure = StageFailure {
            stage: "audit".into(),
            message: format!("{} plan violations", audit.violations.len()),
        };
        return Err((failure, Some(audit)));
    }
    let with_audit = |f: StageFailure| (f, Some(audit.clone()));
    sink.put(&format!("{dir}/plan.json"), |p| plan.save(p))
        .stage("persist")
        .map_err(with_audit)?;

    let pool = ds.training_pool();
    let encoder = FeatureEncoder::fit(
        pool.iter().copied(),
        ds.feature_dim(),
        config.metadata_policy,
    );
    let models = train_base_models(config, ds, &plan, &encoder)
        .stage("train_base")
        .map_err(with_audit)?;
    for m in &models {
        let id = m.provenance.model_id.unwrap_or(0);
        sink.put(&format!("{dir}/base_model_{id}.json"), |p| m.save(p))
            .stage("persist")
            .map_err(with_audit)?;
    }

    let meta_records = materialize(&plan, ds, Selector::Meta)
        .stage("materialize")
        .map_err(with_audit)?;
    let leakage = leakage_audit(&plan, ds, &meta_records, models.len())
        .stage("leakage_audit")
        .map_err(with_audit)?;
    if !leakage.passed {
        let failure = StageFailure {
            stage: "leakage_audit".into(),
            message: Error::Leakage {
                ids: leakage.overlapping.clone(),
            }
            .to_string(),
        };
        return Err((failure, Some(audit)));
    }
    let refs: Vec<&TrainedModel> = models.iter().collect();
    let meta_stack = extract_stacked(&refs, &meta_records)
        .stage("extract")
        .map_err(with_audit)?;
    sink.put(&format!("{dir}/stack_meta.csv"), |p| meta_stack.save(p))
        .stage("persist")
        .map_err(with_audit)?;

    // Meta-models are trained once per variant and seed and reused on every test set.
    let n_models = models.len();
    let classes = ds.taxonomy().len();
    let jobs: Vec<(MetaVariant, u64)> = config
        .meta_variants
        .iter()
        .flat_map(|&v| config.meta_seeds.iter().map(move |&s| (v, s)))
        .collect();
    let metas = map_ordered(config.parallel, &jobs, |&(variant, seed)| {
        let meta = build_meta(variant, n_models, classes, encoder.clone(), seed)?;
        train_meta(
            &meta,
            &meta_stack,
            &meta_records,
            Some(&plan),
            &config.meta_train.clone().with_seed(seed),
        )
    })
    .stage("train_meta")
    .map_err(with_audit)?;
    if config.persist_meta_models {
        for ((variant, seed), meta) in jobs.iter().zip(&metas) {
            sink.put(
                &format!("{dir}/meta_{}_seed{seed}.json", variant.kind),
                |p| meta.save(p),
            )
            .stage("persist")
            .map_err(with_audit)?;
        }
    }

    let mut evaluations = Vec::new();
    let mut test_sets = vec![(TestSet::InDistribution, ds.official_test())];
    if let Some(ood) = &data.ood {
        test_sets.push((TestSet::Ood, ood.samples().iter().collect()));
    }
    for (test_set, records) in test_sets {
        let stage = format!("evaluate_{}", test_set.as_str());
        let stack = extract_stacked(&refs, &records)
            .stage(&stage)
            .map_err(with_audit)?;
        sink.put(
            &format!("{dir}/stack_test_{}.csv", test_set.as_str()),
            |p| stack.save(p),
        )
        .stage("persist")
        .map_err(with_audit)?;
        let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
        let eval = evaluate(
            config, ds, test_set, &models, &stack, &records, &labels, &jobs, &metas,
        )
        .stage(&stage)
        .map_err(with_audit)?;
        evaluations.push(eval);
    }

    Ok(RegimeReport {
        regime,
        failure: None,
        plan_audit: Some(audit),
        leakage_audit: Some(leakage),
        evaluations,
    })
}

/// Fixed: every model trains on the base set with seeds 1..n. K-fold: model
/// `m` trains on its assignment's folds with seed `m` and logs scores on its
/// validation fold.
fn train_base_models(
    config: &ExperimentConfig,
    ds: &Dataset,
    plan: &SplitPlan,
    encoder: &FeatureEncoder,
) -> Result<Vec<TrainedModel>> {
    let mut widths = vec![encoder.width()];
    widths.extend(&config.base_hidden);
    widths.push(ds.taxonomy().len());
    let spec = ModelSpec::new(widths, config.metadata_policy);
    let ids: Vec<usize> = (1..=config.n_base_models).collect();
    map_ordered(config.parallel, &ids, |&m| {
        let (selector, train_set, val) = match plan.strategy {
            Strategy::Fixed => (Selector::Base, materialize(plan, ds, Selector::Base)?, None),
            Strategy::KFold { .. } => (
                Selector::ModelTrain(m),
                materialize(plan, ds, Selector::ModelTrain(m))?,
                Some(materialize(plan, ds, Selector::ModelVal(m))?),
            ),
        };
        let seed = m as u64;
        let val_set = val.as_ref().map(|records| ValidationSet {
            records,
            taxonomy: ds.taxonomy(),
        });
        let mut model = train_with_encoder(
            &spec,
            encoder.clone(),
            &train_set,
            &config.base_train.clone().with_seed(seed),
            val_set,
        )?;
        model.provenance.model_id = Some(m);
        model.provenance.selector = Some(selector.to_string());
        log::debug!(
            "base model {m}: final loss {:?}",
            model.provenance.final_loss
        );
        Ok(model)
    })
}

fn leakage_audit(
    plan: &SplitPlan,
    ds: &Dataset,
    meta_records: &[&SampleRecord],
    n_models: usize,
) -> Result<LeakageAudit> {
    let meta_ids: HashSet<&str> = meta_records.iter().map(|r| r.sample_id.as_str()).collect();
    let mut overlapping = Vec::new();
    for m in 1..=n_models {
        for r in materialize(plan, ds, Selector::ModelTrain(m))? {
            if meta_ids.contains(r.sample_id.as_str()) {
                overlapping.push(r.sample_id.clone());
            }
        }
    }
    overlapping.sort();
    overlapping.dedup();
    Ok(LeakageAudit {
        passed: overlapping.is_empty(),
        overlapping,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    config: &ExperimentConfig,
    ds: &Dataset,
    test_set: TestSet,
    models: &[TrainedModel],
    stack: &crate::ensemble::StackedLogits,
    records: &[&SampleRecord],
    labels: &[usize],
    jobs: &[(MetaVariant, u64)],
    metas: &[crate::ensemble::MetaModel],
) -> Result<Evaluation> {
    let taxonomy = ds.taxonomy();
    let mut base_preds = Vec::new();
    let mut base_models = Vec::new();
    for (m, model) in models.iter().enumerate() {
        let preds: Vec<usize> = predict_logits(model, records)?
            .iter_rows()
            .map(argmax)
            .collect();
        base_models.push(BaseModelScore {
            model_id: model.provenance.model_id.unwrap_or(m + 1),
            seed: model.provenance.seed,
            score: RunScore::evaluate(&preds, labels, taxonomy)?,
        });
        base_preds.push(preds);
    }
    let base_runs: Vec<RunScore> = base_models.iter().map(|b| b.score).collect();
    let base_mean = aggregate_runs(&base_runs)?;
    let baseline = base_mean.score.mean;

    let mean_preds: Vec<usize> = mean_ensemble(stack).iter_rows().map(argmax).collect();
    let mean_ensemble = aggregate_runs(&[RunScore::evaluate(&mean_preds, labels, taxonomy)?])?
        .with_rrc(baseline)?;

    let mut meta = Vec::new();
    for &variant in &config.meta_variants {
        let runs = jobs
            .iter()
            .zip(metas)
            .filter(|((v, _), _)| *v == variant)
            .map(|(_, model)| {
                RunScore::evaluate(&predict_final(model, stack, records)?, labels, taxonomy)
            })
            .collect::<Result<Vec<_>>>()?;
        meta.push(MetaReport {
            variant,
            report: aggregate_runs(&runs)?.with_rrc(baseline)?,
        });
    }

    let diversity = if models.len() >= 2 {
        let disagreement = pairwise_disagreement(&base_preds)?;
        let error_correlation = error_correlation(&base_preds, labels)?;
        Some(DiversitySummary {
            mean_disagreement: disagreement.mean_offdiag()?,
            mean_error_correlation: error_correlation.mean_offdiag()?,
            disagreement,
            error_correlation,
        })
    } else {
        None
    };

    Ok(Evaluation {
        test_set,
        n_samples: records.len(),
        base_models,
        base_mean,
        mean_ensemble,
        meta,
        diversity,
    })
}
