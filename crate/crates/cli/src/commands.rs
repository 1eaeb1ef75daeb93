use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use stacklab::data::DatasetSchema;
use stacklab::experiment::{render, SEED_ENV};
use stacklab::learner::ValidationSet;
use stacklab::linalg::argmax;
use stacklab::{
    build_meta, confusion, emit_report, extract_stacked, generate_benchmark, load_dataset,
    materialize, predict_final, predict_logits, run_experiment, save_dataset, split_fixed,
    split_kfold, train_meta as fit_meta, train_with_encoder, ConfusionMatrix, Dataset, Error,
    ExperimentConfig, FeatureEncoder, MetaModel, MetaVariant, ModelSpec, ReportBundle,
    ReportFormat, RunScore, SampleRecord, Selector, SplitPlan, StackedLogits, Strategy,
    SyntheticSpec, Taxonomy, TrainConfig, TrainedModel,
};

use crate::{
    EvaluateArgs, ExtractArgs, Failure, GenerateArgs, ReportArgs, RunArgs, SelectorArg, SplitArgs,
    StrategyArg, TaxonomyArgs, TrainArgs, TrainBaseArgs, TrainMetaArgs,
};

type Outcome = Result<(), Failure>;

fn seed_override() -> Result<Option<u64>, Error> {
    let Ok(raw) = std::env::var(SEED_ENV) else {
        return Ok(None);
    };
    let seed = raw
        .trim()
        .parse()
        .map_err(|_| Error::invalid(SEED_ENV, format!("{raw:?} is not an unsigned integer")))?;
    log::info!("{SEED_ENV}={seed} overrides the seed");
    Ok(Some(seed))
}

impl TaxonomyArgs {
    fn taxonomy(&self) -> Result<Taxonomy, Error> {
        let normal = match &self.normal {
            None => 0,
            Some(n) => self.classes.iter().position(|c| c == n).ok_or_else(|| {
                Error::invalid("normal", format!("{n:?} is not one of the classes"))
            })?,
        };
        Taxonomy::new(self.classes.iter().cloned(), normal)
    }

    fn load(&self, path: &Path) -> Result<Dataset, Error> {
        load_dataset(path, &DatasetSchema::new(self.taxonomy()?))
    }
}

impl TrainArgs {
    fn apply(&self, mut config: TrainConfig) -> TrainConfig {
        if let Some(lr) = self.lr {
            config.lr_max = lr;
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        if let Some(b) = self.batch_size {
            config.batch_size = b;
        }
        config
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::file(path, e))
}

fn records_by_id<'a>(ds: &'a Dataset, ids: &[String]) -> Result<Vec<&'a SampleRecord>, Error> {
    ids.iter()
        .map(|id| {
            ds.get(id).ok_or_else(|| {
                Error::invalid("stack", format!("sample {id:?} is not in the dataset"))
            })
        })
        .collect()
}

pub fn generate(a: GenerateArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.spec).map_err(|e| Error::file(&a.spec, e))?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(seed) = seed_override()? {
        spec.seed = seed;
    }
    let bench = generate_benchmark(&spec, a.test_per_patient, a.fresh_patients)?;
    save_dataset(&bench.dataset, &a.out)?;
    if let Some(ood) = &a.ood {
        save_dataset(&bench.fresh, ood)?;
    }
    println!(
        "wrote {} samples of {} patients to {}",
        bench.dataset.len(),
        spec.n_patients,
        a.out.display()
    );
    Ok(())
}

pub fn split(a: SplitArgs) -> Outcome {
    let ds = a.taxonomy.load(&a.data)?;
    let seed = seed_override()?.unwrap_or(a.seed);
    let g = a.granularity.into();
    let plan = match a.strategy {
        StrategyArg::Fixed => split_fixed(&ds, a.base_fraction, g, seed)?,
        StrategyArg::Kfold => split_kfold(&ds, a.base_fraction, a.k, g, seed)?,
    };
    plan.save(&a.out)?;
    println!(
        "{} plan: {} base, {} meta samples -> {}",
        plan.strategy,
        plan.base_portion().len(),
        plan.meta.len(),
        a.out.display()
    );
    Ok(())
}

pub fn train_base(a: TrainBaseArgs) -> Outcome {
    let ds = a.taxonomy.load(&a.data)?;
    let plan = SplitPlan::load(&a.plan)?;
    stacklab::validate_plan(&plan, &ds)?;
    let m = a.model_index;
    if m == 0 {
        return Err(Error::invalid("model-index", "indices start at 1").into());
    }
    let (selector, val) = match plan.strategy {
        Strategy::Fixed => (Selector::Base, None),
        Strategy::KFold { .. } => (
            Selector::ModelTrain(m),
            Some(materialize(&plan, &ds, Selector::ModelVal(m))?),
        ),
    };
    let train_set = materialize(&plan, &ds, selector)?;
    let encoder = FeatureEncoder::fit(
        ds.training_pool(),
        ds.feature_dim(),
        a.metadata.into(),
    );
    let mut widths = vec![encoder.width()];
    widths.extend(&a.hidden);
    widths.push(ds.taxonomy().len());
    let spec = ModelSpec::new(widths, a.metadata.into());
    let config = a.train.apply(TrainConfig::base_default()).with_seed(a.seed);
    let val_set = val.as_ref().map(|records| ValidationSet {
        records,
        taxonomy: ds.taxonomy(),
    });
    let mut model = train_with_encoder(&spec, encoder, &train_set, &config, val_set)?;
    model.provenance.model_id = Some(m);
    model.provenance.selector = Some(selector.to_string());
    model.save(&a.out)?;
    println!(
        "model {m}: {} samples, {} epochs, final loss {:.4} -> {}",
        train_set.len(),
        model.provenance.epochs_run,
        model.provenance.final_loss.unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

pub fn extract(a: ExtractArgs) -> Outcome {
    let ds = a.taxonomy.load(&a.data)?;
    let models = a
        .models
        .iter()
        .map(TrainedModel::load)
        .collect::<Result<Vec<_>, _>>()?;
    let records = match a.selector {
        SelectorArg::Test => ds.official_test(),
        SelectorArg::Meta => {
            let path = a
                .plan
                .as_ref()
                .ok_or_else(|| Error::invalid("plan", "--selector meta needs --plan"))?;
            let plan = SplitPlan::load(path)?;
            stacklab::validate_plan(&plan, &ds)?;
            materialize(&plan, &ds, Selector::Meta)?
        }
    };
    if records.is_empty() {
        return Err(Error::invalid("data", "the selection holds no samples").into());
    }
    let refs: Vec<&TrainedModel> = models.iter().collect();
    let stack = extract_stacked(&refs, &records)?;
    stack.save(&a.out)?;
    println!(
        "stacked {} models over {} samples -> {}",
        stack.n_models(),
        stack.n_samples(),
        a.out.display()
    );
    Ok(())
}

pub fn train_meta(a: TrainMetaArgs) -> Outcome {
    let ds = a.taxonomy.load(&a.data)?;
    let stack = StackedLogits::load(&a.stack)?;
    let records = records_by_id(&ds, &stack.sample_ids)?;
    let plan = a.plan.as_ref().map(SplitPlan::load).transpose()?;
    let encoder = FeatureEncoder::fit(
        ds.training_pool(),
        ds.feature_dim(),
        a.metadata.into(),
    );
    let meta = build_meta(
        MetaVariant::new(a.variant),
        stack.n_models(),
        stack.classes,
        encoder,
        a.seed,
    )?;
    let config = a.train.apply(TrainConfig::meta_default()).with_seed(a.seed);
    let meta = fit_meta(&meta, &stack, &records, plan.as_ref(), &config)?;
    meta.save(&a.out)?;
    println!(
        "{} meta-model on {} samples, final loss {:.4} -> {}",
        a.variant,
        stack.n_samples(),
        meta.provenance.final_loss.unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Scores {
    n_samples: usize,
    #[serde(flatten)]
    score: RunScore,
    confusion: ConfusionMatrix,
}

fn read_predictions(path: &Path, taxonomy: &Taxonomy) -> Result<BTreeMap<String, usize>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("sample_id")) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            row: i + 1,
            message,
        };
        let (id, pred) = line
            .split_once(',')
            .ok_or_else(|| parse_err("expected sample_id,prediction".into()))?;
        let pred = pred.trim();
        let class = taxonomy
            .id_of(pred)
            .or_else(|| pred.parse().ok().filter(|&c: &usize| c < taxonomy.len()))
            .ok_or_else(|| parse_err(format!("unknown class {pred:?}")))?;
        if out.insert(id.trim().to_string(), class).is_some() {
            return Err(parse_err(format!("sample {id:?} listed twice")));
        }
    }
    Ok(out)
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let ds = a.taxonomy.load(&a.data)?;
    let selected: Vec<&SampleRecord> = if a.all {
        ds.samples().iter().collect()
    } else {
        ds.official_test()
    };
    let (records, preds): (Vec<&SampleRecord>, Vec<usize>) = if let Some(path) = &a.source.preds {
        let preds = read_predictions(path, ds.taxonomy())?;
        let mut pairs = Vec::new();
        for r in &selected {
            let p = preds.get(&r.sample_id).ok_or_else(|| {
                Error::invalid("preds", format!("no prediction for {:?}", r.sample_id))
            })?;
            pairs.push((*r, *p));
        }
        pairs.into_iter().unzip()
    } else if let Some(path) = &a.source.model {
        let model = TrainedModel::load(path)?;
        let logits = predict_logits(&model, &selected)?;
        let preds = logits.iter_rows().map(argmax).collect();
        (selected, preds)
    } else {
        let meta = MetaModel::load(a.source.meta.as_ref().expect("clap enforces one source"))?;
        let stack = StackedLogits::load(a.stack.as_ref().expect("clap enforces --stack"))?;
        let records = records_by_id(&ds, &stack.sample_ids)?;
        let preds = predict_final(&meta, &stack, &records)?;
        (records, preds)
    };
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let cm = confusion(&preds, &labels, ds.taxonomy())?;
    let score = RunScore::from_confusion(&cm)?;
    println!(
        "SP {:.2}  SE {:.2}  Score {:.2}  (n = {})",
        score.sp,
        score.se,
        score.score,
        records.len()
    );
    if let Some(out) = &a.out {
        write_json(
            &Scores {
                n_samples: records.len(),
                score,
                confusion: cm,
            },
            out,
        )?;
    }
    Ok(())
}

pub fn run(a: RunArgs) -> Outcome {
    let mut config = ExperimentConfig::load(&a.config)?;
    config.apply_seed_env()?;
    config.output_dir = Some(a.out.clone());
    config.parallel |= a.parallel;
    let bundle = run_experiment(&config)?;
    let files = emit_report(&bundle, &a.out, &[ReportFormat::Json, ReportFormat::Table])?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    let failed: Vec<String> = bundle
        .regimes
        .iter()
        .filter_map(|r| {
            r.failure
                .as_ref()
                .map(|f| format!("{} ({})", r.regime.name(), f.stage))
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Stage(format!(
            "failed regimes: {}",
            failed.join(", ")
        )))
    }
}

pub fn report(a: ReportArgs) -> Outcome {
    let bundle = ReportBundle::load(&a.bundle)?;
    let format = a.format.into();
    match &a.out {
        Some(dir) => {
            for f in emit_report(&bundle, dir, &[format])? {
                println!("wrote {}", f.display());
            }
        }
        None => print!("{}", render(&bundle, format)?),
    }
    Ok(())
}
