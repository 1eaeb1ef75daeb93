use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_benchmark, Dataset};
use crate::data::{load_dataset, remap_labels, DatasetSchema, LabelMap, SyntheticSpec, Taxonomy};
use crate::ensemble::{MetaKind, MetaVariant};
use crate::error::{Error, Result};
use crate::learner::{MetadataPolicy, TrainConfig};
use crate::split::{Granularity, Strategy};

/// Environment variable that replaces the data and split seeds of a config.
pub const SEED_ENV: &str = "STACKLAB_SEED";

/// One (strategy × granularity) partitioning regime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Regime {
    pub strategy: Strategy,
    pub granularity: Granularity,
}

impl Regime {
    pub fn new(strategy: Strategy, granularity: Granularity) -> Self {
        Regime {
            strategy,
            granularity,
        }
    }

    /// The four regimes of the method: {fixed, k-fold} × {patient, sample}.
    pub fn all(k: usize) -> Vec<Regime> {
        let mut out = Vec::new();
        for granularity in [Granularity::PatientLevel, Granularity::SampleLevel] {
            for strategy in [Strategy::Fixed, Strategy::KFold { k }] {
                out.push(Regime::new(strategy, granularity));
            }
        }
        out
    }

    /// Directory-safe name, e.g. `kfold-5_patient_level`.
    pub fn name(&self) -> String {
        format!("{}_{}", self.strategy, self.granularity)
    }
}

/// A labelled out-of-distribution file, remapped onto the training taxonomy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodFile {
    pub path: PathBuf,
    pub taxonomy: Taxonomy,
    pub label_map: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated data. The in-distribution test set holds extra samples of
    /// the training patients; the out-of-distribution set holds patients
    /// never seen in training.
    Synthetic {
        spec: SyntheticSpec,
        #[serde(default = "default_test_samples")]
        test_samples_per_patient: usize,
        #[serde(default = "default_fresh_patients")]
        fresh_patients: usize,
    },
    /// A dataset CSV whose `test`-tagged rows form the in-distribution test.
    File {
        path: PathBuf,
        taxonomy: Taxonomy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ood: Option<OodFile>,
    },
}

fn default_test_samples() -> usize {
    2
}

fn default_fresh_patients() -> usize {
    100
}

/// The resolved data of an experiment.
#[derive(Clone, Debug)]
pub struct ExperimentData {
    pub dataset: Dataset,
    pub ood: Option<Dataset>,
}

impl DatasetSource {
    pub fn resolve(&self) -> Result<ExperimentData> {
        match self {
            DatasetSource::Synthetic {
                spec,
                test_samples_per_patient,
                fresh_patients,
            } => {
                let bench = generate_benchmark(spec, *test_samples_per_patient, *fresh_patients)?;
                let ood = (*fresh_patients > 0).then_some(bench.fresh);
                Ok(ExperimentData {
                    dataset: bench.dataset,
                    ood,
                })
            }
            DatasetSource::File {
                path,
                taxonomy,
                ood,
            } => {
                let dataset = load_dataset(path, &DatasetSchema::new(taxonomy.clone()))?;
                let ood = match ood {
                    Some(o) => {
                        let raw = load_dataset(&o.path, &DatasetSchema::new(o.taxonomy.clone()))?;
                        let map = LabelMap::load(&o.label_map)?;
                        if map.target() != taxonomy {
                            return Err(Error::invalid(
                                "ood label_map",
                                "its target taxonomy must equal the training taxonomy",
                            ));
                        }
                        Some(remap_labels(&raw, &map)?)
                    }
                    None => None,
                };
                Ok(ExperimentData { dataset, ood })
            }
        }
    }

    fn set_seed(&mut self, seed: u64) {
        if let DatasetSource::Synthetic { spec, .. } = self {
            spec.seed = seed;
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSource::File { path, ood, .. } = self {
            *path = base.join(&*path);
            if let Some(o) = ood {
                o.path = base.join(&o.path);
                o.label_map = base.join(&o.label_map);
            }
        }
    }
}

fn default_fraction() -> f64 {
    0.8
}

fn default_n_models() -> usize {
    5
}

fn default_seeds() -> Vec<u64> {
    (1..=5).collect()
}

fn default_base_train() -> TrainConfig {
    TrainConfig::base_default()
}

fn default_meta_train() -> TrainConfig {
    TrainConfig::meta_default()
}

fn default_variants() -> Vec<MetaVariant> {
    MetaVariant::all()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub id: String,
    pub dataset: DatasetSource,
    pub regimes: Vec<Regime>,
    #[serde(default = "default_fraction")]
    pub base_fraction: f64,
    #[serde(default = "default_n_models")]
    pub n_base_models: usize,
    #[serde(default)]
    pub split_seed: u64,
    /// Hidden widths of the base networks; input and output widths follow
    /// from the data.
    pub base_hidden: Vec<usize>,
    #[serde(default)]
    pub metadata_policy: MetadataPolicy,
    #[serde(default = "default_base_train")]
    pub base_train: TrainConfig,
    #[serde(default = "default_variants")]
    pub meta_variants: Vec<MetaVariant>,
    #[serde(default = "default_meta_train")]
    pub meta_train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub meta_seeds: Vec<u64>,
    /// Train base models and meta seeds on the rayon pool. Results do not
    /// depend on it.
    #[serde(default)]
    pub parallel: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Also write every trained meta-model to the output directory.
    #[serde(default)]
    pub persist_meta_models: bool,
}

impl ExperimentConfig {
    /// The synthetic benchmark: reference data, all four regimes, five
    /// base networks `[32, 64, 4]` trained at lr 1e-2 for 50 epochs, all
    /// four meta variants over seeds 1..5 with the default meta training
    /// configuration.
    pub fn reference(seed: u64) -> Self {
        ExperimentConfig {
            id: format!("reference-{seed}"),
            dataset: DatasetSource::Synthetic {
                spec: SyntheticSpec::reference(seed),
                test_samples_per_patient: default_test_samples(),
                fresh_patients: default_fresh_patients(),
            },
            regimes: Regime::all(5),
            base_fraction: 0.8,
            n_base_models: 5,
            split_seed: seed,
            base_hidden: vec![64],
            metadata_policy: MetadataPolicy::Ignore,
            base_train: TrainConfig {
                lr_max: 1e-2,
                ..TrainConfig::base_default()
            },
            meta_variants: MetaVariant::all(),
            meta_train: TrainConfig::meta_default(),
            meta_seeds: default_seeds(),
            parallel: false,
            output_dir: None,
            persist_meta_models: false,
        }
    }

    pub fn with_variants(mut self, kinds: &[MetaKind]) -> Self {
        self.meta_variants = kinds.iter().map(|&k| MetaVariant::new(k)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::invalid("regimes", "need at least one regime"));
        }
        if !(self.base_fraction > 0.0 && self.base_fraction < 1.0) {
            return Err(Error::invalid("base_fraction", "must lie in (0, 1)"));
        }
        if self.n_base_models == 0 {
            return Err(Error::invalid("n_base_models", "must be at least 1"));
        }
        for r in &self.regimes {
            if let Strategy::KFold { k } = r.strategy {
                if k != self.n_base_models {
                    return Err(Error::invalid(
                        "n_base_models",
                        format!(
                            "k-fold with k = {k} trains {k} models, but n_base_models = {}",
                            self.n_base_models
                        ),
                    ));
                }
            }
        }
        for (i, v) in self.meta_variants.iter().enumerate() {
            if self.meta_variants[..i].contains(v) {
                return Err(Error::invalid(
                    "meta_variants",
                    format!("{} listed twice", v.kind),
                ));
            }
        }
        if self.meta_seeds.is_empty() {
            return Err(Error::invalid("meta_seeds", "must be non-empty"));
        }
        if self.base_hidden.contains(&0) {
            return Err(Error::invalid("base_hidden", "widths must be positive"));
        }
        self.base_train.validate()?;
        self.meta_train.validate()?;
        if let DatasetSource::Synthetic { spec, .. } = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    /// Reads a config; relative dataset paths are taken relative to the
    /// config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.dataset.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Replaces the data and split seeds.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.set_seed(seed);
        self.split_seed = seed;
        self
    }

    /// Applies `STACKLAB_SEED` when set. Returns the seed that was applied.
    pub fn apply_seed_env(&mut self) -> Result<Option<u64>> {
        let Ok(raw) = std::env::var(SEED_ENV) else {
            return Ok(None);
        };
        let seed: u64 = raw
            .trim()
            .parse()
            .map_err(|_| Error::invalid(SEED_ENV, format!("{raw:?} is not an unsigned integer")))?;
        log::info!("{SEED_ENV}={seed} overrides the data and split seeds");
        *self = self.clone().with_seed(seed);
        Ok(Some(seed))
    }

    /// The config as echoed in reports: execution-only settings cleared.
    pub(crate) fn echo(&self) -> Self {
        ExperimentConfig {
            parallel: false,
            output_dir: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::reference(1);
        cfg.validate().unwrap();
        let back: ExperimentConfig = serde_json::from_str(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.regimes.len(), 4);
    }

    #[test]
    fn kfold_needs_matching_model_count() {
        let mut cfg = ExperimentConfig::reference(1);
        cfg.n_base_models = 4;
        assert!(cfg.validate().is_err());
        cfg.regimes = vec![Regime::new(Strategy::Fixed, Granularity::SampleLevel)];
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_seeds_are_rejected() {
        let mut cfg = ExperimentConfig::reference(1);
        cfg.meta_seeds.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn defaults_fill_a_minimal_config() {
        let json = r#"{
            "id": "mini",
            "dataset": {"source": "synthetic", "spec": {
                "n_patients": 10, "samples_per_patient": [2, 3], "class_priors": [0.5, 0.5],
                "feature_dim": 4, "class_separation": 2.0, "patient_effect_std": 1.0,
                "noise_std": 1.0, "seed": 3}},
            "regimes": [{"strategy": "kfold-5", "granularity": "sample_level"}],
            "base_hidden": [8]
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.meta_seeds, vec![1, 2, 3, 4, 5]);
        assert_eq!(cfg.meta_train.epochs, 10);
        assert_eq!(cfg.meta_variants.len(), 4);
        assert_eq!(cfg.base_fraction, 0.8);
    }

    #[test]
    fn seed_override_touches_data_and_split_only() {
        let cfg = ExperimentConfig::reference(1).with_seed(9);
        assert_eq!(cfg.split_seed, 9);
        let DatasetSource::Synthetic { spec, .. } = &cfg.dataset else {
            unreachable!()
        };
        assert_eq!(spec.seed, 9);
        assert_eq!(cfg.meta_seeds, vec![1, 2, 3, 4, 5]);
    }
}
