//! Dataset model, CSV I/O, taxonomy remapping and synthetic generation.

mod io;
mod remap;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fnv1a;

pub use io::{load_dataset, save_dataset, DatasetSchema};
pub use remap::{remap_labels, LabelMap};
pub use synthetic::{
    class_means, generate_benchmark, generate_synthetic, SyntheticBenchmark, SyntheticSpec,
};

/// Ordered class list with one class designated as "normal".
///
/// Class ids are positions in the list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyRepr", into = "TaxonomyRepr")]
pub struct Taxonomy {
    classes: Vec<String>,
    normal_id: usize,
}

#[derive(Serialize, Deserialize)]
struct TaxonomyRepr {
    classes: Vec<String>,
    normal_id: usize,
}

impl TryFrom<TaxonomyRepr> for Taxonomy {
    type Error = Error;

    fn try_from(r: TaxonomyRepr) -> Result<Self> {
        Taxonomy::new(r.classes, r.normal_id)
    }
}

impl From<Taxonomy> for TaxonomyRepr {
    fn from(t: Taxonomy) -> Self {
        TaxonomyRepr {
            classes: t.classes,
            normal_id: t.normal_id,
        }
    }
}

impl Taxonomy {
    pub fn new<S: Into<String>>(
        classes: impl IntoIterator<Item = S>,
        normal_id: usize,
    ) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        if classes.is_empty() {
            return Err(Error::invalid("taxonomy", "at least one class is required"));
        }
        let mut seen = BTreeSet::new();
        for name in &classes {
            if name.trim().is_empty() {
                return Err(Error::invalid("taxonomy", "class names must be non-empty"));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(
                    "taxonomy",
                    format!("duplicate class name {name:?}"),
                ));
            }
        }
        if normal_id >= classes.len() {
            return Err(Error::invalid(
                "taxonomy",
                format!("normal_id {normal_id} outside 0..{}", classes.len()),
            ));
        }
        Ok(Taxonomy { classes, normal_id })
    }

    /// `{0: normal, 1: crackle, 2: wheeze, 3: both}`.
    pub fn respiratory() -> Self {
        Taxonomy::new(["normal", "crackle", "wheeze", "both"], 0).expect("static taxonomy")
    }

    /// `class0 .. class{n-1}` with class 0 as normal.
    pub fn generic(n: usize) -> Result<Self> {
        Taxonomy::new((0..n).map(|i| format!("class{i}")), 0)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn normal_id(&self) -> usize {
        self.normal_id
    }

    pub fn names(&self) -> &[String] {
        &self.classes
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.classes.get(id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub(crate) fn unknown_label(&self, name: &str) -> Error {
        Error::UnknownLabel {
            name: name.to_string(),
            valid: self.classes.join(", "),
        }
    }
}

/// Official train/test tag carried through from the source corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OfficialPartition {
    Train,
    Test,
}

impl OfficialPartition {
    pub fn as_str(self) -> &'static str {
        match self {
            OfficialPartition::Train => "train",
            OfficialPartition::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub patient_id: String,
    pub label: usize,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub official_partition: Option<OfficialPartition>,
}

/// An immutable, validated collection of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    taxonomy: Taxonomy,
    feature_dim: usize,
    metadata_columns: Vec<String>,
    samples: Vec<SampleRecord>,
}

impl Dataset {
    /// Validates and builds a dataset. Metadata columns are ordered by first
    /// appearance across the samples.
    pub fn new(taxonomy: Taxonomy, feature_dim: usize, samples: Vec<SampleRecord>) -> Result<Self> {
        let mut columns: Vec<String> = Vec::new();
        for s in &samples {
            for key in s.metadata.keys() {
                if !columns.contains(key) {
                    columns.push(key.clone());
                }
            }
        }
        Self::with_metadata_columns(taxonomy, feature_dim, columns, samples)
    }

    pub fn with_metadata_columns(
        taxonomy: Taxonomy,
        feature_dim: usize,
        metadata_columns: Vec<String>,
        samples: Vec<SampleRecord>,
    ) -> Result<Self> {
        let mut first_row: HashMap<&str, usize> = HashMap::with_capacity(samples.len());
        for (row, s) in samples.iter().enumerate() {
            if s.sample_id.is_empty() {
                return Err(Error::Parse {
                    row: row + 1,
                    message: "empty sample_id".into(),
                });
            }
            if let Some(&first) = first_row.get(s.sample_id.as_str()) {
                return Err(Error::DuplicateSample {
                    id: s.sample_id.clone(),
                    first: first + 1,
                    second: row + 1,
                });
            }
            first_row.insert(&s.sample_id, row);
            if s.patient_id.is_empty() {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("sample {:?} has an empty patient_id", s.sample_id),
                });
            }
            if s.label >= taxonomy.len() {
                return Err(Error::invalid(
                    "label",
                    format!(
                        "sample {:?} has label id {} outside 0..{}",
                        s.sample_id,
                        s.label,
                        taxonomy.len()
                    ),
                ));
            }
            if s.features.len() != feature_dim {
                return Err(Error::dims(
                    format!("features of sample {:?}", s.sample_id),
                    feature_dim,
                    s.features.len(),
                ));
            }
            if let Some(j) = s.features.iter().position(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    row: row + 1,
                    message: format!("feature f{j} of sample {:?} is not finite", s.sample_id),
                });
            }
            if let Some(key) = s.metadata.keys().find(|k| !metadata_columns.contains(k)) {
                return Err(Error::invalid(
                    "metadata",
                    format!("sample {:?} carries undeclared field {key:?}", s.sample_id),
                ));
            }
        }
        Ok(Dataset {
            taxonomy,
            feature_dim,
            metadata_columns,
            samples,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn metadata_columns(&self) -> &[String] {
        &self.metadata_columns
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, sample_id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Index from sample id to position.
    pub fn index(&self) -> HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.sample_id.as_str(), i))
            .collect()
    }

    /// Samples eligible for base/meta partitioning: those tagged `train`, or
    /// every sample when the dataset carries no train tags.
    pub fn training_pool(&self) -> Vec<&SampleRecord> {
        let tagged = self
            .samples
            .iter()
            .any(|s| s.official_partition == Some(OfficialPartition::Train));
        if tagged {
            self.samples
                .iter()
                .filter(|s| s.official_partition == Some(OfficialPartition::Train))
                .collect()
        } else {
            self.samples
                .iter()
                .filter(|s| s.official_partition.is_none())
                .collect()
        }
    }

    /// Samples tagged `test`, in file order.
    pub fn official_test(&self) -> Vec<&SampleRecord> {
        self.samples
            .iter()
            .filter(|s| s.official_partition == Some(OfficialPartition::Test))
            .collect()
    }

    /// FNV-1a over the `(sample_id, patient_id, label)` triples sorted by
    /// sample id. Fields are separated by 0x1f and triples terminated by 0x1e;
    /// the label is its decimal class id.
    pub fn fingerprint(&self) -> String {
        let mut triples: Vec<(&str, &str, usize)> = self
            .samples
            .iter()
            .map(|s| (s.sample_id.as_str(), s.patient_id.as_str(), s.label))
            .collect();
        triples.sort_unstable();
        let mut h = Fnv1a::new();
        for (sid, pid, label) in triples {
            h.update(sid.as_bytes());
            h.update(&[0x1f]);
            h.update(pid.as_bytes());
            h.update(&[0x1f]);
            h.update(label.to_string().as_bytes());
            h.update(&[0x1e]);
        }
        h.hex()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_samples: usize,
    pub n_patients: usize,
    pub class_counts: Vec<usize>,
    pub feature_dim: usize,
}

pub fn dataset_summary(ds: &Dataset) -> DatasetSummary {
    let mut class_counts = vec![0; ds.taxonomy.len()];
    let mut patients = BTreeSet::new();
    for s in &ds.samples {
        class_counts[s.label] += 1;
        patients.insert(s.patient_id.as_str());
    }
    DatasetSummary {
        n_samples: ds.samples.len(),
        n_patients: patients.len(),
        class_counts,
        feature_dim: ds.feature_dim,
    }
}
