//! Base/meta partitioning under fixed and k-fold strategies, at patient or
//! sample granularity.
//!
//! Both strategies share one base/meta division: a k-fold plan is the fixed
//! plan for the same `(dataset, fraction, granularity, seed)` with its base
//! portion cut into folds, so the meta set never depends on the strategy.

mod audit;
mod build;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SampleRecord};
use crate::error::{Error, Result};

pub use audit::{validate_plan, PlanAudit, Violation, ViolationKind};
pub use build::{split_fixed, split_kfold, FRACTION_TOLERANCE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Whole patients are assigned; no patient straddles partitions.
    PatientLevel,
    /// Individual samples are assigned regardless of patient.
    SampleLevel,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::PatientLevel => "patient_level",
            Granularity::SampleLevel => "sample_level",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patient" | "patient_level" | "p" => Ok(Granularity::PatientLevel),
            "sample" | "sample_level" | "s" => Ok(Granularity::SampleLevel),
            _ => Err(Error::invalid(
                "granularity",
                format!("{s:?} is not patient or sample"),
            )),
        }
    }
}

/// Partitioning strategy. Serialized as `"fixed"` or `"kfold-<k>"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Fixed,
    KFold { k: usize },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Fixed => f.write_str("fixed"),
            Strategy::KFold { k } => write!(f, "kfold-{k}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fixed" {
            return Ok(Strategy::Fixed);
        }
        let k = s
            .strip_prefix("kfold-")
            .or_else(|| s.strip_prefix("kfold"))
            .and_then(|k| k.parse().ok())
            .ok_or_else(|| {
                Error::invalid("strategy", format!("{s:?} is not fixed or kfold-<k>"))
            })?;
        Ok(Strategy::KFold { k })
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which base model trains on which folds. Fold indices are 1-based.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub model: usize,
    pub train_folds: Vec<usize>,
    pub val_fold: usize,
}

/// Assignment of sample ids to the meta set and either one base set (fixed)
/// or `k` folds (k-fold). All id lists are sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlanFile", into = "PlanFile")]
pub struct SplitPlan {
    pub granularity: Granularity,
    pub strategy: Strategy,
    pub seed: u64,
    pub base_fraction: f64,
    pub dataset_fingerprint: String,
    pub meta: Vec<String>,
    /// Fixed strategy only.
    pub base: Vec<String>,
    /// k-fold strategy only.
    pub folds: Vec<Vec<String>>,
    pub assignments: Vec<FoldAssignment>,
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    granularity: Granularity,
    strategy: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    seed: u64,
    base_fraction: f64,
    dataset_fingerprint: String,
    meta: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    folds: Option<Vec<Vec<String>>>,
    #[serde(default)]
    assignments: Vec<FoldAssignment>,
}

impl From<SplitPlan> for PlanFile {
    fn from(p: SplitPlan) -> Self {
        let (strategy, k, base, folds) = match p.strategy {
            Strategy::Fixed => ("fixed".to_string(), None, Some(p.base), None),
            Strategy::KFold { k } => ("kfold".to_string(), Some(k), None, Some(p.folds)),
        };
        PlanFile {
            granularity: p.granularity,
            strategy,
            k,
            seed: p.seed,
            base_fraction: p.base_fraction,
            dataset_fingerprint: p.dataset_fingerprint,
            meta: p.meta,
            base,
            folds,
            assignments: p.assignments,
        }
    }
}

impl TryFrom<PlanFile> for SplitPlan {
    type Error = Error;

    fn try_from(f: PlanFile) -> Result<Self> {
        let strategy = match (f.strategy.as_str(), f.k) {
            ("fixed", None) => Strategy::Fixed,
            ("kfold", Some(k)) => Strategy::KFold { k },
            (s, k) => {
                return Err(Error::invalid(
                    "plan strategy",
                    format!("{s:?} with k = {k:?}"),
                ))
            }
        };
        Ok(SplitPlan {
            granularity: f.granularity,
            strategy,
            seed: f.seed,
            base_fraction: f.base_fraction,
            dataset_fingerprint: f.dataset_fingerprint,
            meta: f.meta,
            base: f.base.unwrap_or_default(),
            folds: f.folds.unwrap_or_default(),
            assignments: f.assignments,
        })
    }
}

impl SplitPlan {
    /// Everything the base models may see: the base set, or the union of all
    /// folds.
    pub fn base_portion(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = match self.strategy {
            Strategy::Fixed => self.base.iter().map(String::as_str).collect(),
            Strategy::KFold { .. } => self.folds.iter().flatten().map(String::as_str).collect(),
        };
        ids.sort_unstable();
        ids
    }

    /// Number of base models the plan provides distinct training sets for;
    /// `None` for fixed plans, where every model shares the base set.
    pub fn n_models(&self) -> Option<usize> {
        match self.strategy {
            Strategy::Fixed => None,
            Strategy::KFold { k } => Some(k),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn ids_for(&self, selector: Selector) -> Result<Vec<&str>> {
        let invalid = |reason: String| Error::InvalidSelector {
            selector: selector.to_string(),
            reason,
        };
        let fold = |i: usize| -> Result<&Vec<String>> {
            if i == 0 || i > self.folds.len() {
                return Err(invalid(format!(
                    "fold index must be in 1..={}",
                    self.folds.len()
                )));
            }
            Ok(&self.folds[i - 1])
        };
        let assignment = |m: usize| -> Result<&FoldAssignment> {
            self.assignments
                .iter()
                .find(|a| a.model == m)
                .ok_or_else(|| invalid(format!("no model {m} in a {}-fold plan", self.folds.len())))
        };
        match (selector, self.strategy) {
            (Selector::Meta, _) => Ok(as_strs(&self.meta)),
            (Selector::Base, _) => Ok(self.base_portion()),
            (Selector::ModelTrain(m), Strategy::Fixed) if m >= 1 => Ok(as_strs(&self.base)),
            (
                Selector::Fold(_) | Selector::ModelVal(_) | Selector::ModelTrain(_),
                Strategy::Fixed,
            ) => Err(invalid("fixed plans have no folds".into())),
            (Selector::Fold(i), Strategy::KFold { .. }) => Ok(as_strs(fold(i)?)),
            (Selector::ModelVal(m), Strategy::KFold { .. }) => {
                Ok(as_strs(fold(assignment(m)?.val_fold)?))
            }
            (Selector::ModelTrain(m), Strategy::KFold { .. }) => {
                let mut ids = Vec::new();
                for &f in &assignment(m)?.train_folds {
                    ids.extend(fold(f)?.iter().map(String::as_str));
                }
                Ok(ids)
            }
        }
    }
}

fn as_strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

/// Names a partition of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Selector {
    Meta,
    Base,
    Fold(usize),
    ModelTrain(usize),
    ModelVal(usize),
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::Meta => f.write_str("meta"),
            Selector::Base => f.write_str("base"),
            Selector::Fold(i) => write!(f, "fold({i})"),
            Selector::ModelTrain(m) => write!(f, "model_train({m})"),
            Selector::ModelVal(m) => write!(f, "model_val({m})"),
        }
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSelector {
            selector: s.to_string(),
            reason: "expected meta, base, fold(i), model_train(m) or model_val(m)".into(),
        };
        match s {
            "meta" => return Ok(Selector::Meta),
            "base" => return Ok(Selector::Base),
            _ => {}
        }
        let (name, arg) = s
            .strip_suffix(')')
            .and_then(|s| s.split_once('('))
            .or_else(|| s.split_once(':'))
            .ok_or_else(bad)?;
        let n: usize = arg.trim().parse().map_err(|_| bad())?;
        match name {
            "fold" => Ok(Selector::Fold(n)),
            "model_train" => Ok(Selector::ModelTrain(n)),
            "model_val" => Ok(Selector::ModelVal(n)),
            _ => Err(bad()),
        }
    }
}

/// Records of one partition, ordered by sample id.
pub fn materialize<'a>(
    plan: &SplitPlan,
    ds: &'a Dataset,
    selector: Selector,
) -> Result<Vec<&'a SampleRecord>> {
    let mut ids = plan.ids_for(selector)?;
    ids.sort_unstable();
    let index = ds.index();
    ids.into_iter()
        .map(|id| {
            index.get(id).map(|&i| &ds.samples()[i]).ok_or_else(|| {
                Error::invalid("plan", format!("sample {id:?} is not in the dataset"))
            })
        })
        .collect()
}
