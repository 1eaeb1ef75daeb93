use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, SampleRecord, Taxonomy};
use crate::error::{Error, Result};

/// Source class name to target class name, plus the target taxonomy.
///
/// Names are the join key; ids are renumbered by the target taxonomy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelMapFile", into = "LabelMapFile")]
pub struct LabelMap {
    entries: BTreeMap<String, String>,
    target: Taxonomy,
}

/// On-disk form: `{"entries": {src: tgt}, "target": [names...], "normal": name}`.
#[derive(Serialize, Deserialize)]
struct LabelMapFile {
    entries: BTreeMap<String, String>,
    target: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normal: Option<String>,
}

impl TryFrom<LabelMapFile> for LabelMap {
    type Error = Error;

    fn try_from(f: LabelMapFile) -> Result<Self> {
        let normal_id = match &f.normal {
            None => 0,
            Some(n) => f.target.iter().position(|c| c == n).ok_or_else(|| {
                Error::invalid(
                    "label map",
                    format!("normal class {n:?} is not a target class"),
                )
            })?,
        };
        LabelMap::new(f.entries, Taxonomy::new(f.target, normal_id)?)
    }
}

impl From<LabelMap> for LabelMapFile {
    fn from(m: LabelMap) -> Self {
        let normal = m.target.name(m.target.normal_id()).map(str::to_string);
        LabelMapFile {
            entries: m.entries,
            target: m.target.names().to_vec(),
            normal,
        }
    }
}

impl LabelMap {
    pub fn new(entries: BTreeMap<String, String>, target: Taxonomy) -> Result<Self> {
        if let Some((src, tgt)) = entries.iter().find(|(_, t)| target.id_of(t).is_none()) {
            return Err(Error::invalid(
                "label map",
                format!("{src:?} maps to {tgt:?}, which is not in the target taxonomy"),
            ));
        }
        Ok(LabelMap { entries, target })
    }

    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
        target: Taxonomy,
    ) -> Result<Self> {
        Self::new(
            pairs
                .into_iter()
                .map(|(s, t)| (s.to_string(), t.to_string()))
                .collect(),
            target,
        )
    }

    /// Maps every class of `taxonomy` onto itself.
    pub fn identity(taxonomy: &Taxonomy) -> Self {
        let entries = taxonomy
            .names()
            .iter()
            .map(|n| (n.clone(), n.clone()))
            .collect();
        LabelMap {
            entries,
            target: taxonomy.clone(),
        }
    }

    /// The seven-class pediatric taxonomy folded into the four respiratory
    /// classes: both crackle grades become `crackle`, stridor and rhonchi
    /// become `wheeze`.
    pub fn seven_to_four() -> Self {
        LabelMap::from_pairs(
            [
                ("normal", "normal"),
                ("coarse crackle", "crackle"),
                ("fine crackle", "crackle"),
                ("wheeze", "wheeze"),
                ("stridor", "wheeze"),
                ("rhonchi", "wheeze"),
                ("both", "both"),
            ],
            Taxonomy::respiratory(),
        )
        .expect("static map")
    }

    /// Wheeze against everything else. `other` is the normal class.
    pub fn wheeze_vs_other(source: &Taxonomy) -> Self {
        let target = Taxonomy::new(["other", "wheeze"], 0).expect("static taxonomy");
        let entries = source
            .names()
            .iter()
            .map(|n| {
                let t = if n == "wheeze" { "wheeze" } else { "other" };
                (n.clone(), t.to_string())
            })
            .collect();
        LabelMap { entries, target }
    }

    pub fn target(&self) -> &Taxonomy {
        &self.target
    }

    pub fn get(&self, source: &str) -> Option<&str> {
        self.entries.get(source).map(String::as_str)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Relabels every sample through `map`. Features, ids, patients and
/// metadata are carried over untouched.
pub fn remap_labels(ds: &Dataset, map: &LabelMap) -> Result<Dataset> {
    let source = ds.taxonomy();
    // Resolve per source id once; fail on the first unmapped class actually present.
    let mut lookup: Vec<Option<usize>> = vec![None; source.len()];
    for (id, name) in source.names().iter().enumerate() {
        if let Some(t) = map.get(name) {
            lookup[id] = map.target.id_of(t);
        }
    }
    let samples = ds
        .samples()
        .iter()
        .map(|s| {
            let label = lookup[s.label].ok_or_else(|| {
                Error::UnmappedLabel(source.name(s.label).unwrap_or_default().to_string())
            })?;
            Ok(SampleRecord { label, ..s.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::with_metadata_columns(
        map.target.clone(),
        ds.feature_dim(),
        ds.metadata_columns().to_vec(),
        samples,
    )
}
