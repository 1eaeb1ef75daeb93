use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetadataPolicy {
    #[default]
    Ignore,
    /// One-hot block per categorical field appended after the raw features.
    OneHotAppend,
}

/// Turns records into network input rows.
///
/// With [`MetadataPolicy::OneHotAppend`], fields and their categories are
/// ordered by first appearance in the records the encoder was fitted on. A
/// missing field or a category unseen at fit time encodes as an all-zero
/// block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub policy: MetadataPolicy,
    pub feature_dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<(String, Vec<String>)>,
}

impl FeatureEncoder {
    pub fn raw(feature_dim: usize) -> Self {
        FeatureEncoder {
            policy: MetadataPolicy::Ignore,
            feature_dim,
            fields: Vec::new(),
        }
    }

    pub fn fit<'a>(
        records: impl IntoIterator<Item = &'a SampleRecord>,
        feature_dim: usize,
        policy: MetadataPolicy,
    ) -> Self {
        let mut fields: Vec<(String, Vec<String>)> = Vec::new();
        if policy == MetadataPolicy::OneHotAppend {
            for r in records {
                for (key, value) in &r.metadata {
                    let idx = match fields.iter().position(|(k, _)| k == key) {
                        Some(i) => i,
                        None => {
                            fields.push((key.clone(), Vec::new()));
                            fields.len() - 1
                        }
                    };
                    let cats = &mut fields[idx].1;
                    if !cats.contains(value) {
                        cats.push(value.clone());
                    }
                }
            }
        }
        FeatureEncoder {
            policy,
            feature_dim,
            fields,
        }
    }

    pub fn width(&self) -> usize {
        self.feature_dim + self.fields.iter().map(|(_, c)| c.len()).sum::<usize>()
    }

    pub fn encode_into(&self, r: &SampleRecord, out: &mut Vec<f64>) -> Result<()> {
        if r.features.len() != self.feature_dim {
            return Err(Error::dims(
                format!("features of sample {:?}", r.sample_id),
                self.feature_dim,
                r.features.len(),
            ));
        }
        out.extend_from_slice(&r.features);
        for (key, cats) in &self.fields {
            let hit = r
                .metadata
                .get(key)
                .and_then(|v| cats.iter().position(|c| c == v));
            out.extend((0..cats.len()).map(|i| if Some(i) == hit { 1.0 } else { 0.0 }));
        }
        Ok(())
    }

    pub fn encode(&self, r: &SampleRecord) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.width());
        self.encode_into(r, &mut out)?;
        Ok(out)
    }

    pub fn encode_all(&self, records: &[&SampleRecord]) -> Result<Matrix> {
        let mut data = Vec::with_capacity(records.len() * self.width());
        for r in records {
            self.encode_into(r, &mut data)?;
        }
        Matrix::from_vec(records.len(), self.width(), data)
    }
}
