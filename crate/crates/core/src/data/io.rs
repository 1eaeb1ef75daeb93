use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, OfficialPartition, SampleRecord, Taxonomy};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 4] = ["sample_id", "patient_id", "label", "split"];

/// Column declaration a dataset file must satisfy.
///
/// `metadata_columns` and `feature_dim` are checked when present and inferred
/// from the header otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub taxonomy: Taxonomy,
    #[serde(default)]
    pub metadata_columns: Option<Vec<String>>,
    #[serde(default)]
    pub feature_dim: Option<usize>,
}

impl DatasetSchema {
    pub fn new(taxonomy: Taxonomy) -> Self {
        DatasetSchema {
            taxonomy,
            metadata_columns: None,
            feature_dim: None,
        }
    }

    pub fn for_dataset(ds: &Dataset) -> Self {
        DatasetSchema {
            taxonomy: ds.taxonomy().clone(),
            metadata_columns: Some(ds.metadata_columns().to_vec()),
            feature_dim: Some(ds.feature_dim()),
        }
    }
}

fn is_feature_column(name: &str) -> bool {
    name.len() > 1 && name.starts_with('f') && name[1..].bytes().all(|b| b.is_ascii_digit())
}

struct Layout {
    metadata: Vec<String>,
    feature_dim: usize,
}

fn parse_header(header: &csv::StringRecord, schema: &DatasetSchema) -> Result<Layout> {
    let cols: Vec<&str> = header.iter().collect();
    for (i, expected) in FIXED_COLUMNS.iter().enumerate() {
        match cols.get(i) {
            Some(c) if c == expected => {}
            other => {
                return Err(Error::Parse {
                    row: 0,
                    message: format!(
                        "header column {} must be {expected:?}, found {:?}",
                        i + 1,
                        other.copied().unwrap_or("")
                    ),
                })
            }
        }
    }
    let rest = &cols[FIXED_COLUMNS.len()..];
    let first_feature = rest
        .iter()
        .position(|c| is_feature_column(c))
        .unwrap_or(rest.len());
    let metadata: Vec<String> = rest[..first_feature]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let features = &rest[first_feature..];
    for (j, c) in features.iter().enumerate() {
        if *c != format!("f{j}") {
            return Err(Error::Parse {
                row: 0,
                message: format!(
                    "feature columns must be f0..f{{d-1}} in order; found {c:?} at position {j}"
                ),
            });
        }
    }
    if let Some(expected) = &schema.metadata_columns {
        if *expected != metadata {
            return Err(Error::Parse {
                row: 0,
                message: format!("metadata columns {metadata:?} do not match schema {expected:?}"),
            });
        }
    }
    if let Some(d) = schema.feature_dim {
        if d != features.len() {
            return Err(Error::dims("feature columns", d, features.len()));
        }
    }
    Ok(Layout {
        metadata,
        feature_dim: features.len(),
    })
}

/// Reads a dataset CSV. Rows are numbered from 1 (the first data row) in
/// error messages.
pub fn load_dataset(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    read_dataset(file, schema)
}

pub(crate) fn read_dataset<R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let layout = parse_header(rdr.headers()?, schema)?;
    let taxonomy = &schema.taxonomy;
    let meta_start = FIXED_COLUMNS.len();
    let feat_start = meta_start + layout.metadata.len();

    let mut samples = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |j: usize| rec.get(j).unwrap_or("");
        let sample_id = field(0).to_string();
        if sample_id.is_empty() {
            return Err(Error::Parse {
                row,
                message: "missing sample_id".into(),
            });
        }
        let label_name = field(2);
        let label = taxonomy
            .id_of(label_name)
            .ok_or_else(|| taxonomy.unknown_label(label_name))?;
        let official_partition = match field(3) {
            "" => None,
            "train" => Some(OfficialPartition::Train),
            "test" => Some(OfficialPartition::Test),
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("split must be train, test or empty; found {other:?}"),
                })
            }
        };
        let mut metadata = BTreeMap::new();
        for (k, name) in layout.metadata.iter().enumerate() {
            let v = field(meta_start + k);
            if !v.is_empty() {
                metadata.insert(name.clone(), v.to_string());
            }
        }
        let mut features = Vec::with_capacity(layout.feature_dim);
        for j in 0..layout.feature_dim {
            let raw = field(feat_start + j);
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("feature f{j} {raw:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("feature f{j} is not finite ({raw})"),
                });
            }
            features.push(v);
        }
        samples.push(SampleRecord {
            sample_id,
            patient_id: field(1).to_string(),
            label,
            features,
            metadata,
            official_partition,
        });
    }
    Dataset::with_metadata_columns(
        taxonomy.clone(),
        layout.feature_dim,
        layout.metadata,
        samples,
    )
}

/// Writes a dataset CSV. Floats use the shortest representation that parses
/// back to the same value.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    write_dataset(ds, file)
}

pub(crate) fn write_dataset<W: std::io::Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(ds.metadata_columns().iter().cloned());
    header.extend((0..ds.feature_dim()).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    let taxonomy = ds.taxonomy();
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for s in ds.samples() {
        row.clear();
        row.push(s.sample_id.clone());
        row.push(s.patient_id.clone());
        row.push(taxonomy.name(s.label).unwrap_or_default().to_string());
        row.push(
            s.official_partition
                .map(|p| p.as_str())
                .unwrap_or("")
                .to_string(),
        );
        for col in ds.metadata_columns() {
            row.push(s.metadata.get(col).cloned().unwrap_or_default());
        }
        row.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::file("<dataset writer>", e))?;
    Ok(())
}
