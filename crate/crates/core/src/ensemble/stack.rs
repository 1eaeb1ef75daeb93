use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::learner::{predict_logits, TrainedModel};
use crate::linalg::{LogitMatrix, Matrix};

/// Base-model logits side by side: columns `m·C .. m·C + C` hold model
/// `model_ids[m]`, row `i` belongs to `sample_ids[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackedLogits {
    pub matrix: Matrix,
    pub classes: usize,
    pub model_ids: Vec<usize>,
    pub sample_ids: Vec<String>,
}

impl StackedLogits {
    pub fn new(
        matrix: Matrix,
        classes: usize,
        model_ids: Vec<usize>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if classes == 0 || model_ids.is_empty() {
            return Err(Error::invalid(
                "stack",
                "need at least one model and one class",
            ));
        }
        if matrix.cols() != classes * model_ids.len() {
            return Err(Error::dims(
                "stack columns",
                classes * model_ids.len(),
                matrix.cols(),
            ));
        }
        if matrix.rows() != sample_ids.len() {
            return Err(Error::dims("stack rows", sample_ids.len(), matrix.rows()));
        }
        if !matrix.all_finite() {
            return Err(Error::invalid("stack", "contains non-finite logits"));
        }
        Ok(StackedLogits {
            matrix,
            classes,
            model_ids,
            sample_ids,
        })
    }

    pub fn n_models(&self) -> usize {
        self.model_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    /// The logits of the model at position `m`.
    pub fn block(&self, m: usize) -> LogitMatrix {
        self.matrix.column_block(m * self.classes, self.classes)
    }

    /// Long form: one row per (sample, model), samples in stack order.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sample_id".to_string(), "model_id".to_string()];
        header.extend((0..self.classes).map(|c| format!("logit_{c}")));
        w.write_record(&header)?;
        for (i, id) in self.sample_ids.iter().enumerate() {
            let row = self.matrix.row(i);
            for (m, model_id) in self.model_ids.iter().enumerate() {
                let mut rec = vec![id.clone(), model_id.to_string()];
                rec.extend(
                    row[m * self.classes..(m + 1) * self.classes]
                        .iter()
                        .map(f64::to_string),
                );
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::file("<stack>", e))?;
        Ok(())
    }

    /// Reads the long form back; blocks are ordered by ascending model id and
    /// rows by first appearance of each sample id.
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 3 || &header[0] != "sample_id" || &header[1] != "model_id" {
            return Err(Error::Parse {
                row: 1,
                message: "expected header sample_id,model_id,logit_0,...".into(),
            });
        }
        let classes = header.len() - 2;
        let mut sample_ids: Vec<String> = Vec::new();
        let mut sample_pos: BTreeMap<String, usize> = BTreeMap::new();
        let mut by_model: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
        for (i, rec) in r.records().enumerate() {
            let row = i + 2;
            let rec = rec?;
            let parse_err = |message: String| Error::Parse { row, message };
            let sid = rec[0].to_string();
            let mid: usize = rec[1]
                .parse()
                .map_err(|_| parse_err(format!("bad model_id {:?}", &rec[1])))?;
            let logits = rec
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| parse_err(format!("bad logit {v:?}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            let pos = *sample_pos.entry(sid.clone()).or_insert_with(|| {
                sample_ids.push(sid.clone());
                sample_ids.len() - 1
            });
            if by_model
                .entry(mid)
                .or_default()
                .insert(pos, logits)
                .is_some()
            {
                return Err(parse_err(format!(
                    "duplicate row for sample {sid:?}, model {mid}"
                )));
            }
        }
        let n = sample_ids.len();
        let m = by_model.len();
        let mut matrix = Matrix::zeros(n, m * classes);
        for (b, (mid, rows)) in by_model.iter().enumerate() {
            if rows.len() != n {
                return Err(Error::invalid(
                    "stack",
                    format!("model {mid} covers {} of {n} samples", rows.len()),
                ));
            }
            for (&i, logits) in rows {
                matrix.row_mut(i)[b * classes..(b + 1) * classes].copy_from_slice(logits);
            }
        }
        StackedLogits::new(matrix, classes, by_model.into_keys().collect(), sample_ids)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Runs every model over `records` and concatenates the logits in the given
/// model order. A model without an id in its provenance is numbered by its
/// 1-based position.
pub fn extract_stacked(
    models: &[&TrainedModel],
    records: &[&SampleRecord],
) -> Result<StackedLogits> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("models", "need at least one base model"))?;
    if records.is_empty() {
        return Err(Error::invalid("records", "need at least one record"));
    }
    let classes = first.classes();
    for m in models {
        if m.classes() != classes {
            return Err(Error::dims("base model classes", classes, m.classes()));
        }
        if m.spec.metadata_policy != first.spec.metadata_policy {
            return Err(Error::invalid("base models", "metadata policies differ"));
        }
    }
    let blocks = models
        .iter()
        .map(|m| predict_logits(m, records))
        .collect::<Result<Vec<_>>>()?;
    let mut matrix = blocks[0].clone();
    for b in &blocks[1..] {
        matrix = matrix.hconcat(b)?;
    }
    let model_ids = models
        .iter()
        .enumerate()
        .map(|(i, m)| m.provenance.model_id.unwrap_or(i + 1))
        .collect();
    let sample_ids = records.iter().map(|r| r.sample_id.clone()).collect();
    StackedLogits::new(matrix, classes, model_ids, sample_ids)
}

/// Average of the raw base-model logits. Each cell is computed from its
/// sorted values as `min + Σ(v − min) / M`, which is exact when all models
/// agree and independent of the model order.
pub fn mean_ensemble(stack: &StackedLogits) -> LogitMatrix {
    let c = stack.classes;
    let m = stack.n_models();
    let mut out = Matrix::zeros(stack.n_samples(), c);
    let mut values = vec![0.0; m];
    for i in 0..stack.n_samples() {
        let row = stack.matrix.row(i);
        for (k, dst) in out.row_mut(i).iter_mut().enumerate() {
            for (b, v) in values.iter_mut().enumerate() {
                *v = row[b * c + k];
            }
            values.sort_by(f64::total_cmp);
            let low = values[0];
            *dst = low + values.iter().map(|v| v - low).sum::<f64>() / m as f64;
        }
    }
    out
}
