use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::stack::StackedLogits;
use crate::data::SampleRecord;
use crate::error::{Error, Result};
use crate::fingerprint::fnv1a_hex;
use crate::learner::{fit, Architecture, FeatureEncoder, Network, TrainConfig};
use crate::linalg::{argmax, LogitMatrix, Matrix};
use crate::split::SplitPlan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetaKind {
    /// One ReLU layer over the stacked logits.
    #[serde(rename = "logit_1h")]
    LogitOneHidden,
    /// Two ReLU layers over the stacked logits.
    #[serde(rename = "logit_2h")]
    LogitTwoHidden,
    /// One ReLU layer over the encoded sample features; ignores the stack.
    #[serde(rename = "feature_only")]
    FeatureOnly,
    /// Feature embedding concatenated with a linear projection of the stack.
    #[serde(rename = "feature_logit_fusion")]
    Fusion,
}

impl MetaKind {
    pub const ALL: [MetaKind; 4] = [
        MetaKind::LogitOneHidden,
        MetaKind::LogitTwoHidden,
        MetaKind::FeatureOnly,
        MetaKind::Fusion,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetaKind::LogitOneHidden => "logit_1h",
            MetaKind::LogitTwoHidden => "logit_2h",
            MetaKind::FeatureOnly => "feature_only",
            MetaKind::Fusion => "feature_logit_fusion",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            MetaKind::LogitOneHidden => "1-Hidden",
            MetaKind::LogitTwoHidden => "2-Hidden",
            MetaKind::FeatureOnly => "Feature-only",
            MetaKind::Fusion => "Fusion",
        }
    }
}

impl fmt::Display for MetaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1h" | "logit_1h" => Ok(MetaKind::LogitOneHidden),
            "2h" | "logit_2h" => Ok(MetaKind::LogitTwoHidden),
            "feature" | "feature_only" => Ok(MetaKind::FeatureOnly),
            "fusion" | "feature_logit_fusion" => Ok(MetaKind::Fusion),
            _ => Err(Error::invalid(
                "meta variant",
                format!("{s:?} is not one of 1h, 2h, feature, fusion"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaVariant {
    pub kind: MetaKind,
    /// Hidden width of the logit and feature-only variants.
    #[serde(default = "MetaVariant::default_hidden")]
    pub hidden: usize,
    #[serde(default = "MetaVariant::default_embed")]
    pub embed_dim: usize,
    #[serde(default = "MetaVariant::default_proj")]
    pub proj_dim: usize,
}

impl MetaVariant {
    fn default_hidden() -> usize {
        512
    }

    fn default_embed() -> usize {
        1024
    }

    fn default_proj() -> usize {
        512
    }

    pub fn new(kind: MetaKind) -> Self {
        MetaVariant {
            kind,
            hidden: Self::default_hidden(),
            embed_dim: Self::default_embed(),
            proj_dim: Self::default_proj(),
        }
    }

    pub fn all() -> Vec<MetaVariant> {
        MetaKind::ALL.into_iter().map(MetaVariant::new).collect()
    }

    fn architecture(&self, n_models: usize, classes: usize, d_enc: usize) -> Architecture {
        let stack_dim = n_models * classes;
        match self.kind {
            MetaKind::LogitOneHidden => Architecture::Mlp {
                widths: vec![stack_dim, self.hidden, classes],
            },
            MetaKind::LogitTwoHidden => Architecture::Mlp {
                widths: vec![stack_dim, self.hidden, self.hidden, classes],
            },
            MetaKind::FeatureOnly => Architecture::Mlp {
                widths: vec![d_enc, self.hidden, classes],
            },
            MetaKind::Fusion => Architecture::Fusion {
                feature_dim: d_enc,
                stack_dim,
                embed_dim: self.embed_dim,
                proj_dim: self.proj_dim,
                classes,
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaProvenance {
    pub seed: u64,
    /// FNV-1a of the plan JSON the meta-model was trained under.
    pub plan_fingerprint: Option<String>,
    pub base_model_ids: Vec<usize>,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub variant: MetaVariant,
    pub n_models: usize,
    pub classes: usize,
    pub encoder: FeatureEncoder,
    pub params: Network,
    pub provenance: MetaProvenance,
}

/// A freshly initialized meta-model for `n_models` base models over
/// `classes` classes. `encoder` fixes how sample features are encoded for
/// the feature-only and fusion variants; the logit variants ignore it.
pub fn build_meta(
    variant: MetaVariant,
    n_models: usize,
    classes: usize,
    encoder: FeatureEncoder,
    seed: u64,
) -> Result<MetaModel> {
    if n_models == 0 || classes == 0 {
        return Err(Error::invalid(
            "meta dims",
            "need at least one model and one class",
        ));
    }
    if variant.hidden == 0 || variant.embed_dim == 0 || variant.proj_dim == 0 {
        return Err(Error::invalid(
            "meta variant",
            "dimensions must be positive",
        ));
    }
    let params = Network::init(
        variant.architecture(n_models, classes, encoder.width()),
        seed,
    )?;
    Ok(MetaModel {
        variant,
        n_models,
        classes,
        encoder,
        params,
        provenance: MetaProvenance {
            seed,
            ..MetaProvenance::default()
        },
    })
}

impl MetaModel {
    /// Width of the variant's declared input source.
    pub fn source_width(&self) -> usize {
        match self.variant.kind {
            MetaKind::LogitOneHidden | MetaKind::LogitTwoHidden => self.n_models * self.classes,
            MetaKind::FeatureOnly => self.encoder.width(),
            MetaKind::Fusion => self.encoder.width() + self.n_models * self.classes,
        }
    }

    fn inputs(&self, stack: &StackedLogits, records: &[&SampleRecord]) -> Result<Matrix> {
        if stack.classes != self.classes {
            return Err(Error::dims("stack classes", self.classes, stack.classes));
        }
        if stack.n_models() != self.n_models {
            return Err(Error::dims("stack models", self.n_models, stack.n_models()));
        }
        if records.len() != stack.n_samples() {
            return Err(Error::dims(
                "records vs stack rows",
                stack.n_samples(),
                records.len(),
            ));
        }
        if let Some((r, id)) = records
            .iter()
            .zip(&stack.sample_ids)
            .find(|(r, id)| r.sample_id != **id)
        {
            return Err(Error::invalid(
                "records",
                format!("record {:?} is aligned with stack row {id:?}", r.sample_id),
            ));
        }
        match self.variant.kind {
            MetaKind::LogitOneHidden | MetaKind::LogitTwoHidden => Ok(stack.matrix.clone()),
            MetaKind::FeatureOnly => self.encoder.encode_all(records),
            MetaKind::Fusion => self.encoder.encode_all(records)?.hconcat(&stack.matrix),
        }
    }

    pub fn logits(&self, stack: &StackedLogits, records: &[&SampleRecord]) -> Result<LogitMatrix> {
        let x = self.inputs(stack, records)?;
        self.params.forward_batch(&x)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let meta: MetaModel = serde_json::from_str(&text)?;
        if meta.params.input_dim() != meta.source_width() {
            return Err(Error::dims(
                "meta input width",
                meta.source_width(),
                meta.params.input_dim(),
            ));
        }
        Ok(meta)
    }
}

/// Refuses stacks that touch the base portion or reach outside the meta set.
fn leakage_guard(stack: &StackedLogits, plan: &SplitPlan) -> Result<()> {
    let base: HashSet<&str> = plan.base_portion().into_iter().collect();
    let meta: HashSet<&str> = plan.meta.iter().map(String::as_str).collect();
    let leaked: Vec<String> = stack
        .sample_ids
        .iter()
        .filter(|id| base.contains(id.as_str()) || !meta.contains(id.as_str()))
        .cloned()
        .collect();
    if leaked.is_empty() {
        Ok(())
    } else {
        Err(Error::Leakage { ids: leaked })
    }
}

/// Trains `meta` on the stack built over the meta split. Labels come from
/// `records`, which must be row-aligned with the stack. When `plan` is
/// given, the stack is checked against it and its fingerprint recorded; a
/// meta-model already tied to a different plan is rejected.
pub fn train_meta(
    meta: &MetaModel,
    stack: &StackedLogits,
    records: &[&SampleRecord],
    plan: Option<&SplitPlan>,
    config: &TrainConfig,
) -> Result<MetaModel> {
    let mut out = meta.clone();
    if let Some(plan) = plan {
        let fp = fnv1a_hex(plan.to_json()?.as_bytes());
        if let Some(expected) = &meta.provenance.plan_fingerprint {
            if *expected != fp {
                return Err(Error::FingerprintMismatch {
                    expected: expected.clone(),
                    found: fp,
                });
            }
        }
        leakage_guard(stack, plan)?;
        out.provenance.plan_fingerprint = Some(fp);
    }
    let x = meta.inputs(stack, records)?;
    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    if let Some(&bad) = labels.iter().find(|&&l| l >= meta.classes) {
        return Err(Error::invalid(
            "labels",
            format!("class id {bad} out of range"),
        ));
    }
    let outcome = fit(&mut out.params, &x, &labels, config, |_, _| {})?;
    out.provenance.base_model_ids = stack.model_ids.clone();
    out.provenance.epochs_run = outcome.epochs_run;
    out.provenance.final_loss = outcome.final_loss;
    Ok(out)
}

/// Predicted class per stack row; ties go to the smallest class id.
pub fn predict_final(
    meta: &MetaModel,
    stack: &StackedLogits,
    records: &[&SampleRecord],
) -> Result<Vec<usize>> {
    Ok(meta
        .logits(stack, records)?
        .iter_rows()
        .map(argmax)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SampleRecord;
    use crate::learner::MetadataPolicy;
    use rand::{Rng, SeedableRng};

    fn record(i: usize, label: usize, features: Vec<f64>) -> SampleRecord {
        SampleRecord {
            sample_id: format!("s{i:04}"),
            patient_id: format!("p{}", i / 3),
            label,
            features,
            metadata: Default::default(),
            official_partition: None,
        }
    }

    /// Model 1 puts a margin of 4 on the true class; the others emit
    /// uniform noise in [-4, 4].
    fn oracle_stack(n: usize, offset: usize, seed: u64) -> (StackedLogits, Vec<SampleRecord>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let c = 4;
        let mut rows = Vec::new();
        let mut records = Vec::new();
        for i in 0..n {
            let label = rng.random_range(0..c);
            let mut row = vec![0.0; 5 * c];
            row[label] = 4.0;
            for v in &mut row[c..] {
                *v = rng.random_range(-4.0..4.0);
            }
            rows.push(row);
            records.push(record(offset + i, label, vec![0.0]));
        }
        let ids = records.iter().map(|r| r.sample_id.clone()).collect();
        let stack = StackedLogits::new(
            Matrix::from_rows(5 * c, &rows).unwrap(),
            c,
            (1..=5).collect(),
            ids,
        )
        .unwrap();
        (stack, records)
    }

    fn small(kind: MetaKind) -> MetaVariant {
        MetaVariant {
            kind,
            hidden: 32,
            embed_dim: 16,
            proj_dim: 8,
        }
    }

    #[test]
    fn declared_widths() {
        let enc = FeatureEncoder::raw(7);
        let w = |kind| {
            let m = build_meta(MetaVariant::new(kind), 5, 4, enc.clone(), 1).unwrap();
            assert_eq!(m.params.input_dim(), m.source_width());
            m.params
                .layers()
                .iter()
                .map(|l| (l.rows, l.cols))
                .collect::<Vec<_>>()
        };
        assert_eq!(w(MetaKind::LogitOneHidden), vec![(512, 20), (4, 512)]);
        assert_eq!(
            w(MetaKind::LogitTwoHidden),
            vec![(512, 20), (512, 512), (4, 512)]
        );
        assert_eq!(w(MetaKind::FeatureOnly), vec![(512, 7), (4, 512)]);
        assert_eq!(w(MetaKind::Fusion), vec![(1024, 7), (512, 20), (4, 1536)]);
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_meta(small(MetaKind::Fusion), 3, 2, FeatureEncoder::raw(4), 9).unwrap();
        let b = build_meta(small(MetaKind::Fusion), 3, 2, FeatureEncoder::raw(4), 9).unwrap();
        let c = build_meta(small(MetaKind::Fusion), 3, 2, FeatureEncoder::raw(4), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn learns_to_trust_the_reliable_model() {
        let (train_stack, train_records) = oracle_stack(400, 0, 1);
        let (test_stack, test_records) = oracle_stack(400, 1000, 2);
        let train_refs: Vec<&SampleRecord> = train_records.iter().collect();
        let test_refs: Vec<&SampleRecord> = test_records.iter().collect();
        let meta = build_meta(
            small(MetaKind::LogitTwoHidden),
            5,
            4,
            FeatureEncoder::raw(1),
            3,
        )
        .unwrap();
        let cfg = TrainConfig {
            lr_max: 1e-3,
            epochs: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let trained = train_meta(&meta, &train_stack, &train_refs, None, &cfg).unwrap();
        let preds = predict_final(&trained, &test_stack, &test_refs).unwrap();
        let correct = preds
            .iter()
            .zip(&test_records)
            .filter(|(p, r)| **p == r.label)
            .count();
        // Model 1 alone is always right; the meta-model must come within 2 points.
        assert!(correct >= 392, "meta accuracy {correct}/400");
        assert_eq!(trained.provenance.base_model_ids, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn zero_epochs_and_repeat_runs() {
        let (stack, records) = oracle_stack(20, 0, 4);
        let refs: Vec<&SampleRecord> = records.iter().collect();
        let meta = build_meta(
            small(MetaKind::LogitOneHidden),
            5,
            4,
            FeatureEncoder::raw(1),
            1,
        )
        .unwrap();
        let zero = TrainConfig {
            epochs: 0,
            ..TrainConfig::meta_default()
        };
        assert_eq!(
            train_meta(&meta, &stack, &refs, None, &zero)
                .unwrap()
                .params,
            meta.params
        );
        let cfg = TrainConfig::meta_default().with_seed(2);
        assert_eq!(
            train_meta(&meta, &stack, &refs, None, &cfg).unwrap(),
            train_meta(&meta, &stack, &refs, None, &cfg).unwrap()
        );
    }

    #[test]
    fn feature_only_ignores_the_stack_and_fusion_reads_both() {
        let (stack, mut records) = oracle_stack(6, 0, 5);
        for (i, r) in records.iter_mut().enumerate() {
            r.features = vec![i as f64, 1.0];
        }
        let refs: Vec<&SampleRecord> = records.iter().collect();
        let mut shifted = stack.clone();
        for v in shifted.matrix.row_mut(0) {
            *v += 1.5;
        }
        let enc = FeatureEncoder::fit(refs.iter().copied(), 2, MetadataPolicy::Ignore);
        let feat = build_meta(small(MetaKind::FeatureOnly), 5, 4, enc.clone(), 1).unwrap();
        assert_eq!(
            feat.logits(&stack, &refs).unwrap(),
            feat.logits(&shifted, &refs).unwrap()
        );
        let fusion = build_meta(small(MetaKind::Fusion), 5, 4, enc, 1).unwrap();
        assert_ne!(
            fusion.logits(&stack, &refs).unwrap().row(0),
            fusion.logits(&shifted, &refs).unwrap().row(0)
        );
    }

    #[test]
    fn predictions_break_ties_low_and_ignore_shifts() {
        let records = [record(0, 0, vec![0.0]), record(1, 0, vec![0.0])];
        let refs: Vec<&SampleRecord> = records.iter().collect();
        let mut meta = build_meta(
            small(MetaKind::LogitOneHidden),
            1,
            4,
            FeatureEncoder::raw(1),
            1,
        )
        .unwrap();
        // Make the network the identity map on the logits: hidden = ReLU(x + 10), out = hidden.
        let mut layers = meta.params.layers().to_vec();
        layers[0] = crate::learner::Dense::zeros(4, 4);
        layers[1] = crate::learner::Dense::zeros(4, 4);
        for c in 0..4 {
            layers[0].weights[c * 4 + c] = 1.0;
            layers[0].bias[c] = 10.0;
            layers[1].weights[c * 4 + c] = 1.0;
        }
        meta.variant.hidden = 4;
        meta.params = Network::from_layers(
            Architecture::Mlp {
                widths: vec![4, 4, 4],
            },
            layers,
        )
        .unwrap();
        let rows = vec![vec![0.1, 0.9, 0.3, 0.3], vec![1.0, 1.0, 0.0, 0.0]];
        let stack = StackedLogits::new(
            Matrix::from_rows(4, &rows).unwrap(),
            4,
            vec![1],
            vec!["s0000".into(), "s0001".into()],
        )
        .unwrap();
        assert_eq!(predict_final(&meta, &stack, &refs).unwrap(), vec![1, 0]);
        let shifted: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| v + 7.0).collect())
            .collect();
        let stack7 = StackedLogits::new(
            Matrix::from_rows(4, &shifted).unwrap(),
            4,
            vec![1],
            stack.sample_ids.clone(),
        )
        .unwrap();
        assert_eq!(predict_final(&meta, &stack7, &refs).unwrap(), vec![1, 0]);
    }

    #[test]
    fn misaligned_records_are_rejected() {
        let (stack, mut records) = oracle_stack(4, 0, 6);
        records.swap(0, 1);
        let refs: Vec<&SampleRecord> = records.iter().collect();
        let meta = build_meta(
            small(MetaKind::LogitOneHidden),
            5,
            4,
            FeatureEncoder::raw(1),
            1,
        )
        .unwrap();
        assert!(meta.logits(&stack, &refs).is_err());
        assert!(meta.logits(&stack, &refs[..3]).is_err());
    }

    #[test]
    fn kind_names_parse() {
        for k in MetaKind::ALL {
            assert_eq!(k.as_str().parse::<MetaKind>().unwrap(), k);
        }
        assert_eq!("2h".parse::<MetaKind>().unwrap(), MetaKind::LogitTwoHidden);
        assert!("3h".parse::<MetaKind>().is_err());
    }
}
