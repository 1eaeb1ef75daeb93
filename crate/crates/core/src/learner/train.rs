use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encode::{FeatureEncoder, MetadataPolicy};
use super::network::{Architecture, Network};
use super::optim::{adam_step, cosine_lr, AdamConfig, AdamState};
use crate::data::{SampleRecord, Taxonomy};
use crate::error::{Error, Result};
use crate::linalg::{argmax, LogitMatrix, Matrix};
use crate::metrics::RunScore;
use crate::rng::{stream, Stream};

/// Layer widths `[d_in, h_1, ..., h_L, C]` of a ReLU network and how record
/// metadata enters the input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub metadata_policy: MetadataPolicy,
}

impl ModelSpec {
    pub fn new(layer_widths: Vec<usize>, metadata_policy: MetadataPolicy) -> Self {
        ModelSpec {
            layer_widths,
            metadata_policy,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::Mlp {
            widths: self.layer_widths.clone(),
        }
    }

    pub fn classes(&self) -> usize {
        self.layer_widths.last().copied().unwrap_or(0)
    }
}

pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<Network> {
    Network::init(spec.architecture(), seed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Return the epoch with the best validation score instead of the last
    /// epoch. Only meaningful when a validation set is supplied.
    pub select_best_val: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 5e-5,
            lr_min: 0.0,
            epochs: 50,
            batch_size: 8,
            schedule: Schedule::Cosine,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            select_best_val: false,
        }
    }
}

impl TrainConfig {
    /// Base-model defaults: lr 5e-5, cosine, batch 8, 50 epochs.
    pub fn base_default() -> Self {
        Self::default()
    }

    /// Meta-model defaults: the base configuration for 10 epochs.
    pub fn meta_default() -> Self {
        TrainConfig {
            epochs: 10,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    /// Zero epochs is allowed and leaves the parameters untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::invalid("lr_max", "must be positive"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::invalid("lr_min", "must lie in [0, lr_max]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam betas", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps", "must be positive"));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Cosine => cosine_lr(step, total, self.lr_max, self.lr_min),
            Schedule::Constant => self.lr_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub epochs_run: usize,
    /// Sample-weighted mean batch loss of the last epoch.
    pub final_loss: Option<f64>,
}

/// Mini-batch Adam over `inputs`/`labels`. Rows are reshuffled every epoch
/// from the seeded shuffle stream; the last batch may be short. The
/// learning rate is stepped per batch over `epochs · ⌈N / batch⌉` steps.
/// `after_epoch` sees the 1-based epoch number and the current parameters.
pub fn fit(
    net: &mut Network,
    inputs: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
    mut after_epoch: impl FnMut(usize, &Network),
) -> Result<FitOutcome> {
    config.validate()?;
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::invalid("training set", "must be non-empty"));
    }
    if labels.len() != n {
        return Err(Error::dims("training labels", n, labels.len()));
    }
    if inputs.cols() != net.input_dim() {
        return Err(Error::dims(
            "training inputs",
            net.input_dim(),
            inputs.cols(),
        ));
    }
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let adam = config.adam();
    let mut state = AdamState::new(net);
    let mut rng = stream(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n).collect();
    let mut final_loss = None;
    let mut step = 0;

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * inputs.cols());
            for &i in chunk {
                data.extend_from_slice(inputs.row(i));
            }
            let batch = Matrix::from_vec(chunk.len(), inputs.cols(), data)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = net.loss_and_grad(&batch, &batch_labels)?;
            adam_step(
                &mut state,
                net,
                &grads,
                config.lr_at(step, total_steps),
                &adam,
            );
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
        }
        final_loss = Some(epoch_loss / n as f64);
        after_epoch(epoch, net);
    }
    Ok(FitOutcome {
        epochs_run: config.epochs,
        final_loss,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<String>,
    pub epochs_run: usize,
    pub final_loss: Option<f64>,
    /// Validation score after each epoch, when a validation set was given.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub val_scores: Vec<Option<f64>>,
    /// 1-based epoch whose weights were returned, when chosen by validation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_epoch: Option<usize>,
}

/// A trained base model. Serialized as the model file:
/// `{spec, encoder, params: {architecture, layers: [{rows, cols, weights, bias}]}, provenance}`
/// with weights row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub encoder: FeatureEncoder,
    pub params: Network,
    pub provenance: Provenance,
}

impl TrainedModel {
    pub fn classes(&self) -> usize {
        self.params.output_dim()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let model: TrainedModel = serde_json::from_str(&text)?;
        if model.encoder.width() != model.params.input_dim() {
            return Err(Error::dims(
                "model encoder width",
                model.params.input_dim(),
                model.encoder.width(),
            ));
        }
        Ok(model)
    }
}

pub struct ValidationSet<'a> {
    pub records: &'a [&'a SampleRecord],
    pub taxonomy: &'a Taxonomy,
}

/// Trains a base model with an encoder fitted on `train_set` itself.
pub fn train(
    spec: &ModelSpec,
    train_set: &[&SampleRecord],
    config: &TrainConfig,
    val_set: Option<ValidationSet<'_>>,
) -> Result<TrainedModel> {
    let feature_dim = train_set.first().map_or(0, |r| r.features.len());
    let encoder = FeatureEncoder::fit(train_set.iter().copied(), feature_dim, spec.metadata_policy);
    train_with_encoder(spec, encoder, train_set, config, val_set)
}

/// Trains a base model on inputs produced by `encoder`, typically fitted on
/// the whole dataset so that every model of an ensemble shares one input
/// layout. The first layer width must equal the encoded width.
pub fn train_with_encoder(
    spec: &ModelSpec,
    encoder: FeatureEncoder,
    train_set: &[&SampleRecord],
    config: &TrainConfig,
    val_set: Option<ValidationSet<'_>>,
) -> Result<TrainedModel> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set", "must be non-empty"));
    }
    if encoder.policy != spec.metadata_policy {
        return Err(Error::invalid(
            "encoder",
            "metadata policy differs from the model spec",
        ));
    }
    let d_in = spec.layer_widths.first().copied().unwrap_or(0);
    if encoder.width() != d_in {
        return Err(Error::dims(
            "first layer width vs encoded features",
            encoder.width(),
            d_in,
        ));
    }
    let inputs = encoder.encode_all(train_set)?;
    let labels: Vec<usize> = train_set.iter().map(|r| r.label).collect();
    let mut params = init_params(spec, config.seed)?;

    let val = match &val_set {
        Some(v) => Some((
            encoder.encode_all(v.records)?,
            v.records.iter().map(|r| r.label).collect::<Vec<_>>(),
        )),
        None => None,
    };
    let mut val_scores = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let outcome = fit(&mut params, &inputs, &labels, config, |epoch, net| {
        if let (Some((x, y)), Some(v)) = (&val, &val_set) {
            let score = net
                .forward_batch(x)
                .ok()
                .and_then(|logits| {
                    let preds: Vec<usize> = logits.iter_rows().map(argmax).collect();
                    RunScore::evaluate(&preds, y, v.taxonomy).ok()
                })
                .map(|r| r.score);
            val_scores.push(score);
            if config.select_best_val {
                if let Some(s) = score {
                    if best.as_ref().is_none_or(|(b, _, _)| s > *b) {
                        best = Some((s, epoch, net.clone()));
                    }
                }
            }
        }
    })?;
    let mut selected_epoch = None;
    if let Some((_, epoch, net)) = best {
        params = net;
        selected_epoch = Some(epoch);
    }
    Ok(TrainedModel {
        spec: spec.clone(),
        encoder,
        params,
        provenance: Provenance {
            model_id: None,
            seed: config.seed,
            selector: None,
            epochs_run: outcome.epochs_run,
            final_loss: outcome.final_loss,
            val_scores,
            selected_epoch,
        },
    })
}

/// Row `i` is the network output for `records[i]`.
pub fn predict_logits(model: &TrainedModel, records: &[&SampleRecord]) -> Result<LogitMatrix> {
    if records.is_empty() {
        return Ok(Matrix::zeros(0, model.classes()));
    }
    let x = model.encoder.encode_all(records)?;
    model.params.forward_batch(&x)
}
