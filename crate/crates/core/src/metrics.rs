//! Confusion counts, specificity/sensitivity, the ICBHI score and relative
//! rate of change, plus multi-run aggregation.
//!
//! All percentages are on a 0–100 scale and computed in full precision;
//! [`round_half_away`] is for presentation only.

use serde::{Deserialize, Serialize};

use crate::data::Taxonomy;
use crate::error::{Error, Result};

/// `counts[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub normal_id: usize,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }
}

pub fn confusion(
    preds: &[usize],
    labels: &[usize],
    taxonomy: &Taxonomy,
) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::dims(
            "predictions vs labels",
            labels.len(),
            preds.len(),
        ));
    }
    if preds.is_empty() {
        return Err(Error::invalid("predictions", "must be non-empty"));
    }
    let c = taxonomy.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= c || t >= c {
            return Err(Error::invalid(
                "class id",
                format!("pair (label {t}, prediction {p}) outside 0..{c}"),
            ));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        normal_id: taxonomy.normal_id(),
    })
}

/// Percent of abnormal samples predicted as exactly their own class.
pub fn sensitivity(cm: &ConfusionMatrix) -> Result<f64> {
    let (mut hits, mut total) = (0u64, 0u64);
    for c in (0..cm.n_classes()).filter(|&c| c != cm.normal_id) {
        hits += cm.counts[c][c];
        total += cm.row_total(c);
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "sensitivity needs at least one abnormal sample".into(),
        ));
    }
    Ok(100.0 * hits as f64 / total as f64)
}

/// Percent of normal samples predicted as normal.
pub fn specificity(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.row_total(cm.normal_id);
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "specificity needs at least one normal sample".into(),
        ));
    }
    Ok(100.0 * cm.counts[cm.normal_id][cm.normal_id] as f64 / total as f64)
}

pub fn icbhi_score(sp: f64, se: f64) -> f64 {
    (sp + se) / 2.0
}

/// Relative rate of change of `ensemble_score` over `base_mean_score`, in
/// percent.
pub fn rrc(ensemble_score: f64, base_mean_score: f64) -> Result<f64> {
    if !(base_mean_score > 0.0) {
        return Err(Error::UndefinedMetric(format!(
            "relative rate of change needs a positive baseline, got {base_mean_score}"
        )));
    }
    Ok(100.0 * (ensemble_score - base_mean_score) / base_mean_score)
}

/// Rounds to `decimals` places with ties away from zero. Values within a few
/// ulps of a tie are treated as ties, so decimal inputs such as 63.535 round
/// the way they read.
pub fn round_half_away(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    let y = x * scale;
    let nudged = y + y.signum() * y.abs().max(1.0) * 4.0 * f64::EPSILON;
    nudged.round() / scale
}

/// Specificity, sensitivity and score of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub sp: f64,
    pub se: f64,
    pub score: f64,
}

impl RunScore {
    pub fn from_confusion(cm: &ConfusionMatrix) -> Result<Self> {
        let sp = specificity(cm)?;
        let se = sensitivity(cm)?;
        Ok(RunScore {
            sp,
            se,
            score: icbhi_score(sp, se),
        })
    }

    pub fn evaluate(preds: &[usize], labels: &[usize], taxonomy: &Taxonomy) -> Result<Self> {
        Self::from_confusion(&confusion(preds, labels, taxonomy)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean ± sample standard deviation of a set of runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub runs: Vec<RunScore>,
    pub sp: MeanStd,
    pub se: MeanStd,
    pub score: MeanStd,
    /// Set when only one run exists and the standard deviations are 0 by
    /// convention rather than measured.
    pub single_run: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rrc: Option<f64>,
}

impl ScoreReport {
    /// Attaches the relative rate of change against `base_mean_score`.
    pub fn with_rrc(mut self, base_mean_score: f64) -> Result<Self> {
        self.rrc = Some(rrc(self.score.mean, base_mean_score)?);
        Ok(self)
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> MeanStd {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let std = if n > 1.0 {
        (values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MeanStd { mean, std }
}

pub fn aggregate_runs(runs: &[RunScore]) -> Result<ScoreReport> {
    if runs.is_empty() {
        return Err(Error::invalid("runs", "need at least one run to aggregate"));
    }
    Ok(ScoreReport {
        sp: mean_std(runs.iter().map(|r| r.sp)),
        se: mean_std(runs.iter().map(|r| r.se)),
        score: mean_std(runs.iter().map(|r| r.score)),
        single_run: runs.len() == 1,
        runs: runs.to_vec(),
        rrc: None,
    })
}
