//! Base-model diversity: pairwise disagreement and error correlation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symmetric M×M matrix over base models. `degenerate` lists the pairs
/// `(a, b)` with `a <= b` whose entry is undefined and reported as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMatrix {
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<(usize, usize)>,
}

impl PairMatrix {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a][b]
    }

    pub fn mean_offdiag(&self) -> Result<f64> {
        mean_offdiag(&self.values)
    }
}

fn check_lengths(preds: &[Vec<usize>]) -> Result<usize> {
    let n = preds.first().map_or(0, Vec::len);
    if n == 0 {
        return Err(Error::invalid(
            "predictions",
            "need at least one model and one sample",
        ));
    }
    for p in preds {
        if p.len() != n {
            return Err(Error::dims("prediction list length", n, p.len()));
        }
    }
    Ok(n)
}

fn symmetric(m: usize, mut entry: impl FnMut(usize, usize) -> f64) -> Vec<Vec<f64>> {
    let mut values = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a..m {
            let v = entry(a, b);
            values[a][b] = v;
            values[b][a] = v;
        }
    }
    values
}

/// Entry `(a, b)` is the fraction of samples on which models `a` and `b`
/// predict different classes.
pub fn pairwise_disagreement(preds: &[Vec<usize>]) -> Result<PairMatrix> {
    let n = check_lengths(preds)?;
    let values = symmetric(preds.len(), |a, b| {
        if a == b {
            return 0.0;
        }
        let differ = preds[a]
            .iter()
            .zip(&preds[b])
            .filter(|(x, y)| x != y)
            .count();
        differ as f64 / n as f64
    });
    Ok(PairMatrix {
        values,
        degenerate: Vec::new(),
    })
}

/// Pearson correlation of the per-sample error indicators of each pair of
/// models. A model whose indicator is constant (always right or always
/// wrong) has no defined correlation; its pairs are 0 and flagged.
pub fn error_correlation(preds: &[Vec<usize>], labels: &[usize]) -> Result<PairMatrix> {
    let n = check_lengths(preds)?;
    if labels.len() != n {
        return Err(Error::dims("labels length", n, labels.len()));
    }
    let errors: Vec<Vec<f64>> = preds
        .iter()
        .map(|p| {
            p.iter()
                .zip(labels)
                .map(|(a, b)| f64::from(u8::from(a != b)))
                .collect()
        })
        .collect();
    let centred: Vec<(Vec<f64>, f64)> = errors
        .iter()
        .map(|e| {
            let mean = e.iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = e.iter().map(|x| x - mean).collect();
            let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let mut degenerate = Vec::new();
    let values = symmetric(preds.len(), |a, b| {
        let (ca, na) = &centred[a];
        let (cb, nb) = &centred[b];
        if *na == 0.0 || *nb == 0.0 {
            degenerate.push((a, b));
            return 0.0;
        }
        let r = ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        r.clamp(-1.0, 1.0)
    });
    Ok(PairMatrix { values, degenerate })
}

/// Mean of the strictly upper triangle.
pub fn mean_offdiag(matrix: &[Vec<f64>]) -> Result<f64> {
    let m = matrix.len();
    if m < 2 {
        return Err(Error::invalid("matrix", "need at least two models"));
    }
    if let Some(row) = matrix.iter().find(|r| r.len() != m) {
        return Err(Error::dims("matrix row length", m, row.len()));
    }
    let mut sum = 0.0;
    for a in 0..m {
        for b in a + 1..m {
            sum += matrix[a][b];
        }
    }
    Ok(sum / (m * (m - 1) / 2) as f64)
}
