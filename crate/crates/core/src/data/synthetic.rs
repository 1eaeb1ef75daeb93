//! Patient-structured Gaussian data.
//!
//! Each patient `p` gets an offset `o_p ~ N(0, patient_effect_std² I)` shared
//! by all of its samples; each sample is `μ_c + o_p + N(0, noise_std² I)` with
//! the class `c` drawn from the priors. Class means sit on a regular simplex
//! with pairwise distance `class_separation`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, OfficialPartition, SampleRecord, Taxonomy};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    /// Inclusive `[min, max]` sample count per patient.
    pub samples_per_patient: (usize, usize),
    pub class_priors: Vec<f64>,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub patient_effect_std: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 200 patients with 8–12 samples each, a four-class imbalance typical of
    /// respiratory-cycle corpora, d = 32.
    pub fn reference(seed: u64) -> Self {
        SyntheticSpec {
            n_patients: 200,
            samples_per_patient: (8, 12),
            class_priors: vec![0.53, 0.21, 0.14, 0.12],
            feature_dim: 32,
            class_separation: 2.0,
            patient_effect_std: 1.0,
            noise_std: 1.0,
            seed,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 {
            return Err(Error::invalid("n_patients", "must be positive"));
        }
        let (lo, hi) = self.samples_per_patient;
        if lo == 0 {
            return Err(Error::invalid(
                "samples_per_patient",
                "minimum must be at least 1",
            ));
        }
        if lo > hi {
            return Err(Error::invalid(
                "samples_per_patient",
                format!("min {lo} exceeds max {hi}"),
            ));
        }
        if self.class_priors.is_empty() {
            return Err(Error::invalid(
                "class_priors",
                "at least one class is required",
            ));
        }
        if self.class_priors.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid(
                "class_priors",
                "entries must be finite and non-negative",
            ));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "class_priors",
                format!("must sum to 1, sum is {total}"),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim", "must be positive"));
        }
        if self.feature_dim + 1 < self.n_classes() {
            return Err(Error::invalid(
                "feature_dim",
                format!(
                    "{} classes need at least {} dimensions",
                    self.n_classes(),
                    self.n_classes() - 1
                ),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::invalid("class_separation", "must be positive"));
        }
        if !(self.patient_effect_std >= 0.0 && self.patient_effect_std.is_finite()) {
            return Err(Error::invalid("patient_effect_std", "must be non-negative"));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std", "must be positive"));
        }
        Ok(())
    }

    fn taxonomy(&self) -> Result<Taxonomy> {
        if self.n_classes() == 4 {
            Ok(Taxonomy::respiratory())
        } else {
            Taxonomy::generic(self.n_classes())
        }
    }
}

/// Regular-simplex class means in `dim` dimensions with pairwise distance
/// `separation`, built from the Helmert basis of the plane orthogonal to the
/// all-ones vector. Only the first `n - 1` coordinates are non-zero.
pub fn class_means(n: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / std::f64::consts::SQRT_2;
    let mut means = vec![vec![0.0; dim]; n];
    for k in 1..n.min(dim + 1) {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for (i, mean) in means.iter_mut().enumerate() {
            mean[k - 1] = scale
                * match i.cmp(&k) {
                    std::cmp::Ordering::Less => 1.0 / norm,
                    std::cmp::Ordering::Equal => -(k as f64) / norm,
                    std::cmp::Ordering::Greater => 0.0,
                };
        }
    }
    means
}

struct Sampler<'a> {
    spec: &'a SyntheticSpec,
    means: Vec<Vec<f64>>,
    classes: WeightedIndex<f64>,
}

impl<'a> Sampler<'a> {
    fn new(spec: &'a SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let classes = WeightedIndex::new(&spec.class_priors)
            .map_err(|e| Error::invalid("class_priors", e.to_string()))?;
        Ok(Sampler {
            spec,
            means: class_means(spec.n_classes(), spec.feature_dim, spec.class_separation),
            classes,
        })
    }

    fn offset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.spec.feature_dim)
            .map(|_| self.spec.patient_effect_std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn sample(&self, rng: &mut ChaCha8Rng, offset: &[f64]) -> (usize, Vec<f64>) {
        let c = self.classes.sample(rng);
        let x = self.means[c]
            .iter()
            .zip(offset)
            .map(|(m, o)| m + o + self.spec.noise_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        (c, x)
    }

    /// Draws `n_patients` patients; returns the records and each patient's
    /// offset.
    fn patients(
        &self,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        n_patients: usize,
    ) -> (Vec<SampleRecord>, Vec<(String, Vec<f64>)>) {
        let (lo, hi) = self.spec.samples_per_patient;
        let width = n_patients.to_string().len().max(4);
        let mut records = Vec::new();
        let mut offsets = Vec::with_capacity(n_patients);
        for p in 0..n_patients {
            let patient_id = format!("{prefix}{p:0width$}");
            let count = rng.random_range(lo..=hi);
            let offset = self.offset(rng);
            for i in 0..count {
                let (label, features) = self.sample(rng, &offset);
                records.push(SampleRecord {
                    sample_id: format!("{patient_id}_s{i:02}"),
                    patient_id: patient_id.clone(),
                    label,
                    features,
                    metadata: Default::default(),
                    official_partition: None,
                });
            }
            offsets.push((patient_id, offset));
        }
        (records, offsets)
    }
}

/// Generates an untagged dataset; deterministic in `spec` (including seed).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let sampler = Sampler::new(spec)?;
    let mut rng = stream(spec.seed, Stream::SyntheticTrain);
    let (records, _) = sampler.patients(&mut rng, "p", spec.n_patients);
    Dataset::new(spec.taxonomy()?, spec.feature_dim, records)
}

/// Training data plus two test sets drawn from the same generative model.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBenchmark {
    /// The `generate_synthetic` samples tagged `train`, followed by
    /// `test_samples_per_patient` fresh samples of every training patient
    /// tagged `test` (patients shared between train and test).
    pub dataset: Dataset,
    /// Samples from patients never seen in `dataset`.
    pub fresh: Dataset,
}

pub fn generate_benchmark(
    spec: &SyntheticSpec,
    test_samples_per_patient: usize,
    fresh_patients: usize,
) -> Result<SyntheticBenchmark> {
    let sampler = Sampler::new(spec)?;
    let taxonomy = spec.taxonomy()?;

    let mut rng = stream(spec.seed, Stream::SyntheticTrain);
    let (mut records, offsets) = sampler.patients(&mut rng, "p", spec.n_patients);
    for r in &mut records {
        r.official_partition = Some(OfficialPartition::Train);
    }

    let mut rng = stream(spec.seed, Stream::SyntheticTest);
    for (patient_id, offset) in &offsets {
        for i in 0..test_samples_per_patient {
            let (label, features) = sampler.sample(&mut rng, offset);
            records.push(SampleRecord {
                sample_id: format!("{patient_id}_t{i:02}"),
                patient_id: patient_id.clone(),
                label,
                features,
                metadata: Default::default(),
                official_partition: Some(OfficialPartition::Test),
            });
        }
    }
    let dataset = Dataset::new(taxonomy.clone(), spec.feature_dim, records)?;

    let mut rng = stream(spec.seed, Stream::SyntheticFresh);
    let (fresh, _) = sampler.patients(&mut rng, "q", fresh_patients);
    let fresh = Dataset::new(taxonomy, spec.feature_dim, fresh)?;
    Ok(SyntheticBenchmark { dataset, fresh })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn simplex_means_are_equidistant() {
        for n in 2..7 {
            let means = class_means(n, 8, 2.5);
            for i in 0..n {
                for j in 0..i {
                    assert!(
                        (dist(&means[i], &means[j]) - 2.5).abs() < 1e-12,
                        "n={n} ({i},{j})"
                    );
                }
            }
        }
        // Two classes fit in one dimension.
        let means = class_means(2, 1, 3.0);
        assert!((dist(&means[0], &means[1]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = SyntheticSpec::reference(1);
        s.n_patients = 0;
        assert!(generate_synthetic(&s)
            .unwrap_err()
            .to_string()
            .contains("n_patients"));
        let mut s = SyntheticSpec::reference(1);
        s.class_priors = vec![0.5, 0.5, 0.1, 0.0];
        assert!(generate_synthetic(&s)
            .unwrap_err()
            .to_string()
            .contains("class_priors"));
        let mut s = SyntheticSpec::reference(1);
        s.samples_per_patient = (5, 3);
        assert!(generate_synthetic(&s).is_err());
        let mut s = SyntheticSpec::reference(1);
        s.noise_std = 0.0;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let mut s = SyntheticSpec::reference(7);
        s.n_patients = 20;
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        s.seed = 8;
        assert_ne!(a, generate_synthetic(&s).unwrap());
    }

    #[test]
    fn benchmark_training_part_matches_plain_generation() {
        let mut s = SyntheticSpec::reference(3);
        s.n_patients = 15;
        let plain = generate_synthetic(&s).unwrap();
        let bench = generate_benchmark(&s, 2, 10).unwrap();
        let train = bench.dataset.training_pool();
        assert_eq!(train.len(), plain.len());
        for (a, b) in plain.samples().iter().zip(train) {
            assert_eq!(a.features, b.features);
            assert_eq!(a.sample_id, b.sample_id);
        }
        assert_eq!(bench.dataset.official_test().len(), 30);
        let fresh_patients: std::collections::BTreeSet<_> = bench
            .fresh
            .samples()
            .iter()
            .map(|r| r.patient_id.as_str())
            .collect();
        assert_eq!(fresh_patients.len(), 10);
        assert!(fresh_patients.iter().all(|p| p.starts_with('q')));
    }
}
