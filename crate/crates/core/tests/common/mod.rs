#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stacklab::{Dataset, OfficialPartition, SampleRecord, Taxonomy};

pub fn record(sample_id: &str, patient_id: &str, label: usize, features: Vec<f64>) -> SampleRecord {
    SampleRecord {
        sample_id: sample_id.to_string(),
        patient_id: patient_id.to_string(),
        label,
        features,
        metadata: Default::default(),
        official_partition: None,
    }
}

/// `patients` patients with 1..=`max_per_patient` samples each; labels
/// uniform over `classes`; two features.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    patients: usize,
    max_per_patient: usize,
    classes: usize,
) -> Dataset {
    let mut samples = Vec::new();
    for p in 0..patients {
        let n = rng.random_range(1..=max_per_patient);
        for s in 0..n {
            let label = rng.random_range(0..classes);
            let mut r = record(
                &format!("p{p:02}_s{s}"),
                &format!("p{p:02}"),
                label,
                vec![rng.random(), rng.random()],
            );
            r.official_partition = Some(OfficialPartition::Train);
            samples.push(r);
        }
    }
    Dataset::new(Taxonomy::generic(classes).unwrap(), 2, samples).unwrap()
}
