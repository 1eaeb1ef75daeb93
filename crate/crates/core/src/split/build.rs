use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{FoldAssignment, Granularity, SplitPlan, Strategy};
use crate::data::{Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Allowed deviation of the realized base fraction from the requested one.
pub const FRACTION_TOLERANCE: f64 = 0.05;

struct Division<'a> {
    meta: Vec<&'a str>,
    base: Vec<&'a SampleRecord>,
}

/// Patients in ascending id order, each with its pool samples.
fn patients<'a>(pool: &[&'a SampleRecord]) -> Vec<(&'a str, Vec<&'a SampleRecord>)> {
    let mut by_patient: BTreeMap<&str, Vec<&SampleRecord>> = BTreeMap::new();
    for s in pool {
        by_patient.entry(s.patient_id.as_str()).or_default().push(s);
    }
    by_patient.into_iter().collect()
}

/// Pool samples grouped by class id (ascending), each group sorted by id.
fn by_class<'a>(pool: &[&'a SampleRecord]) -> Vec<Vec<&'a SampleRecord>> {
    let mut groups: BTreeMap<usize, Vec<&SampleRecord>> = BTreeMap::new();
    for s in pool {
        groups.entry(s.label).or_default().push(s);
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            g
        })
        .collect()
}

/// Per-class quotas summing to `total`: floors of the proportional share,
/// with the remainder going to the largest fractional parts (ties to the
/// lower class position).
fn largest_remainder(sizes: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let exact: Vec<f64> = sizes.iter().map(|&n| fraction * n as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut remaining = total.saturating_sub(assigned);
    for &c in order.iter().cycle().take(sizes.len() * 2) {
        if remaining == 0 {
            break;
        }
        if quotas[c] < sizes[c] {
            quotas[c] += 1;
            remaining -= 1;
        }
    }
    quotas
}

fn divide<'a>(
    ds: &'a Dataset,
    base_fraction: f64,
    granularity: Granularity,
    seed: u64,
) -> Result<Division<'a>> {
    if !(base_fraction > 0.0 && base_fraction < 1.0) {
        return Err(Error::invalid(
            "base_fraction",
            format!("{base_fraction} is not in (0, 1)"),
        ));
    }
    let pool = ds.training_pool();
    if pool.is_empty() {
        return Err(Error::InfeasibleSplit("the training pool is empty".into()));
    }
    let n_pool = pool.len();
    let target = base_fraction * n_pool as f64;
    let mut rng = stream(seed, Stream::SplitFixed);

    let (mut base, mut meta): (Vec<&SampleRecord>, Vec<&SampleRecord>) = match granularity {
        Granularity::SampleLevel => {
            let mut groups = by_class(&pool);
            let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
            let quotas = largest_remainder(&sizes, base_fraction, target.round() as usize);
            let (mut base, mut meta) = (Vec::new(), Vec::new());
            for (group, quota) in groups.iter_mut().zip(quotas) {
                group.shuffle(&mut rng);
                base.extend_from_slice(&group[..quota]);
                meta.extend_from_slice(&group[quota..]);
            }
            (base, meta)
        }
        Granularity::PatientLevel => {
            let mut patients = patients(&pool);
            if patients.len() < 2 {
                return Err(Error::InfeasibleSplit(
                    "patient-level splitting needs at least two patients so base and meta can be disjoint".into(),
                ));
            }
            patients.shuffle(&mut rng);
            let (mut base, mut meta) = (Vec::new(), Vec::new());
            for (_, samples) in patients {
                if (base.len() as f64) < target {
                    base.extend(samples);
                } else {
                    meta.extend(samples);
                }
            }
            (base, meta)
        }
    };
    if base.is_empty() || meta.is_empty() {
        return Err(Error::InfeasibleSplit(format!(
            "{granularity} division of {n_pool} samples at fraction {base_fraction} leaves an empty partition"
        )));
    }
    let realized = base.len() as f64 / n_pool as f64;
    if (realized - base_fraction).abs() > FRACTION_TOLERANCE + 1e-12 {
        return Err(Error::InfeasibleSplit(format!(
            "{granularity} division realizes base fraction {realized:.4}, outside {base_fraction} ± {FRACTION_TOLERANCE}"
        )));
    }
    base.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    meta.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(Division {
        meta: meta.into_iter().map(|s| s.sample_id.as_str()).collect(),
        base,
    })
}

fn owned(ids: impl IntoIterator<Item = impl AsRef<str>>) -> Vec<String> {
    ids.into_iter().map(|s| s.as_ref().to_string()).collect()
}

/// One base set shared by every base model.
///
/// Sample level: per-class stratified draw of `round(fraction · N)` samples.
/// Patient level: patients in seeded random order fill the base set until it
/// first reaches `fraction · N` samples.
pub fn split_fixed(
    ds: &Dataset,
    base_fraction: f64,
    granularity: Granularity,
    seed: u64,
) -> Result<SplitPlan> {
    let division = divide(ds, base_fraction, granularity, seed)?;
    Ok(SplitPlan {
        granularity,
        strategy: Strategy::Fixed,
        seed,
        base_fraction,
        dataset_fingerprint: ds.fingerprint(),
        meta: owned(division.meta),
        base: owned(division.base.iter().map(|s| s.sample_id.as_str())),
        folds: Vec::new(),
        assignments: Vec::new(),
    })
}

/// The `split_fixed` division with its base portion cut into `k` folds;
/// model `m` validates on fold `m` and trains on the rest.
pub fn split_kfold(
    ds: &Dataset,
    base_fraction: f64,
    k: usize,
    granularity: Granularity,
    seed: u64,
) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::invalid("k", format!("k-fold needs k >= 2, got {k}")));
    }
    let division = divide(ds, base_fraction, granularity, seed)?;
    let mut rng = stream(seed, Stream::SplitFolds);
    let mut folds: Vec<Vec<&str>> = vec![Vec::new(); k];

    match granularity {
        Granularity::SampleLevel => {
            if division.base.len() < k {
                return Err(Error::InfeasibleSplit(format!(
                    "{} base samples cannot fill {k} folds",
                    division.base.len()
                )));
            }
            let mut next = 0;
            for mut group in by_class(&division.base) {
                group.shuffle(&mut rng);
                for s in group {
                    folds[next % k].push(&s.sample_id);
                    next += 1;
                }
            }
        }
        Granularity::PatientLevel => {
            let mut patients = patients(&division.base);
            if patients.len() < k {
                return Err(Error::InfeasibleSplit(format!(
                    "{} base patients cannot fill {k} folds",
                    patients.len()
                )));
            }
            patients.shuffle(&mut rng);
            for (_, samples) in patients {
                let smallest = (0..k).min_by_key(|&f| (folds[f].len(), f)).expect("k >= 2");
                folds[smallest].extend(samples.iter().map(|s| s.sample_id.as_str()));
            }
        }
    }

    let folds: Vec<Vec<String>> = folds
        .into_iter()
        .map(|mut f| {
            f.sort_unstable();
            owned(f)
        })
        .collect();
    let assignments = (1..=k)
        .map(|m| FoldAssignment {
            model: m,
            train_folds: (1..=k).filter(|&f| f != m).collect(),
            val_fold: m,
        })
        .collect();
    Ok(SplitPlan {
        granularity,
        strategy: Strategy::KFold { k },
        seed,
        base_fraction,
        dataset_fingerprint: ds.fingerprint(),
        meta: owned(division.meta),
        base: Vec::new(),
        folds,
        assignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Taxonomy;

    fn dataset(patients: &[(usize, usize)]) -> Dataset {
        // (sample count, label) per patient
        let mut samples = Vec::new();
        for (p, &(n, label)) in patients.iter().enumerate() {
            for i in 0..n {
                samples.push(SampleRecord {
                    sample_id: format!("p{p:02}_{i:02}"),
                    patient_id: format!("p{p:02}"),
                    label,
                    features: vec![0.0],
                    metadata: Default::default(),
                    official_partition: None,
                });
            }
        }
        Dataset::new(Taxonomy::respiratory(), 1, samples).unwrap()
    }

    #[test]
    fn two_singletons_split_evenly() {
        let ds = dataset(&[(1, 0), (1, 1)]);
        let plan = split_fixed(&ds, 0.5, Granularity::PatientLevel, 3).unwrap();
        assert_eq!(plan.base.len(), 1);
        assert_eq!(plan.meta.len(), 1);
    }

    #[test]
    fn single_patient_is_infeasible() {
        let ds = dataset(&[(6, 0)]);
        let err = split_fixed(&ds, 0.8, Granularity::PatientLevel, 1).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSplit(_)));
    }

    #[test]
    fn sample_level_size_is_rounded_share() {
        // 4142 samples spread over four classes.
        let sizes = [2063, 1215, 501, 363];
        let mut patients = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            for _ in 0..n / 10 {
                patients.push((10, c));
            }
            if n % 10 != 0 {
                patients.push((n % 10, c));
            }
        }
        let ds = dataset(&patients);
        assert_eq!(ds.len(), 4142);
        let plan = split_fixed(&ds, 0.8, Granularity::SampleLevel, 1).unwrap();
        assert_eq!(plan.base.len(), 3314);
        assert_eq!(plan.meta.len(), 828);
    }

    #[test]
    fn largest_remainder_quotas() {
        assert_eq!(largest_remainder(&[5, 5], 0.5, 5), vec![3, 2]);
        assert_eq!(largest_remainder(&[3, 3, 3], 0.5, 5), vec![2, 2, 1]);
        assert_eq!(largest_remainder(&[10, 0], 0.8, 8), vec![8, 0]);
        // Sum always equals the requested total.
        let q = largest_remainder(&[7, 13, 2, 1], 0.8, (0.8f64 * 23.0).round() as usize);
        assert_eq!(q.iter().sum::<usize>(), 18);
    }

    #[test]
    fn stratification_keeps_class_shares() {
        let ds = dataset(&[(50, 0), (30, 1), (20, 2)]);
        let plan = split_fixed(&ds, 0.8, Granularity::SampleLevel, 9).unwrap();
        let index = ds.index();
        let mut counts = [0usize; 3];
        for id in &plan.base {
            counts[ds.samples()[index[id.as_str()]].label] += 1;
        }
        assert_eq!(counts, [40, 24, 16]);
    }

    #[test]
    fn kfold_rejects_small_k() {
        let ds = dataset(&[(5, 0), (5, 1), (5, 2)]);
        assert!(split_kfold(&ds, 0.8, 1, Granularity::SampleLevel, 1).is_err());
    }

    #[test]
    fn kfold_patient_folds_balance_equal_patients() {
        // 10 base patients + 3 meta patients of equal size.
        let ds = dataset(&[(4, 0); 13]);
        let plan = split_kfold(&ds, 10.0 / 13.0, 5, Granularity::PatientLevel, 5).unwrap();
        assert_eq!(plan.base_portion().len(), 40);
        for fold in &plan.folds {
            assert_eq!(fold.len(), 8, "{fold:?}");
        }
    }

    #[test]
    fn plans_are_deterministic() {
        let patients: Vec<(usize, usize)> = (0..40).map(|p| (1 + p % 3, p % 4)).collect();
        let ds = dataset(&patients);
        for g in [Granularity::PatientLevel, Granularity::SampleLevel] {
            let a = split_kfold(&ds, 0.75, 3, g, 11).unwrap();
            let b = split_kfold(&ds, 0.75, 3, g, 11).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        }
    }
}
