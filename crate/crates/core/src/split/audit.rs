use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::Granularity;
use super::{SplitPlan, Strategy, FRACTION_TOLERANCE};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Id not present in the dataset.
    UnknownSample,
    /// Id present in the dataset but outside the training pool.
    IneligibleSample,
    /// Sample listed in more than one partition.
    SampleOverlap,
    /// Sample listed in more than one fold.
    FoldOverlap,
    /// Pool sample listed in no partition.
    Orphan,
    /// Patient-level plan with a patient on both the meta and base side.
    PatientOverlap,
    /// Patient-level k-fold plan with a patient in two folds.
    FoldPatientOverlap,
    FractionOutOfTolerance,
    EmptyPartition,
    MalformedStrategy,
    InvalidAssignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub ids: Vec<String>,
    pub message: String,
}

/// Outcome of checking a plan against its dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanAudit {
    pub passed: bool,
    pub violations: Vec<Violation>,
    /// Partitioning policies this crate chose where the method leaves them
    /// open; listed so readers of an audit know what was assumed.
    pub policy_notes: Vec<String>,
}

impl PlanAudit {
    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

const POLICY_NOTES: [&str; 3] = [
    "sample-level base/meta division: per-class stratification with largest-remainder quotas summing to round(fraction * N)",
    "patient-level base/meta division: seeded patient order, greedy fill until the base set first reaches fraction * N",
    "realized base fraction must lie within 0.05 of the requested fraction",
];

/// Checks every partition invariant of `plan` by set arithmetic over `ds`.
/// Fails with [`Error::FingerprintMismatch`] when the plan was built for a
/// different dataset.
pub fn validate_plan(plan: &SplitPlan, ds: &Dataset) -> Result<PlanAudit> {
    let fingerprint = ds.fingerprint();
    if plan.dataset_fingerprint != fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: plan.dataset_fingerprint.clone(),
            found: fingerprint,
        });
    }
    let mut violations = Vec::new();
    let mut push =
        |kind, ids: Vec<String>, message: String| violations.push(Violation { kind, ids, message });

    let index = ds.index();
    let pool: BTreeSet<&str> = ds
        .training_pool()
        .iter()
        .map(|s| s.sample_id.as_str())
        .collect();

    // Partition name -> ids.
    let mut partitions: Vec<(String, &Vec<String>)> = vec![("meta".into(), &plan.meta)];
    match plan.strategy {
        Strategy::Fixed => {
            partitions.push(("base".into(), &plan.base));
            if !plan.folds.is_empty() || !plan.assignments.is_empty() {
                push(
                    ViolationKind::MalformedStrategy,
                    vec![],
                    "fixed plan carries folds or fold assignments".into(),
                );
            }
        }
        Strategy::KFold { k } => {
            if !plan.base.is_empty() {
                push(
                    ViolationKind::MalformedStrategy,
                    vec![],
                    "k-fold plan carries a separate base set".into(),
                );
            }
            if plan.folds.len() != k {
                push(
                    ViolationKind::MalformedStrategy,
                    vec![],
                    format!(
                        "k-fold plan declares k = {k} but has {} folds",
                        plan.folds.len()
                    ),
                );
            }
            for (i, fold) in plan.folds.iter().enumerate() {
                partitions.push((format!("fold({})", i + 1), fold));
            }
            check_assignments(plan, k, &mut push);
        }
    }

    for (name, ids) in &partitions {
        if ids.is_empty() {
            push(
                ViolationKind::EmptyPartition,
                vec![],
                format!("partition {name} is empty"),
            );
        }
    }

    let mut owners: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (name, ids) in &partitions {
        for id in ids.iter() {
            owners.entry(id.as_str()).or_default().push(name.as_str());
        }
    }
    let mut unknown = Vec::new();
    let mut ineligible = Vec::new();
    for (&id, names) in &owners {
        if !index.contains_key(id) {
            unknown.push(id.to_string());
        } else if !pool.contains(id) {
            ineligible.push(id.to_string());
        }
        if names.len() > 1 {
            let folds_only = names.iter().all(|n| n.starts_with("fold("));
            let kind = if folds_only {
                ViolationKind::FoldOverlap
            } else {
                ViolationKind::SampleOverlap
            };
            push(
                kind,
                vec![id.to_string()],
                format!("sample {id:?} appears in {}", names.join(", ")),
            );
        }
    }
    if !unknown.is_empty() {
        let msg = format!("{} ids are not in the dataset", unknown.len());
        push(ViolationKind::UnknownSample, unknown, msg);
    }
    if !ineligible.is_empty() {
        let msg = format!("{} ids are outside the training pool", ineligible.len());
        push(ViolationKind::IneligibleSample, ineligible, msg);
    }
    for &id in &pool {
        if !owners.contains_key(id) {
            push(
                ViolationKind::Orphan,
                vec![id.to_string()],
                format!("sample {id:?} is in no partition"),
            );
        }
    }

    if plan.granularity == Granularity::PatientLevel {
        let patients_of = |ids: &[&String]| -> BTreeSet<&str> {
            ids.iter()
                .filter_map(|id| index.get(id.as_str()))
                .map(|&i| ds.samples()[i].patient_id.as_str())
                .collect()
        };
        let meta = patients_of(&plan.meta.iter().collect::<Vec<_>>());
        let base_ids: Vec<&String> = match plan.strategy {
            Strategy::Fixed => plan.base.iter().collect(),
            Strategy::KFold { .. } => plan.folds.iter().flatten().collect(),
        };
        let base = patients_of(&base_ids);
        let shared: Vec<String> = meta.intersection(&base).map(|p| p.to_string()).collect();
        if !shared.is_empty() {
            let msg = format!(
                "patients on both meta and base sides: {}",
                shared.join(", ")
            );
            push(ViolationKind::PatientOverlap, shared, msg);
        }
        if matches!(plan.strategy, Strategy::KFold { .. }) {
            let mut fold_of: HashMap<&str, usize> = HashMap::new();
            let mut crossing = BTreeSet::new();
            for (f, fold) in plan.folds.iter().enumerate() {
                for p in patients_of(&fold.iter().collect::<Vec<_>>()) {
                    if let Some(&other) = fold_of.get(p) {
                        if other != f {
                            crossing.insert(p.to_string());
                        }
                    } else {
                        fold_of.insert(p, f);
                    }
                }
            }
            if !crossing.is_empty() {
                let ids: Vec<String> = crossing.into_iter().collect();
                let msg = format!("patients in more than one fold: {}", ids.join(", "));
                push(ViolationKind::FoldPatientOverlap, ids, msg);
            }
        }
    }

    if !pool.is_empty() {
        let base_len = match plan.strategy {
            Strategy::Fixed => plan.base.len(),
            Strategy::KFold { .. } => plan.folds.iter().map(Vec::len).sum(),
        };
        let realized = base_len as f64 / pool.len() as f64;
        if (realized - plan.base_fraction).abs() > FRACTION_TOLERANCE + 1e-12 {
            push(
                ViolationKind::FractionOutOfTolerance,
                vec![],
                format!(
                    "base fraction {realized:.4} is outside {} ± {FRACTION_TOLERANCE}",
                    plan.base_fraction
                ),
            );
        }
    }

    Ok(PlanAudit {
        passed: violations.is_empty(),
        violations,
        policy_notes: POLICY_NOTES.iter().map(|s| s.to_string()).collect(),
    })
}

fn check_assignments(
    plan: &SplitPlan,
    k: usize,
    push: &mut impl FnMut(ViolationKind, Vec<String>, String),
) {
    let all: BTreeSet<usize> = (1..=k).collect();
    if plan.assignments.len() != k {
        push(
            ViolationKind::InvalidAssignment,
            vec![],
            format!("{} fold assignments for k = {k}", plan.assignments.len()),
        );
    }
    let mut val_count: BTreeMap<usize, usize> = BTreeMap::new();
    let mut models = BTreeSet::new();
    for a in &plan.assignments {
        let label = format!("model {}", a.model);
        if !models.insert(a.model) || !all.contains(&a.model) {
            push(
                ViolationKind::InvalidAssignment,
                vec![label.clone()],
                format!("{label} is duplicated or out of range"),
            );
        }
        let train: BTreeSet<usize> = a.train_folds.iter().copied().collect();
        let mut covered = train.clone();
        covered.insert(a.val_fold);
        if train.contains(&a.val_fold)
            || train.len() != k - 1
            || covered != all
            || a.train_folds.len() != train.len()
        {
            push(
                ViolationKind::InvalidAssignment,
                vec![label.clone()],
                format!(
                    "{label}: train {:?} with validation fold {} does not cover 1..={k}",
                    a.train_folds, a.val_fold
                ),
            );
        }
        *val_count.entry(a.val_fold).or_default() += 1;
    }
    for f in 1..=k {
        let n = val_count.get(&f).copied().unwrap_or(0);
        if n != 1 {
            push(
                ViolationKind::InvalidAssignment,
                vec![format!("fold({f})")],
                format!("fold {f} is the validation fold of {n} models"),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SampleRecord, Taxonomy};
    use crate::split::{materialize, split_fixed, split_kfold, Selector};

    fn dataset(n_patients: usize, per_patient: usize) -> Dataset {
        let samples = (0..n_patients)
            .flat_map(|p| {
                (0..per_patient).map(move |i| SampleRecord {
                    sample_id: format!("s{p:02}_{i}"),
                    patient_id: format!("p{p}"),
                    label: (p + i) % 4,
                    features: vec![0.0],
                    metadata: Default::default(),
                    official_partition: None,
                })
            })
            .collect();
        Dataset::new(Taxonomy::respiratory(), 1, samples).unwrap()
    }

    #[test]
    fn emitted_plans_pass() {
        let ds = dataset(20, 3);
        for g in [Granularity::PatientLevel, Granularity::SampleLevel] {
            let fixed = split_fixed(&ds, 0.8, g, 4).unwrap();
            let audit = validate_plan(&fixed, &ds).unwrap();
            assert!(audit.passed, "{:?}", audit.violations);
            assert!(!audit.policy_notes.is_empty());
            let kfold = split_kfold(&ds, 0.8, 5, g, 4).unwrap();
            assert!(validate_plan(&kfold, &ds).unwrap().passed);
        }
    }

    #[test]
    fn planted_patient_overlap_is_cited() {
        let ds = dataset(10, 2);
        let mut plan = split_fixed(&ds, 0.8, Granularity::PatientLevel, 1).unwrap();
        // Move one sample of a base patient to meta.
        let moved = plan.base.pop().unwrap();
        let patient = ds.get(&moved).unwrap().patient_id.clone();
        plan.meta.push(moved);
        let audit = validate_plan(&plan, &ds).unwrap();
        assert!(!audit.passed);
        let v = audit
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::PatientOverlap)
            .unwrap();
        assert_eq!(v.ids, vec![patient]);
    }

    #[test]
    fn orphan_sample_is_cited() {
        let ds = dataset(10, 2);
        let mut plan = split_fixed(&ds, 0.8, Granularity::SampleLevel, 1).unwrap();
        let dropped = plan.meta.remove(0);
        let audit = validate_plan(&plan, &ds).unwrap();
        let v = audit
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::Orphan)
            .unwrap();
        assert_eq!(v.ids, vec![dropped]);
    }

    #[test]
    fn fold_overlap_is_cited() {
        let ds = dataset(10, 2);
        let mut plan = split_kfold(&ds, 0.8, 4, Granularity::SampleLevel, 1).unwrap();
        let dup = plan.folds[0][0].clone();
        plan.folds[1].push(dup.clone());
        let audit = validate_plan(&plan, &ds).unwrap();
        let v = audit
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::FoldOverlap)
            .unwrap();
        assert_eq!(v.ids, vec![dup]);
    }

    #[test]
    fn stale_plan_is_an_error() {
        let ds = dataset(10, 2);
        let plan = split_fixed(&ds, 0.8, Granularity::SampleLevel, 1).unwrap();
        let other = dataset(11, 2);
        assert!(matches!(
            validate_plan(&plan, &other),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn broken_assignments_are_flagged() {
        let ds = dataset(10, 2);
        let mut plan = split_kfold(&ds, 0.8, 4, Granularity::SampleLevel, 1).unwrap();
        plan.assignments[1].val_fold = 1;
        let audit = validate_plan(&plan, &ds).unwrap();
        assert!(audit.has(ViolationKind::InvalidAssignment));
    }

    #[test]
    fn materialize_selectors() {
        let ds = dataset(25, 4);
        let plan = split_kfold(&ds, 0.8, 5, Granularity::PatientLevel, 2).unwrap();
        let base = materialize(&plan, &ds, Selector::Base).unwrap();
        let fold3 = materialize(&plan, &ds, Selector::Fold(3)).unwrap();
        let train3 = materialize(&plan, &ds, Selector::ModelTrain(3)).unwrap();
        let expected: Vec<&str> = base
            .iter()
            .map(|s| s.sample_id.as_str())
            .filter(|id| !fold3.iter().any(|f| f.sample_id == *id))
            .collect();
        let got: Vec<&str> = train3.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(got, expected);
        assert_eq!(
            materialize(&plan, &ds, Selector::ModelVal(3)).unwrap(),
            fold3
        );
        assert!(materialize(&plan, &ds, Selector::Fold(6)).is_err());
        assert!(materialize(&plan, &ds, Selector::Fold(0)).is_err());
        let fixed = split_fixed(&ds, 0.8, Granularity::PatientLevel, 2).unwrap();
        assert!(materialize(&fixed, &ds, Selector::Fold(1)).is_err());
        assert_eq!(
            materialize(&fixed, &ds, Selector::ModelTrain(4)).unwrap(),
            materialize(&fixed, &ds, Selector::Base).unwrap()
        );
        let meta = materialize(&fixed, &ds, Selector::Meta).unwrap();
        assert!(meta.windows(2).all(|w| w[0].sample_id < w[1].sample_id));
    }
}
