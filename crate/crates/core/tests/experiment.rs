use std::collections::BTreeSet;
use std::path::Path;

use stacklab::experiment::{DatasetSource, TestSet};
use stacklab::{
    emit_report, run_experiment, ExperimentConfig, Granularity, MetaKind, MetaVariant, Regime,
    ReportBundle, ReportFormat, Strategy, SyntheticSpec, TrainConfig,
};

fn fnv_hex(bytes: &[u8]) -> String {
    let h = bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x100000001b3)
    });
    format!("{h:016x}")
}

fn small_config() -> ExperimentConfig {
    let mut spec = SyntheticSpec::reference(5);
    spec.n_patients = 30;
    spec.samples_per_patient = (4, 6);
    spec.feature_dim = 8;
    let variants = MetaKind::ALL
        .iter()
        .map(|&k| MetaVariant {
            hidden: 16,
            embed_dim: 16,
            proj_dim: 8,
            ..MetaVariant::new(k)
        })
        .collect();
    ExperimentConfig {
        id: "small".into(),
        dataset: DatasetSource::Synthetic {
            spec,
            test_samples_per_patient: 2,
            fresh_patients: 20,
        },
        regimes: Regime::all(3),
        n_base_models: 3,
        split_seed: 2,
        base_hidden: vec![8],
        base_train: TrainConfig {
            lr_max: 1e-2,
            epochs: 4,
            ..TrainConfig::base_default()
        },
        meta_variants: variants,
        meta_train: TrainConfig {
            lr_max: 1e-3,
            epochs: 2,
            ..TrainConfig::meta_default()
        },
        meta_seeds: vec![1, 2],
        ..ExperimentConfig::reference(5)
    }
}

#[test]
fn report_structure_and_rrc() {
    let bundle = run_experiment(&small_config()).unwrap();
    assert_eq!(bundle.regimes.len(), 4);
    for r in &bundle.regimes {
        assert!(r.failure.is_none(), "{}: {:?}", r.regime.name(), r.failure);
        assert!(r.plan_audit.as_ref().unwrap().passed);
        assert!(r.leakage_audit.as_ref().unwrap().passed);
        assert_eq!(r.evaluations.len(), 2);
        for e in &r.evaluations {
            assert_eq!(e.base_models.len(), 3);
            assert_eq!(e.meta.len(), 4);
            let base = e.base_mean.score.mean;
            let mean_of_bases = e.base_models.iter().map(|b| b.score.score).sum::<f64>() / 3.0;
            assert!((base - mean_of_bases).abs() < 1e-9);
            let expect = 100.0 * (e.mean_ensemble.score.mean - base) / base;
            assert!((e.mean_ensemble.rrc.unwrap() - expect).abs() < 1e-9);
            for m in &e.meta {
                assert_eq!(m.report.runs.len(), 2);
                let expect = 100.0 * (m.report.score.mean - base) / base;
                assert!((m.report.rrc.unwrap() - expect).abs() < 1e-9);
            }
            let d = e.diversity.as_ref().unwrap();
            assert_eq!(d.disagreement.len(), 3);
        }
    }
    let id = bundle
        .regime(Regime::new(Strategy::Fixed, Granularity::PatientLevel))
        .unwrap();
    assert!(id.evaluation(TestSet::Ood).unwrap().n_samples > 0);
}

#[test]
fn runs_are_deterministic_and_mode_independent() {
    let a = run_experiment(&small_config()).unwrap();
    let b = run_experiment(&ExperimentConfig {
        parallel: true,
        ..small_config()
    })
    .unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn infeasible_regime_fails_alone() {
    let mut cfg = small_config();
    let DatasetSource::Synthetic {
        spec,
        test_samples_per_patient,
        ..
    } = &mut cfg.dataset
    else {
        unreachable!()
    };
    // Three equal patients can only give a base fraction of 2/3.
    spec.n_patients = 3;
    spec.samples_per_patient = (10, 10);
    *test_samples_per_patient = 10;
    cfg.meta_variants.truncate(1);
    let bundle = run_experiment(&cfg).unwrap();
    for r in &bundle.regimes {
        match r.regime.granularity {
            Granularity::PatientLevel => assert_eq!(r.failure.as_ref().unwrap().stage, "split"),
            Granularity::SampleLevel => assert!(r.failure.is_none(), "{:?}", r.failure),
        }
    }
    let table = stacklab::experiment::render_table(&bundle);
    assert!(table.contains("failed: split"));
}

#[test]
fn kfold_model_count_mismatch_is_rejected() {
    let cfg = ExperimentConfig {
        n_base_models: 4,
        ..small_config()
    };
    let err = run_experiment(&cfg).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn artifacts_and_reports_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: Some(dir.path().to_path_buf()),
        ..small_config()
    };
    let bundle = run_experiment(&cfg).unwrap();

    let paths: BTreeSet<&str> = bundle.artifacts.iter().map(|a| a.path.as_str()).collect();
    assert!(paths.contains("data/dataset.csv") && paths.contains("data/ood.csv"));
    for r in &bundle.regimes {
        let name = r.regime.name();
        for file in [
            "plan.json",
            "base_model_1.json",
            "stack_meta.csv",
            "stack_test_in_distribution.csv",
            "stack_test_ood.csv",
        ] {
            assert!(
                paths.contains(format!("{name}/{file}").as_str()),
                "{name}/{file}"
            );
        }
    }
    for a in &bundle.artifacts {
        assert_eq!(
            fnv_hex(&read(&dir.path().join(&a.path))),
            a.fingerprint,
            "{}",
            a.path
        );
    }

    let out = dir.path().join("report");
    let files = emit_report(&bundle, &out, &[ReportFormat::Json, ReportFormat::Table]).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|p| read(p)).collect();
    let reloaded = ReportBundle::load(&files[0]).unwrap();
    assert_eq!(reloaded, bundle);
    emit_report(&reloaded, &out, &[ReportFormat::Json, ReportFormat::Table]).unwrap();
    let second: Vec<Vec<u8>> = files.iter().map(|p| read(p)).collect();
    assert_eq!(first, second);

    let table = String::from_utf8(first[1].clone()).unwrap();
    for needle in [
        "P-level",
        "S-level",
        "Fixed",
        "3-Fold",
        "Mean-ensemble",
        "2-Hidden",
        "Fusion",
        "Disagreement",
    ] {
        assert!(table.contains(needle), "{needle}");
    }
}

#[test]
fn shipped_reference_config_matches_code() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference.json");
    assert_eq!(
        ExperimentConfig::load(path).unwrap(),
        ExperimentConfig::reference(1)
    );
}
