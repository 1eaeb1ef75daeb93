use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn stacklab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stacklab"))
        .args(args)
        .current_dir(dir)
        .env_remove("STACKLAB_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = stacklab(dir, args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SPEC: &str = r#"{
    "n_patients": 24, "samples_per_patient": [4, 6], "class_priors": [0.4, 0.2, 0.2, 0.2],
    "feature_dim": 6, "class_separation": 3.0, "patient_effect_std": 0.5, "noise_std": 1.0, "seed": 11
}"#;

fn workspace() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().to_path_buf();
    std::fs::write(path.join("spec.json"), SPEC).unwrap();
    ok(
        &path,
        &[
            "generate",
            "--spec",
            "spec.json",
            "--out",
            "data.csv",
            "--ood",
            "ood.csv",
            "--fresh-patients",
            "10",
        ],
    );
    (dir, path)
}

#[test]
fn staged_pipeline() {
    let (_tmp, d) = workspace();
    ok(
        &d,
        &[
            "split",
            "--data",
            "data.csv",
            "--strategy",
            "kfold",
            "--k",
            "3",
            "--granularity",
            "patient",
            "--seed",
            "4",
            "--out",
            "plan.json",
        ],
    );
    for i in 1..=3 {
        let (idx, out) = (i.to_string(), format!("m{i}.json"));
        ok(
            &d,
            &[
                "train-base",
                "--data",
                "data.csv",
                "--plan",
                "plan.json",
                "--model-index",
                &idx,
                "--seed",
                &idx,
                "--hidden",
                "8",
                "--epochs",
                "5",
                "--lr",
                "0.01",
                "--out",
                &out,
            ],
        );
    }
    let models = ["m1.json", "m2.json", "m3.json"];
    let mut args = vec!["extract", "--models"];
    args.extend(models);
    ok(
        &d,
        &[
            &args[..],
            &[
                "--data",
                "data.csv",
                "--selector",
                "meta",
                "--plan",
                "plan.json",
                "--out",
                "meta_stack.csv",
            ],
        ]
        .concat(),
    );
    ok(
        &d,
        &[
            &args[..],
            &[
                "--data",
                "data.csv",
                "--selector",
                "test",
                "--out",
                "test_stack.csv",
            ],
        ]
        .concat(),
    );

    let stack = std::fs::read_to_string(d.join("meta_stack.csv")).unwrap();
    assert!(stack.starts_with("sample_id,model_id,logit_0,logit_1,logit_2,logit_3"));

    ok(
        &d,
        &[
            "train-meta",
            "--variant",
            "2h",
            "--stack",
            "meta_stack.csv",
            "--data",
            "data.csv",
            "--seed",
            "1",
            "--plan",
            "plan.json",
            "--epochs",
            "2",
            "--out",
            "meta.json",
        ],
    );
    let out = ok(
        &d,
        &[
            "evaluate",
            "--meta",
            "meta.json",
            "--stack",
            "test_stack.csv",
            "--data",
            "data.csv",
            "--out",
            "scores.json",
        ],
    );
    assert!(out.contains("Score"));
    let scores: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("scores.json")).unwrap()).unwrap();
    let (sp, se, score) = (
        scores["sp"].as_f64().unwrap(),
        scores["se"].as_f64().unwrap(),
        scores["score"].as_f64().unwrap(),
    );
    assert!((score - (sp + se) / 2.0).abs() < 1e-12);

    ok(
        &d,
        &["evaluate", "--model", "m1.json", "--data", "data.csv"],
    );

    // The test stack is not the meta split: the plan check refuses it.
    let leak = stacklab(
        &d,
        &[
            "train-meta",
            "--variant",
            "1h",
            "--stack",
            "test_stack.csv",
            "--data",
            "data.csv",
            "--seed",
            "1",
            "--plan",
            "plan.json",
        ],
    );
    assert_eq!(leak.status.code(), Some(2));
}

#[test]
fn evaluate_prediction_file() {
    let (_tmp, d) = workspace();
    let data = std::fs::read_to_string(d.join("data.csv")).unwrap();
    // Predict "normal" for every test row: specificity 100, sensitivity 0.
    let mut preds = String::from("sample_id,prediction\n");
    for line in data.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols[3] == "test" {
            preds += &format!("{},normal\n", cols[0]);
        }
    }
    std::fs::write(d.join("preds.csv"), preds).unwrap();
    let out = ok(
        &d,
        &["evaluate", "--preds", "preds.csv", "--data", "data.csv"],
    );
    assert!(out.contains("SP 100.00  SE 0.00  Score 50.00"), "{out}");
}

#[test]
fn run_and_report() {
    let (_tmp, d) = workspace();
    let config = r#"{
        "id": "cli",
        "dataset": {"source": "file", "path": "data.csv",
                    "taxonomy": {"classes": ["normal", "crackle", "wheeze", "both"], "normal_id": 0}},
        "regimes": [{"strategy": "fixed", "granularity": "sample_level"},
                    {"strategy": "kfold-3", "granularity": "patient_level"}],
        "n_base_models": 3,
        "split_seed": 1,
        "base_hidden": [8],
        "base_train": {"lr_max": 0.01, "epochs": 3},
        "meta_variants": [{"kind": "logit_2h", "hidden": 16}],
        "meta_train": {"epochs": 2},
        "meta_seeds": [1, 2]
    }"#;
    std::fs::write(d.join("config.json"), config).unwrap();
    ok(&d, &["run", "--config", "config.json", "--out", "out"]);
    assert!(d.join("out/report.json").exists() && d.join("out/report.txt").exists());
    assert!(d.join("out/kfold-3_patient_level/plan.json").exists());

    let table = ok(
        &d,
        &["report", "--bundle", "out/report.json", "--format", "table"],
    );
    assert_eq!(
        table,
        std::fs::read_to_string(d.join("out/report.txt")).unwrap()
    );
    assert!(table.contains("2-Hidden"));
    let json = ok(
        &d,
        &["report", "--bundle", "out/report.json", "--format", "json"],
    );
    assert_eq!(
        json,
        std::fs::read_to_string(d.join("out/report.json")).unwrap()
    );
}

#[test]
fn seed_env_overrides_generation() {
    let (_tmp, d) = workspace();
    let run = |seed: Option<&str>, out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_stacklab"));
        cmd.args(["generate", "--spec", "spec.json", "--out", out])
            .current_dir(&d)
            .env_remove("STACKLAB_SEED");
        if let Some(s) = seed {
            cmd.env("STACKLAB_SEED", s);
        }
        cmd.output().unwrap()
    };
    assert!(run(None, "a.csv").status.success());
    let logged = run(Some("99"), "b.csv");
    assert!(logged.status.success());
    assert!(String::from_utf8_lossy(&logged.stderr).contains("STACKLAB_SEED=99"));
    assert!(run(Some("11"), "c.csv").status.success());
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_ne!(read("a.csv"), read("b.csv"));
    assert_eq!(read("a.csv"), read("c.csv"));
    assert_eq!(run(Some("abc"), "e.csv").status.code(), Some(2));
}

#[test]
fn exit_codes() {
    let (_tmp, d) = workspace();
    // Bad flag value and invalid spec are validation failures.
    assert_eq!(
        stacklab(
            &d,
            &[
                "split",
                "--data",
                "data.csv",
                "--strategy",
                "random",
                "--granularity",
                "patient",
                "--seed",
                "1",
                "--out",
                "p.json"
            ]
        )
        .status
        .code(),
        Some(2)
    );
    std::fs::write(d.join("bad.json"), SPEC.replace("[0.4,", "[0.9,")).unwrap();
    assert_eq!(
        stacklab(&d, &["generate", "--spec", "bad.json", "--out", "x.csv"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        stacklab(
            &d,
            &[
                "split",
                "--data",
                "data.csv",
                "--strategy",
                "kfold",
                "--k",
                "3",
                "--granularity",
                "patient",
                "--seed",
                "1",
                "--base-fraction",
                "1.5",
                "--out",
                "p.json"
            ]
        )
        .status
        .code(),
        Some(2)
    );

    // A regime that cannot be split fails the run stage but still reports.
    let tiny = SPEC
        .replace("\"n_patients\": 24", "\"n_patients\": 3")
        .replace("[4, 6]", "[10, 10]");
    std::fs::write(d.join("tiny.json"), tiny).unwrap();
    ok(
        &d,
        &[
            "generate",
            "--spec",
            "tiny.json",
            "--out",
            "tiny.csv",
            "--test-per-patient",
            "10",
        ],
    );
    let config = r#"{
        "id": "tiny",
        "dataset": {"source": "file", "path": "tiny.csv",
                    "taxonomy": {"classes": ["normal", "crackle", "wheeze", "both"], "normal_id": 0}},
        "regimes": [{"strategy": "fixed", "granularity": "patient_level"},
                    {"strategy": "fixed", "granularity": "sample_level"}],
        "n_base_models": 2, "base_hidden": [4], "base_train": {"epochs": 1},
        "meta_variants": [{"kind": "logit_1h", "hidden": 4}], "meta_train": {"epochs": 1}, "meta_seeds": [1]
    }"#;
    std::fs::write(d.join("tiny_config.json"), config).unwrap();
    let out = stacklab(
        &d,
        &["run", "--config", "tiny_config.json", "--out", "tiny_out"],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixed_patient_level (split)"));
    assert!(d.join("tiny_out/report.txt").exists());
}
