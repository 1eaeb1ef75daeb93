use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::Regime;
use super::run::{Evaluation, RegimeReport, ReportBundle, TestSet};
use crate::error::{Error, Result};
use crate::metrics::ScoreReport;
use crate::split::{Granularity, Strategy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Table,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Json => "report.json",
            ReportFormat::Table => "report.txt",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" | "txt" => Ok(ReportFormat::Table),
            _ => Err(Error::invalid(
                "report format",
                format!("{s:?} is not json or table"),
            )),
        }
    }
}

pub fn render(bundle: &ReportBundle, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = bundle.to_json()?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Table => Ok(render_table(bundle)),
    }
}

/// Writes one file per format into `dir` and returns their paths.
pub fn emit_report(
    bundle: &ReportBundle,
    dir: impl AsRef<Path>,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let mut written = Vec::new();
    for &format in formats {
        let path = dir.join(format.file_name());
        std::fs::write(&path, render(bundle, format)?).map_err(|e| Error::file(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

const MODEL_COL: usize = 20;
const SCORE_COL: usize = 17;
const RRC_COL: usize = 8;

fn granularity_label(g: Granularity) -> &'static str {
    match g {
        Granularity::PatientLevel => "P-level",
        Granularity::SampleLevel => "S-level",
    }
}

fn strategy_label(s: Strategy) -> String {
    match s {
        Strategy::Fixed => "Fixed".into(),
        Strategy::KFold { k } => format!("{k}-Fold"),
    }
}

fn score_cell(r: &ScoreReport) -> String {
    if r.single_run {
        format!("{:.2}", r.score.mean)
    } else {
        format!("{:.2} ± {:.2}", r.score.mean, r.score.std)
    }
}

fn rrc_cell(r: &ScoreReport) -> String {
    r.rrc.map_or_else(|| "--".into(), |v| format!("{v:.2}"))
}

fn row(out: &mut String, label: &str, cells: &[(String, String)]) {
    let _ = write!(out, "{label:<MODEL_COL$}");
    for (score, rrc) in cells {
        let _ = write!(out, "  {score:<SCORE_COL$}{rrc:>RRC_COL$}");
    }
    out.push('\n');
}

/// Text tables with one block per granularity and test set: model rows by
/// strategy columns, each holding Score mean ± std and RRC.
pub fn render_table(bundle: &ReportBundle) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Experiment {}", bundle.experiment_id);
    let _ = writeln!(out, "Dataset fingerprint {}", bundle.dataset_fingerprint);

    let mut strategies: Vec<Strategy> = Vec::new();
    let mut granularities: Vec<Granularity> = Vec::new();
    for r in &bundle.regimes {
        if !strategies.contains(&r.regime.strategy) {
            strategies.push(r.regime.strategy);
        }
        if !granularities.contains(&r.regime.granularity) {
            granularities.push(r.regime.granularity);
        }
    }
    strategies.sort_by_key(|s| matches!(s, Strategy::KFold { .. }));
    granularities.sort_by_key(|g| matches!(g, Granularity::SampleLevel));

    for test_set in [TestSet::InDistribution, TestSet::Ood] {
        let any = bundle
            .regimes
            .iter()
            .any(|r| r.evaluation(test_set).is_some());
        if !any {
            continue;
        }
        let title = match test_set {
            TestSet::InDistribution => "In-distribution test",
            TestSet::Ood => "Out-of-distribution test",
        };
        let _ = writeln!(out, "\n{title}");
        for &g in &granularities {
            let cols: Vec<(Strategy, Option<&RegimeReport>)> = strategies
                .iter()
                .map(|&s| (s, bundle.regime(Regime::new(s, g))))
                .collect();
            out.push('\n');
            let header: Vec<(String, String)> = cols
                .iter()
                .map(|(s, _)| (strategy_label(*s), String::new()))
                .collect();
            row(&mut out, granularity_label(g), &header);
            let sub: Vec<(String, String)> = cols
                .iter()
                .map(|_| ("Score".into(), "RRC".into()))
                .collect();
            row(&mut out, "Model", &sub);

            let evals: Vec<std::result::Result<&Evaluation, String>> = cols
                .iter()
                .map(|(_, r)| match r {
                    None => Err("n/a".into()),
                    Some(r) => match (&r.failure, r.evaluation(test_set)) {
                        (Some(f), _) => Err(format!("failed: {}", f.stage)),
                        (None, Some(e)) => Ok(e),
                        (None, None) => Err("n/a".into()),
                    },
                })
                .collect();
            let cells =
                |pick: &dyn Fn(&Evaluation) -> Option<(String, String)>| -> Vec<(String, String)> {
                    evals
                        .iter()
                        .map(|e| match e {
                            Ok(e) => pick(e).unwrap_or_else(|| ("n/a".into(), String::new())),
                            Err(msg) => (msg.clone(), String::new()),
                        })
                        .collect()
                };
            row(
                &mut out,
                "Base models (mean)",
                &cells(&|e| Some((score_cell(&e.base_mean), "--".into()))),
            );
            row(
                &mut out,
                "Mean-ensemble",
                &cells(&|e| Some((score_cell(&e.mean_ensemble), rrc_cell(&e.mean_ensemble)))),
            );
            let mut kinds = Vec::new();
            for e in evals.iter().flatten() {
                for m in &e.meta {
                    if !kinds.contains(&m.variant.kind) {
                        kinds.push(m.variant.kind);
                    }
                }
            }
            kinds.sort();
            for kind in kinds {
                row(
                    &mut out,
                    kind.label(),
                    &cells(&|e| e.meta_report(kind).map(|r| (score_cell(r), rrc_cell(r)))),
                );
            }
            row(
                &mut out,
                "Disagreement",
                &cells(&|e| {
                    e.diversity
                        .as_ref()
                        .map(|d| (format!("{:.4}", d.mean_disagreement), String::new()))
                }),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn format_names() {
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert_eq!("txt".parse::<ReportFormat>().unwrap(), ReportFormat::Table);
        assert!("csv".parse::<ReportFormat>().is_err());
        assert_eq!(ReportFormat::Table.file_name(), "report.txt");
    }

    #[test]
    fn cells() {
        let run = crate::metrics::RunScore {
            sp: 60.0,
            se: 40.0,
            score: 50.0,
        };
        let one = crate::metrics::aggregate_runs(&[run]).unwrap();
        assert_eq!(score_cell(&one), "50.00");
        assert_eq!(rrc_cell(&one), "--");
        let two =
            crate::metrics::aggregate_runs(&[run, crate::metrics::RunScore { score: 52.0, ..run }])
                .unwrap()
                .with_rrc(50.0)
                .unwrap();
        assert_eq!(score_cell(&two), "51.00 ± 1.41");
        assert_eq!(rrc_cell(&two), "2.00");
    }
}
