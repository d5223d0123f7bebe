//! File protocol for out-of-process methods.
//!
//! For each (experiment, split) cell the runner materializes a working
//! directory:
//!
//! ```text
//! workdir/
//!   train_labeled.csv     all labeled rows, with __domain_id, __label_time
//!   unlabeled_<d>.csv     per domain: observed rows whose labels are pending
//!   test.csv              target test rows, labels withheld
//!   meta.json             schema, split index, timeline, seeds
//! ```
//!
//! The external command (template with `{workdir}` substituted, run with the
//! working directory as cwd) must write `scores.csv`: one decimal score per
//! line, row-aligned with `test.csv`.

use serde::{Deserialize, Serialize};
use std::path::Path;
use std::process::Command;

use crate::dataset::{write_csv, CsvWriteOptions};
use crate::error::{Error, Result};
use crate::models::MethodSpec;
use crate::schedule::{SplitView, Timeline};
use crate::schema::Schema;

pub const TRAIN_FILE: &str = "train_labeled.csv";
pub const TEST_FILE: &str = "test.csv";
pub const META_FILE: &str = "meta.json";
pub const SCORES_FILE: &str = "scores.csv";

pub fn unlabeled_file(domain: usize) -> String {
    format!("unlabeled_{domain}.csv")
}

/// Sidecar metadata shipped to the external method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolMeta {
    pub schema: Schema,
    /// 1-based split index `a`.
    pub split: usize,
    /// `[t_a, t_end)` test window.
    pub t_start: f64,
    pub t_end: f64,
    pub timeline: Vec<f64>,
    pub target_domain: usize,
    /// Derived seed for this (experiment, method, split) cell; external
    /// methods should use it for their own reproducibility.
    pub cell_seed: u64,
    pub score_file: String,
}

/// Write the protocol files for one cell.
pub fn write_workdir(
    view: &SplitView<'_>,
    timeline: &Timeline,
    workdir: &Path,
    cell_seed: u64,
) -> Result<()> {
    std::fs::create_dir_all(workdir).map_err(|e| Error::io(workdir, e))?;
    let schema = view.domain_set().schema();

    let train_path = workdir.join(TRAIN_FILE);
    let file = std::fs::File::create(&train_path).map_err(|e| Error::io(&train_path, e))?;
    let mut rows = (0..view.n_domains()).flat_map(|d| view.labeled(d).map(move |i| (d, i)));
    write_csv(file, schema, &mut rows, CsvWriteOptions::default())?;

    for d in 0..view.n_domains() {
        let path = workdir.join(unlabeled_file(d));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut rows = view.unlabeled(d).map(move |i| (d, i));
        write_csv(
            file,
            schema,
            &mut rows,
            CsvWriteOptions {
                include_label: false,
                include_label_time: false,
                include_domain_id: true,
            },
        )?;
    }

    let test_path = workdir.join(TEST_FILE);
    let file = std::fs::File::create(&test_path).map_err(|e| Error::io(&test_path, e))?;
    let target = view.target_index();
    let mut rows = view.test_rows().map(move |i| (target, i));
    write_csv(
        file,
        schema,
        &mut rows,
        CsvWriteOptions {
            include_label: false,
            include_label_time: false,
            include_domain_id: true,
        },
    )?;

    let meta = ProtocolMeta {
        schema: schema.clone(),
        split: view.step,
        t_start: view.start,
        t_end: view.end,
        timeline: timeline.timestamps.clone(),
        target_domain: target,
        cell_seed,
        score_file: SCORES_FILE.to_string(),
    };
    let meta_path = workdir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta)?;
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

pub fn read_meta(workdir: &Path) -> Result<ProtocolMeta> {
    let path = workdir.join(META_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Read and validate `scores.csv`: exactly `expected` lines, one finite score
/// in [0, 1] per line.
pub fn read_scores(workdir: &Path, expected: usize) -> Result<Vec<f64>> {
    let path = workdir.join(SCORES_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut scores = Vec::with_capacity(expected);
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let v: f64 = trimmed.parse().map_err(|_| {
            Error::Protocol(format!("scores.csv line {}: `{trimmed}` is not a number", i + 1))
        })?;
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::Protocol(format!(
                "scores.csv line {}: score {v} outside [0,1]",
                i + 1
            )));
        }
        scores.push(v);
    }
    if scores.len() != expected {
        return Err(Error::Protocol(format!(
            "expected {expected} scores, got {}",
            scores.len()
        )));
    }
    Ok(scores)
}

/// Prepare the workdir, invoke the external command, and collect one score
/// per test row.
pub fn run_external(
    spec: &MethodSpec,
    view: &SplitView<'_>,
    timeline: &Timeline,
    workdir: &Path,
    cell_seed: u64,
) -> Result<Vec<f64>> {
    let command = match &spec.model {
        crate::models::ModelKind::External { command } => command,
        _ => {
            return Err(Error::Config(format!(
                "method `{}` has no external command",
                spec.name
            )))
        }
    };
    write_workdir(view, timeline, workdir, cell_seed)?;
    // the command runs with the workdir as cwd, so the substituted path must
    // be absolute
    let workdir = &std::path::absolute(workdir).map_err(|e| Error::io(workdir, e))?;

    let resolved = command.replace("{workdir}", &workdir.display().to_string());
    log::debug!("external method `{}`: {resolved}", spec.name);
    let output = Command::new("sh")
        .arg("-c")
        .arg(&resolved)
        .current_dir(workdir)
        .output()
        .map_err(|e| Error::io(workdir, e))?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let tail: String = stderr
            .lines()
            .rev()
            .take(10)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect::<Vec<_>>()
            .join("\n");
        return Err(Error::ExternalMethod {
            status: output
                .status
                .code()
                .map(|c| c.to_string())
                .unwrap_or_else(|| "signal".into()),
            detail: tail,
        });
    }
    read_scores(workdir, view.n_test())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::BatchPlan;
    use crate::dataset::{Dataset, Instance};
    use crate::models::{ModelKind, Selection};
    use crate::sampler::DomainSet;
    use crate::schedule::{build_timeline, split_at, SchedulePreset};
    use crate::schema::{FeatureDef, FeatureKind};
    use std::sync::Arc;

    fn schema() -> Schema {
        Schema {
            features: vec![
                FeatureDef {
                    name: "x".into(),
                    kind: FeatureKind::Numerical,
                },
                FeatureDef {
                    name: "c".into(),
                    kind: FeatureKind::Categorical {
                        vocabulary: vec!["A".into(), "B, with comma".into()],
                    },
                },
            ],
            label_column: "y".into(),
            event_time_column: "t".into(),
            time_unit: "month".into(),
        }
    }

    fn view_fixture() -> (DomainSet, Timeline) {
        let s = Arc::new(schema());
        let rows = |offset: f64, n: usize| -> Vec<Instance> {
            (0..n)
                .map(|i| Instance {
                    numeric_values: vec![i as f64 * 0.31 - 1.0],
                    category_codes: vec![i % 2],
                    label: i % 3 == 0,
                    event_time: offset + i as f64 * 8.0 / n as f64,
                    label_time: offset + i as f64 * 8.0 / n as f64 + 1.0,
                    row_id: i as u64,
                })
                .collect()
        };
        let mut target = Dataset::new(s.clone(), rows(0.0, 64));
        target.domain_id = 0;
        let mut source = Dataset::new(s, rows(0.0, 48));
        source.domain_id = 1;
        let anchors = vec![target.instances[0].clone(), source.instances[0].clone()];
        let set = DomainSet {
            domains: vec![target, source],
            anchors,
            target_index: 0,
        };
        let tl = build_timeline(&SchedulePreset::Baf.resolve(0.0)).unwrap();
        (set, tl)
    }

    fn external_spec(command: &str) -> MethodSpec {
        MethodSpec {
            name: "ext".into(),
            selection: Selection::External,
            model: ModelKind::External {
                command: command.into(),
            },
            batch: BatchPlan::default(),
            seed: 0,
        }
    }

    #[test]
    fn stub_returning_half_per_row_is_accepted() {
        let (set, tl) = view_fixture();
        let view = split_at(&set, &tl, 2).unwrap();
        assert!(view.n_test() > 0);
        let dir = tempfile::tempdir().unwrap();
        // one 0.5 per data row of test.csv (skip the header)
        let spec = external_spec(
            "n=$(wc -l < test.csv); i=1; while [ $i -lt $n ]; do echo 0.5; i=$((i+1)); done > scores.csv",
        );
        let scores = run_external(&spec, &view, &tl, dir.path(), 7).unwrap();
        assert_eq!(scores.len(), view.n_test());
        assert!(scores.iter().all(|s| *s == 0.5));
    }

    #[test]
    fn too_few_scores_is_a_protocol_error() {
        let (set, tl) = view_fixture();
        let view = split_at(&set, &tl, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let spec = external_spec("echo 0.5 > scores.csv");
        assert!(matches!(
            run_external(&spec, &view, &tl, dir.path(), 7),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn out_of_range_score_is_a_protocol_error() {
        let (set, tl) = view_fixture();
        let view = split_at(&set, &tl, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let spec = external_spec(
            "n=$(wc -l < test.csv); i=1; while [ $i -lt $n ]; do echo 1.5; i=$((i+1)); done > scores.csv",
        );
        assert!(matches!(
            run_external(&spec, &view, &tl, dir.path(), 7),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn failing_command_reports_exit_and_stderr() {
        let (set, tl) = view_fixture();
        let view = split_at(&set, &tl, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let spec = external_spec("echo boom >&2; exit 3");
        match run_external(&spec, &view, &tl, dir.path(), 7) {
            Err(Error::ExternalMethod { status, detail }) => {
                assert_eq!(status, "3");
                assert!(detail.contains("boom"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn workdir_files_are_complete_and_labels_withheld_from_test() {
        let (set, tl) = view_fixture();
        let view = split_at(&set, &tl, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_workdir(&view, &tl, dir.path(), 99).unwrap();

        let meta = read_meta(dir.path()).unwrap();
        assert_eq!(meta.split, 3);
        assert_eq!(meta.cell_seed, 99);
        assert_eq!(meta.timeline, tl.timestamps);

        let test_text = std::fs::read_to_string(dir.path().join(TEST_FILE)).unwrap();
        let header = test_text.lines().next().unwrap();
        assert!(!header.split(',').any(|c| c == "y"));
        assert_eq!(test_text.lines().count() - 1, view.n_test());

        let train_text = std::fs::read_to_string(dir.path().join(TRAIN_FILE)).unwrap();
        let header = train_text.lines().next().unwrap();
        assert!(header.contains("__domain_id"));
        assert!(header.split(',').any(|c| c == "y"));
        let n_labeled: usize = (0..2).map(|d| view.n_labeled(d)).sum();
        assert_eq!(train_text.lines().count() - 1, n_labeled);

        for d in 0..2 {
            let text = std::fs::read_to_string(dir.path().join(unlabeled_file(d))).unwrap();
            assert_eq!(text.lines().count() - 1, view.n_unlabeled(d));
            assert!(!text.lines().next().unwrap().split(',').any(|c| c == "y"));
        }
    }
}
