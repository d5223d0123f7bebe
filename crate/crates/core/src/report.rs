//! Plot-ready report emission.
//!
//! `emit_report` renders a results store into the output directory:
//!
//! * `records.csv`   — flat per-cell records in canonical order
//! * `summary.csv`   — per (method, split) median / quartiles / mean / n
//! * `stats.json`    — the significance report
//! * `plotdata.json` — per-method series for a line-plot-with-bands renderer
//! * `significance.txt` — human-readable pairwise table
//!
//! Every float is written as decimal text with 17 significant digits, so the
//! files round-trip bit-exactly and two runs with the same master seed are
//! byte-identical.

use serde::Serialize;
use std::collections::BTreeSet;
use std::path::Path;

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};
use crate::eval::{CellStatus, EvalRecord};
use crate::experiment::{record_to_fields, ResultsStore, RECORD_HEADER};

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const STATS_FILE: &str = "stats.json";
pub const PLOTDATA_FILE: &str = "plotdata.json";
pub const SIGNIFICANCE_FILE: &str = "significance.txt";

/// JSON serialization with every f64 written as 17-significant-digit decimal
/// text.
pub fn to_json_17<T: Serialize>(value: &T) -> Result<String> {
    struct SigDigits;
    impl serde_json::ser::Formatter for SigDigits {
        fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()>
        where
            W: ?Sized + std::io::Write,
        {
            write!(writer, "{value:.16e}")
        }
    }
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

/// Quantile by linear interpolation between order statistics (the common
/// plotting convention). `values` must be sorted ascending and nonempty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&p));
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub split: usize,
    pub n: usize,
    pub median: Option<f64>,
    pub q25: Option<f64>,
    pub q75: Option<f64>,
    pub mean: Option<f64>,
}

/// Aggregate recall values per (method, split). Methods appear for every
/// split observed anywhere in the suite; splits where a method has no values
/// carry `n = 0` and null aggregates.
pub fn summarize(records: &[EvalRecord], method_order: &[String]) -> Vec<SummaryRow> {
    let splits: BTreeSet<usize> = records.iter().map(|r| r.split).collect();
    let mut rows = Vec::new();
    for method in method_order {
        for &split in &splits {
            let mut values: Vec<f64> = records
                .iter()
                .filter(|r| &r.method == method && r.split == split)
                .filter_map(|r| r.recall)
                .collect();
            values.sort_by(f64::total_cmp);
            if values.is_empty() {
                rows.push(SummaryRow {
                    method: method.clone(),
                    split,
                    n: 0,
                    median: None,
                    q25: None,
                    q75: None,
                    mean: None,
                });
            } else {
                rows.push(SummaryRow {
                    method: method.clone(),
                    split,
                    n: values.len(),
                    median: Some(quantile(&values, 0.5)),
                    q25: Some(quantile(&values, 0.25)),
                    q75: Some(quantile(&values, 0.75)),
                    mean: Some(values.iter().sum::<f64>() / values.len() as f64),
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, Serialize)]
struct PlotPoint {
    split: usize,
    /// Time since the target domain appeared, in schedule units.
    elapsed: f64,
    n: usize,
    median: Option<f64>,
    q25: Option<f64>,
    q75: Option<f64>,
    mean: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct PlotSeries {
    method: String,
    points: Vec<PlotPoint>,
}

#[derive(Debug, Clone, Serialize)]
struct PlotData {
    fpr_budget: f64,
    q: f64,
    time_unit: String,
    series: Vec<PlotSeries>,
}

/// Render every report file into `out_dir`.
pub fn emit_report(store: &ResultsStore, out_dir: &Path) -> Result<()> {
    if store.records.is_empty() {
        return Err(Error::EmptyInput("results store has no records".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config = &store.manifest.config;
    let method_order = config.method_order();

    // records.csv
    let records_path = out_dir.join(RECORDS_FILE);
    {
        let file = std::fs::File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(RECORD_HEADER).map_err(|e| Error::csv(&records_path, e))?;
        for r in &store.records {
            w.write_record(record_to_fields(r))
                .map_err(|e| Error::csv(&records_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&records_path, e))?;
    }

    // summary.csv
    let rows = summarize(&store.records, &method_order);
    let summary_path = out_dir.join(SUMMARY_FILE);
    {
        let file = std::fs::File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["method", "split", "n", "median", "q25", "q75", "mean"])
            .map_err(|e| Error::csv(&summary_path, e))?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for row in &rows {
            w.write_record([
                row.method.clone(),
                row.split.to_string(),
                row.n.to_string(),
                opt(row.median),
                opt(row.q25),
                opt(row.q75),
                opt(row.mean),
            ])
            .map_err(|e| Error::csv(&summary_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&summary_path, e))?;
    }

    // stats.json
    let stats_path = out_dir.join(STATS_FILE);
    std::fs::write(&stats_path, to_json_17(&store.stats)?).map_err(|e| Error::io(&stats_path, e))?;

    // plotdata.json
    let delta_t = config.schedule.delta_t()?;
    let schema_unit = {
        // prefer the resolved schema recorded through the config path; the
        // time unit is cosmetic so a missing schema file is not fatal here
        crate::schema::Schema::from_json_file(&config.schema)
            .map(|s| s.time_unit)
            .unwrap_or_default()
    };
    let mut series = Vec::new();
    for method in &method_order {
        let points: Vec<PlotPoint> = rows
            .iter()
            .filter(|r| &r.method == method)
            .map(|r| PlotPoint {
                split: r.split,
                elapsed: (r.split - 1) as f64 * delta_t,
                n: r.n,
                median: r.median,
                q25: r.q25,
                q75: r.q75,
                mean: r.mean,
            })
            .collect();
        series.push(PlotSeries {
            method: method.clone(),
            points,
        });
    }
    let plot = PlotData {
        fpr_budget: config.fpr_budget,
        q: config.q,
        time_unit: schema_unit,
        series,
    };
    let plot_path = out_dir.join(PLOTDATA_FILE);
    std::fs::write(&plot_path, to_json_17(&plot)?).map_err(|e| Error::io(&plot_path, e))?;

    // significance.txt
    let sig_path = out_dir.join(SIGNIFICANCE_FILE);
    let mut text = String::new();
    text.push_str(&format!(
        "pairwise significance (two-sided paired t-tests, BH FDR q = {}, {} family)\n",
        store.stats.q,
        match store.stats.family {
            crate::eval::FdrFamily::Pooled => "pooled",
            crate::eval::FdrFamily::PerSplit => "per-split",
        }
    ));
    text.push_str(&format!("grouping rule: {}\n", store.stats.grouping_rule));
    for split in &store.stats.splits {
        text.push_str(&format!("\nsplit {}\n", split.split));
        for m in &split.methods {
            text.push_str(&format!(
                "  {:<24} mean recall {:.4}  (n = {})\n",
                m.method, m.mean_recall, m.n
            ));
        }
        for p in &split.pairs {
            text.push_str(&format!(
                "  {} vs {}: p = {:.6e}{}\n",
                p.method_a,
                p.method_b,
                p.p_value,
                if p.significant { "  *" } else { "" }
            ));
        }
        let groups: Vec<String> = split
            .groups
            .iter()
            .map(|g| format!("[{}]", g.join(" ")))
            .collect();
        text.push_str(&format!("  groups: {}\n", groups.join(" ")));
    }
    std::fs::write(&sig_path, text).map_err(|e| Error::io(&sig_path, e))?;

    // failed cells are data; surface them in the log
    let failed = store
        .records
        .iter()
        .filter(|r| r.status == CellStatus::Failed)
        .count();
    if failed > 0 {
        log::warn!("{failed} cells failed; see the diagnostic column of records.csv");
    }
    Ok(())
}
