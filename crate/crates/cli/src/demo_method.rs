//! Reference implementation of the external-model protocol.
//!
//! Reads the prepared working directory (`train_labeled.csv`,
//! `unlabeled_<d>.csv`, `test.csv`, `meta.json`), trains the native model on
//! all labeled data with the same 70/30 per-domain holdout rule as the
//! in-process path, and writes `scores.csv` with one score per test row.
//!
//! Given the same hyperparameters and the cell seed from `meta.json`, this
//! reproduces the in-process all-labeled model exactly; it doubles as an
//! integration check for the protocol and as a template for wiring real
//! out-of-process methods.

use anyhow::{bail, Context};
use clap::Args;
use std::path::{Path, PathBuf};

use driftbench_core::batch::BatchPlan;
use driftbench_core::dataset::{fmt_f64, Instance, DOMAIN_ID_COLUMN, LABEL_TIME_COLUMN};
use driftbench_core::models::external::{read_meta, SCORES_FILE, TEST_FILE, TRAIN_FILE};
use driftbench_core::models::{
    train, DomainTrainData, MethodSpec, ModelKind, SelectedData, Selection, TrainParams,
    TRAIN_FRACTION,
};
use driftbench_core::schema::{FeatureKind, Schema};

#[derive(Args)]
pub struct DemoMethodArgs {
    /// Prepared protocol directory (defaults to the current directory, which
    /// is where the runner invokes external commands).
    #[arg(long, default_value = ".")]
    workdir: PathBuf,
    /// Hidden layer sizes, comma separated; empty = logistic regression.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 30)]
    max_epochs: usize,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.10)]
    positive_ratio: f64,
    #[arg(long, default_value_t = 0)]
    batch_seed: u64,
}

/// Parse a protocol CSV into (domain_id, Instance) rows, preserving file
/// order. Only the columns named by the schema plus `__domain_id` are read.
fn parse_rows(
    path: &Path,
    schema: &Schema,
    with_labels: bool,
) -> anyhow::Result<Vec<(usize, Instance)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> anyhow::Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} lacks column `{name}`", path.display()))
    };
    let feature_cols: Vec<usize> = schema
        .features
        .iter()
        .map(|f| col(&f.name))
        .collect::<anyhow::Result<_>>()?;
    let time_col = col(&schema.event_time_column)?;
    let domain_col = col(DOMAIN_ID_COLUMN)?;
    let label_col = if with_labels {
        Some(col(&schema.label_column)?)
    } else {
        None
    };
    let label_time_col = headers.iter().position(|h| h == LABEL_TIME_COLUMN);

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |c: usize| record.get(c).unwrap_or("");
        let mut numeric_values = Vec::with_capacity(schema.n_numerical());
        let mut category_codes = Vec::with_capacity(schema.n_categorical());
        for (f, def) in schema.features.iter().enumerate() {
            let raw = cell(feature_cols[f]);
            match &def.kind {
                FeatureKind::Numerical => numeric_values.push(
                    raw.trim()
                        .parse::<f64>()
                        .with_context(|| format!("row {idx}: bad numeric `{raw}`"))?,
                ),
                FeatureKind::Categorical { .. } => {
                    category_codes.push(schema.encode_category(&def.name, raw)?)
                }
            }
        }
        let event_time: f64 = cell(time_col).trim().parse()?;
        let label = match label_col {
            Some(c) => match cell(c).trim() {
                "1" => true,
                "0" => false,
                other => bail!("row {idx}: bad label `{other}`"),
            },
            None => false,
        };
        let label_time = match label_time_col {
            Some(c) => cell(c).trim().parse().unwrap_or(event_time),
            None => event_time,
        };
        let domain: usize = cell(domain_col).trim().parse()?;
        rows.push((
            domain,
            Instance {
                numeric_values,
                category_codes,
                label,
                event_time,
                label_time,
                row_id: idx as u64,
            },
        ));
    }
    Ok(rows)
}

pub fn run(args: DemoMethodArgs) -> anyhow::Result<()> {
    let meta = read_meta(&args.workdir)?;
    let schema = &meta.schema;

    let labeled = parse_rows(&args.workdir.join(TRAIN_FILE), schema, true)?;
    let test = parse_rows(&args.workdir.join(TEST_FILE), schema, false)?;

    // Group by domain preserving file order; the runner writes domains in
    // ascending id order, each sorted by event time, which matches the
    // in-process selection exactly.
    let mut domain_ids: Vec<usize> = Vec::new();
    let mut by_domain: Vec<Vec<&Instance>> = Vec::new();
    for (d, inst) in &labeled {
        match domain_ids.iter().position(|x| x == d) {
            Some(i) => by_domain[i].push(inst),
            None => {
                domain_ids.push(*d);
                by_domain.push(vec![inst]);
            }
        }
    }

    let mut domains = Vec::new();
    for (i, rows) in by_domain.iter().enumerate() {
        let n_train = (TRAIN_FRACTION * rows.len() as f64).floor() as usize;
        let (tr, ho) = rows.split_at(n_train);
        domains.push(DomainTrainData {
            domain_id: domain_ids[i],
            train: tr.to_vec(),
            holdout: ho.to_vec(),
        });
    }
    let data = SelectedData { domains };

    let spec = MethodSpec {
        name: "demo-method".into(),
        selection: Selection::AllLabeled,
        model: if args.hidden.is_empty() {
            ModelKind::LogisticRegression {
                train: TrainParams {
                    learning_rate: args.learning_rate,
                    max_epochs: args.max_epochs,
                    patience: args.patience,
                },
            }
        } else {
            ModelKind::Mlp {
                hidden_sizes: args.hidden.clone(),
                train: TrainParams {
                    learning_rate: args.learning_rate,
                    max_epochs: args.max_epochs,
                    patience: args.patience,
                },
            }
        },
        batch: BatchPlan {
            batch_size: args.batch_size,
            positive_ratio: args.positive_ratio,
            seed: args.batch_seed,
        },
        seed: 0,
    };

    let model = train(&spec, schema, &data, meta.cell_seed)?;
    let test_refs: Vec<&Instance> = test.iter().map(|(_, i)| i).collect();
    let scores = driftbench_core::models::score(&model, &test_refs)?;

    let out = args.workdir.join(SCORES_FILE);
    let mut text = String::with_capacity(scores.len() * 24);
    for s in &scores {
        text.push_str(&fmt_f64(*s));
        text.push('\n');
    }
    std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    log::info!(
        "demo-method: scored {} rows at split {} (best epoch {})",
        scores.len(),
        meta.split,
        model.meta.best_epoch
    );
    Ok(())
}
