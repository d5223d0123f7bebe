//! In-memory tabular dataset with event and label timestamps.
//!
//! A dataset is loaded once from CSV, sorted by event time, and immutable
//! afterwards. Categorical cells are stored as vocabulary codes; numerical
//! cells as `f64`. Every instance keeps the 0-based row index of the source
//! file (`row_id`), which downstream components use as a stable identity for
//! per-row random streams and for reporting.

use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::schema::{FeatureKind, Schema};

/// Column added on export carrying the domain id of each row.
pub const DOMAIN_ID_COLUMN: &str = "__domain_id";
/// Column added on export carrying the label timestamp of each row. When
/// present in an input file it overrides the constant label delay.
pub const LABEL_TIME_COLUMN: &str = "__label_time";
/// Optional input column with a per-row label delay overriding the constant.
pub const LABEL_DELAY_COLUMN: &str = "__label_delay";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// One value per numerical feature, in schema order.
    pub numeric_values: Vec<f64>,
    /// One vocabulary code per categorical feature, in schema order.
    pub category_codes: Vec<usize>,
    /// `true` is the positive (fraud) class.
    pub label: bool,
    /// Timestamp at which the instance is observed.
    pub event_time: f64,
    /// Timestamp at which the label becomes available; never earlier than
    /// `event_time`.
    pub label_time: f64,
    /// 0-based data row index in the source file; stable row identity.
    pub row_id: u64,
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub schema: Arc<Schema>,
    pub domain_id: usize,
    pub instances: Vec<Instance>,
    /// Present only on datasets produced by [`standardize`]; describes the
    /// pre-standardization values.
    pub standardization_stats: Option<Vec<FeatureStats>>,
}

impl Dataset {
    pub fn new(schema: Arc<Schema>, instances: Vec<Instance>) -> Dataset {
        Dataset {
            schema,
            domain_id: 0,
            instances,
            standardization_stats: None,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Mean and population (1/N) standard deviation of every numerical
    /// feature over all instances.
    pub fn numeric_stats(&self) -> Vec<FeatureStats> {
        numeric_stats(self.schema.n_numerical(), self.instances.iter())
    }

    /// Population standard deviation per numerical feature; the comparison
    /// scale used by the domain sampler's distance function.
    pub fn feature_sigmas(&self) -> Vec<f64> {
        self.numeric_stats().into_iter().map(|s| s.std).collect()
    }

    pub fn min_event_time(&self) -> Option<f64> {
        self.instances.first().map(|i| i.event_time)
    }

    pub fn max_event_time(&self) -> Option<f64> {
        self.instances
            .iter()
            .map(|i| i.event_time)
            .fold(None, |acc, t| Some(acc.map_or(t, |m: f64| m.max(t))))
    }
}

/// Mean/population-std over an instance iterator, one entry per numerical
/// feature. Constant features get `std = 0`.
pub fn numeric_stats<'a>(
    n_numerical: usize,
    rows: impl Iterator<Item = &'a Instance> + Clone,
) -> Vec<FeatureStats> {
    let mut count = 0usize;
    let mut sums = vec![0.0f64; n_numerical];
    for inst in rows.clone() {
        count += 1;
        for (f, v) in inst.numeric_values.iter().enumerate() {
            sums[f] += v;
        }
    }
    if count == 0 {
        return vec![FeatureStats { mean: 0.0, std: 0.0 }; n_numerical];
    }
    let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; n_numerical];
    for inst in rows {
        for (f, v) in inst.numeric_values.iter().enumerate() {
            let d = v - means[f];
            sq[f] += d * d;
        }
    }
    means
        .into_iter()
        .zip(sq)
        .map(|(mean, s)| FeatureStats {
            mean,
            std: (s / count as f64).sqrt(),
        })
        .collect()
}

/// Load a CSV file against a schema, applying a constant label delay
/// (`label_time = event_time + label_delay`). A `__label_delay` column
/// overrides the constant per row, and a `__label_time` column overrides
/// both. Instances come back sorted ascending by event time.
///
/// Categorical features with an empty vocabulary collect their categories
/// from the data in first-seen order; fixed vocabularies reject unknown
/// values.
pub fn load_dataset(path: &Path, schema: &Schema, label_delay: f64) -> Result<Dataset> {
    schema.validate()?;
    if label_delay < 0.0 || label_delay.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "label delay must be nonnegative, got {label_delay}"
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                path: path.display().to_string(),
            })
    };

    let feature_cols: Vec<usize> = schema
        .features
        .iter()
        .map(|f| col(&f.name))
        .collect::<Result<_>>()?;
    let label_col = col(&schema.label_column)?;
    let time_col = col(&schema.event_time_column)?;
    let delay_col = headers.iter().position(|h| h == LABEL_DELAY_COLUMN);
    let label_time_col = headers.iter().position(|h| h == LABEL_TIME_COLUMN);

    // Working vocabularies; empty ones grow in first-seen order.
    let mut vocabs: Vec<(bool, Vec<String>)> = schema
        .features
        .iter()
        .filter_map(|f| match &f.kind {
            FeatureKind::Categorical { vocabulary } => {
                Some((vocabulary.is_empty(), vocabulary.clone()))
            }
            FeatureKind::Numerical => None,
        })
        .collect();

    let parse_f64 = |raw: &str, row: usize, column: &str| -> Result<f64> {
        raw.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row,
                column: column.to_string(),
                message: format!("`{raw}` is not a finite real"),
            })
    };

    let mut instances = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let cell = |c: usize| record.get(c).unwrap_or("");

        let event_time = parse_f64(cell(time_col), row, &schema.event_time_column)?;
        if event_time < 0.0 {
            return Err(Error::Parse {
                row,
                column: schema.event_time_column.clone(),
                message: format!("event time must be nonnegative, got {event_time}"),
            });
        }
        let label = match cell(label_col).trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    row,
                    column: schema.label_column.clone(),
                    message: format!("label must be 0 or 1, got `{other}`"),
                })
            }
        };
        let label_time = if let Some(c) = label_time_col {
            let t = parse_f64(cell(c), row, LABEL_TIME_COLUMN)?;
            if t < event_time {
                return Err(Error::Parse {
                    row,
                    column: LABEL_TIME_COLUMN.to_string(),
                    message: format!("label time {t} earlier than event time {event_time}"),
                });
            }
            t
        } else {
            let delay = match delay_col {
                Some(c) => {
                    let d = parse_f64(cell(c), row, LABEL_DELAY_COLUMN)?;
                    if d < 0.0 {
                        return Err(Error::Parse {
                            row,
                            column: LABEL_DELAY_COLUMN.to_string(),
                            message: format!("label delay must be nonnegative, got {d}"),
                        });
                    }
                    d
                }
                None => label_delay,
            };
            event_time + delay
        };

        let mut numeric_values = Vec::with_capacity(schema.n_numerical());
        let mut category_codes = Vec::with_capacity(schema.n_categorical());
        let mut cat_slot = 0usize;
        for (f, def) in schema.features.iter().enumerate() {
            let raw = cell(feature_cols[f]);
            match &def.kind {
                FeatureKind::Numerical => {
                    numeric_values.push(parse_f64(raw, row, &def.name)?);
                }
                FeatureKind::Categorical { .. } => {
                    if raw.is_empty() {
                        return Err(Error::Parse {
                            row,
                            column: def.name.clone(),
                            message: "missing cell".into(),
                        });
                    }
                    let (open, vocab) = &mut vocabs[cat_slot];
                    let code = match vocab.iter().position(|v| v == raw) {
                        Some(c) => c,
                        None if *open => {
                            vocab.push(raw.to_string());
                            vocab.len() - 1
                        }
                        None => {
                            return Err(Error::Vocabulary {
                                feature: def.name.clone(),
                                value: raw.to_string(),
                                row,
                            })
                        }
                    };
                    category_codes.push(code);
                    cat_slot += 1;
                }
            }
        }

        instances.push(Instance {
            numeric_values,
            category_codes,
            label,
            event_time,
            label_time,
            row_id: row as u64,
        });
    }

    // Write collected vocabularies back into the schema copy.
    let mut resolved = schema.clone();
    let mut cat_slot = 0usize;
    for def in resolved.features.iter_mut() {
        if let FeatureKind::Categorical { vocabulary } = &mut def.kind {
            *vocabulary = vocabs[cat_slot].1.clone();
            cat_slot += 1;
        }
    }
    resolved.validate()?;

    instances.sort_by(|a, b| a.event_time.total_cmp(&b.event_time));
    Ok(Dataset::new(Arc::new(resolved), instances))
}

/// Standardize every numerical feature to mean 0, population std 1, over all
/// instances of the dataset. Zero-variance features map to all-zeros. The
/// original statistics are recorded on the returned dataset.
pub fn standardize(dataset: &Dataset) -> Result<Dataset> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot standardize an empty dataset".into()));
    }
    let stats = dataset.numeric_stats();
    let mut out = dataset.clone();
    for inst in out.instances.iter_mut() {
        for (f, v) in inst.numeric_values.iter_mut().enumerate() {
            let s = &stats[f];
            let sigma = if s.std > 0.0 { s.std } else { 1.0 };
            *v = (*v - s.mean) / sigma;
        }
    }
    out.standardization_stats = Some(stats);
    Ok(out)
}

/// Format a float as decimal text with 17 significant digits; round-trips
/// any finite `f64` bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Options for [`write_csv`]: which bookkeeping columns to include.
#[derive(Debug, Clone, Copy)]
pub struct CsvWriteOptions {
    pub include_label: bool,
    pub include_label_time: bool,
    pub include_domain_id: bool,
}

impl Default for CsvWriteOptions {
    fn default() -> Self {
        CsvWriteOptions {
            include_label: true,
            include_label_time: true,
            include_domain_id: true,
        }
    }
}

/// Serialize instances as CSV (RFC 4180 quoting). Feature columns come first
/// in schema order, then the label and event-time columns, then `__domain_id`
/// and `__label_time` as requested. Numerics are written with 17 significant
/// digits. Rows carry their own domain id so multi-domain files can be
/// written in one pass.
pub fn write_csv<W: Write>(
    writer: W,
    schema: &Schema,
    rows: &mut dyn Iterator<Item = (usize, &Instance)>,
    opts: CsvWriteOptions,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = schema.features.iter().map(|f| f.name.clone()).collect();
    if opts.include_label {
        header.push(schema.label_column.clone());
    }
    header.push(schema.event_time_column.clone());
    if opts.include_domain_id {
        header.push(DOMAIN_ID_COLUMN.to_string());
    }
    if opts.include_label_time {
        header.push(LABEL_TIME_COLUMN.to_string());
    }
    w.write_record(&header)
        .map_err(|e| Error::csv("<writer>", e))?;

    for (domain_id, inst) in rows {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        let mut num = 0usize;
        let mut cat = 0usize;
        for def in &schema.features {
            match &def.kind {
                FeatureKind::Numerical => {
                    rec.push(fmt_f64(inst.numeric_values[num]));
                    num += 1;
                }
                FeatureKind::Categorical { vocabulary } => {
                    rec.push(vocabulary[inst.category_codes[cat]].clone());
                    cat += 1;
                }
            }
        }
        if opts.include_label {
            rec.push(if inst.label { "1" } else { "0" }.to_string());
        }
        rec.push(fmt_f64(inst.event_time));
        if opts.include_domain_id {
            rec.push(domain_id.to_string());
        }
        if opts.include_label_time {
            rec.push(fmt_f64(inst.label_time));
        }
        w.write_record(&rec).map_err(|e| Error::csv("<writer>", e))?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}

/// Write a dataset to a CSV file, including all bookkeeping columns.
pub fn write_csv_file(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(
        file,
        &dataset.schema,
        &mut dataset.instances.iter().map(|i| (dataset.domain_id, i)),
        CsvWriteOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::FeatureDef;

    fn schema() -> Schema {
        Schema {
            features: vec![
                FeatureDef {
                    name: "x".into(),
                    kind: FeatureKind::Numerical,
                },
                FeatureDef {
                    name: "c".into(),
                    kind: FeatureKind::Categorical { vocabulary: vec![] },
                },
            ],
            label_column: "y".into(),
            event_time_column: "t".into(),
            time_unit: "month".into(),
        }
    }

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_applies_constant_label_delay() {
        let f = write_temp("x,c,y,t\n1.0,A,0,2.0\n2.0,B,1,0.5\n3.0,A,0,1.0\n");
        let ds = load_dataset(f.path(), &schema(), 1.0).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.label_time, inst.event_time + 1.0);
        }
    }

    #[test]
    fn load_zero_delay_keeps_label_time_equal() {
        let f = write_temp("x,c,y,t\n1.0,A,0,2.0\n2.0,B,1,0.5\n");
        let ds = load_dataset(f.path(), &schema(), 0.0).unwrap();
        for inst in &ds.instances {
            assert_eq!(inst.label_time, inst.event_time);
        }
    }

    #[test]
    fn load_sorts_by_event_time() {
        let f = write_temp("x,c,y,t\n1.0,A,0,2.0\n2.0,B,1,0.5\n3.0,A,0,1.0\n");
        let ds = load_dataset(f.path(), &schema(), 0.0).unwrap();
        let times: Vec<f64> = ds.instances.iter().map(|i| i.event_time).collect();
        assert_eq!(times, vec![0.5, 1.0, 2.0]);
        // row ids still reference the original file rows
        let rows: Vec<u64> = ds.instances.iter().map(|i| i.row_id).collect();
        assert_eq!(rows, vec![1, 2, 0]);
    }

    #[test]
    fn load_collects_open_vocabulary_in_first_seen_order() {
        let f = write_temp("x,c,y,t\n1.0,Q,0,0\n1.0,P,0,1\n1.0,Q,1,2\n");
        let ds = load_dataset(f.path(), &schema(), 0.0).unwrap();
        match &ds.schema.feature("c").unwrap().kind {
            FeatureKind::Categorical { vocabulary } => {
                assert_eq!(vocabulary, &vec!["Q".to_string(), "P".to_string()]);
            }
            _ => panic!("expected categorical"),
        }
        let codes: Vec<usize> = ds.instances.iter().map(|i| i.category_codes[0]).collect();
        assert_eq!(codes, vec![0, 1, 0]);
    }

    #[test]
    fn load_rejects_unknown_category_under_fixed_vocabulary() {
        let mut s = schema();
        s.features[1].kind = FeatureKind::Categorical {
            vocabulary: vec!["A".into()],
        };
        let f = write_temp("x,c,y,t\n1.0,A,0,0\n1.0,Z,0,1\n");
        let err = load_dataset(f.path(), &s, 0.0).unwrap_err();
        assert!(matches!(err, Error::Vocabulary { row: 1, .. }));
    }

    #[test]
    fn load_reports_missing_column() {
        let f = write_temp("x,y,t\n1.0,0,0\n");
        let err = load_dataset(f.path(), &schema(), 0.0).unwrap_err();
        match err {
            Error::MissingColumn { column, .. } => assert_eq!(column, "c"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_cells_are_parse_errors() {
        let f = write_temp("x,c,y,t\n1.0,A,0,0\n1.0,,0,1\n");
        let err = load_dataset(f.path(), &schema(), 0.0).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }), "{err}");
        let f = write_temp("x,c,y,t\n1.0,A,0,0\n,A,0,1\n");
        assert!(matches!(
            load_dataset(f.path(), &schema(), 0.0),
            Err(Error::Parse { row: 1, .. })
        ));
    }

    #[test]
    fn load_reports_unparseable_cell_with_row() {
        let f = write_temp("x,c,y,t\n1.0,A,0,0\nnope,A,0,1\n");
        let err = load_dataset(f.path(), &schema(), 0.0).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn standardize_two_point_feature() {
        let f = write_temp("x,c,y,t\n1.0,A,0,0\n3.0,A,1,1\n");
        let ds = load_dataset(f.path(), &schema(), 0.0).unwrap();
        let std = standardize(&ds).unwrap();
        let vals: Vec<f64> = std.instances.iter().map(|i| i.numeric_values[0]).collect();
        assert_eq!(vals, vec![-1.0, 1.0]);
        let stats = std.standardization_stats.as_ref().unwrap();
        assert_eq!(stats[0].mean, 2.0);
        assert_eq!(stats[0].std, 1.0);
    }

    #[test]
    fn standardize_constant_feature_maps_to_zeros() {
        let f = write_temp("x,c,y,t\n5.0,A,0,0\n5.0,A,1,1\n5.0,A,0,2\n");
        let ds = load_dataset(f.path(), &schema(), 0.0).unwrap();
        let std = standardize(&ds).unwrap();
        for inst in &std.instances {
            assert_eq!(inst.numeric_values[0], 0.0);
        }
    }

    #[test]
    fn standardize_is_idempotent_on_standardized_data() {
        let f = write_temp("x,c,y,t\n-1.0,A,0,0\n0.0,A,1,1\n1.0,A,0,2\n");
        let ds = load_dataset(f.path(), &schema(), 0.0).unwrap();
        // variance of [-1,0,1] is 2/3; rescale so mean 0, population std 1
        let mut scaled = ds.clone();
        let sigma = (2.0f64 / 3.0).sqrt();
        for inst in scaled.instances.iter_mut() {
            inst.numeric_values[0] /= sigma;
        }
        let once = standardize(&scaled).unwrap();
        for (a, b) in once.instances.iter().zip(&scaled.instances) {
            assert!((a.numeric_values[0] - b.numeric_values[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_empty_dataset_is_an_error() {
        let ds = Dataset::new(Arc::new(schema()), vec![]);
        assert!(matches!(standardize(&ds), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn standardized_moments_are_tight() {
        let f = write_temp(
            "x,c,y,t\n1.5,A,0,0\n-2.25,B,1,1\n0.75,A,0,2\n9.125,B,1,3\n-4.0,A,0,4\n",
        );
        let ds = load_dataset(f.path(), &schema(), 0.0).unwrap();
        let std = standardize(&ds).unwrap();
        let stats = numeric_stats(1, std.instances.iter());
        assert!(stats[0].mean.abs() < 1e-9);
        assert!((stats[0].std - 1.0).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let f = write_temp(
            "x,c,y,t\n0.1,A,0,0.30000000000000004\n-1e-12,B,1,1.7\n123456.789012345678,A,0,2.5\n",
        );
        let ds = load_dataset(f.path(), &schema(), 0.25).unwrap();
        let mut buf = Vec::new();
        write_csv(
            &mut buf,
            &ds.schema,
            &mut ds.instances.iter().map(|i| (ds.domain_id, i)),
            CsvWriteOptions::default(),
        )
        .unwrap();
        let f2 = write_temp(std::str::from_utf8(&buf).unwrap());
        // Reload with a different constant delay: the __label_time column wins.
        let back = load_dataset(f2.path(), &ds.schema, 99.0).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in back.instances.iter().zip(&ds.instances) {
            assert_eq!(a.numeric_values, b.numeric_values);
            assert_eq!(a.category_codes, b.category_codes);
            assert_eq!(a.label, b.label);
            assert_eq!(a.event_time.to_bits(), b.event_time.to_bits());
            assert_eq!(a.label_time.to_bits(), b.label_time.to_bits());
        }
    }

    #[test]
    fn per_row_delay_column_overrides_constant() {
        let f = write_temp("x,c,y,t,__label_delay\n1.0,A,0,0.0,2.5\n1.0,A,1,1.0,0.0\n");
        let ds = load_dataset(f.path(), &schema(), 7.0).unwrap();
        assert_eq!(ds.instances[0].label_time, 2.5);
        assert_eq!(ds.instances[1].label_time, 1.0);
    }
}
