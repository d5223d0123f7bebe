//! Suite orchestration: configuration, seeded execution, persistence.
//!
//! A suite runs `n_experiments` independent experiments. Each experiment
//! derives its own seed from the master seed, samples transform parameters
//! from declared ranges, samples domains, applies the transforms, builds the
//! timeline, and trains/evaluates every method at every split. Each
//! (experiment, method, split) cell produces one record; cell failures are
//! recorded data, not suite failures.
//!
//! Finished cells are appended to `journal.csv` in the output directory as
//! they complete, so an interrupted suite can be resumed with only the
//! missing cells recomputed. The canonical, byte-deterministic table is
//! rewritten from scratch by the report stage.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::dataset::{load_dataset, Dataset};
use crate::error::{Error, Result};
use crate::eval::{
    compute_stat_report, recall_at_fpr, CellStatus, EvalRecord, FdrFamily, StatReport,
};
use crate::models::{
    external::run_external, score, select_training_data, train, MethodSpec, SelectOutcome,
    Selection,
};
use crate::sampler::{calibrate_lambda, draw_anchors, sample_with_anchors, DomainSet};
use crate::schedule::{
    build_timeline, iterate_splits, ScheduleConfig, SchedulePreset, SplitView, Timeline,
};
use crate::schema::Schema;
use crate::seed;
use crate::transforms::{apply_plan, TauSchedule, TransformKind, TransformPlan, TransformSpec};

pub const JOURNAL_FILE: &str = "journal.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// A literal value or an inclusive `[min, max]` range sampled once per
/// experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Range([f64; 2]),
}

impl Param {
    pub fn validate(&self) -> Result<()> {
        match self {
            Param::Fixed(v) if v.is_finite() => Ok(()),
            Param::Range([lo, hi]) if lo.is_finite() && hi.is_finite() && lo <= hi => Ok(()),
            _ => Err(Error::Config(format!("invalid parameter {self:?}"))),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            Param::Fixed(v) => *v,
            Param::Range([lo, hi]) => lo + rng.random::<f64>() * (hi - lo),
        }
    }
}

impl Default for Param {
    fn default() -> Self {
        Param::Fixed(0.0)
    }
}

/// Magnitude schedule declaration; linear ramps resolve their range from the
/// event times of the domain they are applied to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauConfig {
    Constant,
    Linear,
    Sine {
        period: Param,
        #[serde(default)]
        phase: Param,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKindConfig {
    Rescale {
        alpha: Param,
    },
    AnchorBlend {
        beta: Param,
        gamma: Param,
    },
    CategoricalResample {
        target_marginal: Vec<f64>,
    },
    ConceptFlip {
        flip_prob: Param,
        gate_threshold: Param,
    },
}

/// One declared transform, bound to a domain index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformConfig {
    pub domain: usize,
    pub feature: String,
    #[serde(flatten)]
    pub kind: TransformKindConfig,
    pub tau: TauConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Decay rate, possibly a range. Exactly one of `lambda` / `target_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Param>,
    /// Expected domain size; lambda is calibrated against the first anchor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_size: Option<f64>,
    #[serde(default)]
    pub disjoint: bool,
    #[serde(default)]
    pub target_index: usize,
    #[serde(default = "default_calibration_tolerance")]
    pub calibration_tolerance: f64,
}

fn default_k() -> usize {
    4
}

fn default_calibration_tolerance() -> f64 {
    0.01
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            k: default_k(),
            lambda: Some(Param::Fixed(0.0)),
            target_size: None,
            disjoint: false,
            target_index: 0,
            calibration_tolerance: default_calibration_tolerance(),
        }
    }
}

impl SamplerSpec {
    fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!(
                "a transfer experiment needs k >= 2 domains, got {}",
                self.k
            )));
        }
        if self.target_index >= self.k {
            return Err(Error::Config(format!(
                "target_index {} out of range for k = {}",
                self.target_index, self.k
            )));
        }
        match (&self.lambda, &self.target_size) {
            (Some(l), None) => l.validate(),
            (None, Some(t)) if *t >= 1.0 => Ok(()),
            (None, Some(t)) => Err(Error::Config(format!("target_size {t} must be >= 1"))),
            _ => Err(Error::Config(
                "exactly one of sampler.lambda / sampler.target_size must be set".into(),
            )),
        }
    }
}

/// Source start rule: a fixed timestamp or a uniform draw from an inclusive
/// integer range, redrawn per experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TAlphaRule {
    Fixed(f64),
    UniformInt { uniform_int: [i64; 2] },
}

impl TAlphaRule {
    fn resolve(&self, rng: &mut impl Rng) -> f64 {
        match self {
            TAlphaRule::Fixed(v) => *v,
            TAlphaRule::UniformInt { uniform_int: [lo, hi] } => rng.random_range(*lo..=*hi) as f64,
        }
    }
}

/// Schedule declaration: a named preset or explicit offsets from `t_alpha`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Preset {
        preset: String,
    },
    Explicit {
        t_alpha: TAlphaRule,
        t_beta_offset: f64,
        t_gamma_offset: f64,
        delta_t: f64,
        delta_l: f64,
    },
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ScheduleSpec::Preset { preset } => {
                SchedulePreset::from_name(preset)?;
                Ok(())
            }
            ScheduleSpec::Explicit { t_alpha, .. } => {
                if let TAlphaRule::UniformInt { uniform_int: [lo, hi] } = t_alpha {
                    if lo > hi {
                        return Err(Error::Config(format!("empty t_alpha range [{lo}, {hi}]")));
                    }
                }
                // resolving at a fixed start exercises the config invariants
                self.resolve_at(0.0).validate()
            }
        }
    }

    pub fn delta_l(&self) -> Result<f64> {
        match self {
            ScheduleSpec::Preset { preset } => {
                Ok(SchedulePreset::from_name(preset)?.resolve(0.0).delta_l)
            }
            ScheduleSpec::Explicit { delta_l, .. } => Ok(*delta_l),
        }
    }

    pub fn delta_t(&self) -> Result<f64> {
        match self {
            ScheduleSpec::Preset { preset } => {
                Ok(SchedulePreset::from_name(preset)?.resolve(0.0).delta_t)
            }
            ScheduleSpec::Explicit { delta_t, .. } => Ok(*delta_t),
        }
    }

    fn resolve_at(&self, t_alpha: f64) -> ScheduleConfig {
        match self {
            ScheduleSpec::Preset { preset } => SchedulePreset::from_name(preset)
                .expect("validated preset")
                .resolve(t_alpha),
            ScheduleSpec::Explicit {
                t_beta_offset,
                t_gamma_offset,
                delta_t,
                delta_l,
                ..
            } => ScheduleConfig {
                t_alpha,
                t_beta: t_alpha + t_beta_offset,
                t_gamma: t_alpha + t_gamma_offset,
                delta_t: *delta_t,
                delta_l: *delta_l,
            },
        }
    }

    /// Draw the per-experiment source start and produce the concrete config.
    pub fn resolve(&self, rng: &mut impl Rng) -> ScheduleConfig {
        let t_alpha = match self {
            ScheduleSpec::Preset { preset } => {
                let p = SchedulePreset::from_name(preset).expect("validated preset");
                match p.t_alpha_choices() {
                    Some((lo, hi)) => rng.random_range(lo..=hi) as f64,
                    None => p.default_t_alpha(),
                }
            }
            ScheduleSpec::Explicit { t_alpha, .. } => t_alpha.resolve(rng),
        };
        self.resolve_at(t_alpha)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub transforms: Vec<TransformConfig>,
    pub schedule: ScheduleSpec,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_fpr_budget")]
    pub fpr_budget: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub fdr_family: FdrFamily,
    pub n_experiments: usize,
    pub master_seed: u64,
}

fn default_fpr_budget() -> f64 {
    0.01
}

fn default_q() -> f64 {
    0.01
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Full validation against the schema, before any data work.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        if self.n_experiments == 0 {
            return Err(Error::Config("n_experiments must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.fpr_budget) {
            return Err(Error::Config(format!(
                "fpr_budget must lie in [0,1), got {}",
                self.fpr_budget
            )));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(format!("q must lie in (0,1), got {}", self.q)));
        }
        self.sampler.validate()?;
        self.schedule.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let mut names = std::collections::HashSet::new();
        for m in &self.methods {
            m.validate()?;
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate method name `{}`", m.name)));
            }
        }
        for t in &self.transforms {
            if t.domain >= self.sampler.k {
                return Err(Error::Config(format!(
                    "transform on domain {} but k = {}",
                    t.domain, self.sampler.k
                )));
            }
            let def = schema.feature(&t.feature).ok_or_else(|| {
                Error::Config(format!(
                    "transform references unknown feature `{}`",
                    t.feature
                ))
            })?;
            match &t.kind {
                TransformKindConfig::Rescale { alpha } => {
                    alpha.validate()?;
                    if !def.kind.is_numerical() {
                        return Err(Error::Config(format!(
                            "rescale targets categorical feature `{}`",
                            t.feature
                        )));
                    }
                }
                TransformKindConfig::AnchorBlend { beta, gamma } => {
                    beta.validate()?;
                    gamma.validate()?;
                    if !def.kind.is_numerical() {
                        return Err(Error::Config(format!(
                            "anchor_blend targets categorical feature `{}`",
                            t.feature
                        )));
                    }
                }
                TransformKindConfig::CategoricalResample { .. } => {
                    if !def.kind.is_categorical() {
                        return Err(Error::Config(format!(
                            "categorical_resample targets numerical feature `{}`",
                            t.feature
                        )));
                    }
                }
                TransformKindConfig::ConceptFlip {
                    flip_prob,
                    gate_threshold,
                } => {
                    flip_prob.validate()?;
                    gate_threshold.validate()?;
                    if !def.kind.is_numerical() {
                        return Err(Error::Config(format!(
                            "concept_flip gate `{}` must be numerical",
                            t.feature
                        )));
                    }
                }
            }
            if let TauConfig::Sine { period, phase } = &t.tau {
                period.validate()?;
                phase.validate()?;
            }
        }
        Ok(())
    }

    pub fn method_order(&self) -> Vec<String> {
        self.methods.iter().map(|m| m.name.clone()).collect()
    }

    /// Stable fingerprint of the canonical serialized config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        seed::hash_hex(canonical.as_bytes())
    }
}

// ---------------------------------------------------------------------------
// Manifest and results store
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub index: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub anchor_rows: Vec<u64>,
    #[serde(default)]
    pub domain_sizes: Vec<usize>,
    /// Resolved per-domain transform specs (realized theta values).
    #[serde(default)]
    pub transforms: Vec<Vec<TransformSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Wall-clock creation time (unix seconds); the only field outside the
    /// determinism contract.
    pub created_unix: u64,
    pub experiments: Vec<ExperimentManifest>,
}

#[derive(Debug, Clone)]
pub struct ResultsStore {
    pub manifest: Manifest,
    /// Canonical order: (experiment, method config order, split).
    pub records: Vec<EvalRecord>,
    pub stats: StatReport,
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub store: ResultsStore,
    pub n_ok: usize,
    pub n_failed: usize,
    /// False when a cell budget stopped the suite early.
    pub complete: bool,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Worker threads for experiment-level parallelism; 0 = one per core.
    pub workers: usize,
    /// Reuse finished cells from an existing journal.
    pub resume: bool,
    /// Stop after computing this many new cells (budgeted runs / testing).
    pub max_cells: Option<usize>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> RunOptions {
        RunOptions {
            out_dir: out_dir.into(),
            workers: 0,
            resume: false,
            max_cells: None,
        }
    }
}

// ---------------------------------------------------------------------------
// Journal encoding
// ---------------------------------------------------------------------------

pub const RECORD_HEADER: [&str; 8] = [
    "experiment",
    "method",
    "split",
    "status",
    "recall",
    "n_test",
    "n_test_positives",
    "diagnostic",
];

pub fn record_to_fields(r: &EvalRecord) -> [String; 8] {
    [
        r.experiment.to_string(),
        r.method.clone(),
        r.split.to_string(),
        r.status.as_str().to_string(),
        r.recall.map(crate::dataset::fmt_f64).unwrap_or_default(),
        r.n_test.to_string(),
        r.n_test_positives.to_string(),
        r.diagnostic.clone().unwrap_or_default(),
    ]
}

pub fn record_from_fields(fields: &csv::StringRecord) -> Result<EvalRecord> {
    let get = |i: usize| fields.get(i).unwrap_or("");
    let parse_usize = |i: usize, name: &str| -> Result<usize> {
        get(i).parse().map_err(|_| Error::Parse {
            row: 0,
            column: name.to_string(),
            message: format!("`{}` is not an integer", get(i)),
        })
    };
    let recall = match get(4) {
        "" => None,
        s => Some(s.parse::<f64>().map_err(|_| Error::Parse {
            row: 0,
            column: "recall".into(),
            message: format!("`{s}` is not a real"),
        })?),
    };
    Ok(EvalRecord {
        experiment: parse_usize(0, "experiment")?,
        method: get(1).to_string(),
        split: parse_usize(2, "split")?,
        status: CellStatus::parse_str(get(3))?,
        recall,
        n_test: parse_usize(5, "n_test")?,
        n_test_positives: parse_usize(6, "n_test_positives")?,
        diagnostic: match get(7) {
            "" => None,
            s => Some(s.to_string()),
        },
    })
}

/// Read every valid record from a journal; a torn trailing line (crash) is
/// ignored with a warning.
pub fn read_journal(path: &Path) -> Result<Vec<EvalRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut records = Vec::new();
    for row in reader.records() {
        let Ok(row) = row else {
            log::warn!("journal {}: skipping malformed line", path.display());
            break;
        };
        match record_from_fields(&row) {
            Ok(r) => records.push(r),
            Err(_) => {
                log::warn!("journal {}: skipping torn record", path.display());
                break;
            }
        }
    }
    Ok(records)
}

struct Journal {
    file: Mutex<std::fs::File>,
    path: PathBuf,
}

impl Journal {
    fn open(path: PathBuf, resume: bool) -> Result<Journal> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        if !resume {
            file.set_len(0).map_err(|e| Error::io(&path, e))?;
        }
        Ok(Journal {
            file: Mutex::new(file),
            path,
        })
    }

    fn append(&self, record: &EvalRecord) -> Result<()> {
        let mut line = Vec::new();
        {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(&mut line);
            w.write_record(record_to_fields(record))
                .map_err(|e| Error::csv(&self.path, e))?;
            w.flush().map_err(|e| Error::io(&self.path, e))?;
        }
        let mut file = self.file.lock().expect("journal lock");
        file.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        file.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct PreparedExperiment {
    set: DomainSet,
    timeline: Timeline,
    manifest: ExperimentManifest,
}

fn resolve_transforms(
    config: &ExperimentConfig,
    set: &DomainSet,
    exp_seed: u64,
) -> Result<TransformPlan> {
    let mut theta_rng = seed::rng(seed::derive(exp_seed, "theta", 0));
    let mut plan = TransformPlan::empty(config.sampler.k);
    for (idx, t) in config.transforms.iter().enumerate() {
        let kind = match &t.kind {
            TransformKindConfig::Rescale { alpha } => TransformKind::Rescale {
                alpha: alpha.sample(&mut theta_rng),
            },
            TransformKindConfig::AnchorBlend { beta, gamma } => TransformKind::AnchorBlend {
                beta: beta.sample(&mut theta_rng),
                gamma: gamma.sample(&mut theta_rng),
            },
            TransformKindConfig::CategoricalResample { target_marginal } => {
                TransformKind::CategoricalResample {
                    target_marginal: target_marginal.clone(),
                }
            }
            TransformKindConfig::ConceptFlip {
                flip_prob,
                gate_threshold,
            } => TransformKind::ConceptFlip {
                flip_prob: flip_prob.sample(&mut theta_rng),
                gate_threshold: gate_threshold.sample(&mut theta_rng),
            },
        };
        let domain = &set.domains[t.domain];
        let tau = match &t.tau {
            TauConfig::Constant => TauSchedule::Constant,
            TauConfig::Linear => {
                let (t_min, t_max) = match (domain.min_event_time(), domain.max_event_time()) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::EmptyInput(format!(
                            "domain {} is empty; cannot resolve a linear schedule",
                            t.domain
                        )))
                    }
                };
                TauSchedule::linear(t_min, t_max)?
            }
            TauConfig::Sine { period, phase } => TauSchedule::sine(
                period.sample(&mut theta_rng),
                phase.sample(&mut theta_rng),
            )?,
        };
        plan.per_domain[t.domain].push(TransformSpec {
            feature: t.feature.clone(),
            kind,
            tau,
            seed: seed::derive(exp_seed, "transform", idx as u64),
        });
    }
    Ok(plan)
}

fn prepare_experiment(
    config: &ExperimentConfig,
    dataset: &Dataset,
    index: usize,
) -> Result<PreparedExperiment> {
    let exp_seed = seed::derive(config.master_seed, "experiment", index as u64);
    let mut schedule_rng = seed::rng(seed::derive(exp_seed, "t_alpha", 0));
    let schedule = config.schedule.resolve(&mut schedule_rng);
    let timeline = build_timeline(&schedule)?;

    let sampler_seed = seed::derive(exp_seed, "sampler", 0);
    let anchors = draw_anchors(dataset, config.sampler.k, sampler_seed)?;
    let lambda = match (&config.sampler.lambda, &config.sampler.target_size) {
        (Some(param), None) => {
            let mut rng = seed::rng(seed::derive(exp_seed, "lambda", 0));
            let l = param.sample(&mut rng);
            if l < 0.0 || l.is_nan() {
                return Err(Error::Config(format!("sampled lambda {l} is negative")));
            }
            l
        }
        (None, Some(target)) => calibrate_lambda(
            dataset,
            &anchors[0],
            *target,
            config.sampler.calibration_tolerance,
        )?,
        _ => unreachable!("validated sampler spec"),
    };
    let mut set = sample_with_anchors(
        dataset,
        &anchors,
        lambda,
        sampler_seed,
        config.sampler.disjoint,
    )?;
    set.target_index = config.sampler.target_index;

    let plan = resolve_transforms(config, &set, exp_seed)?;
    let set = apply_plan(&set, &plan)?;

    let manifest = ExperimentManifest {
        index,
        seed: exp_seed,
        schedule: Some(schedule),
        lambda: Some(lambda),
        anchor_rows: set.anchor_rows(),
        domain_sizes: set.sizes(),
        transforms: plan.per_domain.clone(),
        error: None,
    };
    Ok(PreparedExperiment {
        set,
        timeline,
        manifest,
    })
}

fn cell_seed(exp_seed: u64, split: usize, method_seed: u64) -> u64 {
    seed::derive(
        seed::derive(exp_seed, "split", split as u64),
        "method-seed",
        method_seed,
    )
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run_cell(
    config: &ExperimentConfig,
    spec: &MethodSpec,
    view: &SplitView<'_>,
    timeline: &Timeline,
    experiment: usize,
    exp_seed: u64,
    workdir_root: &Path,
) -> EvalRecord {
    let schema = view.domain_set().schema();
    let n_test = view.n_test();
    let n_test_positives = view.test_rows().filter(|i| i.label).count();
    let seed_for_cell = cell_seed(exp_seed, view.step, spec.seed);
    let mut record = EvalRecord {
        experiment,
        method: spec.name.clone(),
        split: view.step,
        status: CellStatus::Failed,
        recall: None,
        n_test,
        n_test_positives,
        diagnostic: None,
    };

    let scores: Vec<f64> = match spec.selection {
        Selection::External => {
            let workdir = workdir_root
                .join(format!("exp{experiment}"))
                .join(format!("split{}", view.step))
                .join(sanitize(&spec.name));
            match run_external(spec, view, timeline, &workdir, seed_for_cell) {
                Ok(s) => s,
                Err(e) => {
                    record.diagnostic = Some(e.to_string());
                    return record;
                }
            }
        }
        _ => {
            let data = match select_training_data(view, spec.selection) {
                SelectOutcome::Ready(d) => d,
                SelectOutcome::Unavailable(reason) => {
                    record.status = CellStatus::Unavailable;
                    record.diagnostic = Some(reason);
                    return record;
                }
            };
            let model = match train(spec, schema, &data, seed_for_cell) {
                Ok(m) => m,
                Err(Error::DegenerateClass(reason)) => {
                    record.status = CellStatus::Unavailable;
                    record.diagnostic = Some(format!("not trainable: {reason}"));
                    return record;
                }
                Err(e) => {
                    record.diagnostic = Some(e.to_string());
                    return record;
                }
            };
            let rows: Vec<&crate::dataset::Instance> = view.test_rows().collect();
            match score(&model, &rows) {
                Ok(s) => s,
                Err(e) => {
                    record.diagnostic = Some(e.to_string());
                    return record;
                }
            }
        }
    };

    let labels = view.test_labels();
    match recall_at_fpr(&scores, &labels, config.fpr_budget) {
        Ok(recall) => {
            record.status = CellStatus::Ok;
            record.recall = Some(recall);
        }
        Err(Error::UndefinedMetric(reason)) => {
            record.status = CellStatus::UndefinedMetric;
            record.diagnostic = Some(reason);
        }
        Err(e) => {
            record.diagnostic = Some(e.to_string());
        }
    }
    record
}

/// Run (or resume) a full suite. Journal and manifest are written into
/// `opts.out_dir`; the caller renders the report tables from the returned
/// store.
pub fn run_suite(config: &ExperimentConfig, opts: &RunOptions) -> Result<SuiteOutcome> {
    let schema = Schema::from_json_file(&config.schema)?;
    config.validate(&schema)?;
    let delta_l = config.schedule.delta_l()?;
    let dataset = load_dataset(&config.dataset, &schema, delta_l)?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("dataset has no rows".into()));
    }

    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let workdir_root = opts.out_dir.join("work");
    let journal_path = opts.out_dir.join(JOURNAL_FILE);

    let done: HashMap<(usize, String, usize), EvalRecord> = if opts.resume {
        // a journal is only reusable under the config that produced it
        let manifest_path = opts.out_dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let text =
                std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
            let previous: Manifest = serde_json::from_str(&text)?;
            if previous.config_hash != config.hash() {
                return Err(Error::Config(
                    "cannot resume: the output directory was produced by a different config".into(),
                ));
            }
        } else {
            log::warn!("resuming without a manifest; journal cells are trusted as-is");
        }
        read_journal(&journal_path)?
            .into_iter()
            .map(|r| ((r.experiment, r.method.clone(), r.split), r))
            .collect()
    } else {
        HashMap::new()
    };
    let journal = Journal::open(journal_path, opts.resume)?;
    if opts.resume {
        log::info!("resuming with {} finished cells", done.len());
    }

    let budget = AtomicUsize::new(0);
    let budget_hit = AtomicBool::new(false);
    let exhausted = || -> bool {
        match opts.max_cells {
            Some(max) => {
                let hit = budget.fetch_add(1, Ordering::SeqCst) >= max;
                if hit {
                    budget_hit.store(true, Ordering::SeqCst);
                }
                hit
            }
            None => false,
        }
    };

    let run_experiment = |index: usize| -> (ExperimentManifest, Vec<EvalRecord>) {
        let exp_seed = seed::derive(config.master_seed, "experiment", index as u64);
        let prepared = match prepare_experiment(config, &dataset, index) {
            Ok(p) => p,
            Err(e) => {
                log::error!("experiment {index} failed to prepare: {e}");
                return (
                    ExperimentManifest {
                        index,
                        seed: exp_seed,
                        schedule: None,
                        lambda: None,
                        anchor_rows: vec![],
                        domain_sizes: vec![],
                        transforms: vec![],
                        error: Some(e.to_string()),
                    },
                    Vec::new(),
                );
            }
        };
        let views = match iterate_splits(&prepared.set, &prepared.timeline) {
            Ok(v) => v,
            Err(e) => {
                let mut m = prepared.manifest;
                m.error = Some(e.to_string());
                return (m, Vec::new());
            }
        };
        let mut records = Vec::new();
        for view in &views {
            for spec in &config.methods {
                let key = (index, spec.name.clone(), view.step);
                if let Some(existing) = done.get(&key) {
                    records.push(existing.clone());
                    continue;
                }
                if exhausted() {
                    continue;
                }
                let record = run_cell(
                    config,
                    spec,
                    view,
                    &prepared.timeline,
                    index,
                    exp_seed,
                    &workdir_root,
                );
                if let Err(e) = journal.append(&record) {
                    log::error!("journal append failed: {e}");
                }
                records.push(record);
            }
        }
        (prepared.manifest, records)
    };

    let results: Vec<(ExperimentManifest, Vec<EvalRecord>)> = {
        use rayon::prelude::*;
        let indices: Vec<usize> = (0..config.n_experiments).collect();
        if opts.workers == 1 {
            indices.iter().map(|&i| run_experiment(i)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(opts.workers)
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
            pool.install(|| indices.par_iter().map(|&i| run_experiment(i)).collect())
        }
    };

    let mut experiments = Vec::with_capacity(results.len());
    let mut records = Vec::new();
    for (manifest, recs) in results {
        experiments.push(manifest);
        records.extend(recs);
    }
    sort_records(&mut records, &config.method_order());

    let complete = !budget_hit.load(Ordering::SeqCst);
    let n_ok = records.iter().filter(|r| r.status == CellStatus::Ok).count();
    let n_failed = records
        .iter()
        .filter(|r| r.status == CellStatus::Failed)
        .count();

    let stats = compute_stat_report(&records, &config.method_order(), config.q, config.fdr_family)?;
    let manifest = Manifest {
        config: config.clone(),
        config_hash: config.hash(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        experiments,
    };
    let manifest_path = opts.out_dir.join(MANIFEST_FILE);
    let manifest_json = crate::report::to_json_17(&manifest)?;
    std::fs::write(&manifest_path, manifest_json).map_err(|e| Error::io(&manifest_path, e))?;

    if complete && n_ok == 0 {
        return Err(Error::EmptyInput(
            "suite finished with zero successful cells".into(),
        ));
    }

    Ok(SuiteOutcome {
        store: ResultsStore {
            manifest,
            records,
            stats,
        },
        n_ok,
        n_failed,
        complete,
    })
}

/// Canonical record order: experiment, method (config order), split.
pub fn sort_records(records: &mut [EvalRecord], method_order: &[String]) {
    let rank: HashMap<&str, usize> = method_order
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    records.sort_by(|a, b| {
        (
            a.experiment,
            rank.get(a.method.as_str()).copied().unwrap_or(usize::MAX),
            a.split,
        )
            .cmp(&(
                b.experiment,
                rank.get(b.method.as_str()).copied().unwrap_or(usize::MAX),
                b.split,
            ))
    });
}

/// Rebuild a results store from a run directory (manifest + journal),
/// recomputing the statistics.
pub fn load_store(dir: &Path) -> Result<ResultsStore> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text =
        std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.config.hash() != manifest.config_hash {
        return Err(Error::Config(
            "manifest config hash does not match the stored config".into(),
        ));
    }
    let mut records = read_journal(&dir.join(JOURNAL_FILE))?;
    let order = manifest.config.method_order();
    // resume may leave duplicate cells in the journal; last write wins
    let mut dedup: HashMap<(usize, String, usize), EvalRecord> = HashMap::new();
    for r in records.drain(..) {
        dedup.insert((r.experiment, r.method.clone(), r.split), r);
    }
    let mut records: Vec<EvalRecord> = dedup.into_values().collect();
    sort_records(&mut records, &order);
    let stats = compute_stat_report(
        &records,
        &order,
        manifest.config.q,
        manifest.config.fdr_family,
    )?;
    Ok(ResultsStore {
        manifest,
        records,
        stats,
    })
}
