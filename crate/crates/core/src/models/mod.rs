//! Trainable scorers and their data-selection modes.
//!
//! A method couples a data-selection rule (source-only, target-only, all
//! labeled data, or an external subprocess) with a trainable model. Native
//! models are trained by mini-batch gradient descent on oversampled batches,
//! early-stopped on the recall@1%FPR of a per-domain holdout carved from the
//! latest 30% of each domain's labeled data.

pub mod external;
pub mod net;

use serde::{Deserialize, Serialize};

use crate::batch::{make_batches, BatchPlan};
use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::eval::recall_at_fpr;
use crate::schedule::SplitView;
use crate::schema::Schema;
use crate::seed;

pub use net::{FeatureEncoder, Mlp, MlpArch};

/// FPR budget of the early-stopping metric.
pub const VALIDATION_FPR: f64 = 0.01;

/// Fraction of each domain's labeled data used for gradient descent; the
/// most recent remainder is the holdout.
pub const TRAIN_FRACTION: f64 = 0.70;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Labeled data from every domain except the target.
    SourceOnly,
    /// Labeled data from the target domain only.
    TargetOnly,
    /// All labeled data from all domains.
    AllLabeled,
    /// Delegate to an external command via the file protocol.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_learning_rate() -> f64 {
    0.1
}
fn default_max_epochs() -> usize {
    30
}
fn default_patience() -> usize {
    3
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            learning_rate: default_learning_rate(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
        }
    }
}

impl TrainParams {
    fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression {
        #[serde(flatten)]
        train: TrainParams,
    },
    Mlp {
        hidden_sizes: Vec<usize>,
        #[serde(flatten)]
        train: TrainParams,
    },
    /// Command template for the external-model protocol; `{workdir}` is
    /// substituted with the prepared working directory.
    External { command: String },
}

impl ModelKind {
    pub fn train_params(&self) -> Option<&TrainParams> {
        match self {
            ModelKind::LogisticRegression { train } => Some(train),
            ModelKind::Mlp { train, .. } => Some(train),
            ModelKind::External { .. } => None,
        }
    }

    fn hidden_sizes(&self) -> Vec<usize> {
        match self {
            ModelKind::Mlp { hidden_sizes, .. } => hidden_sizes.clone(),
            _ => Vec::new(),
        }
    }
}

/// A named method: selection mode plus model family plus batch plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub selection: Selection,
    pub model: ModelKind,
    #[serde(default)]
    pub batch: BatchPlan,
    #[serde(default)]
    pub seed: u64,
}

impl MethodSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("method name must not be empty".into()));
        }
        match (&self.selection, &self.model) {
            (Selection::External, ModelKind::External { command }) => {
                if command.trim().is_empty() {
                    return Err(Error::Config(format!(
                        "method `{}`: external command template is empty",
                        self.name
                    )));
                }
            }
            (Selection::External, _) => {
                return Err(Error::Config(format!(
                    "method `{}`: external selection requires an external command",
                    self.name
                )))
            }
            (_, ModelKind::External { .. }) => {
                return Err(Error::Config(format!(
                    "method `{}`: external command requires external selection",
                    self.name
                )))
            }
            _ => {}
        }
        if let Some(train) = self.model.train_params() {
            train.validate()?;
            self.batch.validate()?;
        }
        Ok(())
    }
}

/// Per-domain train/holdout rows selected for one method at one split.
#[derive(Debug)]
pub struct DomainTrainData<'a> {
    pub domain_id: usize,
    /// Earliest 70% by event time.
    pub train: Vec<&'a Instance>,
    /// Latest 30% by event time.
    pub holdout: Vec<&'a Instance>,
}

#[derive(Debug)]
pub struct SelectedData<'a> {
    pub domains: Vec<DomainTrainData<'a>>,
}

impl<'a> SelectedData<'a> {
    pub fn train_union(&self) -> Vec<&'a Instance> {
        self.domains.iter().flat_map(|d| d.train.iter().copied()).collect()
    }

    pub fn n_train(&self) -> usize {
        self.domains.iter().map(|d| d.train.len()).sum()
    }
}

/// Outcome of data selection: a method can simply not be trainable yet (no
/// labels for its selection), which is a first-class result rather than an
/// error.
#[derive(Debug)]
pub enum SelectOutcome<'a> {
    Ready(SelectedData<'a>),
    Unavailable(String),
}

/// Select and split the labeled data for a method at one schedule step.
/// Within each participating domain, rows are ordered by event time; the
/// earliest 70% train and the latest 30% validate.
pub fn select_training_data<'a>(view: &SplitView<'a>, selection: Selection) -> SelectOutcome<'a> {
    let target = view.target_index();
    let participating: Vec<usize> = (0..view.n_domains())
        .filter(|&d| match selection {
            Selection::SourceOnly => d != target,
            Selection::TargetOnly => d == target,
            Selection::AllLabeled | Selection::External => true,
        })
        .collect();

    let mut domains = Vec::new();
    for d in participating {
        let rows: Vec<&Instance> = view.labeled(d).collect();
        if rows.is_empty() {
            continue;
        }
        debug_assert!(rows.windows(2).all(|w| w[0].event_time <= w[1].event_time));
        let n_train = (TRAIN_FRACTION * rows.len() as f64).floor() as usize;
        let (train, holdout) = rows.split_at(n_train);
        domains.push(DomainTrainData {
            domain_id: d,
            train: train.to_vec(),
            holdout: holdout.to_vec(),
        });
    }

    // Selection audit: the produced sets must honor the mode.
    for d in &domains {
        match selection {
            Selection::SourceOnly => assert_ne!(d.domain_id, target),
            Selection::TargetOnly => assert_eq!(d.domain_id, target),
            _ => {}
        }
    }

    if domains.iter().all(|d| d.train.is_empty()) {
        return SelectOutcome::Unavailable(format!(
            "no labeled training data for {selection:?} at step {}",
            view.step
        ));
    }
    SelectOutcome::Ready(SelectedData { domains })
}

/// What the early-stopping criterion maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// Mean recall@1%FPR across domains whose holdout has both classes.
    MeanHoldoutRecall,
    /// Negative holdout loss; fallback when no domain holdout has both
    /// classes.
    NegativeLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs_run: usize,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
    pub metric: ValidationMetric,
    /// Validation score after each epoch, in training order.
    pub validation_trace: Vec<f64>,
}

/// A trained scorer with its frozen preprocessing statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub net: Mlp,
    pub encoder: FeatureEncoder,
    pub meta: TrainMeta,
}

/// Train a native model on the selected data. Deterministic given
/// `(spec, data, rng_seed)`.
pub fn train(
    spec: &MethodSpec,
    schema: &Schema,
    data: &SelectedData<'_>,
    rng_seed: u64,
) -> Result<TrainedModel> {
    spec.validate()?;
    let params = spec
        .model
        .train_params()
        .ok_or_else(|| Error::Config(format!("method `{}` is not a native model", spec.name)))?;

    let train_rows = data.train_union();
    if train_rows.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    let n_pos = train_rows.iter().filter(|i| i.label).count();
    if n_pos == 0 || n_pos == train_rows.len() {
        return Err(Error::DegenerateClass(format!(
            "training set has {n_pos} positives out of {}",
            train_rows.len()
        )));
    }

    // Preprocessing statistics come from this method's own training rows and
    // are frozen into the model.
    let encoder = FeatureEncoder::fit(schema, train_rows.iter().copied());
    for row in &train_rows {
        encoder.check(row)?;
    }

    // Holdout domains usable for the recall metric need both classes.
    let holdout_encoded: Vec<(Vec<Vec<f64>>, Vec<bool>)> = data
        .domains
        .iter()
        .map(|d| {
            let xs = d.holdout.iter().map(|i| encoder.encode(i)).collect();
            let ys = d.holdout.iter().map(|i| i.label).collect();
            (xs, ys)
        })
        .collect();
    let usable: Vec<usize> = holdout_encoded
        .iter()
        .enumerate()
        .filter(|(_, (_, ys))| ys.iter().any(|&y| y) && ys.iter().any(|&y| !y))
        .map(|(i, _)| i)
        .collect();
    let metric = if usable.is_empty() {
        ValidationMetric::NegativeLoss
    } else {
        ValidationMetric::MeanHoldoutRecall
    };
    let pooled_holdout: (Vec<Vec<f64>>, Vec<bool>) = {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (hx, hy) in &holdout_encoded {
            xs.extend(hx.iter().cloned());
            ys.extend(hy.iter().copied());
        }
        (xs, ys)
    };

    let arch = MlpArch {
        input_dim: encoder.dim(),
        hidden: spec.model.hidden_sizes(),
    };
    let mut init_rng = seed::rng(seed::derive(rng_seed, "init", 0));
    let mut net = Mlp::init(arch, &mut init_rng);

    let mut stream = make_batches(&train_rows, &spec.batch, seed::derive(rng_seed, "train", 0))?;
    let batches_per_epoch = train_rows.len().div_ceil(spec.batch.batch_size).max(1);

    let score_of = |net: &Mlp| -> f64 {
        match metric {
            ValidationMetric::MeanHoldoutRecall => {
                let mut total = 0.0;
                for &d in &usable {
                    let (xs, ys) = &holdout_encoded[d];
                    let scores: Vec<f64> = xs.iter().map(|x| net.forward(x)).collect();
                    total += recall_at_fpr(&scores, ys, VALIDATION_FPR)
                        .expect("usable holdout has both classes");
                }
                total / usable.len() as f64
            }
            ValidationMetric::NegativeLoss => {
                if pooled_holdout.0.is_empty() {
                    f64::NEG_INFINITY
                } else {
                    -net.loss(&pooled_holdout.0, &pooled_holdout.1)
                }
            }
        }
    };

    let mut xs_buf: Vec<Vec<f64>> = Vec::new();
    let mut best_params = net.params.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut trace = Vec::new();
    let mut epochs_run = 0usize;

    for epoch in 1..=params.max_epochs {
        epochs_run = epoch;
        for _ in 0..batches_per_epoch {
            let batch = stream.next().expect("batch stream is infinite");
            xs_buf.clear();
            let mut ys = Vec::with_capacity(batch.len());
            for inst in &batch {
                xs_buf.push(encoder.encode(inst));
                ys.push(inst.label);
            }
            let (_, grad) = net.loss_and_grad(&xs_buf, &ys);
            net.step(&grad, params.learning_rate);
        }
        let score = score_of(&net);
        trace.push(score);
        if score > best_score {
            best_score = score;
            best_params = net.params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                break;
            }
        }
    }

    net.params = best_params;
    Ok(TrainedModel {
        net,
        encoder,
        meta: TrainMeta {
            epochs_run,
            best_epoch,
            metric,
            validation_trace: trace,
        },
    })
}

/// Score instances in input order; applies the frozen standardization before
/// the network.
pub fn score(model: &TrainedModel, instances: &[&Instance]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(instances.len());
    let mut buf = Vec::with_capacity(model.encoder.dim());
    for inst in instances {
        model.encoder.check(inst)?;
        model.encoder.encode_into(inst, &mut buf);
        out.push(model.net.forward(&buf));
    }
    Ok(out)
}
