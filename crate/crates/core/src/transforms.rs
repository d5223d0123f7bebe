//! Parameterized distribution shifts, optionally time-dependent.
//!
//! Every transformation is scaled by a magnitude schedule `tau(t)` in [0, 1]
//! evaluated at the instance's event time: constant 1 for fixed inter-domain
//! changes, a linear ramp for gradual drift, or a sine wave for seasonality.
//! Per-row randomness is derived from (spec seed, domain id, row id), so a
//! transformed dataset is reproducible and independent of row order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::sampler::DomainSet;
use crate::schema::{FeatureKind, FeatureSlot, Schema};
use crate::seed;

/// Magnitude schedule; output always lies in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TauSchedule {
    /// Always 1.
    Constant,
    /// 0 at `t_min`, 1 at `t_max`, clamped outside.
    Linear { t_min: f64, t_max: f64 },
    /// `0.5 * (1 + sin(2 pi t / period + phase))`.
    Sine { period: f64, phase: f64 },
}

impl TauSchedule {
    pub fn linear(t_min: f64, t_max: f64) -> Result<TauSchedule> {
        if t_max <= t_min || t_max.is_nan() || t_min.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "degenerate range for linear schedule: [{t_min}, {t_max}]"
            )));
        }
        Ok(TauSchedule::Linear { t_min, t_max })
    }

    pub fn sine(period: f64, phase: f64) -> Result<TauSchedule> {
        if period <= 0.0 || period.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "sine period must be positive, got {period}"
            )));
        }
        Ok(TauSchedule::Sine { period, phase })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TauSchedule::Constant => 1.0,
            TauSchedule::Linear { t_min, t_max } => {
                ((t - t_min) / (t_max - t_min)).clamp(0.0, 1.0)
            }
            TauSchedule::Sine { period, phase } => {
                0.5 * (1.0 + (2.0 * std::f64::consts::PI * t / period + phase).sin())
            }
        }
    }
}

/// Rescale a numerical value: `x * alpha^tau(t)`.
pub fn rescale(x: f64, t: f64, alpha: f64, tau: &TauSchedule) -> f64 {
    x * alpha.powf(tau.eval(t))
}

/// Blend a numerical value toward an anchor value `beta` with weight
/// `gamma * tau(t)`.
pub fn anchor_blend(x: f64, t: f64, beta: f64, gamma: f64, tau: &TauSchedule) -> f64 {
    let w = gamma * tau.eval(t);
    (1.0 - w) * x + w * beta
}

/// With probability `tau(t)` redraw a category code from the target marginal,
/// otherwise keep it. The kept branch realizes the `(1 - tau) P(X)` mixture
/// component without estimating the original marginal.
pub fn categorical_resample(
    code: usize,
    t: f64,
    target_marginal: &[f64],
    tau: &TauSchedule,
    rng: &mut impl Rng,
) -> usize {
    if rng.random::<f64>() >= tau.eval(t) {
        return code;
    }
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_nonzero = code;
    for (i, &p) in target_marginal.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        cum += p;
        if u < cum {
            return i;
        }
    }
    last_nonzero
}

/// Gated probabilistic label flip: if the gate feature value exceeds the
/// threshold, flip with probability `flip_prob * tau(t)`.
pub fn concept_flip(
    label: bool,
    gate_value: f64,
    t: f64,
    flip_prob: f64,
    threshold: f64,
    tau: &TauSchedule,
    rng: &mut impl Rng,
) -> bool {
    if gate_value > threshold && rng.random::<f64>() < flip_prob * tau.eval(t) {
        !label
    } else {
        label
    }
}

/// One parameterized shift on one feature of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    /// Transformed feature; for `ConceptFlip` this is the gate feature.
    pub feature: String,
    #[serde(flatten)]
    pub kind: TransformKind,
    pub tau: TauSchedule,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformKind {
    /// Multiply a numerical feature by `alpha^tau(t)`.
    Rescale { alpha: f64 },
    /// Weighted average of a numerical feature with anchor value `beta`.
    AnchorBlend { beta: f64, gamma: f64 },
    /// Pull a categorical feature's marginal toward `target_marginal`.
    CategoricalResample { target_marginal: Vec<f64> },
    /// Flip labels with probability `flip_prob * tau(t)` where the gate
    /// feature exceeds `gate_threshold`.
    ConceptFlip { flip_prob: f64, gate_threshold: f64 },
}

impl TransformKind {
    fn name(&self) -> &'static str {
        match self {
            TransformKind::Rescale { .. } => "rescale",
            TransformKind::AnchorBlend { .. } => "anchor_blend",
            TransformKind::CategoricalResample { .. } => "categorical_resample",
            TransformKind::ConceptFlip { .. } => "concept_flip",
        }
    }
}

impl TransformSpec {
    /// Check parameter ranges and that the feature exists with the right
    /// kind. `domain` only labels the error message.
    pub fn validate(&self, schema: &Schema, domain: usize) -> Result<()> {
        let def = self.feature_def(schema, domain)?;
        match &self.kind {
            TransformKind::Rescale { alpha } => {
                if *alpha <= 0.0 || alpha.is_nan() {
                    return Err(Error::InvalidArgument(format!(
                        "rescale alpha must be positive, got {alpha}"
                    )));
                }
                self.require_numerical(def, domain)?;
            }
            TransformKind::AnchorBlend { gamma, .. } => {
                if !(0.0..=1.0).contains(gamma) {
                    return Err(Error::InvalidArgument(format!(
                        "anchor_blend gamma must lie in [0,1], got {gamma}"
                    )));
                }
                self.require_numerical(def, domain)?;
            }
            TransformKind::CategoricalResample { target_marginal } => {
                let vocab_len = match &def.kind {
                    FeatureKind::Categorical { vocabulary } => vocabulary.len(),
                    FeatureKind::Numerical => {
                        return Err(Error::Type(format!(
                            "domain {domain}: categorical_resample targets numerical feature `{}`",
                            self.feature
                        )))
                    }
                };
                if target_marginal.len() != vocab_len {
                    return Err(Error::InvalidArgument(format!(
                        "target marginal has {} entries for a vocabulary of {}",
                        target_marginal.len(),
                        vocab_len
                    )));
                }
                if target_marginal.iter().any(|p| *p < 0.0) {
                    return Err(Error::InvalidArgument(
                        "target marginal entries must be nonnegative".into(),
                    ));
                }
                let total: f64 = target_marginal.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "target marginal sums to {total}, expected 1"
                    )));
                }
            }
            TransformKind::ConceptFlip { flip_prob, .. } => {
                if !(0.0..=1.0).contains(flip_prob) {
                    return Err(Error::InvalidArgument(format!(
                        "flip probability must lie in [0,1], got {flip_prob}"
                    )));
                }
                self.require_numerical(def, domain)?;
            }
        }
        Ok(())
    }

    fn feature_def<'s>(&self, schema: &'s Schema, domain: usize) -> Result<&'s crate::schema::FeatureDef> {
        schema.feature(&self.feature).ok_or_else(|| {
            Error::Type(format!(
                "domain {domain}: transform `{}` names unknown feature `{}`",
                self.kind.name(),
                self.feature
            ))
        })
    }

    fn require_numerical(&self, def: &crate::schema::FeatureDef, domain: usize) -> Result<()> {
        if !def.kind.is_numerical() {
            return Err(Error::Type(format!(
                "domain {domain}: transform `{}` requires numerical feature, `{}` is categorical",
                self.kind.name(),
                self.feature
            )));
        }
        Ok(())
    }

    /// Apply this spec to one instance in place. `rng` must already be the
    /// per-(spec, domain, row) stream.
    fn apply(&self, slot: FeatureSlot, inst: &mut Instance, rng: &mut impl Rng) {
        let t = inst.event_time;
        match (&self.kind, slot) {
            (TransformKind::Rescale { alpha }, FeatureSlot::Numerical(f)) => {
                inst.numeric_values[f] = rescale(inst.numeric_values[f], t, *alpha, &self.tau);
            }
            (TransformKind::AnchorBlend { beta, gamma }, FeatureSlot::Numerical(f)) => {
                inst.numeric_values[f] =
                    anchor_blend(inst.numeric_values[f], t, *beta, *gamma, &self.tau);
            }
            (TransformKind::CategoricalResample { target_marginal }, FeatureSlot::Categorical(f)) => {
                inst.category_codes[f] =
                    categorical_resample(inst.category_codes[f], t, target_marginal, &self.tau, rng);
            }
            (TransformKind::ConceptFlip { flip_prob, gate_threshold }, FeatureSlot::Numerical(f)) => {
                inst.label = concept_flip(
                    inst.label,
                    inst.numeric_values[f],
                    t,
                    *flip_prob,
                    *gate_threshold,
                    &self.tau,
                    rng,
                );
            }
            _ => unreachable!("validated spec/slot mismatch"),
        }
    }
}

/// Per-domain lists of transform specs; index = domain id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransformPlan {
    pub per_domain: Vec<Vec<TransformSpec>>,
}

impl TransformPlan {
    pub fn empty(k: usize) -> TransformPlan {
        TransformPlan {
            per_domain: vec![Vec::new(); k],
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        for (d, specs) in self.per_domain.iter().enumerate() {
            let mut seen = std::collections::HashSet::new();
            for spec in specs {
                spec.validate(schema, d)?;
                if !seen.insert((spec.feature.clone(), spec.kind.name())) {
                    return Err(Error::Config(format!(
                        "domain {d}: duplicate `{}` transform on feature `{}`",
                        spec.kind.name(),
                        spec.feature
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Transform every instance of every domain by that domain's specs in listed
/// order, at `t = event_time`. Timestamps are never modified. Deterministic
/// given each transform's seed and independent of row order.
pub fn apply_plan(domains: &DomainSet, plan: &TransformPlan) -> Result<DomainSet> {
    let schema = domains.schema();
    if plan.per_domain.len() != domains.k() {
        return Err(Error::Config(format!(
            "plan covers {} domains but the set has {}",
            plan.per_domain.len(),
            domains.k()
        )));
    }
    plan.validate(schema)?;

    let mut out_domains = Vec::with_capacity(domains.k());
    for (d, domain) in domains.domains.iter().enumerate() {
        let specs = &plan.per_domain[d];
        let slots: Vec<FeatureSlot> = specs
            .iter()
            .map(|s| schema.slot(&s.feature).expect("validated feature"))
            .collect();
        let mut dom = domain.clone();
        dom.standardization_stats = None;
        for inst in dom.instances.iter_mut() {
            for (spec, slot) in specs.iter().zip(&slots) {
                let stream = seed::derive(
                    seed::derive(spec.seed, "domain", d as u64),
                    "row",
                    inst.row_id,
                );
                let mut rng = seed::rng(stream);
                spec.apply(*slot, inst, &mut rng);
            }
        }
        out_domains.push(dom);
    }

    // Anchors follow their transformed rows.
    let anchors = domains
        .anchors
        .iter()
        .enumerate()
        .map(|(d, a)| {
            out_domains[d]
                .instances
                .iter()
                .find(|i| i.row_id == a.row_id)
                .cloned()
                .unwrap_or_else(|| a.clone())
        })
        .collect();

    Ok(DomainSet {
        domains: out_domains,
        anchors,
        target_index: domains.target_index,
    })
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn schedule_strategy() -> impl Strategy<Value = TauSchedule> {
        prop_oneof![
            Just(TauSchedule::Constant),
            (-1e3..1e3f64, 1e-3..1e3f64)
                .prop_map(|(lo, w)| TauSchedule::Linear { t_min: lo, t_max: lo + w }),
            (1e-3..1e4f64, -10.0..10.0f64)
                .prop_map(|(period, phase)| TauSchedule::Sine { period, phase }),
        ]
    }

    proptest! {
        #[test]
        fn tau_always_in_unit_interval(s in schedule_strategy(), t in -1e6..1e6f64) {
            let v = s.eval(t);
            prop_assert!((0.0..=1.0).contains(&v), "tau = {v}");
        }

        #[test]
        fn blend_at_feature_mean_preserves_mean(xs in proptest::collection::vec(-1e3..1e3f64, 2..40), gamma in 0.0..=1.0f64) {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let tau = TauSchedule::Constant;
            let blended_mean = xs.iter().map(|x| anchor_blend(*x, 0.0, mean, gamma, &tau)).sum::<f64>() / xs.len() as f64;
            prop_assert!((blended_mean - mean).abs() < 1e-6 * (1.0 + mean.abs()));
        }

        #[test]
        fn numeric_transforms_are_affine_for_constant_tau(
            x1 in -1e3..1e3f64,
            x2 in -1e3..1e3f64,
            alpha in 1e-3..1e3f64,
            beta in -1e3..1e3f64,
            gamma in 0.0..=1.0f64,
        ) {
            // midpoint maps to midpoint under any affine map
            let tau = TauSchedule::Constant;
            let mid = 0.5 * (x1 + x2);
            let scale = 1.0 + x1.abs().max(x2.abs());
            let r = 0.5 * (rescale(x1, 0.0, alpha, &tau) + rescale(x2, 0.0, alpha, &tau));
            prop_assert!((rescale(mid, 0.0, alpha, &tau) - r).abs() < 1e-9 * scale * alpha.max(1.0));
            let b = 0.5 * (anchor_blend(x1, 0.0, beta, gamma, &tau) + anchor_blend(x2, 0.0, beta, gamma, &tau));
            prop_assert!((anchor_blend(mid, 0.0, beta, gamma, &tau) - b).abs() < 1e-9 * scale.max(beta.abs()));
        }
    }
}
