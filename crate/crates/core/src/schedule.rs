//! Progressive data-arrival scheduler.
//!
//! Time is discretized into a timeline `t_1 < ... < t_l` starting when the
//! target domain appears (`t_beta`) and stepping by the update interval
//! `delta_t` up to the experiment end `t_gamma`. At each step `a` every
//! domain decomposes into the labeled rows (label already arrived,
//! `t_y <= t_a`) and the unlabeled rows (observed, label pending,
//! `t_x <= t_a < t_y`); models trained at `t_a` are tested on the target rows
//! of the next period `t_a <= t_x < t_{a+1}`, where label delay is ignored.

use serde::{Deserialize, Serialize};

use crate::dataset::Instance;
use crate::error::{Error, Result};
use crate::sampler::DomainSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    /// Start of source-domain data availability.
    pub t_alpha: f64,
    /// Appearance of the target domain; first timeline point.
    pub t_beta: f64,
    /// End of the experiment.
    pub t_gamma: f64,
    /// Interval between model updates; also the test period length.
    pub delta_t: f64,
    /// Label delay; consumed at ingestion but recorded here for manifests.
    pub delta_l: f64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_alpha < self.t_beta && self.t_beta < self.t_gamma) {
            return Err(Error::Config(format!(
                "need t_alpha < t_beta < t_gamma, got {} / {} / {}",
                self.t_alpha, self.t_beta, self.t_gamma
            )));
        }
        if self.delta_t <= 0.0 || self.delta_t.is_nan() {
            return Err(Error::Config(format!(
                "delta_t must be positive, got {}",
                self.delta_t
            )));
        }
        if self.delta_t > self.t_gamma - self.t_beta {
            return Err(Error::Config(format!(
                "delta_t {} exceeds the target window {}",
                self.delta_t,
                self.t_gamma - self.t_beta
            )));
        }
        if self.delta_l < 0.0 || self.delta_l.is_nan() {
            return Err(Error::Config(format!(
                "delta_l must be nonnegative, got {}",
                self.delta_l
            )));
        }
        Ok(())
    }
}

/// The maximal sequence `t_1 = t_beta, t_{a+1} = t_a + delta_t, t_l <= t_gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub config: ScheduleConfig,
    pub timestamps: Vec<f64>,
}

impl Timeline {
    /// Number of test periods, `l - 1`.
    pub fn n_splits(&self) -> usize {
        self.timestamps.len() - 1
    }
}

pub fn build_timeline(config: &ScheduleConfig) -> Result<Timeline> {
    config.validate()?;
    let at = |i: usize| config.t_beta + i as f64 * config.delta_t;
    // Maximal l with t_beta + l * delta_t <= t_gamma, robust to rounding in
    // the multiplication.
    let mut l = ((config.t_gamma - config.t_beta) / config.delta_t).floor() as usize;
    while at(l) > config.t_gamma {
        l -= 1;
    }
    while at(l + 1) <= config.t_gamma {
        l += 1;
    }
    let timestamps: Vec<f64> = (0..=l).map(at).collect();
    debug_assert!(timestamps.len() >= 2);
    Ok(Timeline {
        config: *config,
        timestamps,
    })
}

/// One step of the schedule: per-domain labeled/unlabeled index sets plus the
/// target test window. Indices point into the immutable domain datasets.
#[derive(Debug)]
pub struct SplitView<'a> {
    set: &'a DomainSet,
    /// 1-based step index `a`.
    pub step: usize,
    /// `t_a`: training cutoff and start of the test period.
    pub start: f64,
    /// `t_{a+1}`: end of the test period (exclusive).
    pub end: f64,
    labeled: Vec<Vec<usize>>,
    unlabeled: Vec<Vec<usize>>,
    test: Vec<usize>,
}

impl<'a> SplitView<'a> {
    pub fn domain_set(&self) -> &'a DomainSet {
        self.set
    }

    pub fn n_domains(&self) -> usize {
        self.set.k()
    }

    pub fn target_index(&self) -> usize {
        self.set.target_index
    }

    /// Labeled rows of domain `d` at this step, in event-time order.
    pub fn labeled(&self, d: usize) -> impl Iterator<Item = &'a Instance> + '_ {
        self.labeled[d]
            .iter()
            .map(move |&i| &self.set.domains[d].instances[i])
    }

    pub fn n_labeled(&self, d: usize) -> usize {
        self.labeled[d].len()
    }

    /// Rows of domain `d` observed but not yet labeled at this step. Callers
    /// must treat these as unlabeled; their label fields are off limits.
    pub fn unlabeled(&self, d: usize) -> impl Iterator<Item = &'a Instance> + '_ {
        self.unlabeled[d]
            .iter()
            .map(move |&i| &self.set.domains[d].instances[i])
    }

    pub fn n_unlabeled(&self, d: usize) -> usize {
        self.unlabeled[d].len()
    }

    /// Target rows of the test period `[start, end)`, for scoring.
    pub fn test_rows(&self) -> impl Iterator<Item = &'a Instance> + '_ {
        let target = self.set.target_index;
        self.test
            .iter()
            .map(move |&i| &self.set.domains[target].instances[i])
    }

    pub fn n_test(&self) -> usize {
        self.test.len()
    }

    /// Ground-truth labels of the test rows. Evaluation only; label delay
    /// does not apply to test labels.
    pub fn test_labels(&self) -> Vec<bool> {
        self.test_rows().map(|i| i.label).collect()
    }
}

/// Decompose all domains at step `a` (1-based, `1 <= a <= l-1`).
///
/// Source rows earlier than `t_alpha` and target rows earlier than `t_beta`
/// are excluded entirely; a target row exactly at `t_beta` belongs to the
/// first test period.
pub fn split_at<'a>(domains: &'a DomainSet, timeline: &Timeline, a: usize) -> Result<SplitView<'a>> {
    let l = timeline.timestamps.len();
    if a < 1 || a > l - 1 {
        return Err(Error::Index(format!(
            "step {a} outside the valid range [1, {}]",
            l - 1
        )));
    }
    let t_a = timeline.timestamps[a - 1];
    let t_next = timeline.timestamps[a];
    let cfg = &timeline.config;
    let target = domains.target_index;

    let mut labeled = Vec::with_capacity(domains.k());
    let mut unlabeled = Vec::with_capacity(domains.k());
    let mut test = Vec::new();
    for (d, dom) in domains.domains.iter().enumerate() {
        let is_target = d == target;
        let earliest = if is_target { cfg.t_beta } else { cfg.t_alpha };
        let mut lab = Vec::new();
        let mut unl = Vec::new();
        for (i, inst) in dom.instances.iter().enumerate() {
            if inst.event_time < earliest {
                continue;
            }
            if inst.label_time <= t_a {
                lab.push(i);
            } else if inst.event_time <= t_a {
                unl.push(i);
            }
            if is_target && inst.event_time >= t_a && inst.event_time < t_next {
                test.push(i);
            }
        }
        labeled.push(lab);
        unlabeled.push(unl);
    }

    Ok(SplitView {
        set: domains,
        step: a,
        start: t_a,
        end: t_next,
        labeled,
        unlabeled,
        test,
    })
}

/// All split views `a = 1 ..= l-1`, in order.
pub fn iterate_splits<'a>(domains: &'a DomainSet, timeline: &Timeline) -> Result<Vec<SplitView<'a>>> {
    (1..=timeline.n_splits())
        .map(|a| split_at(domains, timeline, a))
        .collect()
}

/// Named schedule presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePreset {
    /// Month-indexed schedule: t_alpha 0, t_beta 3, t_gamma 8, unit steps and
    /// unit label delay. Five test periods.
    Baf,
    /// Week-indexed schedule with a random start: t_alpha uniform over
    /// {0..7}, target appears 16 weeks later, experiment ends 34 weeks after
    /// t_alpha, two-week updates, four-week label delay. Nine test periods.
    AcquirersShape,
}

impl SchedulePreset {
    pub fn from_name(name: &str) -> Result<SchedulePreset> {
        match name {
            "baf" => Ok(SchedulePreset::Baf),
            "acquirers-shape" => Ok(SchedulePreset::AcquirersShape),
            other => Err(Error::Config(format!("unknown schedule preset `{other}`"))),
        }
    }

    /// Integer choices for the randomized source start, if any.
    pub fn t_alpha_choices(&self) -> Option<(i64, i64)> {
        match self {
            SchedulePreset::Baf => None,
            SchedulePreset::AcquirersShape => Some((0, 7)),
        }
    }

    /// Resolve to a concrete config given the source start.
    pub fn resolve(&self, t_alpha: f64) -> ScheduleConfig {
        match self {
            SchedulePreset::Baf => ScheduleConfig {
                t_alpha,
                t_beta: t_alpha + 3.0,
                t_gamma: t_alpha + 8.0,
                delta_t: 1.0,
                delta_l: 1.0,
            },
            SchedulePreset::AcquirersShape => ScheduleConfig {
                t_alpha,
                t_beta: t_alpha + 16.0,
                t_gamma: t_alpha + 34.0,
                delta_t: 2.0,
                delta_l: 4.0,
            },
        }
    }

    pub fn default_t_alpha(&self) -> f64 {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Dataset;
    use crate::schema::{FeatureDef, FeatureKind, Schema};
    use std::sync::Arc;

    fn baf_config() -> ScheduleConfig {
        SchedulePreset::Baf.resolve(0.0)
    }

    #[test]
    fn baf_timeline_has_five_test_periods() {
        let tl = build_timeline(&baf_config()).unwrap();
        assert_eq!(tl.timestamps, vec![3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(tl.n_splits(), 5);
    }

    #[test]
    fn acquirers_timeline_has_nine_test_periods_for_every_start() {
        for t_alpha in 0..=7 {
            let cfg = SchedulePreset::AcquirersShape.resolve(t_alpha as f64);
            let tl = build_timeline(&cfg).unwrap();
            assert_eq!(tl.timestamps.len(), 10, "t_alpha = {t_alpha}");
            assert_eq!(tl.n_splits(), 9);
            assert_eq!(tl.timestamps[0], cfg.t_beta);
            assert!(tl.timestamps[9] <= cfg.t_gamma);
        }
    }

    #[test]
    fn minimal_schedule_has_one_test_period() {
        let cfg = ScheduleConfig {
            t_alpha: 0.0,
            t_beta: 2.0,
            t_gamma: 5.0,
            delta_t: 3.0,
            delta_l: 0.0,
        };
        let tl = build_timeline(&cfg).unwrap();
        assert_eq!(tl.timestamps, vec![2.0, 5.0]);
        assert_eq!(tl.n_splits(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = baf_config();
        cfg.t_beta = cfg.t_gamma;
        assert!(build_timeline(&cfg).is_err());
        let mut cfg = baf_config();
        cfg.delta_t = 10.0;
        assert!(build_timeline(&cfg).is_err());
        let mut cfg = baf_config();
        cfg.delta_l = -1.0;
        assert!(build_timeline(&cfg).is_err());
    }

    fn schema() -> Schema {
        Schema {
            features: vec![FeatureDef {
                name: "x".into(),
                kind: FeatureKind::Numerical,
            }],
            label_column: "y".into(),
            event_time_column: "t".into(),
            time_unit: "month".into(),
        }
    }

    fn inst(t_x: f64, t_y: f64, id: u64) -> Instance {
        Instance {
            numeric_values: vec![0.0],
            category_codes: vec![],
            label: id % 2 == 0,
            event_time: t_x,
            label_time: t_y,
            row_id: id,
        }
    }

    /// Two domains (source 1, target 0) with hand-placed rows.
    fn two_domain_set(source_rows: Vec<Instance>, target_rows: Vec<Instance>) -> DomainSet {
        let s = Arc::new(schema());
        let mut target = Dataset::new(s.clone(), target_rows);
        target.domain_id = 0;
        let mut source = Dataset::new(s, source_rows);
        source.domain_id = 1;
        let anchors = vec![
            target.instances.first().cloned().unwrap(),
            source.instances.first().cloned().unwrap(),
        ];
        DomainSet {
            domains: vec![target, source],
            anchors,
            target_index: 0,
        }
    }

    #[test]
    fn boundary_of_the_labeled_rule_is_closed() {
        // t_y = 3 at t_a = 3 is labeled
        let set = two_domain_set(vec![inst(2.0, 3.0, 0)], vec![inst(3.5, 9.0, 1)]);
        let tl = build_timeline(&baf_config()).unwrap();
        let view = split_at(&set, &tl, 1).unwrap();
        assert_eq!(view.n_labeled(1), 1);
        assert_eq!(view.n_unlabeled(1), 0);
    }

    #[test]
    fn pending_label_lands_in_unlabeled() {
        // t_x = 2.5, t_y = 3.5 at t_a = 3: observed, label pending
        let set = two_domain_set(vec![inst(2.5, 3.5, 0)], vec![inst(3.5, 9.0, 1)]);
        let tl = build_timeline(&baf_config()).unwrap();
        let view = split_at(&set, &tl, 1).unwrap();
        assert_eq!(view.n_labeled(1), 0);
        assert_eq!(view.n_unlabeled(1), 1);
    }

    #[test]
    fn first_test_period_is_half_open() {
        let target = vec![
            inst(3.0, 4.0, 0), // exactly at t_beta: first test period
            inst(3.9, 4.9, 1),
            inst(4.0, 5.0, 2), // second period
            inst(2.9, 3.9, 3), // before t_beta: dropped entirely
        ];
        let set = two_domain_set(vec![inst(0.5, 1.5, 9)], target);
        let tl = build_timeline(&baf_config()).unwrap();
        let view = split_at(&set, &tl, 1).unwrap();
        let rows: Vec<u64> = view.test_rows().map(|i| i.row_id).collect();
        assert_eq!(rows, vec![0, 1]);
        // the pre-t_beta target row never becomes training data either
        let last = split_at(&set, &tl, 5).unwrap();
        assert!(last.labeled(0).all(|i| i.row_id != 3));
    }

    #[test]
    fn source_rows_before_t_alpha_are_dropped() {
        let cfg = ScheduleConfig {
            t_alpha: 1.0,
            t_beta: 3.0,
            t_gamma: 8.0,
            delta_t: 1.0,
            delta_l: 1.0,
        };
        let set = two_domain_set(
            vec![inst(0.5, 1.5, 0), inst(1.0, 2.0, 1)],
            vec![inst(3.5, 4.5, 2)],
        );
        let tl = build_timeline(&cfg).unwrap();
        let view = split_at(&set, &tl, 1).unwrap();
        let labeled: Vec<u64> = view.labeled(1).map(|i| i.row_id).collect();
        assert_eq!(labeled, vec![1]);
    }

    #[test]
    fn splits_iterate_in_order_and_grow_monotonically() {
        let mut rows = Vec::new();
        for i in 0..200u64 {
            let t = i as f64 * 8.0 / 200.0;
            rows.push(inst(t, t + 1.0, i));
        }
        let set = two_domain_set(rows.clone(), rows);
        let tl = build_timeline(&baf_config()).unwrap();
        let views = iterate_splits(&set, &tl).unwrap();
        assert_eq!(views.len(), 5);
        for d in 0..2 {
            for w in views.windows(2) {
                let earlier: std::collections::HashSet<u64> =
                    w[0].labeled(d).map(|i| i.row_id).collect();
                let later: std::collections::HashSet<u64> =
                    w[1].labeled(d).map(|i| i.row_id).collect();
                assert!(earlier.is_subset(&later));
            }
        }
        // test sets partition the evaluation window [t_beta, t_l)
        let mut seen = std::collections::HashSet::new();
        for v in &views {
            for row in v.test_rows() {
                assert!(seen.insert(row.row_id), "row {} tested twice", row.row_id);
            }
        }
        let expected: std::collections::HashSet<u64> = set.domains[0]
            .instances
            .iter()
            .filter(|i| i.event_time >= 3.0 && i.event_time < 8.0)
            .map(|i| i.row_id)
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn labeled_and_unlabeled_are_disjoint_and_exhaustive() {
        let mut rows = Vec::new();
        for i in 0..300u64 {
            let t = (i as f64 * 7.93) % 8.0;
            rows.push(inst(t, t + 1.0, i));
        }
        let set = two_domain_set(rows.clone(), rows);
        let tl = build_timeline(&baf_config()).unwrap();
        for view in iterate_splits(&set, &tl).unwrap() {
            for d in 0..2 {
                let lab: std::collections::HashSet<u64> =
                    view.labeled(d).map(|i| i.row_id).collect();
                let unl: std::collections::HashSet<u64> =
                    view.unlabeled(d).map(|i| i.row_id).collect();
                assert!(lab.is_disjoint(&unl));
                let earliest = if d == 0 { 3.0 } else { 0.0 };
                let expected: std::collections::HashSet<u64> = set.domains[d]
                    .instances
                    .iter()
                    .filter(|i| i.event_time >= earliest && i.event_time <= view.start)
                    .map(|i| i.row_id)
                    .collect();
                let union: std::collections::HashSet<u64> = lab.union(&unl).copied().collect();
                assert_eq!(union, expected);
            }
        }
    }

    #[test]
    fn out_of_range_step_is_an_error() {
        let set = two_domain_set(vec![inst(1.0, 2.0, 0)], vec![inst(4.0, 5.0, 1)]);
        let tl = build_timeline(&baf_config()).unwrap();
        assert!(split_at(&set, &tl, 0).is_err());
        assert!(split_at(&set, &tl, 6).is_err());
    }

    #[test]
    fn preset_names_round_trip() {
        assert_eq!(SchedulePreset::from_name("baf").unwrap(), SchedulePreset::Baf);
        assert_eq!(
            SchedulePreset::from_name("acquirers-shape").unwrap(),
            SchedulePreset::AcquirersShape
        );
        assert!(SchedulePreset::from_name("nope").is_err());
    }
}
