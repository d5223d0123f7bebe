//! Metrics and significance analysis.
//!
//! The predictive metric is recall at a fixed false-positive-rate budget, the
//! standard operating point for fraud detection. Method comparisons use
//! paired t-tests per (method pair, split), pooled into one
//! Benjamini-Hochberg FDR correction, and methods are grouped into brackets
//! of mutually non-significant runs for reporting.

pub mod special;

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

/// Recall among positives when the score threshold is set to admit at most
/// `floor(fpr_budget * #negatives)` false positives.
///
/// Rows are ranked by score descending; tied scores form groups that are
/// admitted only whole, so the result does not depend on tie order.
pub fn recall_at_fpr(scores: &[f64], labels: &[bool], fpr_budget: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Pairing(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !(0.0..1.0).contains(&fpr_budget) {
        return Err(Error::InvalidArgument(format!(
            "fpr budget must lie in [0,1), got {fpr_budget}"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "recall@fpr needs both classes ({n_pos} positives, {n_neg} negatives)"
        )));
    }

    let budget = (fpr_budget * n_neg as f64).floor() as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        // tie group [i, j)
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let group_fp = order[i..j].iter().filter(|&&k| !labels[k]).count();
        if fp + group_fp > budget {
            break;
        }
        fp += group_fp;
        tp += (j - i) - group_fp;
        i = j;
    }
    Ok(tp as f64 / n_pos as f64)
}

/// Two-sided paired t-test p-value on the differences `a - b`.
///
/// Zero-variance differences short-circuit: all-zero gives p = 1, a nonzero
/// constant difference gives p = 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!(
            "vectors of length {} and {} cannot be paired",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 { 1.0 } else { 0.0 });
    }
    let t = mean / (var / n as f64).sqrt();
    Ok(special::t_two_sided(t, (n - 1) as f64))
}

/// Benjamini-Hochberg step-up at level `q`: returns the rejected keys.
/// Tied p-values share fate.
pub fn bh_fdr<K: Clone + Eq + std::hash::Hash>(
    pvalues: &[(K, f64)],
    q: f64,
) -> Result<HashSet<K>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "FDR level must lie in (0,1), got {q}"
        )));
    }
    if pvalues.is_empty() {
        return Ok(HashSet::new());
    }
    for (_, p) in pvalues {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::InvalidArgument(format!("p-value {p} outside [0,1]")));
        }
    }
    let m = pvalues.len() as f64;
    let mut sorted: Vec<f64> = pvalues.iter().map(|(_, p)| *p).collect();
    sorted.sort_by(f64::total_cmp);
    let mut threshold = None;
    for (i, p) in sorted.iter().enumerate() {
        if *p <= (i + 1) as f64 * q / m {
            threshold = Some(*p);
        }
    }
    let rejected = match threshold {
        None => HashSet::new(),
        Some(thr) => pvalues
            .iter()
            .filter(|(_, p)| *p <= thr)
            .map(|(k, _)| k.clone())
            .collect(),
    };
    Ok(rejected)
}

/// Group methods into maximal contiguous runs of mutually non-significant
/// neighbors, in descending order of mean recall (critical-difference style;
/// a method may appear in several overlapping runs).
///
/// `significant` holds the ordered pairs of significantly different methods
/// (both orientations).
pub fn group_methods(
    mean_recalls: &[(String, f64)],
    significant: &HashSet<(String, String)>,
) -> Vec<Vec<String>> {
    let mut order: Vec<usize> = (0..mean_recalls.len()).collect();
    order.sort_by(|&a, &b| mean_recalls[b].1.total_cmp(&mean_recalls[a].1));
    let name = |i: usize| mean_recalls[order[i]].0.clone();
    let sig = |i: usize, j: usize| {
        significant.contains(&(mean_recalls[order[i]].0.clone(), mean_recalls[order[j]].0.clone()))
    };

    let n = order.len();
    let mut groups = Vec::new();
    let mut last_end: Option<usize> = None;
    for start in 0..n {
        let mut end = start;
        'grow: while end + 1 < n {
            for k in start..=end {
                if sig(k, end + 1) {
                    break 'grow;
                }
            }
            end += 1;
        }
        if last_end.is_none_or(|le| end > le) {
            groups.push((start..=end).map(name).collect());
            last_end = Some(end);
        }
    }
    groups
}

// ---------------------------------------------------------------------------
// Result records and the statistical report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// Trained and evaluated.
    Ok,
    /// Method not trainable at this split (e.g. no target labels yet).
    Unavailable,
    /// Trained, but the test period had a single class so the metric is
    /// undefined.
    UndefinedMetric,
    /// Unexpected failure; see the diagnostic.
    Failed,
}

impl CellStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Unavailable => "unavailable",
            CellStatus::UndefinedMetric => "undefined_metric",
            CellStatus::Failed => "failed",
        }
    }

    pub fn parse_str(s: &str) -> Result<CellStatus> {
        match s {
            "ok" => Ok(CellStatus::Ok),
            "unavailable" => Ok(CellStatus::Unavailable),
            "undefined_metric" => Ok(CellStatus::UndefinedMetric),
            "failed" => Ok(CellStatus::Failed),
            other => Err(Error::InvalidArgument(format!("unknown cell status `{other}`"))),
        }
    }
}

/// Outcome of one (experiment, method, split) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub experiment: usize,
    pub method: String,
    pub split: usize,
    pub status: CellStatus,
    /// Present iff the method was trainable and the test period had both
    /// classes.
    pub recall: Option<f64>,
    pub n_test: usize,
    pub n_test_positives: usize,
    #[serde(default)]
    pub diagnostic: Option<String>,
}

/// How p-values are pooled for the FDR correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrFamily {
    /// One correction over every (method pair, split) of the suite.
    #[default]
    Pooled,
    /// Separate corrections per split.
    PerSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMean {
    pub method: String,
    /// Mean recall across experiments where the method produced a value.
    pub mean_recall: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStat {
    pub method_a: String,
    pub method_b: String,
    /// Number of experiments contributing a paired difference.
    pub n_pairs: usize,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: usize,
    pub methods: Vec<MethodMean>,
    pub pairs: Vec<PairStat>,
    /// Brackets of mutually non-significant methods, best mean first.
    pub groups: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub q: f64,
    pub family: FdrFamily,
    /// The bracket rule is one reading of "group methods that are not
    /// significantly different"; recorded here so reports are
    /// self-describing.
    pub grouping_rule: String,
    pub splits: Vec<SplitStats>,
}

/// Build the significance report over a suite's records.
///
/// Pairing is by experiment id at a fixed split; methods without a recall
/// value at a split are excluded from that split's tests and groups.
pub fn compute_stat_report(
    records: &[EvalRecord],
    method_order: &[String],
    q: f64,
    family: FdrFamily,
) -> Result<StatReport> {
    // (split, method) -> experiment -> recall
    let mut by_split: BTreeMap<usize, BTreeMap<&str, BTreeMap<usize, f64>>> = BTreeMap::new();
    for r in records {
        if let Some(recall) = r.recall {
            by_split
                .entry(r.split)
                .or_default()
                .entry(r.method.as_str())
                .or_default()
                .insert(r.experiment, recall);
        }
    }

    // p-values for every testable (split, pair)
    type PairKey = (usize, usize, usize); // split, method index a, method index b
    let mut pvalues: Vec<(PairKey, f64)> = Vec::new();
    let mut pair_meta: Vec<(PairKey, usize)> = Vec::new(); // n_pairs
    for (&split, methods) in &by_split {
        for i in 0..method_order.len() {
            for j in (i + 1)..method_order.len() {
                let (Some(ra), Some(rb)) = (
                    methods.get(method_order[i].as_str()),
                    methods.get(method_order[j].as_str()),
                ) else {
                    continue;
                };
                let mut a = Vec::new();
                let mut b = Vec::new();
                for (exp, va) in ra {
                    if let Some(vb) = rb.get(exp) {
                        a.push(*va);
                        b.push(*vb);
                    }
                }
                if a.len() >= 2 {
                    let p = paired_t_test(&a, &b)?;
                    pvalues.push(((split, i, j), p));
                    pair_meta.push(((split, i, j), a.len()));
                }
            }
        }
    }

    let rejected: HashSet<PairKey> = match family {
        FdrFamily::Pooled => bh_fdr(&pvalues, q)?,
        FdrFamily::PerSplit => {
            let mut all = HashSet::new();
            let splits: HashSet<usize> = pvalues.iter().map(|((s, _, _), _)| *s).collect();
            for s in splits {
                let subset: Vec<(PairKey, f64)> = pvalues
                    .iter()
                    .filter(|((sp, _, _), _)| *sp == s)
                    .cloned()
                    .collect();
                all.extend(bh_fdr(&subset, q)?);
            }
            all
        }
    };

    let p_of: BTreeMap<PairKey, f64> = pvalues.iter().cloned().collect();
    let n_of: BTreeMap<PairKey, usize> = pair_meta.iter().cloned().collect();

    let mut splits = Vec::new();
    for (&split, methods) in &by_split {
        let mut means = Vec::new();
        for name in method_order {
            if let Some(values) = methods.get(name.as_str()) {
                if !values.is_empty() {
                    means.push(MethodMean {
                        method: name.clone(),
                        mean_recall: values.values().sum::<f64>() / values.len() as f64,
                        n: values.len(),
                    });
                }
            }
        }

        let mut pairs = Vec::new();
        let mut sig_set: HashSet<(String, String)> = HashSet::new();
        for i in 0..method_order.len() {
            for j in (i + 1)..method_order.len() {
                let key = (split, i, j);
                if let Some(&p) = p_of.get(&key) {
                    let significant = rejected.contains(&key);
                    if significant {
                        sig_set.insert((method_order[i].clone(), method_order[j].clone()));
                        sig_set.insert((method_order[j].clone(), method_order[i].clone()));
                    }
                    pairs.push(PairStat {
                        method_a: method_order[i].clone(),
                        method_b: method_order[j].clone(),
                        n_pairs: n_of[&key],
                        p_value: p,
                        significant,
                    });
                }
            }
        }

        let mean_pairs: Vec<(String, f64)> = means
            .iter()
            .map(|m| (m.method.clone(), m.mean_recall))
            .collect();
        let groups = group_methods(&mean_pairs, &sig_set);

        splits.push(SplitStats {
            split,
            methods: means,
            pairs,
            groups,
        });
    }

    Ok(StatReport {
        q,
        family,
        grouping_rule: "maximal contiguous runs of mutually non-significant methods, \
                        ordered by mean recall"
            .into(),
        splits,
    })
}


#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn recall_invariant_under_monotone_transforms(
            raw in proptest::collection::vec((0..10u8, proptest::bool::ANY), 4..64),
            budget in 0.0..0.9f64,
        ) {
            let mut labels: Vec<bool> = raw.iter().map(|(_, l)| *l).collect();
            if labels.iter().all(|&l| l) { labels[0] = false; }
            if labels.iter().all(|&l| !l) { labels[0] = true; }
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s + 1.0).exp()).collect();
            let a = recall_at_fpr(&scores, &labels, budget).unwrap();
            let b = recall_at_fpr(&transformed, &labels, budget).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn bh_rejections_monotone_in_q(
            ps in proptest::collection::vec(0.0..=1.0f64, 1..40),
            q1 in 0.01..0.5f64,
            dq in 0.01..0.4f64,
        ) {
            let keyed: Vec<(usize, f64)> = ps.iter().cloned().enumerate().collect();
            let r1 = bh_fdr(&keyed, q1).unwrap();
            let r2 = bh_fdr(&keyed, q1 + dq).unwrap();
            prop_assert!(r1.is_subset(&r2));
        }

        #[test]
        fn t_test_invariant_under_constant_shift(
            pairs in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..20),
            shift in -5.0..5.0f64,
        ) {
            let a: Vec<f64> = pairs.iter().map(|(x, _)| *x).collect();
            let b: Vec<f64> = pairs.iter().map(|(_, y)| *y).collect();
            let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let b2: Vec<f64> = b.iter().map(|y| y + shift).collect();
            let p1 = paired_t_test(&a, &b).unwrap();
            let p2 = paired_t_test(&a2, &b2).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-9);
        }
    }
}
