//! Domain sampler: carve k correlated sub-domains out of one dataset.
//!
//! Each domain is grown around an anchor row drawn uniformly without
//! replacement. Every instance joins the domain independently with
//! probability `exp(-lambda * distance(instance, anchor))`, so domains shrink
//! and tighten around their anchors as `lambda` grows, and `lambda = 0`
//! reproduces the full dataset k times.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::schema::Schema;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Number of domains (>= 2 for any transfer experiment).
    pub k: usize,
    /// Exponential decay rate; regulates the expected domain size.
    pub lambda: f64,
    pub seed: u64,
    /// Which domain plays the target role; all others are sources.
    #[serde(default)]
    pub target_index: usize,
    /// Assign each instance to at most the first domain that samples it.
    #[serde(default)]
    pub disjoint: bool,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!(
                "a transfer experiment needs k >= 2 domains, got {}",
                self.k
            )));
        }
        if self.lambda < 0.0 || self.lambda.is_nan() {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if self.target_index >= self.k {
            return Err(Error::Config(format!(
                "target_index {} out of range for k = {}",
                self.target_index, self.k
            )));
        }
        Ok(())
    }
}

/// The k sampled domains plus the anchors they grew from. Anchor d is always
/// a member of domain d (its inclusion probability is exp(0) = 1).
#[derive(Debug, Clone)]
pub struct DomainSet {
    pub domains: Vec<Dataset>,
    pub anchors: Vec<Instance>,
    pub target_index: usize,
}

impl DomainSet {
    pub fn k(&self) -> usize {
        self.domains.len()
    }

    pub fn schema(&self) -> &Schema {
        &self.domains[0].schema
    }

    /// Original-file row ids of the anchors, for manifests.
    pub fn anchor_rows(&self) -> Vec<u64> {
        self.anchors.iter().map(|a| a.row_id).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.domains.iter().map(|d| d.len()).collect()
    }
}

/// Row distance for mixed tabular features: squared difference of
/// sigma-standardized values for numericals plus a 0/1 indicator for
/// categoricals. `sigmas` is the per-numerical-feature population std of the
/// full dataset; zero-variance features contribute nothing.
pub fn distance(a: &Instance, b: &Instance, schema: &Schema, sigmas: &[f64]) -> Result<f64> {
    let n_num = schema.n_numerical();
    let n_cat = schema.n_categorical();
    if a.numeric_values.len() != n_num
        || b.numeric_values.len() != n_num
        || a.category_codes.len() != n_cat
        || b.category_codes.len() != n_cat
        || sigmas.len() != n_num
    {
        return Err(Error::Type(
            "instances do not conform to the schema shape".into(),
        ));
    }
    let mut sum = 0.0;
    for f in 0..n_num {
        let sigma = sigmas[f];
        if sigma > 0.0 {
            let d = (a.numeric_values[f] - b.numeric_values[f]) / sigma;
            sum += d * d;
        }
    }
    for f in 0..n_cat {
        if a.category_codes[f] != b.category_codes[f] {
            sum += 1.0;
        }
    }
    Ok(sum)
}

/// Expected domain size around `anchor` at decay rate `lambda`:
/// the sum of inclusion probabilities over the whole dataset.
pub fn expected_size(
    dataset: &Dataset,
    anchor: &Instance,
    lambda: f64,
    sigmas: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for inst in &dataset.instances {
        let d = distance(inst, anchor, &dataset.schema, sigmas)?;
        total += (-lambda * d).exp();
    }
    Ok(total)
}

/// Sample k domains with freshly drawn anchors. Anchors are drawn uniformly
/// without replacement; each per-domain inclusion pass runs on its own
/// derived seed, so membership is a deterministic function of `config.seed`.
pub fn sample_domains(dataset: &Dataset, config: &SamplerConfig) -> Result<DomainSet> {
    if config.k == 0 {
        return Err(Error::Config("k must be positive".into()));
    }
    if config.k > dataset.len() {
        return Err(Error::Anchor(format!(
            "cannot draw {} anchors from {} instances",
            config.k,
            dataset.len()
        )));
    }
    let anchors = draw_anchors(dataset, config.k, config.seed)?;
    let set = sample_with_anchors(
        dataset,
        &anchors,
        config.lambda,
        config.seed,
        config.disjoint,
    )?;
    Ok(DomainSet {
        target_index: config.target_index,
        ..set
    })
}

/// Draw k anchors uniformly without replacement (partial Fisher-Yates).
pub fn draw_anchors(dataset: &Dataset, k: usize, config_seed: u64) -> Result<Vec<Instance>> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::Anchor(format!(
            "cannot draw {k} anchors from {n} instances"
        )));
    }
    let mut rng = seed::rng(seed::derive(config_seed, "anchors", 0));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    Ok(idx[..k]
        .iter()
        .map(|&i| dataset.instances[i].clone())
        .collect())
}

/// Sample one domain per given anchor. Exposed separately so that expected
/// vs. empirical inclusion rates can be audited with the anchors held fixed.
pub fn sample_with_anchors(
    dataset: &Dataset,
    anchors: &[Instance],
    lambda: f64,
    sampling_seed: u64,
    disjoint: bool,
) -> Result<DomainSet> {
    if anchors.is_empty() {
        return Err(Error::Anchor("at least one anchor is required".into()));
    }
    if lambda < 0.0 || lambda.is_nan() {
        return Err(Error::Config(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let sigmas = dataset.feature_sigmas();
    let k = anchors.len();

    // In disjoint mode every anchor pre-claims its own row so that the
    // "anchor d belongs to domain d" invariant survives the first-takes-it
    // assignment rule.
    let mut claimed: Vec<Option<usize>> = vec![None; dataset.len()];
    if disjoint {
        for (d, anchor) in anchors.iter().enumerate() {
            if let Some(pos) = dataset
                .instances
                .iter()
                .position(|i| i.row_id == anchor.row_id)
            {
                if claimed[pos].is_none() {
                    claimed[pos] = Some(d);
                }
            }
        }
    }

    let mut domains = Vec::with_capacity(k);
    for (d, anchor) in anchors.iter().enumerate() {
        let mut rng = seed::rng(seed::derive(sampling_seed, "domain", d as u64));
        let mut members = Vec::new();
        for (pos, inst) in dataset.instances.iter().enumerate() {
            let dist = distance(inst, anchor, &dataset.schema, &sigmas)?;
            let p = (-lambda * dist).exp();
            // Exactly one draw per (domain, instance) keeps the stream layout
            // independent of the disjoint flag.
            let drawn = rng.random::<f64>() < p;
            if !drawn {
                continue;
            }
            if disjoint {
                match claimed[pos] {
                    None => claimed[pos] = Some(d),
                    Some(owner) if owner == d => {}
                    Some(_) => continue,
                }
            }
            members.push(inst.clone());
        }
        let mut dom = Dataset::new(dataset.schema.clone(), members);
        dom.domain_id = d;
        domains.push(dom);
    }

    Ok(DomainSet {
        domains,
        anchors: anchors.to_vec(),
        target_index: 0,
    })
}

/// Find `lambda >= 0` whose expected domain size around `anchor` lands within
/// `tolerance * target_size` of `target_size`, by bisection. The expected
/// size is strictly decreasing in lambda, from N at lambda = 0. Fractional
/// targets are allowed since the expected size is a sum of probabilities.
pub fn calibrate_lambda(
    dataset: &Dataset,
    anchor: &Instance,
    target_size: f64,
    tolerance: f64,
) -> Result<f64> {
    let n = dataset.len();
    if !(1.0..=n as f64).contains(&target_size) {
        return Err(Error::Infeasible(format!(
            "target size {target_size} outside [1, {n}]"
        )));
    }
    let sigmas = dataset.feature_sigmas();
    let dists: Vec<f64> = dataset
        .instances
        .iter()
        .map(|i| distance(i, anchor, &dataset.schema, &sigmas))
        .collect::<Result<_>>()?;
    let size_at = |lambda: f64| -> f64 { dists.iter().map(|d| (-lambda * d).exp()).sum() };

    let target = target_size;
    let tol = tolerance.abs() * target;
    if target_size == n as f64 {
        return Ok(0.0);
    }

    // Bracket: expand until the expected size drops below the target.
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut expansions = 0;
    while size_at(hi) > target {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::Numerical(format!(
                "expected size cannot reach {target}: {} rows sit at zero distance",
                dists.iter().filter(|&&d| d == 0.0).count()
            )));
        }
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = size_at(mid);
        if (s - target).abs() <= tol {
            return Ok(mid);
        }
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical(
        "lambda bisection did not converge in 200 steps".into(),
    ))
}
