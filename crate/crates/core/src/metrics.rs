//! Performance and fairness quantities: hard group metrics, the
//! differentiable soft-accuracy surrogate, parity loss, Pareto error, and the
//! PEF penalty.
//!
//! Metric names used in reports are fixed strings: `accuracy`, `fpr`, `fnr`,
//! `parity_loss`, `pareto_loss`, `pef_penalty`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{GroupKey, GroupPartition};
use crate::scalar::{cast, cast_usize, Scalar};

/// Which performance metric a [`GroupPerformance`] carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    SoftAccuracy,
    Fpr,
    Fnr,
}

/// Per-group performance values plus the overall value, for a metric that is
/// defined on every group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPerformance<S: Scalar> {
    pub per_group: BTreeMap<GroupKey, S>,
    pub overall: S,
    pub kind: MetricKind,
}

/// Per-group rate that can be undefined for a group (e.g. FPR of a group
/// with no negative examples). Undefined entries are `None`, never silently
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupRate<S: Scalar> {
    pub per_group: BTreeMap<GroupKey, Option<S>>,
    pub overall: Option<S>,
    pub kind: MetricKind,
}

/// Hard metrics of a prediction vector at a fixed threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct HardGroupMetrics<S: Scalar> {
    pub accuracy: GroupPerformance<S>,
    pub fpr: GroupRate<S>,
    pub fnr: GroupRate<S>,
    /// Equalized-odds diagnostic: max-min gap of per-group TPR, when at
    /// least two groups have defined TPR.
    pub tpr_gap: Option<S>,
    /// Equalized-odds diagnostic: max-min gap of per-group FPR.
    pub fpr_gap: Option<S>,
}

fn rate<S: Scalar>(num: usize, den: usize) -> Option<S> {
    if den == 0 {
        None
    } else {
        Some(cast_usize::<S>(num) / cast_usize::<S>(den))
    }
}

fn gap<S: Scalar>(values: impl Iterator<Item = Option<S>>) -> Option<S> {
    let defined: Vec<S> = values.flatten().collect();
    if defined.len() < 2 {
        return None;
    }
    let max = defined.iter().copied().fold(S::neg_infinity(), S::max);
    let min = defined.iter().copied().fold(S::infinity(), S::min);
    Some(max - min)
}

/// Hard accuracy, FPR, and FNR per group and overall, thresholding
/// probability scores at `threshold` (predict 1 iff score > threshold).
pub fn group_metrics<S: Scalar>(
    scores: &[S],
    labels: &[u8],
    partition: &GroupPartition,
    threshold: S,
) -> Result<HardGroupMetrics<S>> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !(threshold > S::zero() && threshold < S::one()) {
        return Err(Error::Config("threshold must lie in (0, 1)".into()));
    }

    let counts = |rows: &mut dyn Iterator<Item = usize>| -> (usize, usize, usize, usize, usize) {
        // (n, correct, false positives, negatives, positives)
        let (mut n, mut correct, mut fp, mut neg, mut pos, mut fnc) = (0, 0, 0, 0, 0, 0);
        for i in rows {
            let pred = u8::from(scores[i] > threshold);
            let y = labels[i];
            n += 1;
            if pred == y {
                correct += 1;
            }
            if y == 0 {
                neg += 1;
                if pred == 1 {
                    fp += 1;
                }
            } else {
                pos += 1;
                if pred == 0 {
                    fnc += 1;
                }
            }
        }
        let _ = fnc;
        (n, correct, fp, neg, pos)
    };

    let mut acc = BTreeMap::new();
    let mut fpr = BTreeMap::new();
    let mut fnr = BTreeMap::new();
    let mut tpr = BTreeMap::new();
    for (key, rows) in partition.groups() {
        if rows.is_empty() {
            return Err(Error::MissingGroup {
                group: key.to_string(),
                what: "metric computation (empty group)".into(),
            });
        }
        let mut it = rows.iter().copied();
        let (n, correct, fp, neg, pos) = counts(&mut it);
        let fn_count = rows
            .iter()
            .filter(|&&i| labels[i] == 1 && scores[i] <= threshold)
            .count();
        acc.insert(key.clone(), cast_usize::<S>(correct) / cast_usize::<S>(n));
        fpr.insert(key.clone(), rate::<S>(fp, neg));
        fnr.insert(key.clone(), rate::<S>(fn_count, pos));
        tpr.insert(key.clone(), rate::<S>(pos - fn_count, pos));
    }

    let mut all = 0..labels.len();
    let (n, correct, fp, neg, pos) = counts(&mut all);
    let fn_all = labels
        .iter()
        .zip(scores)
        .filter(|&(&y, &s)| y == 1 && s <= threshold)
        .count();

    let tpr_gap = gap(tpr.values().copied());
    let fpr_gap = gap(fpr.values().copied());
    Ok(HardGroupMetrics {
        accuracy: GroupPerformance {
            per_group: acc,
            overall: cast_usize::<S>(correct) / cast_usize::<S>(n),
            kind: MetricKind::Accuracy,
        },
        fpr: GroupRate {
            per_group: fpr,
            overall: rate::<S>(fp, neg),
            kind: MetricKind::Fpr,
        },
        fnr: GroupRate {
            per_group: fnr,
            overall: rate::<S>(fn_all, pos),
            kind: MetricKind::Fnr,
        },
        tpr_gap,
        fpr_gap,
    })
}

/// Differentiable accuracy surrogate: per group, the mean of `p` over
/// label-1 examples and `1 - p` over label-0 examples.
pub fn soft_group_accuracy<S: Scalar>(
    probabilities: &[S],
    labels: &[u8],
    partition: &GroupPartition,
) -> Result<GroupPerformance<S>> {
    if probabilities.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities vs {} labels",
            probabilities.len(),
            labels.len()
        )));
    }
    let correctness = |i: usize| {
        let p = probabilities[i];
        if labels[i] == 1 {
            p
        } else {
            S::one() - p
        }
    };
    let mut per_group = BTreeMap::new();
    for (key, rows) in partition.groups() {
        if rows.is_empty() {
            return Err(Error::EmptyGroupInBatch {
                group: key.to_string(),
            });
        }
        let sum: S = rows.iter().map(|&i| correctness(i)).sum();
        per_group.insert(key.clone(), sum / cast_usize::<S>(rows.len()));
    }
    let overall: S =
        (0..labels.len()).map(correctness).sum::<S>() / cast_usize::<S>(labels.len());
    Ok(GroupPerformance {
        per_group,
        overall,
        kind: MetricKind::SoftAccuracy,
    })
}

/// Parity loss: total absolute deviation of group performances from the
/// overall performance.
pub fn parity_loss<S: Scalar>(perf: &GroupPerformance<S>) -> S {
    perf.per_group
        .values()
        .map(|&f| (f - perf.overall).abs())
        .sum()
}

/// Heuristic per-group best performances used as the reference point for
/// Pareto error. Strictly positive by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoOptima<S: Scalar> {
    per_group: BTreeMap<GroupKey, S>,
}

impl<S: Scalar> PseudoOptima<S> {
    pub fn new(per_group: BTreeMap<GroupKey, S>) -> Result<Self> {
        if per_group.is_empty() {
            return Err(Error::InvalidDataset("no groups in pseudo-optima".into()));
        }
        if let Some((k, _)) = per_group.iter().find(|(_, &v)| v <= S::zero()) {
            return Err(Error::InvalidDataset(format!(
                "pseudo-optimum for group {k} must be positive"
            )));
        }
        Ok(PseudoOptima { per_group })
    }

    pub fn per_group(&self) -> &BTreeMap<GroupKey, S> {
        &self.per_group
    }

    pub fn get(&self, key: &GroupKey) -> Option<S> {
        self.per_group.get(key).copied()
    }

    /// Raise each group's optimum to the given performance where that is
    /// higher (never lowers).
    pub fn raise(&mut self, perf: &BTreeMap<GroupKey, S>) {
        for (k, v) in &mut self.per_group {
            if let Some(&f) = perf.get(k) {
                *v = v.max(f);
            }
        }
    }
}

/// Relative shortfall of each group from its pseudo-optimum.
///
/// `per_group` holds the clipped errors max(0, 1 - f_g / f_opt_g) used in
/// all penalties and reports; `raw` keeps the signed values (negative when a
/// group beats its pseudo-optimum), which the iterative trainer uses to
/// raise the frontier.
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoError<S: Scalar> {
    pub per_group: BTreeMap<GroupKey, S>,
    pub raw: BTreeMap<GroupKey, S>,
}

impl<S: Scalar> ParetoError<S> {
    /// l1 aggregate of the clipped errors.
    pub fn l1(&self) -> S {
        self.per_group.values().copied().sum()
    }

    /// Population variance (divide by group count) of the clipped errors.
    pub fn variance(&self) -> S {
        variance(self.per_group.values().copied())
    }

    /// Mean clipped error; this is the `pareto_loss` figure in reports.
    pub fn mean(&self) -> S {
        self.l1() / cast_usize::<S>(self.per_group.len())
    }
}

fn variance<S: Scalar>(values: impl Iterator<Item = S>) -> S {
    let v: Vec<S> = values.collect();
    let n = cast_usize::<S>(v.len());
    let mean = v.iter().copied().sum::<S>() / n;
    v.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n
}

/// Pareto error of a performance vector against pseudo-optima. Every group
/// must appear in both arguments.
pub fn pareto_error<S: Scalar>(
    perf: &GroupPerformance<S>,
    opt: &PseudoOptima<S>,
) -> Result<ParetoError<S>> {
    for k in perf.per_group.keys() {
        if opt.get(k).is_none() {
            return Err(Error::MissingGroup {
                group: k.to_string(),
                what: "pseudo-optima".into(),
            });
        }
    }
    for k in opt.per_group().keys() {
        if !perf.per_group.contains_key(k) {
            return Err(Error::MissingGroup {
                group: k.to_string(),
                what: "group performance".into(),
            });
        }
    }
    let mut clipped = BTreeMap::new();
    let mut raw = BTreeMap::new();
    for (k, &f) in &perf.per_group {
        let f_opt = opt.get(k).expect("checked above");
        let e = S::one() - f / f_opt;
        raw.insert(k.clone(), e);
        clipped.insert(k.clone(), e.max(S::zero()));
    }
    Ok(ParetoError {
        per_group: clipped,
        raw,
    })
}

/// PEF penalty: alpha * sum_g w_g eps_g + (1 - alpha) * Var_g(w_g eps_g).
///
/// Weights default to 1 (groups weighted equally regardless of prevalence);
/// passing the partition prevalences selects the prevalence-weighted
/// variant. Variance is the population variance over groups.
pub fn pef_penalty<S: Scalar>(
    err: &ParetoError<S>,
    alpha: S,
    weights: Option<&BTreeMap<GroupKey, S>>,
) -> Result<S> {
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::Config("alpha must lie in [0, 1]".into()));
    }
    let weighted: Vec<S> = err
        .per_group
        .iter()
        .map(|(k, &e)| {
            let w = weights
                .and_then(|m| m.get(k).copied())
                .unwrap_or_else(S::one);
            w * e
        })
        .collect();
    let l1: S = weighted.iter().copied().sum();
    let var = variance(weighted.iter().copied());
    Ok(alpha * l1 + (S::one() - alpha) * var)
}

/// Composite training objective value: cross-entropy plus lambda times the
/// PEF penalty.
pub fn pef_loss<S: Scalar>(ce_loss: S, penalty: S, lambda: S) -> Result<S> {
    if lambda < S::zero() {
        return Err(Error::Config("lambda must be nonnegative".into()));
    }
    Ok(ce_loss + lambda * penalty)
}

/// Prevalence map converted to the working scalar, for the weighted
/// penalty variant.
pub fn prevalence_weights<S: Scalar>(partition: &GroupPartition) -> BTreeMap<GroupKey, S> {
    partition
        .prevalence()
        .iter()
        .map(|(k, &p)| (k.clone(), cast::<S>(p)))
        .collect()
}
