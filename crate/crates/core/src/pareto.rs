//! Operating-point geometry: threshold sweeps, Pareto-front extraction,
//! scalarization, PE-fair threshold selection, disalignment estimation, and
//! the fairness frontier.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{GroupPerformance, MetricKind, ParetoError, PseudoOptima};
use crate::model::{GroupKey, GroupPartition, OperatingPoint};
use crate::scalar::{cast, cast_usize, Scalar};

/// Per-group and overall accuracy at every threshold of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSweep<S: Scalar> {
    pub thresholds: Vec<S>,
    pub points: Vec<OperatingPoint<S>>,
}

impl<S: Scalar> ThresholdSweep<S> {
    /// Per-group maximum accuracy over the sweep, the natural pseudo-optima
    /// for threshold selection.
    pub fn pseudo_optima(&self) -> Result<PseudoOptima<S>> {
        let mut best: BTreeMap<GroupKey, S> = BTreeMap::new();
        for point in &self.points {
            for (k, &v) in &point.per_group {
                let entry = best.entry(k.clone()).or_insert(v);
                *entry = entry.max(v);
            }
        }
        PseudoOptima::new(best)
    }
}

/// Default threshold grid: 101 evenly spaced points spanning [lo, hi].
pub fn default_grid<S: Scalar>(lo: S, hi: S) -> Vec<S> {
    let n = 101;
    (0..n)
        .map(|i| lo + (hi - lo) * cast_usize::<S>(i) / cast_usize::<S>(n - 1))
        .collect()
}

/// Sweep a strictly increasing threshold grid over raw scores; at each
/// threshold the classifier predicts 1 iff score >= threshold.
pub fn sweep_thresholds<S: Scalar>(
    scores: &[S],
    labels: &[u8],
    partition: &GroupPartition,
    grid: &[S],
) -> Result<ThresholdSweep<S>> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config("threshold grid must be strictly increasing".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &t in grid {
        let mut per_group = BTreeMap::new();
        let mut correct_all = 0usize;
        for (key, rows) in partition.groups() {
            let correct = rows
                .iter()
                .filter(|&&i| u8::from(scores[i] >= t) == labels[i])
                .count();
            correct_all += correct;
            per_group.insert(key.clone(), cast_usize::<S>(correct) / cast_usize::<S>(rows.len()));
        }
        let overall = cast_usize::<S>(correct_all) / cast_usize::<S>(labels.len());
        points.push(OperatingPoint::new(per_group, overall, Some(t))?);
    }
    Ok(ThresholdSweep {
        thresholds: grid.to_vec(),
        points,
    })
}

fn dominates<S: Scalar>(a: &[S], b: &[S]) -> bool {
    let mut strictly = false;
    for (&x, &y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strictly = true;
        }
    }
    strictly
}

/// Non-dominated subset of the given operating points, ordered by first
/// group coordinate (ties by the remaining coordinates).
///
/// Uses sort-filter-skyline: points are visited in decreasing
/// coordinate-sum order, so a dominator always precedes what it dominates
/// and each candidate only needs checking against the accepted set.
pub fn extract_pareto_front<S: Scalar>(
    points: &[OperatingPoint<S>],
) -> Result<Vec<OperatingPoint<S>>> {
    if points.is_empty() {
        return Err(Error::Config("no operating points".into()));
    }
    let keys: Vec<&GroupKey> = points[0].per_group.keys().collect();
    for p in points {
        if p.per_group.len() != keys.len() || !p.per_group.keys().eq(keys.iter().copied()) {
            return Err(Error::ShapeMismatch(
                "operating points have differing group sets".into(),
            ));
        }
    }
    let coords: Vec<Vec<S>> = points.iter().map(OperatingPoint::coords).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let si: S = coords[i].iter().copied().sum();
        let sj: S = coords[j].iter().copied().sum();
        sj.partial_cmp(&si).expect("performances are finite").then(i.cmp(&j))
    });

    let mut front: Vec<usize> = Vec::new();
    for &i in &order {
        if !front.iter().any(|&j| dominates(&coords[j], &coords[i])) {
            front.push(i);
        }
    }
    front.sort_by(|&i, &j| {
        coords[i]
            .partial_cmp(&coords[j])
            .expect("performances are finite")
            .then(i.cmp(&j))
    });
    Ok(front.into_iter().map(|i| points[i].clone()).collect())
}

/// Norm order for scalarization; `Infinity` selects the weighted
/// Tchebycheff form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    P(f64),
    Infinity,
}

/// Weighted distance-to-reference scalarization.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarizationConfig<S: Scalar> {
    pub weights: BTreeMap<GroupKey, S>,
    pub order: NormOrder,
    /// Utopian reference point z*, one entry per group.
    pub reference: BTreeMap<GroupKey, S>,
    /// Acknowledge a reference below the observed maximum; see
    /// [`ScalarizationConfig::check_reference`].
    pub allow_interior_reference: bool,
}

impl<S: Scalar> ScalarizationConfig<S> {
    pub fn validate(&self) -> Result<()> {
        if self.weights.values().any(|&w| !(w > S::zero())) {
            return Err(Error::Config("scalarization weights must be positive".into()));
        }
        if let NormOrder::P(p) = self.order {
            if !(p >= 1.0) {
                return Err(Error::Config("norm order must be >= 1".into()));
            }
        }
        if !self.weights.keys().eq(self.reference.keys()) {
            return Err(Error::Config(
                "weights and reference must cover the same groups".into(),
            ));
        }
        Ok(())
    }

    /// Errors when z* falls below the best observed performance of some
    /// group, unless the config explicitly allows an interior reference.
    pub fn check_reference(&self, points: &[OperatingPoint<S>]) -> Result<()> {
        if self.allow_interior_reference {
            return Ok(());
        }
        for (k, &z) in &self.reference {
            let observed = points
                .iter()
                .filter_map(|p| p.per_group.get(k).copied())
                .fold(S::neg_infinity(), S::max);
            if z < observed {
                return Err(Error::Config(format!(
                    "reference for group {k} ({z}) is below the observed maximum ({observed}); \
                     set allow_interior_reference to accept"
                )));
            }
        }
        Ok(())
    }
}

/// Weighted p-norm distance of an operating point from the reference:
/// (sum_g w_g |f_g - z*_g|^p)^(1/p), or max_g w_g |f_g - z*_g| for the
/// Tchebycheff form.
pub fn scalarize<S: Scalar>(
    point: &OperatingPoint<S>,
    config: &ScalarizationConfig<S>,
) -> Result<S> {
    config.validate()?;
    let mut terms = Vec::with_capacity(config.weights.len());
    for (k, &w) in &config.weights {
        let f = point.per_group.get(k).copied().ok_or_else(|| Error::MissingGroup {
            group: k.to_string(),
            what: "operating point".into(),
        })?;
        let z = config.reference[k];
        terms.push((w, (f - z).abs()));
    }
    Ok(match config.order {
        NormOrder::Infinity => terms
            .iter()
            .map(|&(w, d)| w * d)
            .fold(S::zero(), S::max),
        NormOrder::P(p) => {
            let p_s = cast::<S>(p);
            terms
                .iter()
                .map(|&(w, d)| w * d.powf(p_s))
                .sum::<S>()
                .powf(S::one() / p_s)
        }
    })
}

/// Residual of fitting f_1^p1 + ... + f_k^pk = C over a front (least
/// squares over the constant C alone).
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryFit<S: Scalar> {
    /// Root-mean-square deviation from the fitted constant.
    pub residual: S,
    pub constant: S,
    /// True for single-point fronts, where the fit is vacuous.
    pub degenerate: bool,
}

impl<S: Scalar> GeometryFit<S> {
    pub fn satisfied(&self, tolerance: S) -> bool {
        self.residual < tolerance
    }
}

/// Check whether the front lies on a surface f_1^p1 + ... + f_k^pk = C for
/// the candidate exponents; small residuals support scalarization with
/// p >= max(p_i).
pub fn geometry_check<S: Scalar>(
    front: &[OperatingPoint<S>],
    exponents: &[f64],
) -> Result<GeometryFit<S>> {
    if front.is_empty() {
        return Err(Error::Config("empty front".into()));
    }
    if exponents.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Config("exponents must be positive".into()));
    }
    let values: Vec<S> = front
        .iter()
        .map(|point| {
            if point.per_group.len() != exponents.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} exponents for {} groups",
                    exponents.len(),
                    point.per_group.len()
                )));
            }
            Ok(point
                .per_group
                .values()
                .zip(exponents)
                .map(|(&f, &p)| f.powf(cast::<S>(p)))
                .sum::<S>())
        })
        .collect::<Result<_>>()?;
    let n = cast_usize::<S>(values.len());
    let constant = values.iter().copied().sum::<S>() / n;
    let residual = (values
        .iter()
        .map(|&v| (v - constant) * (v - constant))
        .sum::<S>()
        / n)
        .sqrt();
    Ok(GeometryFit {
        residual,
        constant,
        degenerate: front.len() == 1,
    })
}

/// Threshold chosen by the PE-fair criterion, with its operating point and
/// objective value.
#[derive(Clone, Debug)]
pub struct SelectedThreshold<S: Scalar> {
    pub threshold: S,
    pub point: OperatingPoint<S>,
    pub objective: S,
}

/// Minimize alpha * l1 + (1 - alpha) * variance of the clipped Pareto
/// errors over the sweep grid; ties break toward the smaller threshold.
pub fn select_pef_threshold<S: Scalar>(
    sweep: &ThresholdSweep<S>,
    opt: &PseudoOptima<S>,
    alpha: S,
) -> Result<SelectedThreshold<S>> {
    if sweep.points.is_empty() {
        return Err(Error::Config("empty sweep".into()));
    }
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return Err(Error::Config("alpha must lie in [0, 1]".into()));
    }
    let mut best: Option<(S, usize)> = None;
    for (i, point) in sweep.points.iter().enumerate() {
        let err = sweep_point_error(point, opt)?;
        let objective = alpha * err.l1() + (S::one() - alpha) * err.variance();
        let better = match best {
            None => true,
            // Strict improvement only: earlier (smaller) thresholds win ties.
            Some((obj, _)) => objective < obj,
        };
        if better {
            best = Some((objective, i));
        }
    }
    let (objective, idx) = best.expect("nonempty sweep");
    Ok(SelectedThreshold {
        threshold: sweep.thresholds[idx],
        point: sweep.points[idx].clone(),
        objective,
    })
}

fn sweep_point_error<S: Scalar>(
    point: &OperatingPoint<S>,
    opt: &PseudoOptima<S>,
) -> Result<ParetoError<S>> {
    let perf = GroupPerformance {
        per_group: point.per_group.clone(),
        overall: point.overall,
        kind: MetricKind::Accuracy,
    };
    crate::metrics::pareto_error(&perf, opt)
}

/// Monte Carlo estimate of the disalignment between a class-probability
/// function and a classifier: E_X[(t - h(X)) * (b(X) - [[h(X) > t]])].
#[derive(Clone, Debug, PartialEq)]
pub struct Disalignment<S: Scalar> {
    pub estimate: S,
    pub std_error: S,
    pub n_samples: usize,
}

pub fn estimate_disalignment<S, H, B>(
    h: H,
    t: S,
    b_lambda: B,
    samples: &Array2<S>,
) -> Result<Disalignment<S>>
where
    S: Scalar,
    H: Fn(ArrayView1<'_, S>) -> S,
    B: Fn(ArrayView1<'_, S>) -> bool,
{
    let n = samples.nrows();
    if n == 0 {
        return Err(Error::Config("no samples".into()));
    }
    let mut values = Vec::with_capacity(n);
    for row in samples.rows() {
        let hx = h(row);
        if !(hx >= S::zero() && hx <= S::one()) {
            return Err(Error::Config(
                "class-probability function must return values in [0, 1]".into(),
            ));
        }
        let plug_in = if hx > t { S::one() } else { S::zero() };
        let b = if b_lambda(row) { S::one() } else { S::zero() };
        values.push((t - hx) * (b - plug_in));
    }
    let n_s = cast_usize::<S>(n);
    let estimate = values.iter().copied().sum::<S>() / n_s;
    let std_error = if n < 2 {
        S::zero()
    } else {
        let var = values
            .iter()
            .map(|&v| (v - estimate) * (v - estimate))
            .sum::<S>()
            / cast_usize::<S>(n - 1);
        (var / n_s).sqrt()
    };
    Ok(Disalignment {
        estimate,
        std_error,
        n_samples: n,
    })
}

/// Maximum achievable overall accuracy as a function of the allowed parity
/// budget tau, with the curve's finite-difference gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct FrontierCurve<S: Scalar> {
    pub tau: Vec<S>,
    /// None marks an infeasible budget (no sweep point satisfies it).
    pub max_accuracy: Vec<Option<S>>,
    pub achieving_threshold: Vec<Option<S>>,
    /// Central differences of the accuracy curve over tau (one-sided at the
    /// ends); None where a neighbor is infeasible.
    pub gradient: Vec<Option<S>>,
}

/// Build the fairness frontier from a threshold sweep: for each tau, the
/// best overall accuracy among operating points whose parity loss is at
/// most tau.
pub fn fairness_frontier<S: Scalar>(
    sweep: &ThresholdSweep<S>,
    tau_grid: &[S],
) -> Result<FrontierCurve<S>> {
    if tau_grid.is_empty() {
        return Err(Error::Config("tau grid is empty".into()));
    }
    if tau_grid[0] < S::zero() || tau_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Config(
            "tau grid must be nonnegative and strictly increasing".into(),
        ));
    }
    let parity: Vec<S> = sweep
        .points
        .iter()
        .map(|p| {
            let perf = GroupPerformance {
                per_group: p.per_group.clone(),
                overall: p.overall,
                kind: MetricKind::Accuracy,
            };
            crate::metrics::parity_loss(&perf)
        })
        .collect();

    let mut max_accuracy = Vec::with_capacity(tau_grid.len());
    let mut achieving = Vec::with_capacity(tau_grid.len());
    for &tau in tau_grid {
        let mut best: Option<(S, S)> = None;
        for (i, point) in sweep.points.iter().enumerate() {
            if parity[i] <= tau {
                let candidate = (point.overall, sweep.thresholds[i]);
                best = match best {
                    None => Some(candidate),
                    Some((acc, t)) => {
                        if candidate.0 > acc {
                            Some(candidate)
                        } else {
                            Some((acc, t))
                        }
                    }
                };
            }
        }
        match best {
            Some((acc, t)) => {
                max_accuracy.push(Some(acc));
                achieving.push(Some(t));
            }
            None => {
                max_accuracy.push(None);
                achieving.push(None);
            }
        }
    }

    let gradient = central_differences(tau_grid, &max_accuracy);
    Ok(FrontierCurve {
        tau: tau_grid.to_vec(),
        max_accuracy,
        achieving_threshold: achieving,
        gradient,
    })
}

fn central_differences<S: Scalar>(xs: &[S], ys: &[Option<S>]) -> Vec<Option<S>> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let (lo, hi) = if n == 1 {
                return None;
            } else if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            match (ys[lo], ys[hi]) {
                (Some(a), Some(b)) => Some((b - a) / (xs[hi] - xs[lo])),
                _ => None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{partition_by_groups, Dataset};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn point(coords: &[f64]) -> OperatingPoint<f64> {
        let per_group = coords
            .iter()
            .enumerate()
            .map(|(i, &v)| (GroupKey::new([format!("g{i}")]), v))
            .collect();
        OperatingPoint::new(per_group, coords.iter().sum::<f64>() / coords.len() as f64, None)
            .unwrap()
    }

    /// O(n^2) brute-force dominance filter used as the oracle.
    fn brute_force_front(points: &[OperatingPoint<f64>]) -> Vec<OperatingPoint<f64>> {
        let coords: Vec<Vec<f64>> = points.iter().map(OperatingPoint::coords).collect();
        let mut keep: Vec<usize> = (0..points.len())
            .filter(|&i| {
                !(0..points.len()).any(|j| j != i && dominates(&coords[j], &coords[i]))
            })
            .collect();
        keep.sort_by(|&i, &j| {
            coords[i]
                .partial_cmp(&coords[j])
                .unwrap()
                .then(i.cmp(&j))
        });
        keep.into_iter().map(|i| points[i].clone()).collect()
    }

    #[test]
    fn front_examples() {
        let single = vec![point(&[0.5, 0.5])];
        assert_eq!(extract_pareto_front(&single).unwrap(), single);

        // Mutually non-dominated triple: all survive.
        let tri = vec![point(&[0.8, 0.5]), point(&[0.5, 0.8]), point(&[0.6, 0.6])];
        let front = extract_pareto_front(&tri).unwrap();
        assert_eq!(front.len(), 3);

        // Strict dominance removes the dominated point.
        let pair = vec![point(&[0.8, 0.5]), point(&[0.9, 0.6])];
        let front = extract_pareto_front(&pair).unwrap();
        assert_eq!(front, vec![point(&[0.9, 0.6])]);
    }

    #[test]
    fn duplicates_are_kept_together() {
        let pts = vec![point(&[0.7, 0.7]), point(&[0.7, 0.7]), point(&[0.6, 0.8])];
        let front = extract_pareto_front(&pts).unwrap();
        assert_eq!(front.len(), 3);
        assert_eq!(brute_force_front(&pts).len(), 3);
    }

    #[test]
    fn front_matches_brute_force_on_random_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.random_range(1..60);
            let d = rng.random_range(2..5);
            let pts: Vec<OperatingPoint<f64>> = (0..n)
                .map(|_| {
                    let coords: Vec<f64> =
                        (0..d).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
                    point(&coords)
                })
                .collect();
            assert_eq!(extract_pareto_front(&pts).unwrap(), brute_force_front(&pts));
        }
    }

    proptest! {
        #[test]
        fn front_equals_brute_force(prop_pts in proptest::collection::vec(
            proptest::collection::vec(0.0f64..=1.0, 3), 1..40)) {
            let pts: Vec<OperatingPoint<f64>> =
                prop_pts.iter().map(|c| point(c)).collect();
            prop_assert_eq!(extract_pareto_front(&pts).unwrap(), brute_force_front(&pts));
        }
    }

    fn scalar_config(weights: &[f64], order: NormOrder, z: &[f64]) -> ScalarizationConfig<f64> {
        ScalarizationConfig {
            weights: weights
                .iter()
                .enumerate()
                .map(|(i, &w)| (GroupKey::new([format!("g{i}")]), w))
                .collect(),
            order,
            reference: z
                .iter()
                .enumerate()
                .map(|(i, &v)| (GroupKey::new([format!("g{i}")]), v))
                .collect(),
            allow_interior_reference: true,
        }
    }

    #[test]
    fn scalarize_formulas() {
        let cfg = scalar_config(&[1.0, 1.0], NormOrder::P(1.0), &[1.0, 1.0]);
        assert_abs_diff_eq!(
            scalarize(&point(&[0.8, 0.6]), &cfg).unwrap(),
            0.6,
            epsilon = 1e-12
        );

        let cfg = scalar_config(&[2.0, 1.0], NormOrder::Infinity, &[1.0, 1.0]);
        assert_abs_diff_eq!(
            scalarize(&point(&[0.9, 0.5]), &cfg).unwrap(),
            0.5,
            epsilon = 1e-12
        );

        // At the reference point every norm gives zero.
        for order in [NormOrder::P(1.0), NormOrder::P(2.0), NormOrder::Infinity] {
            let cfg = scalar_config(&[1.0, 1.0], order, &[0.8, 0.6]);
            assert_eq!(scalarize(&point(&[0.8, 0.6]), &cfg).unwrap(), 0.0);
        }
    }

    #[test]
    fn scalarize_norm_monotone_in_p() {
        let p = point(&[0.3, 0.9]);
        let mut last = f64::INFINITY;
        for order in [1.0, 2.0, 4.0, 8.0] {
            let cfg = scalar_config(&[1.0, 1.0], NormOrder::P(order), &[1.0, 1.0]);
            let v = scalarize(&p, &cfg).unwrap();
            assert!(v <= last + 1e-12);
            last = v;
        }
        let cfg = scalar_config(&[1.0, 1.0], NormOrder::Infinity, &[1.0, 1.0]);
        assert!(scalarize(&p, &cfg).unwrap() <= last + 1e-12);
    }

    #[test]
    fn reference_check() {
        let pts = vec![point(&[0.8, 0.6])];
        let mut cfg = scalar_config(&[1.0, 1.0], NormOrder::P(1.0), &[0.7, 1.0]);
        cfg.allow_interior_reference = false;
        assert!(cfg.check_reference(&pts).is_err());
        cfg.allow_interior_reference = true;
        assert!(cfg.check_reference(&pts).is_ok());
    }

    fn arc_points(q: f64, n: usize) -> Vec<OperatingPoint<f64>> {
        // Points on f1^q + f2^q = 1.
        (1..n)
            .map(|i| {
                let f1 = i as f64 / n as f64;
                let f2 = (1.0 - f1.powf(q)).powf(1.0 / q);
                point(&[f1, f2])
            })
            .collect()
    }

    #[test]
    fn geometry_residuals() {
        for q in [1.0, 2.0, 3.0] {
            let front = arc_points(q, 40);
            let fit = geometry_check(&front, &[q, q]).unwrap();
            assert!(fit.residual < 1e-10, "q={q}: residual {}", fit.residual);
            assert_abs_diff_eq!(fit.constant, 1.0, epsilon = 1e-9);
        }
        // Mismatched exponents leave a visible residual.
        let line = arc_points(1.0, 40);
        let fit = geometry_check(&line, &[2.0, 2.0]).unwrap();
        assert!(fit.residual > 1e-3);

        let single = geometry_check(&[point(&[0.5, 0.5])], &[1.0, 1.0]).unwrap();
        assert!(single.degenerate);
        assert_eq!(single.residual, 0.0);
    }

    fn toy_sweep(per_group: Vec<Vec<f64>>, thresholds: Vec<f64>) -> ThresholdSweep<f64> {
        let points = per_group
            .iter()
            .zip(&thresholds)
            .map(|(coords, &t)| {
                let per_group: BTreeMap<GroupKey, f64> = coords
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (GroupKey::new([format!("g{i}")]), v))
                    .collect();
                let overall = coords.iter().sum::<f64>() / coords.len() as f64;
                OperatingPoint::new(per_group, overall, Some(t)).unwrap()
            })
            .collect();
        ThresholdSweep { thresholds, points }
    }

    #[test]
    fn tie_break_selects_smallest_threshold() {
        let sweep = toy_sweep(
            vec![vec![0.6, 0.6], vec![0.6, 0.6], vec![0.6, 0.6]],
            vec![0.1, 0.2, 0.3],
        );
        let opt = sweep.pseudo_optima().unwrap();
        let sel = select_pef_threshold(&sweep, &opt, 0.5).unwrap();
        assert_eq!(sel.threshold, 0.1);
    }

    #[test]
    fn alpha_one_minimizes_l1() {
        let sweep = toy_sweep(
            vec![vec![0.9, 0.4], vec![0.7, 0.7], vec![0.4, 0.9]],
            vec![0.1, 0.2, 0.3],
        );
        let opt = sweep.pseudo_optima().unwrap();
        let sel = select_pef_threshold(&sweep, &opt, 1.0).unwrap();
        // l1 of clipped errors is smallest at the balanced middle point.
        assert_eq!(sel.threshold, 0.2);
        let err0 = 1.0 - 0.7 / 0.9;
        assert_abs_diff_eq!(sel.objective, 2.0 * err0, epsilon = 1e-12);
    }

    #[test]
    fn perfect_scores_sweep() {
        let labels = vec![1u8, 0, 1, 0];
        let scores = vec![1.0, 0.0, 1.0, 0.0];
        let ds: Dataset = Dataset::new(
            Array2::zeros((4, 1)),
            labels.clone(),
            vec![GroupKey::new(["g"]); 4],
            vec!["x".into()],
            vec!["s".into()],
        )
        .unwrap();
        let part = partition_by_groups(&ds);
        let sweep = sweep_thresholds(&scores, &labels, &part, &[0.25, 0.5, 0.75]).unwrap();
        for p in &sweep.points {
            assert_eq!(p.overall, 1.0);
        }
    }

    #[test]
    fn disalignment_zero_for_plug_in_rule() {
        let samples = Array2::from_shape_fn((200, 1), |(i, _)| i as f64 / 200.0);
        let h = |x: ArrayView1<'_, f64>| x[0];
        let d = estimate_disalignment(h, 0.4, |x| x[0] > 0.4, &samples).unwrap();
        assert_eq!(d.estimate, 0.0);
        assert_eq!(d.std_error, 0.0);
    }

    #[test]
    fn disalignment_constant_integrand() {
        let samples = Array2::from_shape_fn((50, 1), |(i, _)| i as f64);
        let d = estimate_disalignment(|_| 0.5, 0.7, |_| true, &samples).unwrap();
        assert_abs_diff_eq!(d.estimate, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(d.std_error, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn disalignment_matches_enumeration_oracle() {
        // Discrete feature distribution: enumerate the full support and
        // compare against sampling that support with its exact multiplicity.
        let support: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let h = |x: ArrayView1<'_, f64>| (x[0] * 0.8 + 0.1).clamp(0.0, 1.0);
        let b = |x: ArrayView1<'_, f64>| x[0] > 0.3;
        let t = 0.5;
        let exhaustive: f64 = support
            .iter()
            .map(|&x| {
                let hx: f64 = x * 0.8 + 0.1;
                let plug = f64::from(hx > t);
                let bx = f64::from(x > 0.3);
                (t - hx) * (bx - plug)
            })
            .sum::<f64>()
            / support.len() as f64;
        let samples =
            Array2::from_shape_vec((support.len(), 1), support.clone()).unwrap();
        let d = estimate_disalignment(h, t, b, &samples).unwrap();
        assert_abs_diff_eq!(d.estimate, exhaustive, epsilon = 1e-12);
    }

    #[test]
    fn frontier_monotone_and_gradient_consistent() {
        let sweep = toy_sweep(
            vec![
                vec![0.5, 0.5],
                vec![0.9, 0.3],
                vec![0.8, 0.6],
                vec![0.95, 0.2],
            ],
            vec![0.1, 0.2, 0.3, 0.4],
        );
        let tau = [0.0, 0.2, 0.4, 0.6, 1.0];
        let curve = fairness_frontier(&sweep, &tau).unwrap();
        let mut last = f64::NEG_INFINITY;
        for acc in curve.max_accuracy.iter().flatten() {
            assert!(*acc >= last);
            last = *acc;
        }
        // tau large enough admits everything: unconstrained maximum.
        assert_eq!(curve.max_accuracy.last().unwrap().unwrap(), 0.7);
        // Gradient is defined as central differences of the curve.
        let grads = central_differences(&tau, &curve.max_accuracy);
        for (a, b) in curve.gradient.iter().zip(&grads) {
            match (a, b) {
                (Some(x), Some(y)) => assert_abs_diff_eq!(x, y, epsilon = 1e-12),
                (None, None) => {}
                _ => panic!("gradient mismatch"),
            }
        }
    }

    #[test]
    fn frontier_flags_infeasible() {
        let sweep = toy_sweep(vec![vec![0.9, 0.3]], vec![0.5]);
        let curve = fairness_frontier(&sweep, &[0.0, 2.0]).unwrap();
        assert_eq!(curve.max_accuracy[0], None);
        assert!(curve.max_accuracy[1].is_some());
    }
}
