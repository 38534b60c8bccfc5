//! Shared data model: datasets, subgroup partitions, operating points, and
//! deterministic splitting.
//!
//! All types are immutable after construction and safe to share across
//! threads; the operations here are pure functions.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::Real;

/// Ordered tuple of categorical sensitive values identifying one subgroup
/// (e.g. a gender x race cell). Ordering is lexicographic over the values,
/// and reports always list groups in this order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey(pub Vec<String>);

impl GroupKey {
    pub fn new<I: IntoIterator<Item = T>, T: Into<String>>(values: I) -> Self {
        GroupKey(values.into_iter().map(Into::into).collect())
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(","))
    }
}

/// In-memory tabular dataset: dense features, binary labels, and one
/// sensitive tuple per example.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S: Scalar = Real> {
    features: Array2<S>,
    labels: Vec<u8>,
    sensitive: Vec<GroupKey>,
    feature_names: Vec<String>,
    sensitive_names: Vec<String>,
}

impl<S: Scalar> Dataset<S> {
    /// Validates the construction invariants: non-empty, consistent row
    /// counts, binary labels, uniform sensitive-tuple arity.
    pub fn new(
        features: Array2<S>,
        labels: Vec<u8>,
        sensitive: Vec<GroupKey>,
        feature_names: Vec<String>,
        sensitive_names: Vec<String>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidDataset("no examples".into()));
        }
        if labels.len() != n || sensitive.len() != n {
            return Err(Error::InvalidDataset(format!(
                "row counts differ: {} features, {} labels, {} sensitive tuples",
                n,
                labels.len(),
                sensitive.len()
            )));
        }
        if features.ncols() != feature_names.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature columns but {} feature names",
                features.ncols(),
                feature_names.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidDataset(format!(
                "labels must be 0 or 1, found {bad}"
            )));
        }
        let arity = sensitive_names.len();
        if let Some(t) = sensitive.iter().find(|t| t.arity() != arity) {
            return Err(Error::InvalidDataset(format!(
                "sensitive tuple {t} has arity {} but {} sensitive names declared",
                t.arity(),
                arity
            )));
        }
        Ok(Dataset {
            features,
            labels,
            sensitive,
            feature_names,
            sensitive_names,
        })
    }

    pub fn n_examples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<S> {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn sensitive(&self) -> &[GroupKey] {
        &self.sensitive
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn sensitive_names(&self) -> &[String] {
        &self.sensitive_names
    }

    /// New dataset containing the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset<S> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let sensitive = indices.iter().map(|&i| self.sensitive[i].clone()).collect();
        Dataset {
            features,
            labels,
            sensitive,
            feature_names: self.feature_names.clone(),
            sensitive_names: self.sensitive_names.clone(),
        }
    }
}

/// Partition of a dataset into subgroups: per-group sorted example indices
/// plus population prevalences.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupPartition {
    groups: BTreeMap<GroupKey, Vec<usize>>,
    prevalence: BTreeMap<GroupKey, f64>,
}

impl GroupPartition {
    pub fn groups(&self) -> &BTreeMap<GroupKey, Vec<usize>> {
        &self.groups
    }

    pub fn prevalence(&self) -> &BTreeMap<GroupKey, f64> {
        &self.prevalence
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Group keys in lexicographic order.
    pub fn keys(&self) -> impl Iterator<Item = &GroupKey> {
        self.groups.keys()
    }

    /// Lexicographic index of each example's group, aligned with the rows
    /// the partition was built from.
    pub fn group_index_per_row(&self, n_rows: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_rows];
        for (gi, indices) in self.groups.values().enumerate() {
            for &i in indices {
                out[i] = gi;
            }
        }
        debug_assert!(out.iter().all(|&g| g != usize::MAX));
        out
    }
}

/// Group examples by their sensitive tuple. One group per distinct tuple;
/// prevalence is the group's share of all examples.
pub fn partition_by_groups<S: Scalar>(dataset: &Dataset<S>) -> GroupPartition {
    let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, key) in dataset.sensitive().iter().enumerate() {
        groups.entry(key.clone()).or_default().push(i);
    }
    // Insertion is in row order, so index lists are already sorted.
    let n = dataset.n_examples() as f64;
    let prevalence = groups
        .iter()
        .map(|(k, v)| (k.clone(), v.len() as f64 / n))
        .collect();
    GroupPartition { groups, prevalence }
}

/// Record of a stratification fallback during a split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitWarning {
    /// A (group, label) cell had fewer than 2 examples; the whole group fell
    /// back to group-only stratification.
    CellTooSmall { group: String, cell_size: usize },
    /// A group with a single example went to the train side.
    SingletonGroup { group: String },
}

/// Result of a stratified split.
#[derive(Clone, Debug)]
pub struct Split<S: Scalar = Real> {
    pub train: Dataset<S>,
    pub test: Dataset<S>,
    pub warnings: Vec<SplitWarning>,
}

/// Deterministic index-level split, stratified jointly on (group, label)
/// where every nonempty cell of the group has at least 2 examples, otherwise
/// on the group alone. Returns (train, test, warnings).
pub fn stratified_split_indices(
    keys: &[GroupKey],
    labels: &[u8],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<SplitWarning>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if keys.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} keys vs {} labels",
            keys.len(),
            labels.len()
        )));
    }
    let mut by_group: BTreeMap<&GroupKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_group.entry(k).or_default().push(i);
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut warnings = Vec::new();

    // Each (group, label) cell gets its own RNG stream so the assignment of
    // one cell never depends on the sizes of the others.
    for (gi, (key, rows)) in by_group.iter().enumerate() {
        let mut cells: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for &i in rows {
            cells[labels[i] as usize].push(i);
        }
        let joint_ok = cells.iter().all(|c| c.is_empty() || c.len() >= 2);

        if joint_ok {
            for (li, cell) in cells.iter().enumerate() {
                if cell.is_empty() {
                    continue;
                }
                let mut shuffled = cell.clone();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream((gi as u64) * 2 + li as u64);
                shuffled.shuffle(&mut rng);
                let k = (test_fraction * cell.len() as f64).round() as usize;
                let k = k.min(cell.len() - 1);
                test.extend_from_slice(&shuffled[..k]);
                train.extend_from_slice(&shuffled[k..]);
            }
        } else {
            let small = cells
                .iter()
                .filter(|c| !c.is_empty() && c.len() < 2)
                .map(Vec::len)
                .min()
                .unwrap_or(0);
            if rows.len() == 1 {
                warnings.push(SplitWarning::SingletonGroup {
                    group: key.to_string(),
                });
                train.push(rows[0]);
                continue;
            }
            warnings.push(SplitWarning::CellTooSmall {
                group: key.to_string(),
                cell_size: small,
            });
            let mut shuffled = rows.to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((gi as u64) * 2);
            shuffled.shuffle(&mut rng);
            let k = (test_fraction * rows.len() as f64).round() as usize;
            let k = k.min(rows.len() - 1);
            test.extend_from_slice(&shuffled[..k]);
            train.extend_from_slice(&shuffled[k..]);
        }
    }

    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test, warnings))
}

/// Split a dataset into train and test parts; see
/// [`stratified_split_indices`] for the stratification rules.
pub fn stratified_split<S: Scalar>(
    dataset: &Dataset<S>,
    test_fraction: f64,
    seed: u64,
) -> Result<Split<S>> {
    let (train_idx, test_idx, warnings) = stratified_split_indices(
        dataset.sensitive(),
        dataset.labels(),
        test_fraction,
        seed,
    )?;
    for w in &warnings {
        log::warn!("stratified split: {w:?}");
    }
    Ok(Split {
        train: dataset.select(&train_idx),
        test: dataset.select(&test_idx),
        warnings,
    })
}

/// Per-group performance vector plus overall performance, the object
/// operating-point analysis ranks. Produced by threshold sweeps (then
/// `threshold` is set) or by evaluating a trained model.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatingPoint<S: Scalar = Real> {
    pub per_group: BTreeMap<GroupKey, S>,
    pub overall: S,
    pub threshold: Option<S>,
}

impl<S: Scalar> OperatingPoint<S> {
    pub fn new(
        per_group: BTreeMap<GroupKey, S>,
        overall: S,
        threshold: Option<S>,
    ) -> Result<Self> {
        let in_unit = |v: S| v >= S::zero() && v <= S::one();
        if !in_unit(overall) || per_group.values().any(|&v| !in_unit(v)) {
            return Err(Error::InvalidDataset(
                "operating point performances must lie in [0, 1]".into(),
            ));
        }
        Ok(OperatingPoint {
            per_group,
            overall,
            threshold,
        })
    }

    /// Group coordinates in lexicographic key order.
    pub fn coords(&self) -> Vec<S> {
        self.per_group.values().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(sensitive: Vec<GroupKey>, labels: Vec<u8>) -> Dataset {
        let n = labels.len();
        let features = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        Dataset::new(
            features,
            labels,
            sensitive,
            vec!["x".into()],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn key(a: u8, b: u8) -> GroupKey {
        GroupKey::new([a.to_string(), b.to_string()])
    }

    #[test]
    fn partition_counts_groups() {
        let ds = toy(
            vec![key(0, 0), key(0, 0), key(1, 0), key(1, 1)],
            vec![0, 1, 0, 1],
        );
        let part = partition_by_groups(&ds);
        assert_eq!(part.n_groups(), 3);
        assert_eq!(part.prevalence()[&key(0, 0)], 0.5);
        assert_eq!(part.prevalence()[&key(1, 0)], 0.25);
        assert_eq!(part.prevalence()[&key(1, 1)], 0.25);
    }

    #[test]
    fn partition_single_group() {
        let ds = toy(vec![key(0, 0), key(0, 0)], vec![0, 1]);
        let part = partition_by_groups(&ds);
        assert_eq!(part.n_groups(), 1);
        assert_eq!(part.prevalence()[&key(0, 0)], 1.0);
    }

    #[test]
    fn partition_invariant_under_row_permutation() {
        let ds = toy(
            vec![key(0, 0), key(1, 0), key(0, 0), key(1, 1)],
            vec![0, 1, 1, 0],
        );
        let perm = [3, 1, 0, 2];
        let permuted = ds.select(&perm);
        let p1 = partition_by_groups(&ds);
        let p2 = partition_by_groups(&permuted);
        // Same groups and same prevalences; membership sets map through the
        // permutation.
        assert_eq!(
            p1.keys().collect::<Vec<_>>(),
            p2.keys().collect::<Vec<_>>()
        );
        assert_eq!(p1.prevalence(), p2.prevalence());
    }

    #[test]
    fn prevalence_sums_to_one() {
        let ds = toy(
            vec![key(0, 0), key(0, 1), key(1, 0), key(1, 1), key(0, 0)],
            vec![0, 1, 0, 1, 1],
        );
        let part = partition_by_groups(&ds);
        let total: f64 = part.prevalence().values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn labels_validated() {
        let features = Array2::from_shape_fn((1, 1), |_| 0.0);
        let err = Dataset::<f64>::new(
            features,
            vec![2],
            vec![key(0, 0)],
            vec!["x".into()],
            vec!["a".into(), "b".into()],
        );
        assert!(err.is_err());
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let keys: Vec<GroupKey> = (0..100).map(|i| key((i % 2) as u8, 0)).collect();
        let labels: Vec<u8> = (0..100).map(|i| (i % 4 == 0) as u8).collect();
        let (tr1, te1, _) = stratified_split_indices(&keys, &labels, 0.2, 7).unwrap();
        let (tr2, te2, _) = stratified_split_indices(&keys, &labels, 0.2, 7).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(te1, te2);
        assert_eq!(te1.len(), 20);
        assert_eq!(tr1.len() + te1.len(), 100);
        for i in &te1 {
            assert!(!tr1.contains(i));
        }
        // Different seed yields a different shuffle.
        let (tr3, _, _) = stratified_split_indices(&keys, &labels, 0.2, 8).unwrap();
        assert_ne!(tr1, tr3);
    }

    #[test]
    fn singleton_group_goes_to_train() {
        let mut keys: Vec<GroupKey> = (0..9).map(|_| key(0, 0)).collect();
        keys.push(key(9, 9));
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        let (train, test, warnings) =
            stratified_split_indices(&keys, &labels, 0.3, 1).unwrap();
        assert!(train.contains(&9));
        assert!(!test.contains(&9));
        assert!(warnings
            .iter()
            .any(|w| matches!(w, SplitWarning::SingletonGroup { .. })));
    }

    #[test]
    fn balanced_cells_contribute_proportionally() {
        // 2 groups x 2 labels, 10 examples per cell, fraction 0.25:
        // every cell must contribute 25% +/- 1 example to the test side.
        let mut keys = Vec::new();
        let mut labels = Vec::new();
        for g in 0..2u8 {
            for l in 0..2u8 {
                for _ in 0..10 {
                    keys.push(key(g, 0));
                    labels.push(l);
                }
            }
        }
        let (_, test, warnings) = stratified_split_indices(&keys, &labels, 0.25, 3).unwrap();
        assert!(warnings.is_empty());
        for g in 0..2u8 {
            for l in 0..2u8 {
                let count = test
                    .iter()
                    .filter(|&&i| keys[i] == key(g, 0) && labels[i] == l)
                    .count();
                // Exhaustive count: 10 * 0.25 = 2.5, so 2 or 3 per cell.
                assert!(
                    (2..=3).contains(&count),
                    "cell ({g},{l}) contributed {count}"
                );
            }
        }
    }

    #[test]
    fn operating_point_rejects_out_of_range() {
        let mut per_group = BTreeMap::new();
        per_group.insert(key(0, 0), 1.2f64);
        assert!(OperatingPoint::new(per_group, 0.5, None).is_err());
    }
}
