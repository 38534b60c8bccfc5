//! Synthetic tabular distributions: binary sensitive bits drive a
//! confounding feature C, and the label is drawn from Bern(clip(C)).
//!
//! All sampling uses ChaCha8 with one stream per column, so adding a column
//! never perturbs the draws of earlier columns, and a fixed seed yields
//! byte-identical datasets on every platform.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, GroupKey};
use crate::Real;

/// How the mean of the confounder C depends on the sensitive bits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DependencySpec {
    /// mu_C = weights . bits, one weight per sensitive bit (2 or 3 bits).
    Linear { weights: Vec<f64> },
    /// Explicit mu_C per (a, b) cell; all four cells required.
    Table { mu: BTreeMap<String, f64> },
    /// Two-regime case: groups with b = 1 draw C ~ U(0, 1) and a label
    /// from a fair coin (the feature carries no signal for them); groups
    /// with b = 0 draw C ~ N(p, sigma^2) - c when a = 0 and + c when a = 1,
    /// with the label from Bern(clip(C)).
    EdgeCase { c: f64 },
}

impl DependencySpec {
    fn n_bits(&self) -> usize {
        match self {
            DependencySpec::Linear { weights } => weights.len(),
            DependencySpec::Table { .. } | DependencySpec::EdgeCase { .. } => 2,
        }
    }
}

/// Cell key used in [`DependencySpec::Table`]: "a,b" over bit values, e.g.
/// "0,1".
pub fn cell_key(a: u8, b: u8) -> String {
    format!("{a},{b}")
}

/// Configuration of one synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_examples: usize,
    pub seed: u64,
    /// Bernoulli parameter of each sensitive bit.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Standard deviation of the normal confounder.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub dependency: DependencySpec,
    /// Optional relative group weights; when set, group counts follow the
    /// ratio exactly (remainder to the largest group) instead of i.i.d.
    /// sampling.
    #[serde(default)]
    pub prevalence_ratios: Option<BTreeMap<String, f64>>,
}

fn default_p() -> f64 {
    0.5
}

fn default_sigma() -> f64 {
    0.1
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::Config("n_examples must be positive".into()));
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config("p must lie in (0, 1)".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be positive".into()));
        }
        match &self.dependency {
            DependencySpec::Linear { weights } => {
                if weights.is_empty() || weights.len() > 3 {
                    return Err(Error::Config(
                        "linear dependency needs 1 to 3 bit weights".into(),
                    ));
                }
            }
            DependencySpec::Table { mu } => {
                for a in 0..2u8 {
                    for b in 0..2u8 {
                        if !mu.contains_key(&cell_key(a, b)) {
                            return Err(Error::Config(format!(
                                "table dependency missing cell {}",
                                cell_key(a, b)
                            )));
                        }
                    }
                }
            }
            DependencySpec::EdgeCase { c } => {
                if !(*c > 0.0 && *c < self.p) {
                    return Err(Error::Config(format!(
                        "edge case requires 0 < c < p, got c={c}, p={}",
                        self.p
                    )));
                }
            }
        }
        if let Some(ratios) = &self.prevalence_ratios {
            let n_bits = self.dependency.n_bits();
            let expected = 1usize << n_bits;
            if ratios.len() != expected {
                return Err(Error::Config(format!(
                    "prevalence_ratios must cover all {expected} groups"
                )));
            }
            if ratios.values().any(|&w| !(w > 0.0)) {
                return Err(Error::Config("prevalence ratios must be positive".into()));
            }
        }
        Ok(())
    }
}

/// A group whose Bernoulli parameter was clipped to 0 or 1 for every
/// example, making its label deterministic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthWarning {
    pub group: String,
    pub clipped_to: f64,
}

/// Generated dataset plus any degenerate-group warnings.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub dataset: Dataset<Real>,
    pub warnings: Vec<SynthWarning>,
}

const BIT_NAMES: [&str; 3] = ["a", "b", "d"];
// Column streams; fixed ids so adding a column never shifts another.
const STREAM_CONFOUNDER: u64 = 8;
const STREAM_LABEL: u64 = 9;
const STREAM_ROW_ORDER: u64 = 10;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn bits_to_key(bits: &[u8]) -> GroupKey {
    GroupKey::new(bits.iter().map(u8::to_string))
}

/// Draw the sensitive bits for every row.
fn sample_bits(config: &SynthConfig, n_bits: usize) -> Result<Vec<Vec<u8>>> {
    let n = config.n_examples;
    if let Some(ratios) = &config.prevalence_ratios {
        // Exact counts: floor of the proportional share, remainder to the
        // largest group (ties to the lexicographically first).
        let keys: Vec<(GroupKey, f64)> = ratios
            .iter()
            .map(|(k, &w)| {
                let parts: Vec<&str> = k.split(',').collect();
                if parts.len() != n_bits || parts.iter().any(|p| !matches!(*p, "0" | "1")) {
                    return Err(Error::Config(format!(
                        "prevalence ratio key '{k}' is not a {n_bits}-bit cell"
                    )));
                }
                Ok((GroupKey::new(parts.iter().map(|s| s.to_string())), w))
            })
            .collect::<Result<_>>()?;
        let total: f64 = keys.iter().map(|(_, w)| w).sum();
        let mut counts: Vec<usize> = keys
            .iter()
            .map(|(_, w)| ((w / total) * n as f64).floor() as usize)
            .collect();
        let assigned: usize = counts.iter().sum();
        let largest = keys
            .iter()
            .enumerate()
            .max_by(|(_, (ka, wa)), (_, (kb, wb))| {
                wa.partial_cmp(wb)
                    .unwrap()
                    .then_with(|| kb.cmp(ka))
            })
            .map(|(i, _)| i)
            .expect("nonempty");
        counts[largest] += n - assigned;

        let mut rows = Vec::with_capacity(n);
        for ((key, _), count) in keys.iter().zip(&counts) {
            let bits: Vec<u8> = key.values().iter().map(|v| v.parse().unwrap()).collect();
            rows.extend(std::iter::repeat_n(bits, *count));
        }
        // Interleave groups so exports are not blocky; order is seeded.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(config.seed, STREAM_ROW_ORDER));
        Ok(order.into_iter().map(|i| rows[i].clone()).collect())
    } else {
        let mut columns: Vec<Vec<u8>> = Vec::with_capacity(n_bits);
        for bit in 0..n_bits {
            let mut rng = rng_for(config.seed, bit as u64);
            columns.push(
                (0..n)
                    .map(|_| u8::from(rng.random::<f64>() < config.p))
                    .collect(),
            );
        }
        Ok((0..n)
            .map(|i| columns.iter().map(|c| c[i]).collect())
            .collect())
    }
}

/// Generate a dataset from the configuration. The feature matrix contains
/// only the confounder C; sensitive bits are carried as the sensitive
/// tuple.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let n_bits = config.dependency.n_bits();
    let n = config.n_examples;
    let bits = sample_bits(config, n_bits)?;

    let mut c_rng = rng_for(config.seed, STREAM_CONFOUNDER);
    let mut label_rng = rng_for(config.seed, STREAM_LABEL);
    let normal = StandardNormal;

    let mut confounder = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    for row_bits in &bits {
        let (c_value, bern_p) = match &config.dependency {
            DependencySpec::Linear { weights } => {
                let mu: f64 = weights
                    .iter()
                    .zip(row_bits)
                    .map(|(w, &b)| w * b as f64)
                    .sum();
                let z: f64 = normal.sample(&mut c_rng);
                let c = mu + config.sigma * z;
                (c, c.clamp(0.0, 1.0))
            }
            DependencySpec::Table { mu } => {
                let mu = mu[&cell_key(row_bits[0], row_bits[1])];
                let z: f64 = normal.sample(&mut c_rng);
                let c = mu + config.sigma * z;
                (c, c.clamp(0.0, 1.0))
            }
            DependencySpec::EdgeCase { c } => {
                if row_bits[1] == 1 {
                    // Chance regime: uniform noise feature, fair-coin label.
                    (c_rng.random::<f64>(), 0.5)
                } else {
                    let z: f64 = normal.sample(&mut c_rng);
                    let offset = if row_bits[0] == 1 { *c } else { -*c };
                    let value = config.p + config.sigma * z + offset;
                    (value, value.clamp(0.0, 1.0))
                }
            }
        };
        confounder.push(c_value);
        params.push(bern_p);
    }

    let labels: Vec<u8> = params
        .iter()
        .map(|&p| u8::from(label_rng.random::<f64>() < p))
        .collect();

    // Flag groups whose Bernoulli parameter was clipped flat.
    let mut group_param_ranges: BTreeMap<GroupKey, (f64, f64)> = BTreeMap::new();
    for (row_bits, &p) in bits.iter().zip(&params) {
        let key = bits_to_key(row_bits);
        let entry = group_param_ranges.entry(key).or_insert((p, p));
        entry.0 = entry.0.min(p);
        entry.1 = entry.1.max(p);
    }
    let warnings: Vec<SynthWarning> = group_param_ranges
        .iter()
        .filter(|(_, &(lo, hi))| (lo == 0.0 && hi == 0.0) || (lo == 1.0 && hi == 1.0))
        .map(|(k, &(lo, _))| {
            log::warn!("synthetic group {k} has a deterministic label (parameter clipped to {lo})");
            SynthWarning {
                group: k.to_string(),
                clipped_to: lo,
            }
        })
        .collect();

    let features = Array2::from_shape_vec((n, 1), confounder)
        .expect("confounder length matches n");
    let sensitive: Vec<GroupKey> = bits.iter().map(|b| bits_to_key(b)).collect();
    let dataset = Dataset::new(
        features,
        labels,
        sensitive,
        vec!["C".into()],
        BIT_NAMES[..n_bits].iter().map(|s| s.to_string()).collect(),
    )?;
    Ok(SynthOutput { dataset, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::partition_by_groups;

    fn linear(weights: &[f64], n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            n_examples: n,
            seed,
            p: 0.5,
            sigma: 0.1,
            dependency: DependencySpec::Linear {
                weights: weights.to_vec(),
            },
            prevalence_ratios: None,
        }
    }

    #[test]
    fn zero_examples_rejected() {
        assert!(linear(&[2.0, 1.0], 0, 0).validate().is_err());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = linear(&[2.0, 1.0], 500, 11);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_synthetic(&linear(&[2.0, 1.0], 500, 12)).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn adding_a_bit_preserves_earlier_columns() {
        let two = generate_synthetic(&linear(&[2.0, 2.0], 400, 5)).unwrap();
        let three = generate_synthetic(&linear(&[2.0, 2.0, 2.0], 400, 5)).unwrap();
        for (s2, s3) in two
            .dataset
            .sensitive()
            .iter()
            .zip(three.dataset.sensitive())
        {
            assert_eq!(s2.values()[0], s3.values()[0]);
            assert_eq!(s2.values()[1], s3.values()[1]);
        }
    }

    #[test]
    fn bit_means_near_p() {
        let n = 20_000;
        let out = generate_synthetic(&linear(&[2.0, 1.0], n, 0)).unwrap();
        let tol = 3.0 * (0.25f64 / n as f64).sqrt();
        for bit in 0..2 {
            let mean = out
                .dataset
                .sensitive()
                .iter()
                .map(|k| k.values()[bit].parse::<f64>().unwrap())
                .sum::<f64>()
                / n as f64;
            assert!((mean - 0.5).abs() < tol, "bit {bit} mean {mean}");
        }
    }

    #[test]
    fn linear_group_means_match_mu() {
        let n = 20_000;
        let sigma = 0.1;
        let out = generate_synthetic(&linear(&[2.0, 1.0], n, 0)).unwrap();
        let part = partition_by_groups(&out.dataset);
        for (key, rows) in part.groups() {
            let a: f64 = key.values()[0].parse().unwrap();
            let b: f64 = key.values()[1].parse().unwrap();
            let mu = 2.0 * a + b;
            let mean: f64 = rows
                .iter()
                .map(|&i| out.dataset.features()[[i, 0]])
                .sum::<f64>()
                / rows.len() as f64;
            let tol = 3.0 * sigma / (rows.len() as f64).sqrt();
            assert!((mean - mu).abs() < tol, "group {key}: mean {mean} vs mu {mu}");
        }
    }

    #[test]
    fn table_dependency_and_degenerate_warning() {
        let mut mu = BTreeMap::new();
        mu.insert(cell_key(0, 0), 3.0);
        mu.insert(cell_key(0, 1), 11.0);
        mu.insert(cell_key(1, 0), 4.0);
        mu.insert(cell_key(1, 1), 8.0);
        let cfg = SynthConfig {
            n_examples: 2000,
            seed: 0,
            p: 0.5,
            sigma: 0.1,
            dependency: DependencySpec::Table { mu },
            prevalence_ratios: None,
        };
        let out = generate_synthetic(&cfg).unwrap();
        // Every mu is far above 1, so every group's parameter clips to 1.
        assert_eq!(out.warnings.len(), 4);
        assert!(out.dataset.labels().iter().all(|&l| l == 1));
    }

    #[test]
    fn prevalence_ratios_give_exact_counts() {
        let mut mu = BTreeMap::new();
        mu.insert(cell_key(0, 0), 3.0);
        mu.insert(cell_key(0, 1), 11.0);
        mu.insert(cell_key(1, 0), 4.0);
        mu.insert(cell_key(1, 1), 9.0);
        let mut ratios = BTreeMap::new();
        ratios.insert(cell_key(0, 0), 1.0);
        ratios.insert(cell_key(0, 1), 9.0);
        ratios.insert(cell_key(1, 0), 1.0);
        ratios.insert(cell_key(1, 1), 9.0);
        let cfg = SynthConfig {
            n_examples: 1001,
            seed: 3,
            p: 0.5,
            sigma: 0.1,
            dependency: DependencySpec::Table { mu },
            prevalence_ratios: Some(ratios),
        };
        let out = generate_synthetic(&cfg).unwrap();
        let part = partition_by_groups(&out.dataset);
        let count = |a: u8, b: u8| {
            part.groups()[&GroupKey::new([a.to_string(), b.to_string()])].len()
        };
        // floor shares: 50, 450, 50, 450; remainder 1 goes to the largest
        // (lexicographically first among ties): "0,1".
        assert_eq!(count(0, 0), 50);
        assert_eq!(count(0, 1), 451);
        assert_eq!(count(1, 0), 50);
        assert_eq!(count(1, 1), 450);
    }

    #[test]
    fn edge_case_regimes() {
        let cfg = SynthConfig {
            n_examples: 40_000,
            seed: 0,
            p: 0.5,
            sigma: 0.1,
            dependency: DependencySpec::EdgeCase { c: 0.2 },
            prevalence_ratios: None,
        };
        let out = generate_synthetic(&cfg).unwrap();
        let part = partition_by_groups(&out.dataset);
        for (key, rows) in part.groups() {
            let b = &key.values()[1];
            let c_mean: f64 = rows
                .iter()
                .map(|&i| out.dataset.features()[[i, 0]])
                .sum::<f64>()
                / rows.len() as f64;
            let label_mean: f64 = rows
                .iter()
                .map(|&i| out.dataset.labels()[i] as f64)
                .sum::<f64>()
                / rows.len() as f64;
            let tol = 3.0 / (rows.len() as f64).sqrt();
            if b == "1" {
                // Uniform feature, fair-coin label.
                assert!((c_mean - 0.5).abs() < tol, "uniform C mean {c_mean}");
                assert!((label_mean - 0.5).abs() < tol, "coin label mean {label_mean}");
            } else {
                let expected = if key.values()[0] == "1" { 0.7 } else { 0.3 };
                assert!(
                    (c_mean - expected).abs() < 0.01,
                    "group {key}: C mean {c_mean} vs {expected}"
                );
                assert!(
                    (label_mean - expected).abs() < 0.02,
                    "group {key}: label mean {label_mean} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn edge_case_offset_validation() {
        let cfg = SynthConfig {
            n_examples: 10,
            seed: 0,
            p: 0.5,
            sigma: 0.1,
            dependency: DependencySpec::EdgeCase { c: 0.6 },
            prevalence_ratios: None,
        };
        assert!(cfg.validate().is_err());
    }
}
