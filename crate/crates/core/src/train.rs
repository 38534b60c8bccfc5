//! Trainers: per-group bootstrap models, group-proportionate minibatching,
//! the iterative Pareto-efficient trainer, and the three comparison
//! baselines (plain, parity-penalty, adversarial).
//!
//! Every run is deterministic for a fixed (dataset, config, seed): one run
//! seed feeds all phases through `derive_seed`, and all iteration orders are
//! fixed. Per-group bootstrap models train in parallel; each has its own
//! derived seed, so parallelism does not affect results.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{group_metrics, prevalence_weights, GroupPerformance, PseudoOptima};
use crate::model::{partition_by_groups, stratified_split, Dataset, GroupKey, GroupPartition};
use crate::net::{
    init_params, loss_and_grad, predict_proba, sgd_step, Batch, LayerSpec, LossSpec,
    NetworkParams,
};
use crate::Real;

/// Which composite loss a trainer minimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Plain,
    Pef,
    Parity,
    Adversarial,
}

/// Training hyperparameters. Defaults are the documented desk-scale
/// settings; everything is overridable from the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_outer_iters: usize,
    pub improvement_delta: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub prevalence_weighting: bool,
    pub hidden_sizes: Vec<usize>,
    /// Share of the training data held out to evaluate per-group accuracy
    /// inside the outer loop (never used for gradient steps).
    pub validation_fraction: f64,
    /// Minimum per-group training examples required to bootstrap a
    /// pseudo-optimum.
    pub min_group_size: usize,
    /// Gradient-reversal strength of the adversarial baseline.
    pub adversary_reversal: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            alpha: 0.5,
            epochs: 30,
            batch_size: 128,
            learning_rate: 0.01,
            max_outer_iters: 10,
            improvement_delta: 1e-3,
            seed: 0,
            loss_kind: LossKind::Pef,
            prevalence_weighting: false,
            hidden_sizes: vec![32, 16],
            validation_fraction: 0.2,
            min_group_size: 30,
            adversary_reversal: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config("alpha must lie in [0, 1]".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.max_outer_iters == 0 {
            return Err(Error::Config(
                "epochs, batch_size and max_outer_iters must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.improvement_delta > 0.0) {
            return Err(Error::Config("improvement_delta must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if self.min_group_size == 0 {
            return Err(Error::Config("min_group_size must be positive".into()));
        }
        if self.adversary_reversal < 0.0 {
            return Err(Error::Config("adversary_reversal must be >= 0".into()));
        }
        LayerSpec::new(self.hidden_sizes.clone()).map(|_| ())
    }

    fn layer_spec(&self) -> LayerSpec {
        LayerSpec {
            hidden_sizes: self.hidden_sizes.clone(),
        }
    }
}

// Seed derivation: one run seed feeds every phase through splitmix64 so
// phases never share RNG state and adding a phase never shifts another.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

const SALT_VAL_SPLIT: u64 = 1;
const SALT_BOOTSTRAP: u64 = 0x100;
const SALT_OUTER: u64 = 0x200;

/// Stream of group-proportionate minibatches.
///
/// Each batch holds round(prevalence_g * batch_size) examples of group g,
/// every group at least 1, with the largest group absorbing rounding. An
/// epoch has max_g ceil(n_g / quota_g) batches; each group cycles through
/// deterministic reshuffles of its own indices, so within an epoch an
/// index's multiplicity differs from its group-mates' by at most one.
#[derive(Clone, Debug)]
pub struct GroupBatcher {
    group_rows: Vec<Vec<usize>>,
    quotas: Vec<usize>,
    batches_per_epoch: usize,
    seed: u64,
}

impl GroupBatcher {
    pub fn new(partition: &GroupPartition, batch_size: usize, seed: u64) -> Result<Self> {
        let n_groups = partition.n_groups();
        if batch_size < n_groups {
            return Err(Error::BatchTooSmall {
                batch_size,
                n_groups,
            });
        }
        let group_rows: Vec<Vec<usize>> = partition.groups().values().cloned().collect();
        let prevalences: Vec<f64> = partition.prevalence().values().copied().collect();
        let mut quotas: Vec<usize> = prevalences
            .iter()
            .map(|&p| ((p * batch_size as f64).round() as usize).max(1))
            .collect();
        let largest = prevalences
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.partial_cmp(b).unwrap())
            .map(|(i, _)| i)
            .expect("partition has groups");
        let others: usize = quotas
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != largest)
            .map(|(_, &q)| q)
            .sum();
        if others + 1 > batch_size {
            return Err(Error::BatchTooSmall {
                batch_size,
                n_groups,
            });
        }
        quotas[largest] = batch_size - others;
        let batches_per_epoch = group_rows
            .iter()
            .zip(&quotas)
            .map(|(rows, &q)| rows.len().div_ceil(q))
            .max()
            .expect("partition has groups");
        Ok(GroupBatcher {
            group_rows,
            quotas,
            batches_per_epoch,
            seed,
        })
    }

    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    /// The batches of one epoch. Deterministic in (seed, epoch).
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut draws: Vec<Vec<usize>> = Vec::with_capacity(self.group_rows.len());
        for (gi, rows) in self.group_rows.iter().enumerate() {
            let need = self.batches_per_epoch * self.quotas[gi];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, gi as u64));
            rng.set_stream(epoch);
            let mut stream = Vec::with_capacity(need);
            while stream.len() < need {
                let mut perm = rows.clone();
                perm.shuffle(&mut rng);
                let take = (need - stream.len()).min(perm.len());
                stream.extend_from_slice(&perm[..take]);
            }
            draws.push(stream);
        }
        (0..self.batches_per_epoch)
            .map(|b| {
                let mut batch = Vec::with_capacity(self.quotas.iter().sum());
                for (gi, q) in self.quotas.iter().enumerate() {
                    batch.extend_from_slice(&draws[gi][b * q..(b + 1) * q]);
                }
                batch
            })
            .collect()
    }
}

/// Loss selection for one inner training phase.
enum InnerLoss {
    Plain,
    Pef {
        optima: Vec<f64>,
        weights: Option<Vec<f64>>,
    },
    Parity,
    Adversarial,
}

/// One full minibatch-SGD run over the training set.
fn run_training(
    train: &Dataset,
    partition: &GroupPartition,
    loss: &InnerLoss,
    config: &TrainConfig,
    seed: u64,
) -> Result<NetworkParams<Real>> {
    let group_of = partition.group_index_per_row(train.n_examples());
    let n_groups = partition.n_groups();
    let mut params = init_params::<Real>(&config.layer_spec(), train.n_features(), seed)?;
    if matches!(loss, InnerLoss::Adversarial) {
        params = params.with_adversary(n_groups.max(2), config.adversary_reversal)?;
    }
    let batcher = GroupBatcher::new(partition, config.batch_size, seed)?;

    for epoch in 0..config.epochs {
        for batch_idx in batcher.epoch(epoch as u64) {
            let features = train.features().select(ndarray::Axis(0), &batch_idx);
            let labels: Vec<u8> = batch_idx.iter().map(|&i| train.labels()[i]).collect();
            let groups: Vec<usize> = batch_idx.iter().map(|&i| group_of[i]).collect();
            let batch = Batch {
                features: features.view(),
                labels: &labels,
                groups: &groups,
                n_groups: n_groups.max(2),
            };
            let spec = match loss {
                InnerLoss::Plain => LossSpec::CrossEntropy,
                InnerLoss::Pef { optima, weights } => LossSpec::Pef {
                    lambda: config.lambda,
                    alpha: config.alpha,
                    optima,
                    weights: weights.as_deref(),
                },
                InnerLoss::Parity => LossSpec::Parity {
                    lambda: config.lambda,
                },
                InnerLoss::Adversarial => LossSpec::Adversarial {
                    lambda: config.lambda,
                },
            };
            let (_, grads) = loss_and_grad(&params, &batch, &spec)?;
            params = sgd_step(&params, &grads, config.learning_rate)?;
        }
    }
    Ok(params)
}

/// Hard per-group accuracy of a model on a dataset.
pub fn evaluate_group_accuracy(
    params: &NetworkParams<Real>,
    dataset: &Dataset,
    partition: &GroupPartition,
) -> Result<GroupPerformance<Real>> {
    let probs = predict_proba(params, dataset.features().view())?;
    let scores: Vec<Real> = probs.to_vec();
    Ok(group_metrics(&scores, dataset.labels(), partition, 0.5)?.accuracy)
}

/// One outer iteration's record: validation accuracy per group and the
/// pseudo-optima in force during that iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterIteration {
    pub f_g: BTreeMap<GroupKey, f64>,
    pub f_opt_g: BTreeMap<GroupKey, f64>,
}

/// A trained model with its frontier and outer-loop history.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: NetworkParams<Real>,
    pub pseudo_optima: PseudoOptima<Real>,
    pub history: Vec<OuterIteration>,
    pub config: TrainConfig,
}

impl TrainedModel {
    /// History invariants: non-empty, and per-group pseudo-optima never
    /// decrease across iterations.
    pub fn check_history(&self) -> Result<()> {
        if self.history.is_empty() {
            return Err(Error::InvalidDataset("empty training history".into()));
        }
        for w in self.history.windows(2) {
            for (k, &prev) in &w[0].f_opt_g {
                if w[1].f_opt_g[k] < prev {
                    return Err(Error::InvalidDataset(format!(
                        "pseudo-optimum of group {k} decreased"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Split a dataset into the gradient-descent part and the held-out
/// validation part used for f_g evaluation, deterministically from the run
/// seed.
fn carve_validation(dataset: &Dataset, config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let split = stratified_split(
        dataset,
        config.validation_fraction,
        derive_seed(config.seed, SALT_VAL_SPLIT),
    )?;
    Ok((split.train, split.test))
}

/// Train one plain-CE model per group on that group's data alone and read
/// its held-out accuracy as the group's pseudo-optimum.
pub fn bootstrap_pseudo_optima(
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<(PseudoOptima<Real>, Vec<(GroupKey, NetworkParams<Real>)>)> {
    config.validate()?;
    let train_part = partition_by_groups(train);
    let val_part = partition_by_groups(val);
    for (key, rows) in train_part.groups() {
        if rows.len() < config.min_group_size {
            return Err(Error::GroupTooSmall {
                group: key.to_string(),
                size: rows.len(),
                min: config.min_group_size,
            });
        }
        if !val_part.groups().contains_key(key) {
            return Err(Error::MissingGroup {
                group: key.to_string(),
                what: "validation split".into(),
            });
        }
    }

    let jobs: Vec<(usize, GroupKey, Vec<usize>, Vec<usize>)> = train_part
        .groups()
        .iter()
        .enumerate()
        .map(|(gi, (k, rows))| (gi, k.clone(), rows.clone(), val_part.groups()[k].clone()))
        .collect();

    let results: Vec<(GroupKey, NetworkParams<Real>, f64)> = jobs
        .par_iter()
        .map(|(gi, key, train_rows, val_rows)| {
            let sub_train = train.select(train_rows);
            let sub_part = partition_by_groups(&sub_train);
            let params = run_training(
                &sub_train,
                &sub_part,
                &InnerLoss::Plain,
                config,
                derive_seed(config.seed, SALT_BOOTSTRAP + *gi as u64),
            )?;
            let sub_val = val.select(val_rows);
            let sub_val_part = partition_by_groups(&sub_val);
            let acc = evaluate_group_accuracy(&params, &sub_val, &sub_val_part)?.overall;
            Ok((key.clone(), params, acc))
        })
        .collect::<Result<_>>()?;

    let optima = PseudoOptima::new(
        results
            .iter()
            .map(|(k, _, acc)| (k.clone(), acc.max(f64::EPSILON)))
            .collect(),
    )?;
    let models = results.into_iter().map(|(k, p, _)| (k, p)).collect();
    Ok((optima, models))
}

fn optima_vector(opt: &PseudoOptima<Real>, partition: &GroupPartition) -> Result<Vec<f64>> {
    partition
        .keys()
        .map(|k| {
            opt.get(k).ok_or_else(|| Error::MissingGroup {
                group: k.to_string(),
                what: "pseudo-optima".into(),
            })
        })
        .collect()
}

fn weight_vector(partition: &GroupPartition, config: &TrainConfig) -> Option<Vec<f64>> {
    if config.prevalence_weighting {
        let w = prevalence_weights::<Real>(partition);
        Some(partition.keys().map(|k| w[k]).collect())
    } else {
        None
    }
}

/// Single inner PEF phase: jointly train against fixed pseudo-optima and
/// record the resulting per-group validation accuracy.
pub fn train_pef(
    dataset: &Dataset,
    opt: &PseudoOptima<Real>,
    config: &TrainConfig,
) -> Result<TrainedModel> {
    config.validate()?;
    let (train, val) = carve_validation(dataset, config)?;
    let partition = partition_by_groups(&train);
    let params = run_training(
        &train,
        &partition,
        &InnerLoss::Pef {
            optima: optima_vector(opt, &partition)?,
            weights: weight_vector(&partition, config),
        },
        config,
        derive_seed(config.seed, SALT_OUTER),
    )?;
    let val_part = partition_by_groups(&val);
    let f_g = evaluate_group_accuracy(&params, &val, &val_part)?.per_group;
    Ok(TrainedModel {
        params,
        pseudo_optima: opt.clone(),
        history: vec![OuterIteration {
            f_g: f_g.into_iter().collect(),
            f_opt_g: opt.per_group().clone(),
        }],
        config: config.clone(),
    })
}

/// Comparison trainers: plain CE, parity penalty, or adversarial head.
/// The pseudo-optima are carried along for reporting only (these losses do
/// not read them).
pub fn train_baseline(
    dataset: &Dataset,
    opt: &PseudoOptima<Real>,
    config: &TrainConfig,
    kind: LossKind,
) -> Result<TrainedModel> {
    config.validate()?;
    if kind == LossKind::Pef {
        return train_pef(dataset, opt, config);
    }
    let (train, val) = carve_validation(dataset, config)?;
    let partition = partition_by_groups(&train);
    let loss = match kind {
        LossKind::Plain => InnerLoss::Plain,
        LossKind::Parity => InnerLoss::Parity,
        LossKind::Adversarial => InnerLoss::Adversarial,
        LossKind::Pef => unreachable!(),
    };
    let params = run_training(
        &train,
        &partition,
        &loss,
        config,
        derive_seed(config.seed, SALT_OUTER),
    )?;
    let val_part = partition_by_groups(&val);
    let f_g = evaluate_group_accuracy(&params, &val, &val_part)?.per_group;
    Ok(TrainedModel {
        params,
        pseudo_optima: opt.clone(),
        history: vec![OuterIteration {
            f_g: f_g.into_iter().collect(),
            f_opt_g: opt.per_group().clone(),
        }],
        config: config.clone(),
    })
}

/// Iterative Pareto-efficient bias mitigation: bootstrap per-group optima,
/// then repeatedly raise them to any accuracy the joint model beats them
/// by more than `improvement_delta`, retraining until no group improves or
/// `max_outer_iters` is reached.
pub fn algorithm1(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let (train, val) = carve_validation(dataset, config)?;
    let (mut optima, _) = bootstrap_pseudo_optima(&train, &val, config)?;
    let partition = partition_by_groups(&train);
    let val_part = partition_by_groups(&val);

    let mut history: Vec<OuterIteration> = Vec::new();
    let mut params: Option<NetworkParams<Real>> = None;
    let mut f_g: Option<BTreeMap<GroupKey, f64>> = None;

    for iter in 0..config.max_outer_iters {
        if let Some(f) = &f_g {
            optima.raise(f);
        }
        let trained = run_training(
            &train,
            &partition,
            &InnerLoss::Pef {
                optima: optima_vector(&optima, &partition)?,
                weights: weight_vector(&partition, config),
            },
            config,
            derive_seed(config.seed, SALT_OUTER + iter as u64),
        )?;
        let evaluated = evaluate_group_accuracy(&trained, &val, &val_part)?.per_group;
        history.push(OuterIteration {
            f_g: evaluated.clone(),
            f_opt_g: optima.per_group().clone(),
        });
        params = Some(trained);
        let improved = evaluated
            .iter()
            .any(|(k, &f)| f > optima.get(k).unwrap() + config.improvement_delta);
        f_g = Some(evaluated);
        if !improved {
            break;
        }
        if iter + 1 == config.max_outer_iters {
            log::info!("algorithm1 stopped at max_outer_iters = {}", config.max_outer_iters);
        }
    }

    let model = TrainedModel {
        params: params.expect("at least one outer iteration"),
        pseudo_optima: optima,
        history,
        config: config.clone(),
    };
    model.check_history()?;
    Ok(model)
}
