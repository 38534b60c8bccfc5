//! Minimal feed-forward binary classifier with explicit forward/backward
//! passes.
//!
//! Hidden layers use ReLU; the output is a single logit through a sigmoid.
//! Logits are clamped to +/-[`LOGIT_CLAMP`] before the sigmoid so
//! cross-entropy stays finite and probabilities stay strictly inside (0, 1).
//! An optional group-prediction head supports the adversarial baseline: its
//! gradient into the shared trunk is sign-flipped and scaled by the reversal
//! strength.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, cast_usize, Scalar};

/// Logit clamp bound; sigmoid(30) is still strictly below 1 in f32.
pub const LOGIT_CLAMP: f64 = 30.0;

/// Hidden-layer widths; the output layer (single logit) is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub hidden_sizes: Vec<usize>,
}

impl LayerSpec {
    pub fn new(hidden_sizes: Vec<usize>) -> Result<Self> {
        if hidden_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("layer sizes must be >= 1".into()));
        }
        Ok(LayerSpec { hidden_sizes })
    }
}

/// One dense layer; `weights` is (fan_in x fan_out). Also used to hold the
/// matching gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<S: Scalar> {
    pub weights: Array2<S>,
    pub bias: Array1<S>,
}

impl<S: Scalar> DenseLayer<S> {
    fn zeros_like(other: &DenseLayer<S>) -> Self {
        DenseLayer {
            weights: Array2::zeros(other.weights.raw_dim()),
            bias: Array1::zeros(other.bias.raw_dim()),
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite()) && self.bias.iter().all(|v| v.is_finite())
    }
}

/// Extra output head predicting group membership from the last shared
/// hidden layer (or the input when there are no hidden layers).
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryHead<S: Scalar> {
    pub layer: DenseLayer<S>,
    pub reversal_strength: S,
}

/// All trainable parameters of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<S: Scalar> {
    pub hidden: Vec<DenseLayer<S>>,
    pub output: DenseLayer<S>,
    pub adversary: Option<AdversaryHead<S>>,
    pub n_features: usize,
    pub init_seed: u64,
}

/// Gradients with the same shapes as [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet<S: Scalar> {
    pub hidden: Vec<DenseLayer<S>>,
    pub output: DenseLayer<S>,
    pub adversary: Option<DenseLayer<S>>,
}

impl<S: Scalar> GradientSet<S> {
    fn zeros_like(params: &NetworkParams<S>) -> Self {
        GradientSet {
            hidden: params.hidden.iter().map(DenseLayer::zeros_like).collect(),
            output: DenseLayer::zeros_like(&params.output),
            adversary: params
                .adversary
                .as_ref()
                .map(|a| DenseLayer::zeros_like(&a.layer)),
        }
    }

    fn is_finite(&self) -> bool {
        self.hidden.iter().all(DenseLayer::is_finite)
            && self.output.is_finite()
            && self.adversary.as_ref().map_or(true, DenseLayer::is_finite)
    }
}

/// Uniform draw in [0, 1) from the top 53 bits of the generator output; the
/// same bit path for every scalar width keeps initialization reproducible.
fn uniform_unit<S: Scalar>(rng: &mut impl RngCore) -> S {
    cast::<S>((rng.next_u64() >> 11) as f64 / 9007199254740992.0)
}

fn init_layer<S: Scalar>(rng: &mut impl RngCore, fan_in: usize, fan_out: usize) -> DenseLayer<S> {
    // Scaled-uniform initialization: U(-limit, limit) with
    // limit = sqrt(6 / (fan_in + fan_out)); biases start at zero.
    let limit = cast::<S>((6.0 / (fan_in + fan_out) as f64).sqrt());
    let two = cast::<S>(2.0);
    let weights = Array2::from_shape_fn((fan_in, fan_out), |_| {
        (uniform_unit::<S>(rng) * two - S::one()) * limit
    });
    DenseLayer {
        weights,
        bias: Array1::zeros(fan_out),
    }
}

/// Deterministic parameter initialization for a given seed.
pub fn init_params<S: Scalar>(
    spec: &LayerSpec,
    n_features: usize,
    seed: u64,
) -> Result<NetworkParams<S>> {
    if n_features == 0 {
        return Err(Error::Config("need at least one feature".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let mut hidden = Vec::with_capacity(spec.hidden_sizes.len());
    let mut width = n_features;
    for &h in &spec.hidden_sizes {
        hidden.push(init_layer::<S>(&mut rng, width, h));
        width = h;
    }
    let output = init_layer::<S>(&mut rng, width, 1);
    Ok(NetworkParams {
        hidden,
        output,
        adversary: None,
        n_features,
        init_seed: seed,
    })
}

impl<S: Scalar> NetworkParams<S> {
    /// Width of the last shared layer (input width when there are no hidden
    /// layers).
    pub fn trunk_width(&self) -> usize {
        self.hidden
            .last()
            .map(|l| l.weights.ncols())
            .unwrap_or(self.n_features)
    }

    /// Attach a group-prediction head with `n_groups` softmax classes. The
    /// head draws from its own RNG stream so trunk initialization is
    /// unchanged by its presence.
    pub fn with_adversary(mut self, n_groups: usize, reversal_strength: S) -> Result<Self> {
        if n_groups < 2 {
            return Err(Error::Config(
                "adversary head needs at least 2 group classes".into(),
            ));
        }
        if reversal_strength < S::zero() {
            return Err(Error::Config("reversal strength must be >= 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed);
        rng.set_stream(1);
        let layer = init_layer::<S>(&mut rng, self.trunk_width(), n_groups);
        self.adversary = Some(AdversaryHead {
            layer,
            reversal_strength,
        });
        Ok(self)
    }
}

fn sigmoid<S: Scalar>(z: S) -> S {
    S::one() / (S::one() + (-z).exp())
}

fn clamp_logit<S: Scalar>(z: S) -> S {
    let bound = cast::<S>(LOGIT_CLAMP);
    z.max(-bound).min(bound)
}

struct Forward<S: Scalar> {
    /// activations[0] is the input batch; activations[k+1] the output of
    /// hidden layer k after ReLU.
    activations: Vec<Array2<S>>,
    logits: Array1<S>,
    probabilities: Array1<S>,
}

fn forward<S: Scalar>(params: &NetworkParams<S>, features: ArrayView2<'_, S>) -> Result<Forward<S>> {
    if features.ncols() != params.n_features {
        return Err(Error::ShapeMismatch(format!(
            "{} feature columns but network expects {}",
            features.ncols(),
            params.n_features
        )));
    }
    let mut activations = vec![features.to_owned()];
    for layer in &params.hidden {
        let mut z = activations.last().unwrap().dot(&layer.weights);
        for mut row in z.rows_mut() {
            row.zip_mut_with(&layer.bias, |v, &b| *v = *v + b);
        }
        z.mapv_inplace(|v| v.max(S::zero()));
        activations.push(z);
    }
    let last = activations.last().unwrap();
    let mut logits = last.dot(&params.output.weights).index_axis_move(Axis(1), 0);
    let b = params.output.bias[0];
    logits.mapv_inplace(|z| clamp_logit(z + b));
    let probabilities = logits.mapv(sigmoid);
    Ok(Forward {
        activations,
        logits,
        probabilities,
    })
}

/// Probability of the positive class for each row; strictly inside (0, 1).
pub fn predict_proba<S: Scalar>(
    params: &NetworkParams<S>,
    features: ArrayView2<'_, S>,
) -> Result<Array1<S>> {
    Ok(forward(params, features)?.probabilities)
}

/// Hard predictions: 1 iff probability exceeds the threshold.
pub fn hard_predictions<S: Scalar>(probabilities: &Array1<S>, threshold: S) -> Vec<u8> {
    probabilities
        .iter()
        .map(|&p| u8::from(p > threshold))
        .collect()
}

/// A minibatch: features, binary labels, and each row's group index.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a, S: Scalar> {
    pub features: ArrayView2<'a, S>,
    pub labels: &'a [u8],
    pub groups: &'a [usize],
    pub n_groups: usize,
}

impl<'a, S: Scalar> Batch<'a, S> {
    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if n == 0 {
            return Err(Error::InvalidDataset("empty batch".into()));
        }
        if self.labels.len() != n || self.groups.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "batch rows {} vs {} labels / {} groups",
                n,
                self.labels.len(),
                self.groups.len()
            )));
        }
        if let Some(&g) = self.groups.iter().find(|&&g| g >= self.n_groups) {
            return Err(Error::Config(format!(
                "group index {g} out of range (n_groups = {})",
                self.n_groups
            )));
        }
        Ok(())
    }
}

/// Composite training objective.
#[derive(Clone, Copy, Debug)]
pub enum LossSpec<'a, S: Scalar> {
    /// Plain binary cross-entropy.
    CrossEntropy,
    /// Cross-entropy plus lambda * (alpha * l1 + (1 - alpha) * variance) of
    /// the clipped per-group Pareto errors of the soft group accuracies
    /// against fixed `optima` (group-index order). `weights` selects the
    /// prevalence-weighted variant.
    Pef {
        lambda: S,
        alpha: S,
        optima: &'a [S],
        weights: Option<&'a [S]>,
    },
    /// Cross-entropy plus lambda * sum_g |soft_acc_g - soft_acc_overall|.
    Parity { lambda: S },
    /// Label-head cross-entropy plus lambda * group-head cross-entropy;
    /// the group head's gradient into the trunk is multiplied by
    /// -reversal_strength.
    Adversarial { lambda: S },
}

struct GroupStats<S: Scalar> {
    counts: Vec<usize>,
    soft_acc: Vec<S>,
}

fn group_soft_stats<S: Scalar>(batch: &Batch<'_, S>, probs: &Array1<S>) -> Result<GroupStats<S>> {
    let mut counts = vec![0usize; batch.n_groups];
    let mut sums = vec![S::zero(); batch.n_groups];
    for (i, (&g, &y)) in batch.groups.iter().zip(batch.labels).enumerate() {
        counts[g] += 1;
        let q = if y == 1 {
            probs[i]
        } else {
            S::one() - probs[i]
        };
        sums[g] = sums[g] + q;
    }
    if let Some(g) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGroupInBatch {
            group: format!("#{g}"),
        });
    }
    let soft_acc = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| s / cast_usize::<S>(c))
        .collect();
    Ok(GroupStats { counts, soft_acc })
}

/// Value and gradients of the selected loss on one minibatch.
///
/// All gradients are exact derivatives of the reported loss value, except
/// the adversarial trunk gradient, which by construction is the derivative
/// of `label CE - reversal_strength * lambda * group CE` while the reported
/// value is `label CE + lambda * group CE`.
pub fn loss_and_grad<S: Scalar>(
    params: &NetworkParams<S>,
    batch: &Batch<'_, S>,
    spec: &LossSpec<'_, S>,
) -> Result<(S, GradientSet<S>)> {
    batch.validate()?;
    let fwd = forward(params, batch.features)?;
    let n = batch.features.nrows();
    let n_s = cast_usize::<S>(n);
    let probs = &fwd.probabilities;

    // Cross-entropy and its logit gradient.
    let mut ce = S::zero();
    let mut dz = Array1::<S>::zeros(n);
    for i in 0..n {
        let p = probs[i];
        let y = cast::<S>(batch.labels[i] as f64);
        ce = ce - (y * p.ln() + (S::one() - y) * (S::one() - p).ln());
        dz[i] = (p - y) / n_s;
    }
    ce = ce / n_s;

    let mut loss = ce;
    let mut group_head: Option<(Array2<S>, S)> = None;

    match spec {
        LossSpec::CrossEntropy => {}
        LossSpec::Pef {
            lambda,
            alpha,
            optima,
            weights,
        } => {
            if *lambda < S::zero() {
                return Err(Error::Config("lambda must be >= 0".into()));
            }
            if !(*alpha >= S::zero() && *alpha <= S::one()) {
                return Err(Error::Config("alpha must lie in [0, 1]".into()));
            }
            if optima.len() != batch.n_groups {
                return Err(Error::ShapeMismatch(format!(
                    "{} optima for {} groups",
                    optima.len(),
                    batch.n_groups
                )));
            }
            if optima.iter().any(|&o| o <= S::zero()) {
                return Err(Error::Config("pseudo-optima must be positive".into()));
            }
            if let Some(w) = weights {
                if w.len() != batch.n_groups {
                    return Err(Error::ShapeMismatch(format!(
                        "{} weights for {} groups",
                        w.len(),
                        batch.n_groups
                    )));
                }
            }
            if *lambda > S::zero() {
                let stats = group_soft_stats(batch, probs)?;
                let g_count = cast_usize::<S>(batch.n_groups);
                let w_of = |g: usize| weights.map_or_else(S::one, |w| w[g]);
                let raw: Vec<S> = (0..batch.n_groups)
                    .map(|g| S::one() - stats.soft_acc[g] / optima[g])
                    .collect();
                let weighted: Vec<S> = (0..batch.n_groups)
                    .map(|g| w_of(g) * raw[g].max(S::zero()))
                    .collect();
                let l1: S = weighted.iter().copied().sum();
                let mean = l1 / g_count;
                let var = weighted.iter().map(|&e| (e - mean) * (e - mean)).sum::<S>() / g_count;
                let penalty = *alpha * l1 + (S::one() - *alpha) * var;
                loss = loss + *lambda * penalty;

                // dP/d soft_acc_g, chained through the clip (zero once a
                // group meets its optimum) and the penalty terms.
                let two = cast::<S>(2.0);
                let d_soft: Vec<S> = (0..batch.n_groups)
                    .map(|g| {
                        if raw[g] <= S::zero() {
                            return S::zero();
                        }
                        let d_pen_d_eg = *alpha
                            + (S::one() - *alpha) * two / g_count * (weighted[g] - mean);
                        d_pen_d_eg * w_of(g) * (-(S::one() / optima[g]))
                    })
                    .collect();
                for i in 0..n {
                    let g = batch.groups[i];
                    if d_soft[g] == S::zero() {
                        continue;
                    }
                    let sign = if batch.labels[i] == 1 {
                        S::one()
                    } else {
                        -S::one()
                    };
                    let p = probs[i];
                    dz[i] = dz[i]
                        + *lambda * d_soft[g] / cast_usize::<S>(stats.counts[g])
                            * sign
                            * p
                            * (S::one() - p);
                }
            }
        }
        LossSpec::Parity { lambda } => {
            if *lambda < S::zero() {
                return Err(Error::Config("lambda must be >= 0".into()));
            }
            if *lambda > S::zero() {
                let stats = group_soft_stats(batch, probs)?;
                let overall = batch
                    .labels
                    .iter()
                    .zip(probs)
                    .map(|(&y, &p)| if y == 1 { p } else { S::one() - p })
                    .sum::<S>()
                    / n_s;
                let penalty: S = stats
                    .soft_acc
                    .iter()
                    .map(|&a| (a - overall).abs())
                    .sum();
                loss = loss + *lambda * penalty;

                // Subgradient of |.| taken as 0 at the kink.
                let signs: Vec<S> = stats
                    .soft_acc
                    .iter()
                    .map(|&a| {
                        if a > overall {
                            S::one()
                        } else if a < overall {
                            -S::one()
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                let sign_sum: S = signs.iter().copied().sum();
                for i in 0..n {
                    let g = batch.groups[i];
                    let dq = signs[g] / cast_usize::<S>(stats.counts[g]) - sign_sum / n_s;
                    if dq == S::zero() {
                        continue;
                    }
                    let sign = if batch.labels[i] == 1 {
                        S::one()
                    } else {
                        -S::one()
                    };
                    let p = probs[i];
                    dz[i] = dz[i] + *lambda * dq * sign * p * (S::one() - p);
                }
            }
        }
        LossSpec::Adversarial { lambda } => {
            if *lambda < S::zero() {
                return Err(Error::Config("lambda must be >= 0".into()));
            }
            let head = params.adversary.as_ref().ok_or_else(|| {
                Error::Config("adversarial loss requires an adversary head".into())
            })?;
            if head.layer.weights.ncols() != batch.n_groups {
                return Err(Error::ShapeMismatch(format!(
                    "adversary head has {} classes but batch has {} groups",
                    head.layer.weights.ncols(),
                    batch.n_groups
                )));
            }
            let trunk = fwd.activations.last().unwrap();
            let mut group_logits = trunk.dot(&head.layer.weights);
            for mut row in group_logits.rows_mut() {
                row.zip_mut_with(&head.layer.bias, |v, &b| *v = *v + b);
            }
            // Row-wise stable softmax cross-entropy against the group label.
            let mut dzg = Array2::<S>::zeros(group_logits.raw_dim());
            let mut head_ce = S::zero();
            for (i, row) in group_logits.rows().into_iter().enumerate() {
                let max = row.iter().copied().fold(S::neg_infinity(), S::max);
                let exps: Vec<S> = row.iter().map(|&z| (z - max).exp()).collect();
                let total: S = exps.iter().copied().sum();
                let g = batch.groups[i];
                head_ce = head_ce - (exps[g] / total).ln();
                for (c, &e) in exps.iter().enumerate() {
                    let softmax = e / total;
                    let target = if c == g { S::one() } else { S::zero() };
                    dzg[[i, c]] = *lambda * (softmax - target) / n_s;
                }
            }
            head_ce = head_ce / n_s;
            loss = loss + *lambda * head_ce;
            group_head = Some((dzg, head.reversal_strength));
        }
    }

    let grads = backward(params, &fwd, &dz, group_head)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok((loss, grads))
}

/// Label-head and group-head cross-entropy values, separately. The
/// adversarial trunk update direction equals the gradient of
/// `label_ce - reversal_strength * lambda * group_ce`, so numeric checks
/// need the two terms individually.
pub fn adversarial_components<S: Scalar>(
    params: &NetworkParams<S>,
    batch: &Batch<'_, S>,
) -> Result<(S, S)> {
    batch.validate()?;
    let head = params
        .adversary
        .as_ref()
        .ok_or_else(|| Error::Config("no adversary head".into()))?;
    let fwd = forward(params, batch.features)?;
    let n_s = cast_usize::<S>(batch.features.nrows());

    let mut label_ce = S::zero();
    for (i, &y) in batch.labels.iter().enumerate() {
        let p = fwd.probabilities[i];
        let y = cast::<S>(y as f64);
        label_ce = label_ce - (y * p.ln() + (S::one() - y) * (S::one() - p).ln());
    }
    label_ce = label_ce / n_s;

    let trunk = fwd.activations.last().unwrap();
    let mut group_logits = trunk.dot(&head.layer.weights);
    for mut row in group_logits.rows_mut() {
        row.zip_mut_with(&head.layer.bias, |v, &b| *v = *v + b);
    }
    let mut group_ce = S::zero();
    for (i, row) in group_logits.rows().into_iter().enumerate() {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let exps: Vec<S> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: S = exps.iter().copied().sum();
        group_ce = group_ce - (exps[batch.groups[i]] / total).ln();
    }
    group_ce = group_ce / n_s;
    Ok((label_ce, group_ce))
}

fn backward<S: Scalar>(
    params: &NetworkParams<S>,
    fwd: &Forward<S>,
    dz_label: &Array1<S>,
    group_head: Option<(Array2<S>, S)>,
) -> Result<GradientSet<S>> {
    let mut grads = GradientSet::zeros_like(params);
    let trunk = fwd.activations.last().unwrap();

    // Clamped logits have zero derivative outside the clamp bound.
    let bound = cast::<S>(LOGIT_CLAMP);
    let dz_label: Array1<S> = dz_label
        .iter()
        .zip(&fwd.logits)
        .map(|(&d, &z)| if z.abs() < bound { d } else { S::zero() })
        .collect();

    grads.output.weights = trunk
        .t()
        .dot(&dz_label)
        .insert_axis(Axis(1));
    grads.output.bias[0] = dz_label.iter().copied().sum();

    // Gradient flowing into the trunk output.
    let mut delta = dz_label
        .view()
        .insert_axis(Axis(1))
        .dot(&params.output.weights.t());

    if let Some((dzg, strength)) = group_head {
        let head = params.adversary.as_ref().expect("head present");
        let g = grads.adversary.as_mut().expect("grads allocated");
        g.weights = trunk.t().dot(&dzg);
        g.bias = dzg.sum_axis(Axis(0));
        // Gradient reversal: the trunk sees the head gradient scaled by
        // -reversal_strength.
        let head_delta = dzg.dot(&head.layer.weights.t());
        delta.zip_mut_with(&head_delta, |d, &h| *d = *d - strength * h);
    }

    for k in (0..params.hidden.len()).rev() {
        let post = &fwd.activations[k + 1];
        // ReLU mask from the post-activation values.
        let mut dz = delta;
        dz.zip_mut_with(post, |d, &a| {
            if a <= S::zero() {
                *d = S::zero();
            }
        });
        grads.hidden[k].weights = fwd.activations[k].t().dot(&dz);
        grads.hidden[k].bias = dz.sum_axis(Axis(0));
        delta = dz.dot(&params.hidden[k].weights.t());
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    Ok(grads)
}

/// One SGD step: params - learning_rate * grads. Pure; returns new params.
pub fn sgd_step<S: Scalar>(
    params: &NetworkParams<S>,
    grads: &GradientSet<S>,
    learning_rate: S,
) -> Result<NetworkParams<S>> {
    if !(learning_rate > S::zero()) {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients".into()));
    }
    let step = |p: &DenseLayer<S>, g: &DenseLayer<S>| -> DenseLayer<S> {
        let mut weights = p.weights.clone();
        weights.zip_mut_with(&g.weights, |w, &gw| *w = *w - learning_rate * gw);
        let mut bias = p.bias.clone();
        bias.zip_mut_with(&g.bias, |b, &gb| *b = *b - learning_rate * gb);
        DenseLayer { weights, bias }
    };
    Ok(NetworkParams {
        hidden: params
            .hidden
            .iter()
            .zip(&grads.hidden)
            .map(|(p, g)| step(p, g))
            .collect(),
        output: step(&params.output, &grads.output),
        adversary: params.adversary.as_ref().map(|a| AdversaryHead {
            layer: match &grads.adversary {
                Some(g) => step(&a.layer, g),
                None => a.layer.clone(),
            },
            reversal_strength: a.reversal_strength,
        }),
        n_features: params.n_features,
        init_seed: params.init_seed,
    })
}

// --- checkpoint format -----------------------------------------------------
//
// Line-oriented text, hex bit patterns for exact round-trips:
//
//   paretofair-net v1 f64
//   features <n> seed <seed>
//   hidden <w0> <w1> ...
//   adversary none | adversary <classes> <strength-hex>
//   tensor <name> <rows> <cols>
//   <rows lines of cols hex words>
//   ...

fn write_tensor<S: Scalar, W: Write>(w: &mut W, name: &str, t: &Array2<S>) -> Result<()> {
    writeln!(w, "tensor {name} {} {}", t.nrows(), t.ncols())?;
    for row in t.rows() {
        let words: Vec<String> = row.iter().map(|v| format!("{:016x}", v.to_bits_u64())).collect();
        writeln!(w, "{}", words.join(" "))?;
    }
    Ok(())
}

fn write_layer<S: Scalar, W: Write>(w: &mut W, name: &str, layer: &DenseLayer<S>) -> Result<()> {
    write_tensor(w, &format!("{name}.w"), &layer.weights)?;
    let bias = layer.bias.view().insert_axis(Axis(0)).to_owned();
    write_tensor(w, &format!("{name}.b"), &bias)
}

/// Write parameters to the versioned text checkpoint format.
pub fn save_checkpoint<S: Scalar>(params: &NetworkParams<S>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "paretofair-net v1 {}", S::NAME)?;
    writeln!(w, "features {} seed {}", params.n_features, params.init_seed)?;
    let widths: Vec<String> = params
        .hidden
        .iter()
        .map(|l| l.weights.ncols().to_string())
        .collect();
    writeln!(w, "hidden {}", widths.join(" "))?;
    match &params.adversary {
        None => writeln!(w, "adversary none")?,
        Some(a) => writeln!(
            w,
            "adversary {} {:016x}",
            a.layer.weights.ncols(),
            a.reversal_strength.to_bits_u64()
        )?,
    }
    for (k, layer) in params.hidden.iter().enumerate() {
        write_layer(&mut w, &format!("hidden{k}"), layer)?;
    }
    write_layer(&mut w, "output", &params.output)?;
    if let Some(a) = &params.adversary {
        write_layer(&mut w, "adversary", &a.layer)?;
    }
    w.flush()?;
    Ok(())
}

struct CheckpointReader<R: BufRead> {
    lines: std::io::Lines<R>,
}

impl<R: BufRead> CheckpointReader<R> {
    fn next_line(&mut self) -> Result<String> {
        self.lines
            .next()
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?
            .map_err(Error::from)
    }

    fn read_tensor<S: Scalar>(&mut self, expect: &str) -> Result<Array2<S>> {
        let header = self.next_line()?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" || parts[1] != expect {
            return Err(Error::Checkpoint(format!(
                "expected tensor {expect}, found '{header}'"
            )));
        }
        let rows: usize = parts[2]
            .parse()
            .map_err(|_| Error::Checkpoint("bad row count".into()))?;
        let cols: usize = parts[3]
            .parse()
            .map_err(|_| Error::Checkpoint("bad col count".into()))?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?;
            for word in line.split_whitespace() {
                let bits = u64::from_str_radix(word, 16)
                    .map_err(|_| Error::Checkpoint(format!("bad hex word '{word}'")))?;
                data.push(S::from_bits_u64(bits));
            }
        }
        if data.len() != rows * cols {
            return Err(Error::Checkpoint(format!(
                "tensor {expect}: expected {} values, found {}",
                rows * cols,
                data.len()
            )));
        }
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {expect}: {e}")))
    }

    fn read_layer<S: Scalar>(&mut self, name: &str) -> Result<DenseLayer<S>> {
        let weights = self.read_tensor::<S>(&format!("{name}.w"))?;
        let bias2 = self.read_tensor::<S>(&format!("{name}.b"))?;
        Ok(DenseLayer {
            weights,
            bias: bias2.index_axis_move(Axis(0), 0),
        })
    }
}

/// Load a checkpoint saved by [`save_checkpoint`]. The scalar type must
/// match the one recorded in the header.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<NetworkParams<S>> {
    let mut r = CheckpointReader {
        lines: BufReader::new(File::open(path)?).lines(),
    };
    let header = r.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "paretofair-net" || parts[1] != "v1" {
        return Err(Error::Checkpoint(format!("unrecognized header '{header}'")));
    }
    if parts[2] != S::NAME {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} but {} was requested",
            parts[2],
            S::NAME
        )));
    }

    let meta = r.next_line()?;
    let parts: Vec<&str> = meta.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "features" || parts[2] != "seed" {
        return Err(Error::Checkpoint(format!("bad metadata line '{meta}'")));
    }
    let n_features: usize = parts[1]
        .parse()
        .map_err(|_| Error::Checkpoint("bad feature count".into()))?;
    let init_seed: u64 = parts[3]
        .parse()
        .map_err(|_| Error::Checkpoint("bad seed".into()))?;

    let hidden_line = r.next_line()?;
    let hidden_widths: Vec<usize> = hidden_line
        .strip_prefix("hidden")
        .ok_or_else(|| Error::Checkpoint(format!("bad hidden line '{hidden_line}'")))?
        .split_whitespace()
        .map(|s| {
            s.parse()
                .map_err(|_| Error::Checkpoint("bad hidden width".into()))
        })
        .collect::<Result<_>>()?;

    let adv_line = r.next_line()?;
    let adv_parts: Vec<&str> = adv_line.split_whitespace().collect();
    let adversary_meta = match adv_parts.as_slice() {
        ["adversary", "none"] => None,
        ["adversary", classes, strength] => {
            let classes: usize = classes
                .parse()
                .map_err(|_| Error::Checkpoint("bad adversary class count".into()))?;
            let bits = u64::from_str_radix(strength, 16)
                .map_err(|_| Error::Checkpoint("bad adversary strength".into()))?;
            Some((classes, S::from_bits_u64(bits)))
        }
        _ => return Err(Error::Checkpoint(format!("bad adversary line '{adv_line}'"))),
    };

    let mut hidden = Vec::with_capacity(hidden_widths.len());
    for k in 0..hidden_widths.len() {
        hidden.push(r.read_layer::<S>(&format!("hidden{k}"))?);
    }
    let output = r.read_layer::<S>("output")?;
    let adversary = match adversary_meta {
        None => None,
        Some((classes, strength)) => {
            let layer = r.read_layer::<S>("adversary")?;
            if layer.weights.ncols() != classes {
                return Err(Error::Checkpoint("adversary shape mismatch".into()));
            }
            Some(AdversaryHead {
                layer,
                reversal_strength: strength,
            })
        }
    };

    let params = NetworkParams {
        hidden,
        output,
        adversary,
        n_features,
        init_seed,
    };
    // Shape chain check.
    let mut width = params.n_features;
    for l in &params.hidden {
        if l.weights.nrows() != width {
            return Err(Error::Checkpoint("layer shapes do not chain".into()));
        }
        width = l.weights.ncols();
    }
    if params.output.weights.nrows() != width || params.output.weights.ncols() != 1 {
        return Err(Error::Checkpoint("output shape mismatch".into()));
    }
    Ok(params)
}
