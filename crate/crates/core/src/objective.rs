//! Composite training objective: aggregate NLL, per-annotator and
//! annotator-behavior KL terms, the item-level disagreement penalty, and
//! ℓ1/ℓ2 regularization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::linalg::{argmax, softmax_backward};
use crate::network::{ForwardTrace, ModelParams};

/// Probabilities are floored here before any log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ObjectiveError {
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid loss weight {name} = {value}")]
    InvalidWeight { name: &'static str, value: f64 },
}

pub type Result<T, E = ObjectiveError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma_i: f64,
    pub gamma_a: f64,
    pub lambda_dis: f64,
    pub l1_coeff: f64,
    pub l2_coeff: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_i: 1.0,
            gamma_a: 0.5,
            lambda_dis: 0.5,
            l1_coeff: 0.0,
            l2_coeff: 1e-5,
        }
    }
}

impl LossWeights {
    /// Only the aggregate NLL term.
    pub fn aggregate_only() -> Self {
        Self {
            gamma_i: 0.0,
            gamma_a: 0.0,
            lambda_dis: 0.0,
            l1_coeff: 0.0,
            l2_coeff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("gamma_i", self.gamma_i),
            ("gamma_a", self.gamma_a),
            ("lambda_dis", self.lambda_dis),
            ("l1_coeff", self.l1_coeff),
            ("l2_coeff", self.l2_coeff),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(ObjectiveError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Which form of the disagreement penalty enters the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisagreementMode {
    /// Variance of argmax predictions; carries no gradient.
    Exact,
    /// Variance of the expected class index `Σ_k k·p_k`; differentiable.
    Surrogate,
}

/// Per-sample supervision for one batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchTargets {
    pub golds: Vec<usize>,
    /// Each annotator's normalized label histogram on the training split.
    pub behaviors: Vec<Vec<f64>>,
    /// Item group of each sample.
    pub groups: Vec<usize>,
}

impl BatchTargets {
    pub fn len(&self) -> usize {
        self.golds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.golds.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "L_y")]
    pub l_y: f64,
    #[serde(rename = "L_yi")]
    pub l_yi: f64,
    #[serde(rename = "L_ya")]
    pub l_ya: f64,
    #[serde(rename = "L_dis")]
    pub l_dis: f64,
    #[serde(rename = "L_reg")]
    pub l_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(
        l_y: f64,
        l_yi: f64,
        l_ya: f64,
        l_dis: f64,
        l_reg: f64,
        w: &LossWeights,
    ) -> Self {
        Self {
            l_y,
            l_yi,
            l_ya,
            l_dis,
            l_reg,
            total: l_y + w.gamma_i * l_yi + w.gamma_a * l_ya + w.lambda_dis * l_dis + l_reg,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.l_y, self.l_yi, self.l_ya, self.l_dis, self.l_reg, self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// `-ln p[gold]` with the probability floored.
pub fn nll_aggregate(p_y: &[f64], gold: usize) -> Result<f64> {
    let p = p_y.get(gold).ok_or(ObjectiveError::LabelOutOfRange {
        label: gold,
        num_classes: p_y.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// `KL(target ‖ p)` with `0·ln 0 = 0` and `p` floored.
pub fn kl_divergence(target: &[f64], p: &[f64]) -> Result<f64> {
    if target.len() != p.len() {
        return Err(ObjectiveError::DimensionMismatch {
            what: "KL operands",
            expected: target.len(),
            found: p.len(),
        });
    }
    Ok(target
        .iter()
        .zip(p)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &q)| t * (t.ln() - q.max(PROB_FLOOR).ln()))
        .sum())
}

/// Per-annotator term: KL from the (one-hot) gold target to `p_yI`.
pub fn kl_per_annotator(target: &[f64], p_yi: &[f64]) -> Result<f64> {
    kl_divergence(target, p_yi)
}

/// Annotator-behavior term: KL from the annotator's label histogram to `p_yA`.
pub fn kl_annotator_behavior(target_behavior: &[f64], p_ya: &[f64]) -> Result<f64> {
    kl_divergence(target_behavior, p_ya)
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Sample indices per group, groups ordered by id.
fn item_groups(groups: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (s, &g) in groups.iter().enumerate() {
        out.entry(g).or_default().push(s);
    }
    out
}

/// Mean over item groups with at least two samples of
/// `|Var(gold indices) − Var(argmax predictions)|` (population variances).
/// Zero when no group qualifies.
pub fn disagreement_loss<P: AsRef<[f64]>>(preds: &[P], golds: &[usize], groups: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for members in item_groups(groups).values().filter(|m| m.len() >= 2) {
        let actual: Vec<f64> = members.iter().map(|&s| golds[s] as f64).collect();
        let predicted: Vec<f64> = members
            .iter()
            .map(|&s| argmax(preds[s].as_ref()) as f64)
            .collect();
        total += (population_variance(&actual) - population_variance(&predicted)).abs();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn expected_index(p: &[f64]) -> f64 {
    p.iter().enumerate().map(|(k, pk)| k as f64 * pk).sum()
}

/// Differentiable stand-in for [`disagreement_loss`]: predictions enter as
/// the expected class index instead of the argmax.
pub fn disagreement_surrogate<P: AsRef<[f64]>>(
    preds: &[P],
    golds: &[usize],
    groups: &[usize],
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for members in item_groups(groups).values().filter(|m| m.len() >= 2) {
        let actual: Vec<f64> = members.iter().map(|&s| golds[s] as f64).collect();
        let expected: Vec<f64> = members
            .iter()
            .map(|&s| expected_index(preds[s].as_ref()))
            .collect();
        total += (population_variance(&actual) - population_variance(&expected)).abs();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// `l1·Σ|w| + l2·Σw²` over every tensor except `alpha_raw`.
pub fn regularization(params: &ModelParams, weights: &LossWeights) -> f64 {
    if weights.l1_coeff == 0.0 && weights.l2_coeff == 0.0 {
        return 0.0;
    }
    let (mut abs, mut sq) = (0.0, 0.0);
    for t in params.tensors().iter().filter(|t| t.name != "alpha_raw") {
        for &w in t.data {
            abs += w.abs();
            sq += w * w;
        }
    }
    weights.l1_coeff * abs + weights.l2_coeff * sq
}

fn check_targets(traces: &[ForwardTrace], targets: &BatchTargets) -> Result<()> {
    for (what, found) in [
        ("golds", targets.golds.len()),
        ("behaviors", targets.behaviors.len()),
        ("groups", targets.groups.len()),
    ] {
        if found != traces.len() {
            return Err(ObjectiveError::DimensionMismatch {
                what,
                expected: traces.len(),
                found,
            });
        }
    }
    Ok(())
}

/// Loss components for a batch; each data term is a mean over samples.
pub fn total_loss(
    traces: &[ForwardTrace],
    targets: &BatchTargets,
    params: &ModelParams,
    weights: &LossWeights,
    mode: DisagreementMode,
) -> Result<LossBreakdown> {
    check_targets(traces, targets)?;
    let n = traces.len().max(1) as f64;
    let (mut l_y, mut l_yi, mut l_ya) = (0.0, 0.0, 0.0);
    for (trace, (&gold, behavior)) in traces
        .iter()
        .zip(targets.golds.iter().zip(&targets.behaviors))
    {
        let d = &trace.decoded;
        l_y += nll_aggregate(&d.p_y, gold)?;
        if gold >= d.p_yi.len() {
            return Err(ObjectiveError::LabelOutOfRange {
                label: gold,
                num_classes: d.p_yi.len(),
            });
        }
        l_yi += kl_per_annotator(&one_hot(gold, d.p_yi.len()), &d.p_yi)?;
        l_ya += kl_annotator_behavior(behavior, &d.p_ya)?;
    }
    let preds: Vec<&[f64]> = traces.iter().map(|t| t.decoded.p_yi.as_slice()).collect();
    let l_dis = match mode {
        DisagreementMode::Exact => disagreement_loss(&preds, &targets.golds, &targets.groups),
        DisagreementMode::Surrogate => {
            disagreement_surrogate(&preds, &targets.golds, &targets.groups)
        }
    };
    Ok(LossBreakdown::combine(
        l_y / n,
        l_yi / n,
        l_ya / n,
        l_dis,
        regularization(params, weights),
        weights,
    ))
}

/// Gradient of the batch loss with respect to the three heads' logits of
/// one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradients {
    pub d_logits_y: Vec<f64>,
    pub d_logits_yi: Vec<f64>,
    pub d_logits_ya: Vec<f64>,
}

/// `∂/∂p` of `-Σ t_k ln max(p_k, floor)`, scaled.
fn cross_entropy_prob_grad(target: &[f64], p: &[f64], scale: f64) -> Vec<f64> {
    target
        .iter()
        .zip(p)
        .map(|(&t, &q)| {
            if t > 0.0 && q > PROB_FLOOR {
                -scale * t / q
            } else {
                0.0
            }
        })
        .collect()
}

/// Logit gradients of the weighted data terms (regularization excluded).
/// In [`DisagreementMode::Exact`] the disagreement term contributes nothing.
pub fn logit_gradients(
    traces: &[ForwardTrace],
    targets: &BatchTargets,
    weights: &LossWeights,
    mode: DisagreementMode,
) -> Result<Vec<LogitGradients>> {
    check_targets(traces, targets)?;
    let n = traces.len().max(1) as f64;

    let mut dp_yi: Vec<Vec<f64>> = Vec::with_capacity(traces.len());
    let mut out = Vec::with_capacity(traces.len());
    for (trace, (&gold, behavior)) in traces
        .iter()
        .zip(targets.golds.iter().zip(&targets.behaviors))
    {
        let d = &trace.decoded;
        let k = d.p_y.len();
        if gold >= k {
            return Err(ObjectiveError::LabelOutOfRange {
                label: gold,
                num_classes: k,
            });
        }
        let target = one_hot(gold, k);
        let dp_y = cross_entropy_prob_grad(&target, &d.p_y, 1.0 / n);
        let dp_ya = cross_entropy_prob_grad(behavior, &d.p_ya, weights.gamma_a / n);
        dp_yi.push(cross_entropy_prob_grad(
            &target,
            &d.p_yi,
            weights.gamma_i / n,
        ));
        out.push(LogitGradients {
            d_logits_y: softmax_backward(&d.p_y, &dp_y),
            d_logits_yi: Vec::new(),
            d_logits_ya: softmax_backward(&d.p_ya, &dp_ya),
        });
    }

    if mode == DisagreementMode::Surrogate && weights.lambda_dis != 0.0 {
        let groups = item_groups(&targets.groups);
        let eligible: Vec<&Vec<usize>> = groups.values().filter(|m| m.len() >= 2).collect();
        let scale = weights.lambda_dis / eligible.len().max(1) as f64;
        for members in eligible {
            let m = members.len() as f64;
            let actual: Vec<f64> = members.iter().map(|&s| targets.golds[s] as f64).collect();
            let expected: Vec<f64> = members
                .iter()
                .map(|&s| expected_index(&traces[s].decoded.p_yi))
                .collect();
            let gap = population_variance(&expected) - population_variance(&actual);
            let sign = if gap > 0.0 {
                1.0
            } else if gap < 0.0 {
                -1.0
            } else {
                0.0
            };
            let mean = expected.iter().sum::<f64>() / m;
            for (&s, &e) in members.iter().zip(&expected) {
                let d_e = scale * sign * 2.0 * (e - mean) / m;
                for (k, g) in dp_yi[s].iter_mut().enumerate() {
                    *g += d_e * k as f64;
                }
            }
        }
    }

    for ((grads, trace), dp) in out.iter_mut().zip(traces).zip(&dp_yi) {
        grads.d_logits_yi = softmax_backward(&trace.decoded.p_yi, dp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Activation, Fusion, Matrix, ModelConfig};
    use proptest::prelude::*;

    #[test]
    fn nll_cases() {
        assert_eq!(nll_aggregate(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert!((nll_aggregate(&[1.0 / 3.0; 3], 2).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!((nll_aggregate(&[0.7, 0.2, 0.1], 1).unwrap() - 1.6094379124341003).abs() < 1e-12);
        assert!((nll_aggregate(&[1.0, 0.0], 1).unwrap() - (-(1e-12f64).ln())).abs() < 1e-9);
        assert_eq!(
            nll_aggregate(&[0.5, 0.5], 2),
            Err(ObjectiveError::LabelOutOfRange {
                label: 2,
                num_classes: 2
            })
        );
    }

    #[test]
    fn kl_cases() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(kl_per_annotator(&p, &p).unwrap(), 0.0);
        let v = kl_per_annotator(&[0.5, 0.5], &[0.9, 0.1]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.5108256237659907).abs() < 1e-12);

        let behavior = [2.0 / 3.0, 1.0 / 3.0];
        let v = kl_annotator_behavior(&behavior, &[0.5, 0.5]).unwrap();
        let expected = (2.0 / 3.0) * (4f64 / 3.0).ln() + (1.0 / 3.0) * (2f64 / 3.0).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.0566).abs() < 1e-4);

        let v = kl_annotator_behavior(&[1.0, 0.0, 0.0], &[0.6, 0.3, 0.1]).unwrap();
        assert!((v + 0.6f64.ln()).abs() < 1e-15);
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn disagreement_cases() {
        // golds [0,1] on one item, both predicted 0: |0.25 - 0|.
        let preds = [vec![0.9, 0.1], vec![0.6, 0.4]];
        assert_eq!(disagreement_loss(&preds, &[0, 1], &[7, 7]), 0.25);
        // argmax equal to gold -> 0.
        let preds = [vec![0.9, 0.1], vec![0.4, 0.6], vec![0.2, 0.8]];
        assert_eq!(disagreement_loss(&preds, &[0, 1, 1], &[0, 0, 1]), 0.0);
        // singletons skipped.
        let preds = [vec![0.9, 0.1], vec![0.6, 0.4]];
        assert_eq!(disagreement_loss(&preds, &[0, 1], &[0, 1]), 0.0);
        // ties resolve to class 0.
        let preds = [vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(disagreement_loss(&preds, &[0, 1], &[0, 0]), 0.25);
    }

    #[test]
    fn surrogate_matches_expected_index_variance() {
        let preds = [vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        // expected indices {0, 2}: var 1; golds {1, 1}: var 0.
        assert_eq!(disagreement_surrogate(&preds, &[1, 1], &[3, 3]), 1.0);
    }

    fn matrix_params() -> (ModelConfig, ModelParams) {
        let config = ModelConfig {
            d_a: 1,
            d_i: 1,
            d_int: 1,
            d_p: 1,
            num_classes: 2,
            feature_dim: 2,
            axis_sizes: vec![1],
            activation: Activation::Relu,
            fusion: Fusion::Concat,
            dropout_rate: 0.0,
            n_annotators: 1,
        };
        let mut p = ModelParams::zeros(&config);
        p.w_item = Matrix::from_rows(&[&[1.0, -2.0]]);
        p.alpha_raw = vec![5.0];
        (config, p)
    }

    #[test]
    fn regularization_cases() {
        let (_, p) = matrix_params();
        let w = |l1, l2| LossWeights {
            l1_coeff: l1,
            l2_coeff: l2,
            ..LossWeights::aggregate_only()
        };
        assert_eq!(regularization(&p, &w(0.0, 0.0)), 0.0);
        assert_eq!(regularization(&p, &w(1.0, 0.0)), 3.0);
        assert_eq!(regularization(&p, &w(0.0, 0.5)), 2.5);
    }

    proptest! {
        #[test]
        fn kl_to_one_hot_is_cross_entropy(
            raw in prop::collection::vec(0.001f64..1.0, 2..6),
            pick in 0usize..6,
        ) {
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let gold = pick % p.len();
            let kl = kl_per_annotator(&one_hot(gold, p.len()), &p).unwrap();
            prop_assert!((kl - nll_aggregate(&p, gold).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn disagreement_order_and_label_invariant(
            samples in prop::collection::vec((0usize..3, 0usize..4, 0.0f64..1.0, 0.0f64..1.0), 1..20),
            relabel in 100usize..200,
        ) {
            let preds: Vec<Vec<f64>> = samples.iter().map(|&(_, _, a, b)| vec![a, b, 1.0 - a.min(b)]).collect();
            let golds: Vec<usize> = samples.iter().map(|s| s.0).collect();
            let groups: Vec<usize> = samples.iter().map(|s| s.1).collect();
            let base = disagreement_loss(&preds, &golds, &groups);

            let rev = |v: &[usize]| v.iter().rev().copied().collect::<Vec<_>>();
            let preds_rev: Vec<Vec<f64>> = preds.iter().rev().cloned().collect();
            let reordered = disagreement_loss(&preds_rev, &rev(&golds), &rev(&groups));
            prop_assert!((base - reordered).abs() < 1e-12);

            let renamed: Vec<usize> = groups.iter().map(|g| relabel - g * 7).collect();
            prop_assert!((base - disagreement_loss(&preds, &golds, &renamed)).abs() < 1e-12);

            let k = 3.0;
            prop_assert!(base >= 0.0 && base <= ((k - 1.0) / 2.0f64).powi(2) + 1e-12);
        }
    }
}
