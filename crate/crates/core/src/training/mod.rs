//! Analytic backpropagation, the finite-difference oracle, item-grouped
//! batching and the optimization loop.

mod backward;
mod batches;
mod gradcheck;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backward::backward;
pub use batches::{make_batches, Sample};
pub use gradcheck::{compare_gradients, finite_difference_grad, relative_error, GradCheckReport};

use crate::dataset::Corpus;
use crate::network::{
    demographic_weights, forward, ForwardTrace, Gradients, ModelConfig, ModelParams, NetworkError,
    Pass,
};
use crate::objective::{
    total_loss, BatchTargets, DisagreementMode, LossBreakdown, LossWeights, ObjectiveError,
};

/// Sub-seed offsets; every random stream derives from `TrainConfig::seed`.
pub const INIT_SEED_OFFSET: u64 = 1;
pub const BATCH_SEED_OFFSET: u64 = 2;
pub const DROPOUT_SEED_OFFSET: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("trace mismatch: {0}")]
    TraceMismatch(String),
    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model config does not fit the corpus: {0}")]
    ConfigMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub items_per_batch: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Compare analytic and numeric gradients on the first batch.
    pub grad_check: bool,
    /// Train through the differentiable disagreement surrogate.
    pub dis_surrogate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            items_per_batch: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 0,
            loss_weights: LossWeights::default(),
            grad_check: false,
            dis_surrogate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.items_per_batch == 0 {
            return Err(TrainError::InvalidConfig(
                "items_per_batch must be >= 1".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        self.loss_weights.validate()?;
        Ok(())
    }

    pub fn disagreement_mode(&self) -> DisagreementMode {
        if self.dis_surrogate {
            DisagreementMode::Surrogate
        } else {
            DisagreementMode::Exact
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub final_params: ModelParams,
    pub optimizer: Optimizer,
    pub wall_clock_seconds: f64,
    pub grad_check: Option<GradCheckReport>,
}

impl TrainReport {
    /// One JSON object per epoch.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes") + "\n")
            .collect()
    }

    pub fn final_alpha(&self) -> Vec<f64> {
        demographic_weights(&self.final_params.alpha_raw)
    }
}

pub fn init_params(model_config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(INIT_SEED_OFFSET));
    Ok(ModelParams::init(model_config, &mut rng)?)
}

/// Supervision for `samples`; `behaviors` are per-annotator label
/// distributions of the training corpus.
pub fn batch_targets(samples: &[Sample], behaviors: &[Vec<f64>]) -> BatchTargets {
    BatchTargets {
        golds: samples.iter().map(|s| s.label).collect(),
        behaviors: samples
            .iter()
            .map(|s| behaviors[s.annotator].clone())
            .collect(),
        groups: samples.iter().map(|s| s.group).collect(),
    }
}

/// Forward every sample. With `dropout_rng` the passes run in training mode.
pub fn forward_batch(
    corpus: &Corpus,
    samples: &[Sample],
    params: &ModelParams,
    config: &ModelConfig,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<ForwardTrace>> {
    samples
        .iter()
        .map(|s| {
            let pass = match dropout_rng.as_deref_mut() {
                Some(rng) => Pass::Train(rng),
                None => Pass::Eval,
            };
            Ok(forward(
                &corpus.items()[s.item].features,
                &corpus.annotators()[s.annotator].values,
                params,
                config,
                pass,
            )?)
        })
        .collect()
}

/// Batch loss with dropout masks frozen to those recorded in `traces`
/// (deterministic; the function the finite-difference oracle probes).
pub fn replay_loss(
    traces: &[ForwardTrace],
    targets: &BatchTargets,
    params: &ModelParams,
    config: &ModelConfig,
    weights: &LossWeights,
    mode: DisagreementMode,
) -> Result<LossBreakdown> {
    let replayed = traces
        .iter()
        .map(|t| {
            let pass = match &t.transformed.dropout_mask {
                Some(mask) => Pass::Replay(mask),
                None => Pass::Eval,
            };
            forward(&t.features, &t.categories, params, config, pass)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(total_loss(&replayed, targets, params, weights, mode)?)
}

/// Analytic vs central-difference gradients on one recorded batch.
pub fn gradient_check(
    traces: &[ForwardTrace],
    targets: &BatchTargets,
    params: &ModelParams,
    config: &ModelConfig,
    weights: &LossWeights,
    mode: DisagreementMode,
    epsilon: f64,
) -> Result<GradCheckReport> {
    let analytic = backward(traces, targets, params, weights, config, mode)?;
    let numeric = finite_difference_grad(
        |p| {
            replay_loss(traces, targets, p, config, weights, mode)
                .map(|l| l.total)
                .unwrap_or(f64::NAN)
        },
        params,
        epsilon,
    );
    Ok(compare_gradients(&analytic, &numeric))
}

fn check_fit(corpus: &Corpus, config: &ModelConfig) -> Result<()> {
    config.validate()?;
    if corpus.feature_dim() != config.feature_dim {
        return Err(TrainError::ConfigMismatch(format!(
            "corpus features have width {}, model expects {}",
            corpus.feature_dim(),
            config.feature_dim
        )));
    }
    if corpus.num_classes() != config.num_classes {
        return Err(TrainError::ConfigMismatch(format!(
            "corpus has {} classes, model expects {}",
            corpus.num_classes(),
            config.num_classes
        )));
    }
    if corpus.schema().axis_sizes() != config.axis_sizes {
        return Err(TrainError::ConfigMismatch("demographic axes differ".into()));
    }
    Ok(())
}

struct AdamState {
    m: Gradients,
    v: Gradients,
    step: i32,
}

fn apply_update(
    params: &mut ModelParams,
    grads: &Gradients,
    lr: f64,
    optimizer: Optimizer,
    adam: &mut Option<AdamState>,
) {
    match optimizer {
        Optimizer::Sgd => {
            for (w, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                for (wi, gi) in w.data.iter_mut().zip(g.data) {
                    *wi -= lr * gi;
                }
            }
        }
        Optimizer::Adam { beta1, beta2, eps } => {
            let state = adam.get_or_insert_with(|| AdamState {
                m: params.zeros_like(),
                v: params.zeros_like(),
                step: 0,
            });
            state.step += 1;
            let c1 = 1.0 - beta1.powi(state.step);
            let c2 = 1.0 - beta2.powi(state.step);
            let tensors = params
                .tensors_mut()
                .into_iter()
                .zip(grads.tensors())
                .zip(state.m.tensors_mut().into_iter().zip(state.v.tensors_mut()));
            for ((w, g), (m, v)) in tensors {
                for (((wi, gi), mi), vi) in w
                    .data
                    .iter_mut()
                    .zip(g.data)
                    .zip(m.data.iter_mut())
                    .zip(v.data.iter_mut())
                {
                    *mi = beta1 * *mi + (1.0 - beta1) * gi;
                    *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                    let m_hat = *mi / c1;
                    let v_hat = *vi / c2;
                    *wi -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Trains from the seeded initialization.
pub fn train(
    corpus: &Corpus,
    config: &TrainConfig,
    model_config: &ModelConfig,
) -> Result<TrainReport> {
    let params = init_params(model_config, config.seed)?;
    train_from(corpus, config, model_config, params)
}

/// Runs `epochs × batches` of forward, backward and update starting from
/// `params`. Logged losses use the exact (argmax) disagreement term; the
/// update uses the surrogate when `dis_surrogate` is set.
pub fn train_from(
    corpus: &Corpus,
    config: &TrainConfig,
    model_config: &ModelConfig,
    mut params: ModelParams,
) -> Result<TrainReport> {
    config.validate()?;
    check_fit(corpus, model_config)?;
    params
        .check_shapes(model_config)
        .map_err(|e| TrainError::ConfigMismatch(e.to_string()))?;
    let start = Instant::now();
    let behaviors = corpus.annotator_behaviors();
    let mode = config.disagreement_mode();
    let weights = &config.loss_weights;
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(DROPOUT_SEED_OFFSET));
    let mut adam = None;
    let mut grad_check = None;
    let mut records = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let batches = make_batches(
            corpus,
            config.items_per_batch,
            config.seed.wrapping_add(BATCH_SEED_OFFSET),
            epoch as u64,
        );
        let mut sum = LossBreakdown::default();
        for (b, samples) in batches.iter().enumerate() {
            let traces = forward_batch(
                corpus,
                samples,
                &params,
                model_config,
                Some(&mut dropout_rng),
            )?;
            let targets = batch_targets(samples, &behaviors);
            let logged = total_loss(&traces, &targets, &params, weights, DisagreementMode::Exact)?;
            let grads = backward(&traces, &targets, &params, weights, model_config, mode)?;
            if !logged.is_finite() || !grads.all_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, batch: b });
            }
            if config.grad_check && grad_check.is_none() {
                grad_check = Some(gradient_check(
                    &traces,
                    &targets,
                    &params,
                    model_config,
                    weights,
                    mode,
                    1e-5,
                )?);
            }
            apply_update(
                &mut params,
                &grads,
                config.learning_rate,
                config.optimizer,
                &mut adam,
            );
            sum.l_y += logged.l_y;
            sum.l_yi += logged.l_yi;
            sum.l_ya += logged.l_ya;
            sum.l_dis += logged.l_dis;
            sum.l_reg += logged.l_reg;
        }
        let n = batches.len().max(1) as f64;
        let losses = LossBreakdown::combine(
            sum.l_y / n,
            sum.l_yi / n,
            sum.l_ya / n,
            sum.l_dis / n,
            sum.l_reg / n,
            weights,
        );
        let alpha = demographic_weights(&params.alpha_raw);
        log::debug!("epoch {epoch}: total {:.6} alpha {alpha:?}", losses.total);
        records.push(EpochRecord {
            epoch,
            losses,
            alpha,
        });
    }

    Ok(TrainReport {
        epochs: records,
        final_params: params,
        optimizer: config.optimizer,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        grad_check,
    })
}

/// Eval-mode per-annotator distributions `p_yI` for every annotation of
/// `corpus`, in annotation order.
pub fn predict(
    corpus: &Corpus,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    corpus
        .annotations()
        .iter()
        .map(|a| {
            let trace = forward(
                &corpus.items()[a.item].features,
                &corpus.annotators()[a.annotator].values,
                params,
                config,
                Pass::Eval,
            )?;
            Ok(trace.decoded.p_yi)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth::{synth_generate, SynthConfig};
    use crate::dataset::DemographicSchema;
    use crate::network::{Activation, Fusion};

    fn corpus(n_axes: usize, k: usize) -> Corpus {
        let mut cfg = SynthConfig::new(DemographicSchema::uniform(n_axes, 3).unwrap(), 5);
        cfg.n_items = 6;
        cfg.n_annotators = 5;
        cfg.num_classes = k;
        cfg.feature_dim = 4;
        cfg.noise = 0.3;
        synth_generate(&cfg).unwrap()
    }

    fn model(c: &Corpus, activation: Activation, fusion: Fusion, dropout_rate: f64) -> ModelConfig {
        ModelConfig {
            d_a: 3,
            d_i: 3,
            d_int: 2,
            d_p: 4,
            num_classes: c.num_classes(),
            feature_dim: c.feature_dim(),
            axis_sizes: c.schema().axis_sizes(),
            activation,
            fusion,
            dropout_rate,
            n_annotators: c.annotators().len(),
        }
    }

    fn weights() -> LossWeights {
        LossWeights {
            gamma_i: 1.0,
            gamma_a: 0.7,
            lambda_dis: 0.5,
            l1_coeff: 1e-3,
            l2_coeff: 1e-2,
        }
    }

    fn check(
        activation: Activation,
        fusion: Fusion,
        dropout: f64,
        mode: DisagreementMode,
    ) -> GradCheckReport {
        let c = corpus(3, 3);
        let m = model(&c, activation, fusion, dropout);
        let mut params = init_params(&m, 11).unwrap();
        params.alpha_raw = vec![0.3, -0.4, 0.1];
        let samples = make_batches(&c, 3, 0, 0).remove(0);
        let targets = batch_targets(&samples, &c.annotator_behaviors());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let traces = forward_batch(&c, &samples, &params, &m, Some(&mut rng)).unwrap();
        gradient_check(&traces, &targets, &params, &m, &weights(), mode, 1e-5).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for activation in [
            Activation::Relu,
            Activation::Tanh,
            Activation::Softsign,
            Activation::Elu,
        ] {
            for fusion in [Fusion::Concat, Fusion::Sum] {
                for mode in [DisagreementMode::Surrogate, DisagreementMode::Exact] {
                    let report = check(activation, fusion, 0.0, mode);
                    assert!(
                        report.passes(1e-4),
                        "{activation} {fusion} {mode:?}: {report:?}"
                    );
                    assert!(report.per_family.contains_key("alpha_raw"));
                }
            }
        }
    }

    #[test]
    fn gradients_match_with_replayed_dropout() {
        for fusion in [Fusion::Concat, Fusion::Sum] {
            let report = check(Activation::Tanh, fusion, 0.3, DisagreementMode::Surrogate);
            assert!(report.passes(1e-4), "{report:?}");
        }
    }

    #[test]
    fn single_axis_alpha_gradient_is_zero() {
        let c = corpus(1, 2);
        let m = model(&c, Activation::Tanh, Fusion::Concat, 0.0);
        let params = init_params(&m, 3).unwrap();
        let samples = make_batches(&c, 6, 0, 0).remove(0);
        let targets = batch_targets(&samples, &c.annotator_behaviors());
        let traces = forward_batch(&c, &samples, &params, &m, None).unwrap();
        let g = backward(
            &traces,
            &targets,
            &params,
            &weights(),
            &m,
            DisagreementMode::Surrogate,
        )
        .unwrap();
        assert_eq!(g.alpha_raw, vec![0.0]);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let c = corpus(2, 2);
        let m = model(&c, Activation::Relu, Fusion::Concat, 0.2);
        let config = TrainConfig {
            epochs: 3,
            learning_rate: 0.0,
            items_per_batch: 2,
            ..TrainConfig::default()
        };
        let start = init_params(&m, config.seed).unwrap();
        let report = train(&c, &config, &m).unwrap();
        assert_eq!(report.final_params, start);
        assert_eq!(report.epochs.len(), 3);
    }

    #[test]
    fn single_sample_is_memorized() {
        let c = corpus(2, 2);
        let keep_items: Vec<bool> = (0..c.items().len()).map(|m| m == 0).collect();
        let keep_annot: Vec<bool> = (0..c.annotators().len())
            .map(|n| {
                c.annotations()
                    .iter()
                    .find(|a| a.item == 0)
                    .map(|a| a.annotator)
                    == Some(n)
            })
            .collect();
        let one = c.subset(&keep_items, &keep_annot).unwrap();
        assert_eq!(one.annotations().len(), 1);
        let m = model(&one, Activation::Tanh, Fusion::Concat, 0.0);
        let config = TrainConfig {
            epochs: 300,
            learning_rate: 0.05,
            optimizer: Optimizer::Sgd,
            loss_weights: LossWeights::aggregate_only(),
            ..TrainConfig::default()
        };
        let report = train(&one, &config, &m).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|r| r.losses.l_y).collect();
        assert!(
            losses.windows(2).all(|w| w[1] <= w[0] + 1e-12),
            "{losses:?}"
        );
        assert!(*losses.last().unwrap() < 0.01, "{:?}", losses.last());
    }

    #[test]
    fn training_is_deterministic() {
        let c = corpus(3, 3);
        let m = model(&c, Activation::Relu, Fusion::Concat, 0.2);
        let config = TrainConfig {
            epochs: 4,
            items_per_batch: 2,
            seed: 7,
            grad_check: true,
            ..TrainConfig::default()
        };
        let a = train(&c, &config, &m).unwrap();
        let b = train(&c, &config, &m).unwrap();
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.to_json_lines(), b.to_json_lines());
        assert!(a.grad_check.is_some());
        let other = train(&c, &TrainConfig { seed: 8, ..config }, &m).unwrap();
        assert_ne!(a.final_params, other.final_params);
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let c = corpus(2, 2);
        let mut m = model(&c, Activation::Relu, Fusion::Concat, 0.0);
        m.feature_dim += 1;
        assert!(matches!(
            train(&c, &TrainConfig::default(), &m),
            Err(TrainError::ConfigMismatch(_))
        ));
    }
}
