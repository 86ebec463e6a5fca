use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::linalg::{axpy, softmax};
use super::{Activation, Fusion, ModelConfig, ModelParams, NetworkError, Result};

/// How a forward pass treats dropout.
pub enum Pass<'r> {
    /// No dropout, no rescaling; never touches an rng.
    Eval,
    /// Samples a fresh inverted-dropout mask from the rng.
    Train(&'r mut dyn RngCore),
    /// Reuses a recorded mask (already scaled by `1 / (1 - rate)`).
    Replay(&'r [f64]),
}

impl Pass<'_> {
    pub fn is_eval(&self) -> bool {
        matches!(self, Pass::Eval)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub u_int: Vec<f64>,
    pub z_int: Vec<f64>,
    pub u_had_item: Vec<f64>,
    pub h_item: Vec<f64>,
    pub u_had_annot: Vec<f64>,
    pub h_annot: Vec<f64>,
    pub z_had: Vec<f64>,
    /// `[z_int; z_had]`.
    pub z_interaction: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fused {
    /// Pre-activation of the projected interaction (sum fusion only).
    pub u_proj: Option<Vec<f64>>,
    pub z_combined: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transformed {
    pub u_p: Vec<f64>,
    pub dropout_mask: Option<Vec<f64>>,
    pub z_p: Vec<f64>,
    pub u_e: Vec<f64>,
    pub z_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub logits_y: Vec<f64>,
    pub logits_yi: Vec<f64>,
    pub logits_ya: Vec<f64>,
    /// Aggregate head.
    pub p_y: Vec<f64>,
    /// Per-annotator head.
    pub p_yi: Vec<f64>,
    /// Annotator-behavior head.
    pub p_ya: Vec<f64>,
}

/// Every intermediate of one (item, annotator) pass, enough to backpropagate
/// without recomputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    pub features: Vec<f64>,
    pub categories: Vec<usize>,
    pub alpha: Vec<f64>,
    pub z_a: Vec<f64>,
    pub z_i: Vec<f64>,
    pub interaction: Interaction,
    pub fused: Fused,
    pub transformed: Transformed,
    pub decoded: Decoded,
}

impl ForwardTrace {
    pub fn z_combined(&self) -> &[f64] {
        &self.fused.z_combined
    }

    pub fn z_e(&self) -> &[f64] {
        &self.transformed.z_e
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(NetworkError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Importance weights over demographic axes: `softmax(alpha_raw)`.
pub fn demographic_weights(alpha_raw: &[f64]) -> Vec<f64> {
    softmax(alpha_raw)
}

/// `z_a = Σ_d α_d · W_d[c_d]`, where `c_d` is the annotator's category on
/// axis `d` (the one-hot product reduces to a row lookup).
pub fn encode_annotator(categories: &[usize], params: &ModelParams) -> Result<Vec<f64>> {
    let alpha = demographic_weights(&params.alpha_raw);
    encode_with_alpha(categories, params, &alpha)
}

fn encode_with_alpha(
    categories: &[usize],
    params: &ModelParams,
    alpha: &[f64],
) -> Result<Vec<f64>> {
    if categories.len() != params.w_demo.len() {
        return Err(NetworkError::AxisMismatch(format!(
            "{} category values for {} axes",
            categories.len(),
            params.w_demo.len()
        )));
    }
    let d_a = params.w_demo[0].cols();
    let mut z_a = vec![0.0; d_a];
    for (d, (&c, w)) in categories.iter().zip(&params.w_demo).enumerate() {
        if c >= w.rows() {
            return Err(NetworkError::AxisMismatch(format!(
                "category {c} out of range on axis {d} ({} rows incl. UNK)",
                w.rows()
            )));
        }
        axpy(&mut z_a, alpha[d], w.row(c));
    }
    Ok(z_a)
}

/// `z_I = W_I x`.
pub fn encode_item(features: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    check_len("item features", params.w_item.cols(), features.len())?;
    Ok(params.w_item.matvec(features))
}

/// Concatenation feature `φ(W_intᵀ [z_I; z_a])` and Hadamard feature
/// `φ(W_had,Iᵀ z_I) ⊙ φ(W_had,aᵀ z_a)`.
pub fn interaction_features(
    z_i: &[f64],
    z_a: &[f64],
    params: &ModelParams,
    act: Activation,
) -> Result<Interaction> {
    check_len("z_I", params.w_had_item.rows(), z_i.len())?;
    check_len("z_a", params.w_had_annot.rows(), z_a.len())?;
    let joint: Vec<f64> = z_i.iter().chain(z_a).copied().collect();
    check_len("[z_I; z_a]", params.w_int.rows(), joint.len())?;

    let u_int = params.w_int.matvec_t(&joint);
    let z_int = act.map(&u_int);
    let u_had_item = params.w_had_item.matvec_t(z_i);
    let h_item = act.map(&u_had_item);
    let u_had_annot = params.w_had_annot.matvec_t(z_a);
    let h_annot = act.map(&u_had_annot);
    let z_had: Vec<f64> = h_item.iter().zip(&h_annot).map(|(a, b)| a * b).collect();
    let z_interaction = z_int.iter().chain(&z_had).copied().collect();
    Ok(Interaction {
        u_int,
        z_int,
        u_had_item,
        h_item,
        u_had_annot,
        h_annot,
        z_had,
        z_interaction,
    })
}

pub fn fuse(
    z_i: &[f64],
    z_a: &[f64],
    z_interaction: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Fused> {
    match config.fusion {
        Fusion::Concat => Ok(Fused {
            u_proj: None,
            z_combined: z_i
                .iter()
                .chain(z_a)
                .chain(z_interaction)
                .copied()
                .collect(),
        }),
        Fusion::Sum => {
            if z_a.len() != z_i.len() {
                return Err(NetworkError::FusionShapeError {
                    d_a: z_a.len(),
                    d_i: z_i.len(),
                });
            }
            let w_proj = params.w_proj.as_ref().ok_or_else(|| {
                NetworkError::InvalidConfig("sum fusion without a projection matrix".into())
            })?;
            check_len("z_interaction", w_proj.rows(), z_interaction.len())?;
            check_len("projected interaction", z_i.len(), w_proj.cols())?;
            let u_proj = w_proj.matvec_t(z_interaction);
            let z_combined = z_i
                .iter()
                .zip(z_a)
                .zip(&u_proj)
                .map(|((i, a), &u)| i + a + config.activation.apply(u))
                .collect();
            Ok(Fused {
                u_proj: Some(u_proj),
                z_combined,
            })
        }
    }
}

/// `z_P = φ(W_P z_combined)` (dropout applied here in training) and the
/// residual `z_E = φ(W_E z_P + z_P)`.
pub fn transform(
    z_combined: &[f64],
    params: &ModelParams,
    config: &ModelConfig,
    pass: &mut Pass<'_>,
) -> Result<Transformed> {
    check_len("z_combined", params.w_p.cols(), z_combined.len())?;
    let act = config.activation;
    let u_p = params.w_p.matvec(z_combined);
    let mut z_p = act.map(&u_p);
    let dropout_mask = match pass {
        Pass::Eval => None,
        Pass::Train(_) if config.dropout_rate == 0.0 => None,
        Pass::Train(rng) => {
            let keep = 1.0 - config.dropout_rate;
            Some(
                (0..z_p.len())
                    .map(|_| {
                        if rng.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect::<Vec<f64>>(),
            )
        }
        Pass::Replay(mask) => {
            check_len("dropout mask", z_p.len(), mask.len())?;
            Some(mask.to_vec())
        }
    };
    if let Some(mask) = &dropout_mask {
        z_p.iter_mut().zip(mask).for_each(|(z, m)| *z *= m);
    }
    let mut u_e = params.w_e.matvec(&z_p);
    axpy(&mut u_e, 1.0, &z_p);
    let z_e = act.map(&u_e);
    Ok(Transformed {
        u_p,
        dropout_mask,
        z_p,
        u_e,
        z_e,
    })
}

/// Three softmax heads; the per-annotator head adds `W_yI,a z_a`.
pub fn decode(z_e: &[f64], z_a: &[f64], params: &ModelParams) -> Result<Decoded> {
    check_len("z_E", params.w_y.cols(), z_e.len())?;
    check_len("z_a", params.w_yi_annot.cols(), z_a.len())?;
    let logits_y = params.w_y.matvec(z_e);
    let mut logits_yi = params.w_yi.matvec(z_e);
    axpy(&mut logits_yi, 1.0, &params.w_yi_annot.matvec(z_a));
    let logits_ya = params.w_ya.matvec(z_e);
    Ok(Decoded {
        p_y: softmax(&logits_y),
        p_yi: softmax(&logits_yi),
        p_ya: softmax(&logits_ya),
        logits_y,
        logits_yi,
        logits_ya,
    })
}

pub fn forward(
    features: &[f64],
    categories: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
    mut pass: Pass<'_>,
) -> Result<ForwardTrace> {
    let alpha = demographic_weights(&params.alpha_raw);
    let z_a = encode_with_alpha(categories, params, &alpha)?;
    let z_i = encode_item(features, params)?;
    let interaction = interaction_features(&z_i, &z_a, params, config.activation)?;
    let fused = fuse(&z_i, &z_a, &interaction.z_interaction, params, config)?;
    let transformed = transform(&fused.z_combined, params, config, &mut pass)?;
    let decoded = decode(&transformed.z_e, &z_a, params)?;
    Ok(ForwardTrace {
        features: features.to_vec(),
        categories: categories.to_vec(),
        alpha,
        z_a,
        z_i,
        interaction,
        fused,
        transformed,
        decoded,
    })
}
