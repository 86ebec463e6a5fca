use crate::network::linalg::{axpy, dot, softmax_backward};
use crate::network::{ForwardTrace, Fusion, Gradients, ModelConfig, ModelParams};
use crate::objective::{
    logit_gradients, BatchTargets, DisagreementMode, LogitGradients, LossWeights,
};

use super::{Result, TrainError};

/// Analytic gradient of the batch loss (including regularization) with
/// respect to every parameter. `traces` must come from the same `params`.
pub fn backward(
    traces: &[ForwardTrace],
    targets: &BatchTargets,
    params: &ModelParams,
    weights: &LossWeights,
    config: &ModelConfig,
    mode: DisagreementMode,
) -> Result<Gradients> {
    if traces.len() != targets.len() {
        return Err(TrainError::TraceMismatch(format!(
            "{} traces for {} targets",
            traces.len(),
            targets.len()
        )));
    }
    let heads = logit_gradients(traces, targets, weights, mode)?;
    let mut grads = params.zeros_like();
    for (trace, head) in traces.iter().zip(&heads) {
        backward_sample(trace, head, params, config, &mut grads)?;
    }
    add_regularization(params, weights, &mut grads);
    Ok(grads)
}

fn backward_sample(
    trace: &ForwardTrace,
    head: &LogitGradients,
    params: &ModelParams,
    config: &ModelConfig,
    grads: &mut Gradients,
) -> Result<()> {
    let act = config.activation;
    let t = &trace.transformed;
    let inter = &trace.interaction;
    if t.z_e.len() != params.w_y.cols() || trace.z_a.len() != params.w_yi_annot.cols() {
        return Err(TrainError::TraceMismatch(
            "trace shapes differ from params".into(),
        ));
    }

    // Heads.
    grads.w_y.add_outer(&head.d_logits_y, &t.z_e);
    grads.w_yi.add_outer(&head.d_logits_yi, &t.z_e);
    grads.w_ya.add_outer(&head.d_logits_ya, &t.z_e);
    grads.w_yi_annot.add_outer(&head.d_logits_yi, &trace.z_a);
    let mut dz_e = params.w_y.matvec_t(&head.d_logits_y);
    axpy(&mut dz_e, 1.0, &params.w_yi.matvec_t(&head.d_logits_yi));
    axpy(&mut dz_e, 1.0, &params.w_ya.matvec_t(&head.d_logits_ya));
    let mut dz_a = params.w_yi_annot.matvec_t(&head.d_logits_yi);

    // Residual transform.
    let du_e = act.backward(&t.u_e, &dz_e);
    grads.w_e.add_outer(&du_e, &t.z_p);
    let mut dz_p = params.w_e.matvec_t(&du_e);
    axpy(&mut dz_p, 1.0, &du_e);
    if let Some(mask) = &t.dropout_mask {
        dz_p.iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
    }
    let du_p = act.backward(&t.u_p, &dz_p);
    grads.w_p.add_outer(&du_p, &trace.fused.z_combined);
    let dz_comb = params.w_p.matvec_t(&du_p);

    // Fusion.
    let d_i = trace.z_i.len();
    let d_a = trace.z_a.len();
    let (mut dz_i, dz_inter) = match config.fusion {
        Fusion::Concat => {
            axpy(&mut dz_a, 1.0, &dz_comb[d_i..d_i + d_a]);
            (dz_comb[..d_i].to_vec(), dz_comb[d_i + d_a..].to_vec())
        }
        Fusion::Sum => {
            let (w_proj, g_proj, u_proj) =
                match (&params.w_proj, &mut grads.w_proj, &trace.fused.u_proj) {
                    (Some(w), Some(g), Some(u)) => (w, g, u),
                    _ => {
                        return Err(TrainError::TraceMismatch(
                            "sum fusion without projection".into(),
                        ))
                    }
                };
            axpy(&mut dz_a, 1.0, &dz_comb);
            let du_proj = act.backward(u_proj, &dz_comb);
            g_proj.add_outer(&inter.z_interaction, &du_proj);
            (dz_comb.clone(), w_proj.matvec(&du_proj))
        }
    };

    // Interaction features.
    let d_int = inter.z_int.len();
    let du_int = act.backward(&inter.u_int, &dz_inter[..d_int]);
    let joint: Vec<f64> = trace.z_i.iter().chain(&trace.z_a).copied().collect();
    grads.w_int.add_outer(&joint, &du_int);
    let d_joint = params.w_int.matvec(&du_int);
    axpy(&mut dz_i, 1.0, &d_joint[..d_i]);
    axpy(&mut dz_a, 1.0, &d_joint[d_i..]);

    let dz_had = &dz_inter[d_int..];
    let dh_item: Vec<f64> = dz_had
        .iter()
        .zip(&inter.h_annot)
        .map(|(g, h)| g * h)
        .collect();
    let dh_annot: Vec<f64> = dz_had
        .iter()
        .zip(&inter.h_item)
        .map(|(g, h)| g * h)
        .collect();
    let du_hi = act.backward(&inter.u_had_item, &dh_item);
    let du_ha = act.backward(&inter.u_had_annot, &dh_annot);
    grads.w_had_item.add_outer(&trace.z_i, &du_hi);
    grads.w_had_annot.add_outer(&trace.z_a, &du_ha);
    axpy(&mut dz_i, 1.0, &params.w_had_item.matvec(&du_hi));
    axpy(&mut dz_a, 1.0, &params.w_had_annot.matvec(&du_ha));

    // Encoders.
    grads.w_item.add_outer(&dz_i, &trace.features);
    let mut d_alpha = vec![0.0; trace.alpha.len()];
    for (d, &c) in trace.categories.iter().enumerate() {
        axpy(grads.w_demo[d].row_mut(c), trace.alpha[d], &dz_a);
        d_alpha[d] = dot(&dz_a, params.w_demo[d].row(c));
    }
    let d_alpha_raw = softmax_backward(&trace.alpha, &d_alpha);
    axpy(&mut grads.alpha_raw, 1.0, &d_alpha_raw);
    Ok(())
}

fn add_regularization(params: &ModelParams, weights: &LossWeights, grads: &mut Gradients) {
    if weights.l1_coeff == 0.0 && weights.l2_coeff == 0.0 {
        return;
    }
    for (g, w) in grads.tensors_mut().into_iter().zip(params.tensors()) {
        if w.name == "alpha_raw" {
            continue;
        }
        for (gi, &wi) in g.data.iter_mut().zip(w.data) {
            let sign = if wi > 0.0 {
                1.0
            } else if wi < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gi += weights.l1_coeff * sign + 2.0 * weights.l2_coeff * wi;
        }
    }
}
