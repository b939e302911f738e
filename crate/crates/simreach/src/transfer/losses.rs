//! Loss graphs. Every function appends to the caller's graph and returns a
//! scalar node, so gradients flow into whichever parameters the inputs were
//! built from.

use crate::numgrad::{Graph, NodeId};
use crate::policynet::Discriminator;
use crate::{Error, Result};

fn batch_rows(g: &Graph, node: NodeId, op: &'static str, cols: usize) -> Result<usize> {
    let shape = g.value(node).shape();
    if shape.len() != 2 || shape[1] != cols {
        return Err(Error::ShapeMismatch {
            op,
            details: format!("expected [m,{cols}], got {shape:?}"),
        });
    }
    if shape[0] == 0 {
        return Err(Error::EmptyBatch(op));
    }
    Ok(shape[0])
}

/// L_p^Sup = (1/2m) sum_j ||y_p(I_j) - x*_j||^2 over [m,3] batches.
pub fn loss_perception_sup(g: &mut Graph, preds: NodeId, targets: NodeId) -> Result<NodeId> {
    batch_rows(g, preds, "loss_perception_sup", 3)?;
    g.half_mse(preds, targets)
}

/// L_c = (1/2m) sum_j ||y_c(s_j) - v_j||^2 over [m,7] batches.
pub fn loss_control(g: &mut Graph, preds: NodeId, targets: NodeId) -> Result<NodeId> {
    batch_rows(g, preds, "loss_control", 7)?;
    g.half_mse(preds, targets)
}

/// Mean of log p_sim over a feature batch; `flip` uses log(1 - p_sim).
fn mean_log_p_sim(
    g: &mut Graph,
    d: &Discriminator,
    feats: NodeId,
    flip: bool,
) -> Result<NodeId> {
    let probs = d.forward(g, feats)?;
    let mut p = g.select_col(probs, 0)?;
    if flip {
        p = g.affine(p, -1.0, 1.0);
    }
    let lp = g.log(p);
    Ok(g.mean_all(lp))
}

/// L_D^Ad = -(1/2m) sum_j [log D(E_s(I^S_j)) + log(1 - D(E_r(I^R_j)))],
/// where D(.) is the discriminator's sim-class probability.
pub fn loss_discriminator(
    g: &mut Graph,
    d: &Discriminator,
    src_feats: NodeId,
    tgt_feats: NodeId,
) -> Result<NodeId> {
    let f = d.arch.feature_dim();
    let m = batch_rows(g, src_feats, "loss_discriminator", f)?;
    if batch_rows(g, tgt_feats, "loss_discriminator", f)? != m {
        return Err(Error::ShapeMismatch {
            op: "loss_discriminator",
            details: "source and target batches must be equal-sized".to_string(),
        });
    }
    let s = mean_log_p_sim(g, d, src_feats, false)?;
    let r = mean_log_p_sim(g, d, tgt_feats, true)?;
    let sum = g.add(s, r)?;
    Ok(g.affine(sum, -0.5, 0.0))
}

/// L_E^Ad = -(1/m) sum_j log D(E_r(I^R_j)): the target encoder is rewarded
/// for features the discriminator calls simulated.
pub fn loss_encoder_adv(g: &mut Graph, d: &Discriminator, tgt_feats: NodeId) -> Result<NodeId> {
    batch_rows(g, tgt_feats, "loss_encoder_adv", d.arch.feature_dim())?;
    let lp = mean_log_p_sim(g, d, tgt_feats, false)?;
    Ok(g.affine(lp, -1.0, 0.0))
}

/// Domain-confusion replacement for L_E^Ad: the four half-weighted log
/// terms over both domains. Only defined when source and target encoders
/// share weights; the caller attests to that with `encoders_shared`.
pub fn loss_confusion(
    g: &mut Graph,
    d: &Discriminator,
    src_feats: NodeId,
    tgt_feats: NodeId,
    encoders_shared: bool,
) -> Result<NodeId> {
    if !encoders_shared {
        return Err(Error::Config(
            "confusion loss requires shared source/target encoders".to_string(),
        ));
    }
    let f = d.arch.feature_dim();
    let m = batch_rows(g, src_feats, "loss_confusion", f)?;
    if batch_rows(g, tgt_feats, "loss_confusion", f)? != m {
        return Err(Error::ShapeMismatch {
            op: "loss_confusion",
            details: "source and target batches must be equal-sized".to_string(),
        });
    }
    let mut total: Option<NodeId> = None;
    for (feats, flip) in [
        (src_feats, false),
        (src_feats, true),
        (tgt_feats, false),
        (tgt_feats, true),
    ] {
        let term = mean_log_p_sim(g, d, feats, flip)?;
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    // -(1/2m) sum of half-weighted per-sample terms = -(1/4) of the means
    Ok(g.affine(total.expect("four terms"), -0.25, 0.0))
}
