use super::queue::NegativeQueue;
use crate::error::{Error, Result};
use crate::matching::CorrespondenceSet;
use crate::numcore::NORM_EPSILON;
use crate::tensor::{add_to_column, column, Tensor};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::invalid(
            "tau",
            format!("temperature must be positive, got {tau}"),
        ));
    }
    Ok(())
}

fn check_queue(queue: &NegativeQueue, dim: usize) -> Result<()> {
    if queue.is_empty() {
        return Err(Error::invalid("queue", "negative queue is empty"));
    }
    if queue.dim() != dim {
        return Err(Error::shape(
            "contrastive loss",
            format!("{dim}-d features against a {}-d queue", queue.dim()),
        ));
    }
    Ok(())
}

/// `log(Σ_{pos} e^{s} + Σ_{neg} e^{n}) − mean_{pos}(s)` with `s = q·k/τ`,
/// and its gradient with respect to `q`.
///
/// With a single positive this is the usual InfoNCE term; with several it is
/// the mean over positives of `−log(e^{s_j} / denominator)`, every positive
/// sharing one denominator.
fn multi_positive_nce(query: &[f64], positives: &[Vec<f64>], queue: &NegativeQueue, tau: f64) -> (f64, Vec<f64>) {
    let pos_logits: Vec<f64> = positives.iter().map(|k| dot(query, k) / tau).collect();
    let neg_logits: Vec<f64> = queue.slots().iter().map(|k| dot(query, k) / tau).collect();
    let max = pos_logits
        .iter()
        .chain(&neg_logits)
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let denom: f64 = pos_logits.iter().chain(&neg_logits).map(|&s| (s - max).exp()).sum();
    let log_denom = max + denom.ln();
    let n_pos = positives.len() as f64;
    let mean_pos = pos_logits.iter().sum::<f64>() / n_pos;

    let mut grad = vec![0.0; query.len()];
    for (k, &s) in positives.iter().zip(&pos_logits) {
        let w = ((s - max).exp() / denom - 1.0 / n_pos) / tau;
        grad.iter_mut().zip(k).for_each(|(g, kv)| *g += w * kv);
    }
    for (k, &s) in queue.slots().iter().zip(&neg_logits) {
        let w = (s - max).exp() / denom / tau;
        grad.iter_mut().zip(k).for_each(|(g, kv)| *g += w * kv);
    }
    (log_denom - mean_pos, grad)
}

/// Image-level InfoNCE of a query embedding against its positive key and the
/// queued negatives. Returns the loss and its gradient with respect to
/// `p_q`; keys and queue entries are constants.
///
/// Inputs are expected to be unit norm; this is not re-checked so that the
/// function stays differentiable off the sphere.
pub fn info_nce_image(p_q: &[f64], p_k_pos: &[f64], queue: &NegativeQueue, tau: f64) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    check_queue(queue, p_q.len())?;
    if p_k_pos.len() != p_q.len() {
        return Err(Error::shape("info_nce_image", "query and key lengths differ"));
    }
    Ok(multi_positive_nce(p_q, &[p_k_pos.to_vec()], queue, tau))
}

/// Scalar loss plus its gradient with respect to one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct MapLoss {
    pub loss: f64,
    pub d_map: Tensor,
}

/// Normalizes a column, returning it together with the norm it was divided by.
pub(crate) fn normalized(v: &[f64]) -> (Vec<f64>, f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPSILON);
    (v.iter().map(|x| x / norm).collect(), norm)
}

/// Pulls a gradient on `y = x/‖x‖` back to `x`.
pub(crate) fn normalize_backward(y: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let yg = dot(y, g);
    if norm > NORM_EPSILON {
        y.iter().zip(g).map(|(yv, gv)| (gv - yv * yg) / norm).collect()
    } else {
        g.iter().map(|gv| gv / norm).collect()
    }
}

/// Set-level contrastive loss over a correspondence set.
///
/// For each query index `i` with key set `c_i`, columns are L2-normalized and
///
/// ```text
/// L_i = −(1/|c_i|) Σ_{j∈c_i} log( e^{q_i·k_j/τ} / (Σ_{j′∈c_i} e^{q_i·k_{j′}/τ} + Σ_{k₋} e^{q_i·k₋/τ}) )
/// ```
///
/// and the loss is the mean of `L_i` over query indices. The gradient flows
/// into the query map only.
pub fn set_contrastive_loss(
    q_map: &Tensor,
    k_map: &Tensor,
    corr: &CorrespondenceSet,
    queue: &NegativeQueue,
    tau: f64,
) -> Result<MapLoss> {
    check_tau(tau)?;
    q_map.dims3("set_contrastive_loss")?;
    k_map.dims3("set_contrastive_loss")?;
    check_queue(queue, q_map.shape()[0])?;
    if q_map.shape()[0] != k_map.shape()[0] {
        return Err(Error::shape(
            "set_contrastive_loss",
            "query and key maps have different widths",
        ));
    }
    corr.validate(q_map.len() / q_map.shape()[0], k_map.len() / k_map.shape()[0])?;
    if corr.entries.is_empty() {
        return Err(Error::invalid("correspondence", "no query indices"));
    }

    let scale = 1.0 / corr.entries.len() as f64;
    let mut total = 0.0;
    let mut d_map = Tensor::zeros_like(q_map);
    for entry in &corr.entries {
        let (q, norm) = normalized(&column(q_map, entry.query));
        let keys: Vec<Vec<f64>> = entry.keys.iter().map(|&j| normalized(&column(k_map, j)).0).collect();
        let (loss, g) = multi_positive_nce(&q, &keys, queue, tau);
        total += loss;
        let d_col: Vec<f64> = normalize_backward(&q, norm, &g)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        add_to_column(&mut d_map, entry.query, &d_col);
    }
    Ok(MapLoss {
        loss: total * scale,
        d_map,
    })
}
