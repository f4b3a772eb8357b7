//! Training objectives and the negative queue.
//!
//! * [`info_nce_image`]: image-level InfoNCE against a queue of negatives.
//! * [`set_contrastive_loss`]: the set-level loss, one shared softmax
//!   denominator per query index over all of its positives plus negatives.
//! * [`geo_consistency_loss`]: negative cosine over geometric cell pairs.
//! * [`simsiam_image_loss`] / [`simsiam_set_loss`]: negative cosine with a
//!   predictor on the query side and no negatives.
//!
//! Key-side inputs and queue entries are constants everywhere: no function
//! here returns a gradient for them, except [`geo_consistency_loss`], which
//! reports both sides and leaves it to the caller to drop the key side.

mod contrastive;
mod queue;
mod similarity;

use serde::{Deserialize, Serialize};

pub use contrastive::{info_nce_image, set_contrastive_loss, MapLoss};
pub use queue::{NegativeQueue, UNIT_NORM_TOLERANCE};
pub use similarity::{cosine_with_grad, geo_consistency_loss, simsiam_image_loss, simsiam_set_loss, GeoLoss};

use crate::error::{Error, Result};

/// Default softmax temperature.
pub const DEFAULT_TAU: f64 = 0.2;
/// Default weight of the set-level term.
pub const DEFAULT_LAMBDA: f64 = 0.5;

/// Loss values of one step (or one direction of a step).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_img: f64,
    pub l_set: f64,
    pub l_geo: f64,
    pub total: f64,
    /// `Σ |c_i|` over the batch.
    pub pair_count: usize,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid("lambda", format!("must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

/// `(1−λ)·l_img + λ·l_set`.
pub fn combined_loss(l_img: f64, l_set: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok((1.0 - lambda) * l_img + lambda * l_set)
}

/// Weights `(image, set, geo)` applied to each term's value and gradient.
///
/// Without the geometric term this is `(1−λ, λ, 0)`. With it, the dense part
/// is split evenly: `(1−λ)·l_img + λ·(½·l_set + ½·(l_geo + 1))`, the `+1`
/// shifting the cosine term to be non-negative.
pub fn term_weights(lambda: f64, with_geo: bool) -> Result<(f64, f64, f64)> {
    check_lambda(lambda)?;
    Ok(if with_geo {
        (1.0 - lambda, 0.5 * lambda, 0.5 * lambda)
    } else {
        (1.0 - lambda, lambda, 0.0)
    })
}

/// Total loss for the given term values under [`term_weights`].
pub fn weighted_total(l_img: f64, l_set: f64, l_geo: Option<f64>, lambda: f64) -> Result<f64> {
    let (wi, ws, wg) = term_weights(lambda, l_geo.is_some())?;
    Ok(match l_geo {
        Some(g) => wi * l_img + ws * l_set + wg * (g + 1.0),
        None => wi * l_img + ws * l_set,
    })
}

/// Averages a directional evaluator over both role assignments:
/// `½·(loss(a→b) + loss(b→a))` for every real field. `pair_count` is the sum
/// of both directions, since both sets of pairs enter the objective.
pub fn symmetrized<V, F>(mut evaluator: F, view_q: &V, view_k: &V) -> Result<LossReport>
where
    F: FnMut(&V, &V) -> Result<LossReport>,
{
    let fwd = evaluator(view_q, view_k)?;
    let bwd = evaluator(view_k, view_q)?;
    Ok(average_reports(&fwd, &bwd))
}

pub(crate) fn average_reports(a: &LossReport, b: &LossReport) -> LossReport {
    LossReport {
        l_img: 0.5 * (a.l_img + b.l_img),
        l_set: 0.5 * (a.l_set + b.l_set),
        l_geo: 0.5 * (a.l_geo + b.l_geo),
        total: 0.5 * (a.total + b.total),
        pair_count: a.pair_count + b.pair_count,
    }
}
