use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::AttentionMap;
use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::matching::{match_views, CorrespondenceSet, MatchInputs, Strategy};
use crate::seeds::{derive, Stream};
use crate::synthdata::{grid_labels, Scene, ViewPair};
use crate::trainer::scene_view_pair;

/// Emitted pairs of one view pair and whether each joins the same object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairTally {
    pub correct: usize,
    pub total: usize,
}

impl PairTally {
    pub fn add(&mut self, other: PairTally) {
        self.correct += other.correct;
        self.total += other.total;
    }

    /// `correct / total`, or 0 with no pairs.
    pub fn precision(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Counts the pairs of `corr` whose endpoints carry the same non-zero
/// object label. Pairs touching background on either side are wrong.
pub fn tally_pairs(corr: &CorrespondenceSet, labels_q: &[u32], labels_k: &[u32]) -> Result<PairTally> {
    corr.validate(labels_q.len(), labels_k.len())?;
    let mut tally = PairTally::default();
    for (i, j) in corr.pairs() {
        tally.total += 1;
        if labels_q[i] != 0 && labels_q[i] == labels_k[j] {
            tally.correct += 1;
        }
    }
    Ok(tally)
}

/// Fraction of all emitted pairs, pooled over view pairs, that join the
/// same object. Each item is a correspondence set with the label grids of
/// its query and key views.
pub fn correspondence_precision(items: &[(&CorrespondenceSet, &[u32], &[u32])]) -> Result<f64> {
    let mut tally = PairTally::default();
    for (corr, lq, lk) in items {
        tally.add(tally_pairs(corr, lq, lk)?);
    }
    Ok(tally.precision())
}

/// Scene `index` of the held-out matching set for `eval_seed`, with its
/// two augmented views.
pub fn held_out_pair(eval_seed: u64, index: u64) -> Result<(Scene, ViewPair)> {
    scene_view_pair(eval_seed, Stream::HeldOutScene, Stream::HeldOutView, &[0, index])
}

/// Precision of one matching strategy on the held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyPrecision {
    pub strategy: Strategy,
    pub precision: f64,
    pub correct_pairs: usize,
    pub total_pairs: usize,
}

/// Correspondence precision of every strategy on the same held-out view
/// pairs, with both views encoded by `params`.
pub fn evaluate_matching(
    params: &EncoderParams,
    delta: f64,
    n_scenes: usize,
    eval_seed: u64,
) -> Result<Vec<StrategyPrecision>> {
    if n_scenes == 0 {
        return Err(Error::invalid("n_scenes", "must be at least 1"));
    }
    let grid = params.arch.grid();
    let per_scene: Vec<Vec<PairTally>> = (0..n_scenes as u64)
        .into_par_iter()
        .map(|i| {
            let (scene, pair) = held_out_pair(eval_seed, i)?;
            let labels_q = grid_labels(&scene, &pair.t_q, grid)?;
            let labels_k = grid_labels(&scene, &pair.t_k, grid)?;
            let fq = encode(params, &pair.view_q)?;
            let fk = encode(params, &pair.view_k)?;
            let aq = AttentionMap::compute(&fq.z, delta)?;
            let ak = AttentionMap::compute(&fk.z, delta)?;
            let inputs = MatchInputs {
                omega_q: &aq.selected,
                omega_k: &ak.selected,
                rescaled_q: &aq.rescaled,
                rescaled_k: &ak.rescaled,
                z_q: &fq.z,
                z_k: &fk.z,
                p_q: &fq.p_set,
                p_k: &fk.p_set,
            };
            Strategy::ALL
                .iter()
                .map(|&s| {
                    let corr = match_views(s, &inputs, derive(eval_seed, Stream::HeldOutMatch, &[i]))?;
                    tally_pairs(&corr, &labels_q, &labels_k)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    Ok(Strategy::ALL
        .iter()
        .enumerate()
        .map(|(si, &strategy)| {
            let mut tally = PairTally::default();
            for scene in &per_scene {
                tally.add(scene[si]);
            }
            StrategyPrecision {
                strategy,
                precision: tally.precision(),
                correct_pairs: tally.correct,
                total_pairs: tally.total,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::Correspondence;

    fn corr(pairs: &[(usize, usize)]) -> CorrespondenceSet {
        CorrespondenceSet {
            strategy: Strategy::Sort,
            entries: pairs
                .iter()
                .map(|&(q, k)| Correspondence {
                    query: q,
                    keys: vec![k],
                    nn_added: None,
                })
                .collect(),
        }
    }

    #[test]
    fn counting_examples() {
        let lq = [1, 1, 2, 0];
        let lk = [1, 2, 2, 0];
        let all_same = corr(&[(0, 0), (1, 0)]);
        assert_eq!(correspondence_precision(&[(&all_same, &lq, &lk)]).unwrap(), 1.0);
        let background = corr(&[(3, 3)]);
        assert_eq!(correspondence_precision(&[(&background, &lq, &lk)]).unwrap(), 0.0);
        let four = corr(&[(0, 0), (1, 0), (2, 2), (2, 0)]);
        assert_eq!(correspondence_precision(&[(&four, &lq, &lk)]).unwrap(), 0.75);
    }

    #[test]
    fn pooled_over_items_and_order_free() {
        let lq = [1, 2];
        let lk = [1, 2];
        let a = corr(&[(0, 0), (1, 0)]);
        let b = corr(&[(1, 1)]);
        let b_rev = corr(&[(1, 0), (0, 0)]);
        let p = correspondence_precision(&[(&a, &lq, &lk), (&b, &lq, &lk)]).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            correspondence_precision(&[(&a, &lq, &lk)]).unwrap(),
            correspondence_precision(&[(&b_rev, &lq, &lk)]).unwrap()
        );
        assert_eq!(correspondence_precision(&[]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_out_of_grid_pairs() {
        let c = corr(&[(0, 5)]);
        assert!(correspondence_precision(&[(&c, &[1][..], &[1][..])]).is_err());
    }
}
