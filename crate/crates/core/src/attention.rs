//! Corresponding-set construction from a backbone map.
//!
//! The attention map is the channel-wise absolute sum of `z`, min-max
//! rescaled to `[0, 1]`; positions at or above a threshold `δ` form the set
//! `Ω`. Selection picks indices only: no gradient flows through it.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default selection threshold.
pub const DEFAULT_DELTA: f64 = 0.7;

/// `A(j) = Σ_c |z(c, j)|` for a `C×H×W` map, giving `H×W`.
pub fn attention_map(z: &Tensor) -> Result<Tensor> {
    let [c, h, w] = z.dims3("attention_map")?;
    let hw = h * w;
    let mut out = vec![0.0; hw];
    for ch in 0..c {
        for (a, v) in out.iter_mut().zip(&z.data()[ch * hw..][..hw]) {
            *a += v.abs();
        }
    }
    Tensor::new(&[h, w], out)
}

/// Min-max rescaling. A constant map rescales to all ones.
pub fn rescale_minmax(a: &Tensor) -> Tensor {
    let (lo, hi) = a
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi == lo {
        return Tensor::full(a.shape(), 1.0);
    }
    a.map(|v| (v - lo) / (hi - lo))
}

/// `Ω = {j : A′(j) ≥ δ}`, sorted by `A′` descending with ties broken by
/// ascending flat index.
pub fn select_set(rescaled: &Tensor, delta: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(
            "delta",
            format!("threshold must lie in [0, 1], got {delta}"),
        ));
    }
    let values = rescaled.data();
    let mut selected: Vec<usize> = (0..values.len()).filter(|&j| values[j] >= delta).collect();
    selected.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    Ok(selected)
}

/// Raw map, rescaled map and selected set of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub raw: Tensor,
    pub rescaled: Tensor,
    pub selected: Vec<usize>,
}

impl AttentionMap {
    pub fn compute(z: &Tensor, delta: f64) -> Result<Self> {
        let raw = attention_map(z)?;
        let rescaled = rescale_minmax(&raw);
        let selected = select_set(&rescaled, delta)?;
        Ok(AttentionMap {
            raw,
            rescaled,
            selected,
        })
    }

    pub fn positions(&self) -> usize {
        self.raw.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_map() {
        let a = attention_map(&Tensor::zeros(&[4, 2, 2])).unwrap();
        assert_eq!(a.max_abs(), 0.0);
    }

    #[test]
    fn absolute_sum_over_channels() {
        let z = Tensor::new(&[2, 1, 2], vec![3.0, 1.0, -4.0, 0.0]).unwrap();
        assert_eq!(attention_map(&z).unwrap().data(), &[7.0, 1.0]);
    }

    #[test]
    fn naive_loop_oracle() {
        let z = Tensor::from_fn(&[5, 3, 4], |i| ((i * 37 % 23) as f64 - 11.0) * 0.3);
        let a = attention_map(&z).unwrap();
        for j in 0..12 {
            let mut expected = 0.0;
            for c in 0..5 {
                expected += z.data()[c * 12 + j].abs();
            }
            assert_eq!(a.data()[j], expected);
        }
    }

    #[test]
    fn rescale_examples() {
        let a = Tensor::from_vec(vec![2.0, 4.0, 6.0]);
        assert_eq!(rescale_minmax(&a).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(rescale_minmax(&Tensor::full(&[2, 2], 3.0)).data(), &[1.0; 4]);
    }

    #[test]
    fn selection_examples() {
        let a = Tensor::from_vec(vec![0.0, 0.5, 1.0, 0.8]);
        assert_eq!(select_set(&a, 0.7).unwrap(), vec![2, 3]);
        assert_eq!(select_set(&a, 1.0).unwrap(), vec![2]);
        assert_eq!(select_set(&a, 0.0).unwrap(), vec![2, 3, 1, 0]);
        assert!(select_set(&a, 1.1).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let a = Tensor::from_vec(vec![1.0, 0.2, 1.0, 0.2]);
        assert_eq!(select_set(&a, 0.0).unwrap(), vec![0, 2, 1, 3]);
    }

    #[test]
    fn constant_map_selects_everything() {
        let z = Tensor::full(&[3, 2, 2], -1.5);
        let att = AttentionMap::compute(&z, 1.0).unwrap();
        assert_eq!(att.selected, vec![0, 1, 2, 3]);
    }

    proptest! {
        #[test]
        fn rescaled_range_and_order(values in prop::collection::vec(-10.0f64..10.0, 2..40)) {
            let a = Tensor::from_vec(values.clone());
            let r = rescale_minmax(&a);
            prop_assert!(r.data().iter().all(|v| (0.0..=1.0).contains(v)));
            // order preserved against a sort oracle
            let mut idx: Vec<usize> = (0..values.len()).collect();
            idx.sort_by(|&x, &y| values[x].total_cmp(&values[y]));
            for w in idx.windows(2) {
                prop_assert!(r.data()[w[0]] <= r.data()[w[1]]);
            }
            let distinct = values.iter().any(|&v| v != values[0]);
            if distinct {
                prop_assert_eq!(r.data()[idx[0]], 0.0);
                prop_assert_eq!(r.data()[*idx.last().unwrap()], 1.0);
            }
        }

        #[test]
        fn monotone_in_delta(values in prop::collection::vec(0.0f64..5.0, 1..30), d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let r = rescale_minmax(&Tensor::from_vec(values));
            let big = select_set(&r, lo).unwrap();
            let small = select_set(&r, hi).unwrap();
            prop_assert!(!small.is_empty());
            prop_assert!(small.iter().all(|j| big.contains(j)));
        }
    }
}
