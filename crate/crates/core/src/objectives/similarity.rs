//! Cosine-similarity objectives: geometry consistency and the SimSiam-style
//! negative cosine losses.

use super::contrastive::MapLoss;
use crate::error::{Error, Result};
use crate::matching::CorrespondenceSet;
use crate::synthdata::GeoCorrespondence;
use crate::tensor::{add_to_column, channels_and_positions, column, Tensor};

/// Cosine similarity with gradients with respect to both arguments.
/// Zero vectors give similarity 0 and zero gradients.
pub fn cosine_with_grad(u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return (0.0, vec![0.0; u.len()], vec![0.0; v.len()]);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let cos = dot / (nu * nv);
    let du = u
        .iter()
        .zip(v)
        .map(|(a, b)| b / (nu * nv) - cos * a / (nu * nu))
        .collect();
    let dv = u
        .iter()
        .zip(v)
        .map(|(a, b)| a / (nu * nv) - cos * b / (nv * nv))
        .collect();
    (cos, du, dv)
}

/// Gradients of [`geo_consistency_loss`] with respect to both maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoLoss {
    pub loss: f64,
    pub d_q_map: Tensor,
    pub d_k_map: Tensor,
}

/// `−mean cos(p_q[i], p_k[j])` over geometric pairs; 0 with no pairs.
pub fn geo_consistency_loss(q_map: &Tensor, k_map: &Tensor, geo: &GeoCorrespondence) -> Result<GeoLoss> {
    let (cq, hw_q) = channels_and_positions(q_map);
    let (ck, hw_k) = channels_and_positions(k_map);
    if cq != ck {
        return Err(Error::shape(
            "geo_consistency_loss",
            format!("channel counts {cq} vs {ck}"),
        ));
    }
    let mut d_q_map = Tensor::zeros_like(q_map);
    let mut d_k_map = Tensor::zeros_like(k_map);
    if geo.pairs.is_empty() {
        return Ok(GeoLoss {
            loss: 0.0,
            d_q_map,
            d_k_map,
        });
    }
    if let Some(p) = geo.pairs.iter().find(|&&(i, j)| i >= hw_q || j >= hw_k) {
        return Err(Error::invalid("geo", format!("pair {p:?} outside the feature grids")));
    }
    let scale = 1.0 / geo.pairs.len() as f64;
    let mut sum = 0.0;
    for &(i, j) in &geo.pairs {
        let (cos, du, dv) = cosine_with_grad(&column(q_map, i), &column(k_map, j));
        sum += cos;
        add_to_column(&mut d_q_map, i, &du.iter().map(|g| -g * scale).collect::<Vec<_>>());
        add_to_column(&mut d_k_map, j, &dv.iter().map(|g| -g * scale).collect::<Vec<_>>());
    }
    Ok(GeoLoss {
        loss: -sum * scale,
        d_q_map,
        d_k_map,
    })
}

/// Negative cosine between a predicted query embedding and a key embedding.
/// Only the prediction receives a gradient.
pub fn simsiam_image_loss(predicted: &[f64], key: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predicted.len() != key.len() {
        return Err(Error::shape("simsiam_image_loss", "embedding lengths differ"));
    }
    let (cos, du, _) = cosine_with_grad(predicted, key);
    Ok((-cos, du.into_iter().map(|g| -g).collect()))
}

/// `−mean_{(i, j∈c_i)} cos(pred_q[i], p_k[j])`, no negatives.
///
/// `predicted_q_map` holds the predictor output at each query column (only
/// the columns named by `corr` are read). The key map is a constant, so the
/// returned gradient covers the prediction map only.
pub fn simsiam_set_loss(predicted_q_map: &Tensor, k_map: &Tensor, corr: &CorrespondenceSet) -> Result<MapLoss> {
    let (cq, hw_q) = channels_and_positions(predicted_q_map);
    let (ck, hw_k) = channels_and_positions(k_map);
    if cq != ck {
        return Err(Error::shape("simsiam_set_loss", format!("channel counts {cq} vs {ck}")));
    }
    corr.validate(hw_q, hw_k)?;
    let pairs = corr.pairs();
    if pairs.is_empty() {
        return Err(Error::invalid("correspondence", "no pairs"));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut sum = 0.0;
    let mut d_map = Tensor::zeros_like(predicted_q_map);
    for (i, j) in pairs {
        let (cos, du, _) = cosine_with_grad(&column(predicted_q_map, i), &column(k_map, j));
        sum += cos;
        add_to_column(&mut d_map, i, &du.iter().map(|g| -g * scale).collect::<Vec<_>>());
    }
    Ok(MapLoss {
        loss: -sum * scale,
        d_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{match_set2set, Correspondence, Strategy};
    use crate::numcore::{finite_difference_gradient, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_maps_under_identity_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Tensor::uniform(&[5, 4, 4], 1.0, &mut rng);
        let geo = GeoCorrespondence {
            pairs: (0..16).map(|i| (i, i)).collect(),
            overlap_fraction: 1.0,
        };
        let out = geo_consistency_loss(&p, &p, &geo).unwrap();
        assert!((out.loss + 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_pairs_give_zero() {
        let p = Tensor::full(&[2, 2, 2], 1.0);
        let geo = GeoCorrespondence {
            pairs: vec![],
            overlap_fraction: 0.0,
        };
        let out = geo_consistency_loss(&p, &p, &geo).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.d_q_map.max_abs(), 0.0);
    }

    #[test]
    fn geo_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let q = Tensor::uniform(&[4, 3, 3], 1.0, &mut rng);
            let k = Tensor::uniform(&[4, 3, 3], 1.0, &mut rng);
            let geo = GeoCorrespondence {
                pairs: vec![(0, 1), (4, 4), (8, 2), (3, 1)],
                overlap_fraction: 4.0 / 9.0,
            };
            let out = geo_consistency_loss(&q, &k, &geo).unwrap();
            let nq = finite_difference_gradient(|x| geo_consistency_loss(x, &k, &geo).unwrap().loss, &q, 1e-5).unwrap();
            let nk = finite_difference_gradient(|x| geo_consistency_loss(&q, x, &geo).unwrap().loss, &k, 1e-5).unwrap();
            assert!(relative_error(&out.d_q_map, &nq) < 1e-4);
            assert!(relative_error(&out.d_k_map, &nk) < 1e-4);
        }
    }

    #[test]
    fn simsiam_examples() {
        let p = Tensor::new(&[2, 1, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let diag = CorrespondenceSet {
            strategy: Strategy::Sort,
            entries: (0..2)
                .map(|i| Correspondence {
                    query: i,
                    keys: vec![i],
                    nn_added: None,
                })
                .collect(),
        };
        assert!((simsiam_set_loss(&p, &p, &diag).unwrap().loss + 1.0).abs() < 1e-15);
        let cross = CorrespondenceSet {
            strategy: Strategy::Sort,
            entries: vec![
                Correspondence {
                    query: 0,
                    keys: vec![1],
                    nn_added: None,
                },
                Correspondence {
                    query: 1,
                    keys: vec![0],
                    nn_added: None,
                },
            ],
        };
        assert_eq!(simsiam_set_loss(&p, &p, &cross).unwrap().loss, 0.0);
    }

    #[test]
    fn simsiam_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let q = Tensor::uniform(&[3, 3, 3], 1.0, &mut rng);
            let k = Tensor::uniform(&[3, 3, 3], 1.0, &mut rng);
            let corr = match_set2set(&[0, 4, 7], &[1, 2]).unwrap();
            let out = simsiam_set_loss(&q, &k, &corr).unwrap();
            let n = finite_difference_gradient(|x| simsiam_set_loss(x, &k, &corr).unwrap().loss, &q, 1e-5).unwrap();
            assert!(relative_error(&out.d_map, &n) < 1e-4);
        }
    }
}
