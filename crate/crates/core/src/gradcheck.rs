//! Finite-difference verification of every hand-written backward pass.
//!
//! Each component is checked on `cases` random instances with randomly
//! drawn shapes; for each instance the analytic gradient of a scalar probe
//! `L` is compared with central differences (step [`FD_EPSILON`]) using
//! [`relative_error`]. Layers are probed through `L = Σ r ⊙ y` with a
//! random upstream `r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    encode_backward, encode_for_backward, predict_backward, predict_rows, Architecture, EncoderParams, FeatureGrads,
};
use crate::error::Result;
use crate::matching::match_set2set_nn;
use crate::numcore::{
    conv2d, conv2d_backward, finite_difference_gradient, fully_connected, fully_connected_backward,
    global_average_pool, global_average_pool_backward, l2_normalize, l2_normalize_backward, relative_error, relu,
    relu_backward, NORM_EPSILON,
};
use crate::objectives::{
    geo_consistency_loss, info_nce_image, set_contrastive_loss, simsiam_image_loss, simsiam_set_loss, NegativeQueue,
};
use crate::seeds::{derive, Stream};
use crate::synthdata::GeoCorrespondence;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_EPSILON: f64 = 1e-5;
/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Every checked component, in report order.
pub const COMPONENTS: [&str; 12] = [
    "conv",
    "fc",
    "relu",
    "pool",
    "normalize",
    "predictor",
    "encoder",
    "info_nce",
    "set_loss",
    "geo",
    "simsiam_image",
    "simsiam_set",
];

/// Worst case over all instances of one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCheck {
    pub component: String,
    pub cases: usize,
    pub max_relative_error: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn queue(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<NegativeQueue> {
    let mut q = NegativeQueue::new(n, dim)?;
    q.push(&(0..n).map(|_| unit(dim, rng)).collect::<Vec<_>>())?;
    Ok(q)
}

fn worst(pairs: &[(&Tensor, &Tensor)]) -> f64 {
    pairs.iter().map(|(a, n)| relative_error(a, n)).fold(0.0, f64::max)
}

fn probe(y: &Tensor, r: &Tensor) -> f64 {
    y.dot(r)
}

fn check_conv(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, c_in, c_out) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
    let k = rng.gen_range(1..=3);
    let stride = rng.gen_range(1..=2);
    let pad = rng.gen_range(0..=1);
    let size = rng.gen_range(k.max(3)..=6);
    let x = random(&[n, c_in, size, size], rng);
    let w = random(&[c_out, c_in, k, k], rng);
    let b = random(&[c_out], rng);
    let y = conv2d(&x, &w, &b, stride, pad)?;
    let r = random(y.shape(), rng);
    let g = conv2d_backward(&x, &w, stride, pad, &r)?;
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| probe(&conv2d(x, w, b, stride, pad).expect("valid shapes"), &r);
    let dx = finite_difference_gradient(|t| f(t, &w, &b), &x, FD_EPSILON)?;
    let dw = finite_difference_gradient(|t| f(&x, t, &b), &w, FD_EPSILON)?;
    let db = finite_difference_gradient(|t| f(&x, &w, t), &b, FD_EPSILON)?;
    Ok(worst(&[
        (&g.d_input, &dx),
        (&g.d_params[0], &dw),
        (&g.d_params[1], &db),
    ]))
}

fn check_fc(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (n, d, e) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6));
    let x = random(&[n, d], rng);
    let w = random(&[d, e], rng);
    let b = random(&[e], rng);
    let r = random(&[n, e], rng);
    let g = fully_connected_backward(&x, &w, &r)?;
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| probe(&fully_connected(x, w, b).expect("valid shapes"), &r);
    let dx = finite_difference_gradient(|t| f(t, &w, &b), &x, FD_EPSILON)?;
    let dw = finite_difference_gradient(|t| f(&x, t, &b), &w, FD_EPSILON)?;
    let db = finite_difference_gradient(|t| f(&x, &w, t), &b, FD_EPSILON)?;
    Ok(worst(&[
        (&g.d_input, &dx),
        (&g.d_params[0], &dw),
        (&g.d_params[1], &db),
    ]))
}

fn check_relu(rng: &mut ChaCha8Rng) -> Result<f64> {
    let len = rng.gen_range(1..=20);
    // Keep away from the kink, where the derivative is undefined.
    let values: Vec<f64> = (0..len)
        .map(|_| {
            let m = rng.gen_range(1e-3..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    let x = Tensor::from_vec(values);
    let r = random(&[len], rng);
    let g = relu_backward(&x, &r)?;
    let n = finite_difference_gradient(|t| probe(&relu(t), &r), &x, FD_EPSILON)?;
    Ok(relative_error(&g, &n))
}

fn check_pool(rng: &mut ChaCha8Rng) -> Result<f64> {
    let shape = [
        rng.gen_range(1..=2),
        rng.gen_range(1..=3),
        rng.gen_range(1..=4),
        rng.gen_range(1..=4),
    ];
    let x = random(&shape, rng);
    let r = random(&[shape[0], shape[1]], rng);
    let g = global_average_pool_backward(&shape, &r)?;
    let n = finite_difference_gradient(
        |t| probe(&global_average_pool(t).expect("4-d input"), &r),
        &x,
        FD_EPSILON,
    )?;
    Ok(relative_error(&g, &n))
}

fn check_normalize(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = random(&[rng.gen_range(1..=3), rng.gen_range(1..=6)], rng);
    let r = random(x.shape(), rng);
    let g = l2_normalize_backward(&x, &r, NORM_EPSILON)?;
    let n = finite_difference_gradient(
        |t| probe(&l2_normalize(t, NORM_EPSILON).expect("2-d input"), &r),
        &x,
        FD_EPSILON,
    )?;
    Ok(relative_error(&g, &n))
}

fn check_predictor(rng: &mut ChaCha8Rng) -> Result<f64> {
    let params = EncoderParams::init(Architecture::tiny(), rng.gen());
    let dim = params.arch.embed_dim;
    let rows = random(&[rng.gen_range(1..=3), dim], rng);
    let r = random(rows.shape(), rng);
    let fwd = predict_rows(&params, &rows)?;
    let mut grads = params.zeros_like();
    let d_in = predict_backward(&params, &fwd, &r, &mut grads)?;
    let n_in = finite_difference_gradient(
        |t| probe(&predict_rows(&params, t).expect("valid").output, &r),
        &rows,
        FD_EPSILON,
    )?;
    let mut err = relative_error(&d_in, &n_in);
    let analytic = grads.predictor.expect("tiny architecture has a predictor");
    for layer in 0..2 {
        for which in 0..2 {
            let point = {
                let p = params.predictor.as_ref().expect("predictor");
                if which == 0 {
                    p[layer].weight.clone()
                } else {
                    p[layer].bias.clone()
                }
            };
            let numeric = finite_difference_gradient(
                |t| {
                    let mut p = params.clone();
                    let slot = &mut p.predictor.as_mut().expect("predictor")[layer];
                    if which == 0 {
                        slot.weight = t.clone();
                    } else {
                        slot.bias = t.clone();
                    }
                    probe(&predict_rows(&p, &rows).expect("valid").output, &r)
                },
                &point,
                FD_EPSILON,
            )?;
            let a = if which == 0 {
                &analytic[layer].weight
            } else {
                &analytic[layer].bias
            };
            err = err.max(relative_error(a, &numeric));
        }
    }
    Ok(err)
}

fn check_encoder(rng: &mut ChaCha8Rng) -> Result<f64> {
    let params = EncoderParams::init(Architecture::tiny(), rng.gen());
    let v = params.arch.input_size;
    let view = Tensor::from_fn(&[3, v, v], |_| rng.gen_range(0.0..1.0));
    let fwd = encode_for_backward(&params, &view)?;
    let r_set = random(fwd.features.p_set.shape(), rng);
    let r_img = random(fwd.features.p_img.shape(), rng);
    let r_z = random(fwd.features.z.shape(), rng);
    let grads = encode_backward(
        &params,
        &fwd,
        &FeatureGrads {
            d_z: Some(r_z.clone()),
            d_p_set: Some(r_set.clone()),
            d_p_img: Some(r_img.clone()),
        },
    )?;
    let objective = |p: &EncoderParams| {
        let f = encode_for_backward(p, &view).expect("valid view").features;
        probe(&f.z, &r_z) + probe(&f.p_set, &r_set) + probe(&f.p_img, &r_img)
    };
    let mut err: f64 = 0.0;
    let count = params.tensors().len();
    for idx in 0..count {
        let point = params.tensors()[idx].clone();
        let numeric = finite_difference_gradient(
            |t| {
                let mut p = params.clone();
                *p.tensors_mut()[idx] = t.clone();
                objective(&p)
            },
            &point,
            FD_EPSILON,
        )?;
        err = err.max(relative_error(grads.tensors()[idx], &numeric));
    }
    Ok(err)
}

fn check_info_nce(rng: &mut ChaCha8Rng) -> Result<f64> {
    let dim = rng.gen_range(2..=6);
    let q = queue(rng.gen_range(1..=8), dim, rng)?;
    let p_q = Tensor::from_vec(unit(dim, rng));
    let p_k = unit(dim, rng);
    let tau = rng.gen_range(0.1..1.0);
    let (_, g) = info_nce_image(p_q.data(), &p_k, &q, tau)?;
    let n = finite_difference_gradient(
        |t| info_nce_image(t.data(), &p_k, &q, tau).expect("valid").0,
        &p_q,
        FD_EPSILON,
    )?;
    Ok(relative_error(&Tensor::from_vec(g), &n))
}

fn check_set_loss(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (c, g) = (rng.gen_range(2..=4), rng.gen_range(2..=3));
    let q_map = random(&[c, g, g], rng);
    let k_map = random(&[c, g, g], rng);
    let omega_q: Vec<usize> = (0..g * g).filter(|_| rng.gen_bool(0.5)).chain([g * g - 1]).collect();
    let omega_k: Vec<usize> = (0..g * g).filter(|&j| j == 0 || rng.gen_bool(0.4)).collect();
    let corr = match_set2set_nn(&omega_q, &omega_k, &q_map, &k_map)?;
    let q = queue(rng.gen_range(1..=8), c, rng)?;
    let tau = rng.gen_range(0.1..1.0);
    let out = set_contrastive_loss(&q_map, &k_map, &corr, &q, tau)?;
    let n = finite_difference_gradient(
        |t| set_contrastive_loss(t, &k_map, &corr, &q, tau).expect("valid").loss,
        &q_map,
        FD_EPSILON,
    )?;
    Ok(relative_error(&out.d_map, &n))
}

fn check_geo(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (c, g) = (rng.gen_range(2..=4), rng.gen_range(2..=3));
    let q_map = random(&[c, g, g], rng);
    let k_map = random(&[c, g, g], rng);
    let mut pairs = Vec::new();
    for i in 0..g * g {
        if rng.gen_bool(0.7) {
            pairs.push((i, rng.gen_range(0..g * g)));
        }
    }
    let geo = GeoCorrespondence {
        overlap_fraction: pairs.len() as f64 / (g * g) as f64,
        pairs,
    };
    let out = geo_consistency_loss(&q_map, &k_map, &geo)?;
    let nq = finite_difference_gradient(
        |t| geo_consistency_loss(t, &k_map, &geo).expect("valid").loss,
        &q_map,
        FD_EPSILON,
    )?;
    let nk = finite_difference_gradient(
        |t| geo_consistency_loss(&q_map, t, &geo).expect("valid").loss,
        &k_map,
        FD_EPSILON,
    )?;
    Ok(worst(&[(&out.d_q_map, &nq), (&out.d_k_map, &nk)]))
}

fn check_simsiam_image(rng: &mut ChaCha8Rng) -> Result<f64> {
    let dim = rng.gen_range(2..=6);
    let p = random(&[dim], rng);
    let k = random(&[dim], rng);
    let (_, g) = simsiam_image_loss(p.data(), k.data())?;
    let n = finite_difference_gradient(
        |t| simsiam_image_loss(t.data(), k.data()).expect("valid").0,
        &p,
        FD_EPSILON,
    )?;
    Ok(relative_error(&Tensor::from_vec(g), &n))
}

fn check_simsiam_set(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (c, g) = (rng.gen_range(2..=4), rng.gen_range(2..=3));
    let q_map = random(&[c, g, g], rng);
    let k_map = random(&[c, g, g], rng);
    let omega_q: Vec<usize> = (0..g * g).filter(|&i| i == 1 || rng.gen_bool(0.5)).collect();
    let omega_k: Vec<usize> = (0..g * g).filter(|&j| j == 0 || rng.gen_bool(0.5)).collect();
    let corr = match_set2set_nn(&omega_q, &omega_k, &q_map, &k_map)?;
    let out = simsiam_set_loss(&q_map, &k_map, &corr)?;
    let n = finite_difference_gradient(
        |t| simsiam_set_loss(t, &k_map, &corr).expect("valid").loss,
        &q_map,
        FD_EPSILON,
    )?;
    Ok(relative_error(&out.d_map, &n))
}

fn check(component: &str, rng: &mut ChaCha8Rng) -> Result<f64> {
    match component {
        "conv" => check_conv(rng),
        "fc" => check_fc(rng),
        "relu" => check_relu(rng),
        "pool" => check_pool(rng),
        "normalize" => check_normalize(rng),
        "predictor" => check_predictor(rng),
        "encoder" => check_encoder(rng),
        "info_nce" => check_info_nce(rng),
        "set_loss" => check_set_loss(rng),
        "geo" => check_geo(rng),
        "simsiam_image" => check_simsiam_image(rng),
        "simsiam_set" => check_simsiam_set(rng),
        other => unreachable!("unknown component {other}"),
    }
}

/// Checks every component on `cases` instances derived from `seed`.
pub fn run_suite(seed: u64, cases: usize) -> Result<Vec<ComponentCheck>> {
    COMPONENTS
        .iter()
        .enumerate()
        .map(|(ci, &component)| {
            let mut max: f64 = 0.0;
            for case in 0..cases as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, Stream::Init, &[u64::MAX, ci as u64, case]));
                max = max.max(check(component, &mut rng)?);
            }
            Ok(ComponentCheck {
                component: component.to_string(),
                cases,
                max_relative_error: max,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_component_passes_a_few_cases() {
        for c in run_suite(11, 3).unwrap() {
            assert!(c.passed(), "{} {}", c.component, c.max_relative_error);
        }
    }
}
