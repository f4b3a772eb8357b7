use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{encode, EncoderParams};
use crate::error::{Error, Result};
use crate::seeds::{derive, Stream};
use crate::synthdata::{generate_scene, render_view, Scene, SceneSpec, ViewTransform};
use crate::tensor::{channels_and_positions, Tensor};

/// Settings of the softmax-regression probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of samples used for training; the rest is held out.
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 300,
            lr: 0.5,
            train_fraction: 0.8,
            split_seed: 0,
        }
    }
}

/// Scene `index` of the probe set for `eval_seed` (disjoint from the
/// held-out matching scenes and from all training scenes).
pub fn probe_scene(eval_seed: u64, index: u64) -> Result<Scene> {
    generate_scene(
        derive(eval_seed, Stream::HeldOutScene, &[1, index]),
        &SceneSpec::default(),
    )
}

/// Spatially averaged backbone map `z` of each scene's full, unaugmented
/// view, one row per scene.
pub fn probe_features(params: &EncoderParams, scenes: &[Scene]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = scenes
        .par_iter()
        .map(|scene| {
            let view = render_view(scene, &ViewTransform::identity(scene.size(), params.arch.input_size))?;
            let z = encode(params, &view)?.z;
            let (c, hw) = channels_and_positions(&z);
            Ok((0..c)
                .map(|ch| z.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
                .collect())
        })
        .collect::<Result<_>>()?;
    let dim = rows[0].len();
    Tensor::new(&[rows.len(), dim], rows.concat())
}

/// Held-out accuracy of multinomial logistic regression trained by
/// full-batch gradient descent on frozen `features` (`N×D`).
///
/// The split is a seeded shuffle; features are standardized with the
/// training split's statistics; weights start at zero.
pub fn linear_probe(features: &Tensor, labels: &[usize], config: &ProbeConfig) -> Result<f64> {
    let [n, d] = features.dims2("linear_probe")?;
    if labels.len() != n {
        return Err(Error::shape(
            "linear_probe",
            format!("{n} feature rows but {} labels", labels.len()),
        ));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::invalid("train_fraction", "must lie strictly between 0 and 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.split_seed));
    let n_train = ((n as f64) * config.train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(
            "features",
            format!("{n} samples cannot be split {}", config.train_fraction),
        ));
    }
    let (train, test) = order.split_at(n_train);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut present = vec![false; classes];
    for &i in train {
        present[labels[i]] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::invalid("labels", "the training split holds a single class"));
    }

    let x = features.data();
    let mut mean = vec![0.0; d];
    let mut std = vec![0.0; d];
    for &i in train {
        for f in 0..d {
            mean[f] += x[i * d + f];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n_train as f64);
    for &i in train {
        for f in 0..d {
            std[f] += (x[i * d + f] - mean[f]).powi(2);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / n_train as f64).sqrt().max(1e-8));
    let standardized = |i: usize| -> Vec<f64> { (0..d).map(|f| (x[i * d + f] - mean[f]) / std[f]).collect() };
    let train_x: Vec<Vec<f64>> = train.iter().map(|&i| standardized(i)).collect();

    let mut w = vec![0.0; d * classes];
    let mut b = vec![0.0; classes];
    let logits = |w: &[f64], b: &[f64], row: &[f64]| -> Vec<f64> {
        (0..classes)
            .map(|k| b[k] + row.iter().enumerate().map(|(f, v)| v * w[f * classes + k]).sum::<f64>())
            .collect()
    };
    for _ in 0..config.epochs {
        let mut gw = vec![0.0; d * classes];
        let mut gb = vec![0.0; classes];
        for (row, &i) in train_x.iter().zip(train) {
            let z = logits(&w, &b, row);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exp.iter().sum();
            for k in 0..classes {
                let g = exp[k] / sum - if k == labels[i] { 1.0 } else { 0.0 };
                gb[k] += g;
                for f in 0..d {
                    gw[f * classes + k] += g * row[f];
                }
            }
        }
        let scale = config.lr / n_train as f64;
        w.iter_mut().zip(&gw).for_each(|(wv, g)| *wv -= scale * g);
        b.iter_mut().zip(&gb).for_each(|(bv, g)| *bv -= scale * g);
    }

    let correct = test
        .iter()
        .filter(|&&i| {
            let z = logits(&w, &b, &standardized(i));
            let pred = (0..classes).fold(0, |best, k| if z[k] > z[best] { k } else { best });
            pred == labels[i]
        })
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Probe accuracy of `params` on `n_scenes` probe scenes labelled by their
/// dominant shape class.
pub fn probe_accuracy(params: &EncoderParams, n_scenes: usize, eval_seed: u64, config: &ProbeConfig) -> Result<f64> {
    let scenes: Vec<Scene> = (0..n_scenes as u64)
        .into_par_iter()
        .map(|i| probe_scene(eval_seed, i))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = scenes.iter().map(|s| s.class_label.index()).collect();
    let features = probe_features(params, &scenes)?;
    linear_probe(&features, &labels, config)
}
