use rayon::prelude::*;

use super::config::{Framework, LossTerms, TrainConfig};
use super::optim::{cosine_lr, sgd_step};
use super::TrainState;
use crate::attention::AttentionMap;
use crate::encoder::{
    encode, encode_backward, encode_for_backward, predict_backward, predict_rows, EncoderParams, FeatureGrads,
};
use crate::error::{Error, Result};
use crate::matching::{match_views, MatchInputs};
use crate::numcore::{l2_normalize, l2_normalize_backward, NORM_EPSILON};
use crate::objectives::{
    geo_consistency_loss, info_nce_image, set_contrastive_loss, simsiam_image_loss, simsiam_set_loss, term_weights,
    LossReport, NegativeQueue,
};
use crate::seeds::{derive, Stream};
use crate::synthdata::{
    generate_scene, geometry_correspondence, sample_view_pair, AugmentationPolicy, Scene, SceneSpec, ViewPair,
};
use crate::tensor::{channels_and_positions, column, Tensor};

/// Scene `index` of a deterministic scene stream and two augmented views of it.
pub(crate) fn scene_view_pair(
    seed: u64,
    scene_stream: Stream,
    view_stream: Stream,
    index: &[u64],
) -> Result<(Scene, ViewPair)> {
    let scene = generate_scene(derive(seed, scene_stream, index), &SceneSpec::default())?;
    let pair = sample_view_pair(&scene, derive(seed, view_stream, index), &AugmentationPolicy::default())?;
    Ok((scene, pair))
}

/// The batch consumed by step `step` of a run seeded with `config.seed`.
pub fn training_batch(config: &TrainConfig, step: u64) -> Result<Vec<ViewPair>> {
    (0..config.batch as u64)
        .into_par_iter()
        .map(|b| Ok(scene_view_pair(config.seed, Stream::TrainScene, Stream::TrainView, &[step, b])?.1))
        .collect()
}

/// The detached batch that pre-fills the negative queues.
pub fn warmup_batch(config: &TrainConfig) -> Result<Vec<ViewPair>> {
    (0..config.batch as u64)
        .into_par_iter()
        .map(|b| Ok(scene_view_pair(config.seed, Stream::Warmup, Stream::Warmup, &[b])?.1))
        .collect()
}

/// Embeddings a key view contributes to the two queues: the image-level
/// embedding and the L2-normalized spatial mean of the set-level map.
pub(crate) fn key_embeddings(key: &EncoderParams, view: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let f = encode(key, view)?;
    Ok((f.p_img.data().to_vec(), pooled_set_embedding(&f.p_set)))
}

fn pooled_set_embedding(p_set: &Tensor) -> Vec<f64> {
    let (c, hw) = channels_and_positions(p_set);
    let mean: Vec<f64> = (0..c)
        .map(|ch| p_set.data()[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64)
        .collect();
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPSILON);
    mean.into_iter().map(|v| v / norm).collect()
}

fn map_to_rows(map: &Tensor) -> Result<Tensor> {
    let (c, hw) = channels_and_positions(map);
    let mut rows = Vec::with_capacity(c * hw);
    for j in 0..hw {
        rows.extend(column(map, j));
    }
    Tensor::new(&[hw, c], rows)
}

fn rows_to_map(rows: &Tensor, map_shape: &[usize]) -> Result<Tensor> {
    let [hw, c] = rows.dims2("rows_to_map")?;
    let mut data = vec![0.0; c * hw];
    for j in 0..hw {
        for ch in 0..c {
            data[ch * hw + j] = rows.data()[j * c + ch];
        }
    }
    Tensor::new(map_shape, data)
}

/// Weights `(image, set, geo)` for the configured objective.
fn weights(config: &TrainConfig) -> Result<(f64, f64, f64)> {
    match config.terms {
        LossTerms::Weighted => term_weights(config.lambda, config.enable_geo),
        LossTerms::ImageOnly => Ok((1.0, 0.0, 0.0)),
        LossTerms::SetOnly => Ok((0.0, 1.0, 0.0)),
    }
}

struct DirectionOutput {
    grads: EncoderParams,
    report: LossReport,
    key_img: Vec<f64>,
    key_set: Vec<f64>,
}

struct Snapshot<'a> {
    query: &'a EncoderParams,
    key: &'a EncoderParams,
    img_queue: &'a NegativeQueue,
    set_queue: &'a NegativeQueue,
    config: &'a TrainConfig,
}

/// Forward and backward for one ordered view pair. Only the query branch
/// receives gradient; the key views are encoded as constants.
fn direction(
    snap: &Snapshot<'_>,
    view_q: &Tensor,
    view_k: &Tensor,
    pair: &ViewPair,
    swapped: bool,
    match_seed: u64,
) -> Result<DirectionOutput> {
    let config = snap.config;
    let key_params = match config.framework {
        Framework::Moco => snap.key,
        Framework::SimSiam => snap.query,
    };
    let fwd = encode_for_backward(snap.query, view_q)?;
    let fq = &fwd.features;
    let fk = encode(key_params, view_k)?;

    let att_q = AttentionMap::compute(&fq.z, config.delta)?;
    let att_k = AttentionMap::compute(&fk.z, config.delta)?;
    let inputs = MatchInputs {
        omega_q: &att_q.selected,
        omega_k: &att_k.selected,
        rescaled_q: &att_q.rescaled,
        rescaled_k: &att_k.rescaled,
        z_q: &fq.z,
        z_k: &fk.z,
        p_q: &fq.p_set,
        p_k: &fk.p_set,
    };
    let corr = match_views(config.strategy, &inputs, match_seed)?;

    let (w_img, w_set, w_geo) = weights(config)?;
    let mut grads = snap.query.zeros_like();
    let mut d_p_img: Option<Tensor> = None;
    let mut d_p_set: Option<Tensor> = None;

    let l_img = match config.framework {
        Framework::Moco => {
            let (loss, g) = info_nce_image(fq.p_img.data(), fk.p_img.data(), snap.img_queue, config.tau)?;
            if w_img != 0.0 {
                d_p_img = Some(Tensor::from_vec(g.into_iter().map(|v| v * w_img).collect()));
            }
            loss
        }
        Framework::SimSiam => {
            let rows = fq.p_img.clone().reshape(&[1, fq.p_img.len()])?;
            let pred = predict_rows(snap.query, &rows)?;
            let (loss, g) = simsiam_image_loss(pred.output.data(), fk.p_img.data())?;
            if w_img != 0.0 {
                let d_out = Tensor::new(&[1, g.len()], g.into_iter().map(|v| v * w_img).collect())?;
                let d_in = predict_backward(snap.query, &pred, &d_out, &mut grads)?;
                d_p_img = Some(d_in.reshape(&[fq.p_img.len()])?);
            }
            loss
        }
    };

    let l_set = match config.framework {
        Framework::Moco => {
            let out = set_contrastive_loss(&fq.p_set, &fk.p_set, &corr, snap.set_queue, config.tau)?;
            if w_set != 0.0 {
                let mut d = out.d_map;
                d.scale(w_set);
                d_p_set = Some(d);
            }
            out.loss
        }
        Framework::SimSiam => {
            let raw_rows = map_to_rows(&fq.p_set)?;
            let unit_rows = l2_normalize(&raw_rows, NORM_EPSILON)?;
            let pred = predict_rows(snap.query, &unit_rows)?;
            let pred_map = rows_to_map(&pred.output, fq.p_set.shape())?;
            let out = simsiam_set_loss(&pred_map, &fk.p_set, &corr)?;
            if w_set != 0.0 {
                let mut d_map = out.d_map;
                d_map.scale(w_set);
                let d_pred_rows = map_to_rows(&d_map)?;
                let d_unit = predict_backward(snap.query, &pred, &d_pred_rows, &mut grads)?;
                let d_raw = l2_normalize_backward(&raw_rows, &d_unit, NORM_EPSILON)?;
                d_p_set = Some(rows_to_map(&d_raw, fq.p_set.shape())?);
            }
            out.loss
        }
    };

    let l_geo = if config.enable_geo {
        let (t_q, t_k) = if swapped {
            (&pair.t_k, &pair.t_q)
        } else {
            (&pair.t_q, &pair.t_k)
        };
        let geo = geometry_correspondence(t_q, t_k, snap.query.arch.grid());
        let out = geo_consistency_loss(&fq.p_set, &fk.p_set, &geo)?;
        if w_geo != 0.0 {
            let mut d = out.d_q_map;
            d.scale(w_geo);
            match &mut d_p_set {
                Some(acc) => acc.add_scaled(&d, 1.0)?,
                None => d_p_set = Some(d),
            }
        }
        Some(out.loss)
    } else {
        None
    };

    let backbone = encode_backward(
        snap.query,
        &fwd,
        &FeatureGrads {
            d_z: None,
            d_p_set,
            d_p_img,
        },
    )?;
    let predictor = grads.predictor.take();
    grads = backbone;
    if predictor.is_some() {
        grads.predictor = predictor;
    }

    let mut total = w_img * l_img + w_set * l_set;
    if let Some(g) = l_geo {
        total += w_geo * (g + 1.0);
    }
    Ok(DirectionOutput {
        grads,
        report: LossReport {
            l_img,
            l_set,
            l_geo: l_geo.unwrap_or(0.0),
            total,
            pair_count: corr.pair_count(),
        },
        key_img: fk.p_img.data().to_vec(),
        key_set: pooled_set_embedding(&fk.p_set),
    })
}

struct ImageOutput {
    grads: EncoderParams,
    report: LossReport,
    keys: Vec<(Vec<f64>, Vec<f64>)>,
}

fn image(snap: &Snapshot<'_>, pair: &ViewPair, step: u64, b: u64) -> Result<ImageOutput> {
    let seed = snap.config.seed;
    let fwd = direction(
        snap,
        &pair.view_q,
        &pair.view_k,
        pair,
        false,
        derive(seed, Stream::TrainMatch, &[step, b, 0]),
    )?;
    if !snap.config.enable_sym {
        return Ok(ImageOutput {
            grads: fwd.grads,
            report: fwd.report,
            keys: vec![(fwd.key_img, fwd.key_set)],
        });
    }
    let bwd = direction(
        snap,
        &pair.view_k,
        &pair.view_q,
        pair,
        true,
        derive(seed, Stream::TrainMatch, &[step, b, 1]),
    )?;
    let mut grads = fwd.grads;
    grads.add_scaled(&bwd.grads, 1.0)?;
    for t in grads.tensors_mut() {
        t.scale(0.5);
    }
    Ok(ImageOutput {
        grads,
        report: crate::objectives::average_reports(&fwd.report, &bwd.report),
        keys: vec![(fwd.key_img, fwd.key_set), (bwd.key_img, bwd.key_set)],
    })
}

/// One optimization step on `batch`, returning the next state and the
/// batch-mean losses.
///
/// Order: encode both views, attention sets, matching, losses, backward
/// into the query branch, SGD, EMA update of the key branch, then the key
/// embeddings are pushed to both queues. Images are processed in parallel
/// and reduced in ascending batch order, so results do not depend on
/// thread scheduling.
pub fn train_step(state: &TrainState, batch: &[ViewPair]) -> Result<(TrainState, LossReport)> {
    let step = state.step;
    train_step_inner(state, batch).map_err(|e| Error::Step {
        step,
        source: Box::new(e),
    })
}

fn train_step_inner(state: &TrainState, batch: &[ViewPair]) -> Result<(TrainState, LossReport)> {
    let config = &state.config;
    if batch.is_empty() {
        return Err(Error::invalid("batch", "empty batch"));
    }
    if state.step >= config.steps {
        return Err(Error::invalid(
            "steps",
            format!(
                "the run is configured for {} steps and has completed them",
                config.steps
            ),
        ));
    }
    let lr = cosine_lr(state.step, config.steps, config.base_lr)?;
    let snap = Snapshot {
        query: &state.query,
        key: &state.key,
        img_queue: &state.img_queue,
        set_queue: &state.set_queue,
        config,
    };
    let outputs: Vec<ImageOutput> = batch
        .par_iter()
        .enumerate()
        .map(|(b, pair)| image(&snap, pair, state.step, b as u64))
        .collect::<Result<_>>()?;

    let n = outputs.len() as f64;
    let mut grads = state.query.zeros_like();
    let mut report = LossReport::default();
    for out in &outputs {
        grads.add_scaled(&out.grads, 1.0)?;
        report.l_img += out.report.l_img;
        report.l_set += out.report.l_set;
        report.l_geo += out.report.l_geo;
        report.total += out.report.total;
        report.pair_count += out.report.pair_count;
    }
    for t in grads.tensors_mut() {
        t.scale(1.0 / n);
    }
    report.l_img /= n;
    report.l_set /= n;
    report.l_geo /= n;
    report.total /= n;
    if !grads.is_finite() || !report.total.is_finite() {
        return Err(Error::NonFinite {
            context: "batch gradient or loss".into(),
        });
    }

    let (query, optimizer) = sgd_step(
        &state.query,
        &grads,
        &state.optimizer,
        lr,
        config.sgd_momentum,
        config.weight_decay,
    )?;
    let key = crate::encoder::momentum_update(&query, &state.key, config.ema_m)?;
    let mut img_queue = state.img_queue.clone();
    let mut set_queue = state.set_queue.clone();
    let keys: Vec<&(Vec<f64>, Vec<f64>)> = outputs.iter().flat_map(|o| &o.keys).collect();
    img_queue.push(&keys.iter().map(|k| &k.0).collect::<Vec<_>>())?;
    set_queue.push(&keys.iter().map(|k| &k.1).collect::<Vec<_>>())?;

    Ok((
        TrainState {
            config: config.clone(),
            query,
            key,
            optimizer,
            img_queue,
            set_queue,
            step: state.step + 1,
        },
        report,
    ))
}
