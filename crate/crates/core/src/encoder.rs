//! Two-branch encoder: a small strided conv backbone `f`, an image-level
//! projector `g_img` (FC–ReLU–FC on the pooled map), a set-level projector
//! `g_set` (1×1 conv–ReLU–1×1 conv on the spatial map) and an optional
//! predictor head for the SimSiam framework.
//!
//! The query branch is trained by backprop; the key branch is a separate
//! [`EncoderParams`] value updated only through [`momentum_update`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numcore::{
    conv2d, conv2d_backward, conv2d_output_size, fully_connected, fully_connected_backward, global_average_pool,
    global_average_pool_backward, l2_normalize, l2_normalize_backward, relu, relu_backward, NORM_EPSILON,
};
use crate::tensor::Tensor;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

/// Views in `[0, 1]` are standardized as `(x − INPUT_MEAN) / INPUT_STD`
/// before the first convolution.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

/// Layer widths of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_size: usize,
    pub backbone_channels: [usize; 3],
    pub projector_hidden: usize,
    pub embed_dim: usize,
    pub with_predictor: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_size: 32,
            backbone_channels: [16, 32, 64],
            projector_hidden: 64,
            embed_dim: 32,
            with_predictor: false,
        }
    }
}

impl Architecture {
    /// A very small network for exhaustive gradient checks.
    pub fn tiny() -> Self {
        Architecture {
            input_size: 8,
            backbone_channels: [3, 4, 5],
            projector_hidden: 4,
            embed_dim: 3,
            with_predictor: true,
        }
    }

    /// Side length of the backbone's output grid.
    pub fn grid(&self) -> usize {
        (0..3).fold(self.input_size, |s, _| conv2d_output_size(s, KERNEL, STRIDE, PAD))
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone_channels[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    /// `O×I×kH×kW`.
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `D×E`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv {
    fn init(out: usize, inp: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / (inp * k * k) as f64).sqrt();
        Conv {
            kernel: Tensor::uniform(&[out, inp, k, k], bound, rng),
            bias: Tensor::uniform(&[out], bound, rng),
        }
    }
}

impl Dense {
    fn init(inp: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / inp as f64).sqrt();
        Dense {
            weight: Tensor::uniform(&[inp, out], bound, rng),
            bias: Tensor::uniform(&[out], bound, rng),
        }
    }
}

/// All parameters of one encoder branch. Gradients and optimizer velocities
/// reuse this type, so every per-parameter operation walks the same named
/// list.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub arch: Architecture,
    pub backbone: [Conv; 3],
    pub img_proj: [Dense; 2],
    pub set_proj: [Conv; 2],
    pub predictor: Option<[Dense; 2]>,
}

impl EncoderParams {
    /// Uniform `[-a, a]` initialization with `a = sqrt(1/fan_in)`.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = arch.backbone_channels;
        let (h, e) = (arch.projector_hidden, arch.embed_dim);
        let backbone = [
            Conv::init(c1, 3, KERNEL, &mut rng),
            Conv::init(c2, c1, KERNEL, &mut rng),
            Conv::init(c3, c2, KERNEL, &mut rng),
        ];
        let img_proj = [Dense::init(c3, h, &mut rng), Dense::init(h, e, &mut rng)];
        let set_proj = [Conv::init(h, c3, 1, &mut rng), Conv::init(e, h, 1, &mut rng)];
        let predictor = arch
            .with_predictor
            .then(|| [Dense::init(e, e, &mut rng), Dense::init(e, e, &mut rng)]);
        EncoderParams {
            arch,
            backbone,
            img_proj,
            set_proj,
            predictor,
        }
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        out
    }

    /// Parameter tensors with stable names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{i}.kernel"), &c.kernel));
            out.push((format!("backbone.{i}.bias"), &c.bias));
        }
        for (i, d) in self.img_proj.iter().enumerate() {
            out.push((format!("img_proj.{i}.weight"), &d.weight));
            out.push((format!("img_proj.{i}.bias"), &d.bias));
        }
        for (i, c) in self.set_proj.iter().enumerate() {
            out.push((format!("set_proj.{i}.kernel"), &c.kernel));
            out.push((format!("set_proj.{i}.bias"), &c.bias));
        }
        if let Some(pred) = &self.predictor {
            for (i, d) in pred.iter().enumerate() {
                out.push((format!("predictor.{i}.weight"), &d.weight));
                out.push((format!("predictor.{i}.bias"), &d.bias));
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable tensors in the order of [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for c in &mut self.backbone {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        for d in &mut self.img_proj {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        for c in &mut self.set_proj {
            out.push(&mut c.kernel);
            out.push(&mut c.bias);
        }
        if let Some(pred) = &mut self.predictor {
            for d in pred {
                out.push(&mut d.weight);
                out.push(&mut d.bias);
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_layout(&self, other: &EncoderParams) -> bool {
        let a = self.named_tensors();
        let b = other.named_tensors();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape())
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &EncoderParams, alpha: f64) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::shape("EncoderParams::add_scaled", "parameter layouts differ"));
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, alpha)?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Per-view encoder outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePack {
    /// Backbone map, `C×H_f×W_f`.
    pub z: Tensor,
    /// Set-level projection, `C′×H_f×W_f`.
    pub p_set: Tensor,
    /// Pooled, projected, L2-normalized embedding of length `C′`.
    pub p_img: Tensor,
}

/// Every intermediate of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderForward {
    input: Tensor,
    pre: [Tensor; 3],
    act: [Tensor; 3],
    set_hidden_pre: Tensor,
    set_hidden: Tensor,
    pooled: Tensor,
    img_hidden_pre: Tensor,
    img_hidden: Tensor,
    img_raw: Tensor,
    pub features: FeaturePack,
}

/// Upstream gradients flowing into an encoder's outputs. `None` means the
/// output does not feed the objective.
#[derive(Debug, Clone, Default)]
pub struct FeatureGrads {
    pub d_z: Option<Tensor>,
    pub d_p_set: Option<Tensor>,
    /// Gradient with respect to the normalized `p_img`.
    pub d_p_img: Option<Tensor>,
}

fn strip_batch(t: &Tensor) -> Result<Tensor> {
    let shape = t.shape()[1..].to_vec();
    t.clone().reshape(&shape)
}

fn add_batch(t: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(t.shape());
    t.clone().reshape(&shape)
}

/// Runs both projectors on one `3×V×V` view.
pub fn encode(params: &EncoderParams, view: &Tensor) -> Result<FeaturePack> {
    Ok(encode_for_backward(params, view)?.features)
}

/// [`encode`], keeping the intermediates needed by [`encode_backward`].
pub fn encode_for_backward(params: &EncoderParams, view: &Tensor) -> Result<EncoderForward> {
    let v = params.arch.input_size;
    view.expect_shape("encode", &[3, v, v])?;
    let input = add_batch(&view.map(|x| (x - INPUT_MEAN) / INPUT_STD))?;

    let mut pre: Vec<Tensor> = Vec::with_capacity(3);
    let mut act: Vec<Tensor> = Vec::with_capacity(3);
    let mut x = input.clone();
    for layer in &params.backbone {
        let y = conv2d(&x, &layer.kernel, &layer.bias, STRIDE, PAD)?;
        x = relu(&y);
        pre.push(y);
        act.push(x.clone());
    }
    let z4 = x;

    let set_hidden_pre = conv2d(&z4, &params.set_proj[0].kernel, &params.set_proj[0].bias, 1, 0)?;
    let set_hidden = relu(&set_hidden_pre);
    let p_set4 = conv2d(&set_hidden, &params.set_proj[1].kernel, &params.set_proj[1].bias, 1, 0)?;

    let pooled = global_average_pool(&z4)?;
    let img_hidden_pre = fully_connected(&pooled, &params.img_proj[0].weight, &params.img_proj[0].bias)?;
    let img_hidden = relu(&img_hidden_pre);
    let img_raw = fully_connected(&img_hidden, &params.img_proj[1].weight, &params.img_proj[1].bias)?;
    let p_img = l2_normalize(&img_raw, NORM_EPSILON)?;

    let features = FeaturePack {
        z: strip_batch(&z4)?,
        p_set: strip_batch(&p_set4)?,
        p_img: strip_batch(&p_img)?,
    };
    features.z.ensure_finite("encoder output z")?;
    features.p_set.ensure_finite("encoder output p_set")?;
    features.p_img.ensure_finite("encoder output p_img")?;

    let pre: [Tensor; 3] = pre.try_into().expect("three backbone layers");
    let act: [Tensor; 3] = act.try_into().expect("three backbone layers");
    Ok(EncoderForward {
        input,
        pre,
        act,
        set_hidden_pre,
        set_hidden,
        pooled,
        img_hidden_pre,
        img_hidden,
        img_raw,
        features,
    })
}

/// Backpropagates output gradients into a parameter-shaped gradient.
/// Predictor gradients, if the branch has a predictor, are left at zero.
pub fn encode_backward(params: &EncoderParams, fwd: &EncoderForward, grads: &FeatureGrads) -> Result<EncoderParams> {
    let mut out = params.zeros_like();
    let z_shape = fwd.act[2].shape().to_vec();
    let mut d_z = match &grads.d_z {
        Some(d) => {
            d.expect_shape("encode_backward d_z", fwd.features.z.shape())?;
            d.clone().reshape(&z_shape)?
        }
        None => Tensor::zeros(&z_shape),
    };

    if let Some(d_p) = &grads.d_p_set {
        d_p.expect_shape("encode_backward d_p_set", fwd.features.p_set.shape())?;
        let d_p4 = add_batch(d_p)?;
        let g1 = conv2d_backward(&fwd.set_hidden, &params.set_proj[1].kernel, 1, 0, &d_p4)?;
        let d_hidden = relu_backward(&fwd.set_hidden_pre, &g1.d_input)?;
        let g0 = conv2d_backward(&fwd.act[2], &params.set_proj[0].kernel, 1, 0, &d_hidden)?;
        d_z.add_scaled(&g0.d_input, 1.0)?;
        let [k1, b1] = take2(g1.d_params);
        let [k0, b0] = take2(g0.d_params);
        out.set_proj[1] = Conv { kernel: k1, bias: b1 };
        out.set_proj[0] = Conv { kernel: k0, bias: b0 };
    }

    if let Some(d_p) = &grads.d_p_img {
        d_p.expect_shape("encode_backward d_p_img", fwd.features.p_img.shape())?;
        let d_norm = add_batch(d_p)?;
        let d_raw = l2_normalize_backward(&fwd.img_raw, &d_norm, NORM_EPSILON)?;
        let g1 = fully_connected_backward(&fwd.img_hidden, &params.img_proj[1].weight, &d_raw)?;
        let d_hidden = relu_backward(&fwd.img_hidden_pre, &g1.d_input)?;
        let g0 = fully_connected_backward(&fwd.pooled, &params.img_proj[0].weight, &d_hidden)?;
        let d_pool = global_average_pool_backward(&z_shape, &g0.d_input)?;
        d_z.add_scaled(&d_pool, 1.0)?;
        let [w1, b1] = take2(g1.d_params);
        let [w0, b0] = take2(g0.d_params);
        out.img_proj[1] = Dense { weight: w1, bias: b1 };
        out.img_proj[0] = Dense { weight: w0, bias: b0 };
    }

    let mut upstream = d_z;
    for layer in (0..3).rev() {
        let d_pre = relu_backward(&fwd.pre[layer], &upstream)?;
        let input = if layer == 0 { &fwd.input } else { &fwd.act[layer - 1] };
        let g = conv2d_backward(input, &params.backbone[layer].kernel, STRIDE, PAD, &d_pre)?;
        let [k, b] = take2(g.d_params);
        out.backbone[layer] = Conv { kernel: k, bias: b };
        upstream = g.d_input;
    }
    Ok(out)
}

fn take2(v: Vec<Tensor>) -> [Tensor; 2] {
    v.try_into().expect("layer has two parameter tensors")
}

/// EMA update of the key branch: `key ← m·key + (1−m)·query`, elementwise.
pub fn momentum_update(query: &EncoderParams, key: &EncoderParams, m: f64) -> Result<EncoderParams> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid("m", format!("momentum must lie in [0, 1], got {m}")));
    }
    if !query.same_layout(key) {
        return Err(Error::shape("momentum_update", "query and key layouts differ"));
    }
    let mut out = key.clone();
    for (k, q) in out.tensors_mut().into_iter().zip(query.tensors()) {
        for (kv, qv) in k.data_mut().iter_mut().zip(q.data()) {
            *kv = m * *kv + (1.0 - m) * qv;
        }
    }
    Ok(out)
}

/// Intermediates of a predictor pass over a batch of row embeddings.
#[derive(Debug, Clone)]
pub struct PredictorForward {
    input: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    raw: Tensor,
    /// `N×C′`, rows L2-normalized.
    pub output: Tensor,
}

fn predictor_layers(params: &EncoderParams) -> Result<&[Dense; 2]> {
    params
        .predictor
        .as_ref()
        .ok_or_else(|| Error::invalid("predictor", "the SimSiam framework needs a predictor head"))
}

/// FC–ReLU–FC followed by L2 normalization, applied to each row of `N×C′`.
pub fn predict_rows(params: &EncoderParams, rows: &Tensor) -> Result<PredictorForward> {
    let pred = predictor_layers(params)?;
    let hidden_pre = fully_connected(rows, &pred[0].weight, &pred[0].bias)?;
    let hidden = relu(&hidden_pre);
    let raw = fully_connected(&hidden, &pred[1].weight, &pred[1].bias)?;
    let output = l2_normalize(&raw, NORM_EPSILON)?;
    Ok(PredictorForward {
        input: rows.clone(),
        hidden_pre,
        hidden,
        raw,
        output,
    })
}

/// Predictor applied to a single embedding of length `C′`.
pub fn predict(params: &EncoderParams, embedding: &Tensor) -> Result<Tensor> {
    let rows = embedding.clone().reshape(&[1, embedding.len()])?;
    let out = predict_rows(params, &rows)?.output;
    out.reshape(&[embedding.len()])
}

/// Backward of [`predict_rows`]: returns the input gradient and accumulates
/// the predictor's parameter gradients into `grads`.
pub fn predict_backward(
    params: &EncoderParams,
    fwd: &PredictorForward,
    d_output: &Tensor,
    grads: &mut EncoderParams,
) -> Result<Tensor> {
    let pred = predictor_layers(params)?;
    let d_raw = l2_normalize_backward(&fwd.raw, d_output, NORM_EPSILON)?;
    let g1 = fully_connected_backward(&fwd.hidden, &pred[1].weight, &d_raw)?;
    let d_hidden = relu_backward(&fwd.hidden_pre, &g1.d_input)?;
    let g0 = fully_connected_backward(&fwd.input, &pred[0].weight, &d_hidden)?;
    let slot = grads
        .predictor
        .as_mut()
        .ok_or_else(|| Error::shape("predict_backward", "gradient buffer has no predictor"))?;
    let [w1, b1] = take2(g1.d_params);
    let [w0, b0] = take2(g0.d_params);
    slot[1].weight.add_scaled(&w1, 1.0)?;
    slot[1].bias.add_scaled(&b1, 1.0)?;
    slot[0].weight.add_scaled(&w0, 1.0)?;
    slot[0].bias.add_scaled(&b0, 1.0)?;
    Ok(g0.d_input)
}
