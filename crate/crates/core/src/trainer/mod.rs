//! Pretraining: optimizer, learning-rate schedule, the training step and
//! persistence of the full training state.

mod config;
mod optim;
mod step;

use std::io::Write;
use std::path::Path;

pub use config::{Framework, LossTerms, TrainConfig};
pub use optim::{cosine_lr, sgd_step, OptimizerState};
pub(crate) use step::{key_embeddings, scene_view_pair};
pub use step::{train_step, training_batch, warmup_batch};

use crate::checkpoint::{mismatch, Container};
use crate::encoder::{Architecture, EncoderParams};
use crate::error::{Error, Result};
use crate::objectives::{LossReport, NegativeQueue};
use crate::seeds::{derive, Stream};
use crate::tensor::Tensor;

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub query: EncoderParams,
    pub key: EncoderParams,
    pub optimizer: OptimizerState,
    pub img_queue: NegativeQueue,
    pub set_queue: NegativeQueue,
    /// Number of completed steps.
    pub step: u64,
}

impl TrainState {
    /// Fresh state: seeded query initialization, key branch copied from it,
    /// zero velocity and both queues pre-filled from one detached batch.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let arch = config.architecture();
        let query = EncoderParams::init(arch, derive(config.seed, Stream::Init, &[]));
        let key = query.clone();
        let mut img_queue = NegativeQueue::new(config.queue_capacity, arch.embed_dim)?;
        let mut set_queue = NegativeQueue::new(config.queue_capacity, arch.embed_dim)?;
        let mut img = Vec::with_capacity(config.batch);
        let mut set = Vec::with_capacity(config.batch);
        for pair in warmup_batch(&config)? {
            let (i, s) = key_embeddings(&key, &pair.view_k)?;
            img.push(i);
            set.push(s);
        }
        img_queue.push(&img)?;
        set_queue.push(&set)?;
        Ok(TrainState {
            optimizer: OptimizerState::new(&query),
            config,
            query,
            key,
            img_queue,
            set_queue,
            step: 0,
        })
    }

    /// Learning rate the next step will use.
    pub fn next_lr(&self) -> Result<f64> {
        cosine_lr(self.step, self.config.steps.max(self.step), self.config.base_lr)
    }

    /// Runs the next step on its deterministic batch, returning the report
    /// and the learning rate used.
    pub fn advance(&mut self) -> Result<(LossReport, f64)> {
        let lr = self.next_lr()?;
        let batch = training_batch(&self.config, self.step).map_err(|e| Error::Step {
            step: self.step,
            source: Box::new(e),
        })?;
        let (next, report) = train_step(self, &batch)?;
        *self = next;
        Ok((report, lr))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        TrainState::from_container(&Container::read(path)?, path)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        c.set_meta("kind", "train-state")?;
        c.set_meta("step", self.step)?;
        c.set_meta("optimizer.step_count", self.optimizer.step_count)?;
        let arch = self.query.arch;
        c.set_meta("arch.input_size", arch.input_size)?;
        c.set_meta(
            "arch.backbone_channels",
            arch.backbone_channels.map(|v| v.to_string()).join(","),
        )?;
        c.set_meta("arch.projector_hidden", arch.projector_hidden)?;
        c.set_meta("arch.embed_dim", arch.embed_dim)?;
        c.set_meta("arch.with_predictor", arch.with_predictor)?;
        for (k, v) in self.config.entries() {
            c.set_meta(&format!("config.{k}"), v)?;
        }
        for (prefix, params) in [
            ("query", &self.query),
            ("key", &self.key),
            ("velocity", &self.optimizer.velocity),
        ] {
            for (name, t) in params.named_tensors() {
                c.push_tensor(&format!("{prefix}.{name}"), t.clone())?;
            }
        }
        for (name, q) in [("img", &self.img_queue), ("set", &self.set_queue)] {
            c.set_meta(&format!("queue.{name}.capacity"), q.capacity())?;
            c.set_meta(&format!("queue.{name}.dim"), q.dim())?;
            c.set_meta(&format!("queue.{name}.cursor"), q.write_cursor())?;
            c.set_meta(&format!("queue.{name}.len"), q.len())?;
            if !q.is_empty() {
                let data = q.slots().concat();
                c.push_tensor(&format!("queue.{name}"), Tensor::new(&[q.len(), q.dim()], data)?)?;
            }
        }
        Ok(c)
    }

    /// Rebuilds a state, requiring the container to describe exactly the
    /// tensors this state layout has.
    pub fn from_container(c: &Container, origin: &Path) -> Result<Self> {
        let meta = |key: &str| -> Result<&str> {
            c.meta()
                .get(key)
                .map(String::as_str)
                .ok_or_else(|| mismatch(origin, format!("missing meta `{key}`")))
        };
        let num = |key: &str| -> Result<usize> {
            meta(key)?
                .parse()
                .map_err(|_| mismatch(origin, format!("meta `{key}` is not a non-negative integer")))
        };
        if meta("kind")? != "train-state" {
            return Err(mismatch(origin, "not a training-state checkpoint"));
        }
        let mut config = TrainConfig::default();
        for (k, v) in c.meta() {
            if let Some(key) = k.strip_prefix("config.") {
                config
                    .set(key, v, 0)
                    .map_err(|e| mismatch(origin, format!("config entry `{key}`: {e}")))?;
            }
        }
        config.validate().map_err(|e| mismatch(origin, e.to_string()))?;
        let channels: Vec<usize> = meta("arch.backbone_channels")?
            .split(',')
            .map(|v| v.parse().map_err(|_| mismatch(origin, "bad arch.backbone_channels")))
            .collect::<Result<_>>()?;
        let arch = Architecture {
            input_size: num("arch.input_size")?,
            backbone_channels: channels
                .try_into()
                .map_err(|_| mismatch(origin, "arch.backbone_channels needs three entries"))?,
            projector_hidden: num("arch.projector_hidden")?,
            embed_dim: num("arch.embed_dim")?,
            with_predictor: meta("arch.with_predictor")? == "true",
        };
        if arch != config.architecture() {
            return Err(mismatch(origin, "architecture does not match the stored config"));
        }

        let template = EncoderParams::init(arch, 0);
        let mut used = 0;
        let mut branch = |prefix: &str| -> Result<EncoderParams> {
            let mut params = template.clone();
            let names: Vec<String> = template.named_tensors().into_iter().map(|(n, _)| n).collect();
            for (name, slot) in names.iter().zip(params.tensors_mut()) {
                let full = format!("{prefix}.{name}");
                let t = c
                    .tensor(&full)
                    .ok_or_else(|| mismatch(origin, format!("missing tensor `{full}`")))?;
                if t.shape() != slot.shape() {
                    return Err(mismatch(
                        origin,
                        format!("tensor `{full}` has shape {:?}, expected {:?}", t.shape(), slot.shape()),
                    ));
                }
                *slot = t.clone();
                used += 1;
            }
            Ok(params)
        };
        let query = branch("query")?;
        let key = branch("key")?;
        let velocity = branch("velocity")?;

        let mut queue = |name: &str| -> Result<NegativeQueue> {
            let capacity = num(&format!("queue.{name}.capacity"))?;
            let dim = num(&format!("queue.{name}.dim"))?;
            let cursor = num(&format!("queue.{name}.cursor"))?;
            let len = num(&format!("queue.{name}.len"))?;
            let slots = match c.tensor(&format!("queue.{name}")) {
                Some(t) if t.shape() == [len, dim] => {
                    used += 1;
                    t.data().chunks(dim).map(<[f64]>::to_vec).collect()
                }
                None if len == 0 => Vec::new(),
                _ => {
                    return Err(mismatch(
                        origin,
                        format!("queue `{name}` storage disagrees with its metadata"),
                    ))
                }
            };
            NegativeQueue::from_raw_parts(capacity, dim, slots, cursor)
                .map_err(|e| mismatch(origin, format!("queue `{name}`: {e}")))
        };
        let img_queue = queue("img")?;
        let set_queue = queue("set")?;
        if used != c.tensors().len() {
            return Err(mismatch(origin, "checkpoint holds tensors this layout does not use"));
        }
        if img_queue.dim() != arch.embed_dim || set_queue.dim() != arch.embed_dim {
            return Err(mismatch(origin, "queue width differs from the embedding width"));
        }
        Ok(TrainState {
            config,
            query,
            key,
            optimizer: OptimizerState {
                velocity,
                step_count: num("optimizer.step_count")? as u64,
            },
            img_queue,
            set_queue,
            step: num("step")? as u64,
        })
    }
}

/// Header of the per-step metrics CSV.
pub const METRICS_HEADER: &str = "step,l_img,l_set,l_geo,total,pair_count,lr";

/// One CSV row; `step` is the 1-based index of the completed step.
pub fn metrics_row(step: u64, report: &LossReport, lr: f64) -> String {
    format!(
        "{step},{},{},{},{},{},{lr}",
        report.l_img, report.l_set, report.l_geo, report.total, report.pair_count
    )
}

/// Writes the metrics CSV as training proceeds.
pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(MetricsWriter { out })
    }

    pub fn record(&mut self, step: u64, report: &LossReport, lr: f64) -> std::io::Result<()> {
        writeln!(self.out, "{}", metrics_row(step, report, lr))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Runs `steps` further steps, calling `on_step` after each with the new
/// state, its report and the learning rate used.
pub fn run<F>(mut state: TrainState, steps: u64, mut on_step: F) -> Result<TrainState>
where
    F: FnMut(&TrainState, &LossReport, f64) -> Result<()>,
{
    for _ in 0..steps {
        let (report, lr) = state.advance()?;
        on_step(&state, &report, lr)?;
    }
    Ok(state)
}
