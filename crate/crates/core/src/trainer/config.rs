use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::attention::DEFAULT_DELTA;
use crate::encoder::Architecture;
use crate::error::{Error, Result};
use crate::matching::Strategy;
use crate::objectives::{DEFAULT_LAMBDA, DEFAULT_TAU};

/// Base self-supervised framework the set-level objective is built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Framework {
    /// Momentum key encoder, negative queues, InfoNCE losses.
    Moco,
    /// Predictor on the query side, stop-gradient keys, negative cosine
    /// losses, no negatives.
    SimSiam,
}

impl Framework {
    pub fn name(self) -> &'static str {
        match self {
            Framework::Moco => "moco",
            Framework::SimSiam => "simsiam",
        }
    }
}

impl fmt::Display for Framework {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Framework {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "moco" => Ok(Framework::Moco),
            "simsiam" => Ok(Framework::SimSiam),
            _ => Err(Error::invalid(
                "framework",
                format!("unknown framework `{s}` (expected moco or simsiam)"),
            )),
        }
    }
}

/// Which loss terms drive the gradient.
///
/// `Weighted` is the normal mixed objective. The single-term variants train
/// on one term at full weight while still evaluating and reporting the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTerms {
    Weighted,
    ImageOnly,
    SetOnly,
}

impl LossTerms {
    pub fn name(self) -> &'static str {
        match self {
            LossTerms::Weighted => "weighted",
            LossTerms::ImageOnly => "image",
            LossTerms::SetOnly => "set",
        }
    }
}

impl fmt::Display for LossTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossTerms {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "weighted" => Ok(LossTerms::Weighted),
            "image" => Ok(LossTerms::ImageOnly),
            "set" => Ok(LossTerms::SetOnly),
            _ => Err(Error::invalid(
                "terms",
                format!("unknown terms `{s}` (expected weighted, image or set)"),
            )),
        }
    }
}

/// Every knob of a pretraining run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub sgd_momentum: f64,
    pub ema_m: f64,
    pub tau: f64,
    pub lambda: f64,
    pub delta: f64,
    pub strategy: Strategy,
    pub framework: Framework,
    pub enable_geo: bool,
    pub enable_sym: bool,
    pub terms: LossTerms,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub queue_capacity: usize,
    /// Steps between periodic checkpoints written by the CLI; 0 disables them.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.03,
            weight_decay: 1e-4,
            sgd_momentum: 0.9,
            ema_m: 0.99,
            tau: DEFAULT_TAU,
            lambda: DEFAULT_LAMBDA,
            delta: DEFAULT_DELTA,
            strategy: Strategy::Set2SetNN,
            framework: Framework::Moco,
            enable_geo: false,
            enable_sym: false,
            terms: LossTerms::Weighted,
            steps: 500,
            batch: 16,
            seed: 0,
            queue_capacity: 512,
            checkpoint_every: 100,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        reason: format!("cannot parse `{value}` as the value of `{key}`"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config {
            line,
            reason: format!("`{key}` expects true or false, got `{value}`"),
        }),
    }
}

impl TrainConfig {
    /// Defaults adjusted for the SimSiam framework.
    pub fn simsiam() -> Self {
        TrainConfig {
            framework: Framework::SimSiam,
            base_lr: 0.1,
            ..TrainConfig::default()
        }
    }

    /// Encoder layout implied by the framework.
    pub fn architecture(&self) -> Architecture {
        Architecture {
            with_predictor: self.framework == Framework::SimSiam,
            ..Architecture::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("base_lr", self.base_lr), ("tau", self.tau)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid("config", format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [("weight_decay", self.weight_decay), ("sgd_momentum", self.sgd_momentum)];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "config",
                    format!("{name} must be non-negative, got {v}"),
                ));
            }
        }
        let unit = [("ema_m", self.ema_m), ("lambda", self.lambda), ("delta", self.delta)];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid("config", format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.batch == 0 {
            return Err(Error::invalid("config", "batch must be at least 1"));
        }
        if self.queue_capacity == 0 {
            return Err(Error::invalid("config", "queue_capacity must be at least 1"));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "base_lr" => self.base_lr = parse_value(key, value, line)?,
            "weight_decay" => self.weight_decay = parse_value(key, value, line)?,
            "sgd_momentum" => self.sgd_momentum = parse_value(key, value, line)?,
            "ema_m" => self.ema_m = parse_value(key, value, line)?,
            "tau" => self.tau = parse_value(key, value, line)?,
            "lambda" => self.lambda = parse_value(key, value, line)?,
            "delta" => self.delta = parse_value(key, value, line)?,
            "strategy" => self.strategy = parse_value(key, value, line)?,
            "framework" => self.framework = parse_value(key, value, line)?,
            "enable_geo" => self.enable_geo = parse_bool(key, value, line)?,
            "enable_sym" => self.enable_sym = parse_bool(key, value, line)?,
            "terms" => self.terms = parse_value(key, value, line)?,
            "steps" => self.steps = parse_value(key, value, line)?,
            "batch" => self.batch = parse_value(key, value, line)?,
            "seed" => self.seed = parse_value(key, value, line)?,
            "queue_capacity" => self.queue_capacity = parse_value(key, value, line)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(key, value, line)?,
            _ => {
                return Err(Error::Config {
                    line,
                    reason: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    /// Every setting as `(key, value)` in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("base_lr", self.base_lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("sgd_momentum", self.sgd_momentum.to_string()),
            ("ema_m", self.ema_m.to_string()),
            ("tau", self.tau.to_string()),
            ("lambda", self.lambda.to_string()),
            ("delta", self.delta.to_string()),
            ("strategy", self.strategy.to_string()),
            ("framework", self.framework.to_string()),
            ("enable_geo", self.enable_geo.to_string()),
            ("enable_sym", self.enable_sym.to_string()),
            ("terms", self.terms.to_string()),
            ("steps", self.steps.to_string()),
            ("batch", self.batch.to_string()),
            ("seed", self.seed.to_string()),
            ("queue_capacity", self.queue_capacity.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]
    }

    /// Parses `key = value` lines on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                line: i + 1,
                reason: format!("expected `key = value`, found `{line}`"),
            })?;
            self.set(key.trim(), value.trim(), i + 1)?;
        }
        Ok(())
    }

    /// Defaults overridden by the settings in `text`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        config.apply_text(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_text(&text)
    }
}
