//! Command-line driver: pretraining, gradient checks, evaluation and
//! overlay export.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use setsim::attention::AttentionMap;
use setsim::encoder::{encode, EncoderParams};
use setsim::eval::{
    evaluate_matching, export_overlay, format_precision_table, held_out_pair, probe_accuracy, ProbeConfig,
};
use setsim::gradcheck::{run_suite, TOLERANCE};
use setsim::matching::{match_views, MatchInputs, Strategy};
use setsim::seeds::{derive, Stream};
use setsim::trainer::{run, Framework, MetricsWriter, TrainConfig, TrainState};
use setsim::Error;

#[derive(Parser)]
#[command(
    name = "setsim",
    version,
    about = "Set-similarity dense self-supervised learning on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a fresh initialization, writing checkpoints and a metrics CSV.
    Pretrain(Common),
    /// Compare every analytic gradient with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Random instances per component.
        #[arg(long, default_value_t = 50)]
        cases: usize,
    },
    /// Score all matching strategies against ground-truth masks.
    EvalMatching {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Held-out scenes to score.
        #[arg(long, default_value_t = 200)]
        scenes: usize,
    },
    /// Fit a linear classifier on frozen pooled backbone features.
    Probe {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Scenes in the probe set (80% train, 20% test).
        #[arg(long, default_value_t = 600)]
        scenes: usize,
        /// Gradient-descent epochs of the probe.
        #[arg(long, default_value_t = 300)]
        epochs: usize,
    },
    /// Write attention and correspondence overlays for held-out view pairs.
    ExportViz {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        source: Source,
        /// Number of view pairs to export.
        #[arg(long, default_value_t = 4)]
        count: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed: training seed for pretrain, instance seed for gradcheck,
    /// evaluation seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Total training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Matching strategy: random, sort, hungarian, set2set or set2set-nn.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Attention threshold in [0, 1].
    #[arg(long)]
    delta: Option<f64>,
    /// moco or simsiam.
    #[arg(long)]
    framework: Option<Framework>,
}

#[derive(Args)]
struct Source {
    /// Training checkpoint whose query encoder is evaluated; without it a
    /// fresh initialization from the run seed is used.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    /// Preset for the framework, then the config file, then the flags.
    fn resolve(&self) -> setsim::Result<TrainConfig> {
        let mut config = match self.framework {
            Some(Framework::SimSiam) => TrainConfig::simsiam(),
            _ => TrainConfig::default(),
        };
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            config.apply_text(&text)?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(steps) = self.steps {
            config.steps = steps;
        }
        if let Some(strategy) = self.strategy {
            config.strategy = strategy;
        }
        if let Some(delta) = self.delta {
            config.delta = delta;
        }
        if let Some(framework) = self.framework {
            config.framework = framework;
        }
        config.validate()?;
        Ok(config)
    }

    fn out_dir(&self, default: &str) -> setsim::Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(default));
        fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        Ok(dir)
    }
}

impl Source {
    fn params(&self, config: &TrainConfig) -> setsim::Result<EncoderParams> {
        match &self.checkpoint {
            Some(path) => Ok(TrainState::load(path)?.query),
            None => Ok(EncoderParams::init(
                config.architecture(),
                derive(config.seed, Stream::Init, &[]),
            )),
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> setsim::Result<()> {
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint-{step:06}.ckpt"))
}

fn pretrain(common: &Common) -> setsim::Result<()> {
    let config = common.resolve()?;
    let dir = common.out_dir("runs/pretrain")?;
    write_file(&dir.join("config.txt"), config.to_text().as_bytes())?;
    let metrics_path = dir.join("metrics.csv");
    let file = File::create(&metrics_path).map_err(|e| io_error(&metrics_path, e))?;
    let mut metrics = MetricsWriter::new(BufWriter::new(file)).map_err(|e| io_error(&metrics_path, e))?;

    let state = TrainState::new(config.clone())?;
    state.save(&checkpoint_path(&dir, 0))?;
    let every = config.checkpoint_every;
    let total = config.steps;
    let state = run(state, total, |s, report, lr| {
        metrics
            .record(s.step, report, lr)
            .map_err(|e| io_error(&metrics_path, e))?;
        if (every > 0 && s.step % every == 0) || s.step == total {
            s.save(&checkpoint_path(&dir, s.step))?;
        }
        if s.step % 50 == 0 || s.step == total {
            eprintln!("step {:>5}/{total}  total {:.4}  lr {:.5}", s.step, report.total, lr);
        }
        Ok(())
    })?;
    let mut out = metrics.into_inner();
    out.flush().map_err(|e| io_error(&metrics_path, e))?;
    state.save(&dir.join("final.ckpt"))?;
    println!("wrote {} steps to {}", state.step, dir.display());
    Ok(())
}

fn gradcheck(common: &Common, cases: usize) -> setsim::Result<()> {
    let seed = common.seed.unwrap_or(0);
    let report = run_suite(seed, cases)?;
    println!("{:<14} {:>6} {:>14}", "component", "cases", "max_rel_error");
    for c in &report {
        println!("{:<14} {:>6} {:>14.3e}", c.component, c.cases, c.max_relative_error);
    }
    if let Some(bad) = report.iter().find(|c| !c.passed()) {
        return Err(Error::InvalidArgument {
            arg: "gradient",
            reason: format!(
                "{} exceeds the tolerance {TOLERANCE:e} with relative error {:e}",
                bad.component, bad.max_relative_error
            ),
        });
    }
    Ok(())
}

fn eval_matching(common: &Common, source: &Source, scenes: usize) -> setsim::Result<()> {
    let config = common.resolve()?;
    let params = source.params(&config)?;
    let rows = evaluate_matching(&params, config.delta, scenes, config.seed)?;
    print!("{}", format_precision_table(&rows));
    if common.out.is_some() {
        let dir = common.out_dir("")?;
        let mut json = serde_json::to_string_pretty(&rows)?;
        json.push('\n');
        write_file(&dir.join("eval-matching.json"), json.as_bytes())?;
    }
    Ok(())
}

fn probe(common: &Common, source: &Source, scenes: usize, epochs: usize) -> setsim::Result<()> {
    let config = common.resolve()?;
    let params = source.params(&config)?;
    let probe_config = ProbeConfig {
        epochs,
        split_seed: config.seed,
        ..ProbeConfig::default()
    };
    let accuracy = probe_accuracy(&params, scenes, config.seed, &probe_config)?;
    println!("probe_accuracy {accuracy:.4}");
    if common.out.is_some() {
        let dir = common.out_dir("")?;
        write_file(
            &dir.join("probe.txt"),
            format!("probe_accuracy {accuracy}\n").as_bytes(),
        )?;
    }
    Ok(())
}

fn export_viz(common: &Common, source: &Source, count: u64) -> setsim::Result<()> {
    let config = common.resolve()?;
    let params = source.params(&config)?;
    let dir = common.out_dir("runs/viz")?;
    for i in 0..count {
        let (_, pair) = held_out_pair(config.seed, i)?;
        let fq = encode(&params, &pair.view_q)?;
        let fk = encode(&params, &pair.view_k)?;
        let aq = AttentionMap::compute(&fq.z, config.delta)?;
        let ak = AttentionMap::compute(&fk.z, config.delta)?;
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
        let corr = match_views(
            config.strategy,
            &inputs,
            derive(config.seed, Stream::HeldOutMatch, &[i]),
        )?;
        export_overlay(
            &pair.view_q,
            &aq.rescaled,
            &aq.selected,
            &corr,
            &dir,
            &format!("pair{i:03}_q"),
        )?;
        export_overlay(
            &pair.view_k,
            &ak.rescaled,
            &ak.selected,
            &corr,
            &dir,
            &format!("pair{i:03}_k"),
        )?;
    }
    println!("wrote {count} overlay pairs to {}", dir.display());
    Ok(())
}

/// Process exit status for each error class.
fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Shape { .. } | Error::InvalidArgument { .. } | Error::NonFinite { .. } => 3,
        Error::Io { .. } => 4,
        Error::Checkpoint { .. } | Error::Config { .. } | Error::Json(_) => 5,
        Error::Step { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pretrain(common) => pretrain(common),
        Command::Gradcheck { common, cases } => gradcheck(common, *cases),
        Command::EvalMatching { common, source, scenes } => eval_matching(common, source, *scenes),
        Command::Probe {
            common,
            source,
            scenes,
            epochs,
        } => probe(common, source, *scenes, *epochs),
        Command::ExportViz { common, source, count } => export_viz(common, source, *count),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
