// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use disclabel::pipeline::{self, EvalJob, LabelJob, PipelineConfig, TrainJob};
use disclabel::synth::Split;

#[derive(Parser, Debug)]
#[command(name = "disclabel", version, about = "Intervertebral disc labeling with stacked hourglass heatmaps")]
struct Cli {
    /// Seed for data generation and training (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model on the train split of a dataset.
    Train(TrainArgs),
    /// Label images with a trained checkpoint.
    Label(LabelArgs),
    /// Score label outputs against dataset annotations.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Probability that a disc is removed from image and labels.
    #[arg(long)]
    missing_prob: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory or its manifest.json.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Train without the attention block.
    #[arg(long)]
    no_attention: bool,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory, manifest, or a single .ndat image.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Skeleton JSON (default: <checkpoint>/skeleton.json).
    #[arg(long)]
    skeleton: Option<PathBuf>,
    /// Require exactly this many labeled discs.
    #[arg(long)]
    num_discs: Option<usize>,
    /// Use the un-gated heatmap of the last stack.
    #[arg(long)]
    no_attention: bool,
    /// Report the top candidate of every disc without the skeleton search.
    #[arg(long)]
    no_skeleton: bool,
    #[arg(long)]
    no_overlays: bool,
    /// Also write attention maps as PNG.
    #[arg(long)]
    attention_maps: bool,
    /// Stop a search branch at the first exact skeleton fit.
    #[arg(long)]
    zero_error_shortcut: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Label output directory, optionally named: `NAME=DIR`. Repeat for
    /// side-by-side rows.
    #[arg(long = "results", required = true)]
    results: Vec<String>,
    #[arg(long, default_value_t = disclabel::metrics::DEFAULT_TOL_MM)]
    tolerance_mm: f64,
}

/// Caller mistakes that clap cannot see; reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<disclabel::Error>() {
            return if err.is_usage() { 2 } else { 1 };
        }
    }
    1
}

fn set_threads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow::anyhow!("configuring the thread pool: {e}"))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the `parallel` feature; --threads {n} ignored");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    let out = cli.out.clone().ok_or_else(|| usage("--out is required"))?;
    match cli.command {
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            s.n_train = a.n_train.unwrap_or(s.n_train);
            s.n_val = a.n_val.unwrap_or(s.n_val);
            s.n_test = a.n_test.unwrap_or(s.n_test);
            s.missing_prob = a.missing_prob.unwrap_or(s.missing_prob);
            pipeline::cmd_synth(&cfg.synth, &out)?;
            log::info!("wrote {} cases to {}", cfg.synth.total_cases(), out.display());
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            t.epochs = a.epochs.unwrap_or(t.epochs);
            t.learning_rate = a.lr.unwrap_or(t.learning_rate);
            t.batch_size = a.batch_size.unwrap_or(t.batch_size);
            t.checkpoint_every = a.checkpoint_every.unwrap_or(t.checkpoint_every);
            if a.no_attention {
                cfg.model.attention = false;
            }
            let job = TrainJob {
                dataset: a.dataset,
                model: cfg.model,
                train: cfg.train,
                target: cfg.target,
                resume: a.resume,
            };
            let done = pipeline::cmd_train(&job, &out)?;
            if let Some(last) = done.curve.last() {
                log::info!("epoch {}: final loss {:.6}", last.epoch, last.total);
            }
        }
        Command::Label(a) => {
            let mut job = LabelJob::new(a.checkpoint, a.input);
            job.split = match a.split {
                SplitArg::Train => Some(Split::Train),
                SplitArg::Val => Some(Split::Val),
                SplitArg::Test => Some(Split::Test),
                SplitArg::All => None,
            };
            job.skeleton = a.skeleton;
            job.num_discs = a.num_discs;
            job.no_attention = a.no_attention;
            job.no_skeleton = a.no_skeleton;
            job.overlays = !a.no_overlays;
            job.attention_maps = a.attention_maps;
            job.zero_error_shortcut = a.zero_error_shortcut;
            job.candidates = cfg.candidates;
            pipeline::cmd_label(&job, &out)?;
        }
        Command::Eval(a) => {
            let mut results = Vec::with_capacity(a.results.len());
            for r in &a.results {
                let (name, dir) = match r.split_once('=') {
                    Some((n, d)) if !n.is_empty() => (n.to_string(), PathBuf::from(d)),
                    _ => {
                        let dir = PathBuf::from(r);
                        let name = dir
                            .file_name()
                            .map(|n| n.to_string_lossy().into_owned())
                            .unwrap_or_else(|| r.clone());
                        (name, dir)
                    }
                };
                results.push((name, dir));
            }
            if !(a.tolerance_mm > 0.0) {
                bail!(usage("--tolerance-mm must be positive"));
            }
            let mut job = EvalJob::new(a.dataset, results);
            job.tolerance_mm = a.tolerance_mm;
            let (report, _) = pipeline::cmd_eval(&job, &out)?;
            print!("{}", report.markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !msg.contains(&c) {
                    msg = format!("{msg}: {c}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
