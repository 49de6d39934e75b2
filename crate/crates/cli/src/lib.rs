//! `dadl` command-line front end.

pub mod config;
pub mod error;
pub mod experiment;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dadl_core::{load_model, save_dataset, save_model, synth, Format, Shift, SynthSpec};

pub use config::RunConfig;
pub use error::CliError;
pub use experiment::{run_experiment, run_experiment_on, Report, RunRecord};

#[derive(Debug, Parser)]
#[command(
    name = "dadl",
    version,
    about = "Domain-adaptive shared dictionary learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on one split and save it with its objective trace.
    Train(RunArgs),
    /// Evaluate a saved model on a labeled dataset.
    Eval(EvalArgs),
    /// Repeat split, fit and evaluate, and report mean and spread.
    RunExperiment(RunArgs),
    /// Write a synthetic source/target pair.
    Synth(SynthArgs),
}

/// Flags shared by `train` and `run-experiment`. Unset flags fall back to
/// the config file, then to the built-in defaults.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub source: Vec<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub src_per_class: Option<usize>,
    #[arg(long)]
    pub tgt_per_class: Option<usize>,
    #[arg(long)]
    pub repeat: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Skip unit-L1 normalization of the loaded features.
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub mu1: Option<f64>,
    #[arg(long)]
    pub mu2: Option<f64>,
    #[arg(long)]
    pub sparsity: Option<usize>,
    #[arg(long)]
    pub atoms_per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub k_nn: Option<usize>,
    /// hik, linear or gaussian
    #[arg(long)]
    pub kernel: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    #[arg(long)]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub inner_iters: Option<usize>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        let mut set = |key: &str, value: Option<String>| match value {
            Some(v) => cfg.set(key, &v),
            None => Ok(()),
        };
        let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        if !self.source.is_empty() {
            let joined: Vec<String> = self
                .source
                .iter()
                .map(|p| p.display().to_string())
                .collect();
            set("source", Some(joined.join(",")))?;
        }
        set("target", s(&self.target))?;
        set("src_per_class", self.src_per_class.map(|v| v.to_string()))?;
        set("tgt_per_class", self.tgt_per_class.map(|v| v.to_string()))?;
        set("repeat", self.repeat.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("out", s(&self.out))?;
        set("model", s(&self.model))?;
        set("lambda1", self.lambda1.map(|v| v.to_string()))?;
        set("lambda2", self.lambda2.map(|v| v.to_string()))?;
        set("lambda3", self.lambda3.map(|v| v.to_string()))?;
        set("mu1", self.mu1.map(|v| v.to_string()))?;
        set("mu2", self.mu2.map(|v| v.to_string()))?;
        set("sparsity", self.sparsity.map(|v| v.to_string()))?;
        set(
            "atoms_per_class",
            self.atoms_per_class.map(|v| v.to_string()),
        )?;
        set("dim", self.dim.map(|v| v.to_string()))?;
        set("k_nn", self.k_nn.map(|v| v.to_string()))?;
        set("kernel", self.kernel.clone())?;
        set("bandwidth", self.bandwidth.map(|v| v.to_string()))?;
        set("outer_iters", self.outer_iters.map(|v| v.to_string()))?;
        set("inner_iters", self.inner_iters.map(|v| v.to_string()))?;
        if self.no_normalize {
            cfg.normalize = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labeled test samples from one of the model's domains.
    #[arg(long)]
    pub target: PathBuf,
    /// Domain name the test samples belong to; defaults to the model's last domain.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FileFormat {
    Csv,
    Packed,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    /// Source feature dimension.
    #[arg(long, default_value_t = 20)]
    pub features: usize,
    #[arg(long, default_value_t = 60)]
    pub src_size: usize,
    #[arg(long, default_value_t = 30)]
    pub tgt_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub concentration: f64,
    #[arg(long, default_value_t = 3.0)]
    pub power: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Mix the target into this many features.
    #[arg(long)]
    pub mixed_dim: Option<usize>,
    /// No shift: the target is a second sample of the source distribution.
    #[arg(long)]
    pub identity: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = FileFormat::Csv)]
    pub format: FileFormat,
}

impl SynthArgs {
    pub fn spec(&self) -> SynthSpec {
        SynthSpec {
            classes: self.classes,
            dim: self.features,
            source_per_class: self.src_size,
            target_per_class: self.tgt_size,
            spread: self.spread,
            concentration: self.concentration,
            shift: if self.identity {
                Shift::Identity
            } else {
                Shift::Warp {
                    power: self.power,
                    noise: self.noise,
                    mixed_dim: self.mixed_dim,
                }
            },
            seed: self.seed,
        }
    }
}

fn train(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let (sources, target) = experiment::load_domains(&cfg)?;
    let (model, heldout) = experiment::train_once(&sources, &target, &cfg, cfg.seed)?;
    let dir = experiment::out_dir(&cfg)?;
    let model_path = cfg.model.clone().unwrap_or_else(|| dir.join("model.dadlm"));
    save_model(&model, &model_path)?;
    let heldout_path = dir.join("heldout.csv");
    save_dataset(&heldout, &heldout_path, Format::Csv)?;
    let summary = experiment::TrainSummary {
        model: &model_path,
        heldout: &heldout_path,
        domains: &model.domain_names,
        objective_trace: model.trace.values(),
        iterations: experiment::IterationView::from_trace(&model.trace),
        warnings: &model.trace.warnings,
        config: &cfg,
    };
    let json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    experiment::write_text(&dir.join("trace.json"), &json)?;
    log::info!("model written to {}", model_path.display());
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let cfg = RunConfig {
        target: Some(args.target.clone()),
        model: Some(args.model.clone()),
        out: args.out.clone(),
        normalize: !args.no_normalize,
        hyperparams: model.hyperparams.clone(),
        ..RunConfig::default()
    };
    let domain = match &args.domain {
        Some(name) => model
            .domain_index(name)
            .ok_or_else(|| CliError::Config(format!("model has no domain named {name:?}")))?,
        None => model.domain_names.len() - 1,
    };
    let test = experiment::load(&args.target, &cfg)?;
    let report = experiment::eval_report(&model, &test, domain, &cfg)?;
    let dir = experiment::out_dir(&cfg)?;
    experiment::write_text(&dir.join("metrics.json"), &report.to_json())?;
    println!("accuracy {:.4}", report.accuracy_mean);
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), CliError> {
    let cfg = args.resolve()?;
    let report = run_experiment(&cfg)?;
    let dir = experiment::out_dir(&cfg)?;
    experiment::write_text(&dir.join("report.json"), &report.to_json())?;
    println!(
        "accuracy {:.2} ± {:.2} over {} runs",
        100.0 * report.accuracy_mean,
        100.0 * report.accuracy_std,
        report.runs.len()
    );
    Ok(())
}

fn synth_cmd(args: &SynthArgs) -> Result<(), CliError> {
    let (source, target) = synth::generate(&args.spec())?;
    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Io(args.out.clone(), e))?;
    let (format, ext) = match args.format {
        FileFormat::Csv => (Format::Csv, "csv"),
        FileFormat::Packed => (Format::Packed, "dadl"),
    };
    save_dataset(&source, &args.out.join(format!("source.{ext}")), format)?;
    save_dataset(&target, &args.out.join(format!("target.{ext}")), format)?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::RunExperiment(a) => run(a),
        Command::Synth(a) => synth_cmd(a),
    }
}
