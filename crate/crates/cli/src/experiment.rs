//! Split, fit and evaluate runs, and the JSON reports they produce.

use std::fs;
use std::path::{Path, PathBuf};

use dadl_core::{
    evaluate, fit, load_dataset, make_split, DomainDataset, Format, Metrics, ObjectiveTrace,
    TrainedModel,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

/// One split, fit and evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub accuracy: f64,
    pub per_class: Vec<Option<f64>>,
    pub confusion: Vec<Vec<usize>>,
    pub objective_trace: Vec<f64>,
    pub max_feasibility_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub accuracy_mean: f64,
    /// Sample (n - 1) standard deviation over runs; 0 for a single run.
    pub accuracy_std: f64,
    /// Mean per-class accuracy over the runs in which the class was tested.
    pub per_class: Vec<Option<f64>>,
    /// Confusion counts summed over runs, `[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Objective after each outer iteration, one list per run.
    pub objective_trace: Vec<Vec<f64>>,
    pub runs: Vec<RunRecord>,
    pub config: RunConfig,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports contain only finite numbers and strings")
    }
}

pub fn load(path: &Path, cfg: &RunConfig) -> Result<DomainDataset, CliError> {
    let ds = load_dataset(path, Format::from_path(path))?;
    let ds = if cfg.normalize { ds.normalized()? } else { ds };
    ds.check_kernel(cfg.hyperparams.kernel)?;
    Ok(ds)
}

/// Source datasets followed by the target.
pub fn load_domains(cfg: &RunConfig) -> Result<(Vec<DomainDataset>, DomainDataset), CliError> {
    if cfg.sources.is_empty() {
        return Err(CliError::Config("at least one --source is required".into()));
    }
    let target = cfg
        .target
        .as_ref()
        .ok_or_else(|| CliError::Config("--target is required".into()))?;
    let sources = cfg
        .sources
        .iter()
        .map(|p| load(p, cfg))
        .collect::<Result<_, _>>()?;
    Ok((sources, load(target, cfg)?))
}

/// Training domains (every source subset, then the target subset) and the
/// held-out target samples for one seed.
pub fn split_domains(
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(Vec<DomainDataset>, DomainDataset), CliError> {
    let mut train = Vec::with_capacity(sources.len() + 1);
    for (i, s) in sources.iter().enumerate() {
        let (selected, _) = make_split(s, cfg.src_per_class, seed.wrapping_add(i as u64 + 1))?;
        train.push(selected);
    }
    let (selected, heldout) = make_split(target, cfg.tgt_per_class, seed)?;
    train.push(selected);
    Ok((train, heldout))
}

pub fn train_once(
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &RunConfig,
    seed: u64,
) -> Result<(TrainedModel, DomainDataset), CliError> {
    let (train, heldout) = split_domains(sources, target, cfg, seed)?;
    let h = dadl_core::Hyperparams {
        seed,
        ..cfg.hyperparams.clone()
    };
    let model = fit(&train, &h)?;
    for w in &model.trace.warnings {
        log::warn!("seed {seed}: {w}");
    }
    Ok((model, heldout))
}

fn record(seed: u64, metrics: &Metrics, trace: &ObjectiveTrace) -> RunRecord {
    RunRecord {
        seed,
        accuracy: metrics.accuracy,
        per_class: metrics.per_class.clone(),
        confusion: metrics.confusion.clone(),
        objective_trace: trace.values(),
        max_feasibility_error: trace.max_feasibility(),
    }
}

pub fn run_once(
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &RunConfig,
    seed: u64,
) -> Result<RunRecord, CliError> {
    let (model, heldout) = train_once(sources, target, cfg, seed)?;
    let target_domain = model.domain_names.len() - 1;
    let metrics = evaluate(&model, &heldout, target_domain)?;
    log::info!("seed {seed}: accuracy {:.4}", metrics.accuracy);
    Ok(record(seed, &metrics, &model.trace))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn summarize(runs: Vec<RunRecord>, config: RunConfig) -> Report {
    let accuracies: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&accuracies);
    let classes = runs.iter().map(|r| r.confusion.len()).max().unwrap_or(0);
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut class_sum = vec![(0.0, 0usize); classes];
    for r in &runs {
        for (c, row) in r.confusion.iter().enumerate() {
            for (p, n) in row.iter().enumerate() {
                confusion[c][p] += n;
            }
        }
        for (c, acc) in r.per_class.iter().enumerate() {
            if let Some(a) = acc {
                class_sum[c].0 += a;
                class_sum[c].1 += 1;
            }
        }
    }
    Report {
        accuracy_mean,
        accuracy_std,
        per_class: class_sum
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| s / n as f64))
            .collect(),
        confusion,
        objective_trace: runs.iter().map(|r| r.objective_trace.clone()).collect(),
        runs,
        config,
    }
}

/// `repeat` independent runs with seeds `seed, seed + 1, ...`.
pub fn run_experiment_on(
    sources: &[DomainDataset],
    target: &DomainDataset,
    cfg: &RunConfig,
) -> Result<Report, CliError> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.repeat as u64)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    let runs = seeds
        .par_iter()
        .map(|&s| run_once(sources, target, cfg, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(runs, cfg.clone()))
}

pub fn run_experiment(cfg: &RunConfig) -> Result<Report, CliError> {
    cfg.validate()?;
    let (sources, target) = load_domains(cfg)?;
    run_experiment_on(&sources, &target, cfg)
}

/// Report for a stored model on a labeled test set.
pub fn eval_report(
    model: &TrainedModel,
    test: &DomainDataset,
    domain: usize,
    cfg: &RunConfig,
) -> Result<Report, CliError> {
    let metrics = evaluate(model, test, domain)?;
    let mut run = record(model.hyperparams.seed, &metrics, &model.trace);
    if model.trace.iterations.is_empty() {
        // saved models do not carry their training trace
        run.objective_trace.clear();
    }
    let mut config = cfg.clone();
    config.hyperparams = model.hyperparams.clone();
    config.seed = model.hyperparams.seed;
    Ok(summarize(vec![run], config))
}

/// Training summary written next to a saved model.
#[derive(Debug, Serialize)]
pub struct TrainSummary<'a> {
    pub model: &'a Path,
    pub heldout: &'a Path,
    pub domains: &'a [String],
    pub objective_trace: Vec<f64>,
    pub iterations: Vec<IterationView>,
    pub warnings: &'a [String],
    pub config: &'a RunConfig,
}

#[derive(Debug, Serialize)]
pub struct IterationView {
    pub before_projection: f64,
    pub after_projection: f64,
    pub before_codes: f64,
    pub after_codes: f64,
    pub after_dictionary: f64,
    pub projection_steps: usize,
    pub feasibility: f64,
}

impl IterationView {
    pub fn from_trace(trace: &ObjectiveTrace) -> Vec<Self> {
        trace
            .iterations
            .iter()
            .map(|r| IterationView {
                before_projection: r.before_projection,
                after_projection: r.after_projection,
                before_codes: r.before_codes,
                after_codes: r.after_codes,
                after_dictionary: r.after_dictionary,
                projection_steps: r.projection_steps,
                feasibility: r.feasibility,
            })
            .collect()
    }
}

pub fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
    Ok(dir)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[0.5]);
        assert_eq!((m, s), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn summary_aggregates_runs() {
        let run = |seed, acc, per_class: Vec<Option<f64>>, confusion| RunRecord {
            seed,
            accuracy: acc,
            per_class,
            confusion,
            objective_trace: vec![1.0],
            max_feasibility_error: 0.0,
        };
        let r = summarize(
            vec![
                run(
                    0,
                    0.5,
                    vec![Some(1.0), Some(0.0)],
                    vec![vec![1, 0], vec![1, 0]],
                ),
                run(1, 1.0, vec![Some(1.0), None], vec![vec![2, 0], vec![0, 0]]),
            ],
            RunConfig::default(),
        );
        assert_eq!(r.accuracy_mean, 0.75);
        assert_eq!(r.confusion, vec![vec![3, 0], vec![1, 0]]);
        assert_eq!(r.per_class, vec![Some(1.0), Some(0.0)]);
        assert_eq!(r.objective_trace.len(), 2);
    }
}
