//! Run configuration: a flat `key = value` file, overridden by flags.

use std::path::{Path, PathBuf};

use dadl_core::{Hyperparams, KernelSpec};
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub sources: Vec<PathBuf>,
    pub target: Option<PathBuf>,
    pub src_per_class: usize,
    pub tgt_per_class: usize,
    pub repeat: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Scale every sample to unit L1 mass after loading.
    pub normalize: bool,
    #[serde(serialize_with = "serialize_hyperparams")]
    pub hyperparams: Hyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sources: Vec::new(),
            target: None,
            src_per_class: 20,
            tgt_per_class: 3,
            repeat: 1,
            seed: 0,
            out: None,
            model: None,
            normalize: true,
            hyperparams: Hyperparams::default(),
        }
    }
}

#[derive(Serialize)]
struct HyperparamsView {
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    mu1: f64,
    mu2: f64,
    sparsity: usize,
    atoms_per_class: usize,
    dim: usize,
    k_nn: usize,
    kernel: &'static str,
    bandwidth: Option<f64>,
    outer_iters: usize,
    inner_iters: usize,
}

fn serialize_hyperparams<S: serde::Serializer>(h: &Hyperparams, s: S) -> Result<S::Ok, S::Error> {
    HyperparamsView {
        lambda1: h.lambda1,
        lambda2: h.lambda2,
        lambda3: h.lambda3,
        mu1: h.mu1,
        mu2: h.mu2,
        sparsity: h.sparsity,
        atoms_per_class: h.atoms_per_class,
        dim: h.dim,
        k_nn: h.k_nn,
        kernel: h.kernel.name(),
        bandwidth: match h.kernel {
            KernelSpec::Gaussian { bandwidth } => Some(bandwidth),
            _ => None,
        },
        outer_iters: h.outer_iters,
        inner_iters: h.inner_iters,
    }
    .serialize(s)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value {value:?} for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(CliError::Config(format!(
            "invalid boolean {value:?} for `{key}`"
        ))),
    }
}

/// Parse a kernel name; `bandwidth` is only used by `gaussian`.
pub fn parse_kernel(name: &str, bandwidth: Option<f64>) -> Result<KernelSpec, CliError> {
    match name.to_ascii_lowercase().as_str() {
        "hik" | "histogram_intersection" | "histogram-intersection" => {
            Ok(KernelSpec::HistogramIntersection)
        }
        "linear" => Ok(KernelSpec::Linear),
        "gaussian" | "rbf" => Ok(KernelSpec::Gaussian {
            bandwidth: bandwidth.unwrap_or(1.0),
        }),
        other => Err(CliError::Config(format!("unknown kernel {other:?}"))),
    }
}

impl RunConfig {
    /// Apply one `key = value` setting. Dashes and underscores in keys are
    /// interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        let h = &mut self.hyperparams;
        match key.as_str() {
            "source" | "sources" => {
                self.sources = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "target" => self.target = Some(PathBuf::from(value)),
            "src_per_class" => self.src_per_class = parse(&key, value)?,
            "tgt_per_class" => self.tgt_per_class = parse(&key, value)?,
            "repeat" => self.repeat = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            "model" => self.model = Some(PathBuf::from(value)),
            "normalize" => self.normalize = parse_bool(&key, value)?,
            "lambda1" => h.lambda1 = parse(&key, value)?,
            "lambda2" => h.lambda2 = parse(&key, value)?,
            "lambda3" => h.lambda3 = parse(&key, value)?,
            "mu1" => h.mu1 = parse(&key, value)?,
            "mu2" => h.mu2 = parse(&key, value)?,
            "sparsity" | "t0" => h.sparsity = parse(&key, value)?,
            "atoms_per_class" => h.atoms_per_class = parse(&key, value)?,
            "dim" => h.dim = parse(&key, value)?,
            "k_nn" | "knn" => h.k_nn = parse(&key, value)?,
            "outer_iters" => h.outer_iters = parse(&key, value)?,
            "inner_iters" => h.inner_iters = parse(&key, value)?,
            "kernel" => {
                let bw = match h.kernel {
                    KernelSpec::Gaussian { bandwidth } => Some(bandwidth),
                    _ => None,
                };
                h.kernel = parse_kernel(value, bw)?;
            }
            "bandwidth" => {
                let bandwidth = parse(&key, value)?;
                h.kernel = KernelSpec::Gaussian { bandwidth };
            }
            _ => return Err(CliError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Read settings from a config file on top of the current values.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
        self.apply_text(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            self.set(key, value)
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.repeat == 0 {
            return Err(CliError::Config("repeat must be at least 1".into()));
        }
        if self.src_per_class == 0 || self.tgt_per_class == 0 {
            return Err(CliError::Config(
                "per-class counts must be at least 1".into(),
            ));
        }
        self.hyperparams
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}
