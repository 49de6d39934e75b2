//! Seeded synthetic two-domain benchmark with a controlled shift.
//!
//! The source domain draws `classes` Gaussian clusters around random
//! points of the probability simplex. The target draws fresh samples from
//! the same clusters and pushes them through a fixed feature permutation,
//! a component-wise power warp, additive noise and (optionally) a random
//! nonnegative mixing into a different feature dimension. Both domains are
//! nonnegative and unit-L1 per sample.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::data_io::{normalize_l1, DomainDataset};
use crate::error::{Error, Result};

/// Smallest value a feature may take before normalization.
const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum Shift {
    /// Target is an independent sample of the source distribution.
    Identity,
    Warp {
        /// Exponent applied to every feature.
        power: f64,
        /// Standard deviation of the additive noise, relative to the mean feature.
        noise: f64,
        /// Target feature dimension after nonnegative mixing; `None` keeps it.
        mixed_dim: Option<usize>,
    },
}

impl Default for Shift {
    fn default() -> Self {
        Shift::Warp {
            power: 3.0,
            noise: 0.3,
            mixed_dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub source_per_class: usize,
    pub target_per_class: usize,
    /// Cluster standard deviation relative to the mean feature value.
    pub spread: f64,
    /// Dirichlet concentration of the class centers; small values give
    /// peaked, well separated centers.
    pub concentration: f64,
    pub shift: Shift,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 3,
            dim: 20,
            source_per_class: 60,
            target_per_class: 30,
            spread: 0.5,
            concentration: 1.0,
            shift: Shift::default(),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSynth(m.to_string()));
        if self.classes < 2 {
            return bad("at least two classes are required");
        }
        if self.dim < 2 {
            return bad("feature dimension must be at least 2");
        }
        if self.source_per_class == 0 || self.target_per_class == 0 {
            return bad("every domain needs at least one sample per class");
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return bad("spread must be finite and nonnegative");
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad("concentration must be positive");
        }
        if let Shift::Warp {
            power,
            noise,
            mixed_dim,
        } = &self.shift
        {
            if !(*power > 0.0 && power.is_finite()) {
                return bad("warp power must be positive");
            }
            if !(*noise >= 0.0 && noise.is_finite()) {
                return bad("warp noise must be finite and nonnegative");
            }
            if mixed_dim.is_some_and(|d| d < 2) {
                return bad("mixed dimension must be at least 2");
            }
        }
        Ok(())
    }
}

fn class_labels(classes: usize, per_class: usize) -> Vec<usize> {
    (0..classes)
        .flat_map(|c| std::iter::repeat_n(c, per_class))
        .collect()
}

fn draw_clusters(
    centers: &DMatrix<f64>,
    per_class: usize,
    spread: f64,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let (dim, classes) = centers.shape();
    let sd = spread / dim as f64;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    DMatrix::from_fn(dim, classes * per_class, |i, j| {
        let c = j / per_class;
        (centers[(i, c)] + sd * normal.sample(rng)).abs().max(FLOOR)
    })
}

/// Generate `(source, target)` for `spec`.
pub fn generate(spec: &SynthSpec) -> Result<(DomainDataset, DomainDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gamma =
        Gamma::new(spec.concentration, 1.0).map_err(|e| Error::InvalidSynth(e.to_string()))?;
    let mut centers = DMatrix::from_fn(spec.dim, spec.classes, |_, _| {
        gamma.sample(&mut rng).max(FLOOR)
    });
    for mut c in centers.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }

    let source = draw_clusters(&centers, spec.source_per_class, spec.spread, &mut rng);
    let mut target = draw_clusters(&centers, spec.target_per_class, spec.spread, &mut rng);

    if let Shift::Warp {
        power,
        noise,
        mixed_dim,
    } = &spec.shift
    {
        let mut perm: Vec<usize> = (0..spec.dim).collect();
        perm.shuffle(&mut rng);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let sd = noise / spec.dim as f64;
        let permuted = DMatrix::from_fn(spec.dim, target.ncols(), |i, j| target[(perm[i], j)]);
        let warped = normalize_l1(&permuted.map(|v| v.powf(*power)))?;
        target = warped.map(|v| (v + sd * normal.sample(&mut rng)).abs().max(FLOOR));
        if let Some(out_dim) = *mixed_dim {
            let mix = DMatrix::from_fn(out_dim, spec.dim, |_, _| rng.random::<f64>());
            target = mix * target;
        }
    }

    let source = DomainDataset::new(
        normalize_l1(&source)?,
        class_labels(spec.classes, spec.source_per_class),
        "source",
    )?;
    let target = DomainDataset::new(
        normalize_l1(&target)?,
        class_labels(spec.classes, spec.target_per_class),
        "target",
    )?;
    Ok((source, target))
}
