//! Domain-adaptive shared dictionary learning.
//!
//! Each domain gets its own kernelized projection `Pᵢ = Φ(Xᵢ)Aᵢ` into a
//! common `n`-dimensional space, constrained by `AᵢᵀKᵢAᵢ = I`. A single
//! class-partitioned dictionary is learned there jointly with the
//! projections, with graph-Laplacian smoothness and an MMD penalty pulling
//! the domains together. New samples are classified by the class whose
//! atoms give the smallest feature-space reconstruction residual.

pub mod classify;
pub mod data_io;
pub mod error;
pub mod geometry;
pub mod manifold_opt;
pub mod sparse;
pub mod synth;
pub mod trainer;

pub use classify::{embed_test, evaluate, predict, Metrics, Prediction};
pub use data_io::{
    load_dataset, load_model, make_split, normalize_l1, save_dataset, save_model, DomainDataset,
    Format,
};
pub use error::{Error, Result};
pub use geometry::{GraphLaplacian, KernelGram, KernelSpec, MmdMatrix};
pub use sparse::{SparseCodes, SparseVector};
pub use synth::{Shift, SynthSpec};
pub use trainer::{fit, Dictionary, Hyperparams, ObjectiveTrace, OuterRecord, TrainedModel};
