//! Alternating optimization of projections, shared dictionary and sparse
//! codes.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::DomainDataset;
use crate::error::{Error, Result};
use crate::geometry::{
    self, block_diag, block_offsets, knn_laplacian_from_gram, mmd_matrix, GraphLaplacian,
    KernelGram, KernelSpec,
};
use crate::manifold_opt::{
    self, constraint_residual, orthonormalize, ProjectionCoeffs, SearchOptions, Whitening,
};
use crate::sparse::{self, mask_split, omp_batch, refine_codes, SparseCodes};

/// Ridge added to the dictionary normal equations.
pub const DICTIONARY_RIDGE: f64 = 1e-8;
/// Relative tolerance for the per-iteration objective increase warning.
pub const MONOTONE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Manifold (graph Laplacian) weight on the projections.
    pub lambda1: f64,
    /// MMD weight.
    pub lambda2: f64,
    /// Graph weight on the in-class codes.
    pub lambda3: f64,
    /// Class-specific reconstruction weight.
    pub mu1: f64,
    /// Penalty on reconstruction by other classes' atoms.
    pub mu2: f64,
    /// Maximum nonzeros per code.
    pub sparsity: usize,
    pub atoms_per_class: usize,
    /// Projected dimension.
    pub dim: usize,
    pub k_nn: usize,
    pub kernel: KernelSpec,
    pub outer_iters: usize,
    /// Curvilinear search budget per projection update.
    pub inner_iters: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda1: 1.0,
            lambda2: 50.0,
            lambda3: 1.0,
            mu1: 4.0,
            mu2: 30.0,
            sparsity: 4,
            atoms_per_class: 4,
            dim: 60,
            k_nn: 5,
            kernel: KernelSpec::HistogramIntersection,
            outer_iters: 12,
            inner_iters: 30,
            seed: 0,
        }
    }
}

impl Hyperparams {
    /// Checks that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidHyperparams(format!(
                    "{name} must be nonnegative, got {w}"
                )));
            }
        }
        if self.sparsity == 0 {
            return Err(Error::InvalidHyperparams(
                "sparsity must be at least 1".into(),
            ));
        }
        if self.atoms_per_class == 0 {
            return Err(Error::InvalidHyperparams(
                "atoms_per_class must be at least 1".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidHyperparams("dim must be at least 1".into()));
        }
        if self.k_nn == 0 {
            return Err(Error::InvalidHyperparams("k_nn must be at least 1".into()));
        }
        if self.sparsity > self.dim {
            return Err(Error::InvalidHyperparams(format!(
                "sparsity {} exceeds projected dimension {}",
                self.sparsity, self.dim
            )));
        }
        self.kernel.validate()
    }

    fn validate_for(&self, sizes: &[usize], classes: usize) -> Result<()> {
        self.validate()?;
        let min_size = sizes.iter().copied().min().unwrap_or(0);
        if self.dim > min_size {
            return Err(Error::InvalidHyperparams(format!(
                "dim {} exceeds the smallest domain size {min_size}",
                self.dim
            )));
        }
        let atoms = self.atoms_per_class * classes;
        if self.sparsity > atoms {
            return Err(Error::InvalidHyperparams(format!(
                "sparsity {} exceeds dictionary size {atoms}",
                self.sparsity
            )));
        }
        Ok(())
    }
}

/// Shared dictionary with contiguous class-specific sub-dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    pub atoms: DMatrix<f64>,
    pub atom_classes: Vec<usize>,
    pub classes: usize,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.ncols() == 0
    }

    pub fn atoms_per_class(&self) -> usize {
        self.len() / self.classes.max(1)
    }

    /// Atom index range owned by `class`.
    pub fn class_range(&self, class: usize) -> std::ops::Range<usize> {
        let per = self.atoms_per_class();
        class * per..(class + 1) * per
    }

    pub fn class_atoms(&self, class: usize) -> DMatrix<f64> {
        let r = self.class_range(class);
        self.atoms.columns(r.start, r.len()).into_owned()
    }
}

/// Block matrices over the stacked training set, ordered domain-major.
#[derive(Debug, Clone)]
pub struct TrainingBlocks {
    pub grams: Vec<KernelGram>,
    /// `K̃ = blockdiag(Kᵢ)`.
    pub kernel: DMatrix<f64>,
    /// `L̃ = blockdiag(Lᵢ)`.
    pub laplacian: DMatrix<f64>,
    /// `M̃`.
    pub mmd: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    pub classes: usize,
}

impl TrainingBlocks {
    pub fn offsets(&self) -> Vec<usize> {
        block_offsets(&self.sizes)
    }

    pub fn total(&self) -> usize {
        self.labels.len()
    }
}

fn class_set(labels: &[usize]) -> Vec<usize> {
    let mut set = labels.to_vec();
    set.sort_unstable();
    set.dedup();
    set
}

pub fn assemble_blocks(domains: &[DomainDataset], h: &Hyperparams) -> Result<TrainingBlocks> {
    if domains.len() < 2 {
        return Err(Error::InvalidHyperparams(format!(
            "training needs at least two domains, got {}",
            domains.len()
        )));
    }
    for (i, d) in domains.iter().enumerate() {
        if d.num_samples() == 0 {
            return Err(Error::EmptyDomain(i));
        }
    }
    let reference = class_set(&domains[0].labels);
    let classes = reference.last().map_or(0, |c| c + 1);
    for c in 0..classes {
        if reference.binary_search(&c).is_err() {
            return Err(Error::EmptyClass {
                class: c,
                domain: domains[0].name.clone(),
            });
        }
    }
    for d in &domains[1..] {
        let set = class_set(&d.labels);
        if set != reference {
            if let Some(&c) = reference.iter().find(|c| set.binary_search(c).is_err()) {
                return Err(Error::EmptyClass {
                    class: c,
                    domain: d.name.clone(),
                });
            }
            return Err(Error::LabelMismatch(format!(
                "domain {} has classes {:?}, expected {:?}",
                d.name, set, reference
            )));
        }
    }

    let mut grams = Vec::with_capacity(domains.len());
    let mut laplacians = Vec::with_capacity(domains.len());
    for d in domains {
        let g = geometry::self_gram(&d.features, h.kernel)?;
        let n = g.size();
        if h.k_nn >= n {
            return Err(Error::InvalidNeighborCount { k: h.k_nn, n });
        }
        laplacians.push(knn_laplacian_from_gram(&g.values, h.k_nn)?);
        grams.push(g);
    }
    let sizes: Vec<usize> = domains.iter().map(|d| d.num_samples()).collect();
    let kernel = block_diag(&grams.iter().map(|g| &g.values).collect::<Vec<_>>());
    let laplacian = block_diag(&laplacians.iter().map(|l| &l.values).collect::<Vec<_>>());
    let mmd = mmd_matrix(&sizes)?.values;
    let labels = domains
        .iter()
        .flat_map(|d| d.labels.iter().copied())
        .collect();
    Ok(TrainingBlocks {
        grams,
        kernel,
        laplacian,
        mmd,
        labels,
        sizes,
        classes,
    })
}

/// Individual terms of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    /// `‖ÃᵀK̃ − D S̃‖²`
    pub reconstruction: f64,
    /// `‖ÃᵀK̃ − D S̃_in‖²`
    pub class_reconstruction: f64,
    /// `‖D S̃_out‖²`
    pub cross_class: f64,
    /// `tr(S̃_in L_p S̃_inᵀ)`
    pub code_graph: f64,
    /// `tr(ÃᵀK̃L̃K̃Ã)`
    pub manifold: f64,
    /// `tr(ÃᵀK̃M̃K̃Ã)`
    pub mmd: f64,
    pub total: f64,
}

/// `Z = ÃᵀK̃`, computed block by block.
pub fn embed_training(projections: &[DMatrix<f64>], grams: &[KernelGram]) -> DMatrix<f64> {
    let dim = projections.first().map_or(0, |a| a.ncols());
    let total: usize = grams.iter().map(|g| g.size()).sum();
    let mut z = DMatrix::zeros(dim, total);
    let mut offset = 0;
    for (a, g) in projections.iter().zip(grams) {
        let n = g.size();
        z.columns_mut(offset, n).copy_from(&a.tr_mul(&g.values));
        offset += n;
    }
    z
}

/// Value of the full objective and its gradient with respect to the stacked
/// `Ã` (one row per training sample).
pub fn total_objective(
    projections: &[DMatrix<f64>],
    dictionary: &DMatrix<f64>,
    codes: &SparseCodes,
    blocks: &TrainingBlocks,
    code_laplacian: &GraphLaplacian,
    h: &Hyperparams,
) -> Result<(ObjectiveTerms, DMatrix<f64>)> {
    let z = embed_training(projections, &blocks.grams);
    let (terms, h_mat) = objective_parts(&z, dictionary, codes, blocks, code_laplacian, h)?;
    // ∇_Ã = 2 K̃ H
    let grad = (&blocks.kernel * h_mat) * 2.0;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective gradient"));
    }
    Ok((terms, grad))
}

/// Objective value only.
pub fn objective_value(
    projections: &[DMatrix<f64>],
    dictionary: &DMatrix<f64>,
    codes: &SparseCodes,
    blocks: &TrainingBlocks,
    code_laplacian: &GraphLaplacian,
    h: &Hyperparams,
) -> Result<ObjectiveTerms> {
    let z = embed_training(projections, &blocks.grams);
    Ok(objective_parts(&z, dictionary, codes, blocks, code_laplacian, h)?.0)
}

/// Terms at embedding `Z`, plus `H = (E + μ₁E_in)ᵀ + λ₁L̃Zᵀ + λ₂M̃Zᵀ` so that
/// the gradient in `Ã` is `2K̃H`.
fn objective_parts(
    z: &DMatrix<f64>,
    dictionary: &DMatrix<f64>,
    codes: &SparseCodes,
    blocks: &TrainingBlocks,
    code_laplacian: &GraphLaplacian,
    h: &Hyperparams,
) -> Result<(ObjectiveTerms, DMatrix<f64>)> {
    let (s_in, s_out) = mask_split(codes)?;
    let e_full = z - dictionary * &codes.values;
    let e_in = z - dictionary * &s_in;
    let cross = dictionary * &s_out;
    let lz = &blocks.laplacian * z.transpose();
    let mz = &blocks.mmd * z.transpose();
    let terms = {
        let reconstruction = e_full.norm_squared();
        let class_reconstruction = e_in.norm_squared();
        let cross_class = cross.norm_squared();
        let code_graph = (&s_in * &code_laplacian.values).component_mul(&s_in).sum();
        let manifold = z.transpose().dot(&lz);
        let mmd = z.transpose().dot(&mz);
        let total = reconstruction
            + h.mu1 * class_reconstruction
            + h.mu2 * cross_class
            + h.lambda3 * code_graph
            + h.lambda1 * manifold
            + h.lambda2 * mmd;
        ObjectiveTerms {
            reconstruction,
            class_reconstruction,
            cross_class,
            code_graph,
            manifold,
            mmd,
            total,
        }
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    let h_mat = (e_full + e_in * h.mu1).transpose() + lz * h.lambda1 + mz * h.lambda2;
    Ok((terms, h_mat))
}

/// Dictionary-dependent part of the objective (the class-aware reconstruction
/// cost with the graph term).
pub fn reconstruction_objective(
    z: &DMatrix<f64>,
    dictionary: &DMatrix<f64>,
    codes: &SparseCodes,
    code_laplacian: &GraphLaplacian,
    h: &Hyperparams,
) -> Result<f64> {
    let (s_in, s_out) = mask_split(codes)?;
    let full = (z - dictionary * &codes.values).norm_squared();
    let inner = (z - dictionary * &s_in).norm_squared();
    let cross = (dictionary * &s_out).norm_squared();
    let graph = (&s_in * &code_laplacian.values).component_mul(&s_in).sum();
    Ok(full + h.mu1 * inner + h.mu2 * cross + h.lambda3 * graph)
}

/// Closed-form dictionary minimizing the class-aware reconstruction cost
/// with `S̃` fixed, before any normalization.
pub fn dictionary_least_squares(
    z: &DMatrix<f64>,
    codes: &SparseCodes,
    h: &Hyperparams,
) -> Result<DMatrix<f64>> {
    let (s_in, s_out) = mask_split(codes)?;
    let s = &codes.values;
    let rhs = z * s.transpose() + (z * s_in.transpose()) * h.mu1;
    let mut gram = s * s.transpose()
        + (&s_in * s_in.transpose()) * h.mu1
        + (&s_out * s_out.transpose()) * h.mu2;
    for i in 0..gram.nrows() {
        gram[(i, i)] += DICTIONARY_RIDGE;
    }
    // D · gram = rhs  ⇔  gramᵀ Dᵀ = rhsᵀ
    let solved = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs.transpose()),
        None => {
            log::warn!("dictionary normal equations are not positive definite");
            gram.lu()
                .solve(&rhs.transpose())
                .ok_or(Error::NonFinite("dictionary update"))?
        }
    };
    Ok(solved.transpose())
}

/// Dictionary update: closed-form least squares, then every atom is scaled
/// to unit norm and its code row is scaled inversely so `D S̃` is unchanged.
/// Atoms with a vanishing solution (unused atoms) keep their previous value.
pub fn update_dictionary(
    z: &DMatrix<f64>,
    codes: &SparseCodes,
    previous: &Dictionary,
    h: &Hyperparams,
) -> Result<(Dictionary, SparseCodes)> {
    let mut atoms = dictionary_least_squares(z, codes, h)?;
    let mut scaled = codes.clone();
    for k in 0..atoms.ncols() {
        let norm = atoms.column(k).norm();
        if norm > 1e-12 && norm.is_finite() {
            atoms.column_mut(k).unscale_mut(norm);
            scaled.values.row_mut(k).scale_mut(norm);
        } else {
            atoms.set_column(k, &previous.atoms.column(k));
        }
    }
    Ok((
        Dictionary {
            atoms,
            atom_classes: previous.atom_classes.clone(),
            classes: previous.classes,
        },
        scaled,
    ))
}

/// One sweep of exact atom-by-atom minimization under the unit-norm
/// constraint. With the others fixed the cost is `q‖d‖² − 2bᵀd`, so the
/// constrained minimizer is `b/‖b‖`.
pub fn dictionary_atom_sweep(
    z: &DMatrix<f64>,
    codes: &SparseCodes,
    previous: &Dictionary,
    h: &Hyperparams,
) -> Result<Dictionary> {
    let (s_in, s_out) = mask_split(codes)?;
    let s = &codes.values;
    let mut d = previous.atoms.clone();
    let mut e = z - &d * s;
    let mut e_in = z - &d * &s_in;
    let mut e_out = -(&d * &s_out);
    for k in 0..d.ncols() {
        let dk = d.column(k).into_owned();
        let (sk, ak, ok) = (s.row(k), s_in.row(k), s_out.row(k));
        // add atom k's contribution back into the residuals
        e += &dk * sk;
        e_in += &dk * ak;
        e_out += &dk * ok;
        let b: DVector<f64> = &e * sk.transpose()
            + (&e_in * ak.transpose()) * h.mu1
            + (&e_out * ok.transpose()) * h.mu2;
        let norm = b.norm();
        let new = if norm > 1e-14 { b / norm } else { dk };
        e -= &new * sk;
        e_in -= &new * ak;
        e_out -= &new * ok;
        d.set_column(k, &new);
    }
    Ok(Dictionary {
        atoms: d,
        atom_classes: previous.atom_classes.clone(),
        classes: previous.classes,
    })
}

/// Laplacian of the kNN graph over projected samples (columns of `z`), with
/// heat-kernel weights whose bandwidth is the median k-th neighbor distance.
pub fn projected_laplacian(z: &DMatrix<f64>, k: usize) -> Result<GraphLaplacian> {
    let n = z.ncols();
    if k == 0 || k >= n {
        return Err(Error::InvalidNeighborCount { k, n });
    }
    let sq: Vec<f64> = z.column_iter().map(|c| c.norm_squared()).collect();
    let inner = z.tr_mul(z);
    let dist2 = DMatrix::from_fn(n, n, |i, j| (sq[i] + sq[j] - 2.0 * inner[(i, j)]).max(0.0));
    let mut kth: Vec<f64> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist2[(i, j)]).collect();
            row.sort_by(f64::total_cmp);
            row[k - 1].sqrt()
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    let median = kth[n / 2];
    let sigma = if median > 1e-12 { median } else { 1.0 };
    let similarity = dist2.map(|d| (-d / (2.0 * sigma * sigma)).exp());
    knn_laplacian_from_gram(&similarity, k)
}

/// Per-domain kernel PCA: top principal directions of the centered Gram,
/// scaled and whitened so that `AᵢᵀKᵢAᵢ = I`.
pub fn kernel_pca_init(gram: &KernelGram, factor: &Whitening, dim: usize) -> DMatrix<f64> {
    let n = gram.size();
    let centering = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 1.0 / n as f64);
    let centered = &centering * &gram.values * &centering;
    let centered = (&centered + centered.transpose()) * 0.5;
    let eig = centered.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let mut a0 = DMatrix::zeros(n, dim);
    for (col, &idx) in order.iter().take(dim).enumerate() {
        let lambda = eig.eigenvalues[idx];
        if lambda > 1e-12 * top && lambda > 0.0 {
            let v = &centering * eig.eigenvectors.column(idx) / lambda.sqrt();
            a0.set_column(col, &v);
        }
    }
    let b = orthonormalize(&factor.whiten(&a0));
    factor.unwhiten(&b)
}

/// Sample `atoms_per_class` embedded training columns per class as the initial
/// dictionary.
pub fn init_dictionary(
    z: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    atoms_per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Dictionary {
    let dim = z.nrows();
    let mut atoms = DMatrix::zeros(dim, classes * atoms_per_class);
    let mut atom_classes = Vec::with_capacity(classes * atoms_per_class);
    for c in 0..classes {
        let mut pool: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == c).collect();
        pool.shuffle(rng);
        for a in 0..atoms_per_class {
            let col = if a < pool.len() {
                pool[a]
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            let v = z.column(col);
            let norm = v.norm();
            let k = c * atoms_per_class + a;
            if norm > 1e-12 {
                atoms.set_column(k, &(v / norm));
            } else {
                atoms[(k % dim, k)] = 1.0;
            }
            atom_classes.push(c);
        }
    }
    Dictionary {
        atoms,
        atom_classes,
        classes,
    }
}

/// Objective values around the three block updates of one outer iteration.
/// The sparse-code and dictionary values use the code graph rebuilt after
/// the projection update.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub before_projection: f64,
    pub after_projection: f64,
    pub before_codes: f64,
    pub after_codes: f64,
    pub after_dictionary: f64,
    pub projection_steps: usize,
    /// Largest `‖AᵢᵀKᵢAᵢ − I‖_F` over the accepted projection iterates.
    pub feasibility: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectiveTrace {
    pub initial: f64,
    pub iterations: Vec<OuterRecord>,
    pub warnings: Vec<String>,
}

impl ObjectiveTrace {
    /// Objective after each outer iteration, starting with the initial value.
    pub fn values(&self) -> Vec<f64> {
        std::iter::once(self.initial)
            .chain(self.iterations.iter().map(|r| r.after_dictionary))
            .collect()
    }

    pub fn max_feasibility(&self) -> f64 {
        self.iterations
            .iter()
            .map(|r| r.feasibility)
            .fold(0.0, f64::max)
    }
}

/// Everything needed to classify new samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub hyperparams: Hyperparams,
    /// `Aᵢ`, one per domain.
    pub projections: Vec<DMatrix<f64>>,
    /// Training features `Xᵢ` retained for test-time kernels.
    pub features: Vec<DMatrix<f64>>,
    pub domain_names: Vec<String>,
    pub dictionary: Dictionary,
    pub classes: usize,
    pub trace: ObjectiveTrace,
}

impl TrainedModel {
    pub fn domain_index(&self, name: &str) -> Option<usize> {
        self.domain_names.iter().position(|n| n == name)
    }
}

/// OMP codes followed by graph-regularized refinement of the in-class entries.
fn fresh_codes(
    z: &DMatrix<f64>,
    dictionary: &Dictionary,
    labels: &[usize],
    laplacian: &GraphLaplacian,
    h: &Hyperparams,
) -> Result<SparseCodes> {
    let codes = omp_batch(&dictionary.atoms, z, h.sparsity)?
        .with_labels(dictionary.atom_classes.clone(), labels.to_vec());
    refine_codes(&dictionary.atoms, z, &codes, laplacian, h.lambda3, h.mu1)
}

/// Train a model on labeled samples from two or more domains.
pub fn fit(domains: &[DomainDataset], h: &Hyperparams) -> Result<TrainedModel> {
    let blocks = assemble_blocks(domains, h)?;
    h.validate_for(&blocks.sizes, blocks.classes)?;
    let factors: Vec<Whitening> = blocks
        .grams
        .iter()
        .map(manifold_opt::whiten_with_ladder)
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);

    let initial: Vec<DMatrix<f64>> = blocks
        .grams
        .iter()
        .zip(&factors)
        .map(|(g, f)| kernel_pca_init(g, f, h.dim))
        .collect();
    let mut coeffs = ProjectionCoeffs {
        blocks: initial,
        factors,
    };
    let mut z = embed_training(&coeffs.blocks, &blocks.grams);
    let mut dictionary = init_dictionary(
        &z,
        &blocks.labels,
        blocks.classes,
        h.atoms_per_class,
        &mut rng,
    );
    let mut code_graph = projected_laplacian(&z, h.k_nn)?;
    let mut codes = fresh_codes(&z, &dictionary, &blocks.labels, &code_graph, h)?;

    let objective =
        |coeffs: &[DMatrix<f64>], d: &Dictionary, s: &SparseCodes, lp: &GraphLaplacian| {
            objective_value(coeffs, &d.atoms, s, &blocks, lp, h).map(|t| t.total)
        };

    let mut trace = ObjectiveTrace {
        initial: objective(&coeffs.blocks, &dictionary, &codes, &code_graph)?,
        ..ObjectiveTrace::default()
    };
    let search = SearchOptions {
        max_iters: h.inner_iters,
        ..SearchOptions::default()
    };
    let offsets = blocks.offsets();

    for outer in 0..h.outer_iters {
        let before_projection = objective(&coeffs.blocks, &dictionary, &codes, &code_graph)?;

        // projection update on the whitened variables
        let mut feasibility = coeffs.feasibility_residual(&blocks.grams);
        let outcome = {
            let factors = &coeffs.factors;
            let current = &codes;
            let atoms = &dictionary.atoms;
            let lp = &code_graph;
            let grams = &blocks.grams;
            let mut observe = |whitened: &[DMatrix<f64>]| {
                for ((b, f), g) in whitened.iter().zip(factors).zip(grams) {
                    feasibility = feasibility.max(constraint_residual(&f.unwhiten(b), &g.values));
                }
            };
            manifold_opt::minimize_feasible_observed(
                |whitened| {
                    let a: Vec<DMatrix<f64>> = whitened
                        .iter()
                        .zip(factors)
                        .map(|(b, f)| f.unwhiten(b))
                        .collect();
                    let (terms, grad) = total_objective(&a, atoms, current, &blocks, lp, h)?;
                    let grads = factors
                        .iter()
                        .enumerate()
                        .map(|(i, f)| {
                            let rows = grad.rows(offsets[i], blocks.sizes[i]).into_owned();
                            f.pull_back_gradient(&rows)
                        })
                        .collect();
                    Ok((terms.total, grads))
                },
                coeffs.whitened(),
                &search,
                &mut observe,
            )?
        };
        let factors = std::mem::take(&mut coeffs.factors);
        coeffs = ProjectionCoeffs::from_whitened(&outcome.point, factors);
        let after_projection = objective(&coeffs.blocks, &dictionary, &codes, &code_graph)?;

        z = embed_training(&coeffs.blocks, &blocks.grams);
        code_graph = projected_laplacian(&z, h.k_nn)?;

        // sparse code update: fresh OMP codes, or the refined previous codes
        // when those are better
        let before_codes = objective(&coeffs.blocks, &dictionary, &codes, &code_graph)?;
        let candidate = fresh_codes(&z, &dictionary, &blocks.labels, &code_graph, h)?;
        let kept = refine_codes(&dictionary.atoms, &z, &codes, &code_graph, h.lambda3, h.mu1)?;
        let f_candidate = objective(&coeffs.blocks, &dictionary, &candidate, &code_graph)?;
        let f_kept = objective(&coeffs.blocks, &dictionary, &kept, &code_graph)?;
        let (updated, f_updated) = if f_candidate <= f_kept {
            (candidate, f_candidate)
        } else {
            (kept, f_kept)
        };
        // a worse value can only come from rounding; keep the previous codes then
        let after_codes = if f_updated <= before_codes {
            codes = updated;
            f_updated
        } else {
            before_codes
        };

        // dictionary update
        let (d_ls, s_ls) = update_dictionary(&z, &codes, &dictionary, h)?;
        let f_ls = objective(&coeffs.blocks, &d_ls, &s_ls, &code_graph)?;
        let mut after_dictionary = after_codes;
        if f_ls <= after_codes {
            dictionary = d_ls;
            codes = s_ls;
            after_dictionary = f_ls;
        } else {
            let d_sweep = dictionary_atom_sweep(&z, &codes, &dictionary, h)?;
            let f_sweep = objective(&coeffs.blocks, &d_sweep, &codes, &code_graph)?;
            if f_sweep <= after_codes {
                dictionary = d_sweep;
                after_dictionary = f_sweep;
            }
        }

        if after_dictionary > before_projection * (1.0 + MONOTONE_TOL) + f64::EPSILON {
            let msg = format!(
                "outer iteration {outer}: objective rose from {before_projection:.6e} to {after_dictionary:.6e}"
            );
            log::warn!("{msg}");
            trace.warnings.push(msg);
        }
        trace.iterations.push(OuterRecord {
            before_projection,
            after_projection,
            before_codes,
            after_codes,
            after_dictionary,
            projection_steps: outcome.iterations,
            feasibility,
        });
    }

    Ok(TrainedModel {
        hyperparams: h.clone(),
        projections: coeffs.blocks,
        features: domains.iter().map(|d| d.features.clone()).collect(),
        domain_names: domains.iter().map(|d| d.name.clone()).collect(),
        dictionary,
        classes: blocks.classes,
        trace,
    })
}

/// Check used by `fit` callers: every dictionary atom is unit-norm.
pub fn dictionary_is_normalized(d: &Dictionary) -> bool {
    sparse::check_unit_columns(&d.atoms).is_ok()
}
