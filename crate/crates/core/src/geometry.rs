//! Kernels, Gram matrices, nearest-neighbor graph Laplacians and the MMD matrix.
//!
//! Feature matrices are stored one sample per column (`features × samples`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Kernel used to compare samples in the reproducing kernel Hilbert space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum KernelSpec {
    /// `k(x, y) = Σ min(xᵢ, yᵢ)`, valid on nonnegative histograms.
    #[default]
    HistogramIntersection,
    /// `k(x, y) = ⟨x, y⟩`.
    Linear,
    /// `k(x, y) = exp(-‖x − y‖² / (2σ²))`.
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::InvalidKernel(format!(
                    "gaussian bandwidth must be positive, got {bandwidth}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn requires_nonnegative(&self) -> bool {
        matches!(self, KernelSpec::HistogramIntersection)
    }

    /// Short name used in config files and reports.
    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::HistogramIntersection => "hik",
            KernelSpec::Linear => "linear",
            KernelSpec::Gaussian { .. } => "gaussian",
        }
    }
}

/// Evaluate the kernel on a pair of feature vectors.
pub fn kernel_value(x: &[f64], y: &[f64], spec: KernelSpec) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    spec.validate()?;
    if spec.requires_nonnegative() {
        if let Some(&value) = x.iter().chain(y).find(|v| **v < 0.0) {
            return Err(Error::NegativeEntry { value });
        }
    }
    Ok(kernel_unchecked(x, y, spec))
}

#[inline]
fn kernel_unchecked(x: &[f64], y: &[f64], spec: KernelSpec) -> f64 {
    match spec {
        KernelSpec::HistogramIntersection => x.iter().zip(y).map(|(a, b)| a.min(*b)).sum(),
        KernelSpec::Linear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        KernelSpec::Gaussian { bandwidth } => {
            let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (-d2 / (2.0 * bandwidth * bandwidth)).exp()
        }
    }
}

/// Contiguous slice of column `j` of a column-major matrix.
#[inline]
pub(crate) fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

fn check_inputs(x: &DMatrix<f64>, spec: KernelSpec) -> Result<()> {
    if spec.requires_nonnegative() {
        if let Some(&value) = x.iter().find(|v| **v < 0.0) {
            return Err(Error::NegativeEntry { value });
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel input"));
    }
    Ok(())
}

/// Cached Gram matrix of one domain (or of the block-diagonal training set).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGram {
    pub values: DMatrix<f64>,
}

impl KernelGram {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Cross Gram matrix with entry `(i, j) = k(xᵢ, yⱼ)`.
pub fn gram(x: &DMatrix<f64>, y: &DMatrix<f64>, spec: KernelSpec) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: y.nrows(),
        });
    }
    spec.validate()?;
    check_inputs(x, spec)?;
    check_inputs(y, spec)?;
    Ok(DMatrix::from_fn(x.ncols(), y.ncols(), |i, j| {
        kernel_unchecked(column(x, i), column(y, j), spec)
    }))
}

/// Symmetric Gram matrix of a single sample set. Only the upper triangle is
/// evaluated, so the result is exactly symmetric.
pub fn self_gram(x: &DMatrix<f64>, spec: KernelSpec) -> Result<KernelGram> {
    spec.validate()?;
    check_inputs(x, spec)?;
    let n = x.ncols();
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = kernel_unchecked(column(x, i), column(x, j), spec);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(KernelGram { values: g })
}

/// Normalized graph Laplacian `I − Deg^{-1/2} W Deg^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    pub values: DMatrix<f64>,
    pub neighbor_count: usize,
}

impl GraphLaplacian {
    /// The all-zero operator, which switches the graph term off.
    pub fn zeros(n: usize) -> Self {
        GraphLaplacian {
            values: DMatrix::zeros(n, n),
            neighbor_count: 0,
        }
    }
}

/// Symmetric kNN adjacency built from a similarity (Gram) matrix.
///
/// Neighbors are ranked by the kernel-induced distance
/// `k(x,x) + k(y,y) − 2k(x,y)`; ties go to the lower index. An edge is kept
/// when either endpoint lists the other, weighted by the similarity.
pub fn knn_adjacency(similarity: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let n = similarity.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidNeighborCount { k, n });
    }
    let mut w = DMatrix::zeros(n, n);
    let mut order: Vec<usize> = Vec::with_capacity(n - 1);
    for i in 0..n {
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        let dist = |j: usize| similarity[(i, i)] + similarity[(j, j)] - 2.0 * similarity[(i, j)];
        order.sort_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)));
        for &j in &order[..k] {
            w[(i, j)] = similarity[(i, j)];
            w[(j, i)] = similarity[(j, i)];
        }
    }
    Ok(w)
}

/// Normalized Laplacian of a symmetric nonnegative adjacency matrix.
pub fn normalized_laplacian(
    adjacency: &DMatrix<f64>,
    neighbor_count: usize,
) -> Result<GraphLaplacian> {
    let n = adjacency.nrows();
    let degree: Vec<f64> = adjacency.row_iter().map(|r| r.sum()).collect();
    if let Some(vertex) = degree.iter().position(|d| d.is_nan() || *d <= 0.0) {
        return Err(Error::DegenerateGraph { vertex });
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = DMatrix::from_fn(n, n, |i, j| -adjacency[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
    for i in 0..n {
        l[(i, i)] += 1.0;
    }
    // symmetrize away rounding in the products
    let l = (&l + l.transpose()) * 0.5;
    Ok(GraphLaplacian {
        values: l,
        neighbor_count,
    })
}

/// Laplacian of the symmetric kNN graph over the columns of `x`.
pub fn knn_laplacian(x: &DMatrix<f64>, k: usize, spec: KernelSpec) -> Result<GraphLaplacian> {
    let n = x.ncols();
    if k == 0 || k >= n {
        return Err(Error::InvalidNeighborCount { k, n });
    }
    let g = self_gram(x, spec)?;
    knn_laplacian_from_gram(&g.values, k)
}

pub fn knn_laplacian_from_gram(similarity: &DMatrix<f64>, k: usize) -> Result<GraphLaplacian> {
    let w = knn_adjacency(similarity, k)?;
    normalized_laplacian(&w, k)
}

/// Multi-domain MMD matrix: the sum over all domain pairs of `v vᵀ`, where `v`
/// holds `1/N_a` on block `a` and `−1/N_b` on block `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdMatrix {
    pub values: DMatrix<f64>,
    pub block_sizes: Vec<usize>,
}

pub fn mmd_matrix(block_sizes: &[usize]) -> Result<MmdMatrix> {
    if let Some(pos) = block_sizes.iter().position(|&s| s == 0) {
        return Err(Error::EmptyDomain(pos));
    }
    let offsets = block_offsets(block_sizes);
    let total: usize = block_sizes.iter().sum();
    let mut m = DMatrix::zeros(total, total);
    let mut v = vec![0.0; total];
    for a in 0..block_sizes.len() {
        for b in a + 1..block_sizes.len() {
            v.iter_mut().for_each(|e| *e = 0.0);
            for e in &mut v[offsets[a]..offsets[a] + block_sizes[a]] {
                *e = 1.0 / block_sizes[a] as f64;
            }
            for e in &mut v[offsets[b]..offsets[b] + block_sizes[b]] {
                *e = -1.0 / block_sizes[b] as f64;
            }
            for j in 0..total {
                if v[j] == 0.0 {
                    continue;
                }
                for i in 0..total {
                    m[(i, j)] += v[i] * v[j];
                }
            }
        }
    }
    Ok(MmdMatrix {
        values: m,
        block_sizes: block_sizes.to_vec(),
    })
}

/// Starting offset of each block in the stacked (domain-major) ordering.
pub fn block_offsets(block_sizes: &[usize]) -> Vec<usize> {
    block_sizes
        .iter()
        .scan(0usize, |acc, &s| {
            let start = *acc;
            *acc += s;
            Some(start)
        })
        .collect()
}

/// Block-diagonal matrix assembled from square blocks.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut offset = 0;
    for b in blocks {
        let s = b.nrows();
        out.view_mut((offset, offset), (s, s)).copy_from(*b);
        offset += s;
    }
    out
}
