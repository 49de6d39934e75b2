//! Orthogonal Matching Pursuit, class-masked code views and graph-regularized
//! refinement of codes on fixed supports.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::GraphLaplacian;

const UNIT_NORM_TOL: f64 = 1e-6;
const RESIDUAL_TOL: f64 = 1e-12;
const RIDGE: f64 = 1e-8;
/// Above this many unknowns the refinement switches from a dense Cholesky
/// solve to conjugate gradients on the same system.
const DENSE_REFINE_LIMIT: usize = 2500;

/// A single sparse code: support indices (in selection order) and coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub support: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub residual_norm: f64,
}

impl SparseVector {
    pub fn to_dense(&self, len: usize) -> DVector<f64> {
        let mut v = DVector::zeros(len);
        for (&i, &c) in self.support.iter().zip(&self.coefficients) {
            v[i] = c;
        }
        v
    }
}

/// Codes for a batch of samples, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodes {
    pub values: DMatrix<f64>,
    /// Sorted support of every column.
    pub supports: Vec<Vec<usize>>,
    pub atom_classes: Vec<usize>,
    pub sample_classes: Vec<usize>,
}

impl SparseCodes {
    pub fn zeros(atoms: usize, samples: usize) -> Self {
        SparseCodes {
            values: DMatrix::zeros(atoms, samples),
            supports: vec![Vec::new(); samples],
            atom_classes: Vec::new(),
            sample_classes: Vec::new(),
        }
    }

    pub fn with_labels(mut self, atom_classes: Vec<usize>, sample_classes: Vec<usize>) -> Self {
        self.atom_classes = atom_classes;
        self.sample_classes = sample_classes;
        self
    }

    pub fn max_support(&self) -> usize {
        self.supports.iter().map(Vec::len).max().unwrap_or(0)
    }

    fn check_labels(&self) -> Result<()> {
        if self.atom_classes.len() != self.values.nrows() {
            return Err(Error::MissingLabels(format!(
                "{} atom labels for {} atoms",
                self.atom_classes.len(),
                self.values.nrows()
            )));
        }
        if self.sample_classes.len() != self.values.ncols() {
            return Err(Error::MissingLabels(format!(
                "{} sample labels for {} samples",
                self.sample_classes.len(),
                self.values.ncols()
            )));
        }
        Ok(())
    }

    #[inline]
    fn in_class(&self, atom: usize, sample: usize) -> bool {
        self.atom_classes[atom] == self.sample_classes[sample]
    }
}

pub(crate) fn check_unit_columns(d: &DMatrix<f64>) -> Result<()> {
    for (atom, col) in d.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::DictionaryNotNormalized { atom, norm });
        }
    }
    Ok(())
}

/// Least-squares coefficients of `x` on the columns of `d` listed in `support`.
fn least_squares(d: &DMatrix<f64>, support: &[usize], x: &DVector<f64>) -> Vec<f64> {
    let sub = d.select_columns(support);
    let qr = sub.clone().qr();
    let rhs = qr.q().transpose() * x;
    match qr.r().solve_upper_triangular(&rhs) {
        Some(c) => c.iter().copied().collect(),
        None => {
            // rank-deficient support; fall back to ridge normal equations
            let mut g = sub.transpose() * &sub;
            for i in 0..g.nrows() {
                g[(i, i)] += RIDGE;
            }
            let b = sub.transpose() * x;
            g.cholesky()
                .map(|c| c.solve(&b).iter().copied().collect())
                .unwrap_or_else(|| vec![0.0; support.len()])
        }
    }
}

/// Greedy sparse approximation of `x` with at most `t0` atoms of `d`.
///
/// Each step adds the atom with the largest absolute correlation to the
/// residual (lowest index on ties) and re-fits all selected coefficients by
/// least squares.
pub fn omp(d: &DMatrix<f64>, x: &DVector<f64>, t0: usize) -> Result<SparseVector> {
    check_unit_columns(d)?;
    omp_unchecked(d, x, t0)
}

fn omp_unchecked(d: &DMatrix<f64>, x: &DVector<f64>, t0: usize) -> Result<SparseVector> {
    let max = d.nrows().min(d.ncols());
    if t0 == 0 || t0 > max {
        return Err(Error::SparsityOutOfRange { t0, max });
    }
    if x.len() != d.nrows() {
        return Err(Error::DimensionMismatch {
            expected: d.nrows(),
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    let scale = x.norm().max(1.0);
    let mut support: Vec<usize> = Vec::with_capacity(t0);
    let mut coefficients: Vec<f64> = Vec::new();
    let mut residual = x.clone();
    while support.len() < t0 && residual.norm() >= RESIDUAL_TOL {
        let corr = d.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in corr.iter().enumerate() {
            if support.contains(&i) {
                continue;
            }
            let a = c.abs();
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((i, a));
            }
        }
        let Some((atom, magnitude)) = best else { break };
        if magnitude <= 1e-14 * scale {
            break;
        }
        support.push(atom);
        coefficients = least_squares(d, &support, x);
        residual = x.clone();
        for (&i, &c) in support.iter().zip(&coefficients) {
            residual.axpy(-c, &d.column(i), 1.0);
        }
    }
    Ok(SparseVector {
        support,
        coefficients,
        residual_norm: residual.norm(),
    })
}

/// Column-wise OMP over a batch of signals.
pub fn omp_batch(d: &DMatrix<f64>, z: &DMatrix<f64>, t0: usize) -> Result<SparseCodes> {
    check_unit_columns(d)?;
    let mut codes = SparseCodes::zeros(d.ncols(), z.ncols());
    for (j, col) in z.column_iter().enumerate() {
        let x = col.into_owned();
        let code = omp_unchecked(d, &x, t0).map_err(|e| Error::Column {
            column: j,
            source: Box::new(e),
        })?;
        for (&i, &c) in code.support.iter().zip(&code.coefficients) {
            codes.values[(i, j)] = c;
        }
        let mut sorted = code.support;
        sorted.sort_unstable();
        codes.supports[j] = sorted;
    }
    Ok(codes)
}

/// Split codes into the entries where atom and sample share a class (`S_in`)
/// and the complementary entries (`S_out`).
pub fn mask_split(codes: &SparseCodes) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    codes.check_labels()?;
    let (k, n) = codes.values.shape();
    let mut s_in = DMatrix::zeros(k, n);
    let mut s_out = DMatrix::zeros(k, n);
    for j in 0..n {
        for i in 0..k {
            let v = codes.values[(i, j)];
            if codes.in_class(i, j) {
                s_in[(i, j)] = v;
            } else {
                s_out[(i, j)] = v;
            }
        }
    }
    Ok((s_in, s_out))
}

/// Objective minimized by [`refine_codes`]:
/// `‖Z − D S‖² + μ₁‖Z − D S_in‖² + λ₃ tr(S_in L S_inᵀ)`.
pub fn refine_objective(
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    codes: &SparseCodes,
    laplacian: &GraphLaplacian,
    lambda3: f64,
    mu1: f64,
) -> Result<f64> {
    let (s_in, _) = mask_split(codes)?;
    let full = (z - d * &codes.values).norm_squared();
    let inner = (z - d * &s_in).norm_squared();
    let graph = (&s_in * &laplacian.values).component_mul(&s_in).sum();
    Ok(full + mu1 * inner + lambda3 * graph)
}

/// Re-solve the in-class code entries on their fixed supports.
///
/// Out-of-class entries are held fixed and entries off the support stay
/// zero. The in-class entries jointly minimize [`refine_objective`], which is
/// a positive-definite quadratic in them.
pub fn refine_codes(
    d: &DMatrix<f64>,
    z: &DMatrix<f64>,
    codes: &SparseCodes,
    laplacian: &GraphLaplacian,
    lambda3: f64,
    mu1: f64,
) -> Result<SparseCodes> {
    codes.check_labels()?;
    let (k, n) = codes.values.shape();
    if d.ncols() != k || z.ncols() != n || d.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: d.ncols(),
        });
    }
    if laplacian.values.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: laplacian.values.nrows(),
        });
    }
    let unknowns: Vec<(usize, usize)> = codes
        .supports
        .iter()
        .enumerate()
        .flat_map(|(j, sup)| sup.iter().map(move |&i| (i, j)))
        .filter(|&(i, j)| codes.in_class(i, j))
        .collect();
    if unknowns.is_empty() {
        return Ok(codes.clone());
    }

    let (_, s_out) = mask_split(codes)?;
    let gram = d.tr_mul(d);
    // rhs = Dᵀ((Z − D S_out) + μ₁ Z)
    let target = z * (1.0 + mu1) - d * &s_out;
    let rhs_full = d.tr_mul(&target);
    let rhs = DVector::from_iterator(
        unknowns.len(),
        unknowns.iter().map(|&(i, j)| rhs_full[(i, j)]),
    );
    let l = &laplacian.values;
    let a = 1.0 + mu1;

    let solution = if unknowns.len() <= DENSE_REFINE_LIMIT {
        let m = unknowns.len();
        let mut h = DMatrix::zeros(m, m);
        for (p, &(i, j)) in unknowns.iter().enumerate() {
            for (q, &(i2, j2)) in unknowns.iter().enumerate() {
                let mut v = 0.0;
                if j == j2 {
                    v += a * gram[(i, i2)];
                }
                if i == i2 {
                    v += lambda3 * l[(j2, j)];
                }
                h[(p, q)] = v;
            }
        }
        solve_spd(h, &rhs)
    } else {
        let x0 = DVector::from_iterator(
            unknowns.len(),
            unknowns.iter().map(|&(i, j)| codes.values[(i, j)]),
        );
        conjugate_gradient(&unknowns, (k, n), &gram, l, a, lambda3, &rhs, x0)
    };

    let mut refined = codes.clone();
    for (&(i, j), &v) in unknowns.iter().zip(solution.iter()) {
        refined.values[(i, j)] = v;
    }
    let before = refine_objective(d, z, codes, laplacian, lambda3, mu1)?;
    let after = refine_objective(d, z, &refined, laplacian, lambda3, mu1)?;
    if !after.is_finite() {
        return Err(Error::NonFinite("refined codes"));
    }
    if after > before {
        // rounding only; the exact minimizer cannot be worse than the start
        return Ok(codes.clone());
    }
    Ok(refined)
}

fn solve_spd(mut h: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(rhs);
    }
    log::warn!("singular code refinement system; adding ridge {RIDGE:e}");
    for i in 0..h.nrows() {
        h[(i, i)] += RIDGE;
    }
    match h.clone().cholesky() {
        Some(ch) => ch.solve(rhs),
        None => h
            .lu()
            .solve(rhs)
            .unwrap_or_else(|| DVector::zeros(rhs.len())),
    }
}

#[allow(clippy::too_many_arguments)]
fn conjugate_gradient(
    unknowns: &[(usize, usize)],
    shape: (usize, usize),
    gram: &DMatrix<f64>,
    laplacian: &DMatrix<f64>,
    a: f64,
    lambda3: f64,
    rhs: &DVector<f64>,
    x0: DVector<f64>,
) -> DVector<f64> {
    let apply = |v: &DVector<f64>| -> DVector<f64> {
        let mut s = DMatrix::zeros(shape.0, shape.1);
        for (&(i, j), &x) in unknowns.iter().zip(v.iter()) {
            s[(i, j)] = x;
        }
        let out = gram * &s * a + &s * laplacian * lambda3;
        DVector::from_iterator(v.len(), unknowns.iter().map(|&(i, j)| out[(i, j)]))
    };
    let mut x = x0;
    let mut r = rhs - apply(&x);
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let stop = 1e-24 * rhs.norm_squared().max(1e-300);
    for _ in 0..(10 * unknowns.len()) {
        if rs <= stop {
            break;
        }
        let hp = apply(&p);
        let alpha = rs / p.dot(&hp);
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &hp, 1.0);
        let rs_new = r.norm_squared();
        p = &r + &p * (rs_new / rs);
        rs = rs_new;
    }
    x
}
