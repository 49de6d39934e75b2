//! Feasible curvilinear search under the generalized orthogonality
//! constraints `Aᵢᵀ Kᵢ Aᵢ = I`.
//!
//! Each Gram matrix is factored as `Kᵢ + εI = RᵢᵀRᵢ`. With `Bᵢ = Rᵢ Aᵢ` the
//! constraint becomes `BᵢᵀBᵢ = I`, a product of ordinary Stiefel manifolds, on
//! which the solver takes Cayley-transform steps with Barzilai–Borwein step
//! sizes and a Zhang–Hager nonmonotone line search.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::KernelGram;

/// Jitter levels tried in order when factoring a Gram matrix.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];
/// Constraint residual allowed on any accepted iterate.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Upper-triangular factor `R` with `RᵀR = K + εI`.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitening {
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

impl Whitening {
    /// `A = R⁻¹ B`.
    pub fn unwhiten(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor
            .solve_upper_triangular(b)
            .expect("whitening factor has a nonzero diagonal")
    }

    /// `B = R A`.
    pub fn whiten(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.factor * a
    }

    /// Map a gradient with respect to `A` to one with respect to `B`: `R⁻ᵀ ∇_A`.
    pub fn pull_back_gradient(&self, grad_a: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor
            .tr_solve_upper_triangular(grad_a)
            .expect("whitening factor has a nonzero diagonal")
    }
}

/// Cholesky factor of `K + εI` for a single jitter level.
pub fn whiten(k: &KernelGram, jitter: f64) -> Result<Whitening> {
    let n = k.size();
    let mut shifted = k.values.clone();
    for i in 0..n {
        shifted[(i, i)] += jitter;
    }
    let chol = shifted.cholesky().ok_or(Error::GramDeficient { jitter })?;
    let factor = chol.l().transpose();
    if factor.diagonal().iter().any(|d| d.is_nan() || *d <= 0.0) {
        return Err(Error::GramDeficient { jitter });
    }
    Ok(Whitening { factor, jitter })
}

/// Factor with the smallest jitter on [`JITTER_LADDER`] that succeeds.
pub fn whiten_with_ladder(k: &KernelGram) -> Result<Whitening> {
    for &jitter in &JITTER_LADDER {
        if let Ok(w) = whiten(k, jitter) {
            if jitter > 0.0 {
                log::warn!("Gram matrix needed jitter {jitter:e} to factor");
            }
            return Ok(w);
        }
    }
    Err(Error::GramDeficient {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

/// `‖BᵀB − I‖_F`.
pub fn stiefel_residual(b: &DMatrix<f64>) -> f64 {
    let mut g = b.tr_mul(b);
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// `‖AᵀKA − I‖_F`.
pub fn constraint_residual(a: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
    let mut g = a.tr_mul(&(k * a));
    for i in 0..g.nrows() {
        g[(i, i)] -= 1.0;
    }
    g.norm()
}

/// Modified Gram–Schmidt on the columns of `b`. Columns that collapse are
/// replaced by the first standard basis vectors that are still independent.
pub fn orthonormalize(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = b.shape();
    assert!(
        cols <= rows,
        "cannot orthonormalize {cols} columns in {rows} dimensions"
    );
    let mut q = DMatrix::<f64>::zeros(rows, cols);
    let mut next_basis = 0;
    for j in 0..cols {
        let mut v = b.column(j).into_owned();
        let scale = v.norm().max(1.0);
        for _ in 0..2 {
            for p in 0..j {
                let proj = q.column(p).dot(&v);
                v.axpy(-proj, &q.column(p), 1.0);
            }
        }
        while v.norm() <= 1e-10 * scale {
            v = nalgebra::DVector::zeros(rows);
            v[next_basis % rows] = 1.0;
            next_basis += 1;
            for _ in 0..2 {
                for p in 0..j {
                    let proj = q.column(p).dot(&v);
                    v.axpy(-proj, &q.column(p), 1.0);
                }
            }
        }
        let norm = v.norm();
        q.set_column(j, &(v / norm));
    }
    q
}

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub max_iters: usize,
    /// Stop once the relative objective change stays below this for
    /// `patience` consecutive steps.
    pub rel_tol: f64,
    pub patience: usize,
    /// Stop once the Riemannian gradient norm falls below this.
    pub grad_tol: f64,
    pub armijo: f64,
    pub backtrack: f64,
    /// Averaging weight of the nonmonotone reference value.
    pub memory: f64,
    pub initial_step: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            max_iters: 200,
            rel_tol: 1e-6,
            patience: 3,
            grad_tol: 1e-10,
            armijo: 1e-4,
            backtrack: 0.1,
            memory: 0.85,
            initial_step: 1e-3,
        }
    }
}

/// Result of [`minimize_feasible`].
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub point: Vec<DMatrix<f64>>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    /// Largest `‖BᵢᵀBᵢ − I‖_F` over all accepted iterates and blocks.
    pub max_feasibility_error: f64,
}

fn frob_dot(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// `G − X GᵀX` per block.
fn riemannian_gradient(x: &[DMatrix<f64>], g: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    x.iter().zip(g).map(|(x, g)| g - x * g.tr_mul(x)).collect()
}

/// Cayley curve `Y(τ) = (I + τ/2 W)⁻¹(I − τ/2 W) X` with `W = GXᵀ − XGᵀ`,
/// evaluated through the rank-2n form.
fn cayley_step(x: &DMatrix<f64>, g: &DMatrix<f64>, tau: f64) -> Option<DMatrix<f64>> {
    let (rows, p) = x.shape();
    let mut u = DMatrix::zeros(rows, 2 * p);
    u.view_mut((0, 0), (rows, p)).copy_from(g);
    u.view_mut((0, p), (rows, p)).copy_from(x);
    let mut v = DMatrix::zeros(rows, 2 * p);
    v.view_mut((0, 0), (rows, p)).copy_from(x);
    v.view_mut((0, p), (rows, p)).copy_from(&(-g));
    let mut system = v.tr_mul(&u) * (0.5 * tau);
    for i in 0..2 * p {
        system[(i, i)] += 1.0;
    }
    let rhs = v.tr_mul(x);
    let solved = system.lu().solve(&rhs)?;
    Some(x - u * solved * tau)
}

/// Minimize `objective` over blocks `Bᵢ` with `BᵢᵀBᵢ = I`.
///
/// `objective` returns the value and the Euclidean gradient for each block.
/// All blocks move together with a shared step size. The returned point is
/// the best accepted iterate, so `value ≤ initial_value`.
pub fn minimize_feasible<F>(
    objective: F,
    start: Vec<DMatrix<f64>>,
    opts: &SearchOptions,
) -> Result<SearchOutcome>
where
    F: FnMut(&[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)>,
{
    minimize_feasible_observed(objective, start, opts, |_| {})
}

/// [`minimize_feasible`] with a callback invoked on the start point and on
/// every accepted iterate.
pub fn minimize_feasible_observed<F, O>(
    mut objective: F,
    start: Vec<DMatrix<f64>>,
    opts: &SearchOptions,
    mut observe: O,
) -> Result<SearchOutcome>
where
    F: FnMut(&[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)>,
    O: FnMut(&[DMatrix<f64>]),
{
    let mut max_feas = 0.0f64;
    for b in &start {
        let r = stiefel_residual(b);
        if r.is_nan() || r > FEASIBILITY_TOL {
            return Err(Error::Infeasible { residual: r });
        }
        max_feas = max_feas.max(r);
    }

    observe(&start);
    let mut x = start;
    let (mut f, mut g) = objective(&x)?;
    if !f.is_finite() || g.iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("objective or gradient"));
    }
    let initial_value = f;
    let mut dir = riemannian_gradient(&x, &g);
    let mut best = (f, x.clone());

    let mut tau = opts.initial_step;
    let mut reference = f;
    let mut weight = 1.0;
    let mut quiet_steps = 0;
    let mut iterations = 0;

    while iterations < opts.max_iters {
        let grad_norm = frob_dot(&dir, &dir).sqrt();
        if grad_norm <= opts.grad_tol {
            break;
        }
        // f'(0) along the Cayley curve: −tr(Gᵀ W X) = −⟨G, G − X GᵀX⟩
        let slope = -frob_dot(&g, &dir);

        let mut accepted = None;
        let mut step = tau;
        for _ in 0..40 {
            let trial: Option<Vec<DMatrix<f64>>> = x
                .iter()
                .zip(&g)
                .map(|(xb, gb)| cayley_step(xb, gb, step))
                .collect();
            if let Some(trial) = trial {
                if let Ok((f_new, g_new)) = objective(&trial) {
                    let finite =
                        f_new.is_finite() && g_new.iter().all(|m| m.iter().all(|v| v.is_finite()));
                    if finite && f_new <= reference + opts.armijo * step * slope {
                        accepted = Some((trial, f_new, g_new));
                        break;
                    }
                }
            }
            step *= opts.backtrack;
            if step < 1e-20 {
                break;
            }
        }
        let Some((mut x_new, mut f_new, mut g_new)) = accepted else {
            break;
        };
        iterations += 1;

        let mut drift = x_new.iter().map(stiefel_residual).fold(0.0, f64::max);
        if drift > 1e-12 {
            x_new = x_new.iter().map(orthonormalize).collect();
            let (fr, gr) = objective(&x_new)?;
            f_new = fr;
            g_new = gr;
            drift = x_new.iter().map(stiefel_residual).fold(0.0, f64::max);
        }
        max_feas = max_feas.max(drift);
        observe(&x_new);

        let dir_new = riemannian_gradient(&x_new, &g_new);
        let s: Vec<DMatrix<f64>> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<DMatrix<f64>> = dir_new.iter().zip(&dir).map(|(a, b)| a - b).collect();
        let sy = frob_dot(&s, &y).abs();
        tau = if sy > 0.0 {
            if iterations % 2 == 1 {
                frob_dot(&s, &s) / sy
            } else {
                sy / frob_dot(&y, &y)
            }
        } else {
            opts.initial_step
        };
        tau = tau.clamp(1e-20, 1e20);

        let rel = (f - f_new).abs() / f.abs().max(1.0);
        quiet_steps = if rel < opts.rel_tol {
            quiet_steps + 1
        } else {
            0
        };

        let next_weight = opts.memory * weight + 1.0;
        reference = (opts.memory * weight * reference + f_new) / next_weight;
        weight = next_weight;

        x = x_new;
        f = f_new;
        g = g_new;
        dir = dir_new;
        if f < best.0 {
            best = (f, x.clone());
        }
        if quiet_steps >= opts.patience {
            break;
        }
    }

    Ok(SearchOutcome {
        point: best.1,
        value: best.0,
        initial_value,
        iterations,
        max_feasibility_error: max_feas,
    })
}

/// Per-domain projection coefficients `Aᵢ` together with their whitening
/// factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCoeffs {
    pub blocks: Vec<DMatrix<f64>>,
    pub factors: Vec<Whitening>,
}

impl ProjectionCoeffs {
    pub fn from_whitened(whitened: &[DMatrix<f64>], factors: Vec<Whitening>) -> Self {
        let blocks = whitened
            .iter()
            .zip(&factors)
            .map(|(b, w)| w.unwhiten(b))
            .collect();
        ProjectionCoeffs { blocks, factors }
    }

    pub fn whitened(&self) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .zip(&self.factors)
            .map(|(a, w)| w.whiten(a))
            .collect()
    }

    /// Projected dimension `n`.
    pub fn dim(&self) -> usize {
        self.blocks.first().map_or(0, |a| a.ncols())
    }

    /// Vertically stacked `Ã`.
    pub fn stacked(&self) -> DMatrix<f64> {
        let rows: usize = self.blocks.iter().map(|a| a.nrows()).sum();
        let mut out = DMatrix::zeros(rows, self.dim());
        let mut offset = 0;
        for a in &self.blocks {
            out.view_mut((offset, 0), a.shape()).copy_from(a);
            offset += a.nrows();
        }
        out
    }

    /// Largest `‖AᵢᵀKᵢAᵢ − I‖_F` over domains.
    pub fn feasibility_residual(&self, grams: &[KernelGram]) -> f64 {
        self.blocks
            .iter()
            .zip(grams)
            .map(|(a, k)| constraint_residual(a, &k.values))
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        m.tr_mul(&m) / n as f64
    }

    fn random_stiefel(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        orthonormalize(&DMatrix::from_fn(rows, cols, |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        }))
    }

    #[test]
    fn whiten_identity_and_scaled() {
        let k = KernelGram {
            values: DMatrix::identity(3, 3),
        };
        assert_eq!(whiten(&k, 0.0).unwrap().factor, DMatrix::identity(3, 3));
        let k = KernelGram {
            values: DMatrix::identity(3, 3) * 4.0,
        };
        assert_eq!(
            whiten(&k, 0.0).unwrap().factor,
            DMatrix::identity(3, 3) * 2.0
        );
    }

    #[test]
    fn whiten_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = KernelGram {
            values: random_psd(&mut rng, 12),
        };
        for eps in [0.0, 1e-8] {
            let w = whiten(&k, eps).unwrap();
            let mut expected = k.values.clone();
            for i in 0..12 {
                expected[(i, i)] += eps;
            }
            assert!((w.factor.tr_mul(&w.factor) - expected).norm() <= 1e-10);
            assert!(
                w.factor.lower_triangle().clone_owned()
                    == DMatrix::from_diagonal(&w.factor.diagonal())
            );
        }
    }

    #[test]
    fn whiten_ladder_handles_singular_gram() {
        // rank-one Gram: plain Cholesky breaks down
        let v = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let k = KernelGram {
            values: &v * v.transpose(),
        };
        let w = whiten_with_ladder(&k).unwrap();
        assert!(w.jitter > 0.0);
        let negative = KernelGram {
            values: DMatrix::identity(2, 2) * -1.0,
        };
        assert!(matches!(
            whiten_with_ladder(&negative),
            Err(Error::GramDeficient { .. })
        ));
    }

    #[test]
    fn generalized_constraint_through_whitening() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = KernelGram {
            values: random_psd(&mut rng, 10),
        };
        let w = whiten(&k, 0.0).unwrap();
        let b = random_stiefel(&mut rng, 10, 3);
        let a = w.unwhiten(&b);
        assert!(constraint_residual(&a, &k.values) < 1e-10);
        assert!((w.whiten(&a) - &b).norm() < 1e-10);
    }

    #[test]
    fn orthonormalize_completes_rank_deficient_input() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let q = orthonormalize(&b);
        assert!(stiefel_residual(&q) < 1e-14);
    }

    #[test]
    fn trace_minimization_recovers_smallest_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_psd(&mut rng, 15);
        let p = 3;
        let mut ev: Vec<f64> = c
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        let target: f64 = ev[..p].iter().sum();
        let opts = SearchOptions {
            max_iters: 20_000,
            rel_tol: 0.0,
            grad_tol: 1e-10,
            ..SearchOptions::default()
        };
        let start = vec![random_stiefel(&mut rng, 15, p)];
        let out = minimize_feasible(
            |x| {
                let cx = &c * &x[0];
                Ok((x[0].dot(&cx), vec![cx * 2.0]))
            },
            start,
            &opts,
        )
        .unwrap();
        assert_abs_diff_eq!(out.value, target, epsilon = 1e-6);
        assert!(out.max_feasibility_error <= FEASIBILITY_TOL);
        assert!(out.value <= out.initial_value);
    }

    #[test]
    fn constant_objective_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let start = random_stiefel(&mut rng, 6, 2);
        let out = minimize_feasible(
            |x| Ok((1.5, vec![DMatrix::zeros(x[0].nrows(), x[0].ncols())])),
            vec![start.clone()],
            &SearchOptions::default(),
        )
        .unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.point[0], start);
        assert_eq!(out.value, 1.5);
    }

    #[test]
    fn rejects_infeasible_start_and_nan() {
        let bad = DMatrix::from_element(4, 2, 1.0);
        let r = minimize_feasible(
            |x| Ok((0.0, x.to_vec())),
            vec![bad],
            &SearchOptions::default(),
        );
        assert!(matches!(r, Err(Error::Infeasible { .. })));
        let ok = orthonormalize(&DMatrix::identity(4, 2));
        let r = minimize_feasible(
            |x| Ok((f64::NAN, x.to_vec())),
            vec![ok],
            &SearchOptions::default(),
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn multiple_blocks_stay_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c1 = random_psd(&mut rng, 8);
        let c2 = random_psd(&mut rng, 11);
        let start = vec![
            random_stiefel(&mut rng, 8, 2),
            random_stiefel(&mut rng, 11, 2),
        ];
        let coupling = DMatrix::from_fn(2, 2, |i, j| (i + 2 * j) as f64 * 0.1);
        let out = minimize_feasible(
            |x| {
                // tr(X₁ᵀC₁X₁) + tr(X₂ᵀC₂X₂) + ‖X₁ᵀ1 − X₂ᵀ1 − c‖² style coupling
                let m = x[0].row_sum() - x[1].row_sum() - coupling.row(0);
                let f = x[0].dot(&(&c1 * &x[0])) + x[1].dot(&(&c2 * &x[1])) + m.norm_squared();
                let mut g1 = &c1 * &x[0] * 2.0;
                let mut g2 = &c2 * &x[1] * 2.0;
                for r in 0..g1.nrows() {
                    let updated = g1.row(r) + &m * 2.0;
                    g1.set_row(r, &updated);
                }
                for r in 0..g2.nrows() {
                    let updated = g2.row(r) - &m * 2.0;
                    g2.set_row(r, &updated);
                }
                Ok((f, vec![g1, g2]))
            },
            start,
            &SearchOptions::default(),
        )
        .unwrap();
        assert!(out.value <= out.initial_value);
        assert!(out.max_feasibility_error <= FEASIBILITY_TOL);
        for b in &out.point {
            assert!(stiefel_residual(b) <= FEASIBILITY_TOL);
        }
    }
}
