//! Test-time classification: embed with the domain's projection, code
//! over the shared dictionary, and pick the class whose atoms reconstruct
//! the sample best in feature space.

use nalgebra::{DMatrix, DVector};

use crate::data_io::DomainDataset;
use crate::error::{Error, Result};
use crate::geometry::{self, kernel_value};
use crate::sparse::{omp, SparseVector};
use crate::trainer::TrainedModel;

/// Residuals in `[-NEGATIVE_TOL, 0)` are rounding noise and clamp to zero.
pub const NEGATIVE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// Squared feature-space reconstruction error per class.
    pub residuals: Vec<f64>,
    pub code: SparseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

fn check_domain(model: &TrainedModel, domain: usize, dim: usize) -> Result<&DMatrix<f64>> {
    let features = model
        .features
        .get(domain)
        .ok_or(Error::UnknownDomain(domain))?;
    if features.nrows() != dim {
        return Err(Error::DimensionMismatch {
            expected: features.nrows(),
            got: dim,
        });
    }
    Ok(features)
}

/// `z = Aᵢᵀ k(Xᵢ, x)`.
pub fn embed_test(model: &TrainedModel, x: &DVector<f64>, domain: usize) -> Result<DVector<f64>> {
    let features = check_domain(model, domain, x.len())?;
    let kt = geometry::gram(
        features,
        &DMatrix::from_column_slice(x.len(), 1, x.as_slice()),
        model.hyperparams.kernel,
    )?;
    Ok(model.projections[domain].tr_mul(&kt).column(0).into_owned())
}

pub fn predict(model: &TrainedModel, x: &DVector<f64>, domain: usize) -> Result<Prediction> {
    let z = embed_test(model, x, domain)?;
    let self_k = kernel_value(x.as_slice(), x.as_slice(), model.hyperparams.kernel)?;
    let dict = &model.dictionary;
    let code = omp(&dict.atoms, &z, model.hyperparams.sparsity)?;

    let mut residuals = Vec::with_capacity(model.classes);
    for class in 0..model.classes {
        // D_c s^c: the global code restricted to this class's atoms
        let mut recon = DVector::zeros(z.len());
        for (&atom, &coef) in code.support.iter().zip(&code.coefficients) {
            if dict.atom_classes[atom] == class {
                recon.axpy(coef, &dict.atoms.column(atom), 1.0);
            }
        }
        let r = self_k - 2.0 * z.dot(&recon) + recon.norm_squared();
        if r < -NEGATIVE_TOL {
            return Err(Error::NegativeResidual { class, value: r });
        }
        residuals.push(r.max(0.0));
    }

    let mut label = 0;
    for (c, &r) in residuals.iter().enumerate() {
        if r < residuals[label] {
            label = c;
        }
    }
    Ok(Prediction {
        label,
        residuals,
        code,
    })
}

pub fn evaluate(model: &TrainedModel, test: &DomainDataset, domain: usize) -> Result<Metrics> {
    if test.num_samples() == 0 {
        return Err(Error::EmptyTestSet);
    }
    let classes = model.classes.max(test.classes());
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut predictions = Vec::with_capacity(test.num_samples());
    for (j, col) in test.features.column_iter().enumerate() {
        let p = predict(model, &col.into_owned(), domain).map_err(|e| Error::Column {
            column: j,
            source: Box::new(e),
        })?;
        confusion[test.labels[j]][p.label] += 1;
        predictions.push(p.label);
    }
    Ok(metrics_from_confusion(confusion, predictions))
}

pub(crate) fn metrics_from_confusion(
    confusion: Vec<Vec<usize>>,
    predictions: Vec<usize>,
) -> Metrics {
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..confusion.len()).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    Metrics {
        accuracy: correct as f64 / total as f64,
        per_class,
        confusion,
        predictions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::KernelSpec;
    use crate::manifold_opt::{orthonormalize, whiten_with_ladder};
    use crate::trainer::{Dictionary, Hyperparams, ObjectiveTrace};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_columns(m: DMatrix<f64>) -> DMatrix<f64> {
        let mut m = m;
        for mut c in m.column_iter_mut() {
            let n = c.norm();
            c /= n;
        }
        m
    }

    /// A feasible model over random nonnegative data with a random dictionary.
    fn random_model(rng: &mut ChaCha8Rng, classes: usize, kernel: KernelSpec) -> TrainedModel {
        let (d, n_train, dim, apc) = (5, 12, 4, 3);
        let x = DMatrix::from_fn(d, n_train, |_, _| rng.random::<f64>());
        let k = geometry::self_gram(&x, kernel).unwrap();
        let w = whiten_with_ladder(&k).unwrap();
        let b = orthonormalize(&DMatrix::from_fn(n_train, dim, |_, _| {
            rng.random::<f64>() - 0.5
        }));
        let a = w.unwhiten(&b);
        let atoms = unit_columns(DMatrix::from_fn(dim, classes * apc, |_, _| {
            rng.random::<f64>() - 0.5
        }));
        TrainedModel {
            hyperparams: Hyperparams {
                kernel,
                sparsity: 2,
                dim,
                atoms_per_class: apc,
                ..Hyperparams::default()
            },
            projections: vec![a],
            features: vec![x],
            domain_names: vec!["d".into()],
            dictionary: Dictionary {
                atoms,
                atom_classes: (0..classes * apc).map(|i| i / apc).collect(),
                classes,
            },
            classes,
            trace: ObjectiveTrace::default(),
        }
    }

    #[test]
    fn embedding_matches_naive_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_model(&mut rng, 2, KernelSpec::HistogramIntersection);
        let x = DVector::from_fn(5, |_, _| rng.random::<f64>());
        let z = embed_test(&m, &x, 0).unwrap();
        let (xs, a) = (&m.features[0], &m.projections[0]);
        for r in 0..a.ncols() {
            let mut acc = 0.0;
            for j in 0..xs.ncols() {
                let mut kv = 0.0;
                for f in 0..5 {
                    kv += xs[(f, j)].min(x[f]);
                }
                acc += a[(j, r)] * kv;
            }
            assert!((z[r] - acc).abs() <= 1e-12);
        }
    }

    #[test]
    fn embedding_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(&mut rng, 2, KernelSpec::Linear);
        assert_eq!(
            embed_test(&m, &DVector::zeros(5), 0).unwrap(),
            DVector::zeros(4)
        );
        // a training column embeds to its column of the training embedding
        let x = m.features[0].column(3).into_owned();
        let k = geometry::self_gram(&m.features[0], KernelSpec::Linear).unwrap();
        let z_train = m.projections[0].tr_mul(&k.values);
        let z = embed_test(&m, &x, 0).unwrap();
        assert!((z - z_train.column(3)).norm() <= 1e-12);
        assert!(matches!(
            embed_test(&m, &x, 1),
            Err(Error::UnknownDomain(1))
        ));
        assert!(matches!(
            embed_test(&m, &DVector::zeros(3), 0),
            Err(Error::DimensionMismatch {
                expected: 5,
                got: 3
            })
        ));
    }

    #[test]
    fn residuals_match_full_gram_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = random_model(&mut rng, 3, KernelSpec::HistogramIntersection);
            let x = DVector::from_fn(5, |_, _| rng.random::<f64>());
            let p = predict(&m, &x, 0).unwrap();
            let (xs, a) = (&m.features[0], &m.projections[0]);
            let kt = geometry::gram(
                xs,
                &DMatrix::from_column_slice(5, 1, x.as_slice()),
                m.hyperparams.kernel,
            )
            .unwrap();
            let k = geometry::self_gram(xs, m.hyperparams.kernel)
                .unwrap()
                .values;
            let kxx: f64 = x.iter().sum();
            for c in 0..3 {
                let mut s = DVector::zeros(m.dictionary.len());
                for (&i, &v) in p.code.support.iter().zip(&p.code.coefficients) {
                    if m.dictionary.atom_classes[i] == c {
                        s[i] = v;
                    }
                }
                let w = a * (&m.dictionary.atoms * s);
                let full = kxx - 2.0 * kt.column(0).dot(&w) + w.dot(&(&k * &w));
                assert!(
                    (p.residuals[c] - full.max(0.0)).abs() <= 1e-8,
                    "{} vs {full}",
                    p.residuals[c]
                );
            }
        }
    }

    #[test]
    fn zero_code_ties_to_first_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(&mut rng, 3, KernelSpec::Linear);
        let p = predict(&m, &DVector::zeros(5), 0).unwrap();
        assert!(p.code.support.is_empty());
        assert_eq!(p.residuals, vec![0.0; 3]);
        assert_eq!(p.label, 0);

        let single = random_model(&mut rng, 1, KernelSpec::Linear);
        for _ in 0..5 {
            let x = DVector::from_fn(5, |_, _| rng.random::<f64>());
            assert_eq!(predict(&single, &x, 0).unwrap().label, 0);
        }
    }

    #[test]
    fn identity_projection_linear_kernel_is_plain_src() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let d = 4;
        let atoms = unit_columns(DMatrix::from_fn(d, 6, |_, _| rng.random::<f64>() - 0.5));
        let model = TrainedModel {
            hyperparams: Hyperparams {
                kernel: KernelSpec::Linear,
                sparsity: 2,
                dim: d,
                atoms_per_class: 2,
                ..Hyperparams::default()
            },
            projections: vec![DMatrix::identity(d, d)],
            features: vec![DMatrix::identity(d, d)],
            domain_names: vec!["id".into()],
            dictionary: Dictionary {
                atoms: atoms.clone(),
                atom_classes: vec![0, 0, 1, 1, 2, 2],
                classes: 3,
            },
            classes: 3,
            trace: ObjectiveTrace::default(),
        };
        for _ in 0..30 {
            let x = DVector::from_fn(d, |_, _| rng.random::<f64>() - 0.5);
            let p = predict(&model, &x, 0).unwrap();
            let s = p.code.to_dense(6);
            let direct: Vec<f64> = (0..3)
                .map(|c| {
                    let mut sc = s.clone();
                    for i in 0..6 {
                        if i / 2 != c {
                            sc[i] = 0.0;
                        }
                    }
                    (&x - &atoms * sc).norm_squared()
                })
                .collect();
            for (r, d) in p.residuals.iter().zip(&direct) {
                assert!((r - d).abs() <= 1e-10);
            }
            let best = (0..3).fold(0, |b, c| if direct[c] < direct[b] { c } else { b });
            assert_eq!(p.label, best);
        }
    }

    #[test]
    fn broken_feasibility_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut m = random_model(&mut rng, 2, KernelSpec::Linear);
        m.projections[0] *= 50.0;
        let x = m.features[0].column(0).into_owned();
        assert!(matches!(
            predict(&m, &x, 0),
            Err(Error::NegativeResidual { .. })
        ));
    }

    #[test]
    fn metrics_from_counts() {
        let m = metrics_from_confusion(vec![vec![3, 1], vec![0, 0]], vec![0, 0, 0, 1]);
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.per_class, vec![Some(0.75), None]);
        let perfect = metrics_from_confusion(vec![vec![4]], vec![0; 4]);
        assert_eq!(perfect.accuracy, 1.0);
    }

    #[test]
    fn evaluate_counts_and_empty_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(&mut rng, 2, KernelSpec::HistogramIntersection);
        let x = DMatrix::from_fn(5, 7, |_, _| rng.random::<f64>());
        let labels = vec![0, 1, 1, 0, 1, 1, 1];
        let ds = DomainDataset::new(x, labels, "t").unwrap();
        let r = evaluate(&m, &ds, 0).unwrap();
        assert_eq!(r.confusion[0].iter().sum::<usize>(), 2);
        assert_eq!(r.confusion[1].iter().sum::<usize>(), 5);
        assert_eq!(r, evaluate(&m, &ds, 0).unwrap());
        let empty = DomainDataset::new(DMatrix::zeros(5, 0), vec![], "e").unwrap();
        assert!(matches!(evaluate(&m, &empty, 0), Err(Error::EmptyTestSet)));
    }
}
