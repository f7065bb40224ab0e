//! The numerical stages of Fisherface training: class and global means,
//! PCA reduction, scatter matrices and the generalized eigenproblem.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{FisherError, TrainingSet};

/// Relative cut-off below which a covariance eigenvalue counts as zero.
const RANK_TOL: f64 = 1e-10;
/// Ridge added to the within-class scatter, relative to its mean diagonal.
pub const WITHIN_RIDGE: f64 = 1e-6;

/// Per-class means, `mu_k = (1 / N_k) * sum of class k samples`.
pub fn class_means(ts: &TrainingSet) -> Vec<DVector<f64>> {
    ts.classes()
        .iter()
        .map(|class| {
            let mut acc = DVector::zeros(ts.dim());
            for s in &class.samples {
                acc += s.as_dvector();
            }
            acc / class.samples.len() as f64
        })
        .collect()
}

/// Mean over all `N` samples irrespective of class.
pub fn global_mean(ts: &TrainingSet) -> DVector<f64> {
    let mut acc = DVector::zeros(ts.dim());
    for class in ts.classes() {
        for s in &class.samples {
            acc += s.as_dvector();
        }
    }
    acc / ts.total_samples() as f64
}

/// Flips `v` so its largest-magnitude entry (first one on ties) is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Eigenpairs of a symmetric matrix in descending eigenvalue order.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaReduction {
    pub mean: DVector<f64>,
    /// `D x P`, orthonormal columns in descending eigenvalue order.
    pub basis: DMatrix<f64>,
    /// Covariance eigenvalues (scatter / N) for the retained components.
    pub eigenvalues: Vec<f64>,
    /// `P x N` coordinates of the centred samples, class-major order.
    pub projections: DMatrix<f64>,
    /// Numerical rank of the centred data.
    pub rank: usize,
}

/// Number of non-negligible covariance eigenvalues of the centred data.
pub fn centered_rank(ts: &TrainingSet) -> usize {
    let centred = centred_data(ts, &global_mean(ts));
    let gram = centred.transpose() * &centred;
    let (values, _) = sorted_eigen(gram);
    count_rank(&values)
}

fn count_rank(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    if top == 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > top * RANK_TOL).count()
}

fn centred_data(ts: &TrainingSet, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut x = ts.data_matrix();
    for mut col in x.column_iter_mut() {
        col -= mean;
    }
    x
}

/// Projects the training set onto its top `p` principal directions.
///
/// When `D > N` the eigenvectors come from the `N x N` Gram matrix of the
/// centred samples and are mapped back through the data; otherwise the
/// `D x D` covariance is decomposed directly.
pub fn pca_reduce(ts: &TrainingSet, p: usize) -> Result<PcaReduction, FisherError> {
    let mean = global_mean(ts);
    let centred = centred_data(ts, &mean);
    let (d, n) = (centred.nrows(), centred.ncols());

    let (scatter_values, basis_full) = if d > n {
        let (values, vectors) = sorted_eigen(centred.transpose() * &centred);
        let rank = count_rank(&values);
        let cols = p.min(rank);
        let mut basis = DMatrix::zeros(d, cols);
        for c in 0..cols {
            let v = vectors.column(c);
            let u = (&centred * v) / values[c].sqrt();
            basis.set_column(c, &u);
        }
        (values, basis)
    } else {
        let (values, vectors) = sorted_eigen(&centred * centred.transpose());
        let rank = count_rank(&values);
        (values, vectors.columns(0, p.min(rank)).into_owned())
    };

    let rank = count_rank(&scatter_values);
    if p == 0 || p > rank {
        return Err(FisherError::PcaRank {
            requested: p,
            achievable: rank,
        });
    }

    let mut basis = basis_full;
    for mut col in basis.column_iter_mut() {
        let mut v = col.clone_owned();
        v.normalize_mut();
        fix_sign(&mut v);
        col.copy_from(&v);
    }
    let projections = basis.transpose() * &centred;
    let eigenvalues = scatter_values[..p].iter().map(|v| v / n as f64).collect();
    Ok(PcaReduction {
        mean,
        basis,
        eigenvalues,
        projections,
        rank,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPair {
    pub between: DMatrix<f64>,
    pub within: DMatrix<f64>,
}

impl ScatterPair {
    pub fn dim(&self) -> usize {
        self.between.nrows()
    }
}

/// Between-class and within-class scatter of grouped samples.
pub fn scatter_matrices(groups: &[Vec<DVector<f64>>]) -> ScatterPair {
    let dim = groups
        .iter()
        .flat_map(|g| g.first())
        .map(|v| v.len())
        .next()
        .unwrap_or(0);
    let total: usize = groups.iter().map(Vec::len).sum();
    let mut mean = DVector::zeros(dim);
    for g in groups {
        for x in g {
            mean += x;
        }
    }
    mean /= total.max(1) as f64;

    let mut between = DMatrix::zeros(dim, dim);
    let mut within = DMatrix::zeros(dim, dim);
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let mut mk = DVector::zeros(dim);
        for x in g {
            mk += x;
        }
        mk /= g.len() as f64;
        let diff = &mk - &mean;
        between.ger(g.len() as f64, &diff, &diff, 1.0);
        for x in g {
            let dx = x - &mk;
            within.ger(1.0, &dx, &dx, 1.0);
        }
    }
    ScatterPair { between, within }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdaSolution {
    /// `P x L`, unit-norm generalized eigenvectors in descending order.
    pub projection: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// The within-class scatter after the ridge was added.
    pub within_regularized: DMatrix<f64>,
    pub ridge: f64,
}

/// Ridge size for a within-class scatter: `1e-6 * trace / P`, falling back to
/// the between-class trace (then a fixed floor) when the within scatter is zero.
pub fn ridge_for(sp: &ScatterPair) -> f64 {
    let p = sp.dim().max(1) as f64;
    let from_within = WITHIN_RIDGE * sp.within.trace() / p;
    if from_within > 0.0 && from_within.is_finite() {
        return from_within;
    }
    let from_between = WITHIN_RIDGE * sp.between.trace() / p;
    if from_between > 0.0 && from_between.is_finite() {
        return from_between;
    }
    1e-12
}

/// Solves `S_B u = lambda S_W u` for the top `l` eigenpairs.
///
/// The ridged `S_W = L L^T` is Cholesky-factored and the problem reduced to
/// the symmetric `L^-1 S_B L^-T v = lambda v`, with `u = L^-T v`.
pub fn lda_solve(sp: &ScatterPair, l: usize) -> Result<LdaSolution, FisherError> {
    let p = sp.dim();
    if l == 0 || l > p {
        return Err(FisherError::Config(format!(
            "LDA dimension {l} must be in 1..={p}"
        )));
    }
    let ridge = ridge_for(sp);
    let within = &sp.within + DMatrix::identity(p, p) * ridge;
    let chol = within
        .clone()
        .cholesky()
        .ok_or_else(|| FisherError::Numerical {
            stage: "cholesky",
            detail: format!(
                "within-class scatter not positive definite after ridge {ridge:e} (trace {:e})",
                sp.within.trace()
            ),
        })?;
    let lower = chol.l();
    let lower_inv = lower
        .solve_lower_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| FisherError::Numerical {
            stage: "triangular-solve",
            detail: "singular Cholesky factor".into(),
        })?;
    let reduced = &lower_inv * &sp.between * lower_inv.transpose();
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let (values, vectors) = sorted_eigen(reduced);

    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(FisherError::Numerical {
            stage: "generalized-eigen",
            detail: format!("non-finite eigenvalue {bad} (ridge {ridge:e})"),
        });
    }

    let back = lower_inv.transpose();
    let mut projection = DMatrix::zeros(p, l);
    for c in 0..l {
        let mut u = &back * vectors.column(c);
        let norm = u.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(FisherError::Numerical {
                stage: "generalized-eigen",
                detail: format!("eigenvector {c} has norm {norm}"),
            });
        }
        u /= norm;
        fix_sign(&mut u);
        projection.set_column(c, &u);
    }
    Ok(LdaSolution {
        projection,
        eigenvalues: values[..l].to_vec(),
        within_regularized: within,
        ridge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fisherface::{FaceClass, FaceVector};

    fn ts(classes: &[(&str, &[&[f64]])]) -> TrainingSet {
        TrainingSet::new(
            classes
                .iter()
                .map(|(label, samples)| FaceClass {
                    label: label.to_string(),
                    samples: samples
                        .iter()
                        .map(|s| FaceVector::new(s.to_vec()))
                        .collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn class_mean_of_single_sample_is_that_sample() {
        let t = ts(&[("a", &[&[3.0, -1.0]]), ("b", &[&[0.0, 0.0], &[2.0, 4.0]])]);
        let m = class_means(&t);
        assert_eq!(m[0].as_slice(), &[3.0, -1.0]);
        assert_eq!(m[1].as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn global_mean_weights_by_sample() {
        let t = ts(&[("a", &[&[0.0]]), ("b", &[&[3.0], &[3.0]])]);
        assert_eq!(global_mean(&t).as_slice(), &[2.0]);
        let same = ts(&[("a", &[&[5.0, 1.0]]), ("b", &[&[5.0, 1.0], &[5.0, 1.0]])]);
        assert_eq!(global_mean(&same).as_slice(), &[5.0, 1.0]);
    }

    #[test]
    fn rank_one_data_reconstructs_exactly() {
        let dir = [1.0, -2.0, 0.5];
        let pts: Vec<Vec<f64>> = [-2.0, -0.5, 1.0, 3.0]
            .iter()
            .map(|t| dir.iter().map(|d| d * t + 7.0).collect())
            .collect();
        let refs: Vec<&[f64]> = pts.iter().map(|v| v.as_slice()).collect();
        let t = ts(&[("a", &refs[..2]), ("b", &refs[2..])]);
        let pca = pca_reduce(&t, 1).unwrap();
        let x = t.data_matrix();
        let recon = &pca.basis * &pca.projections;
        for c in 0..x.ncols() {
            let err = (x.column(c) - &pca.mean - recon.column(c)).norm();
            assert!(err < 1e-9, "{err}");
        }
        assert!(matches!(
            pca_reduce(&t, 2),
            Err(FisherError::PcaRank {
                requested: 2,
                achievable: 1
            })
        ));
    }

    #[test]
    fn zero_within_scatter_when_samples_equal_class_mean() {
        let g = vec![
            vec![DVector::from_vec(vec![1.0, 2.0]); 3],
            vec![DVector::from_vec(vec![-1.0, 0.0]); 2],
        ];
        let sp = scatter_matrices(&g);
        assert_eq!(sp.within, DMatrix::zeros(2, 2));
        assert!(sp.between.norm() > 0.0);
    }

    #[test]
    fn zero_between_scatter_when_means_coincide() {
        let g = vec![
            vec![
                DVector::from_vec(vec![1.0, 0.0]),
                DVector::from_vec(vec![-1.0, 0.0]),
            ],
            vec![
                DVector::from_vec(vec![0.0, 2.0]),
                DVector::from_vec(vec![0.0, -2.0]),
            ],
        ];
        let sp = scatter_matrices(&g);
        assert_eq!(sp.between, DMatrix::zeros(2, 2));
    }

    #[test]
    fn identity_pair_has_unit_eigenvalues() {
        let sp = ScatterPair {
            between: DMatrix::identity(3, 3),
            within: DMatrix::identity(3, 3),
        };
        let sol = lda_solve(&sp, 3).unwrap();
        for v in &sol.eigenvalues {
            assert!((v - 1.0).abs() < 1e-5, "{v}");
        }
        let gram = sol.projection.transpose() * &sol.projection;
        assert!((gram - DMatrix::identity(3, 3)).norm() < 1e-9);
    }

    #[test]
    fn lda_dimension_is_checked() {
        let sp = ScatterPair {
            between: DMatrix::identity(2, 2),
            within: DMatrix::identity(2, 2),
        };
        assert!(lda_solve(&sp, 0).is_err());
        assert!(lda_solve(&sp, 3).is_err());
    }

    #[test]
    fn sign_convention_makes_largest_entry_positive() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.3]);
        fix_sign(&mut v);
        assert_eq!(v.as_slice(), &[-0.1, 0.9, -0.3]);
    }
}
