use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) const MAX_CONDITION: f64 = 1e12;

pub(crate) fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Sample cross-covariance `(n-1)^{-1} Σ (a_i - ā)(b_i - b̄)ᵀ`.
pub(crate) fn cross_covariance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let ca = center(a);
    let cb = center(b);
    ca.transpose() * cb / (n as f64 - 1.0)
}

pub(crate) fn center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending order.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let p = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub(crate) fn sym_condition(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen_desc(m);
    let hi = values[0];
    let lo = values[values.len() - 1];
    if lo <= 0.0 || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `m^{-1/2}` for a symmetric positive definite matrix.
pub(crate) fn sym_inverse_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_desc(m);
    let scale = DMatrix::from_diagonal(&values.map(|v| 1.0 / v.sqrt()));
    &vectors * scale * vectors.transpose()
}

/// Gram–Schmidt on columns, in order.
pub(crate) fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for j in 0..out.ncols() {
        for _ in 0..2 {
            for k in 0..j {
                let proj = out.column(k).dot(&out.column(j));
                let basis = out.column(k).into_owned();
                out.column_mut(j).axpy(-proj, &basis, 1.0);
            }
        }
        let norm = out.column(j).norm();
        if norm > 0.0 {
            out.column_mut(j).scale_mut(1.0 / norm);
        }
    }
    out
}

/// Flip each column so its largest-magnitude entry is positive.
pub(crate) fn fix_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut idx = 0;
        for i in 1..col.len() {
            if col[i].abs() > col[idx].abs() {
                idx = i;
            }
        }
        if col[idx] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Least-squares solution of `a x ≈ b` by SVD.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let tol = svd.singular_values.max() * 1e-13 * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, tol).ok()
}
