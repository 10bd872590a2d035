//! Small dense linear-algebra helpers shared by the solver, the samplers and the
//! variance estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// `sum_i w_i x_i x_i'` for the rows `x_i` of `x`. Weights must be non-negative.
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(x.nrows(), w.len());
    let mut scaled = x.clone();
    for (i, &wi) in w.iter().enumerate() {
        debug_assert!(wi >= 0.0);
        let s = wi.sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    let g = scaled.tr_mul(&scaled);
    symmetrize(g)
}

/// `(a + a') / 2`.
pub(crate) fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let t = a.transpose();
    (a + t) * 0.5
}

/// Cholesky factorization, retried once with `jitter * trace/p` added to the diagonal.
pub(crate) fn cholesky_with_jitter(a: &DMatrix<f64>, jitter: f64) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Some(c);
    }
    let p = a.nrows();
    let shift = jitter * (a.trace() / p as f64).abs().max(f64::MIN_POSITIVE);
    let mut b = a.clone();
    for i in 0..p {
        b[(i, i)] += shift;
    }
    Cholesky::new(b)
}

/// Inverse of a symmetric positive-definite matrix under the one-shot jitter policy.
pub(crate) fn spd_inverse(a: &DMatrix<f64>, jitter: f64) -> Option<DMatrix<f64>> {
    cholesky_with_jitter(a, jitter).map(|c| symmetrize(c.inverse()))
}

/// Default relative jitter used outside the solver.
pub(crate) const DEFAULT_JITTER: f64 = 1e-8;

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Euclidean norms of the rows of `z`.
pub(crate) fn row_norms(z: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(z.nrows());
    for j in 0..z.ncols() {
        for (o, v) in out.iter_mut().zip(z.column(j).iter()) {
            *o += v * v;
        }
    }
    out.map(f64::sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gram_matches_loop() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 3.0, 1.0]);
        let w = [0.5, 2.0, 1.0];
        let g = weighted_gram(&x, &w);
        let mut naive = DMatrix::zeros(2, 2);
        for i in 0..3 {
            let xi = x.row(i).transpose();
            naive += &xi * xi.transpose() * w[i];
        }
        assert_relative_eq!(g, naive, epsilon = 1e-14);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::new(a.clone()).is_none());
        assert!(cholesky_with_jitter(&a, 1e-8).is_some());
        let neg = DMatrix::from_row_slice(1, 1, &[-1.0]);
        assert!(spd_inverse(&neg, 1e-8).is_none());
    }

    #[test]
    fn eigen_helpers() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0]);
        assert_eq!(min_eigenvalue(&a), -3.0);
        assert_eq!(spectral_norm(&a), 3.0);
        let z = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 1.0]);
        assert_eq!(row_norms(&z).as_slice(), &[5.0, 1.0]);
    }
}
