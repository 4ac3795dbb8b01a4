//! Small linear-algebra helpers shared by the drift and simulation code.
//!
//! Keeping a single implementation of the scalar product and quadratic form
//! matters: the residual checks rely on identical summation order between the
//! drift producers and the drift-condition evaluators.

use nalgebra::DMatrix;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), v.len());
    (0..m.nrows())
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..v.len() {
                acc += m[(i, j)] * v[j];
            }
            acc
        })
        .collect()
}

/// `a' M b` with a fixed row-major summation order.
pub(crate) fn quad_form(m: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(m.nrows(), a.len());
    debug_assert_eq!(m.ncols(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        let mut row = 0.0;
        for j in 0..b.len() {
            row += m[(i, j)] * b[j];
        }
        acc += a[i] * row;
    }
    acc
}

pub(crate) fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn euclidean_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Factor `G` with `G G' = m` for a symmetric positive semidefinite `m`.
/// Cholesky when definite; symmetric eigendecomposition otherwise, with
/// negative round-off eigenvalues clamped to zero.
pub(crate) fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.iter().all(|v| *v == 0.0) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    if let Some(chol) = m.clone().cholesky() {
        return chol.l();
    }
    let eigen = m.clone().symmetric_eigen();
    let mut scaled = eigen.eigenvectors.clone();
    for (j, ev) in eigen.eigenvalues.iter().enumerate() {
        let s = ev.max(0.0).sqrt();
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= s;
        }
    }
    scaled
}

/// Deterministic pairwise summation; the result depends only on the order of
/// `values`, never on thread scheduling.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 8 {
        let mut acc = 0.0;
        for v in values {
            acc += v;
        }
        return acc;
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Sample mean and standard error via pairwise reduction.
pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_form_matches_manual_expansion() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 5.0]);
        let v = quad_form(&m, &[1.0, -1.0], &[1.0, -1.0]);
        assert!((v - (1.0 - 2.0 - 2.0 + 5.0)).abs() < 1e-15);
    }

    #[test]
    fn psd_factor_reproduces_rank_deficient_matrix() {
        // outer product of (1, 2) with itself: rank one
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let g = psd_factor(&m);
        let back = &g * g.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert!((back[(i, j)] - m[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pairwise_sum_matches_sequential_on_small_inputs() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let seq: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - seq).abs() < 1e-12);
    }
}
