//! Small dense complex linear algebra on top of `nalgebra`.

use nalgebra::{Matrix3, Matrix6, RowVector3, Vector3, Vector6};
use num_complex::Complex64;

pub type CVec3 = Vector3<Complex64>;
pub type CRow3 = RowVector3<Complex64>;
pub type CMat3 = Matrix3<Complex64>;

/// Eigenvalues below this fraction of the largest are treated as zero when
/// taking matrix square roots. It sits above the eigen-solver noise floor so
/// that rank-deficient inputs give clean square roots.
pub const SQRT_RANK_CUTOFF: f64 = 1e-13;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `a b^dagger`.
pub fn outer(a: &CVec3, b: &CVec3) -> CMat3 {
    a * b.adjoint()
}

/// Largest entrywise modulus of `m - m^dagger`.
pub fn hermitian_defect(m: &CMat3) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn max_abs(m: &CMat3) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Projects onto the Hermitian part, `(m + m^dagger) / 2`.
pub fn hermitian_part(m: &CMat3) -> CMat3 {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Eigen-decomposition of a Hermitian 3x3 matrix, eigenvalues ascending and
/// eigenvectors as the matching columns.
pub fn hermitian_eigen(m: &CMat3) -> (Vector3<f64>, CMat3) {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector3::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let vectors = CMat3::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// Principal square root of a positive semidefinite Hermitian matrix.
pub fn psd_sqrt(m: &CMat3) -> CMat3 {
    let (values, vectors) = hermitian_eigen(m);
    let top = values.max().max(0.0);
    let roots = values.map(|v| {
        if v <= SQRT_RANK_CUTOFF * top {
            0.0
        } else {
            v.sqrt()
        }
    });
    let diag = CMat3::from_diagonal(&roots.map(|r| c(r, 0.0)));
    vectors * diag * vectors.adjoint()
}

/// Trace of the principal square root of a PSD Hermitian matrix.
pub fn trace_sqrt(m: &CMat3) -> f64 {
    let (values, _) = hermitian_eigen(m);
    let top = values.max().max(0.0);
    values
        .iter()
        .filter(|&&v| v > SQRT_RANK_CUTOFF * top)
        .map(|v| v.sqrt())
        .sum()
}

/// Ascending eigen-decomposition of a real symmetric 6x6 matrix.
pub fn symmetric_eigen6(m: &Matrix6<f64>) -> (Vector6<f64>, Matrix6<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order = [0usize, 1, 2, 3, 4, 5];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector6::from_fn(|i, _| eig.eigenvalues[order[i]]);
    let vectors = Matrix6::from_fn(|r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// Stacks real parts over imaginary parts: `(Re c_1..c_3, Im c_1..c_3)`.
pub fn realify(v: &CVec3) -> Vector6<f64> {
    Vector6::new(v[0].re, v[1].re, v[2].re, v[0].im, v[1].im, v[2].im)
}

/// Inverse of [`realify`].
pub fn complexify(xi: &Vector6<f64>) -> CVec3 {
    CVec3::new(c(xi[0], xi[3]), c(xi[1], xi[4]), c(xi[2], xi[5]))
}
