//! State vectors, density matrices and fidelities.
//!
//! Amplitudes are ordered on the Fock basis `(|2,0>, |1,1>, |0,2>)` with `H`
//! as the first polarization mode. Reconstructed vectors are kept
//! un-normalized: their squared norm carries the total event rate, so their
//! unit is `1/sqrt(time)` until [`StateVector::normalize`] is applied.

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DensityJson, StateJson};
use crate::linalg::{self, c, CMat3, CVec3};

/// Tolerance on eigenvalues below zero accepted as floating-point noise.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Entrywise tolerance for accepting a matrix as Hermitian, relative to its
/// largest entry.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Triple of complex amplitudes `(c1, c2, c3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateJson", into = "StateJson")]
pub struct StateVector(CVec3);

impl StateVector {
    pub fn new(c1: Complex64, c2: Complex64, c3: Complex64) -> Self {
        StateVector(CVec3::new(c1, c2, c3))
    }

    pub fn from_real(c1: f64, c2: f64, c3: f64) -> Self {
        Self::new(c(c1, 0.0), c(c2, 0.0), c(c3, 0.0))
    }

    pub fn from_vector(v: CVec3) -> Self {
        StateVector(v)
    }

    pub fn zero() -> Self {
        StateVector(CVec3::zeros())
    }

    /// `|2,0>`: both photons horizontally polarized.
    pub fn psi1() -> Self {
        Self::from_real(1.0, 0.0, 0.0)
    }

    /// `|1,1>`: one photon in each polarization mode.
    pub fn psi2() -> Self {
        Self::from_real(0.0, 1.0, 0.0)
    }

    /// `|0,2>`: both photons vertically polarized.
    pub fn psi3() -> Self {
        Self::from_real(0.0, 0.0, 1.0)
    }

    pub fn as_vector(&self) -> &CVec3 {
        &self.0
    }

    pub fn components(&self) -> [Complex64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn get(&self, j: usize) -> Complex64 {
        self.0[j]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.norm_squared()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, factor: f64) -> Self {
        StateVector(self.0 * c(factor, 0.0))
    }

    /// Multiplies by `exp(i phase)`.
    pub fn with_global_phase(&self, phase: f64) -> Self {
        StateVector(self.0 * Complex64::from_polar(1.0, phase))
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.0.dotc(&other.0)
    }

    /// `|self><self|`, not trace-normalized.
    pub fn outer(&self) -> CMat3 {
        linalg::outer(&self.0, &self.0)
    }

    /// Canonical global phase: the component of largest modulus (lowest index
    /// on ties) becomes real and nonnegative. The zero vector is returned as is.
    pub fn gauge_fixed(&self) -> Self {
        let mut lead = 0;
        for j in 1..3 {
            if self.0[j].norm() > self.0[lead].norm() {
                lead = j;
            }
        }
        let pivot = self.0[lead];
        let modulus = pivot.norm();
        if modulus == 0.0 {
            return *self;
        }
        let rot = pivot.conj() / modulus;
        let mut v = self.0 * rot;
        v[lead] = c(modulus, 0.0);
        StateVector(v)
    }

    /// Unit-norm, gauge-fixed copy.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateState(format!(
                "cannot normalize a state of norm {n}"
            )));
        }
        Ok(self.scale(1.0 / n).gauge_fixed())
    }

    /// Rotates the global phase so that `<reference|self>` is real and
    /// nonnegative, which maximizes `Re <reference|self>`.
    pub fn align_phase_to(&self, reference: &StateVector) -> Self {
        let overlap = reference.inner(self);
        if overlap.norm() == 0.0 {
            return *self;
        }
        StateVector(self.0 * (overlap.conj() / overlap.norm()))
    }

    /// Largest entrywise distance after gauge fixing both vectors.
    pub fn gauge_distance(&self, other: &StateVector) -> f64 {
        let a = self.gauge_fixed();
        let b = other.gauge_fixed();
        (a.0 - b.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl From<CVec3> for StateVector {
    fn from(v: CVec3) -> Self {
        StateVector(v)
    }
}

impl std::ops::Index<usize> for StateVector {
    type Output = Complex64;
    fn index(&self, j: usize) -> &Complex64 {
        &self.0[j]
    }
}

/// Free-function form of [`StateVector::normalize`].
pub fn normalize(v: &StateVector) -> Result<StateVector> {
    v.normalize()
}

/// Polarization degree `P = sqrt((|c1|^2 - |c3|^2)^2 + 2 |c1* c2 + c2* c3|^2)`
/// of a normalized state, clamped into `[0, 1]`.
pub fn polarization_degree(v: &StateVector) -> f64 {
    let [c1, c2, c3] = v.components();
    let diag = c1.norm_sqr() - c3.norm_sqr();
    let cross = c1.conj() * c2 + c2.conj() * c3;
    (diag * diag + 2.0 * cross.norm_sqr()).max(0.0).sqrt().min(1.0)
}

/// `|<a|b>|^2` for unit vectors. Inputs are normalized internally, so
/// un-normalized estimates may be passed directly; a zero vector gives 0.
pub fn fidelity_pure(a: &StateVector, b: &StateVector) -> f64 {
    let na = a.norm_sqr();
    let nb = b.norm_sqr();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.inner(b).norm_sqr() / (na * nb)).clamp(0.0, 1.0)
}

/// Hermitian, positive semidefinite, unit-trace 3x3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DensityJson", into = "DensityJson")]
pub struct DensityMatrix(CMat3);

impl DensityMatrix {
    /// Validates Hermiticity and positivity and rescales to unit trace.
    pub fn new(m: CMat3) -> Result<Self> {
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidDensity("non-finite entry".into()));
        }
        let scale = linalg::max_abs(&m);
        if scale == 0.0 {
            return Err(Error::InvalidDensity("zero matrix".into()));
        }
        let defect = linalg::hermitian_defect(&m);
        if defect > HERMITIAN_TOLERANCE * scale {
            return Err(Error::InvalidDensity(format!(
                "not Hermitian (defect {defect:.3e})"
            )));
        }
        let h = linalg::hermitian_part(&m);
        let trace = h.trace().re;
        if !(trace > 0.0) {
            return Err(Error::InvalidDensity(format!("trace {trace} is not positive")));
        }
        let rho = h / c(trace, 0.0);
        let (values, _) = linalg::hermitian_eigen(&rho);
        if values[0] < -PSD_TOLERANCE {
            return Err(Error::InvalidDensity(format!(
                "negative eigenvalue {:.3e}",
                values[0]
            )));
        }
        Ok(DensityMatrix(rho))
    }

    /// `|v><v| / <v|v>`.
    pub fn from_pure(v: &StateVector) -> Result<Self> {
        density_from_components(std::slice::from_ref(v))
    }

    pub fn matrix(&self) -> &CMat3 {
        &self.0
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.0[(row, col)]
    }

    /// Ascending eigenvalues and matching eigenvectors.
    pub fn eigen(&self) -> (Vector3<f64>, CMat3) {
        linalg::hermitian_eigen(&self.0)
    }

    pub fn purity(&self) -> f64 {
        (self.0 * self.0).trace().re
    }

    /// Principal components, heaviest first, as `(weight, unit vector)` with
    /// each vector gauge-fixed.
    pub fn principal_components(&self) -> Vec<(f64, StateVector)> {
        let (values, vectors) = self.eigen();
        (0..3)
            .rev()
            .map(|k| {
                let v = StateVector(vectors.column(k).into_owned()).gauge_fixed();
                (values[k].max(0.0), v)
            })
            .collect()
    }

    /// Largest entrywise distance to another density matrix.
    pub fn max_entry_distance(&self, other: &DensityMatrix) -> f64 {
        linalg::max_abs(&(self.0 - other.0))
    }
}

/// Sums the outer products of the components and normalizes to unit trace.
pub fn density_from_components(components: &[StateVector]) -> Result<DensityMatrix> {
    let sum = components
        .iter()
        .fold(CMat3::zeros(), |acc, v| acc + v.outer());
    if components.is_empty() || sum.trace().re <= 0.0 {
        return Err(Error::DegenerateState(
            "mixture needs at least one nonzero component".into(),
        ));
    }
    DensityMatrix::new(linalg::hermitian_part(&sum))
}

/// Weighted mixture `sum_m w_m |c_m><c_m| / <c_m|c_m>`, trace-normalized.
pub fn density_from_weighted(components: &[(f64, StateVector)]) -> Result<DensityMatrix> {
    let mut sum = CMat3::zeros();
    for (w, v) in components {
        if *w < 0.0 || !w.is_finite() {
            return Err(Error::InvalidArgument(format!("mixture weight {w} must be >= 0")));
        }
        let n = v.norm_sqr();
        if n > 0.0 {
            sum += v.outer() * c(w / n, 0.0);
        }
    }
    if sum.trace().re <= 0.0 {
        return Err(Error::DegenerateState("mixture has no weight".into()));
    }
    DensityMatrix::new(sum)
}

/// Uhlmann fidelity `[Tr sqrt(sqrt(rho0) rho sqrt(rho0))]^2`.
pub fn fidelity_mixed(rho0: &DensityMatrix, rho: &DensityMatrix) -> Result<f64> {
    for (name, m) in [("reference", rho0), ("estimate", rho)] {
        let (values, _) = m.eigen();
        if values[0] < -PSD_TOLERANCE {
            return Err(Error::InvalidDensity(format!(
                "{name} has negative eigenvalue {:.3e}",
                values[0]
            )));
        }
    }
    let root = linalg::psd_sqrt(rho0.matrix());
    let inner = root * rho.matrix() * root;
    let t = linalg::trace_sqrt(&linalg::hermitian_part(&inner));
    Ok((t * t).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

    fn close(a: &StateVector, b: &StateVector, tol: f64) -> bool {
        (a.as_vector() - b.as_vector()).iter().all(|z| z.norm() < tol)
    }

    #[test]
    fn normalize_scales() {
        let v = StateVector::from_real(2.0, 0.0, 0.0).normalize().unwrap();
        assert!(close(&v, &StateVector::psi1(), 1e-15));
    }

    #[test]
    fn normalize_removes_global_phase() {
        let v = StateVector::new(c(0.0, 0.0), c(0.0, 1.0), c(0.0, 0.0));
        assert!(close(&v.normalize().unwrap(), &StateVector::psi2(), 1e-15));
    }

    #[test]
    fn normalize_joint_scale_and_phase() {
        let z = c(1.0, 1.0);
        let v = StateVector::new(z, z, z).normalize().unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert!(close(&v, &StateVector::from_real(s, s, s), 1e-15));
        assert_eq!(v[0].im, 0.0);
    }

    #[test]
    fn normalize_rejects_zero() {
        assert!(matches!(
            StateVector::zero().normalize(),
            Err(Error::DegenerateState(_))
        ));
    }

    #[test]
    fn gauge_tie_breaks_on_lowest_index() {
        let v = StateVector::new(c(0.0, 0.5), c(0.5, 0.0), c(0.1, 0.0)).gauge_fixed();
        assert_eq!(v[0], c(0.5, 0.0));
        assert!((v[1] - c(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn polarization_degree_of_basis_states() {
        assert!((polarization_degree(&StateVector::psi1()) - 1.0).abs() < 1e-15);
        assert!(polarization_degree(&StateVector::psi2()).abs() < 1e-15);
        assert!((polarization_degree(&StateVector::psi3()) - 1.0).abs() < 1e-15);
        let v = StateVector::from_real((2.0f64 / 3.0).sqrt(), 1.0 / 3f64.sqrt(), 0.0);
        assert!((polarization_degree(&v) - 2.0 * SQRT_2 / 3.0).abs() < 1e-12);
        // Rotated-basis state with P = 0.
        let perp = StateVector::from_real(FRAC_1_SQRT_2, 0.0, -FRAC_1_SQRT_2);
        assert!(polarization_degree(&perp).abs() < 1e-15);
    }

    #[test]
    fn pure_fidelity_examples() {
        let a = StateVector::psi1();
        assert!((fidelity_pure(&a, &a) - 1.0).abs() < 1e-15);
        assert_eq!(fidelity_pure(&a, &StateVector::psi2()), 0.0);
        let b = StateVector::from_real(FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0);
        assert!((fidelity_pure(&a, &b) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixed_fidelity_examples() {
        let a = DensityMatrix::from_pure(&StateVector::psi1()).unwrap();
        let b = DensityMatrix::from_pure(&StateVector::from_real(1.0, 1.0, 0.0)).unwrap();
        let o = DensityMatrix::from_pure(&StateVector::psi3()).unwrap();
        assert!((fidelity_mixed(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity_mixed(&a, &o).unwrap().abs() < 1e-12);
        assert!((fidelity_mixed(&a, &b).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mixed_fidelity_of_full_rank_mixture_with_itself() {
        let rho = density_from_components(&[
            StateVector::from_real(1.0, 0.2, 0.0),
            StateVector::new(c(0.0, 0.3), c(0.7, 0.0), c(0.1, 0.1)),
            StateVector::from_real(0.0, 0.1, 0.4),
        ])
        .unwrap();
        assert!((fidelity_mixed(&rho, &rho).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_from_orthogonal_pair() {
        let rho =
            density_from_components(&[StateVector::psi1(), StateVector::psi3()]).unwrap();
        assert!((rho.get(0, 0).re - 0.5).abs() < 1e-15);
        assert!((rho.get(2, 2).re - 0.5).abs() < 1e-15);
        assert!(rho.get(0, 2).norm() < 1e-15);
        assert!((rho.matrix().trace().re - 1.0).abs() < 1e-15);
    }

    #[test]
    fn density_rejects_empty_and_zero() {
        assert!(density_from_components(&[]).is_err());
        assert!(density_from_components(&[StateVector::zero()]).is_err());
    }

    #[test]
    fn density_rejects_non_psd_and_non_hermitian() {
        let mut m = CMat3::identity();
        m[(2, 2)] = c(-0.5, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::InvalidDensity(_))));
        let mut h = CMat3::identity();
        h[(0, 1)] = c(0.3, 0.0);
        assert!(matches!(DensityMatrix::new(h), Err(Error::InvalidDensity(_))));
    }
}
