//! Fourth-order coherence matrix of a biphoton field.
//!
//! The six moments are `A = <a+^2 a^2>`, `B = <b+^2 b^2>`, `C = <a+ b+ a b>`,
//! `D = <a+^2 a b>`, `E = <a+^2 b^2>` and `F = <a+ b+ b^2>`, with `a`, `b` the
//! horizontal and vertical modes. They are linear in the density matrix.

use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::SQRT_2;

use crate::state::{DensityMatrix, StateVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoherenceMatrix {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: Complex64,
    pub e: Complex64,
    pub f: Complex64,
}

impl CoherenceMatrix {
    /// Moments of a (possibly mixed) state.
    pub fn from_density(rho: &DensityMatrix) -> Self {
        let m = rho.matrix();
        CoherenceMatrix {
            a: 2.0 * m[(0, 0)].re,
            b: 2.0 * m[(2, 2)].re,
            c: m[(1, 1)].re,
            // rho_jk = c_j c_k^*, so D ~ c1^* c2 sits below the diagonal
            d: m[(1, 0)] * SQRT_2,
            e: m[(2, 0)] * 2.0,
            f: m[(2, 1)] * SQRT_2,
        }
    }

    /// Moments of a pure state, taken as given (not normalized), so an
    /// un-normalized vector yields moments scaled by its squared norm.
    pub fn from_state(v: &StateVector) -> Self {
        let [c1, c2, c3] = v.components();
        CoherenceMatrix {
            a: 2.0 * c1.norm_sqr(),
            b: 2.0 * c3.norm_sqr(),
            c: c2.norm_sqr(),
            d: c1.conj() * c2 * SQRT_2,
            e: c1.conj() * c3 * 2.0,
            f: c2.conj() * c3 * SQRT_2,
        }
    }

    /// `A + B + 2C`, equal to 2 for a normalized state.
    pub fn normalization(&self) -> f64 {
        self.a + self.b + 2.0 * self.c
    }
}

/// Free-function form of [`CoherenceMatrix::from_density`].
pub fn coherence_matrix(rho: &DensityMatrix) -> CoherenceMatrix {
    CoherenceMatrix::from_density(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::density_from_components;

    #[test]
    fn basis_state_moments() {
        let k1 = coherence_matrix(&DensityMatrix::from_pure(&StateVector::psi1()).unwrap());
        assert_eq!((k1.a, k1.b, k1.c), (2.0, 0.0, 0.0));
        assert_eq!(k1.d.norm() + k1.e.norm() + k1.f.norm(), 0.0);
        let k2 = coherence_matrix(&DensityMatrix::from_pure(&StateVector::psi2()).unwrap());
        assert_eq!((k2.a, k2.b, k2.c), (0.0, 0.0, 1.0));
    }

    #[test]
    fn equal_mixture_of_extreme_states() {
        let rho = density_from_components(&[StateVector::psi1(), StateVector::psi3()]).unwrap();
        let k = coherence_matrix(&rho);
        assert!((k.a - 1.0).abs() < 1e-15 && (k.b - 1.0).abs() < 1e-15);
        assert_eq!(k.c, 0.0);
        assert_eq!(k.e.norm(), 0.0);
        assert!((k.normalization() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pure_and_density_routes_agree() {
        let v = StateVector::new(
            Complex64::new(0.3, -0.2),
            Complex64::new(0.5, 0.4),
            Complex64::new(-0.1, 0.6),
        )
        .normalize()
        .unwrap();
        let a = CoherenceMatrix::from_state(&v);
        let b = coherence_matrix(&DensityMatrix::from_pure(&v).unwrap());
        assert!((a.a - b.a).abs() < 1e-14 && (a.c - b.c).abs() < 1e-14);
        assert!((a.d - b.d).norm() < 1e-14 && (a.e - b.e).norm() < 1e-14);
        assert!((a.f - b.f).norm() < 1e-14);
    }
}
