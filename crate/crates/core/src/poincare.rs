//! Two-point representation of a qutrit on the Poincare sphere.
//!
//! Each photon of the biphoton is drawn as a point `(theta, phi)` with creation
//! operator `cos(theta/2) a+ + exp(i phi) sin(theta/2) b+`. The symmetrized
//! product of the two creation operators acting on vacuum gives the state.
//! Conversely the amplitudes define the quadratic
//! `w^2 - sqrt2 (c2/c1) w + c3/c1` whose roots `w = exp(i phi) tan(theta/2)`
//! are the two points (an unordered pair).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2, TAU};

use crate::error::{Error, Result};
use crate::linalg::c;
use crate::state::StateVector;

/// Spherical angles of the signal and idler points, in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincarePair {
    pub theta_s: f64,
    pub phi_s: f64,
    pub theta_i: f64,
    pub phi_i: f64,
}

/// Maps any real polar/azimuth pair onto `theta in [0, pi]`, `phi in [0, 2pi)`.
fn principal(theta: f64, phi: f64) -> (f64, f64) {
    let mut t = theta.rem_euclid(TAU);
    let mut p = phi;
    if t > PI {
        t = TAU - t;
        p += PI;
    }
    let mut p = p.rem_euclid(TAU);
    if p >= TAU {
        p = 0.0;
    }
    (t, p)
}

impl PoincarePair {
    /// Builds a pair, reducing every angle into its principal range.
    pub fn new(theta_s: f64, phi_s: f64, theta_i: f64, phi_i: f64) -> Result<Self> {
        if ![theta_s, phi_s, theta_i, phi_i].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument("Poincare angles must be finite".into()));
        }
        let (ts, ps) = principal(theta_s, phi_s);
        let (ti, pi) = principal(theta_i, phi_i);
        Ok(PoincarePair {
            theta_s: ts,
            phi_s: ps,
            theta_i: ti,
            phi_i: pi,
        })
    }

    pub fn from_degrees(theta_s: f64, phi_s: f64, theta_i: f64, phi_i: f64) -> Result<Self> {
        Self::new(
            theta_s.to_radians(),
            phi_s.to_radians(),
            theta_i.to_radians(),
            phi_i.to_radians(),
        )
    }

    pub fn swapped(&self) -> Self {
        PoincarePair {
            theta_s: self.theta_i,
            phi_s: self.phi_i,
            theta_i: self.theta_s,
            phi_i: self.phi_s,
        }
    }

    fn unit_vectors(&self) -> ([f64; 3], [f64; 3]) {
        let v = |t: f64, p: f64| [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()];
        (v(self.theta_s, self.phi_s), v(self.theta_i, self.phi_i))
    }
}

/// Single-photon creation amplitudes `(cos(theta/2), exp(i phi) sin(theta/2))`.
fn photon(theta: f64, phi: f64) -> (Complex64, Complex64) {
    (
        c((theta / 2.0).cos(), 0.0),
        Complex64::from_polar((theta / 2.0).sin(), phi),
    )
}

/// Normalized, gauge-fixed state of the symmetrized photon pair.
pub fn from_poincare(p: &PoincarePair) -> StateVector {
    let (a1, b1) = photon(p.theta_s, p.phi_s);
    let (a2, b2) = photon(p.theta_i, p.phi_i);
    // a+^2|vac> = sqrt2 |2,0>, a+ b+|vac> = |1,1>, b+^2|vac> = sqrt2 |0,2>
    let raw = StateVector::new(a1 * a2 * SQRT_2, a1 * b2 + b1 * a2, b1 * b2 * SQRT_2);
    raw.normalize()
        .expect("the symmetrized product of two photons never vanishes")
}

/// Angle between the two points as seen from the sphere centre.
pub fn beta_angle(p: &PoincarePair) -> f64 {
    let (u, v) = p.unit_vectors();
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    dot.clamp(-1.0, 1.0).acos()
}

/// Polarization degree from the point separation, `2cos(b/2) / (1 + cos^2(b/2))`.
pub fn polarization_from_beta(beta: f64) -> f64 {
    let h = (beta / 2.0).cos();
    2.0 * h / (1.0 + h * h)
}

/// Point with `w = exp(i phi) tan(theta/2)`.
fn point_from_ratio(w: Complex64) -> (f64, f64) {
    (2.0 * w.norm().atan(), w.arg())
}

/// Point with `1/w = v`, used when the ratio would overflow.
fn point_from_inverse_ratio(v: Complex64) -> (f64, f64) {
    (2.0 * 1.0f64.atan2(v.norm()), -v.arg())
}

/// Roots of `z^2 + p z + q` computed without cancellation.
fn quadratic_roots(p: Complex64, q: Complex64) -> (Complex64, Complex64) {
    let disc = (p * p - q * 4.0).sqrt();
    let plus = -p + disc;
    let minus = -p - disc;
    let big = if plus.norm() >= minus.norm() { plus } else { minus } / 2.0;
    if big.norm() == 0.0 {
        return (c(0.0, 0.0), c(0.0, 0.0));
    }
    (big, q / big)
}

/// Inverse of [`from_poincare`]: factorizes the amplitude polynomial into the
/// two single-photon points. The pair is unordered; the first point is the one
/// nearer the north pole.
pub fn to_poincare(v: &StateVector) -> Result<PoincarePair> {
    let u = v.normalize()?;
    let [c1, c2, c3] = u.components();
    let (first, second) = if c1.norm() >= c3.norm() && c1.norm() > 0.0 {
        // w^2 - sqrt2 (c2/c1) w + c3/c1 = 0 with w = b/a
        let (w1, w2) = quadratic_roots(-(c2 / c1) * SQRT_2, c3 / c1);
        (point_from_ratio(w1), point_from_ratio(w2))
    } else if c3.norm() > 0.0 {
        // same polynomial in v = a/b
        let (v1, v2) = quadratic_roots(-(c2 / c3) * SQRT_2, c1 / c3);
        (point_from_inverse_ratio(v1), point_from_inverse_ratio(v2))
    } else {
        // |1,1>: antipodal poles
        ((0.0, 0.0), (PI, 0.0))
    };
    let (a, b) = if first.0 <= second.0 { (first, second) } else { (second, first) };
    PoincarePair::new(a.0, a.1, b.0, b.1)
}
