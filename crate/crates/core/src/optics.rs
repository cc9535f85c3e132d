//! Retardation plates acting on single photons and on biphoton qutrits.
//!
//! A plate of optical thickness `delta` with its axis at `angle` has
//! transmission and reflection coefficients
//! `t = cos(delta) + i sin(delta) cos(2 angle)` and `r = i sin(delta) sin(2 angle)`.
//! On one photon it acts as the 2x2 matrix `[[t, r], [-r*, t*]]`; on the
//! symmetric two-photon space it acts as the 3x3 unitary returned by
//! [`qutrit_unitary`].

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat3, CRow3};
use crate::state::StateVector;

/// Optical thickness of a quarter-wave plate.
pub const QUARTER_WAVE: f64 = FRAC_PI_4;
/// Optical thickness of a half-wave plate.
pub const HALF_WAVE: f64 = FRAC_PI_2;

/// Slack accepted on `delta` at the ends of `[0, pi]`.
const DELTA_SLACK: f64 = 1e-12;

/// One retardation plate. The orientation is stored reduced into
/// `(-pi/2, pi/2]`, since the plate action has period `pi` in the angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavePlateSetting {
    delta: f64,
    angle: f64,
}

fn reduce_angle(angle: f64) -> f64 {
    // (-pi/2, pi/2]
    let mut a = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if a <= -FRAC_PI_2 {
        a += PI;
    }
    a
}

impl WavePlateSetting {
    pub fn new(delta: f64, angle: f64) -> Result<Self> {
        if !delta.is_finite() || !angle.is_finite() {
            return Err(Error::InvalidPlate("thickness and angle must be finite".into()));
        }
        if !(-DELTA_SLACK..=PI + DELTA_SLACK).contains(&delta) {
            return Err(Error::InvalidPlate(format!(
                "optical thickness {delta} outside [0, pi]"
            )));
        }
        Ok(WavePlateSetting {
            delta: delta.clamp(0.0, PI),
            angle: reduce_angle(angle),
        })
    }

    /// Thickness in radians, orientation in degrees.
    pub fn from_degrees(delta: f64, angle_deg: f64) -> Result<Self> {
        Self::new(delta, angle_deg.to_radians())
    }

    pub fn quarter(angle: f64) -> Self {
        Self::new(QUARTER_WAVE, angle).expect("quarter-wave thickness is in range")
    }

    pub fn half(angle: f64) -> Self {
        Self::new(HALF_WAVE, angle).expect("half-wave thickness is in range")
    }

    pub fn quarter_deg(angle_deg: f64) -> Self {
        Self::quarter(angle_deg.to_radians())
    }

    pub fn half_deg(angle_deg: f64) -> Self {
        Self::half(angle_deg.to_radians())
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn angle_deg(&self) -> f64 {
        self.angle.to_degrees()
    }

    /// The same plate seen from a mirror-imaged frame (orientation negated).
    pub fn mirrored(&self) -> Self {
        WavePlateSetting {
            delta: self.delta,
            angle: reduce_angle(-self.angle),
        }
    }

    /// The same plate rotated by `offset` radians.
    pub fn rotated(&self, offset: f64) -> Self {
        WavePlateSetting {
            delta: self.delta,
            angle: reduce_angle(self.angle + offset),
        }
    }

    pub fn coefficients(&self) -> PlateCoefficients {
        plate_coeffs(self)
    }

    /// Single-photon matrix `[[t, r], [-r*, t*]]` on `(a+, b+)`.
    pub fn jones(&self) -> Matrix2<Complex64> {
        let PlateCoefficients { t, r } = self.coefficients();
        Matrix2::new(t, r, -r.conj(), t.conj())
    }
}

/// Transmission and reflection amplitudes of a plate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateCoefficients {
    pub t: Complex64,
    pub r: Complex64,
}

pub fn plate_coeffs(p: &WavePlateSetting) -> PlateCoefficients {
    let (sd, cd) = p.delta.sin_cos();
    let (s2a, c2a) = (2.0 * p.angle).sin_cos();
    PlateCoefficients {
        t: c(cd, sd * c2a),
        r: c(0.0, sd * s2a),
    }
}

/// Builds the 3x3 qutrit transformation from plate coefficients.
pub fn unitary_from_coeffs(k: PlateCoefficients) -> CMat3 {
    let PlateCoefficients { t, r } = k;
    let (tc, rc) = (t.conj(), r.conj());
    CMat3::new(
        t * t,
        t * r * SQRT_2,
        r * r,
        -t * rc * SQRT_2,
        c(t.norm_sqr() - r.norm_sqr(), 0.0),
        tc * r * SQRT_2,
        rc * rc,
        -tc * rc * SQRT_2,
        tc * tc,
    )
}

/// The unitary `G` a plate applies to the amplitudes `(c1, c2, c3)`.
pub fn qutrit_unitary(p: &WavePlateSetting) -> CMat3 {
    unitary_from_coeffs(plate_coeffs(p))
}

/// `G v`; preserves the norm and the polarization degree.
pub fn apply_plate(v: &StateVector, p: &WavePlateSetting) -> StateVector {
    StateVector::from_vector(qutrit_unitary(p) * v.as_vector())
}

/// Passes a state through a sequence of plates in order.
pub fn apply_plates(v: &StateVector, plates: &[WavePlateSetting]) -> StateVector {
    plates.iter().fold(*v, |acc, p| apply_plate(&acc, p))
}

/// Amplitudes `(u, v)` with which an arm's vertical-prism output creation
/// operator picks up `a+` and `b+` after the given plates (applied in order).
fn arm_projection(plates: &[WavePlateSetting]) -> (Complex64, Complex64) {
    let m = plates
        .iter()
        .fold(Matrix2::<Complex64>::identity(), |acc, p| p.jones() * acc);
    (m[(1, 0)], m[(1, 1)])
}

/// Amplitude row of a Brown-Twiss coincidence measurement.
///
/// `signal` and `idler` list the plates of each arm in the order the light
/// crosses them (quarter-wave then half-wave for the standard filter), each
/// followed by a vertical polarizer. Idler angles are given in the frame of the
/// reflected beam-splitter port, which is mirror-imaged. The returned row `x`
/// satisfies `|x . c|^2 = <b_s+ b_i+ b_s b_i>` including the `1/sqrt2`
/// beam-splitter amplitude of each arm, and is stored gauge-fixed.
pub fn projection_row(signal: &[WavePlateSetting], idler: &[WavePlateSetting]) -> CRow3 {
    let mirrored: Vec<WavePlateSetting> = idler.iter().map(|p| p.mirrored()).collect();
    let (us, vs) = arm_projection(signal);
    let (ui, vi) = arm_projection(&mirrored);
    // 1/2 from the two beam-splitter amplitudes times sqrt2 from the Fock norms
    let k = 1.0 / SQRT_2;
    let row = StateVector::new(us * ui * k, (us * vi + vs * ui) * 0.5, vs * vi * k).gauge_fixed();
    CRow3::new(row[0], row[1], row[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn near(a: Complex64, b: Complex64) -> bool {
        (a - b).norm() < 1e-15
    }

    #[test]
    fn half_wave_at_22_5() {
        let k = plate_coeffs(&WavePlateSetting::half_deg(22.5));
        assert!(near(k.t, c(0.0, FRAC_1_SQRT_2)));
        assert!(near(k.r, c(0.0, FRAC_1_SQRT_2)));
    }

    #[test]
    fn axis_aligned_plate() {
        for delta in [0.1, 0.656, 0.9046, 2.0] {
            let k = plate_coeffs(&WavePlateSetting::new(delta, 0.0).unwrap());
            assert!(near(k.t, Complex64::from_polar(1.0, delta)));
            assert_eq!(k.r, c(0.0, 0.0));
            let g = qutrit_unitary(&WavePlateSetting::new(delta, 0.0).unwrap());
            let want = CMat3::from_diagonal(&nalgebra::Vector3::new(
                Complex64::from_polar(1.0, 2.0 * delta),
                c(1.0, 0.0),
                Complex64::from_polar(1.0, -2.0 * delta),
            ));
            assert!((g - want).iter().all(|z| z.norm() < 1e-15));
        }
    }

    #[test]
    fn quarter_wave_coefficients() {
        for chi in [-0.7, 0.0, 0.33, 1.2] {
            let k = plate_coeffs(&WavePlateSetting::quarter(chi));
            let t = c(1.0, (2.0 * chi).cos()) * FRAC_1_SQRT_2;
            let r = c(0.0, (2.0 * chi).sin() * FRAC_1_SQRT_2);
            assert!((k.t - t).norm() < 1e-15 && (k.r - r).norm() < 1e-15);
        }
    }

    #[test]
    fn half_wave_22_5_matrix() {
        let g = qutrit_unitary(&WavePlateSetting::half_deg(22.5));
        let h = 0.5;
        let s = FRAC_1_SQRT_2;
        let want = CMat3::new(
            c(-h, 0.0), c(-s, 0.0), c(-h, 0.0),
            c(-s, 0.0), c(0.0, 0.0), c(s, 0.0),
            c(-h, 0.0), c(s, 0.0), c(-h, 0.0),
        );
        assert!((g - want).iter().all(|z| z.norm() < 1e-15));
    }

    #[test]
    fn zero_thickness_is_identity() {
        let p = WavePlateSetting::new(0.0, 0.4).unwrap();
        assert!((qutrit_unitary(&p) - CMat3::identity()).iter().all(|z| z.norm() < 1e-15));
        let v = StateVector::new(c(0.1, 0.2), c(-0.3, 0.0), c(0.5, 0.5));
        assert_eq!(apply_plate(&v, &p), v);
    }

    #[test]
    fn perp_state_maps_to_psi2() {
        let perp = StateVector::from_real(FRAC_1_SQRT_2, 0.0, -FRAC_1_SQRT_2);
        let out = apply_plate(&perp, &WavePlateSetting::half_deg(22.5));
        let want = StateVector::from_real(0.0, -1.0, 0.0);
        assert!((out.as_vector() - want.as_vector()).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn psi3_through_axis_aligned_plate_keeps_its_ray() {
        let out = apply_plate(&StateVector::psi3(), &WavePlateSetting::new(0.9046, 0.0).unwrap());
        assert!(near(out[2], Complex64::from_polar(1.0, -2.0 * 0.9046)));
        assert!(out.gauge_distance(&StateVector::psi3()) < 1e-15);
    }

    #[test]
    fn angle_reduction() {
        let p = WavePlateSetting::new(HALF_WAVE, PI / 2.0 + 0.1).unwrap();
        assert!((p.angle() - (-PI / 2.0 + 0.1)).abs() < 1e-15);
        assert_eq!(WavePlateSetting::new(HALF_WAVE, -PI / 2.0).unwrap().angle(), PI / 2.0);
        assert!(WavePlateSetting::new(-0.1, 0.0).is_err());
        assert!(WavePlateSetting::new(3.5, 0.0).is_err());
        assert!(WavePlateSetting::new(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn first_table_rows() {
        let s = projection_row(
            &[WavePlateSetting::quarter_deg(0.0), WavePlateSetting::half_deg(45.0)],
            &[WavePlateSetting::quarter_deg(0.0), WavePlateSetting::half_deg(-45.0)],
        );
        assert!(near(s[0], c(FRAC_1_SQRT_2, 0.0)) && s[1].norm() < 1e-15 && s[2].norm() < 1e-15);
        let z = projection_row(
            &[WavePlateSetting::quarter_deg(0.0), WavePlateSetting::half_deg(0.0)],
            &[WavePlateSetting::quarter_deg(0.0), WavePlateSetting::half_deg(0.0)],
        );
        assert!(near(z[2], c(FRAC_1_SQRT_2, 0.0)) && z[0].norm() < 1e-15 && z[1].norm() < 1e-15);
    }

    #[test]
    fn fifth_table_row() {
        let row = projection_row(
            &[WavePlateSetting::quarter_deg(45.0), WavePlateSetting::half_deg(22.5)],
            &[WavePlateSetting::quarter_deg(0.0), WavePlateSetting::half_deg(0.0)],
        );
        // M = c2/(2 sqrt2) - c3/2 up to a global phase
        let phase = row[2] / c(-0.5, 0.0);
        assert!((phase.norm() - 1.0).abs() < 1e-15);
        assert!((row[1] - phase * (0.5 * FRAC_1_SQRT_2)).norm() < 1e-15);
        assert!(row[0].norm() < 1e-15);
    }
}
