//! Invariants over random states, plates and sphere points.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use proptest::prelude::*;

use qutrit::coherence::CoherenceMatrix;
use qutrit::linalg::CMat3;
use qutrit::optics::{apply_plate, apply_plates, qutrit_unitary, WavePlateSetting};
use qutrit::poincare::{beta_angle, from_poincare, polarization_from_beta, to_poincare, PoincarePair};
use qutrit::protocol::build_protocol1;
use qutrit::state::{fidelity_mixed, fidelity_pure, polarization_degree, DensityMatrix, StateVector};

fn state() -> impl Strategy<Value = StateVector> {
    prop::array::uniform6(-1.0f64..1.0)
        .prop_filter("non-zero", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|a| {
            StateVector::new(
                Complex64::new(a[0], a[1]),
                Complex64::new(a[2], a[3]),
                Complex64::new(a[4], a[5]),
            )
        })
}

fn unit_state() -> impl Strategy<Value = StateVector> {
    state().prop_map(|v| v.normalize().unwrap())
}

fn plate() -> impl Strategy<Value = WavePlateSetting> {
    (0.0..=PI, -PI..PI).prop_map(|(d, a)| WavePlateSetting::new(d, a).unwrap())
}

fn max_dev(m: &CMat3) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #[test]
    fn gauge_fixing_ignores_global_phase(v in state(), phase in -PI..PI) {
        let a = v.gauge_fixed();
        let b = v.with_global_phase(phase).gauge_fixed();
        prop_assert!(a.gauge_distance(&b) < 1e-12);
        prop_assert!((fidelity_pure(&v, &v.with_global_phase(phase)) - 1.0).abs() < 1e-12);
        let m1 = CoherenceMatrix::from_state(&v);
        let m2 = CoherenceMatrix::from_state(&v.with_global_phase(phase));
        prop_assert!((m1.d - m2.d).norm() + (m1.e - m2.e).norm() + (m1.f - m2.f).norm() < 1e-12);
    }

    #[test]
    fn moments_are_normalized(v in unit_state()) {
        let m = CoherenceMatrix::from_state(&v);
        prop_assert!((m.a + m.b + 2.0 * m.c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nine_rows_measure_the_moments(v in state()) {
        let m = CoherenceMatrix::from_state(&v);
        let want = [
            m.a / 4.0,
            m.c / 4.0,
            m.b / 4.0,
            (m.b + m.c + 2.0 * m.f.im) / 8.0,
            (m.b + m.c - 2.0 * m.f.re) / 8.0,
            (m.a + m.c - 2.0 * m.d.re) / 8.0,
            (m.a + m.c + 2.0 * m.d.im) / 8.0,
            (m.a + m.b - 2.0 * m.e.im) / 16.0,
            (m.a + m.b - 2.0 * m.e.re) / 16.0,
        ];
        let got = build_protocol1(1.0).unwrap().intensities(&v);
        for (g, w) in got.iter().zip(want) {
            prop_assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn plates_act_unitarily(p in plate(), q in plate(), v in state()) {
        let u = qutrit_unitary(&p);
        prop_assert!(max_dev(&(u * u.adjoint() - CMat3::identity())) < 1e-12);
        let both = qutrit_unitary(&q) * u;
        let seq = apply_plates(&v, &[p, q]);
        prop_assert!((both * v.as_vector() - seq.as_vector()).norm() < 1e-12 * (1.0 + v.norm()));
        prop_assert!((seq.norm() - v.norm()).abs() < 1e-12 * (1.0 + v.norm()));
    }

    #[test]
    fn plates_preserve_polarization(p in plate(), v in state()) {
        let out = apply_plate(&v, &p);
        prop_assert!((polarization_degree(&out) - polarization_degree(&v)).abs() < 1e-10);
    }

    #[test]
    fn sphere_round_trip(ts in 0.0..=PI, ps in 0.0..TAU, ti in 0.0..=PI, pi in 0.0..TAU) {
        let pair = PoincarePair::new(ts, ps, ti, pi).unwrap();
        let v = from_poincare(&pair);
        prop_assert!((polarization_degree(&v) - polarization_from_beta(beta_angle(&pair))).abs() < 1e-10);
        let back = from_poincare(&to_poincare(&v).unwrap());
        prop_assert!(fidelity_pure(&v, &back) > 1.0 - 1e-8);
    }

    #[test]
    fn every_state_lies_on_the_sphere(v in unit_state()) {
        let back = from_poincare(&to_poincare(&v).unwrap());
        prop_assert!(fidelity_pure(&v, &back) > 1.0 - 1e-8);
    }

    #[test]
    fn mixed_fidelity_reduces_to_pure(a in state(), b in state()) {
        let ra = DensityMatrix::from_pure(&a).unwrap();
        let rb = DensityMatrix::from_pure(&b).unwrap();
        let f = fidelity_mixed(&ra, &rb).unwrap();
        prop_assert!((f - fidelity_pure(&a, &b)).abs() < 1e-6);
        prop_assert!((fidelity_mixed(&rb, &ra).unwrap() - f).abs() < 1e-6);
    }
}
