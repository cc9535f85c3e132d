//! Fisher information of amplitude estimates.
//!
//! For a pure-state estimate `c` the log-likelihood changes to second order as
//! `-(dc^dagger I dc + Re(dc^T K dc))`, with `I = sum t X^dagger X` and the
//! complex symmetric `K = sum (k / M^2) X^T X`, `M = X c`. Writing
//! `xi = (Re dc, Im dc)` turns this into the real quadratic form of the 6x6
//! matrix `H`. A global phase change costs nothing, so `H` always has a zero
//! mode along `i c`; the protocol is statistically complete when that is the
//! only one.

use nalgebra::{Matrix6, Vector6};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{self, Observations};
use crate::linalg::{self, CMat3, CRow3};
use crate::protocol::TomographyProtocol;
use crate::simulate::Truth;
use crate::state::StateVector;

/// Relative threshold separating the gauge zero mode from real information.
pub const TOL_ZERO: f64 = 1e-8;

/// Relative asymmetry of `H` treated as an internal error.
const SYMMETRY_TOL: f64 = 1e-10;

fn rows(p: &TomographyProtocol) -> Vec<CRow3> {
    p.rows().iter().map(|r| r.amplitudes).collect()
}

/// `I = sum t X^dagger X` for the given exposures.
pub fn fisher_i(p: &TomographyProtocol, exposures: &[f64]) -> Result<CMat3> {
    if exposures.len() != p.len() {
        return Err(Error::InvalidArgument(format!(
            "{} exposures for a protocol of {} rows",
            exposures.len(),
            p.len()
        )));
    }
    Ok(p.with_exposures(exposures.to_vec())?.fisher_information())
}

/// `J = sum (k / lambda) X^dagger X` at `c`, with the zero-intensity floor.
pub fn empirical_j(
    p: &TomographyProtocol,
    obs: &Observations,
    c: &StateVector,
    reg_eps: f64,
) -> Result<CMat3> {
    check_len(p, obs)?;
    let x = rows(p);
    let lambda = estimate::regularized_intensities(&x, c.as_vector(), reg_eps);
    let mut j = CMat3::zeros();
    for ((row, &k), &l) in x.iter().zip(&obs.counts).zip(&lambda) {
        if k == 0.0 {
            continue;
        }
        j += row.adjoint() * row * Complex64::new(k / l, 0.0);
    }
    Ok(linalg::hermitian_part(&j))
}

/// `K = sum (k / M^2) X^T X` at `c`, where `M^2` is the squared complex
/// amplitude. Amplitudes below the intensity floor are lifted to it with
/// their phase kept.
pub fn fisher_k(
    p: &TomographyProtocol,
    obs: &Observations,
    c: &StateVector,
    reg_eps: f64,
) -> Result<CMat3> {
    check_len(p, obs)?;
    let x = rows(p);
    let raw: Vec<Complex64> = x.iter().map(|r| (r * c.as_vector())[0]).collect();
    let floor = reg_eps * raw.iter().map(|m| m.norm_sqr()).sum::<f64>() / raw.len() as f64;
    let mut k = CMat3::zeros();
    for ((row, &m), &count) in x.iter().zip(&raw).zip(&obs.counts) {
        if count == 0.0 {
            continue;
        }
        let m = if m.norm_sqr() >= floor {
            m
        } else if m.norm() > 0.0 {
            m / m.norm() * floor.sqrt()
        } else {
            Complex64::new(floor.sqrt(), 0.0)
        };
        k += row.transpose() * row * (count / (m * m));
    }
    Ok((k + k.transpose()) * Complex64::new(0.5, 0.0))
}

/// Real 6x6 matrix of the quadratic form `dc^dagger I dc + Re(dc^T K dc)` in
/// `xi = (Re dc, Im dc)`: blocks `[[Re(I+K), -Im(I+K)], [Im(I-K), Re(I-K)]]`.
pub fn info_matrix_h(i: &CMat3, k: &CMat3) -> Result<Matrix6<f64>> {
    let plus = i + k;
    let minus = i - k;
    let h = Matrix6::from_fn(|r, s| match (r < 3, s < 3) {
        (true, true) => plus[(r, s)].re,
        (true, false) => -plus[(r, s - 3)].im,
        (false, true) => minus[(r - 3, s)].im,
        (false, false) => minus[(r - 3, s - 3)].re,
    });
    let scale = h.amax().max(f64::MIN_POSITIVE);
    let asym = (h - h.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::Numerical(format!(
            "information matrix asymmetric by {asym:.3e} (scale {scale:.3e})"
        )));
    }
    Ok((h + h.transpose()) * 0.5)
}

fn check_len(p: &TomographyProtocol, obs: &Observations) -> Result<()> {
    if obs.len() != p.len() {
        return Err(Error::InvalidArgument(format!(
            "{} count rows for a protocol of {} rows",
            obs.len(),
            p.len()
        )));
    }
    Ok(())
}

/// `I`, `K` and `H` at one state, with the spectrum of `H`.
#[derive(Clone, Debug, Serialize)]
pub struct InformationBundle {
    #[serde(skip)]
    pub i: CMat3,
    #[serde(skip)]
    pub k: CMat3,
    #[serde(skip)]
    pub h: Matrix6<f64>,
    /// Eigenvalues of `H`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors of `H` as columns, matching `eigenvalues`.
    #[serde(skip)]
    pub eigenvectors: Matrix6<f64>,
    /// State the bundle is evaluated at.
    pub at: StateVector,
    /// Total events `n = sum k` of the data behind `K`.
    pub total: f64,
}

impl InformationBundle {
    /// Observed information: `K` uses the measured counts.
    pub fn observed(
        p: &TomographyProtocol,
        obs: &Observations,
        c: &StateVector,
        reg_eps: f64,
    ) -> Result<Self> {
        let i = fisher_i(p, &obs.exposures)?;
        let k = fisher_k(p, obs, c, reg_eps)?;
        let h = info_matrix_h(&i, &k)?;
        let (values, vectors) = linalg::symmetric_eigen6(&h);
        Ok(InformationBundle {
            i,
            k,
            h,
            eigenvalues: values.iter().copied().collect(),
            eigenvectors: vectors,
            at: *c,
            total: obs.total(),
        })
    }

    /// Expected information: counts replaced by their means `lambda t` at `c`.
    pub fn expected(p: &TomographyProtocol, c: &StateVector) -> Result<Self> {
        let obs = Observations::noiseless(p, &Truth::Pure(*c));
        Self::observed(p, &obs, c, 1e-300)
    }

    /// `<xi|H|xi>` for a complex vector.
    pub fn quadratic_form(&self, v: &StateVector) -> f64 {
        let xi = linalg::realify(v.as_vector());
        xi.dot(&(self.h * xi))
    }

    pub fn h_max(&self) -> f64 {
        self.eigenvalues.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }
}

/// Real image of the gauge direction `i c`.
pub fn gauge_vector(c: &StateVector) -> Vector6<f64> {
    linalg::realify(&(c.as_vector() * Complex64::i()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletenessReport {
    pub complete: bool,
    /// Eigenvalues of `H` below `tol_zero * max|h|`.
    pub zero_count: usize,
    pub eigenvalues: Vec<f64>,
}

/// Complete iff exactly one eigenvalue of `H` is below `tol_zero * max|h|`.
pub fn completeness_check(bundle: &InformationBundle, tol_zero: f64) -> CompletenessReport {
    let cut = tol_zero * bundle.h_max();
    let zero_count = bundle.eigenvalues.iter().filter(|&&h| h < cut).count();
    CompletenessReport {
        complete: zero_count == 1,
        zero_count,
        eigenvalues: bundle.eigenvalues.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrincipalVariance {
    /// `1 / (2 h)`.
    pub variance: f64,
    pub h: f64,
    #[serde(skip)]
    pub direction: Vector6<f64>,
}

/// Variances `1 / (2 h_j)` along the five non-gauge eigen-directions, largest
/// variance (least-informed direction) first.
pub fn principal_variances(bundle: &InformationBundle, tol_zero: f64) -> Result<Vec<PrincipalVariance>> {
    let report = completeness_check(bundle, tol_zero);
    if !report.complete {
        return Err(Error::IncompleteProtocol(format!(
            "{} near-zero information eigenvalues, exactly one is required",
            report.zero_count
        )));
    }
    Ok((1..6)
        .map(|j| {
            let h = bundle.eigenvalues[j];
            PrincipalVariance {
                variance: 1.0 / (2.0 * h),
                h,
                direction: bundle.eigenvectors.column(j).into_owned(),
            }
        })
        .collect())
}

/// `F_H = 1 - <dxi|H|dxi> / <xi|H|xi>` with `dc = truth - estimate`. The
/// estimate must already be phase-aligned to the truth and the bundle built
/// at it; see [`info_fidelity_at`].
pub fn info_fidelity(bundle: &InformationBundle, truth: &StateVector, estimate: &StateVector) -> f64 {
    let delta = StateVector::from_vector(truth.as_vector() - estimate.as_vector());
    let denom = bundle.quadratic_form(truth);
    if denom == 0.0 {
        return if delta.norm() == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - bundle.quadratic_form(&delta) / denom
}

/// Aligns the estimate's global phase to the truth, builds the observed
/// bundle there and returns `F_H`.
pub fn info_fidelity_at(
    p: &TomographyProtocol,
    obs: &Observations,
    truth: &StateVector,
    estimate: &StateVector,
    reg_eps: f64,
) -> Result<f64> {
    let aligned = estimate.align_phase_to(truth);
    let bundle = InformationBundle::observed(p, obs, &aligned, reg_eps)?;
    Ok(info_fidelity(&bundle, truth, &aligned))
}

/// `c^dagger I c + Re(c^T K c)` computed directly from the complex matrices.
pub fn complex_quadratic_form(i: &CMat3, k: &CMat3, v: &StateVector) -> f64 {
    let x = v.as_vector();
    let a = (x.adjoint() * i * x)[0].re;
    let b = (x.transpose() * k * x)[0].re;
    a + b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{mlm_reconstruct, SolverOptions};
    use crate::protocol::{build_protocol1, build_protocol2, default_protocol2};
    use crate::linalg::c;
    use crate::simulate::sample_counts;

    fn state() -> StateVector {
        StateVector::new(c(0.3, 0.2), c(-0.5, 0.4), c(0.6, -0.1)).scale(50.0)
    }

    #[test]
    fn h_reproduces_complex_form() {
        let p = default_protocol2(1.0).unwrap();
        let obs = Observations::from(&sample_counts(&p, &Truth::Pure(state()), 2).unwrap());
        let b = InformationBundle::observed(&p, &obs, &state(), 1e-12).unwrap();
        assert!(linalg::hermitian_defect(&b.i) < 1e-12 * linalg::max_abs(&b.i));
        assert!(linalg::max_abs(&(b.k - b.k.transpose())) < 1e-12 * linalg::max_abs(&b.k));
        for v in [
            StateVector::new(c(1.0, 0.0), c(0.0, 2.0), c(-1.0, 0.5)),
            StateVector::new(c(0.0, -0.3), c(0.7, 0.0), c(0.2, 0.2)),
        ] {
            let direct = complex_quadratic_form(&b.i, &b.k, &v);
            assert!((b.quadratic_form(&v) - direct).abs() < 1e-10 * direct.abs());
        }
    }

    #[test]
    fn gauge_mode_and_total_at_fixed_point() {
        let p = build_protocol1(1.0).unwrap();
        let obs = Observations::from(&sample_counts(&p, &Truth::Pure(state()), 8).unwrap());
        let r = mlm_reconstruct(&p, &obs, None, &SolverOptions::default()).unwrap();
        let b = InformationBundle::observed(&p, &obs, &r.estimate, 1e-12).unwrap();
        let g = gauge_vector(&r.estimate);
        assert!((b.h * g).norm() <= 1e-8 * b.h_max() * g.norm());
        let q = b.quadratic_form(&r.estimate);
        assert!((q / (2.0 * obs.total()) - 1.0).abs() < 1e-8);
        assert!(completeness_check(&b, TOL_ZERO).complete);
    }

    #[test]
    fn expected_bundle_has_exact_gauge_mode() {
        let p = default_protocol2(1.0).unwrap();
        let b = InformationBundle::expected(&p, &state()).unwrap();
        let g = gauge_vector(&state());
        assert!((b.h * g).norm() <= 1e-10 * b.h_max() * g.norm());
        let rep = completeness_check(&b, TOL_ZERO);
        assert!(rep.complete, "{rep:?}");
    }

    #[test]
    fn real_data_gives_real_k() {
        let p = build_protocol1(1.0).unwrap();
        let v = StateVector::from_real(1.0, 2.0, 3.0);
        let obs = Observations::new(vec![3.0; 9], vec![1.0; 9]).unwrap();
        let k = fisher_k(&p, &obs, &v, 1e-12).unwrap();
        // rows 4, 7 and 8 carry imaginary entries, so K is complex in general
        assert!(k.iter().any(|z| z.im.abs() > 1e-3));
        let real_rows = crate::protocol::build_custom(
            vec![crate::protocol::BrownTwissSetting::standard_deg(0.0, 45.0, 0.0, -45.0)],
            1.0,
        )
        .unwrap();
        let obs1 = Observations::new(vec![3.0], vec![1.0]).unwrap();
        let k1 = fisher_k(&real_rows, &obs1, &v, 1e-12).unwrap();
        assert!(k1.iter().all(|z| z.im.abs() < 1e-13 * linalg::max_abs(&k1)));
    }

    #[test]
    fn degenerate_protocol_is_incomplete() {
        let p = build_protocol2(18.8, -28.5, &[10.0, 10.0, 10.0, 10.0, 10.0], 1.0).unwrap();
        let b = InformationBundle::expected(&p, &state()).unwrap();
        let rep = completeness_check(&b, TOL_ZERO);
        assert!(!rep.complete && rep.zero_count > 1);
        assert!(principal_variances(&b, TOL_ZERO).is_err());
    }

    #[test]
    fn variances_scale_with_exposure() {
        let p = default_protocol2(1.0).unwrap();
        let b1 = InformationBundle::expected(&p, &state()).unwrap();
        let b2 = InformationBundle::expected(&p.with_uniform_exposure(2.0).unwrap(), &state()).unwrap();
        let v1 = principal_variances(&b1, TOL_ZERO).unwrap();
        let v2 = principal_variances(&b2, TOL_ZERO).unwrap();
        for (a, b) in v1.iter().zip(&v2) {
            assert!((a.variance / b.variance - 2.0).abs() < 1e-9);
        }
        assert!(v1.windows(2).all(|w| w[0].variance >= w[1].variance));
    }

    #[test]
    fn perfect_estimate_has_unit_info_fidelity() {
        let p = build_protocol1(1.0).unwrap();
        let b = InformationBundle::expected(&p, &state()).unwrap();
        assert_eq!(info_fidelity(&b, &state(), &state()), 1.0);
    }
}
