//! Sample summaries and goodness-of-fit checks used by the studies.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::stats_tests::chisquare::chisquare;
use statrs::stats_tests::ks_test::{ks_onesample, KSOneSampleAlternativeMethod};
use statrs::stats_tests::NaNPolicy;

use crate::error::{Error, Result};
use crate::PHYSICAL_DOF;

fn chi2(dof: f64) -> Result<ChiSquared> {
    ChiSquared::new(dof).map_err(|e| Error::InvalidArgument(format!("chi-square dof {dof}: {e}")))
}

/// Quantile `q` of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_quantile(dof: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside (0, 1)")));
    }
    Ok(chi2(dof)?.inverse_cdf(q))
}

/// Two-sided one-sample Kolmogorov-Smirnov test against chi-square(`dof`),
/// asymptotic p-value. Returns `(D, p)`.
pub fn ks_test_chi2(sample: &[f64], dof: f64) -> Result<(f64, f64)> {
    if sample.len() < 2 {
        return Err(Error::InvalidArgument("KS test needs at least two values".into()));
    }
    ks_onesample(
        sample.to_vec(),
        &chi2(dof)?,
        KSOneSampleAlternativeMethod::TwoSidedAsymptotic,
        NaNPolicy::Error,
    )
    .map_err(|e| Error::InvalidArgument(format!("KS test: {e:?}")))
}

/// Pearson chi-square goodness of fit of binned counts against expected
/// bin counts (rescaled to the observed total). Returns `(statistic, p)`.
pub fn chi_square_gof(observed: &[usize], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::InvalidArgument("need matching bins, at least two".into()));
    }
    let total_obs: usize = observed.iter().sum();
    let total_exp: f64 = expected.iter().sum();
    if !(total_exp > 0.0) || total_obs == 0 {
        return Err(Error::InvalidArgument("bins are empty".into()));
    }
    let scaled: Vec<f64> = expected.iter().map(|e| e * total_obs as f64 / total_exp).collect();
    chisquare(observed, Some(&scaled), None)
        .map_err(|e| Error::InvalidArgument(format!("chi-square test: {e:?}")))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); NaN below two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation sample quantile (type 7); NaN for empty input.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() || !(0.0..=1.0).contains(&q) {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Method-of-moments beta fit `(a, b)` of values in (0, 1); `None` when the
/// sample variance is zero or too large for a beta law.
pub fn beta_fit_moments(xs: &[f64]) -> Option<(f64, f64)> {
    let m = mean(xs);
    let v = std_dev(xs).powi(2);
    if !(m > 0.0 && m < 1.0 && v > 0.0 && v < m * (1.0 - m)) {
        return None;
    }
    let common = m * (1.0 - m) / v - 1.0;
    Some((m * common, (1.0 - m) * common))
}

/// Band of informational fidelity at `n` events from pure statistical noise:
/// `1 - chi2_q(5) / (4 n)` at the `hi` and `lo` quantile levels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FidelityBand {
    pub lower: f64,
    pub mean: f64,
    pub upper: f64,
}

pub fn info_fidelity_band(n_events: f64, lo: f64, hi: f64) -> Result<FidelityBand> {
    if !(n_events > 0.0) {
        return Err(Error::InvalidArgument(format!("event count {n_events} must be positive")));
    }
    let dof = PHYSICAL_DOF as f64;
    Ok(FidelityBand {
        lower: 1.0 - chi2_quantile(dof, hi)? / (4.0 * n_events),
        mean: 1.0 - dof / (4.0 * n_events),
        upper: 1.0 - chi2_quantile(dof, lo)? / (4.0 * n_events),
    })
}
