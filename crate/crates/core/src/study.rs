//! Monte Carlo replication of full- and partial-volume experiments.
//!
//! Every replica is an independent full-volume experiment drawn from its own
//! child seed. Each is thinned to every requested volume fraction `f` and
//! reconstructed, so a replica contributes one row per `f`. Failures are
//! recorded in the row and never abort the study.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimate::{lsm_reconstruct, mlm_reconstruct, Method, Observations, SolverOptions};
use crate::info::info_fidelity_at;
use crate::mixture::{separate_mixture, MixtureOptions};
use crate::protocol::TomographyProtocol;
use crate::simulate::{
    derive_seed, expected_counts, sample_with_instrument_error, thin_counts, Truth, THIN_STREAM,
};
use crate::state::{fidelity_mixed, fidelity_pure, DensityMatrix, StateVector};
use crate::stats::{self, info_fidelity_band};
use crate::PHYSICAL_DOF;

/// Stream tag for per-replica experiment seeds.
pub const REPLICA_STREAM: u64 = 0x7265_706c;

/// Volume fractions of the partial-volume study.
pub const DEFAULT_F_GRID: [f64; 6] = [0.01, 0.04, 0.1, 0.25, 0.5, 1.0];

#[derive(Clone, Debug)]
pub struct StudyConfig {
    /// Pure state or mixture; rescaled so the protocol expects `n_events`.
    pub truth: Truth,
    pub protocol: TomographyProtocol,
    pub n_events: f64,
    pub replicas: usize,
    pub f_grid: Vec<f64>,
    /// Standard deviation of plate-angle errors in the simulated apparatus.
    pub jitter_deg: f64,
    pub seed: u64,
    /// Estimator for pure truths.
    pub method: Method,
    /// Components separated for mixture truths.
    pub components: usize,
    pub solver: SolverOptions,
    pub mixture: MixtureOptions,
}

impl StudyConfig {
    pub fn new(truth: Truth, protocol: TomographyProtocol, n_events: f64, replicas: usize, seed: u64) -> Self {
        let components = match &truth {
            Truth::Mixture(parts) => parts.len().min(crate::DIM),
            _ => 1,
        };
        StudyConfig {
            truth,
            protocol,
            n_events,
            replicas,
            f_grid: vec![1.0],
            jitter_deg: 0.0,
            seed,
            method: Method::Mlm,
            components,
            solver: SolverOptions::default(),
            mixture: MixtureOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyRow {
    pub replica: usize,
    pub f: f64,
    /// Events actually observed in this (thinned) data set.
    pub n_events: u64,
    pub fidelity: f64,
    /// `F_H`; NaN for mixtures.
    pub info_fidelity: f64,
    /// `4 n (1 - F_H)`; NaN for mixtures.
    pub chi2_stat: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudySummary {
    pub f: f64,
    pub replicas: usize,
    pub failures: usize,
    pub n_events_mean: f64,
    pub fidelity_mean: f64,
    pub fidelity_sd: f64,
    pub info_fidelity_mean: f64,
    pub info_fidelity_sd: f64,
    pub chi2_mean: f64,
    /// `1 - chi2_0.95(5) / (4 n)` at the expected event count `f N`.
    pub band_lower: f64,
    /// `1 - 5 / (4 n)`.
    pub band_mean: f64,
    /// `1 - chi2_0.05(5) / (4 n)`.
    pub band_upper: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyResult {
    pub rows: Vec<StudyRow>,
    pub summary: Vec<StudySummary>,
}

enum Target {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

/// Truth rescaled so that the protocol expects `n_events` in total.
pub fn scaled_truth(p: &TomographyProtocol, truth: &Truth, n_events: f64) -> Result<Truth> {
    let total: f64 = expected_counts(p, truth).iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateState("truth produces no events".into()));
    }
    let s = n_events / total;
    Ok(match truth {
        Truth::Pure(c) => Truth::Pure(c.scale(s.sqrt())),
        Truth::Mixture(parts) => Truth::Mixture(parts.iter().map(|(w, c)| (w * s, *c)).collect()),
        Truth::Density(_) => {
            return Err(Error::InvalidArgument(
                "studies need a pure state or an explicit mixture".into(),
            ))
        }
    })
}

fn validate(cfg: &StudyConfig) -> Result<()> {
    if cfg.replicas == 0 {
        return Err(Error::InvalidArgument("at least one replica is required".into()));
    }
    if !(cfg.n_events > 0.0 && cfg.n_events.is_finite()) {
        return Err(Error::InvalidArgument(format!("event target {} must be positive", cfg.n_events)));
    }
    if cfg.f_grid.is_empty() || cfg.f_grid.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Error::InvalidArgument("volume fractions must lie in (0, 1]".into()));
    }
    if !(cfg.jitter_deg >= 0.0 && cfg.jitter_deg.is_finite()) {
        return Err(Error::InvalidArgument(format!("jitter {} must be >= 0", cfg.jitter_deg)));
    }
    if cfg.components == 0 || cfg.components > crate::DIM {
        return Err(Error::InvalidArgument(format!("component count {} out of range", cfg.components)));
    }
    Ok(())
}

fn failed(replica: usize, f: f64, n_events: u64) -> StudyRow {
    StudyRow {
        replica,
        f,
        n_events,
        fidelity: f64::NAN,
        info_fidelity: f64::NAN,
        chi2_stat: f64::NAN,
        converged: false,
        iterations: 0,
    }
}

fn reconstruct_row(cfg: &StudyConfig, target: &Target, replica: usize, f: f64, obs: &Observations, n: u64, seed: u64) -> Result<StudyRow> {
    let p = &cfg.protocol;
    match target {
        Target::Pure(truth) if cfg.components == 1 => {
            let r = match cfg.method {
                Method::Lsm => lsm_reconstruct(p, obs, None, &cfg.solver)?,
                Method::Mlm => mlm_reconstruct(p, obs, None, &cfg.solver)?,
            };
            // thinning shortens exposures; rates, and so the truth vector, stay put
            let fh = info_fidelity_at(p, obs, truth, &r.estimate, cfg.solver.reg_eps)?;
            Ok(StudyRow {
                replica,
                f,
                n_events: n,
                fidelity: fidelity_pure(truth, &r.estimate),
                info_fidelity: fh,
                chi2_stat: 4.0 * n as f64 * (1.0 - fh),
                converged: r.converged,
                iterations: r.iterations,
            })
        }
        _ => {
            let rho0 = match target {
                Target::Mixed(rho) => *rho,
                Target::Pure(c) => DensityMatrix::from_pure(c)?,
            };
            let m = separate_mixture(p, obs, cfg.components, seed, &cfg.mixture)?;
            Ok(StudyRow {
                replica,
                f,
                n_events: n,
                fidelity: fidelity_mixed(&rho0, &m.rho)?,
                info_fidelity: f64::NAN,
                chi2_stat: f64::NAN,
                converged: m.converged,
                iterations: m.iterations,
            })
        }
    }
}

/// Runs the study. Replicas run in parallel; rows come back ordered by
/// replica, then by `f` in grid order.
pub fn monte_carlo_study(cfg: &StudyConfig) -> Result<StudyResult> {
    validate(cfg)?;
    let truth = scaled_truth(&cfg.protocol, &cfg.truth, cfg.n_events)?;
    let target = match &truth {
        Truth::Pure(c) => Target::Pure(*c),
        other => Target::Mixed(other.density()?),
    };
    let rows: Vec<StudyRow> = (0..cfg.replicas)
        .into_par_iter()
        .flat_map_iter(|replica| {
            let seed = derive_seed(cfg.seed, REPLICA_STREAM, replica as u64);
            let full = sample_with_instrument_error(&cfg.protocol, &truth, cfg.jitter_deg, seed);
            let target = &target;
            cfg.f_grid.iter().enumerate().map(move |(j, &f)| {
                let Ok(full) = full.as_ref() else {
                    return failed(replica, f, 0);
                };
                let thin_seed = derive_seed(seed, THIN_STREAM, j as u64);
                let Ok(d) = thin_counts(full, f, thin_seed) else {
                    return failed(replica, f, 0);
                };
                let n = d.total_events();
                let obs = Observations::from(&d);
                reconstruct_row(cfg, target, replica, f, &obs, n, thin_seed)
                    .unwrap_or_else(|_| failed(replica, f, n))
            })
        })
        .collect();
    let summary = summarize(&rows, &cfg.f_grid, cfg.n_events)?;
    Ok(StudyResult { rows, summary })
}

/// Per-`f` means, standard deviations and the statistical band.
pub fn summarize(rows: &[StudyRow], f_grid: &[f64], n_events: f64) -> Result<Vec<StudySummary>> {
    f_grid
        .iter()
        .map(|&f| {
            let at: Vec<&StudyRow> = rows.iter().filter(|r| r.f == f).collect();
            let ok: Vec<&&StudyRow> = at.iter().filter(|r| r.fidelity.is_finite()).collect();
            let fid: Vec<f64> = ok.iter().map(|r| r.fidelity).collect();
            let fh: Vec<f64> = ok.iter().map(|r| r.info_fidelity).filter(|x| x.is_finite()).collect();
            let chi: Vec<f64> = ok.iter().map(|r| r.chi2_stat).filter(|x| x.is_finite()).collect();
            let ns: Vec<f64> = ok.iter().map(|r| r.n_events as f64).collect();
            let band = info_fidelity_band(f * n_events, 0.05, 0.95)?;
            Ok(StudySummary {
                f,
                replicas: at.len(),
                failures: at.len() - ok.len(),
                n_events_mean: stats::mean(&ns),
                fidelity_mean: stats::mean(&fid),
                fidelity_sd: stats::std_dev(&fid),
                info_fidelity_mean: stats::mean(&fh),
                info_fidelity_sd: stats::std_dev(&fh),
                chi2_mean: stats::mean(&chi),
                band_lower: band.lower,
                band_mean: band.mean,
                band_upper: band.upper,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// Count expected from chi-square(5) for the same sample size.
    pub expected: f64,
}

/// Histogram of `4 n (1 - F_H)` values against the chi-square(5) law on
/// `bins` equal bins over `[0, max)`; values beyond `max` land in the last bin.
pub fn chi2_histogram(values: &[f64], bins: usize, max: f64) -> Result<Vec<HistogramBin>> {
    if bins == 0 || !(max > 0.0) {
        return Err(Error::InvalidArgument("histogram needs bins > 0 and max > 0".into()));
    }
    let law = ChiSquared::new(PHYSICAL_DOF as f64).expect("positive dof");
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n = finite.len() as f64;
    let width = max / bins as f64;
    Ok((0..bins)
        .map(|b| {
            let lower = b as f64 * width;
            let last = b + 1 == bins;
            let upper = if last { f64::INFINITY } else { lower + width };
            let count = finite.iter().filter(|&&v| v >= lower && v < upper).count();
            HistogramBin {
                lower,
                upper: if last { max } else { upper },
                count,
                expected: n * (law.cdf(upper) - law.cdf(lower)),
            }
        })
        .collect())
}
