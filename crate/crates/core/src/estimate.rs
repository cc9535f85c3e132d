//! Root estimation of the state vector from coincidence counts.
//!
//! Both estimators work directly on amplitudes. The least-squares method
//! alternates between borrowing phases from the current model, `arg(X c)`,
//! and solving `c = (X^dagger X)^-1 X^dagger M` with measured moduli
//! `|M| = sqrt(k / t)`. The maximum-likelihood method iterates the likelihood
//! equation `I^-1 J(c) c = c`, where `I = sum t X^dagger X` is fixed by the
//! protocol and `J = sum (k / lambda) X^dagger X` depends on the estimate.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat3, CRow3, CVec3};
use crate::protocol::{TomographyProtocol, SINGULAR_RTOL};
use crate::simulate::{self, CountData, Truth};
use crate::state::StateVector;

/// Counts and exposures as reals. Fractional counts arise when events are
/// split between mixture components and in noiseless oracle data.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    pub counts: Vec<f64>,
    pub exposures: Vec<f64>,
}

impl Observations {
    pub fn new(counts: Vec<f64>, exposures: Vec<f64>) -> Result<Self> {
        if counts.is_empty() || counts.len() != exposures.len() {
            return Err(Error::InvalidArgument(format!(
                "{} counts with {} exposures",
                counts.len(),
                exposures.len()
            )));
        }
        if counts.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::InvalidArgument("counts must be finite and >= 0".into()));
        }
        if exposures.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument("exposures must be positive".into()));
        }
        Ok(Observations { counts, exposures })
    }

    /// Exact means `k = lambda t`, no rounding.
    pub fn noiseless(p: &TomographyProtocol, truth: &Truth) -> Self {
        Observations {
            counts: simulate::expected_counts(p, truth),
            exposures: p.exposures().to_vec(),
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    fn check_matches(&self, p: &TomographyProtocol) -> Result<()> {
        if self.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "{} count rows for a protocol of {} rows",
                self.len(),
                p.len()
            )));
        }
        Ok(())
    }
}

impl From<&CountData> for Observations {
    fn from(d: &CountData) -> Self {
        Observations {
            counts: d.counts_f64(),
            exposures: d.exposures().to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Relative change (LSM) or fixed-point residual (MLM) that ends iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Intensity floor `eps * sum(lambda) / rows` protecting `k / lambda`.
    pub reg_eps: f64,
    /// Weight kept on the previous MLM iterate, in `[0, 1)`.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 10_000,
            reg_eps: 1e-12,
            damping: 0.0,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.reg_eps > 0.0) {
            return Err(Error::InvalidArgument(
                "solver needs tol > 0, max_iter > 0 and reg_eps > 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument(format!(
                "damping {} outside [0, 1)",
                self.damping
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lsm,
    Mlm,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionResult {
    pub method: Method,
    /// Gauge-fixed, un-normalized estimate (units 1/sqrt(s)).
    pub estimate: StateVector,
    /// Unit-norm copy of `estimate`.
    pub normalized: StateVector,
    pub iterations: usize,
    pub converged: bool,
    /// `sum k ln(lambda t) - lambda t`, constant terms dropped.
    pub loglik: f64,
    /// Final relative step (LSM) or fixed-point residual `|I^-1 J c - c| / |c|` (MLM).
    pub residual: f64,
    /// Total observed events, `sum k`.
    pub total_counts: f64,
    /// Total predicted events, `sum lambda t`.
    pub total_predicted: f64,
}

/// Measured amplitude moduli `sqrt(k / t)`.
pub fn amplitude_estimates(obs: &Observations) -> Vec<f64> {
    obs.counts
        .iter()
        .zip(&obs.exposures)
        .map(|(k, t)| (k / t).sqrt())
        .collect()
}

fn rows(p: &TomographyProtocol) -> Vec<CRow3> {
    p.rows().iter().map(|r| r.amplitudes).collect()
}

fn apply(x: &CRow3, v: &CVec3) -> Complex64 {
    x[0] * v[0] + x[1] * v[1] + x[2] * v[2]
}

/// `sum w X^dagger X`.
fn gram(x: &[CRow3], w: &[f64]) -> CMat3 {
    let mut m = CMat3::zeros();
    for (row, &wi) in x.iter().zip(w) {
        if wi == 0.0 {
            continue;
        }
        for j in 0..3 {
            let a = row[j].conj() * wi;
            for s in 0..3 {
                m[(j, s)] += a * row[s];
            }
        }
    }
    m
}

/// Inverse of a Hermitian positive definite matrix, or an incompleteness
/// error when it is numerically singular.
pub(crate) fn checked_inverse(m: &CMat3) -> Result<CMat3> {
    let (ev, _) = linalg::hermitian_eigen(m);
    if !(ev[0] > SINGULAR_RTOL * ev[2]) {
        return Err(Error::IncompleteProtocol(format!(
            "information matrix is singular (eigenvalues {:.3e}, {:.3e}, {:.3e})",
            ev[0], ev[1], ev[2]
        )));
    }
    let inv = linalg::hermitian_part(m)
        .try_inverse()
        .ok_or_else(|| Error::IncompleteProtocol("information matrix is singular".into()))?;
    Ok(linalg::hermitian_part(&inv))
}

/// Model intensities `|X c|^2` with the zero-intensity floor applied.
pub(crate) fn regularized_intensities(x: &[CRow3], v: &CVec3, reg_eps: f64) -> Vec<f64> {
    let raw: Vec<f64> = x.iter().map(|r| apply(r, v).norm_sqr()).collect();
    let floor = reg_eps * raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|l| l.max(floor)).collect()
}

/// Poisson log-likelihood of the observations under `c`, constants dropped.
pub fn log_likelihood(p: &TomographyProtocol, obs: &Observations, c: &StateVector) -> f64 {
    let x = rows(p);
    let lambda = regularized_intensities(&x, c.as_vector(), 1e-300);
    lambda
        .iter()
        .zip(&obs.counts)
        .zip(&obs.exposures)
        .map(|((&l, &k), &t)| {
            let m = l * t;
            if k > 0.0 { k * m.ln() - m } else { -m }
        })
        .sum()
}

fn predicted_total(x: &[CRow3], v: &CVec3, t: &[f64]) -> f64 {
    x.iter().zip(t).map(|(r, ti)| apply(r, v).norm_sqr() * ti).sum()
}

fn rel_change(new: &CVec3, old: &CVec3) -> f64 {
    let n = new.norm();
    if n == 0.0 {
        return 0.0;
    }
    (new - old).norm() / n
}

fn finish(
    method: Method,
    p: &TomographyProtocol,
    obs: &Observations,
    v: CVec3,
    iterations: usize,
    converged: bool,
    residual: f64,
) -> Result<ReconstructionResult> {
    let estimate = StateVector::from_vector(v).gauge_fixed();
    let normalized = estimate.normalize()?;
    let x = rows(p);
    Ok(ReconstructionResult {
        method,
        estimate,
        normalized,
        iterations,
        converged,
        loglik: log_likelihood(p, obs, &estimate),
        residual,
        total_counts: obs.total(),
        total_predicted: predicted_total(&x, &v, &obs.exposures),
    })
}

fn check_inputs(p: &TomographyProtocol, obs: &Observations, opts: &SolverOptions) -> Result<()> {
    opts.validate()?;
    obs.check_matches(p)?;
    if !(obs.total() > 0.0) {
        return Err(Error::DegenerateState("no events were observed".into()));
    }
    Ok(())
}

/// Hermitian `R` minimizing `sum (X R X^dagger - k / t)^2` over the nine
/// real moment parameters, returned as `sqrt(r_max) v_max`. `None` when the
/// protocol does not fix every moment or the data carry no positive part.
fn moment_start(x: &[CRow3], obs: &Observations) -> Option<CVec3> {
    // basis of Hermitian 3x3 matrices: diagonal, then symmetric and
    // antisymmetric off-diagonal pairs
    let mut basis = Vec::with_capacity(9);
    for j in 0..3 {
        basis.push(CMat3::from_fn(|r, s| if r == j && s == j { c(1.0, 0.0) } else { c(0.0, 0.0) }));
    }
    for (j, k) in [(0, 1), (0, 2), (1, 2)] {
        basis.push(CMat3::from_fn(|r, s| if (r, s) == (j, k) || (r, s) == (k, j) { c(1.0, 0.0) } else { c(0.0, 0.0) }));
        basis.push(CMat3::from_fn(|r, s| {
            if (r, s) == (j, k) {
                c(0.0, 1.0)
            } else if (r, s) == (k, j) {
                c(0.0, -1.0)
            } else {
                c(0.0, 0.0)
            }
        }));
    }
    let a = DMatrix::from_fn(x.len(), 9, |nu, b| {
        let row = x[nu];
        let mut acc = c(0.0, 0.0);
        for r in 0..3 {
            for s in 0..3 {
                acc += row[r] * basis[b][(r, s)] * row[s].conj();
            }
        }
        acc.re
    });
    let y = DVector::from_iterator(x.len(), obs.counts.iter().zip(&obs.exposures).map(|(k, t)| k / t));
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(svd.singular_values.min() > SINGULAR_RTOL * smax) {
        return None;
    }
    let theta = svd.solve(&y, 0.0).ok()?;
    let mut m = CMat3::zeros();
    for (b, t) in basis.iter().zip(theta.iter()) {
        m += b * c(*t, 0.0);
    }
    let (ev, vecs) = linalg::hermitian_eigen(&m);
    if !(ev[2] > 0.0) {
        return None;
    }
    Some(vecs.column(2).into_owned() * c(ev[2].sqrt(), 0.0))
}

/// `sum (|M| - |X c|)^2`, the quantity the phase iteration decreases.
fn lsm_objective(x: &[CRow3], moduli: &[f64], v: &CVec3) -> f64 {
    x.iter().zip(moduli).map(|(r, m)| (m - apply(r, v).norm()).powi(2)).sum()
}

/// Phase iteration from `v`. Returns the final vector, iterations used,
/// convergence flag and last relative step.
fn phase_iterate(x: &[CRow3], inv: &CMat3, moduli: &[f64], mut v: CVec3, opts: &SolverOptions) -> (CVec3, usize, bool, f64) {
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        // X^dagger M
        let mut rhs = CVec3::zeros();
        for (row, &m) in x.iter().zip(moduli) {
            if m == 0.0 {
                continue;
            }
            let model = apply(row, &v);
            let phase = if model.norm() > 0.0 { model / model.norm() } else { c(1.0, 0.0) };
            let target = phase * m;
            for j in 0..3 {
                rhs[j] += row[j].conj() * target;
            }
        }
        let next = inv * rhs;
        residual = rel_change(&next, &v);
        v = next;
        if residual <= opts.tol {
            return (v, it, true, residual);
        }
    }
    (v, opts.max_iter, false, residual)
}

/// Deterministic starts: `(1, w^a, w^b) / sqrt3` for the cube roots of unity
/// `w`, beginning with `(1, 1, 1) / sqrt3`.
fn phase_pattern_starts() -> Vec<CVec3> {
    let w = |k: usize| Complex64::from_polar(1.0 / 3f64.sqrt(), k as f64 * std::f64::consts::TAU / 3.0);
    let mut out = Vec::with_capacity(9);
    for a in 0..3 {
        for b in 0..3 {
            out.push(CVec3::new(w(0), w(a), w(b)));
        }
    }
    out
}

type Run = (CVec3, usize, bool, f64);

/// Phase-iteration runs from every default start, each with its residual
/// sum of squares, in start order.
fn lsm_runs(x: &[CRow3], inv: &CMat3, moduli: &[f64], obs: &Observations, opts: &SolverOptions) -> Vec<(Run, f64)> {
    phase_pattern_starts()
        .into_iter()
        .chain(moment_start(x, obs))
        .map(|v| {
            let run = phase_iterate(x, inv, moduli, v, opts);
            let score = lsm_objective(x, moduli, &run.0);
            (run, score)
        })
        .collect()
}

fn check_start(v: &CVec3) -> Result<()> {
    if !(v.norm() > 0.0) || v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument("initial state must be finite and nonzero".into()));
    }
    Ok(())
}

/// Least-squares estimate with iterated phases. The phase iteration has
/// spurious fixed points, so without `init` it runs from nine phase patterns
/// `(1, w^a, w^b) / sqrt3` (the first is `(1, 1, 1) / sqrt3`) and, when the
/// protocol fixes all moments, from the principal vector of the linear
/// moment inversion; the run with the smallest residual sum of squares wins.
pub fn lsm_reconstruct(
    p: &TomographyProtocol,
    obs: &Observations,
    init: Option<&StateVector>,
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    check_inputs(p, obs, opts)?;
    let x = rows(p);
    let inv = checked_inverse(&gram(&x, &vec![1.0; x.len()]))?;
    let moduli = amplitude_estimates(obs);
    let (v, iterations, converged, residual) = match init {
        Some(s) => {
            check_start(s.as_vector())?;
            phase_iterate(&x, &inv, &moduli, *s.as_vector(), opts)
        }
        None => {
            let runs = lsm_runs(&x, &inv, &moduli, obs, opts);
            runs.into_iter()
                .fold(None::<(Run, f64)>, |best, r| match best {
                    Some(b) if b.1 <= r.1 => Some(b),
                    _ => Some(r),
                })
                .expect("at least one start")
                .0
        }
    };
    finish(Method::Lsm, p, obs, v, iterations, converged, residual)
}

/// One application of the likelihood operator, `I^-1 J(c) c`.
fn likelihood_step(
    x: &[CRow3],
    i_inv: &CMat3,
    counts: &[f64],
    v: &CVec3,
    reg_eps: f64,
) -> CVec3 {
    let lambda = regularized_intensities(x, v, reg_eps);
    // J c = sum (k / lambda) X^dagger (X c)
    let mut jc = CVec3::zeros();
    for ((row, &k), &l) in x.iter().zip(counts).zip(&lambda) {
        if k == 0.0 {
            continue;
        }
        let m = apply(row, v) * (k / l);
        for j in 0..3 {
            jc[j] += row[j].conj() * m;
        }
    }
    i_inv * jc
}

/// Fixed-point iteration shared by the pure-state and mixture estimators.
/// Each iterate is rescaled so that `sum lambda t = sum k`; the operator maps
/// `s c` to `T(c) / s`, so without this the norm error flips sign forever
/// instead of decaying. Returns the final vector, iterations used,
/// convergence flag and residual.
pub(crate) fn mlm_iterate(
    x: &[CRow3],
    i_inv: &CMat3,
    obs: &Observations,
    start: CVec3,
    opts: &SolverOptions,
) -> (CVec3, usize, bool, f64) {
    let total = obs.total();
    let mut v = balance_norm(x, start, &obs.exposures, total);
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = likelihood_step(x, i_inv, &obs.counts, &v, opts.reg_eps);
        residual = rel_change(&next, &v);
        if residual <= opts.tol {
            return (next, it, true, residual);
        }
        let next = if opts.damping > 0.0 {
            next * c(1.0 - opts.damping, 0.0) + v * c(opts.damping, 0.0)
        } else {
            next
        };
        v = balance_norm(x, next, &obs.exposures, total);
    }
    (v, opts.max_iter, false, residual)
}

/// Rescales `v` so the predicted total equals the observed total, which
/// the likelihood equation enforces at its fixed point.
pub(crate) fn balance_norm(x: &[CRow3], v: CVec3, t: &[f64], total: f64) -> CVec3 {
    let predicted = predicted_total(x, &v, t);
    if predicted > 0.0 && total > 0.0 {
        v * c((total / predicted).sqrt(), 0.0)
    } else {
        v
    }
}

/// Maximum-likelihood estimate. With `init` the iteration starts there.
/// Otherwise it starts from every distinct endpoint of the least-squares
/// multi-start and keeps the largest likelihood; when the least-squares
/// stage fails on degenerate data a seeded random vector is used.
pub fn mlm_reconstruct(
    p: &TomographyProtocol,
    obs: &Observations,
    init: Option<&StateVector>,
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    check_inputs(p, obs, opts)?;
    let x = rows(p);
    let i_inv = checked_inverse(&gram(&x, &obs.exposures))?;
    let starts: Vec<CVec3> = match init {
        Some(s) => vec![*s.as_vector()],
        None => {
            let inv = checked_inverse(&gram(&x, &vec![1.0; x.len()]))?;
            let moduli = amplitude_estimates(obs);
            let mut distinct: Vec<CVec3> = Vec::new();
            for ((v, ..), _) in lsm_runs(&x, &inv, &moduli, obs, opts) {
                let sv = StateVector::from_vector(v);
                let fresh = sv.norm() > 0.0
                    && distinct.iter().all(|d| {
                        crate::state::fidelity_pure(&StateVector::from_vector(*d), &sv) < 1.0 - 1e-6
                    });
                if fresh {
                    distinct.push(v);
                }
            }
            if distinct.is_empty() {
                distinct.push(*random_state(&mut simulate::rng_from_seed(0)).as_vector());
            }
            distinct
        }
    };
    let mut best: Option<(Run, f64)> = None;
    for start in starts {
        check_start(&start)?;
        let run = mlm_iterate(&x, &i_inv, obs, start, opts);
        let ll = log_likelihood(p, obs, &StateVector::from_vector(run.0));
        if best.as_ref().is_none_or(|b| ll > b.1) {
            best = Some((run, ll));
        }
    }
    let ((v, iterations, converged, residual), _) = best.expect("at least one start");
    finish(Method::Mlm, p, obs, v, iterations, converged, residual)
}

/// Fixed-point residual `|I^-1 J c - c| / |c|` of a candidate estimate.
pub fn fixed_point_residual(
    p: &TomographyProtocol,
    obs: &Observations,
    c: &StateVector,
    reg_eps: f64,
) -> Result<f64> {
    obs.check_matches(p)?;
    let x = rows(p);
    let i_inv = checked_inverse(&gram(&x, &obs.exposures))?;
    let next = likelihood_step(&x, &i_inv, &obs.counts, c.as_vector(), reg_eps);
    Ok(rel_change(&next, c.as_vector()) * next.norm() / c.norm())
}

/// Unit vector with independent standard complex Gaussian components,
/// uniformly distributed on the sphere.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R) -> StateVector {
    loop {
        let z = Vector3::from_fn(|_, _| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            c(re, im)
        });
        if z.norm() > 1e-6 {
            return StateVector::from_vector(z / c(z.norm(), 0.0));
        }
    }
}
