//! Quasi-Bayesian separation of a mixed state into pure components.
//!
//! Each observed count is shared between the components in proportion to
//! their current model intensities, `k_m = k lambda_m / sum(lambda)`, and
//! every component is then re-estimated by the pure-state likelihood
//! iteration on its share. The pair of steps repeats until the assembled
//! density matrix stops moving. The components themselves are only fixed up
//! to a unitary mixing; the density matrix is not.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{self, Observations, SolverOptions};
use crate::linalg::{CMat3, CRow3, CVec3};
use crate::protocol::TomographyProtocol;
use crate::simulate::rng_from_seed;
use crate::state::{density_from_components, DensityMatrix, StateVector};
use crate::DIM;

#[derive(Clone, Debug, Serialize)]
pub struct MixtureResult {
    /// Un-normalized components, gauge-fixed, heaviest first.
    pub components: Vec<StateVector>,
    /// `|c_m|^2 / sum |c|^2`.
    pub weights: Vec<f64>,
    pub rho: DensityMatrix,
    /// Eigen-decomposition of `rho`, heaviest first.
    pub principal: Vec<(f64, StateVector)>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest entrywise change of `rho` in the last iteration.
    pub residual: f64,
    pub loglik: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixtureOptions {
    /// Options of the per-component likelihood iteration.
    pub inner: SolverOptions,
    /// Largest entrywise change of `rho` that ends the outer iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MixtureOptions {
    fn default() -> Self {
        MixtureOptions {
            inner: SolverOptions {
                max_iter: 50,
                ..SolverOptions::default()
            },
            tol: 1e-11,
            max_iter: 20_000,
        }
    }
}

fn intensities(x: &[CRow3], v: &CVec3) -> Vec<f64> {
    x.iter()
        .map(|r| (r[0] * v[0] + r[1] * v[1] + r[2] * v[2]).norm_sqr())
        .collect()
}

fn assemble(components: &[CVec3]) -> Result<DensityMatrix> {
    let states: Vec<StateVector> = components.iter().map(|v| StateVector::from_vector(*v)).collect();
    density_from_components(&states)
}

/// Separates `n_components` pure components. Random starting components are
/// drawn from `seed`. One component reduces to [`estimate::mlm_reconstruct`].
pub fn separate_mixture(
    p: &TomographyProtocol,
    obs: &Observations,
    n_components: usize,
    seed: u64,
    opts: &MixtureOptions,
) -> Result<MixtureResult> {
    if n_components == 0 || n_components > DIM {
        return Err(Error::InvalidArgument(format!(
            "component count {n_components} must lie in 1..={DIM}"
        )));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::InvalidArgument("mixture needs tol > 0 and max_iter > 0".into()));
    }
    if obs.len() != p.len() {
        return Err(Error::InvalidArgument(format!(
            "{} count rows for a protocol of {} rows",
            obs.len(),
            p.len()
        )));
    }
    let total = obs.total();
    if !(total > 0.0) {
        return Err(Error::DegenerateState("no events were observed".into()));
    }
    if n_components == 1 {
        let r = estimate::mlm_reconstruct(p, obs, None, &opts.inner_full())?;
        let rho = DensityMatrix::from_pure(&r.estimate)?;
        return Ok(MixtureResult {
            components: vec![r.estimate],
            weights: vec![1.0],
            principal: rho.principal_components(),
            rho,
            iterations: r.iterations,
            converged: r.converged,
            residual: r.residual,
            loglik: r.loglik,
        });
    }

    let x: Vec<CRow3> = p.rows().iter().map(|r| r.amplitudes).collect();
    let i_inv = estimate::checked_inverse(&p.with_exposures(obs.exposures.clone())?.fisher_information())?;
    let mut rng = rng_from_seed(seed);
    let mut comps: Vec<CVec3> = (0..n_components)
        .map(|_| {
            let v = *estimate::random_state(&mut rng).as_vector();
            estimate::balance_norm(&x, v, &obs.exposures, total / n_components as f64)
        })
        .collect();
    let mut rho = assemble(&comps)?;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = opts.max_iter;
    for it in 1..=opts.max_iter {
        let lambdas: Vec<Vec<f64>> = comps.iter().map(|v| intensities(&x, v)).collect();
        let lambda_tot: Vec<f64> = (0..x.len()).map(|nu| lambdas.iter().map(|l| l[nu]).sum()).collect();
        let floor = opts.inner.reg_eps * lambda_tot.iter().sum::<f64>() / x.len() as f64;
        for (m, v) in comps.iter_mut().enumerate() {
            let share: Vec<f64> = obs
                .counts
                .iter()
                .zip(&lambdas[m])
                .zip(&lambda_tot)
                .map(|((&k, &l), &lt)| if k == 0.0 { 0.0 } else { k * l / lt.max(floor) })
                .collect();
            let part = Observations {
                counts: share,
                exposures: obs.exposures.clone(),
            };
            if !(part.total() > 0.0) {
                continue;
            }
            *v = estimate::mlm_iterate(&x, &i_inv, &part, *v, &opts.inner).0;
        }
        let next = assemble(&comps)?;
        residual = next.max_entry_distance(&rho);
        rho = next;
        if residual <= opts.tol {
            converged = true;
            iterations = it;
            break;
        }
    }

    let mut parts: Vec<StateVector> = comps
        .iter()
        .map(|v| StateVector::from_vector(*v).gauge_fixed())
        .collect();
    parts.sort_by(|a, b| b.norm_sqr().total_cmp(&a.norm_sqr()));
    let norm_total: f64 = parts.iter().map(|v| v.norm_sqr()).sum();
    let lambda_tot: Vec<f64> = (0..x.len())
        .map(|nu| parts.iter().map(|v| intensities(&x[nu..=nu], v.as_vector())[0]).sum())
        .collect();
    let loglik = lambda_tot
        .iter()
        .zip(&obs.counts)
        .zip(&obs.exposures)
        .map(|((&l, &k), &t)| {
            let m = l * t;
            if k > 0.0 { k * m.max(f64::MIN_POSITIVE).ln() - m } else { -m }
        })
        .sum();
    Ok(MixtureResult {
        weights: parts.iter().map(|v| v.norm_sqr() / norm_total).collect(),
        components: parts,
        principal: rho.principal_components(),
        rho,
        iterations,
        converged,
        residual,
        loglik,
    })
}

impl MixtureOptions {
    fn inner_full(&self) -> SolverOptions {
        SolverOptions {
            max_iter: SolverOptions::default().max_iter.max(self.inner.max_iter),
            ..self.inner.clone()
        }
    }
}

/// `sum_m X rho_m X^dagger` for un-normalized components; the predicted
/// intensities of a mixture.
pub fn mixture_intensities(p: &TomographyProtocol, components: &[StateVector]) -> Vec<f64> {
    let mut m = CMat3::zeros();
    for v in components {
        m += v.outer();
    }
    p.mixed_intensities(&m)
}
