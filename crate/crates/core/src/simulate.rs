//! Seeded Poissonian coincidence counts.
//!
//! Every random draw comes from `ChaCha8Rng` seeded with a `u64`. Poisson
//! variates use `rand_distr::Poisson` (multiplication method below mean 12,
//! transformed rejection above) and thinning uses `rand_distr::Binomial`.
//! Independent streams (replicas, thinning, plate jitter) get child seeds from
//! [`derive_seed`], so runs reproduce exactly from the top-level seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{Error, Result};
use crate::protocol::TomographyProtocol;
use crate::state::{density_from_components, DensityMatrix, StateVector};

/// Observed coincidence counts with their exposures.
#[derive(Clone, Debug, PartialEq)]
pub struct CountData {
    counts: Vec<u64>,
    exposures: Vec<f64>,
    protocol_hash: Option<String>,
    seed: Option<u64>,
}

impl CountData {
    pub fn new(counts: Vec<u64>, exposures: Vec<f64>) -> Result<Self> {
        if counts.is_empty() || counts.len() != exposures.len() {
            return Err(Error::InvalidArgument(format!(
                "{} counts with {} exposures",
                counts.len(),
                exposures.len()
            )));
        }
        if let Some(t) = exposures.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidArgument(format!("exposure {t} must be positive")));
        }
        Ok(CountData {
            counts,
            exposures,
            protocol_hash: None,
            seed: None,
        })
    }

    /// Noiseless data `k = lambda t` rounded to the nearest integer.
    pub fn expected(p: &TomographyProtocol, truth: &Truth) -> Self {
        let counts = expected_counts(p, truth).iter().map(|m| m.round() as u64).collect();
        CountData::new(counts, p.exposures().to_vec())
            .expect("protocol exposures are valid")
            .with_origin(p.content_hash(), None)
    }

    /// Records which protocol and seed produced the data.
    pub fn with_origin(mut self, protocol_hash: String, seed: Option<u64>) -> Self {
        self.protocol_hash = Some(protocol_hash);
        self.seed = seed;
        self
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn counts_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&k| k as f64).collect()
    }

    pub fn exposures(&self) -> &[f64] {
        &self.exposures
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total_events(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn protocol_hash(&self) -> Option<&str> {
        self.protocol_hash.as_deref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Errors unless the data has one row per protocol setting.
    pub fn check_matches(&self, p: &TomographyProtocol) -> Result<()> {
        if self.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "counts have {} rows, protocol has {}",
                self.len(),
                p.len()
            )));
        }
        Ok(())
    }
}

/// The state that generates events.
#[derive(Clone, Debug, PartialEq)]
pub enum Truth {
    /// Un-normalized pure state; its norm sets the total rate.
    Pure(StateVector),
    /// Incoherent sum of un-normalized components, each with a positive weight.
    Mixture(Vec<(f64, StateVector)>),
    /// Unit-trace density matrix; rates are `X rho X^dagger`.
    Density(DensityMatrix),
}

impl Truth {
    /// Event rates `lambda_nu` (Hz) of every protocol row.
    pub fn rates(&self, p: &TomographyProtocol) -> Vec<f64> {
        match self {
            Truth::Pure(c) => p.intensities(c),
            Truth::Mixture(parts) => {
                let mut out = vec![0.0; p.len()];
                for (w, c) in parts {
                    for (o, l) in out.iter_mut().zip(p.intensities(c)) {
                        *o += w * l;
                    }
                }
                out
            }
            Truth::Density(rho) => p.mixed_intensities(rho.matrix()),
        }
    }

    /// Unit-trace density matrix whose rates are proportional to [`Truth::rates`].
    pub fn density(&self) -> Result<DensityMatrix> {
        match self {
            Truth::Pure(c) => DensityMatrix::from_pure(c),
            Truth::Mixture(parts) => {
                self.validate()?;
                let scaled: Vec<StateVector> = parts.iter().map(|(w, c)| c.scale(w.sqrt())).collect();
                density_from_components(&scaled)
            }
            Truth::Density(rho) => Ok(*rho),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Truth::Pure(c) if !c.is_finite() => {
                Err(Error::InvalidArgument("state components must be finite".into()))
            }
            Truth::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(Error::InvalidArgument("mixture has no components".into()));
                }
                if let Some((w, _)) = parts.iter().find(|(w, _)| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::InvalidArgument(format!("mixture weight {w} must be positive")));
                }
                if parts.iter().any(|(_, c)| !c.is_finite()) {
                    return Err(Error::InvalidArgument("state components must be finite".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Mean counts `lambda_nu t_nu`.
pub fn expected_counts(p: &TomographyProtocol, truth: &Truth) -> Vec<f64> {
    truth
        .rates(p)
        .iter()
        .zip(p.exposures())
        .map(|(l, t)| l * t)
        .collect()
}

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `stream`, index `index` under `seed`.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream) ^ index)
}

/// Stream tag for plate-jitter draws.
pub const JITTER_STREAM: u64 = 0x6a69_7474;
/// Stream tag for thinning draws.
pub const THIN_STREAM: u64 = 0x7468_696e;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn poisson_draws(means: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
    means
        .iter()
        .map(|&m| {
            if m == 0.0 {
                return Ok(0);
            }
            let d = Poisson::new(m)
                .map_err(|e| Error::InvalidArgument(format!("Poisson mean {m}: {e}")))?;
            Ok(d.sample(rng) as u64)
        })
        .collect()
}

/// `k_nu ~ Poisson(lambda_nu t_nu)` independently.
pub fn sample_counts(p: &TomographyProtocol, truth: &Truth, seed: u64) -> Result<CountData> {
    truth.validate()?;
    let mut rng = rng_from_seed(seed);
    let counts = poisson_draws(&expected_counts(p, truth), &mut rng)?;
    Ok(CountData::new(counts, p.exposures().to_vec())?.with_origin(p.content_hash(), Some(seed)))
}

/// Counts of an incoherent mixture; summed intensities, no per-component tags.
pub fn mixture_counts(
    p: &TomographyProtocol,
    components: &[(f64, StateVector)],
    seed: u64,
) -> Result<CountData> {
    sample_counts(p, &Truth::Mixture(components.to_vec()), seed)
}

/// Keeps each event with probability `f`; exposures become `f t`.
pub fn thin_counts(d: &CountData, f: f64, seed: u64) -> Result<CountData> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidArgument(format!("thinning fraction {f} outside (0, 1]")));
    }
    let mut out = d.clone();
    if f == 1.0 {
        return Ok(out);
    }
    let mut rng = rng_from_seed(seed);
    for k in out.counts.iter_mut() {
        *k = Binomial::new(*k, f).expect("valid probability").sample(&mut rng);
    }
    for t in out.exposures.iter_mut() {
        *t *= f;
    }
    Ok(out)
}

/// Samples counts from the protocol rebuilt with Gaussian plate-angle errors
/// (standard deviation `jitter_deg`). Plates shared by every row are offset
/// once. The returned data still refers to the nominal protocol; with zero
/// jitter it equals [`sample_counts`] for the same seed.
pub fn sample_with_instrument_error(
    p: &TomographyProtocol,
    truth: &Truth,
    jitter_deg: f64,
    seed: u64,
) -> Result<CountData> {
    if !(jitter_deg >= 0.0 && jitter_deg.is_finite()) {
        return Err(Error::InvalidArgument(format!("jitter {jitter_deg} must be >= 0")));
    }
    let mut jrng = rng_from_seed(derive_seed(seed, JITTER_STREAM, 0));
    let actual = p.jittered(jitter_deg.to_radians(), &mut jrng)?;
    let d = sample_counts(&actual, truth, seed)?;
    Ok(d.with_origin(p.content_hash(), Some(seed)))
}

/// `c` rescaled so that the protocol expects `n_events` in total.
pub fn scale_to_events(p: &TomographyProtocol, c: &StateVector, n_events: f64) -> Result<StateVector> {
    let total: f64 = expected_counts(p, &Truth::Pure(*c)).iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateState("state produces no events".into()));
    }
    Ok(c.scale((n_events / total).sqrt()))
}

/// Components rescaled so each expects `events_each` events under `p`,
/// paired with unit weights.
pub fn equal_event_mixture(
    p: &TomographyProtocol,
    components: &[StateVector],
    events_each: f64,
) -> Result<Vec<(f64, StateVector)>> {
    components
        .iter()
        .map(|c| Ok((1.0, scale_to_events(p, c, events_each)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{build_protocol1, default_protocol2};

    #[test]
    fn zero_rate_gives_zero_counts() {
        let p = build_protocol1(10.0).unwrap();
        let d = sample_counts(&p, &Truth::Pure(StateVector::psi1().scale(30.0)), 1).unwrap();
        // rows 2..5 never see |2,0>
        assert!(d.counts()[1..5].iter().all(|&k| k == 0));
        assert!(d.counts()[0] > 0);
    }

    #[test]
    fn same_seed_same_counts() {
        let p = default_protocol2(1.0).unwrap();
        let t = Truth::Pure(StateVector::from_real(3.0, 4.0, 5.0));
        let a = sample_counts(&p, &t, 77).unwrap();
        assert_eq!(a, sample_counts(&p, &t, 77).unwrap());
        assert_ne!(a.counts(), sample_counts(&p, &t, 78).unwrap().counts());
        assert_eq!(a.seed(), Some(77));
        assert_eq!(a.protocol_hash(), Some(p.content_hash().as_str()));
    }

    #[test]
    fn total_expected_is_exposure_times_summed_rates() {
        let p = build_protocol1(4.0).unwrap();
        let c = StateVector::new(
            crate::linalg::c(0.3, 0.1),
            crate::linalg::c(-0.5, 0.2),
            crate::linalg::c(0.6, 0.0),
        )
        .normalize()
        .unwrap();
        let total: f64 = expected_counts(&p, &Truth::Pure(c)).iter().sum();
        let direct: f64 = 4.0 * p.intensities(&c).iter().sum::<f64>();
        assert!((total - direct).abs() < 1e-14);
    }

    #[test]
    fn thinning() {
        let d = CountData::new(vec![1000; 4], vec![2.0; 4]).unwrap();
        assert_eq!(thin_counts(&d, 1.0, 3).unwrap(), d);
        let t = thin_counts(&d, 0.5, 3).unwrap();
        assert_eq!(t.exposures(), &[1.0; 4]);
        assert!(t.counts().iter().all(|&k| k > 400 && k < 600));
        assert!(t.counts().iter().any(|&k| k != 500));
        for f in [0.0, -0.1, 1.5, f64::NAN] {
            assert!(thin_counts(&d, f, 3).is_err());
        }
    }

    #[test]
    fn zero_jitter_matches_plain_sampling() {
        let p = default_protocol2(1.0).unwrap();
        let t = Truth::Pure(StateVector::from_real(3.0, 4.0, 5.0));
        assert_eq!(
            sample_with_instrument_error(&p, &t, 0.0, 9).unwrap(),
            sample_counts(&p, &t, 9).unwrap()
        );
        assert!(sample_with_instrument_error(&p, &t, -1.0, 9).is_err());
    }

    #[test]
    fn single_component_mixture_equals_pure() {
        let p = build_protocol1(1.0).unwrap();
        let c = StateVector::from_real(5.0, 1.0, -2.0);
        assert_eq!(
            mixture_counts(&p, &[(1.0, c)], 5).unwrap().counts(),
            sample_counts(&p, &Truth::Pure(c), 5).unwrap().counts()
        );
        assert!(mixture_counts(&p, &[(0.0, StateVector::psi1())], 5).is_err());
    }

    #[test]
    fn symmetric_mixture_balances_rows_one_and_three() {
        let p = build_protocol1(1.0).unwrap();
        let m = Truth::Mixture(vec![(0.5, StateVector::psi1()), (0.5, StateVector::psi3())]);
        let e = expected_counts(&p, &m);
        assert!((e[0] - e[2]).abs() < 1e-15 && e[0] > 0.0);
    }

    #[test]
    fn scaling_hits_target() {
        let p = default_protocol2(1.0).unwrap();
        let c = scale_to_events(&p, &StateVector::from_real(1.0, 2.0, 3.0), 1e4).unwrap();
        let total: f64 = expected_counts(&p, &Truth::Pure(c)).iter().sum();
        assert!((total - 1e4).abs() < 1e-9);
        assert!(scale_to_events(&p, &StateVector::zero(), 1.0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let s: std::collections::HashSet<u64> =
            (0..1000).map(|i| derive_seed(42, THIN_STREAM, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(42, THIN_STREAM, 0), derive_seed(42, JITTER_STREAM, 0));
    }
}
