//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails.

use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use qutrit::estimate::{lsm_reconstruct, mlm_reconstruct, random_state, Observations, SolverOptions};
use qutrit::info::{completeness_check, InformationBundle, TOL_ZERO};
use qutrit::mixture::{separate_mixture, MixtureOptions};
use qutrit::optics::{apply_plate, qutrit_unitary, WavePlateSetting, HALF_WAVE};
use qutrit::poincare::{beta_angle, from_poincare, polarization_from_beta, to_poincare, PoincarePair};
use qutrit::protocol::{build_protocol1, default_protocol2, TomographyProtocol, PROTOCOL1_SETTINGS};
use qutrit::simulate::{derive_seed, equal_event_mixture, rng_from_seed, sample_counts, scale_to_events, Truth};
use qutrit::state::{fidelity_mixed, fidelity_pure, polarization_degree, StateVector};
use qutrit::stats::{info_fidelity_band, ks_test_chi2, mean, quantile};
use qutrit::study::{monte_carlo_study, StudyConfig};

type Outcome = Result<String, String>;

/// Name, check and time budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cx(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Moments of a pure state written out from their definitions.
fn moments(v: &StateVector) -> (f64, f64, f64, Complex64, Complex64, Complex64) {
    let [c1, c2, c3] = v.components();
    let s2 = 2f64.sqrt();
    (
        2.0 * c1.norm_sqr(),
        2.0 * c3.norm_sqr(),
        c2.norm_sqr(),
        c1.conj() * c2 * s2,
        c1.conj() * c3 * 2.0,
        c2.conj() * c3 * s2,
    )
}

fn moment_rows(v: &StateVector) -> [f64; 9] {
    let (a, b, c, d, e, f) = moments(v);
    [
        a / 4.0,
        c / 4.0,
        b / 4.0,
        (b + c + 2.0 * f.im) / 8.0,
        (b + c - 2.0 * f.re) / 8.0,
        (a + c - 2.0 * d.re) / 8.0,
        (a + c + 2.0 * d.im) / 8.0,
        (a + b - 2.0 * e.im) / 16.0,
        (a + b - 2.0 * e.re) / 16.0,
    ]
}

fn c1_moment_identity() -> Outcome {
    let p = build_protocol1(1.0).map_err(|e| e.to_string())?;
    assert_eq!(PROTOCOL1_SETTINGS.len(), 9);
    let mut rng = rng_from_seed(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let v = random_state(&mut rng);
        for (got, want) in p.intensities(&v).iter().zip(moment_rows(&v)) {
            worst = worst.max((got - want).abs());
        }
    }
    check(worst <= 1e-12, format!("max |X c|^2 - moment expression| = {worst:.2e}"))
}

fn c2_plate_transform() -> Outcome {
    let out = apply_plate(
        &StateVector::from_real(FRAC_1_SQRT_2, 0.0, -FRAC_1_SQRT_2),
        &WavePlateSetting::new(HALF_WAVE, 22.5f64.to_radians()).unwrap(),
    );
    let want = [cx(0.0, 0.0), cx(-1.0, 0.0), cx(0.0, 0.0)];
    let map_err = out.components().iter().zip(want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let mut rng = rng_from_seed(2);
    let mut unit_err = 0.0f64;
    for _ in 0..1000 {
        let s = WavePlateSetting::new(rng.random_range(0.0..=PI), rng.random_range(-PI..PI)).unwrap();
        let u = qutrit_unitary(&s);
        let d = u * u.adjoint() - qutrit::linalg::CMat3::identity();
        unit_err = unit_err.max(d.iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    check(
        map_err <= 1e-14 && unit_err <= 1e-12,
        format!("transform error {map_err:.2e}, unitarity error {unit_err:.2e}"),
    )
}

fn c3_oracle_reconstruction() -> Outcome {
    let protocols = [build_protocol1(1.0).unwrap(), default_protocol2(1.0).unwrap()];
    let opts = SolverOptions::default();
    let mut worst_fid = 1.0f64;
    let mut worst_agree = 1.0f64;
    for (k, p) in protocols.iter().enumerate() {
        let mut rng = rng_from_seed(30 + k as u64);
        for _ in 0..200 {
            let c = scale_to_events(p, &random_state(&mut rng), 1e4).unwrap();
            let obs = Observations::noiseless(p, &Truth::Pure(c));
            let l = lsm_reconstruct(p, &obs, None, &opts).map_err(|e| e.to_string())?;
            let m = mlm_reconstruct(p, &obs, None, &opts).map_err(|e| e.to_string())?;
            worst_fid = worst_fid.min(fidelity_pure(&c, &l.estimate)).min(fidelity_pure(&c, &m.estimate));
            worst_agree = worst_agree.min(fidelity_pure(&l.estimate, &m.estimate));
        }
    }
    check(
        worst_fid > 1.0 - 1e-8 && worst_agree > 1.0 - 1e-10,
        format!("min fidelity 1-{:.1e}, min LSM/MLM agreement 1-{:.1e}", 1.0 - worst_fid, 1.0 - worst_agree),
    )
}

fn c4_statistical_law() -> Outcome {
    let p = default_protocol2(1.0).unwrap();
    let truth = Truth::Pure(StateVector::new(cx(0.35, -0.1), cx(-0.2, 0.6), cx(0.65, 0.0)));
    let cfg = StudyConfig::new(truth, p, 1e4, 500, 4);
    let r = monte_carlo_study(&cfg).map_err(|e| e.to_string())?;
    let chi: Vec<f64> = r.rows.iter().map(|row| row.chi2_stat).collect();
    if chi.iter().any(|x| !x.is_finite()) {
        return Err("a replica failed".into());
    }
    let m = mean(&chi);
    let (d, pval) = ks_test_chi2(&chi, 5.0).map_err(|e| e.to_string())?;
    check(
        (4.25..=5.75).contains(&m) && pval > 0.01,
        format!("mean 4n(1-F_H) = {m:.3}, KS D = {d:.4}, p = {pval:.3}"),
    )
}

fn c5_information_identities() -> Outcome {
    let protocols = [build_protocol1(1.0).unwrap(), default_protocol2(1.0).unwrap()];
    let opts = SolverOptions::default();
    let mut bad_complete = 0;
    let mut worst_rel = 0.0f64;
    for (k, p) in protocols.iter().enumerate() {
        let mut rng = rng_from_seed(50 + k as u64);
        for j in 0..100 {
            let c = scale_to_events(p, &random_state(&mut rng), 1e4).unwrap();
            let d = sample_counts(p, &Truth::Pure(c), derive_seed(5, k as u64, j)).unwrap();
            let obs = Observations::from(&d);
            let r = mlm_reconstruct(p, &obs, None, &opts).map_err(|e| e.to_string())?;
            let b = InformationBundle::observed(p, &obs, &r.estimate, opts.reg_eps).map_err(|e| e.to_string())?;
            if !completeness_check(&b, TOL_ZERO).complete {
                bad_complete += 1;
            }
            let q = b.quadratic_form(&r.estimate);
            worst_rel = worst_rel.max((q - 2.0 * obs.total()).abs() / (2.0 * obs.total()));
        }
    }
    check(
        bad_complete == 0 && worst_rel <= 1e-8,
        format!("{bad_complete} incomplete of 200, max rel |<xi|H|xi> - 2 sum k| = {worst_rel:.2e}"),
    )
}

fn mixture_parts(p: &TomographyProtocol, events_each: f64) -> Vec<(f64, StateVector)> {
    let source = StateVector::psi3();
    let a = apply_plate(&source, &WavePlateSetting::new(0.656, 45f64.to_radians()).unwrap());
    let b = apply_plate(&source, &WavePlateSetting::new(0.656, (-30f64).to_radians()).unwrap());
    equal_event_mixture(p, &[a, b], events_each).unwrap()
}

fn c6_mixture_separation() -> Outcome {
    let p = build_protocol1(1.0).unwrap();
    let truth = Truth::Mixture(mixture_parts(&p, 1e4));
    let rho0 = truth.density().unwrap();
    let opts = MixtureOptions::default();
    let results: Vec<Result<(f64, f64), String>> = (0..100u64)
        .into_par_iter()
        .map(|j| {
            let d = sample_counts(&p, &truth, derive_seed(6, 0, j)).map_err(|e| e.to_string())?;
            let obs = Observations::from(&d);
            let a = separate_mixture(&p, &obs, 2, derive_seed(6, 1, j), &opts).map_err(|e| e.to_string())?;
            let b = separate_mixture(&p, &obs, 2, derive_seed(6, 2, j), &opts).map_err(|e| e.to_string())?;
            Ok((fidelity_mixed(&rho0, &a.rho).map_err(|e| e.to_string())?, a.rho.max_entry_distance(&b.rho)))
        })
        .collect();
    let results: Vec<(f64, f64)> = results.into_iter().collect::<Result<_, _>>()?;
    let fid: Vec<f64> = results.iter().map(|r| r.0).collect();
    let med = quantile(&fid, 0.5);
    let share = fid.iter().filter(|&&f| f >= 0.99).count() as f64 / fid.len() as f64;
    let spread = results.iter().map(|r| r.1).fold(0.0, f64::max);
    check(
        med >= 0.995 && share >= 0.9 && spread <= 1e-6,
        format!("median F = {med:.5}, share >= 0.99: {share:.2}, max init disagreement {spread:.1e}"),
    )
}

fn c7_partial_volume() -> Outcome {
    let p = default_protocol2(1.0).unwrap();
    let c = apply_plate(&StateVector::psi3(), &WavePlateSetting::new(0.656, 50f64.to_radians()).unwrap());
    // f = 0.01 still leaves 10^4 events, inside the asymptotic regime
    let n = 1e6;
    let mut cfg = StudyConfig::new(Truth::Pure(c), p.clone(), n, 10, 7);
    cfg.f_grid = vec![0.01, 0.04, 0.1, 0.25, 0.5, 1.0];
    let clean = monte_carlo_study(&cfg).map_err(|e| e.to_string())?;
    let means: Vec<f64> = clean.summary.iter().map(|s| s.fidelity_mean).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let outside: Vec<f64> = clean
        .summary
        .iter()
        .filter(|s| !(s.fidelity_mean >= s.band_lower && s.fidelity_mean <= s.band_upper))
        .map(|s| s.f)
        .collect();
    let fh_inside = clean
        .summary
        .iter()
        .all(|s| s.info_fidelity_mean >= s.band_lower && s.info_fidelity_mean <= s.band_upper);

    let mut jcfg = StudyConfig::new(Truth::Pure(c), p, n, 10, 8);
    jcfg.jitter_deg = 0.5;
    let jittered = monte_carlo_study(&jcfg).map_err(|e| e.to_string())?;
    let lower = info_fidelity_band(n, 0.05, 0.95).unwrap().lower;
    let jmean = jittered.summary[0].fidelity_mean;
    let detail = format!(
        "mean F {:?}; monotone {monotone}; f outside band {outside:?}; mean F_H inside band {fh_inside}; \
         jitter 0.5 deg at N = {n:.0}: mean F = {jmean:.7} vs lower band {lower:.7}",
        means.iter().map(|m| format!("{m:.6}")).collect::<Vec<_>>()
    );
    check(monotone && outside.is_empty() && jmean < lower, detail)
}

fn c8_fidelity_levels() -> Outcome {
    let protocols = [build_protocol1(1.0).unwrap(), default_protocol2(1.0).unwrap()];
    let mut lines = Vec::new();
    let mut ok = true;
    for (k, p) in protocols.iter().enumerate() {
        for alpha in [0.0f64, 40.0, 80.0] {
            let c = apply_plate(&StateVector::psi3(), &WavePlateSetting::new(0.656, alpha.to_radians()).unwrap());
            let mut cfg = StudyConfig::new(Truth::Pure(c), p.clone(), 1e4, 100, 80 + k as u64);
            cfg.seed = derive_seed(8, k as u64, alpha as u64);
            let r = monte_carlo_study(&cfg).map_err(|e| e.to_string())?;
            let share = r.rows.iter().filter(|row| row.fidelity >= 0.995).count() as f64 / r.rows.len() as f64;
            ok &= share >= 0.9;
            lines.push(format!("P{} a={alpha}: {share:.2}", k + 1));
        }
    }
    check(ok, format!("share >= 0.995 at 1e4 events: {}", lines.join(", ")))
}

fn c9_poincare() -> Outcome {
    let mut rng = rng_from_seed(9);
    let mut worst_p = 0.0f64;
    let mut worst_f = 1.0f64;
    for _ in 0..1000 {
        let pair = PoincarePair::new(
            rng.random_range(0.0..=PI),
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..=PI),
            rng.random_range(0.0..TAU),
        )
        .unwrap();
        let v = from_poincare(&pair);
        worst_p = worst_p.max((polarization_degree(&v) - polarization_from_beta(beta_angle(&pair))).abs());
        let back = from_poincare(&to_poincare(&v).map_err(|e| e.to_string())?);
        worst_f = worst_f.min(fidelity_pure(&v, &back));
    }
    check(
        worst_p <= 1e-10 && worst_f >= 1.0 - 1e-8,
        format!("max polarization error {worst_p:.2e}, min round-trip fidelity 1-{:.1e}", 1.0 - worst_f),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 moment identities", c1_moment_identity, Duration::from_secs(1)),
        ("2 plate transformation", c2_plate_transform, Duration::from_secs(1)),
        ("3 oracle reconstruction", c3_oracle_reconstruction, Duration::from_secs(10)),
        ("4 statistical law", c4_statistical_law, Duration::from_secs(120)),
        ("5 information identities", c5_information_identities, Duration::from_secs(60)),
        ("6 mixture separation", c6_mixture_separation, Duration::from_secs(300)),
        ("7 partial-volume curve", c7_partial_volume, Duration::from_secs(300)),
        ("8 fidelity levels", c8_fidelity_levels, Duration::from_secs(300)),
        ("9 Poincare consistency", c9_poincare, Duration::from_secs(1)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run, limit) in criteria {
        if !only.is_empty() && !only.iter().any(|o| name.starts_with(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {limit:?} budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {name}: {} ({detail}; {:.2}s)",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
