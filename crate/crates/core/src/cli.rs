//! The `qutrit` command line.
//!
//! Every command reads one JSON run configuration (`--config`) and writes its
//! results into the output directory. Each output file carries the tool
//! version and a SHA-256 hash of the configuration (CSV files in `#` comment
//! lines, JSON files as fields), so a rerun of the same configuration and
//! seed reproduces every file byte for byte.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure or
//! non-convergence, 4 incomplete protocol.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimate::{lsm_reconstruct, mlm_reconstruct, Method, Observations, ReconstructionResult, SolverOptions};
use crate::info::{completeness_check, info_fidelity_at, InformationBundle, TOL_ZERO};
use crate::io::{
    comment_block, parse_counts_csv, parse_counts_meta, parse_x_csv, write_counts_csv, write_x_csv,
    CountsMeta, DensityJson, PlateJson, ProtocolJson, TruthJson, TOOL_VERSION,
};
use crate::mixture::{separate_mixture, MixtureOptions};
use crate::optics::apply_plates;
use crate::poincare::{beta_angle, from_poincare, polarization_from_beta, to_poincare, PoincarePair};
use crate::protocol::{design_metric, TomographyProtocol};
use crate::simulate::{sample_with_instrument_error, scale_to_events, CountData, Truth};
use crate::state::{fidelity_mixed, fidelity_pure, polarization_degree, DensityMatrix, StateVector};
use crate::stats::{beta_fit_moments, ks_test_chi2, mean};
use crate::study::{chi2_histogram, monte_carlo_study, StudyConfig, StudyRow, StudySummary, DEFAULT_F_GRID};
use crate::PHYSICAL_DOF;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INCOMPLETE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "qutrit", version, about = "Biphoton polarization qutrit tomography")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` of the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
enum Command {
    /// Write the instrumental matrix and design diagnostics.
    Protocol,
    /// Simulate coincidence counts.
    Simulate,
    /// Reconstruct a pure state from counts.
    Reconstruct,
    /// Separate a mixed state into pure components.
    Separate,
    /// Run a Monte Carlo study.
    Mc,
    /// Convert between state vectors and Poincare-sphere point pairs.
    Poincare,
}

/// Source state of a plate-preparation recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Psi1,
    Psi2,
    Psi3,
}

impl Source {
    fn state(self) -> StateVector {
        match self {
            Source::Psi1 => StateVector::psi1(),
            Source::Psi2 => StateVector::psi2(),
            Source::Psi3 => StateVector::psi3(),
        }
    }
}

/// Source state sent through plates in the order given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeJson {
    pub source: Source,
    pub plates: Vec<PlateJson>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareJson {
    pub theta_s_deg: f64,
    pub phi_s_deg: f64,
    pub theta_i_deg: f64,
    pub phi_i_deg: f64,
}

impl PoincareJson {
    fn pair(&self) -> Result<PoincarePair> {
        PoincarePair::from_degrees(self.theta_s_deg, self.phi_s_deg, self.theta_i_deg, self.phi_i_deg)
    }

    fn from_pair(p: &PoincarePair) -> Self {
        PoincareJson {
            theta_s_deg: p.theta_s.to_degrees(),
            phi_s_deg: p.phi_s.to_degrees(),
            theta_i_deg: p.theta_i.to_degrees(),
            phi_i_deg: p.phi_i.to_degrees(),
        }
    }
}

/// A state given by amplitudes, by its two Poincare points or by a plate
/// recipe, e.g. `{"recipe": {"source": "psi3", "plates": [{"delta": 0.656,
/// "angle_deg": 40}]}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum StateSpec {
    Amplitudes(StateVector),
    Poincare(PoincareJson),
    Recipe(RecipeJson),
}

impl StateSpec {
    pub fn resolve(&self) -> Result<StateVector> {
        match self {
            StateSpec::Amplitudes(v) => Ok(*v),
            StateSpec::Poincare(p) => Ok(from_poincare(&p.pair()?)),
            StateSpec::Recipe(r) => {
                let plates = r
                    .plates
                    .iter()
                    .enumerate()
                    .map(|(j, p)| {
                        p.to_setting()
                            .map_err(|e| Error::parse(format!("state.recipe.plates[{j}]"), e.to_string()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(apply_plates(&r.source.state(), &plates))
            }
        }
    }
}

/// Mixture component; `share` is its fraction of the expected events
/// (equal shares when omitted everywhere).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentJson {
    pub state: StateSpec,
    #[serde(default)]
    pub share: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverJson {
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub max_iter: Option<usize>,
}

impl SolverJson {
    fn options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        SolverOptions {
            tol: self.tol.unwrap_or(d.tol),
            max_iter: self.max_iter.unwrap_or(d.max_iter),
            ..d
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyJson {
    /// Expected events of a full-volume experiment.
    pub events: f64,
    pub replicas: usize,
    #[serde(default)]
    pub f_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub jitter_deg: Option<f64>,
    #[serde(default)]
    pub histogram_bins: Option<usize>,
    /// Upper edge of the chi-square histogram.
    #[serde(default)]
    pub histogram_max: Option<f64>,
}

/// Run configuration shared by all commands; each command reads the fields
/// it needs. Relative paths are resolved against the configuration file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional guard: when present it must name the subcommand.
    #[serde(default)]
    pub command: Option<String>,
    #[serde(default)]
    pub protocol: Option<ProtocolJson>,
    /// Instrumental matrix CSV used instead of `protocol`.
    #[serde(default)]
    pub x_csv: Option<PathBuf>,
    #[serde(default)]
    pub state: Option<StateSpec>,
    #[serde(default)]
    pub mixture: Option<Vec<ComponentJson>>,
    /// Expected total events; the truth is rescaled to it.
    #[serde(default)]
    pub events: Option<f64>,
    /// Standard deviation of plate-angle errors in simulated data.
    #[serde(default)]
    pub jitter_deg: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Counts CSV to read (default `counts.csv` in the output directory).
    #[serde(default)]
    pub counts: Option<PathBuf>,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub components: Option<usize>,
    #[serde(default)]
    pub solver: Option<SolverJson>,
    #[serde(default)]
    pub study: Option<StudyJson>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

/// Parses a run configuration, reporting the JSON location on failure.
pub fn parse_run_config(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| {
        let location = if e.line() == 0 {
            "config".to_string()
        } else {
            format!("config {}:{}", e.line(), e.column())
        };
        Error::parse(location, e.to_string())
    })
}

/// Failure of a command: an exit code and a diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::IncompleteProtocol(_) => EXIT_INCOMPLETE,
            Error::Numerical(_) => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        };
        Failure { code, message: e.to_string() }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

type Outcome = std::result::Result<Vec<PathBuf>, Failure>;

struct Run {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
    seed: u64,
    hash: String,
}

impl Run {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn header(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tool_version", TOOL_VERSION.to_string()),
            ("config_hash", self.hash.clone()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn comments(&self, extra: &[(&str, String)]) -> String {
        let mut pairs: Vec<(&str, String)> = self.header();
        pairs.extend(extra.iter().cloned());
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(k, v)| (*k, v.as_str())).collect();
        comment_block(&refs)
    }

    fn write(&self, name: &str, content: &str, written: &mut Vec<PathBuf>) -> std::result::Result<(), Failure> {
        let path = self.out.join(name);
        fs::write(&path, content).map_err(|e| config_error(format!("cannot write {}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, body: &T, written: &mut Vec<PathBuf>) -> std::result::Result<(), Failure> {
        let wrapped = Stamped {
            tool_version: TOOL_VERSION,
            config_hash: &self.hash,
            seed: self.seed,
            body,
        };
        let mut text = serde_json::to_string_pretty(&wrapped).map_err(|e| config_error(e.to_string()))?;
        text.push('\n');
        self.write(name, &text, written)
    }

    fn protocol(&self) -> Result<TomographyProtocol> {
        match (&self.cfg.protocol, &self.cfg.x_csv) {
            (Some(p), None) => p.build(),
            (None, Some(path)) => parse_x_csv(&read(&self.resolve(path))?),
            (Some(_), Some(_)) => Err(Error::parse("config", "give either protocol or x_csv, not both")),
            (None, None) => Err(Error::parse("config", "a protocol (or x_csv) is required")),
        }
    }

    fn solver(&self) -> SolverOptions {
        self.cfg.solver.clone().unwrap_or_default().options()
    }

    /// Truth of the configuration, rescaled to `events` when given.
    fn truth(&self, p: &TomographyProtocol) -> Result<Option<Truth>> {
        match (&self.cfg.state, &self.cfg.mixture) {
            (Some(_), Some(_)) => Err(Error::parse("config", "give either state or mixture, not both")),
            (None, None) => Ok(None),
            (Some(s), None) => {
                let v = s.resolve()?;
                Ok(Some(Truth::Pure(match self.cfg.events {
                    Some(n) => scale_to_events(p, &v, n)?,
                    None => v,
                })))
            }
            (None, Some(parts)) => {
                if parts.is_empty() {
                    return Err(Error::parse("config mixture", "mixture needs components"));
                }
                let given = parts.iter().filter(|c| c.share.is_some()).count();
                if given != 0 && given != parts.len() {
                    return Err(Error::parse("config mixture", "give a share for every component or none"));
                }
                let n = self.cfg.events.ok_or_else(|| Error::parse("config events", "mixtures need an event count"))?;
                let mut out = Vec::with_capacity(parts.len());
                for (j, part) in parts.iter().enumerate() {
                    let share = part.share.unwrap_or(1.0 / parts.len() as f64);
                    if !(share > 0.0 && share.is_finite()) {
                        return Err(Error::parse(format!("config mixture[{j}].share"), "share must be positive"));
                    }
                    out.push((1.0, scale_to_events(p, &part.state.resolve()?, share * n)?));
                }
                Ok(Some(Truth::Mixture(out)))
            }
        }
    }

    fn counts_path(&self) -> PathBuf {
        match &self.cfg.counts {
            Some(p) => self.resolve(p),
            None => self.out.join("counts.csv"),
        }
    }

    /// Counts, their sidecar when present, checked against the protocol.
    fn counts(&self, p: &TomographyProtocol) -> Result<(CountData, Option<CountsMeta>)> {
        let path = self.counts_path();
        let d = parse_counts_csv(&read(&path)?)?;
        d.check_matches(p)?;
        let meta_path = path.with_extension("json");
        let meta = if meta_path.exists() {
            let m = parse_counts_meta(&read(&meta_path)?)?;
            if m.protocol_hash != p.content_hash() {
                return Err(Error::InvalidArgument(format!(
                    "counts in {} were simulated for a different protocol",
                    path.display()
                )));
            }
            Some(m)
        } else {
            None
        };
        Ok((d, meta))
    }

    /// Truth for scoring reconstructions: recorded next to the counts, else
    /// taken from the configuration.
    fn scoring_truth(&self, p: &TomographyProtocol, meta: Option<&CountsMeta>) -> Result<Option<Truth>> {
        if let Some(t) = meta.and_then(|m| m.truth.as_ref()) {
            return Ok(Some(match t {
                TruthJson::Pure(v) => Truth::Pure(*v),
                TruthJson::Mixture(parts) => Truth::Mixture(parts.clone()),
            }));
        }
        self.truth(p)
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    tool_version: &'a str,
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn hash_config(bytes: &[u8], seed_override: Option<u64>) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    if let Some(s) = seed_override {
        h.update(format!("\nseed={s}").as_bytes());
    }
    hex::encode(h.finalize())
}

fn state_cells(v: &StateVector) -> Vec<String> {
    v.components().iter().flat_map(|z| [z.re.to_string(), z.im.to_string()]).collect()
}

fn csv_text<R: Serialize>(comments: &str, rows: &[R]) -> std::result::Result<String, Failure> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| config_error(e.to_string()))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| config_error(e.to_string()))?)
        .map_err(|e| config_error(e.to_string()))?;
    Ok(format!("{comments}{body}"))
}

fn raw_csv(comments: &str, header: &[&str], rows: &[Vec<String>]) -> std::result::Result<String, Failure> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).map_err(|e| config_error(e.to_string()))?;
    for r in rows {
        w.write_record(r).map_err(|e| config_error(e.to_string()))?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| config_error(e.to_string()))?)
        .map_err(|e| config_error(e.to_string()))?;
    Ok(format!("{comments}{body}"))
}

#[derive(Serialize)]
struct DesignReport {
    protocol_hash: String,
    rows: usize,
    complete: bool,
    design_metric: f64,
    fisher_eigenvalues: Vec<f64>,
}

fn cmd_protocol(run: &Run) -> Outcome {
    let p = run.protocol()?;
    let mut written = Vec::new();
    let hash = p.content_hash();
    let x = write_x_csv(&p, &run.comments(&[("protocol_hash", hash.clone())]));
    run.write("x.csv", &x, &mut written)?;
    let check = p.check_complete();
    run.write_json(
        "design.json",
        &DesignReport {
            protocol_hash: hash,
            rows: p.len(),
            complete: check.is_ok(),
            design_metric: design_metric(&p),
            fisher_eigenvalues: p.fisher_eigenvalues().iter().copied().collect(),
        },
        &mut written,
    )?;
    check?;
    Ok(written)
}

fn cmd_simulate(run: &Run) -> Outcome {
    let p = run.protocol()?;
    p.check_complete()?;
    let truth = run
        .truth(&p)?
        .ok_or_else(|| config_error("simulate needs a state or a mixture"))?;
    let d = sample_with_instrument_error(&p, &truth, run.cfg.jitter_deg.unwrap_or(0.0), run.seed)?;
    let meta = CountsMeta {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: run.hash.clone(),
        seed: run.seed,
        protocol_hash: p.content_hash(),
        total_events: d.total_events(),
        truth: Some(match truth {
            Truth::Pure(v) => TruthJson::Pure(v),
            Truth::Mixture(parts) => TruthJson::Mixture(parts),
            Truth::Density(_) => unreachable!("configurations give pure states or mixtures"),
        }),
    };
    let mut written = Vec::new();
    let comments = run.comments(&[
        ("protocol_hash", meta.protocol_hash.clone()),
        ("total_events", meta.total_events.to_string()),
    ]);
    run.write("counts.csv", &write_counts_csv(&d, &comments), &mut written)?;
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| config_error(e.to_string()))?;
    text.push('\n');
    run.write("counts.json", &text, &mut written)?;
    Ok(written)
}

#[derive(Serialize)]
struct ScoredResult {
    #[serde(flatten)]
    result: ReconstructionResult,
    fidelity: Option<f64>,
    info_fidelity: Option<f64>,
    /// Completeness of the observed information matrix at the estimate.
    complete: bool,
}

#[derive(Serialize)]
struct ReconstructionReport {
    counts_seed: Option<u64>,
    total_events: u64,
    theory: Option<StateVector>,
    results: Vec<ScoredResult>,
}

fn cmd_reconstruct(run: &Run) -> Outcome {
    let p = run.protocol()?;
    p.check_complete()?;
    let (d, meta) = run.counts(&p)?;
    let obs = Observations::from(&d);
    let truth = match run.scoring_truth(&p, meta.as_ref())? {
        Some(Truth::Pure(v)) => Some(v),
        Some(_) => return Err(config_error("reconstruct scores pure truths only; use separate for mixtures")),
        None => None,
    };
    let opts = run.solver();
    let methods = run.cfg.methods.clone().unwrap_or_else(|| vec![Method::Lsm, Method::Mlm]);
    if methods.is_empty() {
        return Err(config_error("methods must not be empty"));
    }
    let mut results = Vec::new();
    for m in methods {
        let r = match m {
            Method::Lsm => lsm_reconstruct(&p, &obs, None, &opts)?,
            Method::Mlm => mlm_reconstruct(&p, &obs, None, &opts)?,
        };
        let bundle = InformationBundle::observed(&p, &obs, &r.estimate, opts.reg_eps)?;
        let (fidelity, info_fidelity) = match &truth {
            Some(t) => (
                Some(fidelity_pure(t, &r.estimate)),
                Some(info_fidelity_at(&p, &obs, t, &r.estimate, opts.reg_eps)?),
            ),
            None => (None, None),
        };
        results.push(ScoredResult {
            complete: completeness_check(&bundle, TOL_ZERO).complete,
            result: r,
            fidelity,
            info_fidelity,
        });
    }
    let theory = truth.map(|t| t.normalize()).transpose()?;
    let mut rows: Vec<Vec<String>> = results
        .iter()
        .map(|s| {
            let mut row = vec![
                format!("{:?}", s.result.method).to_lowercase(),
                s.fidelity.map(|f| f.to_string()).unwrap_or_default(),
                s.info_fidelity.map(|f| f.to_string()).unwrap_or_default(),
                s.result.converged.to_string(),
            ];
            row.extend(state_cells(&s.result.normalized));
            row
        })
        .collect();
    if let Some(t) = &theory {
        let mut row = vec!["theory".into(), String::new(), String::new(), String::new()];
        row.extend(state_cells(t));
        rows.push(row);
    }
    let mut written = Vec::new();
    let table = raw_csv(
        &run.comments(&[("total_events", d.total_events().to_string())]),
        &["method", "fidelity", "info_fidelity", "converged", "re1", "im1", "re2", "im2", "re3", "im3"],
        &rows,
    )?;
    run.write("reconstruction.csv", &table, &mut written)?;
    let failed: Vec<String> = results
        .iter()
        .filter(|s| !s.result.converged)
        .map(|s| format!("{:?}", s.result.method))
        .collect();
    run.write_json(
        "reconstruction.json",
        &ReconstructionReport {
            counts_seed: d.seed(),
            total_events: d.total_events(),
            theory,
            results,
        },
        &mut written,
    )?;
    if !failed.is_empty() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{} did not converge", failed.join(", ")),
        });
    }
    Ok(written)
}

#[derive(Serialize)]
struct ComponentReport {
    weight: f64,
    state: StateVector,
    raw: StateVector,
}

#[derive(Serialize)]
struct SeparationReport {
    components: Vec<ComponentReport>,
    rho: DensityJson,
    principal: Vec<(f64, StateVector)>,
    iterations: usize,
    converged: bool,
    residual: f64,
    loglik: f64,
    fidelity: Option<f64>,
}

fn cmd_separate(run: &Run) -> Outcome {
    let p = run.protocol()?;
    p.check_complete()?;
    let (d, meta) = run.counts(&p)?;
    let obs = Observations::from(&d);
    let n = run.cfg.components.unwrap_or(2);
    let opts = MixtureOptions {
        inner: SolverOptions {
            max_iter: MixtureOptions::default().inner.max_iter,
            ..run.solver()
        },
        ..MixtureOptions::default()
    };
    let m = separate_mixture(&p, &obs, n, run.seed, &opts)?;
    let rho0: Option<DensityMatrix> = run.scoring_truth(&p, meta.as_ref())?.map(|t| t.density()).transpose()?;
    let fidelity = rho0.map(|r| fidelity_mixed(&r, &m.rho)).transpose()?;
    let components: Vec<ComponentReport> = m
        .components
        .iter()
        .zip(&m.weights)
        .map(|(c, &w)| {
            Ok(ComponentReport {
                weight: w,
                state: c.normalize()?,
                raw: *c,
            })
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<String>> = components
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let mut row = vec![(j + 1).to_string(), c.weight.to_string()];
            row.extend(state_cells(&c.state));
            row
        })
        .collect();
    let mut written = Vec::new();
    let extra = [("fidelity", fidelity.map(|f| f.to_string()).unwrap_or_else(|| "n/a".into()))];
    let table = raw_csv(
        &run.comments(&extra),
        &["component", "weight", "re1", "im1", "re2", "im2", "re3", "im3"],
        &rows,
    )?;
    run.write("components.csv", &table, &mut written)?;
    let converged = m.converged;
    run.write_json(
        "separation.json",
        &SeparationReport {
            components,
            rho: DensityJson::from(m.rho),
            principal: m.principal.clone(),
            iterations: m.iterations,
            converged,
            residual: m.residual,
            loglik: m.loglik,
            fidelity,
        },
        &mut written,
    )?;
    if !converged {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("mixture separation did not converge (residual {:.3e})", m.residual),
        });
    }
    Ok(written)
}

#[derive(Serialize)]
struct FidelityBin {
    lower: f64,
    upper: f64,
    count: usize,
}

#[derive(Serialize)]
struct StudyReport {
    events: f64,
    replicas: usize,
    f_grid: Vec<f64>,
    jitter_deg: f64,
    failures: usize,
    /// Mean of `4 n (1 - F_H)` over all rows (pure truths).
    chi2_mean: Option<f64>,
    ks_statistic: Option<f64>,
    ks_p_value: Option<f64>,
    /// Method-of-moments beta fit of the fidelities at the largest `f`.
    fidelity_beta: Option<(f64, f64)>,
}

fn fidelity_histogram(values: &[f64], bins: usize) -> Vec<FidelityBin> {
    let lo = values.iter().copied().fold(1.0, f64::min);
    let width = ((1.0 - lo) / bins as f64).max(f64::MIN_POSITIVE);
    (0..bins)
        .map(|b| {
            let lower = lo + b as f64 * width;
            let upper = if b + 1 == bins { 1.0 } else { lower + width };
            let last = b + 1 == bins;
            FidelityBin {
                lower,
                upper,
                count: values
                    .iter()
                    .filter(|&&v| v >= lower && (v < upper || (last && v <= upper)))
                    .count(),
            }
        })
        .collect()
}

fn cmd_mc(run: &Run) -> Outcome {
    let p = run.protocol()?;
    p.check_complete()?;
    let s = run.cfg.study.clone().ok_or_else(|| config_error("mc needs a study section"))?;
    let truth = run
        .truth(&p)?
        .ok_or_else(|| config_error("mc needs a state or a mixture"))?;
    let mut cfg = StudyConfig::new(truth, p, s.events, s.replicas, run.seed);
    cfg.f_grid = s.f_grid.clone().unwrap_or_else(|| DEFAULT_F_GRID.to_vec());
    cfg.jitter_deg = s.jitter_deg.or(run.cfg.jitter_deg).unwrap_or(0.0);
    cfg.solver = run.solver();
    if let Some(m) = run.cfg.methods.as_ref().and_then(|m| m.first()) {
        cfg.method = *m;
    }
    if let Some(n) = run.cfg.components {
        cfg.components = n;
    }
    let result = monte_carlo_study(&cfg)?;
    let bins = s.histogram_bins.unwrap_or(20);
    if bins == 0 {
        return Err(config_error("histogram_bins must be positive"));
    }
    let chi: Vec<f64> = result.rows.iter().map(|r| r.chi2_stat).filter(|x| x.is_finite()).collect();
    let f_max = cfg.f_grid.iter().copied().fold(0.0, f64::max);
    let top: Vec<f64> = result
        .rows
        .iter()
        .filter(|r| r.f == f_max && r.fidelity.is_finite())
        .map(|r| r.fidelity)
        .collect();
    let ks = if chi.len() >= 2 {
        Some(ks_test_chi2(&chi, PHYSICAL_DOF as f64)?)
    } else {
        None
    };
    let mut written = Vec::new();
    let comments = run.comments(&[]);
    run.write("rows.csv", &csv_text::<StudyRow>(&comments, &result.rows)?, &mut written)?;
    run.write("summary.csv", &csv_text::<StudySummary>(&comments, &result.summary)?, &mut written)?;
    let histogram = if chi.is_empty() {
        csv_text(&comments, &fidelity_histogram(&top, bins))?
    } else {
        let max = s.histogram_max.unwrap_or(25.0);
        csv_text(&comments, &chi2_histogram(&chi, bins, max)?)?
    };
    run.write("histogram.csv", &histogram, &mut written)?;
    run.write_json(
        "study.json",
        &StudyReport {
            events: s.events,
            replicas: s.replicas,
            f_grid: cfg.f_grid.clone(),
            jitter_deg: cfg.jitter_deg,
            failures: result.summary.iter().map(|x| x.failures).sum(),
            chi2_mean: (!chi.is_empty()).then(|| mean(&chi)),
            ks_statistic: ks.map(|k| k.0),
            ks_p_value: ks.map(|k| k.1),
            fidelity_beta: beta_fit_moments(&top),
        },
        &mut written,
    )?;
    Ok(written)
}

#[derive(Serialize)]
struct PoincareReport {
    state: StateVector,
    points: PoincareJson,
    beta_deg: f64,
    polarization_degree: f64,
    polarization_from_beta: f64,
}

fn cmd_poincare(run: &Run) -> Outcome {
    let spec = run.cfg.state.as_ref().ok_or_else(|| config_error("poincare needs a state"))?;
    let (state, pair) = match spec {
        StateSpec::Poincare(p) => {
            let pair = p.pair()?;
            (from_poincare(&pair), pair)
        }
        other => {
            let v = other.resolve()?.normalize()?;
            (v, to_poincare(&v)?)
        }
    };
    let beta = beta_angle(&pair);
    let mut written = Vec::new();
    run.write_json(
        "poincare.json",
        &PoincareReport {
            state,
            points: PoincareJson::from_pair(&pair),
            beta_deg: beta.to_degrees(),
            polarization_degree: polarization_degree(&state),
            polarization_from_beta: polarization_from_beta(beta),
        },
        &mut written,
    )?;
    Ok(written)
}

fn command_name(c: Command) -> &'static str {
    match c {
        Command::Protocol => "protocol",
        Command::Simulate => "simulate",
        Command::Reconstruct => "reconstruct",
        Command::Separate => "separate",
        Command::Mc => "mc",
        Command::Poincare => "poincare",
    }
}

fn execute(cli: &Cli) -> Outcome {
    let path = cli.config.as_ref().ok_or_else(|| config_error("--config <path> is required"))?;
    let bytes = fs::read(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| config_error("configuration is not UTF-8"))?;
    let cfg = parse_run_config(&text)?;
    let name = command_name(cli.command);
    if let Some(c) = &cfg.command {
        if c != name {
            return Err(config_error(format!("configuration is for `{c}`, not `{name}`")));
        }
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = match (&cli.out, &cfg.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_absolute() => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("."),
    };
    fs::create_dir_all(&out).map_err(|e| config_error(format!("cannot create {}: {e}", out.display())))?;
    let run = Run {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        hash: hash_config(&bytes, cli.seed),
        cfg,
        base,
        out,
    };
    match cli.command {
        Command::Protocol => cmd_protocol(&run),
        Command::Simulate => cmd_simulate(&run),
        Command::Reconstruct => cmd_reconstruct(&run),
        Command::Separate => cmd_separate(&run),
        Command::Mc => cmd_mc(&run),
        Command::Poincare => cmd_poincare(&run),
    }
}

/// Runs the command line on `args` (program name first) and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
