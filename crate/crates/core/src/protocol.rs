//! Tomography protocols and their instrumental matrices.
//!
//! A protocol is an ordered list of measurement settings. Each setting maps
//! the state amplitudes linearly onto a process amplitude `M = x . c`; the rows
//! `x` stack into the instrumental matrix `X`, and `|M|^2` is the event rate of
//! that process.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat3, CRow3};
use crate::optics::{self, plate_coeffs, WavePlateSetting};
use crate::state::StateVector;

/// Fewest settings that can fix the `2s - 1 = 5` real parameters.
pub const MIN_ROWS: usize = 5;

/// Relative eigenvalue floor below which the Fisher matrix counts as singular.
pub const SINGULAR_RTOL: f64 = 1e-10;

/// Quarter-wave orientation in the signal arm used for the control-plate protocol.
pub const DEFAULT_CHI_S_DEG: f64 = 18.8;
/// Half-wave orientation in the idler arm used for the control-plate protocol.
pub const DEFAULT_THETA_I_DEG: f64 = -28.5;

/// Plates of the two Brown-Twiss arms, in the order the light meets them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BrownTwissSetting {
    pub signal: Vec<WavePlateSetting>,
    pub idler: Vec<WavePlateSetting>,
}

impl BrownTwissSetting {
    /// Standard filter: quarter-wave at `chi`, then half-wave at `theta`, per arm.
    pub fn standard_deg(chi_s: f64, theta_s: f64, chi_i: f64, theta_i: f64) -> Self {
        BrownTwissSetting {
            signal: vec![
                WavePlateSetting::quarter_deg(chi_s),
                WavePlateSetting::half_deg(theta_s),
            ],
            idler: vec![
                WavePlateSetting::quarter_deg(chi_i),
                WavePlateSetting::half_deg(theta_i),
            ],
        }
    }

    pub fn row(&self) -> CRow3 {
        optics::projection_row(&self.signal, &self.idler)
    }

    fn map_plates(&self, mut f: impl FnMut(&WavePlateSetting) -> WavePlateSetting) -> Self {
        BrownTwissSetting {
            signal: self.signal.iter().map(&mut f).collect(),
            idler: self.idler.iter().map(&mut f).collect(),
        }
    }
}

/// What a single row measures.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RowSettings {
    BrownTwiss(BrownTwissSetting),
    /// Control plate (quarter-wave) at `mu` before fixed single plates in each
    /// arm: a quarter-wave at `chi_s` (signal) and a half-wave at `theta_i`
    /// (idler). Angles in radians.
    ControlPlate { chi_s: f64, theta_i: f64, mu: f64 },
    /// Row given directly as amplitudes, with no plate model behind it.
    Explicit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolRow {
    pub label: String,
    pub settings: RowSettings,
    pub amplitudes: CRow3,
}

/// How a protocol was built; used to rebuild it with perturbed plates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ProtocolKind {
    Protocol1,
    Protocol2,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographyProtocol {
    kind: ProtocolKind,
    rows: Vec<ProtocolRow>,
    exposures: Vec<f64>,
}

/// `(chi_s, theta_s, chi_i, theta_i)` in degrees and the measured moment.
pub type Protocol1Setting = ((f64, f64, f64, f64), &'static str);

/// Settings of the nine-row protocol, one per moment combination.
pub const PROTOCOL1_SETTINGS: [Protocol1Setting; 9] = [
    ((0.0, 45.0, 0.0, -45.0), "A/4"),
    ((0.0, 45.0, 0.0, 0.0), "C/4"),
    ((0.0, 0.0, 0.0, 0.0), "B/4"),
    ((45.0, 0.0, 0.0, 0.0), "(B+C+2ImF)/8"),
    ((45.0, 22.5, 0.0, 0.0), "(B+C-2ReF)/8"),
    ((45.0, 22.5, 0.0, -45.0), "(A+C-2ReD)/8"),
    ((45.0, 0.0, 0.0, -45.0), "(A+C+2ImD)/8"),
    ((-45.0, 11.25, -45.0, 11.25), "(A+B-2ImE)/16"),
    ((45.0, 22.5, -45.0, 22.5), "(A+B-2ReE)/16"),
];

fn check_exposure(exposure: f64) -> Result<()> {
    if exposure > 0.0 && exposure.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "exposure {exposure} must be positive"
        )))
    }
}

/// Fixed row `l = (r_s r_i, (r_s t_i + r_i t_s)/sqrt2, t_s t_i)` of the
/// control-plate protocol, from a quarter-wave plate at `chi_s` in the signal
/// arm and a half-wave plate at `theta_i` in the idler arm (radians).
pub fn control_row(chi_s: f64, theta_i: f64) -> CRow3 {
    let s = plate_coeffs(&WavePlateSetting::quarter(chi_s));
    let i = plate_coeffs(&WavePlateSetting::half(theta_i));
    CRow3::new(
        s.r * i.r,
        (s.r * i.t + i.r * s.t) / SQRT_2,
        s.t * i.t,
    )
}

/// Quarter-wave control plate at `mu`.
pub fn control_unitary(mu: f64) -> CMat3 {
    optics::qutrit_unitary(&WavePlateSetting::quarter(mu))
}

impl TomographyProtocol {
    /// Assembles a protocol from explicit rows and per-row exposures. Only
    /// shape is checked here; see [`TomographyProtocol::check_complete`].
    pub fn from_rows(kind: ProtocolKind, rows: Vec<ProtocolRow>, exposures: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::IncompleteProtocol("protocol has no rows".into()));
        }
        if rows.len() != exposures.len() {
            return Err(Error::InvalidArgument(format!(
                "{} rows but {} exposures",
                rows.len(),
                exposures.len()
            )));
        }
        for &t in &exposures {
            check_exposure(t)?;
        }
        if rows
            .iter()
            .any(|r| r.amplitudes.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()))
        {
            return Err(Error::InvalidArgument("non-finite instrumental matrix entry".into()));
        }
        Ok(TomographyProtocol { kind, rows, exposures })
    }

    pub fn kind(&self) -> &ProtocolKind {
        &self.kind
    }

    pub fn rows(&self) -> &[ProtocolRow] {
        &self.rows
    }

    pub fn row(&self, nu: usize) -> &CRow3 {
        &self.rows[nu].amplitudes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn exposures(&self) -> &[f64] {
        &self.exposures
    }

    /// Copy with every exposure replaced by `exposure`.
    pub fn with_uniform_exposure(&self, exposure: f64) -> Result<Self> {
        check_exposure(exposure)?;
        Ok(TomographyProtocol {
            exposures: vec![exposure; self.len()],
            ..self.clone()
        })
    }

    pub fn with_exposures(&self, exposures: Vec<f64>) -> Result<Self> {
        Self::from_rows(self.kind.clone(), self.rows.clone(), exposures)
    }

    /// Process amplitudes `X c`.
    pub fn amplitudes(&self, c: &StateVector) -> Vec<Complex64> {
        self.rows
            .iter()
            .map(|r| (r.amplitudes * c.as_vector())[0])
            .collect()
    }

    /// Event rates `|X_nu c|^2`.
    pub fn intensities(&self, c: &StateVector) -> Vec<f64> {
        self.amplitudes(c).iter().map(|m| m.norm_sqr()).collect()
    }

    /// Event rates `X_nu rho X_nu^dagger` of an (un-normalized) density matrix.
    pub fn mixed_intensities(&self, rho: &CMat3) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| (r.amplitudes * rho * r.amplitudes.adjoint())[0].re.max(0.0))
            .collect()
    }

    /// Fisher information `I = sum_nu t_nu X_nu^dagger X_nu`.
    pub fn fisher_information(&self) -> CMat3 {
        self.rows
            .iter()
            .zip(&self.exposures)
            .fold(CMat3::zeros(), |acc, (r, &t)| {
                acc + r.amplitudes.adjoint() * r.amplitudes * Complex64::new(t, 0.0)
            })
    }

    /// Ascending eigenvalues of the Fisher information.
    pub fn fisher_eigenvalues(&self) -> Vector3<f64> {
        linalg::hermitian_eigen(&self.fisher_information()).0
    }

    /// Errors unless the protocol has enough rows and an invertible Fisher
    /// information matrix.
    pub fn check_complete(&self) -> Result<()> {
        if self.len() < MIN_ROWS {
            return Err(Error::IncompleteProtocol(format!(
                "{} settings, at least {MIN_ROWS} are needed",
                self.len()
            )));
        }
        let ev = self.fisher_eigenvalues();
        if !(ev[0] > SINGULAR_RTOL * ev[2]) {
            return Err(Error::IncompleteProtocol(format!(
                "Fisher information is singular (eigenvalues {:.3e}, {:.3e}, {:.3e})",
                ev[0], ev[1], ev[2]
            )));
        }
        Ok(())
    }

    /// Rebuilds the protocol with every plate orientation offset by independent
    /// zero-mean Gaussian errors of standard deviation `sd` radians. Plates
    /// shared by all rows (the fixed arm plates of the control-plate
    /// protocol) receive one common offset.
    pub fn jittered<R: Rng + ?Sized>(&self, sd: f64, rng: &mut R) -> Result<Self> {
        if !(sd >= 0.0) || !sd.is_finite() {
            return Err(Error::InvalidArgument(format!("jitter {sd} must be >= 0")));
        }
        if sd == 0.0 {
            return Ok(self.clone());
        }
        let normal = Normal::new(0.0, sd).expect("finite positive sd");
        let shared = match self.rows.first().map(|r| &r.settings) {
            Some(RowSettings::ControlPlate { .. }) => {
                Some((normal.sample(rng), normal.sample(rng)))
            }
            _ => None,
        };
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let settings = match &row.settings {
                    RowSettings::BrownTwiss(bt) => {
                        RowSettings::BrownTwiss(bt.map_plates(|p| p.rotated(normal.sample(rng))))
                    }
                    RowSettings::ControlPlate { chi_s, theta_i, mu } => {
                        let (ds, di) = shared.unwrap_or((0.0, 0.0));
                        RowSettings::ControlPlate {
                            chi_s: chi_s + ds,
                            theta_i: theta_i + di,
                            mu: mu + normal.sample(rng),
                        }
                    }
                    RowSettings::Explicit => {
                        return row.clone();
                    }
                };
                ProtocolRow {
                    label: row.label.clone(),
                    amplitudes: row_from_settings(&settings).expect("plate-backed row"),
                    settings,
                }
            })
            .collect();
        Self::from_rows(self.kind.clone(), rows, self.exposures.clone())
    }

    /// SHA-256 over the instrumental matrix and exposures.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (row, t) in self.rows.iter().zip(&self.exposures) {
            for z in row.amplitudes.iter() {
                h.update(z.re.to_le_bytes());
                h.update(z.im.to_le_bytes());
            }
            h.update(t.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Amplitude row realized by a plate setting; `None` for explicit rows.
pub fn row_from_settings(settings: &RowSettings) -> Option<CRow3> {
    Some(match settings {
        RowSettings::Explicit => return None,
        RowSettings::BrownTwiss(bt) => bt.row(),
        RowSettings::ControlPlate { chi_s, theta_i, mu } => {
            control_row(*chi_s, *theta_i) * control_unitary(*mu)
        }
    })
}

/// The nine-setting Brown-Twiss protocol, each row exposed for `exposure` s.
pub fn build_protocol1(exposure: f64) -> Result<TomographyProtocol> {
    check_exposure(exposure)?;
    let rows = PROTOCOL1_SETTINGS
        .iter()
        .map(|&((cs, ts, ci, ti), moment)| {
            let bt = BrownTwissSetting::standard_deg(cs, ts, ci, ti);
            ProtocolRow {
                label: moment.to_string(),
                amplitudes: bt.row(),
                settings: RowSettings::BrownTwiss(bt),
            }
        })
        .collect();
    TomographyProtocol::from_rows(ProtocolKind::Protocol1, rows, vec![exposure; 9])
}

/// Default control-plate orientations: 0, 5, ..., 355 degrees.
pub fn default_orientations_deg() -> Vec<f64> {
    (0..72).map(|k| 5.0 * k as f64).collect()
}

/// Control-plate protocol: `X_i = l G(mu_i)` with `l` from [`control_row`] and
/// `G` a quarter-wave control plate at each orientation.
pub fn build_protocol2(
    chi_s_deg: f64,
    theta_i_deg: f64,
    orientations_deg: &[f64],
    exposure: f64,
) -> Result<TomographyProtocol> {
    check_exposure(exposure)?;
    if orientations_deg.len() < MIN_ROWS {
        return Err(Error::IncompleteProtocol(format!(
            "{} control-plate orientations, at least {MIN_ROWS} are needed",
            orientations_deg.len()
        )));
    }
    if ![chi_s_deg, theta_i_deg].iter().chain(orientations_deg).all(|a| a.is_finite()) {
        return Err(Error::InvalidArgument("plate angles must be finite".into()));
    }
    let (chi_s, theta_i) = (chi_s_deg.to_radians(), theta_i_deg.to_radians());
    let l = control_row(chi_s, theta_i);
    let rows = orientations_deg
        .iter()
        .map(|&mu_deg| {
            let mu = mu_deg.to_radians();
            ProtocolRow {
                label: format!("mu={mu_deg}"),
                amplitudes: l * control_unitary(mu),
                settings: RowSettings::ControlPlate { chi_s, theta_i, mu },
            }
        })
        .collect();
    TomographyProtocol::from_rows(ProtocolKind::Protocol2, rows, vec![exposure; orientations_deg.len()])
}

/// Control-plate protocol with the default plates and 72 orientations.
pub fn default_protocol2(exposure: f64) -> Result<TomographyProtocol> {
    build_protocol2(DEFAULT_CHI_S_DEG, DEFAULT_THETA_I_DEG, &default_orientations_deg(), exposure)
}

/// Protocol from arbitrary Brown-Twiss settings.
pub fn build_custom(settings: Vec<BrownTwissSetting>, exposure: f64) -> Result<TomographyProtocol> {
    check_exposure(exposure)?;
    let n = settings.len();
    let rows = settings
        .into_iter()
        .enumerate()
        .map(|(k, bt)| ProtocolRow {
            label: format!("custom-{}", k + 1),
            amplitudes: bt.row(),
            settings: RowSettings::BrownTwiss(bt),
        })
        .collect();
    TomographyProtocol::from_rows(ProtocolKind::Custom, rows, vec![exposure; n])
}

/// `|X_nu c|^2` for every row.
pub fn intensities(p: &TomographyProtocol, c: &StateVector) -> Vec<f64> {
    p.intensities(c)
}

/// Determinant of the Fisher information; 0 when it is singular.
pub fn design_metric(p: &TomographyProtocol) -> f64 {
    let ev = p.fisher_eigenvalues();
    if !(ev[0] > SINGULAR_RTOL * ev[2]) {
        return 0.0;
    }
    p.fisher_information().determinant().re
}

#[derive(Clone, Debug, Serialize)]
pub struct DesignOptimum {
    pub chi_s_deg: f64,
    pub theta_i_deg: f64,
    pub metric: f64,
    /// Every grid point whose metric matches the optimum to 1e-9 relative
    /// (sign and period images of the same design).
    pub equivalent: Vec<(f64, f64)>,
}

/// Grid search over the fixed arm plates of the control-plate protocol
/// (default orientations, unit exposure) maximizing [`design_metric`]. Both
/// angles range over `(-90, 90]` degrees.
pub fn optimize_protocol2(grid_step_deg: f64) -> Result<DesignOptimum> {
    if !(grid_step_deg > 0.0 && grid_step_deg <= 5.0) {
        return Err(Error::InvalidArgument(format!(
            "grid step {grid_step_deg} must lie in (0, 5] degrees"
        )));
    }
    let n = (180.0 / grid_step_deg).floor() as usize;
    let axis: Vec<f64> = (1..=n).map(|k| -90.0 + k as f64 * grid_step_deg).collect();
    let orientations = default_orientations_deg();
    let grid: Vec<(f64, f64, f64)> = axis
        .par_iter()
        .flat_map_iter(|&chi| {
            let orientations = &orientations;
            axis.iter().map(move |&theta| {
                let m = build_protocol2(chi, theta, orientations, 1.0)
                    .map(|p| design_metric(&p))
                    .unwrap_or(0.0);
                (chi, theta, m)
            })
        })
        .collect();
    let best = grid
        .iter()
        .copied()
        .fold((0.0, 0.0, f64::NEG_INFINITY), |a, b| if b.2 > a.2 { b } else { a });
    let equivalent = grid
        .iter()
        .filter(|g| (g.2 - best.2).abs() <= 1e-9 * best.2.abs())
        .map(|g| (g.0, g.1))
        .collect();
    Ok(DesignOptimum {
        chi_s_deg: best.0,
        theta_i_deg: best.1,
        metric: best.2,
        equivalent,
    })
}
