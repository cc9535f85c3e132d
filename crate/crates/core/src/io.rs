//! File formats: state and density JSON, plate and protocol JSON, the
//! instrumental-matrix CSV and the counts CSV with its JSON sidecar.
//!
//! Every parser reports failures as [`Error::Parse`] with a location
//! (`line:column` for JSON, `line N` for CSV) so a bad input file can be fixed
//! without guessing. Angles are degrees in every file; plate thickness is
//! radians or one of the words `half` / `quarter`.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{c, CMat3, CRow3};
use crate::optics::{WavePlateSetting, HALF_WAVE, QUARTER_WAVE};
use crate::protocol::{
    self, BrownTwissSetting, ProtocolKind, ProtocolRow, RowSettings, TomographyProtocol,
};
use crate::simulate::CountData;
use crate::state::{DensityMatrix, StateVector};

/// Version string written into every emitted file.
pub const TOOL_VERSION: &str = concat!("qutrit ", env!("CARGO_PKG_VERSION"));

fn json_error(what: &str, e: serde_json::Error) -> Error {
    // semantic errors raised after parsing carry no position
    let location = if e.line() == 0 {
        what.to_string()
    } else {
        format!("{what} {}:{}", e.line(), e.column())
    };
    Error::parse(location, e.to_string())
}

/// Wire form of a state vector: `{"re": [r1, r2, r3], "im": [i1, i2, i3]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateJson {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl TryFrom<StateJson> for StateVector {
    type Error = String;

    fn try_from(j: StateJson) -> std::result::Result<Self, String> {
        if j.re.len() != 3 || j.im.len() != 3 {
            return Err(format!(
                "state needs 3 real and 3 imaginary parts, got {} and {}",
                j.re.len(),
                j.im.len()
            ));
        }
        let v = StateVector::new(c(j.re[0], j.im[0]), c(j.re[1], j.im[1]), c(j.re[2], j.im[2]));
        if !v.is_finite() {
            return Err("state components must be finite".into());
        }
        Ok(v)
    }
}

impl From<StateVector> for StateJson {
    fn from(v: StateVector) -> Self {
        let z = v.components();
        StateJson {
            re: z.iter().map(|x| x.re).collect(),
            im: z.iter().map(|x| x.im).collect(),
        }
    }
}

/// Wire form of a density matrix: row-major `{"re": [[..]], "im": [[..]]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl TryFrom<DensityJson> for DensityMatrix {
    type Error = String;

    fn try_from(j: DensityJson) -> std::result::Result<Self, String> {
        let square = |m: &Vec<Vec<f64>>| m.len() == 3 && m.iter().all(|r| r.len() == 3);
        if !square(&j.re) || !square(&j.im) {
            return Err("density matrix must be 3x3 in both parts".into());
        }
        let m = CMat3::from_fn(|r, s| c(j.re[r][s], j.im[r][s]));
        DensityMatrix::new(m).map_err(|e| e.to_string())
    }
}

impl From<DensityMatrix> for DensityJson {
    fn from(d: DensityMatrix) -> Self {
        let m = d.matrix();
        DensityJson {
            re: (0..3).map(|r| (0..3).map(|s| m[(r, s)].re).collect()).collect(),
            im: (0..3).map(|r| (0..3).map(|s| m[(r, s)].im).collect()).collect(),
        }
    }
}

pub fn parse_state_json(text: &str) -> Result<StateVector> {
    serde_json::from_str(text).map_err(|e| json_error("state", e))
}

pub fn parse_density_json(text: &str) -> Result<DensityMatrix> {
    serde_json::from_str(text).map_err(|e| json_error("density", e))
}

/// Plate thickness: radians, or a named wave plate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaJson {
    Radians(f64),
    Named(NamedPlate),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedPlate {
    Half,
    Quarter,
}

impl DeltaJson {
    pub fn radians(self) -> f64 {
        match self {
            DeltaJson::Radians(d) => d,
            DeltaJson::Named(NamedPlate::Half) => HALF_WAVE,
            DeltaJson::Named(NamedPlate::Quarter) => QUARTER_WAVE,
        }
    }
}

/// `{"delta": 0.656 | "half" | "quarter", "angle_deg": 40}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateJson {
    pub delta: DeltaJson,
    pub angle_deg: f64,
}

impl PlateJson {
    pub fn to_setting(&self) -> Result<WavePlateSetting> {
        WavePlateSetting::from_degrees(self.delta.radians(), self.angle_deg)
    }
}

/// Plates of one Brown-Twiss setting, in the order the light meets them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingJson {
    pub signal: Vec<PlateJson>,
    pub idler: Vec<PlateJson>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolType {
    Protocol1,
    Protocol2,
    Custom,
}

/// Protocol description. `protocol2` fields default to the standard plates
/// and 72 orientations; `custom` takes an explicit list of Brown-Twiss
/// settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolJson {
    #[serde(rename = "type")]
    pub kind: ProtocolType,
    #[serde(default)]
    pub chi_s_deg: Option<f64>,
    #[serde(default)]
    pub theta_i_deg: Option<f64>,
    #[serde(default)]
    pub orientations_deg: Option<Vec<f64>>,
    #[serde(default)]
    pub exposure_s: Option<f64>,
    #[serde(default)]
    pub settings: Option<Vec<SettingJson>>,
}

/// Per-row exposure used when a protocol file gives none.
pub const DEFAULT_EXPOSURE_S: f64 = 1.0;

impl ProtocolJson {
    pub fn protocol1(exposure_s: f64) -> Self {
        ProtocolJson {
            kind: ProtocolType::Protocol1,
            chi_s_deg: None,
            theta_i_deg: None,
            orientations_deg: None,
            exposure_s: Some(exposure_s),
            settings: None,
        }
    }

    pub fn protocol2(exposure_s: f64) -> Self {
        ProtocolJson {
            kind: ProtocolType::Protocol2,
            exposure_s: Some(exposure_s),
            ..Self::protocol1(exposure_s)
        }
    }

    /// Builds the protocol. Incompleteness is not checked here.
    pub fn build(&self) -> Result<TomographyProtocol> {
        let t = self.exposure_s.unwrap_or(DEFAULT_EXPOSURE_S);
        let stray = |field: &str, present: bool| {
            if present {
                Err(Error::parse(
                    format!("protocol field {field}"),
                    format!("not used by {:?} protocols", self.kind).to_lowercase(),
                ))
            } else {
                Ok(())
            }
        };
        match self.kind {
            ProtocolType::Protocol1 => {
                stray("chi_s_deg", self.chi_s_deg.is_some())?;
                stray("theta_i_deg", self.theta_i_deg.is_some())?;
                stray("orientations_deg", self.orientations_deg.is_some())?;
                stray("settings", self.settings.is_some())?;
                protocol::build_protocol1(t)
            }
            ProtocolType::Protocol2 => {
                stray("settings", self.settings.is_some())?;
                let orientations = self
                    .orientations_deg
                    .clone()
                    .unwrap_or_else(protocol::default_orientations_deg);
                protocol::build_protocol2(
                    self.chi_s_deg.unwrap_or(protocol::DEFAULT_CHI_S_DEG),
                    self.theta_i_deg.unwrap_or(protocol::DEFAULT_THETA_I_DEG),
                    &orientations,
                    t,
                )
            }
            ProtocolType::Custom => {
                stray("chi_s_deg", self.chi_s_deg.is_some())?;
                stray("theta_i_deg", self.theta_i_deg.is_some())?;
                stray("orientations_deg", self.orientations_deg.is_some())?;
                let settings = self.settings.as_ref().ok_or_else(|| {
                    Error::parse("protocol field settings", "custom protocols need settings")
                })?;
                let mut out = Vec::with_capacity(settings.len());
                for (k, s) in settings.iter().enumerate() {
                    let arm = |plates: &[PlateJson], name: &str| {
                        plates
                            .iter()
                            .enumerate()
                            .map(|(j, p)| {
                                p.to_setting().map_err(|e| {
                                    Error::parse(format!("settings[{k}].{name}[{j}]"), e.to_string())
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    };
                    out.push(BrownTwissSetting {
                        signal: arm(&s.signal, "signal")?,
                        idler: arm(&s.idler, "idler")?,
                    });
                }
                protocol::build_custom(out, t)
            }
        }
    }
}

pub fn parse_protocol_json(text: &str) -> Result<ProtocolJson> {
    serde_json::from_str(text).map_err(|e| json_error("protocol", e))
}

const X_HEADER: [&str; 9] = ["nu", "label", "re1", "im1", "re2", "im2", "re3", "im3", "t"];
const COUNTS_HEADER: [&str; 3] = ["nu", "k", "t_s"];

/// `# key: value` lines placed above a CSV header.
pub fn comment_block(pairs: &[(&str, &str)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// Instrumental matrix as CSV, `nu` counted from 1.
pub fn write_x_csv(p: &TomographyProtocol, comments: &str) -> String {
    let mut w = csv_writer();
    w.write_record(X_HEADER).expect("in-memory write");
    for (nu, (row, t)) in p.rows().iter().zip(p.exposures()).enumerate() {
        let x = &row.amplitudes;
        w.write_record([
            (nu + 1).to_string(),
            row.label.clone(),
            x[0].re.to_string(),
            x[0].im.to_string(),
            x[1].re.to_string(),
            x[1].im.to_string(),
            x[2].re.to_string(),
            x[2].im.to_string(),
            t.to_string(),
        ])
        .expect("in-memory write");
    }
    format!("{comments}{}", finish(w))
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes())
}

fn record_line(r: &csv::StringRecord) -> String {
    r.position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "unknown line".into())
}

fn csv_error(e: csv::Error) -> Error {
    let location = e
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "csv".into());
    Error::parse(location, e.to_string())
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, want: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.iter().ne(want.iter().copied()) {
        return Err(Error::parse(
            record_line(&header),
            format!("expected header {}", want.join(",")),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(r: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    r[i].parse().map_err(|_| {
        Error::parse(
            format!("{}, column {name}", record_line(r)),
            format!("cannot parse {:?}", &r[i]),
        )
    })
}

fn check_nu(r: &csv::StringRecord, expected: usize) -> Result<()> {
    let nu: usize = field(r, 0, "nu")?;
    if nu != expected {
        return Err(Error::parse(
            format!("{}, column nu", record_line(r)),
            format!("rows must be numbered 1, 2, ...; expected {expected}, found {nu}"),
        ));
    }
    Ok(())
}

/// Reads an instrumental-matrix CSV back into an explicit protocol.
pub fn parse_x_csv(text: &str) -> Result<TomographyProtocol> {
    let mut rdr = csv_reader(text);
    check_header(&mut rdr, &X_HEADER)?;
    let mut rows = Vec::new();
    let mut exposures = Vec::new();
    for rec in rdr.records() {
        let r = rec.map_err(csv_error)?;
        check_nu(&r, rows.len() + 1)?;
        let mut v = [0.0f64; 6];
        for (j, x) in v.iter_mut().enumerate() {
            *x = field(&r, j + 2, X_HEADER[j + 2])?;
            if !x.is_finite() {
                return Err(Error::parse(
                    format!("{}, column {}", record_line(&r), X_HEADER[j + 2]),
                    "value must be finite",
                ));
            }
        }
        let t: f64 = field(&r, 8, "t")?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::parse(format!("{}, column t", record_line(&r)), "exposure must be positive"));
        }
        rows.push(ProtocolRow {
            label: r[1].to_string(),
            settings: RowSettings::Explicit,
            amplitudes: CRow3::new(c(v[0], v[1]), c(v[2], v[3]), c(v[4], v[5])),
        });
        exposures.push(t);
    }
    if rows.is_empty() {
        return Err(Error::parse("end of input", "no matrix rows"));
    }
    TomographyProtocol::from_rows(ProtocolKind::Custom, rows, exposures)
}

/// Counts as CSV, `nu` counted from 1.
pub fn write_counts_csv(d: &CountData, comments: &str) -> String {
    let mut w = csv_writer();
    w.write_record(COUNTS_HEADER).expect("in-memory write");
    for (nu, (k, t)) in d.counts().iter().zip(d.exposures()).enumerate() {
        w.write_record([(nu + 1).to_string(), k.to_string(), t.to_string()])
            .expect("in-memory write");
    }
    format!("{comments}{}", finish(w))
}

pub fn parse_counts_csv(text: &str) -> Result<CountData> {
    let mut rdr = csv_reader(text);
    check_header(&mut rdr, &COUNTS_HEADER)?;
    let mut counts = Vec::new();
    let mut exposures = Vec::new();
    for rec in rdr.records() {
        let r = rec.map_err(csv_error)?;
        check_nu(&r, counts.len() + 1)?;
        counts.push(field::<u64>(&r, 1, "k")?);
        let t: f64 = field(&r, 2, "t_s")?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::parse(format!("{}, column t_s", record_line(&r)), "exposure must be positive"));
        }
        exposures.push(t);
    }
    if counts.is_empty() {
        return Err(Error::parse("end of input", "no count rows"));
    }
    CountData::new(counts, exposures)
}

/// Truth recorded next to simulated counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthJson {
    Pure(StateVector),
    Mixture(Vec<(f64, StateVector)>),
}

/// JSON sidecar of a counts file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountsMeta {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub protocol_hash: String,
    pub total_events: u64,
    #[serde(default)]
    pub truth: Option<TruthJson>,
}

pub fn parse_counts_meta(text: &str) -> Result<CountsMeta> {
    serde_json::from_str(text).map_err(|e| json_error("counts metadata", e))
}
