//! Experiment configuration and file formats.
//!
//! Map CSV layout: the first row holds the frequency axis (GHz) after a
//! corner cell, every following row starts with the field (mT). Values are
//! written with 17 significant digits so a write/read cycle is lossless.
//! JSON documents carry a top-level `schema_version`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::afm_modes::{Branch, MagnetParams, StackingConfig};
use crate::error::{Error, Result};
use crate::hybrid_response::{
    self, ChiralReference, CouplingParams, Drive, FieldSweep, FreqAxis, MapOptions, RealMap, SpectrumMap,
};
use crate::saturation::{self, SaturationParams};
use crate::spin_levels::SpinEnsembleParams;
use crate::units::dbm_to_mw;

pub const SCHEMA_VERSION: &str = "1";
const CORNER: &str = "b0_mT/f_GHz";

fn default_threshold_mw() -> f64 {
    1.0
}

/// Saturation inputs; the spin rates come from the coupling section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaturationSection {
    /// MHz² per mW. When absent, calibrated so strong coupling is lost at
    /// `threshold_mw`.
    #[serde(default)]
    pub alpha: Option<f64>,
    pub gamma_par: f64,
    #[serde(default = "default_threshold_mw")]
    pub threshold_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub magnet: MagnetParams,
    pub spins: Vec<SpinEnsembleParams>,
    pub field_sweep: FieldSweep,
    pub f_axis: FreqAxis,
    pub coupling: CouplingParams,
    #[serde(default)]
    pub saturation: Option<SaturationSection>,
    /// Replaces the single magnon mode by a faulted layer chain; its fault
    /// pattern is drawn from the top-level seed.
    #[serde(default)]
    pub stacking: Option<StackingConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub branch: Option<Branch>,
    /// Scale couplings by the chiral projection relative to this geometry.
    #[serde(default)]
    pub chiral_reference: Option<ChiralReference>,
    /// Drive power at the sample input; needs a saturation section.
    #[serde(default)]
    pub power_dbm: Option<f64>,
}

fn path_error(err: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = err.path().to_string();
    let inner = err.into_inner();
    if inner.is_eof() || inner.is_syntax() {
        return Error::Parse(inner.to_string());
    }
    Error::validation(if path == "." { "config".to_string() } else { path }, inner.to_string())
}

/// Deserializes JSON with field-path-qualified errors.
pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(path_error)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = from_json_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.magnet.validate().map_err(|e| e.under("magnet"))?;
        if self.spins.is_empty() {
            return Err(Error::validation("spins", "need at least one spin ensemble"));
        }
        for (i, s) in self.spins.iter().enumerate() {
            s.validate().map_err(|e| e.under(&format!("spins[{i}]")))?;
        }
        self.field_sweep.validate()?;
        self.f_axis.validate()?;
        self.coupling.validate().map_err(|e| e.under("coupling"))?;
        if let Some(st) = &self.stacking {
            st.validate().map_err(|e| e.under("stacking"))?;
        }
        if let Some(sat) = &self.saturation {
            if !(sat.gamma_par.is_finite() && sat.gamma_par >= 0.0) {
                return Err(Error::validation("saturation.gamma_par", "must be >= 0"));
            }
            if let Some(a) = sat.alpha {
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::validation("saturation.alpha", "must be >= 0"));
                }
            }
        }
        if self.power_dbm.is_some() && self.saturation.is_none() {
            return Err(Error::validation("power_dbm", "drive power needs a saturation section"));
        }
        Ok(())
    }

    /// Saturation parameters with `α` calibrated when not given.
    pub fn saturation_params(&self) -> Result<Option<SaturationParams>> {
        let Some(sec) = &self.saturation else {
            return Ok(None);
        };
        let cp = &self.coupling;
        let alpha = match sec.alpha {
            Some(a) => a,
            None => saturation::calibrate_alpha(cp.g, cp.kappa(), cp.gamma(), sec.threshold_mw, sec.gamma_par, cp.gamma_i)
                .map_err(|e| e.under("saturation"))?,
        };
        Ok(Some(SaturationParams {
            alpha,
            gamma_par: sec.gamma_par,
            gamma_e: cp.gamma_e,
            gamma_i: cp.gamma_i,
        }))
    }

    pub fn map_options(&self) -> Result<MapOptions> {
        let drive = match (self.power_dbm, self.saturation_params()?) {
            (Some(dbm), Some(sp)) => Some(Drive {
                saturation: sp,
                power_mw: dbm_to_mw(dbm),
            }),
            _ => None,
        };
        Ok(MapOptions {
            branch: self.branch,
            chiral: self.chiral_reference,
            stacking: self.stacking.map(|s| StackingConfig { seed: self.seed, ..s }),
            drive,
            seed: self.seed,
        })
    }

    pub fn simulate(&self) -> Result<SpectrumMap> {
        self.validate()?;
        hybrid_response::spectrum_map(
            &self.magnet,
            &self.spins,
            &self.field_sweep,
            &self.f_axis,
            &self.coupling,
            &self.map_options()?,
        )
    }
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(cell: &str, row: usize, col: usize) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {row}, column {col}: not a number: {cell:?}")))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn real_map_to_csv(map: &RealMap) -> Result<String> {
    map.validate()?;
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let mut header = vec![CORNER.to_string()];
    header.extend(map.f_axis_ghz.iter().map(|&f| fmt_f64(f)));
    w.write_record(&header).map_err(csv_error)?;
    for (i, &b) in map.b0_axis_mt.iter().enumerate() {
        let mut rec = vec![fmt_f64(b)];
        rec.extend(map.row(i).iter().map(|&v| fmt_f64(v)));
        w.write_record(&rec).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn real_map_from_csv(text: &str) -> Result<RealMap> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Parse("empty map file".into()))?
        .map_err(csv_error)?;
    if header.len() < 2 {
        return Err(Error::Parse("header row has no frequency columns".into()));
    }
    let f_axis_ghz = header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(c, s)| parse_f64(s, 1, c + 1))
        .collect::<Result<Vec<_>>>()?;
    let mut b0_axis_mt = Vec::new();
    let mut values = Vec::new();
    for (k, rec) in records.enumerate() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("row {} has {} cells, expected {}", k + 2, rec.len(), header.len())));
        }
        b0_axis_mt.push(parse_f64(&rec[0], k + 2, 1)?);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            values.push(parse_f64(cell, k + 2, c + 1)?);
        }
    }
    if b0_axis_mt.is_empty() {
        return Err(Error::Parse("map has no field rows".into()));
    }
    let map = RealMap {
        b0_axis_mt,
        f_axis_ghz,
        values,
        metadata: serde_json::Value::Null,
    };
    map.validate()?;
    Ok(map)
}

/// Companion file holding the phase of a complex map: `x.csv` → `x.phase.csv`.
pub fn phase_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.phase.csv"))
}

/// Writes `|S21|` to `path` and, when `with_phase`, `arg S21` to the companion file.
pub fn write_spectrum_csv(path: &Path, map: &SpectrumMap, with_phase: bool) -> Result<()> {
    write_text(path, &real_map_to_csv(&map.magnitude())?)?;
    if with_phase {
        write_text(&phase_path(path), &real_map_to_csv(&map.phase())?)?;
    }
    Ok(())
}

/// Rebuilds a complex map from a magnitude CSV and its phase companion.
pub fn read_spectrum_csv(path: &Path) -> Result<SpectrumMap> {
    let mag = real_map_from_csv(&read_text(path)?)?;
    let phase = real_map_from_csv(&read_text(&phase_path(path))?)?;
    if phase.b0_axis_mt != mag.b0_axis_mt || phase.f_axis_ghz != mag.f_axis_ghz {
        return Err(Error::Parse("phase companion has different axes".into()));
    }
    Ok(SpectrumMap {
        s21: mag
            .values
            .iter()
            .zip(&phase.values)
            .map(|(&r, &t)| Complex64::from_polar(r, t))
            .collect(),
        b0_axis_mt: mag.b0_axis_mt,
        f_axis_ghz: mag.f_axis_ghz,
        metadata: serde_json::Value::Null,
    })
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: &'static str,
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Deserialize)]
struct VersionedIn<T> {
    schema_version: String,
    kind: String,
    #[serde(flatten)]
    body: T,
}

/// Versioned JSON document of the given kind.
pub fn to_json<T: Serialize>(kind: &str, body: &T) -> Result<String> {
    serde_json::to_string_pretty(&Versioned {
        schema_version: SCHEMA_VERSION,
        kind,
        body,
    })
    .map(|mut s| {
        s.push('\n');
        s
    })
    .map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let doc: VersionedIn<T> = from_json_str(text)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::validation(
            "schema_version",
            format!("unsupported version {:?}, expected {SCHEMA_VERSION:?}", doc.schema_version),
        ));
    }
    if doc.kind != kind {
        return Err(Error::validation("kind", format!("expected {kind:?}, found {:?}", doc.kind)));
    }
    Ok(doc.body)
}

pub const SPECTRUM_KIND: &str = "spectrum_map";
pub const REAL_MAP_KIND: &str = "real_map";

/// Loads `|S21|` from a CSV map or a JSON spectrum/real map.
pub fn read_magnitude_map(path: &Path) -> Result<RealMap> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Err(Error::Parse(format!("{} is empty", path.display())));
    }
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) || text.trim_start().starts_with('{');
    if !is_json {
        return real_map_from_csv(&text);
    }
    let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    match probe.get("kind").and_then(|k| k.as_str()) {
        Some(REAL_MAP_KIND) => {
            let m: RealMap = from_json(REAL_MAP_KIND, &text)?;
            m.validate()?;
            Ok(m)
        }
        _ => {
            let m: SpectrumMap = from_json(SPECTRUM_KIND, &text)?;
            m.validate()?;
            Ok(m.magnitude())
        }
    }
}

/// Plain CSV table with one header row.
pub fn table_to_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}
