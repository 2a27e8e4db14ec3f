//! Configuration, dataset and report file formats.
//!
//! Datasets are CSV with header `t,p1,p2,p3` plus a JSON sidecar next to the
//! CSV (`<file>.meta.json`). Floats are written in Rust's shortest
//! round-trip decimal form, so a written dataset reads back bit-identical.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{EstimateError, EstimateResult, MaximumKind, ScanPoint, SearchOptions};
use crate::likelihood::{LikelihoodError, SampleMeta, SampleSet};
use crate::mixing::{ObservationVector, Tolerances};
use crate::priors::PriorConfig;
use crate::validation::{AuditOptions, GradientReport};

pub const FORMAT_VERSION: &str = "1";
pub const FLOAT_FORMAT: &str = "shortest-roundtrip";
const DATASET_HEADER: [&str; 4] = ["t", "p1", "p2", "p3"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: LikelihoodError },
}

impl IoError {
    fn format(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub v_true: f64,
    pub n: usize,
    pub seed: u64,
    /// Additive observation noise; zero reproduces the exact model.
    pub noise_scale: f64,
    pub noise_seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            v_true: 0.6,
            n: 1000,
            seed: 0,
            noise_scale: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToleranceConfig {
    pub degeneracy: f64,
    pub clamp: f64,
    pub near_singular_cos: f64,
    pub fd_step: f64,
    pub richardson: bool,
    pub rel_floor: f64,
    pub audit_min_cos: f64,
    /// Gradient-audit grid points closer than this to 1/√2 are dropped.
    pub singular_exclusion: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        let t = Tolerances::default();
        let a = AuditOptions::default();
        ToleranceConfig {
            degeneracy: t.degeneracy,
            clamp: t.clamp,
            near_singular_cos: t.near_singular_cos,
            fd_step: a.fd_step,
            richardson: a.richardson,
            rel_floor: a.rel_floor,
            audit_min_cos: a.min_cos,
            singular_exclusion: 0.02,
        }
    }
}

/// Single JSON configuration document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub priors: PriorConfig,
    pub generate: GenerateConfig,
    pub search: SearchOptions,
    pub tolerances: ToleranceConfig,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = read_to_string(path)?;
        let cfg = Config::from_json(&text).map_err(|source| IoError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.priors
            .validate()
            .map_err(|e| IoError::format(path, e.to_string()))?;
        cfg.search_options()
            .validate()
            .map_err(|e| IoError::format(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn model_tolerances(&self) -> Tolerances {
        Tolerances {
            degeneracy: self.tolerances.degeneracy,
            clamp: self.tolerances.clamp,
            near_singular_cos: self.tolerances.near_singular_cos,
        }
    }

    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            tolerances: self.model_tolerances(),
            ..self.search
        }
    }

    pub fn audit_options(&self) -> AuditOptions {
        AuditOptions {
            fd_step: self.tolerances.fd_step,
            richardson: self.tolerances.richardson,
            rel_floor: self.tolerances.rel_floor,
            min_cos: self.tolerances.audit_min_cos,
            tolerances: self.model_tolerances(),
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| IoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(text)
}

/// Grid `lo:hi:step`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| ((self.lo + k as f64 * self.step) * 1e12).round() / 1e12)
            .collect()
    }
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, step] = parts.as_slice() else {
            return Err(format!("grid '{s}' is not of the form lo:hi:step"));
        };
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("grid '{s}': {e}"));
        let g = GridSpec {
            lo: num(lo)?,
            hi: num(hi)?,
            step: num(step)?,
        };
        if !(g.lo.is_finite() && g.hi.is_finite() && g.lo <= g.hi && g.step > 0.0) {
            return Err(format!("grid '{s}' needs lo <= hi and step > 0"));
        }
        Ok(g)
    }
}

/// Sidecar metadata written next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: String,
    pub float_format: String,
    pub n: usize,
    #[serde(flatten)]
    pub sample: SampleMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<PriorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped: Option<usize>,
}

pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Shortest representation that parses back to the same bits; exponent
/// notation for very small or large magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn write_dataset_csv<W: Write>(out: W, data: &[ObservationVector]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATASET_HEADER)?;
    for (t, x) in data.iter().enumerate() {
        w.write_record([t.to_string(), num(x.p1), num(x.p2), num(x.p3)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<R: Read>(input: R, path: &Path) -> Result<Vec<ObservationVector>, IoError> {
    let csv_err = |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != DATASET_HEADER {
        return Err(IoError::format(path, format!("expected header t,p1,p2,p3, found {:?}", header)));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| -> Result<f64, IoError> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| IoError::format(path, format!("row {row}, column {}: {e}", DATASET_HEADER[i])))
        };
        let t: usize = rec[0]
            .trim()
            .parse()
            .map_err(|e| IoError::format(path, format!("row {row}, column t: {e}")))?;
        if t != row {
            return Err(IoError::format(path, format!("row {row} has t = {t}")));
        }
        out.push(ObservationVector {
            p1: field(1)?,
            p2: field(2)?,
            p3: field(3)?,
        });
    }
    if out.is_empty() {
        return Err(IoError::format(path, "dataset has no rows"));
    }
    Ok(out)
}

/// Writes `<path>` and its sidecar.
pub fn save_dataset(path: &Path, data: &SampleSet, meta: &DatasetMeta) -> Result<(), IoError> {
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| IoError::Io { path: p, source }
    };
    let file = File::create(path).map_err(io_err(path))?;
    write_dataset_csv(file, data).map_err(|source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    let side = sidecar_path(path);
    let mut json = serde_json::to_string_pretty(meta).expect("metadata serializes");
    json.push('\n');
    std::fs::write(&side, json).map_err(io_err(&side))?;
    Ok(())
}

/// Reads a dataset and, when present, its sidecar metadata.
pub fn load_dataset(path: &Path) -> Result<SampleSet, IoError> {
    let file = File::open(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let observations = read_dataset_csv(file, path)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        let text = read_to_string(&side)?;
        let m: DatasetMeta = serde_json::from_str(&text).map_err(|source| IoError::Json {
            path: side.clone(),
            source,
        })?;
        if m.format_version != FORMAT_VERSION {
            return Err(IoError::format(&side, format!("unsupported format version {}", m.format_version)));
        }
        m.sample
    } else {
        SampleMeta::default()
    };
    SampleSet::new(observations, meta).map_err(|source| IoError::Data {
        path: path.to_path_buf(),
        source,
    })
}


pub fn write_audit_csv<W: Write>(out: W, reports: &[GradientReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "variant", "analytic", "fd", "abs_err", "rel_err", "skipped", "error"])?;
    for r in reports {
        w.write_record([
            num(r.v),
            r.variant.name().to_string(),
            num(r.analytic),
            num(r.fd),
            num(r.abs_err),
            num(r.rel_err),
            r.skipped.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scan_csv<W: Write>(out: W, points: &[ScanPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["v", "logl", "dlogl_dv", "excluded", "error"])?;
    for p in points {
        let row = match &p.result {
            Ok(e) => [num(p.v), num(e.logl), num(e.grad), e.excluded.to_string(), String::new()],
            Err(err) => [num(p.v), num(f64::NAN), num(f64::NAN), String::new(), err.to_string()],
        };
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Estimate outcome as written by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub status: String,
    pub v_hat: f64,
    pub logl_at_vhat: f64,
    pub grad_at_vhat: f64,
    pub n_evals: usize,
    pub excluded_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket: Option<(f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maximum: Option<MaximumKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    #[serde(default)]
    pub stationary_points: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feasible: Option<(f64, f64)>,
}

impl From<&EstimateResult> for EstimateReport {
    fn from(r: &EstimateResult) -> Self {
        EstimateReport {
            status: "ok".into(),
            v_hat: r.v_hat,
            logl_at_vhat: r.logl_at_vhat,
            grad_at_vhat: r.grad_at_vhat,
            n_evals: r.n_evals,
            excluded_samples: r.excluded_samples,
            bracket: Some(r.bracket),
            maximum: Some(r.maximum),
            converged: Some(r.converged),
            stationary_points: r.stationary_points.clone(),
            feasible: r.feasible,
        }
    }
}

impl EstimateReport {
    /// Report for a boundary-only result; `None` for other errors.
    pub fn from_error(e: &EstimateError) -> Option<Self> {
        match *e {
            EstimateError::NoInteriorMaximum {
                v_boundary,
                logl,
                grad,
                n_evals,
                excluded_samples,
            } => Some(EstimateReport {
                status: "no-interior-maximum".into(),
                v_hat: v_boundary,
                logl_at_vhat: logl,
                grad_at_vhat: grad,
                n_evals,
                excluded_samples,
                bracket: None,
                maximum: None,
                converged: None,
                stationary_points: Vec::new(),
                feasible: None,
            }),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen;
    use crate::mixing::MixingParam;
    use proptest::prelude::*;

    #[test]
    fn grid_parsing() {
        let g: GridSpec = "0.1:0.9:0.05".parse().unwrap();
        let p = g.points();
        assert_eq!(p.len(), 17);
        assert_eq!(p[0], 0.1);
        assert_eq!(p[11], 0.65);
        assert_eq!(p[16], 0.9);
        assert_eq!("0.6:0.6:0.1".parse::<GridSpec>().unwrap().points(), vec![0.6]);
        assert!("0.1:0.9".parse::<GridSpec>().is_err());
        assert!("0.9:0.1:0.1".parse::<GridSpec>().is_err());
        assert!("0.1:0.9:0".parse::<GridSpec>().is_err());
        assert!("a:0.9:0.1".parse::<GridSpec>().is_err());
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let cfg = Config::from_json("{}").unwrap();
        assert_eq!(cfg, Config::default());
        assert!(Config::from_json(r#"{"priors": {}, "extra": 1}"#).is_err());
        assert!(Config::from_json(r#"{"search": {"lo": 0.1, "typo": 2}}"#).is_err());
        let cfg = Config::from_json(r#"{"generate": {"n": 10, "seed": 3}, "tolerances": {"fd_step": 1e-4}}"#).unwrap();
        assert_eq!(cfg.generate.n, 10);
        assert_eq!(cfg.audit_options().fd_step, 1e-4);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let p = Path::new("mem.csv");
        assert!(read_dataset_csv("t,p1,p2,p3\n".as_bytes(), p).is_err());
        assert!(read_dataset_csv("".as_bytes(), p).is_err());
        assert!(read_dataset_csv("a,b,c,d\n0,1,2,3\n".as_bytes(), p).is_err());
        assert!(read_dataset_csv("t,p1,p2,p3\n1,0.1,0.2,0.3\n".as_bytes(), p).is_err());
    }

    #[test]
    fn dataset_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let cfg = PriorConfig::default();
        let data = datagen::generate(&cfg, MixingParam::new(0.6).unwrap(), 25, 5).unwrap();
        let meta = DatasetMeta {
            format_version: FORMAT_VERSION.into(),
            float_format: FLOAT_FORMAT.into(),
            n: data.len(),
            sample: data.meta().clone(),
            priors: Some(cfg),
            noise_scale: None,
            dropped: None,
        };
        save_dataset(&path, &data, &meta).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, data);
    }

    proptest! {
        #[test]
        fn csv_floats_round_trip_bit_exact(
            p in prop::collection::vec((1e-300f64..1.0, 1e-300f64..1.0, 0.0f64..=1.0), 1..20)
        ) {
            let obs: Vec<_> = p.iter().map(|&(p1, p2, p3)| ObservationVector { p1, p2, p3 }).collect();
            let mut buf = Vec::new();
            write_dataset_csv(&mut buf, &obs).unwrap();
            let back = read_dataset_csv(buf.as_slice(), Path::new("mem")).unwrap();
            for (a, b) in obs.iter().zip(&back) {
                prop_assert_eq!(a.p1.to_bits(), b.p1.to_bits());
                prop_assert_eq!(a.p2.to_bits(), b.p2.to_bits());
                prop_assert_eq!(a.p3.to_bits(), b.p3.to_bits());
            }
        }
    }
}
