//! CSV and JSON files read and written by the commands and pipelines.
//!
//! Numbers are written with 17 significant digits so that a write/read round
//! trip reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dynunc::{Cov, DigitalFilterU, FreqRespData, SpectrumU, TimeSeriesU, Uncertainty};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Relative tolerance on the spacing of the time column.
const SPACING_TOL: f64 = 1e-9;

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_num(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| CliError::format(path, format!("line {line}: `{field}` is not a number")))
}

/// Reads the header and numeric rows of a CSV file.
fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::format(path, e.to_string()))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        let line = i + 2;
        if rec.len() != header.len() {
            return Err(CliError::format(
                path,
                format!("line {line}: {} fields, header has {}", rec.len(), header.len()),
            ));
        }
        rows.push(rec.iter().map(|f| parse_num(path, line, f)).collect::<Result<Vec<_>>>()?);
    }
    Ok((header, rows))
}

/// Square matrix without header.
fn read_matrix(path: &Path, dim: usize) -> Result<Cov> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut data = Vec::with_capacity(dim * dim);
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e.to_string()))?;
        if rec.len() != dim {
            return Err(CliError::format(path, format!("row {} has {} columns, expected {dim}", i + 1, rec.len())));
        }
        for f in rec.iter() {
            data.push(parse_num(path, i + 1, f)?);
        }
        rows += 1;
    }
    if rows != dim {
        return Err(CliError::format(path, format!("{rows} rows, expected {dim}")));
    }
    Ok(Cov::from_row_slice(dim, dim, &data))
}

fn write_matrix(path: &Path, u: &Cov) -> Result<()> {
    let mut out = String::new();
    for i in 0..u.nrows() {
        let row: Vec<String> = u.row(i).iter().map(|v| num(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// `x.csv` -> `x.cov.csv`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.cov.csv"))
}

/// Reads `t,value[,unc]` with an optional full covariance in the sidecar
/// `<name>.cov.csv`. Without either the series is exact.
pub fn read_timeseries_csv(path: &Path) -> Result<TimeSeriesU> {
    let (header, rows) = read_table(path)?;
    let has_unc = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["t", "value"] => false,
        ["t", "value", "unc"] => true,
        _ => {
            return Err(CliError::format(
                path,
                format!("header must be `t,value` or `t,value,unc`, got `{}`", header.join(",")),
            ))
        }
    };
    let n = rows.len();
    if n < 2 {
        return Err(CliError::format(path, format!("need at least 2 samples, got {n}")));
    }
    let t0 = rows[0][0];
    let ts = (rows[n - 1][0] - t0) / (n - 1) as f64;
    if !(ts > 0.0) {
        return Err(CliError::format(path, "time column must increase"));
    }
    for (i, w) in rows.windows(2).enumerate() {
        let dt = w[1][0] - w[0][0];
        if (dt - ts).abs() > SPACING_TOL * ts {
            return Err(CliError::format(
                path,
                format!("non-uniform time grid at line {}: step {dt:e} vs mean {ts:e}", i + 3),
            ));
        }
    }
    let values: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    let side = sidecar_path(path);
    let unc = if side.exists() {
        if has_unc {
            log::warn!("{}: using covariance sidecar instead of the unc column", path.display());
        }
        Uncertainty::Full(read_matrix(&side, n)?)
    } else if has_unc {
        Uncertainty::Pointwise(rows.iter().map(|r| r[2]).collect())
    } else {
        Uncertainty::White(0.0)
    };
    TimeSeriesU::new(values, ts, t0, unc).map_err(|e| CliError::format(path, e.to_string()))
}

/// Writes `t,value,unc` (pointwise standard uncertainty). With `full_cov`
/// a full covariance is also written to the sidecar.
pub fn write_timeseries_csv(path: &Path, x: &TimeSeriesU, full_cov: bool) -> Result<()> {
    let mut out = String::from("t,value,unc\n");
    let sd = match x.unc() {
        Uncertainty::White(s) => vec![s.abs(); x.len()],
        Uncertainty::Pointwise(v) => v.clone(),
        Uncertainty::Full(_) => x.std_unc(),
    };
    for (i, (v, u)) in x.values().iter().zip(&sd).enumerate() {
        let t = x.t0() + i as f64 * x.ts();
        writeln!(out, "{},{},{}", num(t), num(*v), num(*u)).expect("write to string");
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))?;
    if full_cov {
        if let Uncertainty::Full(u) = x.unc() {
            write_matrix(&sidecar_path(path), u)?;
        }
    }
    Ok(())
}

/// Writes `f,re,im,unc_re,unc_im`.
pub fn write_spectrum_csv(path: &Path, f: &SpectrumU) -> Result<()> {
    let m = f.bins();
    let u = f.cov();
    let mut out = String::from("f,re,im,unc_re,unc_im\n");
    for k in 0..m {
        let v = f.value(k);
        writeln!(
            out,
            "{},{},{},{},{}",
            num(f.freqs()[k]),
            num(v.re),
            num(v.im),
            num(u[(k, k)].max(0.0).sqrt()),
            num(u[(m + k, m + k)].max(0.0).sqrt())
        )
        .expect("write to string");
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Reads a frequency response `f,re,im[,unc_re,unc_im]`; a sidecar holds the
/// full `2M×2M` covariance over the stacked real and imaginary parts.
pub fn read_freqresp_csv(path: &Path) -> Result<FreqRespData> {
    let (header, rows) = read_table(path)?;
    let has_unc = match header.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["f", "re", "im"] => false,
        ["f", "re", "im", "unc_re", "unc_im"] => true,
        _ => {
            return Err(CliError::format(
                path,
                format!("header must be `f,re,im` or `f,re,im,unc_re,unc_im`, got `{}`", header.join(",")),
            ))
        }
    };
    let m = rows.len();
    let freqs: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let values: Vec<Complex64> = rows.iter().map(|r| Complex64::new(r[1], r[2])).collect();
    let side = sidecar_path(path);
    let cov = if side.exists() {
        Some(read_matrix(&side, 2 * m)?)
    } else if has_unc {
        let mut u = Cov::zeros(2 * m, 2 * m);
        for (k, r) in rows.iter().enumerate() {
            u[(k, k)] = r[3] * r[3];
            u[(m + k, m + k)] = r[4] * r[4];
        }
        Some(u)
    } else {
        None
    };
    FreqRespData::new(freqs, values, cov).map_err(|e| CliError::format(path, e.to_string()))
}

pub fn write_freqresp_csv(path: &Path, h: &FreqRespData) -> Result<()> {
    let m = h.len();
    let mut out = String::from("f,re,im,unc_re,unc_im\n");
    for k in 0..m {
        let (ur, ui) = h
            .cov()
            .map(|u| (u[(k, k)].max(0.0).sqrt(), u[(m + k, m + k)].max(0.0).sqrt()))
            .unwrap_or((0.0, 0.0));
        let v = h.values()[k];
        writeln!(out, "{},{},{},{},{}", num(h.freqs()[k]), num(v.re), num(v.im), num(ur), num(ui))
            .expect("write to string");
    }
    fs::write(path, out).map_err(|e| CliError::io(path, e))
}

/// Serialized form of a digital filter and its coefficient covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRecord {
    pub b: Vec<f64>,
    pub a: Vec<f64>,
    /// Covariance over `b` followed by `a[1..]`, row by row.
    pub uba: Vec<Vec<f64>>,
    pub delay_n0: usize,
}

impl From<&DigitalFilterU> for FilterRecord {
    fn from(f: &DigitalFilterU) -> Self {
        let u = f.uba();
        FilterRecord {
            b: f.b().to_vec(),
            a: f.a().to_vec(),
            uba: (0..u.nrows()).map(|i| u.row(i).iter().copied().collect()).collect(),
            delay_n0: f.delay_n0(),
        }
    }
}

impl FilterRecord {
    pub fn to_filter(&self) -> dynunc::Result<DigitalFilterU> {
        let n = self.uba.len();
        let flat: Vec<f64> = self.uba.iter().flatten().copied().collect();
        if flat.len() != n * n {
            return Err(dynunc::Error::Dimension("uba must be square".into()));
        }
        DigitalFilterU::new(self.b.clone(), self.a.clone(), Cov::from_row_slice(n, n, &flat), self.delay_n0)
    }
}

pub fn write_filter_json(path: &Path, f: &DigitalFilterU) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&FilterRecord::from(f)).expect("filter serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_filter_json(path: &Path) -> Result<DigitalFilterU> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let rec: FilterRecord = serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
    rec.to_filter().map_err(|e| CliError::format(path, e.to_string()))
}

/// Ordered `key = value` lines plus warnings, written as `report.txt`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub title: String,
    lines: Vec<(String, String)>,
    warnings: Vec<String>,
}

impl Report {
    pub fn new(title: impl Into<String>) -> Self {
        Report {
            title: title.into(),
            ..Default::default()
        }
    }

    pub fn text(&mut self, key: &str, value: impl Into<String>) {
        self.lines.push((key.to_string(), value.into()));
    }

    pub fn value(&mut self, key: &str, v: f64) {
        self.text(key, format!("{v:.9e}"));
    }

    pub fn value_u(&mut self, key: &str, v: f64, u: f64) {
        self.text(key, format!("{v:.9e} +/- {u:.3e}"));
    }

    pub fn count(&mut self, key: &str, n: usize) {
        self.text(key, n.to_string());
    }

    pub fn flag(&mut self, key: &str, ok: bool) {
        self.text(key, if ok { "yes" } else { "no" });
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            writeln!(out, "# {}", self.title).expect("write to string");
        }
        for (k, v) in &self.lines {
            writeln!(out, "{k} = {v}").expect("write to string");
        }
        for w in &self.warnings {
            writeln!(out, "warning: {w}").expect("write to string");
        }
        out
    }
}

/// Everything a command or pipeline may emit.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub estimate: Option<TimeSeriesU>,
    pub spectrum: Option<SpectrumU>,
    pub filter: Option<DigitalFilterU>,
    pub report: Report,
}

/// Writes `estimate.csv`, `spectrum.csv`, `filter.json` (each when present)
/// and always `report.txt` into `dir`, returning the paths in that order.
pub fn write_results(dir: &Path, artifacts: &Artifacts) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut written = Vec::new();
    if let Some(x) = &artifacts.estimate {
        let p = dir.join("estimate.csv");
        write_timeseries_csv(&p, x, false)?;
        written.push(p);
    }
    if let Some(f) = &artifacts.spectrum {
        let p = dir.join("spectrum.csv");
        write_spectrum_csv(&p, f)?;
        written.push(p);
    }
    if let Some(f) = &artifacts.filter {
        let p = dir.join("filter.json");
        write_filter_json(&p, f)?;
        written.push(p);
    }
    let p = dir.join("report.txt");
    fs::write(&p, artifacts.report.render()).map_err(|e| CliError::io(&p, e))?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t,value\n0,1\n0.001,2\n").unwrap();
        let x = read_timeseries_csv(&p).unwrap();
        assert_eq!(x.len(), 2);
        assert!((x.ts() - 1e-3).abs() < 1e-18);
        assert!(x.unc().is_zero());
    }

    #[test]
    fn unc_column_gives_pointwise_uncertainty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t,value,unc\n0,1,0.1\n1,2,0.2\n2,3,0.3\n").unwrap();
        let x = read_timeseries_csv(&p).unwrap();
        assert_eq!(x.unc(), &Uncertainty::Pointwise(vec![0.1, 0.2, 0.3]));
    }

    #[test]
    fn irregular_time_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t,value\n0,1\n1,2\n2.5,3\n").unwrap();
        let err = read_timeseries_csv(&p).unwrap_err();
        assert!(err.to_string().contains("non-uniform"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn sidecar_must_match_length() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "t,value\n0,1\n1,2\n2,3\n").unwrap();
        fs::write(sidecar_path(&p), "1,0\n0,1\n").unwrap();
        assert!(read_timeseries_csv(&p).is_err());
        fs::write(sidecar_path(&p), "1,0,0\n0,1,0\n0,0,1\n").unwrap();
        let x = read_timeseries_csv(&p).unwrap();
        assert!(matches!(x.unc(), Uncertainty::Full(_)));
    }

    #[test]
    fn bad_header_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        fs::write(&p, "time,v\n0,1\n1,2\n").unwrap();
        assert!(matches!(read_timeseries_csv(&p), Err(CliError::Format { .. })));
    }

    #[test]
    fn report_renders_in_insertion_order() {
        let mut r = Report::new("demo");
        r.value("b", 2.0);
        r.count("a", 3);
        r.warn("careful");
        assert_eq!(r.render(), "# demo\nb = 2.000000000e0\na = 3\nwarning: careful\n");
        assert_eq!(r.get("a"), Some("3"));
    }

    #[test]
    fn empty_artifacts_write_report_only() {
        let dir = tempfile::tempdir().unwrap();
        let written = write_results(dir.path(), &Artifacts::default()).unwrap();
        assert_eq!(written, vec![dir.path().join("report.txt")]);
        let entries = fs::read_dir(dir.path()).unwrap().count();
        assert_eq!(entries, 1);
    }

    #[test]
    fn filter_record_round_trip() {
        let mut u = Cov::zeros(3, 3);
        u[(0, 0)] = 1e-4;
        u[(2, 2)] = 2e-6;
        let f = DigitalFilterU::new(vec![0.5, 0.25], vec![1.0, -0.3], u, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("filter.json");
        write_filter_json(&p, &f).unwrap();
        assert_eq!(read_filter_json(&p).unwrap(), f);
    }
}
