//! Experiment records and their on-disk form.
//!
//! `report.txt` and `certificate.txt` are TOML so they can be read back with
//! the same parser as configs; `timeseries.csv` holds one row per recorded
//! time. Wall-clock time goes to `timing.txt` so the other three files are a
//! pure function of `(config, seed)`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certificate::StabilityCertificate;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `measured <= bound + tolerance`
    AtMost,
    /// `measured > bound - tolerance`
    Above,
}

/// One checked inequality with the numbers that decided it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub measured: f64,
    pub relation: Relation,
    pub bound: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Verdict {
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: Relation::AtMost,
            bound,
            tolerance,
            pass: measured <= bound + tolerance,
            note: String::new(),
        }
    }

    pub fn above(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: Relation::Above,
            bound,
            tolerance,
            pass: measured > bound - tolerance,
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Certificate constants in the selected mode plus `β` under every mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSnapshot {
    pub beta_mode: String,
    pub lambda0: f64,
    pub lambda1: f64,
    pub beta: f64,
    pub alpha: f64,
    pub l_f: f64,
    pub l_sigma: f64,
    pub l_gamma: f64,
    pub a: f64,
    pub epsilon: f64,
    pub omega: f64,
    pub stable: bool,
    pub beta_sharp: f64,
    pub beta_remark_bounded: f64,
    /// Absent when `D1 != -D0^T`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_remark_skew: Option<f64>,
}

impl CertificateSnapshot {
    pub fn new(
        mode: &str,
        cert: &StabilityCertificate<f64>,
        beta_sharp: f64,
        beta_remark_bounded: f64,
        beta_remark_skew: Option<f64>,
    ) -> Self {
        Self {
            beta_mode: mode.to_string(),
            lambda0: cert.lambda0,
            lambda1: cert.lambda1,
            beta: cert.beta,
            alpha: cert.alpha,
            l_f: cert.l_f,
            l_sigma: cert.l_sigma,
            l_gamma: cert.l_gamma,
            a: cert.a,
            epsilon: cert.epsilon,
            omega: cert.omega,
            stable: cert.stable,
            beta_sharp,
            beta_remark_bounded,
            beta_remark_skew,
        }
    }
}

/// Named columns of numbers, one row per recorded time or instance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io {
            path: "timeseries.csv".into(),
            message: e.to_string(),
        };
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io {
            path: "timeseries.csv".into(),
            message: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub experiment: String,
    pub command: String,
    pub seed: u64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<CertificateSnapshot>,
    #[serde(default)]
    pub verdicts: Vec<Verdict>,
    #[serde(skip)]
    pub series: TimeSeries,
    #[serde(skip)]
    pub wall_clock_s: f64,
}

impl ReportRecord {
    pub fn new(experiment: &str, command: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.to_string(),
            command: command.to_string(),
            seed,
            pass: true,
            certificate: None,
            verdicts: Vec::new(),
            series: TimeSeries::default(),
            wall_clock_s: 0.0,
        }
    }

    pub fn push(&mut self, v: Verdict) {
        self.pass &= v.pass;
        self.verdicts.push(v);
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.pass)
    }

    pub fn report_text(&self) -> String {
        toml::to_string(self).expect("report serialises")
    }

    pub fn certificate_text(&self) -> String {
        self.certificate
            .as_ref()
            .map(|c| toml::to_string(c).expect("certificate serialises"))
            .unwrap_or_default()
    }

    /// Reads `report.txt` back. The time series and wall clock are not part
    /// of that file.
    pub fn from_report_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub timeseries: PathBuf,
    pub report: PathBuf,
    pub certificate: PathBuf,
    pub timing: PathBuf,
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Writes `timeseries.csv`, `report.txt`, `certificate.txt` and `timing.txt`
/// into `dir`, creating it if needed.
pub fn emit_report(record: &ReportRecord, dir: &Path) -> Result<ReportFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let files = ReportFiles {
        timeseries: dir.join("timeseries.csv"),
        report: dir.join("report.txt"),
        certificate: dir.join("certificate.txt"),
        timing: dir.join("timing.txt"),
    };
    write(&files.timeseries, &record.series.to_csv()?)?;
    write(&files.report, &record.report_text())?;
    write(&files.certificate, &record.certificate_text())?;
    write(&files.timing, &format!("wall_clock_s = {}\n", record.wall_clock_s))?;
    Ok(files)
}
