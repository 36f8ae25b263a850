//! Convergence reports and their serialized forms.
//!
//! Emission is byte-stable: identical reports produce identical files,
//! and a fixed seed produces identical reports across runs and worker
//! counts. The timestamp field stays empty unless explicitly stamped,
//! precisely so that determinism holds.

use crate::error::{Error, Result};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One ladder level: parameters and error statistics.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ReportRow {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub radius: f64,
    /// Sample mean of `max_i max_x |e|^2`.
    pub mse: f64,
    pub rmse: f64,
    /// Standard error of the `mse` estimate (0 for a single sample).
    pub stderr: f64,
    pub samples: usize,
}

/// Least-squares line through the admitted levels.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SlopeFit {
    /// Abscissa the fit ran over: `log_h`, `log_tau`, or `radius_sq`.
    pub axis: String,
    /// Ordinate: `log_rmse` or `log_mse`.
    pub ordinate: String,
    pub slope: f64,
    pub intercept: f64,
    /// Root mean squared fit residual.
    pub residual: f64,
    pub points_used: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ConvergenceReport {
    pub study: String,
    pub problem: String,
    /// What the errors were measured against.
    pub reference: String,
    pub nu: f64,
    pub samples: usize,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
    pub fit: Option<SlopeFit>,
    /// Samples lost to solver failures.
    pub failures: usize,
    /// False when more than 5 percent of samples failed.
    pub valid: bool,
    /// Hash over the per-sample noise origins actually consumed; equal
    /// ladder levels within a sample share one ancestor path.
    pub coupling_fingerprint: String,
    pub config_echo: Vec<(String, String)>,
    /// Empty by default; stamp explicitly when provenance matters more
    /// than byte-reproducibility.
    pub timestamp: String,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn fit_line(axis: &str, ordinate: &str, xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum::<f64>()
        / nf)
        .sqrt();
    Some(SlopeFit {
        axis: axis.to_string(),
        ordinate: ordinate.to_string(),
        slope,
        intercept,
        residual,
        points_used: n,
    })
}

/// Output formats for [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Csv,
    Json,
    GnuplotDat,
}

impl EmitFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Json => "json",
            Self::GnuplotDat => "dat",
        }
    }
}

impl std::str::FromStr for EmitFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "dat" | "gnuplot" | "gnuplot-dat" => Ok(Self::GnuplotDat),
            other => Err(format!("unknown format `{other}` (csv, json, gnuplot-dat)")),
        }
    }
}

pub fn write_csv<W: Write>(report: &ConvergenceReport, mut w: W) -> Result<()> {
    writeln!(w, "level,h,tau,R,mse,rmse,stderr,samples")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.level, r.h, r.tau, r.radius, r.mse, r.rmse, r.stderr, r.samples
        )?;
    }
    Ok(())
}

pub fn write_json<W: Write>(report: &ConvergenceReport, mut w: W) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

fn log10_or_nan(v: f64) -> f64 {
    if v > 0.0 {
        v.log10()
    } else {
        f64::NAN
    }
}

pub fn write_gnuplot<W: Write>(report: &ConvergenceReport, mut w: W) -> Result<()> {
    writeln!(
        w,
        "# study={} problem={} reference={} seed={}",
        report.study, report.problem, report.reference, report.seed
    )?;
    writeln!(
        w,
        "# level h tau R mse rmse stderr samples log10_h log10_tau R_sq log10_mse log10_rmse"
    )?;
    for r in &report.rows {
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {} {} {}",
            r.level,
            r.h,
            r.tau,
            r.radius,
            r.mse,
            r.rmse,
            r.stderr,
            r.samples,
            log10_or_nan(r.h),
            log10_or_nan(r.tau),
            r.radius * r.radius,
            log10_or_nan(r.mse),
            log10_or_nan(r.rmse),
        )?;
    }
    Ok(())
}

/// Writes `<study>.<ext>` for every requested format into `dir`,
/// returning the paths.
pub fn emit(
    report: &ConvergenceReport,
    formats: &[EmitFormat],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for fmt in formats {
        let path = dir.join(format!("{}.{}", report.study, fmt.extension()));
        let file = std::fs::File::create(&path)?;
        let mut buf = std::io::BufWriter::new(file);
        match fmt {
            EmitFormat::Csv => write_csv(report, &mut buf)?,
            EmitFormat::Json => write_json(report, &mut buf)?,
            EmitFormat::GnuplotDat => write_gnuplot(report, &mut buf)?,
        }
        buf.flush()?;
        out.push(path);
    }
    Ok(out)
}

/// Serializes a report to the in-memory bytes of one format (used by
/// the byte-reproducibility checks).
pub fn to_bytes(report: &ConvergenceReport, format: EmitFormat) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    match format {
        EmitFormat::Csv => write_csv(report, &mut buf)?,
        EmitFormat::Json => write_json(report, &mut buf)?,
        EmitFormat::GnuplotDat => write_gnuplot(report, &mut buf)?,
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report(rows: Vec<ReportRow>) -> ConvergenceReport {
        ConvergenceReport {
            study: "converge-space".into(),
            problem: "heat".into(),
            reference: "analytic".into(),
            nu: 0.9,
            samples: 1,
            seed: 7,
            rows,
            fit: None,
            failures: 0,
            valid: true,
            coupling_fingerprint: "deadbeef".into(),
            config_echo: vec![("h".into(), "0.2".into())],
            timestamp: String::new(),
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let mut buf = Vec::new();
        write_csv(&sample_report(vec![]), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "level,h,tau,R,mse,rmse,stderr,samples\n"
        );
    }

    #[test]
    fn one_row_has_eight_fields() {
        let mut buf = Vec::new();
        let row = ReportRow {
            level: 0,
            h: 0.2,
            tau: 1e-4,
            radius: 10.0,
            mse: 1e-6,
            rmse: 1e-3,
            stderr: 0.0,
            samples: 1,
        };
        write_csv(&sample_report(vec![row]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line.split(',').count(), 8);
    }

    #[test]
    fn emission_is_byte_stable() {
        let row = ReportRow {
            level: 1,
            h: 0.1,
            tau: 0.001,
            radius: 8.0,
            mse: 3.5e-5,
            rmse: 5.916079783099616e-3,
            stderr: 1e-6,
            samples: 20,
        };
        let report = sample_report(vec![row]);
        for fmt in [EmitFormat::Csv, EmitFormat::Json, EmitFormat::GnuplotDat] {
            assert_eq!(
                to_bytes(&report, fmt).unwrap(),
                to_bytes(&report, fmt).unwrap()
            );
        }
    }

    #[test]
    fn line_fit_recovers_an_exact_slope() {
        let xs: Vec<f64> = (1..=5).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let fit = fit_line("log_h", "log_rmse", &xs, &ys).unwrap();
        assert!((fit.slope - 2.5).abs() < 1e-12);
        assert!((fit.intercept + 1.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!(fit_line("log_h", "log_rmse", &[1.0], &[1.0]).is_none());
    }
}
