//! CSV rows and `key=value` summaries.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! results always produce identical bytes.

use std::fmt;

use crate::controllers::ControllerSpec;
use crate::harness::strong::StrongErrorReport;

pub const CSV_HEADER: &str = "experiment,model,method,controller,param,samples,avg_evals,error,stderr,slope";

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub experiment: String,
    pub model: String,
    pub method: String,
    pub controller: String,
    pub param: f64,
    pub samples: usize,
    pub avg_evals: f64,
    pub error: f64,
    pub stderr: f64,
    /// Empty in the CSV when absent.
    pub slope: Option<f64>,
}

impl CsvRow {
    /// A row for a scalar estimate with no method or controller.
    pub fn estimate(experiment: &str, model: &str, param: f64, samples: usize, value: f64, stderr: f64) -> Self {
        Self {
            experiment: experiment.into(),
            model: model.into(),
            method: String::new(),
            controller: String::new(),
            param,
            samples,
            avg_evals: 0.0,
            error: value,
            stderr,
            slope: None,
        }
    }
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl fmt::Display for CsvRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{},{},{},",
            field(&self.experiment),
            field(&self.model),
            field(&self.method),
            field(&self.controller),
            self.param,
            self.samples,
            self.avg_evals,
            self.error,
            self.stderr
        )?;
        if let Some(s) = self.slope {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Header plus one line per row, newline terminated.
pub fn to_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

/// One row per swept point; every row carries the sweep's rate.
pub fn strong_rows(experiment: &str, report: &StrongErrorReport) -> Vec<CsvRow> {
    let slope = report.rate();
    report
        .points
        .iter()
        .map(|p| CsvRow {
            experiment: experiment.into(),
            model: report.model.clone(),
            method: report.method.name().into(),
            controller: p.controller.kind().into(),
            param: p.param,
            samples: p.samples,
            avg_evals: p.avg_evals,
            error: p.error,
            stderr: p.std_err,
            slope,
        })
        .collect()
}

/// Error of a sweep at a given cost, read off its log-log fit.
pub fn error_at_cost(report: &StrongErrorReport, evals: f64) -> Option<f64> {
    report.fit_vs_cost().ok().map(|f| f.predict(evals))
}

/// Whether every point of a sweep uses constant steps.
pub fn is_constant(report: &StrongErrorReport) -> bool {
    report.points.iter().all(|p| matches!(p.controller, ControllerSpec::Constant { .. }))
}

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Parses `key=value` lines, skipping blanks and `#` comments.
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
            .collect();
        Self { entries }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_format() {
        let mut r = CsvRow::estimate("counterexample", "counterexample", 8.0, 100, 0.125, 0.01);
        assert_eq!(r.to_string(), "counterexample,counterexample,,,8,100,0,0.125,0.01,");
        r.slope = Some(0.5);
        r.controller = "pi:C=1,noclip".into();
        assert_eq!(r.to_string(), "counterexample,counterexample,,\"pi:C=1,noclip\",8,100,0,0.125,0.01,0.5");
        let csv = to_csv(&[r]);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn summary_round_trip() {
        let mut s = Summary::new();
        s.push("target", 0.125);
        s.push("pass", true);
        let text = s.to_string();
        assert_eq!(text, "target=0.125\npass=true\n");
        let back = Summary::parse(&format!("# header\n\n{text}"));
        assert_eq!(back, s);
        assert_eq!(back.get("pass"), Some("true"));
    }
}
