//! Certificate report CSV.
//!
//! Header `example,true_label,predicted,m_star,p_lower,p_upper,mode`; `-`
//! marks ABSTAIN. Probabilities are written as the shortest decimal that
//! reads back to the same double.

use std::fmt::Write as _;

use super::{Certificate, ProbBounds};
use crate::ensemble::Mode;
use crate::{Error, Result};

pub const REPORT_HEADER: &str = "example,true_label,predicted,m_star,p_lower,p_upper,mode";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub example: usize,
    pub true_label: usize,
    pub predicted: Option<usize>,
    pub m_star: Option<usize>,
    pub p_lower: f64,
    pub p_upper: f64,
    pub mode: Mode,
}

impl ReportRow {
    /// Certificate carrying the (rounded) bounds from the report.
    pub fn to_certificate(&self) -> Result<Certificate> {
        Ok(Certificate {
            predicted: self.predicted,
            m_star: self.m_star,
            bounds: ProbBounds::from_f64(self.p_lower, self.p_upper)?,
            deterministic: self.mode == Mode::Exact,
        })
    }
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn report_csv(certs: &[Certificate], true_labels: &[usize]) -> Result<String> {
    if certs.len() != true_labels.len() {
        return Err(Error::shape(format!(
            "{} certificates for {} labels",
            certs.len(),
            true_labels.len()
        )));
    }
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for (t, (c, y)) in certs.iter().zip(true_labels).enumerate() {
        let _ = writeln!(
            s,
            "{t},{y},{},{},{},{},{}",
            opt(c.predicted),
            opt(c.m_star),
            c.bounds.lower_f64(),
            c.bounds.upper_f64(),
            c.mode()
        );
    }
    Ok(s)
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == REPORT_HEADER => {}
        other => return Err(Error::format(format!("bad report header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 7 {
                return Err(Error::format(format!("report line {}: expected 7 fields", i + 2)));
            }
            let bad = |what: &str| Error::format(format!("report line {}: bad {what}", i + 2));
            let int = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(what));
            let maybe = |s: &str, what: &str| if s == "-" { Ok(None) } else { int(s, what).map(Some) };
            let prob = |s: &str, what: &str| s.parse::<f64>().map_err(|_| bad(what));
            let row = ReportRow {
                example: int(f[0], "example")?,
                true_label: int(f[1], "true_label")?,
                predicted: maybe(f[2], "predicted")?,
                m_star: maybe(f[3], "m_star")?,
                p_lower: prob(f[4], "p_lower")?,
                p_upper: prob(f[5], "p_upper")?,
                mode: f[6].parse().map_err(|_| bad("mode"))?,
            };
            if row.predicted.is_some() != row.m_star.is_some() {
                return Err(bad("ABSTAIN marker (predicted and m_star disagree)"));
            }
            Ok(row)
        })
        .collect()
}
