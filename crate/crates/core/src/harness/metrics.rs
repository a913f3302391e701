//! CSV and JSON output shared by every subcommand.
//!
//! Checkpoint CSVs are long format with one header row:
//! `label,iter,objective,subopt,mem_sq_norm,bits_cum,ms`. Numbers use the
//! shortest representation that parses back to the same value; `subopt` is
//! `NaN` when the optimum is unknown.

use std::io::{self, Write};

use serde::Serialize;

use crate::optimizer::CheckpointRecord;
use crate::parallel::WorkerReport;

use super::ProblemSummary;

pub const CSV_HEADER: &str = "label,iter,objective,subopt,mem_sq_norm,bits_cum,ms";

/// Version tag written into every JSON summary.
pub const SUMMARY_SCHEMA: &str = "memsgd-summary-v1";

pub fn write_csv_header<W: Write>(out: &mut W) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")
}

pub fn write_csv_rows<W: Write>(out: &mut W, label: &str, rows: &[CheckpointRecord]) -> io::Result<()> {
    for r in rows {
        writeln!(
            out,
            "{label},{},{},{},{},{},{}",
            r.iter,
            r.objective,
            r.subopt.unwrap_or(f64::NAN),
            r.mem_sq_norm,
            r.bits_cum,
            r.ms
        )?;
    }
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub label: String,
    pub iter: u64,
    pub objective: f64,
    pub subopt: f64,
    pub mem_sq_norm: f64,
    pub bits_cum: f64,
    pub ms: f64,
}

/// Reads a checkpoint CSV back; `None` on a wrong header or malformed row.
pub fn parse_csv(text: &str) -> Option<Vec<CsvRow>> {
    let mut lines = text.lines();
    if lines.next()? != CSV_HEADER {
        return None;
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return None;
            }
            Some(CsvRow {
                label: f[0].to_string(),
                iter: f[1].parse().ok()?,
                objective: f[2].parse().ok()?,
                subopt: f[3].parse().ok()?,
                mem_sq_norm: f[4].parse().ok()?,
                bits_cum: f[5].parse().ok()?,
                ms: f[6].parse().ok()?,
            })
        })
        .collect()
}

/// JSON summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema: &'static str,
    pub label: String,
    pub seed: u64,
    /// `sequential` or `parallel`.
    pub mode: &'static str,
    pub problem: ProblemSummary,
    pub compressor: String,
    pub schedule: String,
    pub steps: u64,
    /// `f` at the last iterate.
    pub final_objective: f64,
    /// `f` at the reported estimate (weighted average or last iterate).
    pub output_objective: f64,
    pub output_subopt: Option<f64>,
    pub total_bits: f64,
    pub elapsed_ms: f64,
    pub workers: Option<Vec<WorkerReport>>,
    pub mean_staleness: Option<f64>,
    /// The configuration file that reproduces this run.
    pub config: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(iter: u64, subopt: Option<f64>) -> CheckpointRecord {
        CheckpointRecord {
            iter,
            objective: 0.1 + iter as f64,
            subopt,
            mem_sq_norm: 1e-300,
            bits_cum: 43.0 * iter as f64,
            ms: 0.0,
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![rec(1, Some(0.25)), rec(2, None)];
        let mut buf = Vec::new();
        write_csv_header(&mut buf).unwrap();
        write_csv_rows(&mut buf, "top1", &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("label,iter,objective,subopt,mem_sq_norm,bits_cum,ms\ntop1,1,1.1,0.25,"));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].objective, 1.1);
        assert_eq!(back[0].mem_sq_norm, 1e-300);
        assert!(back[1].subopt.is_nan());
        assert_eq!(back[1].bits_cum, 86.0);
    }

    #[test]
    fn malformed_csv() {
        assert!(parse_csv("iter\n").is_none());
        assert!(parse_csv(&format!("{CSV_HEADER}\na,1,2")).is_none());
        assert_eq!(parse_csv(CSV_HEADER).unwrap(), vec![]);
    }
}
