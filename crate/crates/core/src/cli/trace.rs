//! CSV emission for solver traces, per-trial results and summaries.

use std::fmt::Write as _;
use std::path::Path;

use super::io::ImageIoError;
use crate::solvers::{IterRecord, SolveTrace};

pub const TRACE_HEADER: &str = "iter,objective,mu,rel_change,nmse";
pub const SUMMARY_HEADER: &str =
    "solver,kernel,snr,trials,mean_nmse,stderr_nmse,mean_ssim,iterations,stderr_ssim,height,width";
pub const TRIALS_HEADER: &str = "solver,trial,seed,nmse,ssim,iterations,reported_iter,termination";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One line per record after the header; `nmse` is blank without ground truth.
pub fn trace_csv(trace: &SolveTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter,
            r.objective,
            opt(r.mu),
            opt(r.rel_change),
            opt(r.nmse)
        );
    }
    out
}

pub fn emit_trace(trace: &SolveTrace, path: &Path) -> Result<(), ImageIoError> {
    std::fs::write(path, trace_csv(trace)).map_err(|e| ImageIoError::io(path, e))
}

/// Parses the output of [`trace_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<IterRecord>, ImageIoError> {
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(ImageIoError::Malformed {
            offset: 0,
            detail: format!("expected header {TRACE_HEADER:?}"),
        });
    }
    let mut offset = TRACE_HEADER.len() + 1;
    let mut records = Vec::new();
    for line in lines {
        let bad = |detail: &str| ImageIoError::Malformed {
            offset,
            detail: detail.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&format!("not a number: {s:?}")));
        let maybe = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        records.push(IterRecord {
            iter: fields[0].parse().map_err(|_| bad("bad iteration index"))?,
            objective: num(fields[1])?,
            mu: maybe(fields[2])?,
            rel_change: maybe(fields[3])?,
            nmse: maybe(fields[4])?,
        });
        offset += line.len() + 1;
    }
    Ok(records)
}

/// Per-iteration mean NMSE over several traces (rows where every trace has a value).
pub fn mean_nmse_curve(traces: &[&SolveTrace]) -> Vec<(usize, f64)> {
    let len = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    (0..len)
        .map_while(|i| {
            let vals: Option<Vec<f64>> = traces.iter().map(|t| t.records[i].nmse).collect();
            vals.map(|v| (traces[0].records[i].iter, v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect()
}

pub fn mean_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("iter,mean_nmse\n");
    for (i, v) in curve {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}
