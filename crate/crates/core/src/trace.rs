use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::problem::Vector;

/// CSV header of [`RunTrace::write_csv`].
pub const TRACE_COLUMNS: [&str; 11] = [
    "t",
    "f",
    "h_norm",
    "m_value",
    "Bg",
    "Bh",
    "Mt",
    "grad_calls",
    "hess_calls",
    "hvp_calls",
    "wall_ms",
];

/// One outer iteration. `f` is `F(x_t)` before the step; the oracle counts
/// are cumulative through this iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub f: f64,
    pub h_norm: f64,
    pub m_value: f64,
    pub grad_batch: usize,
    pub hess_batch: usize,
    pub penalty: f64,
    pub grad_calls: u64,
    pub hess_calls: u64,
    pub hvp_calls: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// `x_{t+1}` after each iteration, when requested.
    pub iterates: Vec<Vector>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", TRACE_COLUMNS.join(","))?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:.3}",
                r.t,
                r.f,
                r.h_norm,
                r.m_value,
                r.grad_batch,
                r.hess_batch,
                r.penalty,
                r.grad_calls,
                r.hess_calls,
                r.hvp_calls,
                r.wall_ms
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is ASCII")
    }
}

/// Drops the trailing `wall_ms` field from every line, for comparing traces
/// across runs.
pub fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|line| match line.rfind(',') {
            Some(p) => &line[..p],
            None => line,
        })
        .collect::<Vec<_>>()
        .join("\n")
}
