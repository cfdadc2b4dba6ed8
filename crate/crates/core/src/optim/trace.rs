use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "step,response,lap,edge,area,arap,total,offset_norm,mean_sigma";

/// One optimization step. `total = -response + Σ λ·regularizer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub response: f64,
    pub laplacian: f64,
    pub edge: f64,
    pub area: f64,
    pub arap: f64,
    pub total: f64,
    /// `sqrt(Σ_k ‖δ_k‖²)`.
    pub offset_norm: f64,
    pub mean_sigma: f64,
}

impl TraceRecord {
    fn values(&self) -> [(&'static str, f64); 8] {
        [
            ("response", self.response),
            ("lap", self.laplacian),
            ("edge", self.edge),
            ("area", self.area),
            ("arap", self.arap),
            ("total", self.total),
            ("offset_norm", self.offset_norm),
            ("mean_sigma", self.mean_sigma),
        ]
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, v) in self.values() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{name} term at step {} ({v})", self.step)));
            }
        }
        Ok(())
    }

    /// Values use Rust's shortest round-trip formatting, so parsing a row
    /// gives back the exact floats.
    pub fn to_csv_row(&self) -> String {
        let mut s = self.step.to_string();
        for (_, v) in self.values() {
            s.push(',');
            s.push_str(&format!("{v:?}"));
        }
        s
    }

    pub fn from_csv_row(line: &str) -> Result<Self> {
        let bad = |m: String| Error::Serialization(format!("trace row {line:?}: {m}"));
        let cols: Vec<&str> = line.trim().split(',').collect();
        if cols.len() != 9 {
            return Err(bad(format!("expected 9 columns, found {}", cols.len())));
        }
        let step = cols[0].parse().map_err(|e| bad(format!("{e}")))?;
        let mut v = [0.0; 8];
        for (slot, c) in v.iter_mut().zip(&cols[1..]) {
            *slot = c.parse().map_err(|e| bad(format!("{e}")))?;
        }
        Ok(Self {
            step,
            response: v[0],
            laplacian: v[1],
            edge: v[2],
            area: v[3],
            arap: v[4],
            total: v[5],
            offset_norm: v[6],
            mean_sigma: v[7],
        })
    }
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    let mut s = String::with_capacity(64 * (trace.len() + 1));
    s.push_str(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(Error::Serialization(format!("{} lacks the trace header", path.display())));
    }
    lines.filter(|l| !l.trim().is_empty()).map(TraceRecord::from_csv_row).collect()
}
