//! Plain-text path tables at full precision.

use std::io::{BufRead, Write};

use super::SolutionPath;
use crate::error::{Error, Result};

/// Format with 17 significant digits (exact round trip).
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// One breakpoint per row: `lambda,event_kind,event_index,alpha0,α…,β…`.
/// Several simultaneous events are joined with `;`; indices are 1-based
/// within their block.
pub fn write_path_table<W: Write>(path: &SolutionPath, mut out: W) -> std::io::Result<()> {
    let first = &path.breakpoints[0].state;
    let mut header = vec!["lambda".to_string(), "event_kind".into(), "event_index".into(), "alpha0".into()];
    header.extend((1..=first.alpha.len()).map(|i| format!("alpha_{i}")));
    header.extend((1..=first.beta.len()).map(|k| format!("beta_{k}")));
    writeln!(out, "{}", header.join(","))?;
    for bp in &path.breakpoints {
        let kinds: Vec<String> = bp.events.iter().map(|e| e.kind()).collect();
        let idx: Vec<String> = bp
            .events
            .iter()
            .map(|e| e.index().map(|i| (i + 1).to_string()).unwrap_or_default())
            .collect();
        let mut row = vec![fmt17(bp.lambda), kinds.join(";"), idx.join(";"), fmt17(bp.state.alpha0)];
        row.extend(bp.state.gamma().into_iter().map(fmt17));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathTableRow {
    pub lambda: f64,
    pub event_kind: String,
    pub event_index: String,
    pub alpha0: f64,
    /// `α` then `β`.
    pub multipliers: Vec<f64>,
}

pub fn read_path_table<R: BufRead>(input: R) -> Result<Vec<PathTableRow>> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate().skip(1) {
        let line = line.map_err(|e| Error::Model(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Model(format!("path table line {}: bad number {s:?}", n + 1)))
        };
        if cells.len() < 4 {
            return Err(Error::Model(format!("path table line {}: too few cells", n + 1)));
        }
        rows.push(PathTableRow {
            lambda: num(cells[0])?,
            event_kind: cells[1].to_string(),
            event_index: cells[2].to_string(),
            alpha0: num(cells[3])?,
            multipliers: cells[4..].iter().map(|c| num(c)).collect::<Result<_>>()?,
        });
    }
    Ok(rows)
}
