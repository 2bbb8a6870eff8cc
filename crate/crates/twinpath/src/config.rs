//! Run configuration shared by the engine, the multiclass layer, the
//! benchmark harness and the CLI.

use std::path::Path;

use crate::error::{Error, Result};
use crate::multiclass::DecisionRule;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Margin relaxation for the rest class, in (0, 1).
    pub eps: f64,
    /// Slack of the initial-offset interval.
    pub eps1: f64,
    /// Ridge added to the own-class Gram matrix.
    pub delta: f64,
    /// Paths stop once λ falls to this floor.
    pub lambda_min: f64,
    /// λ of the QP solve used when the closed-form start is unavailable.
    pub lambda_start: f64,
    /// Iteration cap per path is `max_iter_factor · (constraint rows)`.
    pub max_iter_factor: usize,
    pub seed: u64,
    /// Training share of each benchmark repetition.
    pub train_fraction: f64,
    /// Share of the training set used to trace paths; the rest scores λ.
    pub path_fraction: f64,
    pub qp_tol: f64,
    /// QP iteration budget is `qp_budget_factor · (constraint rows)`.
    pub qp_budget_factor: usize,
    pub closed_form_init: bool,
    pub rule: DecisionRule,
    pub standardize: bool,
    pub reps: usize,
    pub grid_size: usize,
    pub grid_low: f64,
    pub grid_high: f64,
    /// Interior samples per segment in figure tables.
    pub samples_per_segment: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            eps: 0.1,
            eps1: 1e-2,
            delta: 1e-7,
            lambda_min: 1e-6,
            lambda_start: 1e3,
            max_iter_factor: 10,
            seed: 0,
            train_fraction: 0.8,
            path_fraction: 1.0 / 3.0,
            qp_tol: 1e-8,
            qp_budget_factor: 10_000,
            closed_form_init: true,
            rule: DecisionRule::Corrected,
            standardize: true,
            reps: 10,
            grid_size: 100,
            grid_low: 1e-3,
            grid_high: 1e3,
            samples_per_segment: 3,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidParameter(format!(
            "{key}: expected a boolean, got {value:?}"
        ))),
    }
}

impl Config {
    /// Set one field from its textual form. Keys use the CLI flag spelling
    /// with `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim().replace('-', "_").as_str() {
            "eps" => self.eps = parse(key, value)?,
            "eps1" => self.eps1 = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "lambda_min" => self.lambda_min = parse(key, value)?,
            "lambda_start" => self.lambda_start = parse(key, value)?,
            "max_iter_factor" => self.max_iter_factor = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "path_fraction" => self.path_fraction = parse(key, value)?,
            "qp_tol" => self.qp_tol = parse(key, value)?,
            "qp_budget_factor" => self.qp_budget_factor = parse(key, value)?,
            "closed_form_init" => self.closed_form_init = parse_bool(key, value)?,
            "rule" => self.rule = parse(key, value)?,
            "standardize" => self.standardize = parse_bool(key, value)?,
            "reps" => self.reps = parse(key, value)?,
            "grid_size" => self.grid_size = parse(key, value)?,
            "grid_low" => self.grid_low = parse(key, value)?,
            "grid_high" => self.grid_high = parse(key, value)?,
            "samples_per_segment" => self.samples_per_segment = parse(key, value)?,
            other => {
                return Err(Error::InvalidParameter(format!("unknown key {other:?}")));
            }
        }
        Ok(())
    }

    /// Apply `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParameter(format!("line {}: expected key=value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps must be in (0,1), got {}", self.eps));
        }
        if !(self.eps1 > 0.0 && self.eps1 < 1.0) {
            return bad(format!("eps1 must be in (0,1), got {}", self.eps1));
        }
        for (name, v) in [
            ("delta", self.delta),
            ("lambda-min", self.lambda_min),
            ("lambda-start", self.lambda_start),
            ("qp-tol", self.qp_tol),
            ("grid-low", self.grid_low),
            ("grid-high", self.grid_high),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("train-fraction", self.train_fraction),
            ("path-fraction", self.path_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0,1), got {v}"));
            }
        }
        if self.lambda_start <= self.lambda_min {
            return bad("lambda-start must exceed lambda-min".into());
        }
        if self.grid_high < self.grid_low {
            return bad("grid-high must not be below grid-low".into());
        }
        if self.max_iter_factor == 0 || self.qp_budget_factor == 0 {
            return bad("iteration factors must be positive".into());
        }
        if self.reps == 0 || self.grid_size == 0 {
            return bad("reps and grid-size must be positive".into());
        }
        Ok(())
    }

    /// `grid_size` log-spaced values from `grid_high` down to `grid_low`.
    pub fn grid(&self) -> Vec<f64> {
        if self.grid_size == 1 {
            return vec![self.grid_high];
        }
        let (lo, hi) = (self.grid_low.log10(), self.grid_high.log10());
        (0..self.grid_size)
            .map(|k| 10f64.powf(hi - (hi - lo) * k as f64 / (self.grid_size - 1) as f64))
            .collect()
    }
}
