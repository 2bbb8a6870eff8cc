//! Repeated-split benchmarks, QPP accounting and figure tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::config::Config;
use crate::dataset::{split, Dataset};
use crate::error::{Error, Result};
use crate::multiclass::{fit, fit_grid, FitOutcome, MulticlassModel};
use crate::path::dump::{fmt17, write_path_table};
use crate::path::SolutionPath;
use crate::qp::Oracle;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Path,
    Grid,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Path => "path",
            Method::Grid => "grid",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "path" => Ok(Method::Path),
            "grid" => Ok(Method::Grid),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepResult {
    pub rep: usize,
    pub seed: u64,
    /// Test accuracy in percent; `None` when the fit failed.
    pub accuracy: Option<f64>,
    pub error: Option<String>,
    /// Oracle solves observed by the counting wrapper.
    pub qpp_oracle: usize,
    /// Traced paths (two per pair).
    pub path_traces: usize,
    /// Paths started from a QP solve instead of the closed form.
    pub fallbacks: usize,
    pub breakpoints: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dataset: String,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub reps: Vec<RepResult>,
    pub median: f64,
    pub deviation: f64,
    /// Oracle solves consumed by path fits.
    pub qpp_count_path: usize,
    /// Oracle solves consumed by grid fits.
    pub qpp_count_grid: usize,
    pub wall_time: Duration,
}

/// Exact median (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn deviation(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
}

impl RunReport {
    fn assemble(dataset: &Dataset, method: Method, seed: u64, grid_size: usize, reps: Vec<RepResult>, wall: Duration) -> RunReport {
        let acc: Vec<f64> = reps.iter().filter_map(|r| r.accuracy).collect();
        let qpp: usize = reps.iter().map(|r| r.qpp_oracle).sum();
        RunReport {
            dataset: dataset.name.clone(),
            method,
            k: dataset.num_classes(),
            seed,
            grid_size,
            median: median(&acc),
            deviation: deviation(&acc),
            qpp_count_path: if method == Method::Path { qpp } else { 0 },
            qpp_count_grid: if method == Method::Grid { qpp } else { 0 },
            reps,
            wall_time: wall,
        }
    }

    /// Summary block then one row per repetition. Wall time is left out so
    /// that reports are reproducible byte for byte.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "key,value");
        let _ = writeln!(out, "dataset,{}", self.dataset);
        let _ = writeln!(out, "method,{}", self.method.name());
        let _ = writeln!(out, "classes,{}", self.k);
        let _ = writeln!(out, "repetitions,{}", self.reps.len());
        let _ = writeln!(out, "seed,{}", self.seed);
        let _ = writeln!(out, "grid_size,{}", self.grid_size);
        let _ = writeln!(out, "median_accuracy,{:.4}", self.median);
        let _ = writeln!(out, "deviation,{:.4}", self.deviation);
        let _ = writeln!(out, "qpp_count_path,{}", self.qpp_count_path);
        let _ = writeln!(out, "qpp_count_grid,{}", self.qpp_count_grid);
        let _ = writeln!(out, "path_traces,{}", self.reps.iter().map(|r| r.path_traces).sum::<usize>());
        let _ = writeln!(out, "fallbacks,{}", self.reps.iter().map(|r| r.fallbacks).sum::<usize>());
        let _ = writeln!(out);
        let _ = writeln!(out, "rep,seed,accuracy,qpp_oracle,path_traces,fallbacks,breakpoints,truncated,error");
        for r in &self.reps {
            let acc = r.accuracy.map(|a| format!("{a:.4}")).unwrap_or_default();
            let err = r.error.as_deref().unwrap_or("").replace(',', ";");
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.rep, r.seed, acc, r.qpp_oracle, r.path_traces, r.fallbacks, r.breakpoints, r.truncated, err
            );
        }
        out
    }
}

fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64)
}

/// Path method over `reps` stratified train/test splits. Also returns the
/// fit of the first repetition (model and traced paths).
pub fn run_path_benchmark_with_paths(
    dataset: &Dataset,
    reps: usize,
    seed: u64,
    config: &Config,
) -> Result<(RunReport, Option<FitOutcome>)> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    config.validate()?;
    let start = Instant::now();
    let mut rows = Vec::with_capacity(reps);
    let mut first = None;
    for rep in 0..reps {
        let s = rep_seed(seed, rep);
        let oracle = Oracle::new(config.qp_tol, config.qp_budget_factor);
        let cfg = Config { seed: s, ..config.clone() };
        let mut row = RepResult {
            rep,
            seed: s,
            accuracy: None,
            error: None,
            qpp_oracle: 0,
            path_traces: 0,
            fallbacks: 0,
            breakpoints: 0,
            truncated: 0,
        };
        match split(dataset, config.train_fraction, s).and_then(|(train, test)| {
            fit(&train, &cfg, &oracle).map(|out| (out, test))
        }) {
            Ok((out, test)) => {
                row.accuracy = Some(out.model.accuracy(&test));
                row.path_traces = out.stats.paths_traced;
                row.fallbacks = out.stats.fallbacks;
                row.breakpoints = out.stats.breakpoints;
                row.truncated = out.stats.truncated;
                if rep == 0 {
                    first = Some(out);
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row.qpp_oracle = oracle.calls();
        rows.push(row);
    }
    let report = RunReport::assemble(dataset, Method::Path, seed, 0, rows, start.elapsed());
    Ok((report, first))
}

pub fn run_path_benchmark(dataset: &Dataset, reps: usize, seed: u64, config: &Config) -> Result<RunReport> {
    run_path_benchmark_with_paths(dataset, reps, seed, config).map(|r| r.0)
}

/// Grid method on the same splits as [`run_path_benchmark`].
pub fn run_grid_benchmark(dataset: &Dataset, reps: usize, seed: u64, grid: &[f64], config: &Config) -> Result<RunReport> {
    run_grid_benchmark_with_model(dataset, reps, seed, grid, config).map(|r| r.0)
}

/// [`run_grid_benchmark`] plus the model of the first repetition.
pub fn run_grid_benchmark_with_model(
    dataset: &Dataset,
    reps: usize,
    seed: u64,
    grid: &[f64],
    config: &Config,
) -> Result<(RunReport, Option<MulticlassModel>)> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    if grid.is_empty() || grid.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter("grid must hold positive values".into()));
    }
    config.validate()?;
    let start = Instant::now();
    let mut rows = Vec::with_capacity(reps);
    let mut first = None;
    for rep in 0..reps {
        let s = rep_seed(seed, rep);
        let oracle = Oracle::new(config.qp_tol, config.qp_budget_factor);
        let cfg = Config { seed: s, ..config.clone() };
        let mut row = RepResult {
            rep,
            seed: s,
            accuracy: None,
            error: None,
            qpp_oracle: 0,
            path_traces: 0,
            fallbacks: 0,
            breakpoints: 0,
            truncated: 0,
        };
        match split(dataset, config.train_fraction, s)
            .and_then(|(train, test)| fit_grid(&train, grid, &cfg, &oracle).map(|m| (m, test)))
        {
            Ok((model, test)) => {
                row.accuracy = Some(model.accuracy(&test));
                if rep == 0 {
                    first = Some(model);
                }
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row.qpp_oracle = oracle.calls();
        rows.push(row);
    }
    let report = RunReport::assemble(dataset, Method::Grid, seed, grid.len(), rows, start.elapsed());
    Ok((report, first))
}

fn path_stem(p: &SolutionPath) -> String {
    format!("{}_{}_{}", p.pair.0, p.pair.1, p.side.name())
}

/// Multiplier table for plotting against `log10(λ)`: every breakpoint plus
/// `samples` evenly spaced interior points per segment, tagged with the
/// segment index. λ strictly decreases down the table.
pub fn figure_table(path: &SolutionPath, samples: usize) -> Result<String> {
    let st0 = &path.breakpoints[0].state;
    let mut out = String::new();
    let mut header = vec!["segment".to_string(), "lambda".into(), "log10_lambda".into(), "alpha0".into()];
    header.extend((1..=st0.alpha.len()).map(|i| format!("alpha_{i}")));
    header.extend((1..=st0.beta.len()).map(|k| format!("beta_{k}")));
    let _ = writeln!(out, "{}", header.join(","));
    let mut emit = |seg: usize, lambda: f64| -> Result<()> {
        let st = path.interpolate(lambda)?;
        let mut row = vec![seg.to_string(), fmt17(lambda), fmt17(lambda.log10()), fmt17(st.alpha0)];
        row.extend(st.gamma().into_iter().map(fmt17));
        let _ = writeln!(out, "{}", row.join(","));
        Ok(())
    };
    let bps = &path.breakpoints;
    for (l, w) in bps.windows(2).enumerate() {
        let (hi, lo) = (w[0].lambda, w[1].lambda);
        emit(l, hi)?;
        for s in 1..=samples {
            let lambda = hi - (hi - lo) * s as f64 / (samples + 1) as f64;
            if lambda < hi && lambda > lo {
                emit(l, lambda)?;
            }
        }
    }
    emit(bps.len() - 1, bps[bps.len() - 1].lambda)?;
    Ok(out)
}

/// Write per-path full-precision tables, per-path figure tables and, if a
/// report is given, the per-repetition accuracy table.
pub fn emit_figures(paths: &[&SolutionPath], report: Option<&RunReport>, out_dir: &Path, samples: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if paths.is_empty() && report.is_none() {
        return Ok(written);
    }
    let io = |path: &Path| {
        let p = path.to_path_buf();
        move |source| Error::Io { path: p, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    for p in paths {
        let stem = path_stem(p);
        let table = out_dir.join(format!("path_{stem}.csv"));
        let mut buf = Vec::new();
        write_path_table(p, &mut buf).map_err(io(&table))?;
        std::fs::write(&table, buf).map_err(io(&table))?;
        written.push(table);
        let fig = out_dir.join(format!("figure_{stem}.csv"));
        std::fs::write(&fig, figure_table(p, samples)?).map_err(io(&fig))?;
        written.push(fig);
    }
    if let Some(r) = report {
        let acc = out_dir.join(format!("accuracy_{}_{}.csv", r.dataset, r.method.name()));
        let mut text = String::from("rep,accuracy\n");
        for row in &r.reps {
            let a = row.accuracy.map(|a| format!("{a:.4}")).unwrap_or_default();
            let _ = writeln!(text, "{},{}", row.rep, a);
        }
        std::fs::write(&acc, text).map_err(io(&acc))?;
        written.push(acc);
    }
    Ok(written)
}
