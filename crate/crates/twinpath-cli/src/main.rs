//! `twinpath` command-line tool: trace, fit, predict and benchmark.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use twinpath::bench::{emit_figures, run_grid_benchmark_with_model, run_path_benchmark_with_paths, Method, RunReport};
use twinpath::dataset::{load_table, make_triple, read_table, split, Dataset, LabelColumn, LoadOptions};
use twinpath::multiclass::{fit, fit_grid};
use twinpath::path::{trace_path, InitKind};
use twinpath::qp::Oracle;
use twinpath::{Config, DecisionRule, MulticlassModel, Side, SolutionPath};

#[derive(Parser)]
#[command(name = "twinpath", version, about = "Regularization paths of the twin multi-class SVM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Trace the path of one class pair and write its tables.
    Path(PathArgs),
    /// Split a dataset, train on one part and save the model.
    Fit(FitArgs),
    /// Label a table with a saved model.
    Predict(PredictArgs),
    /// Repeated-split benchmark of the path or grid method.
    Bench(BenchArgs),
}

/// Config overrides. Values given here win over `--config`.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// File of `key=value` lines using the flag names below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    lambda_min: Option<f64>,
    /// λ of the fallback QP start.
    #[arg(long)]
    lambda_start: Option<f64>,
    #[arg(long)]
    max_iter_factor: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    path_fraction: Option<f64>,
    #[arg(long)]
    qp_tol: Option<f64>,
    /// `literal` or `corrected`.
    #[arg(long)]
    rule: Option<DecisionRule>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    grid_low: Option<f64>,
    #[arg(long)]
    grid_high: Option<f64>,
    #[arg(long)]
    samples_per_segment: Option<usize>,
    /// Disable the closed-form and limit starts.
    #[arg(long)]
    no_closed_form: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut cfg = Config::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        take!(
            eps, eps1, delta, lambda_min, lambda_start, max_iter_factor, seed, train_fraction,
            path_fraction, qp_tol, rule, grid_size, grid_low, grid_high, samples_per_segment
        );
        if self.no_closed_form {
            cfg.closed_form_init = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// `last`, a 0-based index or a header name.
    #[arg(long, default_value = "last")]
    label_col: LabelColumn,
}

impl DataArgs {
    fn options(&self, standardize: bool) -> LoadOptions {
        LoadOptions {
            label: self.label_col.clone(),
            standardize,
            ..LoadOptions::default()
        }
    }

    fn load(&self, standardize: bool) -> Result<Dataset> {
        load_table(&self.data, &self.options(standardize)).with_context(|| format!("loading {}", self.data.display()))
    }
}

#[derive(Args)]
struct PathArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Class ids (1-based, in order of first appearance).
    #[arg(long, num_args = 2, value_names = ["I", "J"], required = true)]
    pair: Vec<usize>,
    /// `first`, `second` or `both`.
    #[arg(long, default_value = "both")]
    side: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    model: PathBuf,
    /// Where to write the held-out rows (raw values, label last).
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long, default_value = "path")]
    method: Method,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `none` for unlabelled input.
    #[arg(long, default_value = "last")]
    label_col: LabelColumn,
    /// Predicted label per row.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long, default_value = "path")]
    method: Method,
    #[arg(long)]
    reps: Option<usize>,
    /// Report file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model of the first repetition.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for path, figure and accuracy tables.
    #[arg(long)]
    figures: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Path(a) => cmd_path(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn init_name(kind: InitKind) -> &'static str {
    match kind {
        InitKind::ClosedForm => "closed form",
        InitKind::Limit => "limit",
        InitKind::Fallback => "qp fallback",
    }
}

fn cmd_path(a: PathArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let (i, j) = (a.pair[0], a.pair[1]);
    let sides: Vec<Side> = match a.side.as_str() {
        "both" => Side::BOTH.to_vec(),
        s => vec![s.parse()?],
    };
    let ds = a.data.load(cfg.standardize)?;
    let triple = make_triple(&ds, i, j)?;
    let oracle = Oracle::new(cfg.qp_tol, cfg.qp_budget_factor);
    let mut paths: Vec<SolutionPath> = Vec::new();
    for side in sides {
        let p = trace_path(&triple, side, &cfg, &oracle).with_context(|| format!("tracing ({i},{j}) {side}"))?;
        let (lo, hi) = p.range();
        let status = match &p.truncated {
            Some(reason) => format!("truncated: {reason}"),
            None => "complete".to_string(),
        };
        println!(
            "pair ({i},{j}) {side}: {} breakpoints, lambda from {hi:.6e} down to {lo:.6e}, start {}, {status}",
            p.breakpoints.len(),
            init_name(p.init),
        );
        paths.push(p);
    }
    let refs: Vec<&SolutionPath> = paths.iter().collect();
    for f in emit_figures(&refs, None, &a.out, cfg.samples_per_segment)? {
        println!("wrote {}", f.display());
    }
    println!("oracle QPPs: {}", oracle.calls());
    Ok(())
}

fn csv_row(features: &[f64], label: &str) -> String {
    let mut cells: Vec<String> = features.iter().map(|v| v.to_string()).collect();
    cells.push(label.to_string());
    cells.join(",")
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = a.cfg.resolve()?;
    let raw = a.data.load(false)?;
    let (mut train, mut test) = split(&raw, cfg.train_fraction, cfg.seed)?;
    if let Some(h) = &a.holdout {
        let mut text = String::new();
        for r in 0..test.len() {
            text.push_str(&csv_row(&test.row(r), &test.class_names[test.labels[r] - 1]));
            text.push('\n');
        }
        write_file(h, &text)?;
    }
    if cfg.standardize {
        train.standardize();
        if let Some(s) = &train.scaling {
            s.apply(&mut test.features);
        }
    }
    let oracle = Oracle::new(cfg.qp_tol, cfg.qp_budget_factor);
    let model = match a.method {
        Method::Path => {
            let out = fit(&train, &cfg, &oracle)?;
            let s = &out.stats;
            println!(
                "paths {} breakpoints {} truncated {} fallbacks {}",
                s.paths_traced, s.breakpoints, s.truncated, s.fallbacks
            );
            out.model
        }
        Method::Grid => fit_grid(&train, &cfg.grid(), &cfg, &oracle)?,
    };
    write_file(&a.model, &model.to_text())?;
    println!("trained on {} rows, {} classes, oracle QPPs {}", train.len(), model.k, oracle.calls());
    if !test.is_empty() {
        println!("held-out accuracy: {:.2}%", model.accuracy(&test));
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let model = MulticlassModel::from_text(&text)?;
    let opts = LoadOptions {
        label: a.label_col.clone(),
        standardize: false,
        ..LoadOptions::default()
    };
    let mut table = read_table(&a.data, &opts).with_context(|| format!("loading {}", a.data.display()))?;
    if table.features.ncols() != model.dim {
        bail!("model expects {} features, data has {}", model.dim, table.features.ncols());
    }
    if let Some(s) = &model.scaling {
        s.apply(&mut table.features);
    }
    let predicted: Vec<&str> = (0..table.features.nrows())
        .map(|r| {
            let x: Vec<f64> = table.features.row(r).iter().copied().collect();
            model.class_names[model.predict(&x) - 1].as_str()
        })
        .collect();
    if let Some(out) = &a.out {
        let mut text = predicted.join("\n");
        text.push('\n');
        write_file(out, &text)?;
    }
    println!("predicted {} rows", predicted.len());
    if let Some(labels) = &table.labels {
        let hits = labels.iter().zip(&predicted).filter(|(y, p)| y.as_str() == **p).count();
        let acc = if labels.is_empty() { 0.0 } else { 100.0 * hits as f64 / labels.len() as f64 };
        println!("accuracy: {acc:.2}%");
    }
    Ok(())
}

fn print_reps(report: &RunReport) {
    let bound = report.k * (report.k - 1);
    for r in &report.reps {
        let acc = match r.accuracy {
            Some(a) => format!("{a:.2}%"),
            None => "failed".to_string(),
        };
        match report.method {
            Method::Path => println!(
                "rep {} seed {}: accuracy {acc}, oracle QPPs {}, O(QPPs) ≤ {bound}, breakpoints {}, truncated {}",
                r.rep, r.seed, r.qpp_oracle, r.breakpoints, r.truncated
            ),
            Method::Grid => println!("rep {} seed {}: accuracy {acc}, oracle QPPs {}", r.rep, r.seed, r.qpp_oracle),
        }
        if let Some(e) = &r.error {
            println!("rep {} error: {e}", r.rep);
        }
    }
    let qpp = match report.method {
        Method::Path => report.qpp_count_path,
        Method::Grid => report.qpp_count_grid,
    };
    println!(
        "{} {}: median accuracy {:.2}% ± {:.2}, QPPs {qpp}",
        report.dataset,
        report.method.name(),
        report.median,
        report.deviation
    );
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let mut cfg = a.cfg.resolve()?;
    if let Some(r) = a.reps {
        cfg.reps = r;
    }
    cfg.validate()?;
    let ds = a.data.load(cfg.standardize)?;
    let (report, model, fitted) = match a.method {
        Method::Path => {
            let (report, first) = run_path_benchmark_with_paths(&ds, cfg.reps, cfg.seed, &cfg)?;
            let model = first.as_ref().map(|f| f.model.clone());
            (report, model, first)
        }
        Method::Grid => {
            let (report, model) = run_grid_benchmark_with_model(&ds, cfg.reps, cfg.seed, &cfg.grid(), &cfg)?;
            (report, model, None)
        }
    };
    print_reps(&report);
    if let Some(out) = &a.out {
        write_file(out, &report.to_text())?;
    }
    if let (Some(path), Some(m)) = (&a.model, &model) {
        write_file(path, &m.to_text())?;
    }
    if let Some(dir) = &a.figures {
        let paths: Vec<&SolutionPath> = fitted
            .iter()
            .flat_map(|f| f.paths.iter().flat_map(|p| [&p.first, &p.second]))
            .collect();
        emit_figures(&paths, Some(&report), dir, cfg.samples_per_segment)?;
    }
    let failed = report.reps.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        bail!("{failed} of {} repetitions failed", report.reps.len());
    }
    Ok(())
}
