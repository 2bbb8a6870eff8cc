//! Per-pair model selection on the examining rows, ternary pair decisions
//! and voting.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::config::Config;
use crate::dataset::{class_pairs, make_triple, split, Dataset, Scaling};
use crate::error::{Error, Result};
use crate::path::{trace_path, InitKind, SolutionPath};
use crate::path::dump::fmt17;
use crate::qp::{Oracle, Side};

/// How the second hyperplane votes for class `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DecisionRule {
    /// `−1` when `f₂(x) > 1 − ε`, taken verbatim.
    Literal,
    /// `−1` when `f₂(x) < 1 − ε`: `f₂` vanishes on class `j` and is pushed
    /// to at least `1 − ε` on every other row.
    Corrected,
}

impl DecisionRule {
    pub fn name(self) -> &'static str {
        match self {
            DecisionRule::Literal => "literal",
            DecisionRule::Corrected => "corrected",
        }
    }

    fn second_fires(self, f2: f64, eps: f64) -> bool {
        match self {
            DecisionRule::Literal => f2 > 1.0 - eps,
            DecisionRule::Corrected => f2 < 1.0 - eps,
        }
    }
}

impl std::str::FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<DecisionRule> {
        match s {
            "literal" => Ok(DecisionRule::Literal),
            "corrected" => Ok(DecisionRule::Corrected),
            _ => Err(Error::InvalidParameter(format!("unknown decision rule {s:?}"))),
        }
    }
}

fn first_fires(f1: f64, eps: f64) -> bool {
    f1 > -1.0 + eps
}

/// Ternary output from the two decision values, first branch first.
pub fn decide_values(f1: f64, f2: f64, eps: f64, rule: DecisionRule) -> i8 {
    if first_fires(f1, eps) {
        1
    } else if rule.second_fires(f2, eps) {
        -1
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairClassifier {
    pub pair: (usize, usize),
    pub lambda_star: f64,
    pub lambda_bar_star: f64,
    pub w1: DVector<f64>,
    pub b1: f64,
    pub w2: DVector<f64>,
    pub b2: f64,
    pub eps: f64,
    pub rule: DecisionRule,
}

impl PairClassifier {
    pub fn f1(&self, x: &[f64]) -> f64 {
        self.w1.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b1
    }

    pub fn f2(&self, x: &[f64]) -> f64 {
        self.w2.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b2
    }

    pub fn decide(&self, x: &[f64]) -> i8 {
        decide_values(self.f1(x), self.f2(x), self.eps, self.rule)
    }
}

/// Votes per class (index `k − 1`) from pair decisions: `+1` gives class
/// `i` a vote, `−1` gives class `j` a vote, `0` takes a vote from both.
pub fn tally(k: usize, decisions: &[((usize, usize), i8)]) -> Vec<i64> {
    let mut votes = vec![0i64; k];
    for &((i, j), d) in decisions {
        match d {
            1 => votes[i - 1] += 1,
            -1 => votes[j - 1] += 1,
            _ => {
                votes[i - 1] -= 1;
                votes[j - 1] -= 1;
            }
        }
    }
    votes
}

/// Class with the most votes; ties go to the smallest id.
pub fn winner(votes: &[i64]) -> usize {
    let mut best = 0;
    for (k, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = k;
        }
    }
    best + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassModel {
    pub k: usize,
    pub dim: usize,
    pub eps: f64,
    pub rule: DecisionRule,
    pub class_names: Vec<String>,
    pub scaling: Option<Scaling>,
    pub classifiers: Vec<PairClassifier>,
}

pub const MODEL_VERSION: u32 = 1;

impl MulticlassModel {
    pub fn decisions(&self, x: &[f64]) -> Vec<((usize, usize), i8)> {
        self.classifiers.iter().map(|c| (c.pair, c.decide(x))).collect()
    }

    pub fn votes(&self, x: &[f64]) -> Vec<i64> {
        tally(self.k, &self.decisions(x))
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        winner(&self.votes(x))
    }

    pub fn predict_all(&self, ds: &Dataset) -> Vec<usize> {
        (0..ds.len()).map(|r| self.predict(&ds.row(r))).collect()
    }

    /// Percentage of rows whose label is predicted.
    pub fn accuracy(&self, ds: &Dataset) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let hits = self
            .predict_all(ds)
            .iter()
            .zip(&ds.labels)
            .filter(|(p, y)| p == y)
            .count();
        100.0 * hits as f64 / ds.len() as f64
    }

    pub fn to_text(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = f64>| v.map(fmt17).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        let _ = writeln!(out, "twinpath-model");
        let _ = writeln!(out, "version={MODEL_VERSION}");
        let _ = writeln!(out, "classes={}", self.k);
        let _ = writeln!(out, "dim={}", self.dim);
        let _ = writeln!(out, "eps={}", fmt17(self.eps));
        let _ = writeln!(out, "rule={}", self.rule.name());
        for (k, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(out, "class.{}={}", k + 1, name);
        }
        if let Some(s) = &self.scaling {
            let _ = writeln!(out, "scaling.mean={}", join(&mut s.mean.iter().copied()));
            let _ = writeln!(out, "scaling.scale={}", join(&mut s.scale.iter().copied()));
        }
        for c in &self.classifiers {
            let _ = writeln!(out, "pair={},{}", c.pair.0, c.pair.1);
            let _ = writeln!(out, "lambda={}", fmt17(c.lambda_star));
            let _ = writeln!(out, "lambda_bar={}", fmt17(c.lambda_bar_star));
            let _ = writeln!(out, "w1={}", join(&mut c.w1.iter().copied()));
            let _ = writeln!(out, "b1={}", fmt17(c.b1));
            let _ = writeln!(out, "w2={}", join(&mut c.w2.iter().copied()));
            let _ = writeln!(out, "b2={}", fmt17(c.b2));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<MulticlassModel> {
        let bad = |msg: String| Error::Model(msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some("twinpath-model") {
            return Err(bad("missing twinpath-model header".into()));
        }
        let num = |key: &str, v: &str| -> Result<f64> {
            v.trim()
                .parse()
                .map_err(|_| bad(format!("{key}: bad number {v:?}")))
        };
        let vec = |key: &str, v: &str| -> Result<Vec<f64>> {
            v.split(',').map(|c| num(key, c)).collect()
        };
        let mut version = None;
        let mut model = MulticlassModel {
            k: 0,
            dim: 0,
            eps: 0.0,
            rule: DecisionRule::Corrected,
            class_names: Vec::new(),
            scaling: None,
            classifiers: Vec::new(),
        };
        let mut mean = None;
        for line in lines {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got {line:?}")))?;
            let cur = model.classifiers.last_mut();
            match key {
                "version" => version = Some(num(key, value)? as u32),
                "classes" => model.k = num(key, value)? as usize,
                "dim" => model.dim = num(key, value)? as usize,
                "eps" => model.eps = num(key, value)?,
                "rule" => model.rule = value.parse()?,
                k if k.starts_with("class.") => model.class_names.push(value.to_string()),
                "scaling.mean" => mean = Some(vec(key, value)?),
                "scaling.scale" => {
                    model.scaling = Some(Scaling {
                        mean: mean.take().ok_or_else(|| bad("scale before mean".into()))?,
                        scale: vec(key, value)?,
                    })
                }
                "pair" => {
                    let ids = vec(key, value)?;
                    if ids.len() != 2 {
                        return Err(bad(format!("bad pair {value:?}")));
                    }
                    model.classifiers.push(PairClassifier {
                        pair: (ids[0] as usize, ids[1] as usize),
                        lambda_star: 0.0,
                        lambda_bar_star: 0.0,
                        w1: DVector::zeros(0),
                        b1: 0.0,
                        w2: DVector::zeros(0),
                        b2: 0.0,
                        eps: model.eps,
                        rule: model.rule,
                    });
                }
                _ => {
                    let c = cur.ok_or_else(|| bad(format!("{key} outside a pair block")))?;
                    match key {
                        "lambda" => c.lambda_star = num(key, value)?,
                        "lambda_bar" => c.lambda_bar_star = num(key, value)?,
                        "w1" => c.w1 = DVector::from_vec(vec(key, value)?),
                        "b1" => c.b1 = num(key, value)?,
                        "w2" => c.w2 = DVector::from_vec(vec(key, value)?),
                        "b2" => c.b2 = num(key, value)?,
                        _ => return Err(bad(format!("unknown key {key:?}"))),
                    }
                }
            }
        }
        match version {
            Some(MODEL_VERSION) => {}
            Some(v) => return Err(bad(format!("unsupported model version {v}"))),
            None => return Err(bad("missing version".into())),
        }
        if model.class_names.len() != model.k || model.classifiers.len() != model.k * (model.k - 1) / 2 {
            return Err(bad("class or pair count does not match".into()));
        }
        if model
            .classifiers
            .iter()
            .any(|c| c.w1.len() != model.dim || c.w2.len() != model.dim)
        {
            return Err(bad("weight length does not match dim".into()));
        }
        Ok(model)
    }
}

/// A candidate hyperplane for one side.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub lambda: f64,
    pub w: DVector<f64>,
    pub b: f64,
}

pub fn path_candidates(path: &SolutionPath) -> Result<Vec<Candidate>> {
    path.candidate_lambdas()
        .into_iter()
        .map(|lambda| {
            let (w, b) = path.hyperplane(lambda)?;
            Ok(Candidate { lambda, w, b })
        })
        .collect()
}

struct Bits(Vec<u64>);

impl Bits {
    fn from_fn(n: usize, f: impl Fn(usize) -> bool) -> Bits {
        let mut v = vec![0u64; n.div_ceil(64)];
        for r in 0..n {
            if f(r) {
                v[r / 64] |= 1 << (r % 64);
            }
        }
        Bits(v)
    }
}

fn fire_bits(cands: &[Candidate], rows: &[Vec<f64>], fires: impl Fn(f64) -> bool) -> Vec<Bits> {
    cands
        .iter()
        .map(|c| {
            Bits::from_fn(rows.len(), |r| {
                let f = c.w.iter().zip(&rows[r]).map(|(a, b)| a * b).sum::<f64>() + c.b;
                fires(f)
            })
        })
        .collect()
}

fn examine_rows(examine: &Dataset) -> Result<Vec<Vec<f64>>> {
    if examine.is_empty() {
        return Err(Error::EmptyExamine);
    }
    Ok((0..examine.len()).map(|r| examine.row(r)).collect())
}

/// Pick `(first, second)` candidate indices minimizing the number of
/// examining rows on which the pair's ternary output is wrong: rows of
/// class `i` need `+1`, rows of class `j` need `−1`, all others need `0`.
/// Candidates must be sorted by decreasing λ; ties keep the largest λ,
/// then the largest second λ.
pub fn select_joint(
    first: &[Candidate],
    second: &[Candidate],
    examine: &Dataset,
    pair: (usize, usize),
    eps: f64,
    rule: DecisionRule,
) -> Result<(usize, usize, usize)> {
    let rows = examine_rows(examine)?;
    let n = rows.len();
    let mi = Bits::from_fn(n, |r| examine.labels[r] == pair.0);
    let mj = Bits::from_fn(n, |r| examine.labels[r] == pair.1);
    let mr = Bits::from_fn(n, |r| examine.labels[r] != pair.0 && examine.labels[r] != pair.1);
    let f1 = fire_bits(first, &rows, |f| first_fires(f, eps));
    let f2 = fire_bits(second, &rows, |f| rule.second_fires(f, eps));
    let mut best = (0, 0, usize::MAX);
    for (a, fa) in f1.iter().enumerate() {
        // Rows decided by the first branch alone, and rows left to the second.
        let mut fixed = 0u32;
        let mut open_j = Vec::with_capacity(fa.0.len());
        let mut open_r = Vec::with_capacity(fa.0.len());
        for w in 0..fa.0.len() {
            let on = fa.0[w];
            fixed += (mi.0[w] & !on).count_ones() + (on & (mj.0[w] | mr.0[w])).count_ones();
            open_j.push(!on & mj.0[w]);
            open_r.push(!on & mr.0[w]);
        }
        if fixed as usize >= best.2 {
            continue;
        }
        for (b, fb) in f2.iter().enumerate() {
            let mut err = fixed;
            for w in 0..fb.0.len() {
                err += (open_j[w] & !fb.0[w]).count_ones() + (open_r[w] & fb.0[w]).count_ones();
            }
            if (err as usize) < best.2 {
                best = (a, b, err as usize);
            }
        }
    }
    Ok(best)
}

/// Examining-set error of one side's own branch: the first side should
/// fire exactly on class `i`, the second exactly on class `j`.
pub fn side_errors(
    cands: &[Candidate],
    examine: &Dataset,
    pair: (usize, usize),
    side: Side,
    eps: f64,
    rule: DecisionRule,
) -> Result<Vec<usize>> {
    let rows = examine_rows(examine)?;
    let target = match side {
        Side::First => pair.0,
        Side::Second => pair.1,
    };
    Ok(cands
        .iter()
        .map(|c| {
            (0..rows.len())
                .filter(|&r| {
                    let f = c.w.iter().zip(&rows[r]).map(|(a, b)| a * b).sum::<f64>() + c.b;
                    let fires = match side {
                        Side::First => first_fires(f, eps),
                        Side::Second => rule.second_fires(f, eps),
                    };
                    fires != (examine.labels[r] == target)
                })
                .count()
        })
        .collect())
}

/// λ on one path (breakpoints and segment midpoints) with the fewest
/// side errors on the examining rows; ties go to the largest λ.
pub fn select_lambda(path: &SolutionPath, examine: &Dataset, eps: f64, rule: DecisionRule) -> Result<f64> {
    let cands = path_candidates(path)?;
    let errs = side_errors(&cands, examine, path.pair, path.side, eps, rule)?;
    let mut best = 0;
    for (k, &e) in errs.iter().enumerate() {
        if e < errs[best] {
            best = k;
        }
    }
    Ok(cands[best].lambda)
}

/// Both traced paths of one pair.
#[derive(Debug, Clone)]
pub struct PairPaths {
    pub first: SolutionPath,
    pub second: SolutionPath,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FitStats {
    pub paths_traced: usize,
    pub fallbacks: usize,
    pub breakpoints: usize,
    pub truncated: usize,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: MulticlassModel,
    pub paths: Vec<PairPaths>,
    pub stats: FitStats,
}

fn classifier_from(
    pair: (usize, usize),
    c1: &Candidate,
    c2: &Candidate,
    eps: f64,
    rule: DecisionRule,
) -> PairClassifier {
    PairClassifier {
        pair,
        lambda_star: c1.lambda,
        lambda_bar_star: c2.lambda,
        w1: c1.w.clone(),
        b1: c1.b,
        w2: c2.w.clone(),
        b2: c2.b,
        eps,
        rule,
    }
}

/// Split `train` into path-solving and examining parts, trace both paths
/// of every pair on the first, and select `(λ*, λ̄*)` on the second.
pub fn fit(train: &Dataset, config: &Config, oracle: &Oracle) -> Result<FitOutcome> {
    config.validate()?;
    let k = train.num_classes();
    if k < 3 {
        return Err(Error::TooFewClasses(k));
    }
    let (solve_part, examine) = split(train, config.path_fraction, config.seed)?;
    let pairs = class_pairs(k);
    let fitted: Vec<Result<(PairClassifier, PairPaths)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let triple = make_triple(&solve_part, i, j)?;
            let first = trace_path(&triple, Side::First, config, oracle)?;
            let second = trace_path(&triple, Side::Second, config, oracle)?;
            let c1 = path_candidates(&first)?;
            let c2 = path_candidates(&second)?;
            let (a, b, _) = select_joint(&c1, &c2, &examine, (i, j), config.eps, config.rule)?;
            let clf = classifier_from((i, j), &c1[a], &c2[b], config.eps, config.rule);
            Ok((clf, PairPaths { first, second }))
        })
        .collect();
    let mut classifiers = Vec::with_capacity(pairs.len());
    let mut paths = Vec::with_capacity(pairs.len());
    let mut stats = FitStats::default();
    for r in fitted {
        let (clf, pp) = r?;
        for p in [&pp.first, &pp.second] {
            stats.paths_traced += 1;
            stats.fallbacks += usize::from(p.init == InitKind::Fallback);
            stats.breakpoints += p.breakpoints.len();
            stats.truncated += usize::from(p.truncated.is_some());
        }
        classifiers.push(clf);
        paths.push(pp);
    }
    let model = MulticlassModel {
        k,
        dim: train.dim(),
        eps: config.eps,
        rule: config.rule,
        class_names: train.class_names.clone(),
        scaling: train.scaling.clone(),
        classifiers,
    };
    Ok(FitOutcome { model, paths, stats })
}

/// Grid-search counterpart of [`fit`]: the same split, one oracle solve per
/// grid value, side and pair, and the same joint selection.
pub fn fit_grid(train: &Dataset, grid: &[f64], config: &Config, oracle: &Oracle) -> Result<MulticlassModel> {
    config.validate()?;
    if grid.is_empty() || grid.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidParameter("grid must hold positive values".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let k = train.num_classes();
    let (solve_part, examine) = split(train, config.path_fraction, config.seed)?;
    let pairs = class_pairs(k);
    let classifiers: Vec<Result<PairClassifier>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let triple = make_triple(&solve_part, i, j)?;
            let mut per_side = Vec::with_capacity(2);
            for side in Side::BOTH {
                let problem = crate::qp::SideProblem::new(&triple, side, config.eps)?;
                let mut cands = Vec::with_capacity(grid.len());
                for &lambda in &grid {
                    // Failed grid points are skipped.
                    if let Ok(sol) = oracle.solve(&problem, lambda, config.delta) {
                        cands.push(Candidate { lambda, w: sol.w, b: sol.b });
                    }
                }
                if cands.is_empty() {
                    return Err(Error::InitFailed {
                        i,
                        j,
                        side: side.to_string(),
                        reason: "every grid solve failed".into(),
                    });
                }
                per_side.push(cands);
            }
            let (a, b, _) = select_joint(&per_side[0], &per_side[1], &examine, (i, j), config.eps, config.rule)?;
            Ok(classifier_from((i, j), &per_side[0][a], &per_side[1][b], config.eps, config.rule))
        })
        .collect();
    Ok(MulticlassModel {
        k,
        dim: train.dim(),
        eps: config.eps,
        rule: config.rule,
        class_names: train.class_names.clone(),
        scaling: train.scaling.clone(),
        classifiers: classifiers.into_iter().collect::<Result<_>>()?,
    })
}
