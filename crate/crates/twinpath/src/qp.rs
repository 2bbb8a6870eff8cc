//! Fixed-λ solver for the two twin sub-problems.
//!
//! The first side solves
//!
//! ```text
//! min  λ/2 (‖A w + b e‖² + δ‖w‖²) + Σ ξ_i + Σ η_k
//! s.t. −(w·x_i + b) + ξ_i ≥ 1      x_i in B
//!      −(w·x_k + b) + η_k ≥ 1 − ε  x_k in C
//!      ξ, η ≥ 0
//! ```
//!
//! The second side is the same problem with the roles of `A` and `B`
//! exchanged, returned with the hyperplane negated so that the constraints
//! read `w·x + b ≥ 1` on `A` and `≥ 1 − ε` on `C`.
//!
//! The dual is a box-constrained QP in the multipliers. It is solved by a
//! Mehrotra predictor-corrector interior-point method, then polished by a
//! short primal-dual active-set pass so that the multipliers are exact.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::dataset::TripleView;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    First,
    Second,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::First, Side::Second];

    /// Sign relating the stored hyperplane to the canonical (first-side
    /// form) solution.
    pub fn sign(self) -> f64 {
        match self {
            Side::First => 1.0,
            Side::Second => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::First => "first",
            Side::Second => "second",
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Side> {
        match s {
            "first" | "1" => Ok(Side::First),
            "second" | "2" => Ok(Side::Second),
            _ => Err(Error::InvalidParameter(format!("unknown side {s:?}"))),
        }
    }
}

/// One side of a triple in canonical first-side form: `own` is the class
/// the plane passes through, `cons` stacks the "other" class rows followed
/// by the rest rows, each row `j` carrying margin target `targets[j]`.
#[derive(Debug, Clone)]
pub struct SideProblem {
    pub side: Side,
    pub own: DMatrix<f64>,
    pub cons: DMatrix<f64>,
    pub n_other: usize,
    pub targets: Vec<f64>,
}

impl SideProblem {
    pub fn new(triple: &TripleView, side: Side, eps: f64) -> Result<SideProblem> {
        let (own, other) = match side {
            Side::First => (&triple.a, &triple.b),
            Side::Second => (&triple.b, &triple.a),
        };
        if own.nrows() == 0 || other.nrows() == 0 || triple.c.nrows() == 0 {
            return Err(Error::Degenerate(format!(
                "empty block in triple {:?} (sizes {:?})",
                triple.pair,
                triple.sizes()
            )));
        }
        let n = triple.dim();
        let n_other = other.nrows();
        let m = n_other + triple.c.nrows();
        let mut cons = DMatrix::zeros(m, n);
        cons.rows_mut(0, n_other).copy_from(other);
        cons.rows_mut(n_other, triple.c.nrows()).copy_from(&triple.c);
        let targets = (0..m)
            .map(|j| if j < n_other { 1.0 } else { 1.0 - eps })
            .collect();
        Ok(SideProblem {
            side,
            own: own.clone(),
            cons,
            n_other,
            targets,
        })
    }

    pub fn m(&self) -> usize {
        self.cons.nrows()
    }

    pub fn dim(&self) -> usize {
        self.own.ncols()
    }
}

/// Result of a fixed-λ solve. `w`, `b` are the side's own hyperplane
/// (negated for the second side); `alpha` runs over the other class and
/// `beta` over the rest, in triple row order.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub side: Side,
    pub lambda: f64,
    pub w: DVector<f64>,
    pub b: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpSolution {
    /// Hyperplane in canonical first-side form.
    pub fn canonical(&self) -> (DVector<f64>, f64) {
        let s = self.side.sign();
        (&self.w * s, self.b * s)
    }

    /// `λ·b` of the canonical form.
    pub fn alpha0(&self) -> f64 {
        self.lambda * self.b * self.side.sign()
    }

    pub fn multipliers(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    pub fn slacks(&self) -> Vec<f64> {
        self.xi.iter().chain(&self.eta).copied().collect()
    }
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_BUDGET_FACTOR: usize = 10_000;
const IPM_MAX_ITER: usize = 200;

pub fn solve_fixed_lambda(
    triple: &TripleView,
    side: Side,
    lambda: f64,
    eps: f64,
    delta: f64,
    tol: f64,
) -> Result<QpSolution> {
    let p = SideProblem::new(triple, side, eps)?;
    solve_problem(&p, lambda, delta, None, tol, DEFAULT_BUDGET_FACTOR)
}

/// Same problem with the canonical offset `b` held fixed (only `w` and the
/// slacks are free).
pub fn solve_fixed_offset(
    triple: &TripleView,
    side: Side,
    lambda: f64,
    b: f64,
    eps: f64,
    delta: f64,
    tol: f64,
) -> Result<QpSolution> {
    let p = SideProblem::new(triple, side, eps)?;
    solve_problem(&p, lambda, delta, Some(b), tol, DEFAULT_BUDGET_FACTOR)
}

/// Primal data for the dual construction: `u = [w; b]` (or `w` alone when
/// the offset is fixed) minimizes `½uᵀHu + gᵀu` subject to
/// `−z_jᵀu + slack_j ≥ rhs_j`.
struct Primal {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    z: DMatrix<f64>,
    g: DVector<f64>,
    rhs: DVector<f64>,
}

fn build_primal(p: &SideProblem, lambda: f64, delta: f64, offset: Option<f64>) -> Result<Primal> {
    let n = p.dim();
    let own = &p.own;
    let l = own.nrows() as f64;
    let gram = own.transpose() * own;
    let col_sum: DVector<f64> = own.row_sum().transpose();
    let targets = DVector::from_vec(p.targets.clone());
    let (h, z, g, rhs) = match offset {
        None => {
            let mut h = DMatrix::zeros(n + 1, n + 1);
            h.view_mut((0, 0), (n, n)).copy_from(&gram);
            for d in 0..n {
                h[(d, d)] += delta;
                h[(d, n)] = col_sum[d];
                h[(n, d)] = col_sum[d];
            }
            h[(n, n)] = l;
            let mut z = DMatrix::from_element(p.m(), n + 1, 1.0);
            z.view_mut((0, 0), (p.m(), n)).copy_from(&p.cons);
            (h * lambda, z, DVector::zeros(n + 1), targets)
        }
        Some(b) => {
            let mut h = gram;
            for d in 0..n {
                h[(d, d)] += delta;
            }
            let rhs = targets.add_scalar(b);
            (h * lambda, p.cons.clone(), col_sum * (lambda * b), rhs)
        }
    };
    let chol = h
        .cholesky()
        .ok_or_else(|| Error::Singular(f64::INFINITY))?;
    Ok(Primal { chol, z, g, rhs })
}

/// Solve one side in canonical form.
pub fn solve_problem(
    p: &SideProblem,
    lambda: f64,
    delta: f64,
    offset: Option<f64>,
    tol: f64,
    budget_factor: usize,
) -> Result<QpSolution> {
    if !(lambda > 0.0 && delta > 0.0 && tol > 0.0) {
        return Err(Error::InvalidParameter(
            "lambda, delta and tol must be positive".into(),
        ));
    }
    let m = p.m();
    let primal = build_primal(p, lambda, delta, offset)?;
    // Q = Z H⁻¹ Zᵀ = YᵀY with Y = L⁻¹Zᵀ; c = Z H⁻¹ g − rhs.
    let l_factor = primal.chol.l();
    let y = l_factor
        .solve_lower_triangular(&primal.z.transpose())
        .ok_or(Error::Singular(f64::INFINITY))?;
    let lg = l_factor
        .solve_lower_triangular(&primal.g)
        .ok_or(Error::Singular(f64::INFINITY))?;
    let q = y.transpose() * &y;
    let c = y.transpose() * lg - &primal.rhs;

    let budget = (budget_factor * m).clamp(1, IPM_MAX_ITER);
    let (gamma_ipm, iterations) = interior_point(&q, &c, budget);
    let recover = |gamma: &DVector<f64>| -> (DVector<f64>, f64, Vec<f64>, f64) {
        let u = -primal.chol.solve(&(&primal.g + primal.z.transpose() * gamma));
        let (w, b) = match offset {
            None => (u.rows(0, p.dim()).into_owned(), u[p.dim()]),
            Some(b) => (u, b),
        };
        let slack: Vec<f64> = (0..m)
            .map(|j| {
                let margin = -(p.cons.row(j).dot(&w.transpose()) + b);
                (p.targets[j] - margin).max(0.0)
            })
            .collect();
        let res = residual_canonical(p, lambda, delta, &w, b, gamma.as_slice(), &slack, offset.is_none());
        (w, b, slack, res)
    };

    let mut best = recover(&gamma_ipm);
    let mut best_gamma = gamma_ipm.clone();
    if let Some(gamma_pol) = polish(&q, &c, &gamma_ipm) {
        let cand = recover(&gamma_pol);
        if cand.3 <= best.3 {
            best = cand;
            best_gamma = gamma_pol;
        }
    }
    let (w, b, slack, residual) = best;
    if !(residual <= tol) {
        return Err(Error::NoConvergence {
            iterations,
            residual,
        });
    }
    let s = p.side.sign();
    let gamma = best_gamma.as_slice();
    Ok(QpSolution {
        side: p.side,
        lambda,
        w: w * s,
        b: b * s,
        alpha: gamma[..p.n_other].to_vec(),
        beta: gamma[p.n_other..].to_vec(),
        xi: slack[..p.n_other].to_vec(),
        eta: slack[p.n_other..].to_vec(),
        kkt_residual: residual,
        iterations,
    })
}

/// Primal-dual interior point for `min ½γᵀQγ + cᵀγ, 0 ≤ γ ≤ 1`.
fn interior_point(q: &DMatrix<f64>, c: &DVector<f64>, max_iter: usize) -> (DVector<f64>, usize) {
    let m = c.len();
    let scale = 1.0 + q.amax().max(c.amax());
    let mut x = DVector::from_element(m, 0.5);
    let mut s = DVector::from_element(m, 0.5);
    let mut zl = DVector::from_element(m, scale);
    let mut zu = DVector::from_element(m, scale);
    let mut it = 0;
    while it < max_iter {
        let rd = q * &x + c - &zl + &zu;
        let mu = (x.dot(&zl) + s.dot(&zu)) / (2 * m) as f64;
        if rd.amax() <= 1e-13 * scale && mu <= 1e-15 * scale {
            break;
        }
        it += 1;
        let mut kmat = q.clone();
        for i in 0..m {
            kmat[(i, i)] += zl[i] / x[i] + zu[i] / s[i];
        }
        let chol = match kmat.clone().cholesky() {
            Some(ch) => ch,
            None => {
                for i in 0..m {
                    kmat[(i, i)] += 1e-14 * scale;
                }
                match kmat.cholesky() {
                    Some(ch) => ch,
                    None => break,
                }
            }
        };
        let newton = |rl: &DVector<f64>, ru: &DVector<f64>| {
            let rhs = DVector::from_fn(m, |i, _| -rd[i] + rl[i] / x[i] - ru[i] / s[i]);
            let dx = chol.solve(&rhs);
            let dzl = DVector::from_fn(m, |i, _| (rl[i] - zl[i] * dx[i]) / x[i]);
            let dzu = DVector::from_fn(m, |i, _| (ru[i] + zu[i] * dx[i]) / s[i]);
            (dx, dzl, dzu)
        };
        let max_step = |dx: &DVector<f64>, dzl: &DVector<f64>, dzu: &DVector<f64>| {
            let mut a: f64 = 1.0;
            for i in 0..m {
                if dx[i] < 0.0 {
                    a = a.min(-x[i] / dx[i]);
                }
                if dx[i] > 0.0 {
                    a = a.min(s[i] / dx[i]);
                }
                if dzl[i] < 0.0 {
                    a = a.min(-zl[i] / dzl[i]);
                }
                if dzu[i] < 0.0 {
                    a = a.min(-zu[i] / dzu[i]);
                }
            }
            a
        };

        let rl = -x.component_mul(&zl);
        let ru = -s.component_mul(&zu);
        let (dx, dzl, dzu) = newton(&rl, &ru);
        let a = max_step(&dx, &dzl, &dzu);
        let mu_aff = ((&x + &dx * a).dot(&(&zl + &dzl * a))
            + (&s - &dx * a).dot(&(&zu + &dzu * a)))
            / (2 * m) as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);

        let rl = DVector::from_fn(m, |i, _| sigma * mu - x[i] * zl[i] - dx[i] * dzl[i]);
        let ru = DVector::from_fn(m, |i, _| sigma * mu - s[i] * zu[i] + dx[i] * dzu[i]);
        let (dx, dzl, dzu) = newton(&rl, &ru);
        let a = (0.995 * max_step(&dx, &dzl, &dzu)).min(1.0);
        x += &dx * a;
        s -= &dx * a;
        zl += &dzl * a;
        zu += &dzu * a;
    }
    (x, it)
}

/// Feasible primal active-set refinement of a near-optimal box QP point.
/// Bounds are added one blocking variable at a time and released one
/// multiplier at a time, so the iteration cannot cycle on flat faces.
fn polish(q: &DMatrix<f64>, c: &DVector<f64>, start: &DVector<f64>) -> Option<DVector<f64>> {
    let m = c.len();
    let scale = 1.0 + q.amax().max(c.amax());
    let grad0 = q * start + c;
    // 0 = lower bound, 1 = upper bound, 2 = free
    let mut state: Vec<u8> = (0..m)
        .map(|i| {
            let g = grad0[i] / scale;
            if start[i] < 1e-7 && g > -1e-7 {
                0
            } else if start[i] > 1.0 - 1e-7 && g < 1e-7 {
                1
            } else {
                2
            }
        })
        .collect();
    let mut x = DVector::from_fn(m, |i, _| match state[i] {
        0 => 0.0,
        1 => 1.0,
        _ => start[i].clamp(0.0, 1.0),
    });
    for _ in 0..(20 * m + 20) {
        let free: Vec<usize> = (0..m).filter(|&i| state[i] == 2).collect();
        let mut target = x.clone();
        if !free.is_empty() {
            let qff = DMatrix::from_fn(free.len(), free.len(), |a, b| q[(free[a], free[b])]);
            let rhs = DVector::from_fn(free.len(), |a, _| {
                let i = free[a];
                -c[i] - (0..m).filter(|&k| state[k] == 1).map(|k| q[(i, k)]).sum::<f64>()
            });
            // Minimum-change solution on a singular face keeps the step short.
            let base = DVector::from_fn(free.len(), |a, _| x[free[a]]);
            let resid = &rhs - &qff * &base;
            let step = qff.svd(true, true).solve(&resid, 1e-12 * scale).ok()?;
            for (a, &i) in free.iter().enumerate() {
                target[i] = base[a] + step[a];
            }
        }
        let mut t: f64 = 1.0;
        let mut block = None;
        for &i in &free {
            let d = target[i] - x[i];
            let room = if d < 0.0 { -x[i] / d } else if d > 0.0 { (1.0 - x[i]) / d } else { f64::INFINITY };
            if room < t {
                t = room.max(0.0);
                block = Some((i, if d < 0.0 { 0u8 } else { 1u8 }));
            }
        }
        for &i in &free {
            x[i] += t * (target[i] - x[i]);
        }
        if let Some((i, bound)) = block {
            state[i] = bound;
            x[i] = bound as f64;
            continue;
        }
        let grad = q * &x + c;
        let mut worst = (0.0, None);
        for i in 0..m {
            let v = match state[i] {
                0 => -grad[i],
                1 => grad[i],
                _ => 0.0,
            };
            if v > 1e-12 * scale && v > worst.0 {
                worst = (v, Some(i));
            }
        }
        match worst.1 {
            Some(i) => state[i] = 2,
            None => return Some(x.map(|v| v.clamp(0.0, 1.0))),
        }
    }
    None
}

/// KKT residual of a canonical-form point; `with_offset` adds the
/// stationarity condition in `b`.
#[allow(clippy::too_many_arguments)]
fn residual_canonical(
    p: &SideProblem,
    lambda: f64,
    delta: f64,
    w: &DVector<f64>,
    b: f64,
    gamma: &[f64],
    slack: &[f64],
    with_offset: bool,
) -> f64 {
    let own = &p.own;
    let fit = own * w + DVector::from_element(own.nrows(), b);
    let mut gw = (own.transpose() * &fit + w * delta) * lambda;
    // Stationarity rows are measured relative to the size of their terms,
    // which grow with λ.
    let mut size = (own.abs().transpose() * fit.abs() + w.abs() * delta) * lambda;
    for (j, &g) in gamma.iter().enumerate() {
        gw += p.cons.row(j).transpose() * g;
        size += p.cons.row(j).abs().transpose() * g.abs();
    }
    let mut res = gw.zip_map(&size, |r, t| r.abs() / (1.0 + t)).amax();
    if with_offset {
        let gb = lambda * fit.sum() + gamma.iter().sum::<f64>();
        let t = lambda * fit.abs().sum() + gamma.iter().map(|g| g.abs()).sum::<f64>();
        res = res.max(gb.abs() / (1.0 + t));
    }
    for j in 0..p.m() {
        let margin = -(p.cons.row(j).dot(&w.transpose()) + b);
        let (g, sl, d) = (gamma[j], slack[j], p.targets[j]);
        let gap = margin + sl - d;
        res = res
            .max((-gap).max(0.0))
            .max((-sl).max(0.0))
            .max((-g).max(0.0))
            .max((g - 1.0).max(0.0))
            .max((g * gap).abs())
            .max(((1.0 - g) * sl).abs());
    }
    res
}

/// Max-norm of stationarity, box, feasibility and complementarity
/// violations of `sol` for the given side and `λ`. Stationarity rows are
/// divided by one plus the magnitude of their terms.
pub fn kkt_residual(
    sol: &QpSolution,
    triple: &TripleView,
    side: Side,
    lambda: f64,
    eps: f64,
    delta: f64,
) -> Result<f64> {
    let p = SideProblem::new(triple, side, eps)?;
    if sol.alpha.len() != p.n_other
        || sol.beta.len() != p.m() - p.n_other
        || sol.w.len() != p.dim()
        || sol.xi.len() != sol.alpha.len()
        || sol.eta.len() != sol.beta.len()
    {
        return Err(Error::Dimension("solution does not match triple".into()));
    }
    let s = side.sign();
    let w = &sol.w * s;
    Ok(residual_canonical(
        &p,
        lambda,
        delta,
        &w,
        sol.b * s,
        &sol.multipliers(),
        &sol.slacks(),
        true,
    ))
}

/// Primal objective of a canonical-form point, slacks taken at their
/// smallest feasible value.
pub fn objective(p: &SideProblem, lambda: f64, delta: f64, w: &DVector<f64>, b: f64) -> f64 {
    let fit = &p.own * w + DVector::from_element(p.own.nrows(), b);
    let hinge: f64 = (0..p.m())
        .map(|j| {
            let margin = -(p.cons.row(j).dot(&w.transpose()) + b);
            (p.targets[j] - margin).max(0.0)
        })
        .sum();
    0.5 * lambda * (fit.norm_squared() + delta * w.norm_squared()) + hinge
}

/// Oracle wrapper that counts every solve.
#[derive(Debug)]
pub struct Oracle {
    calls: AtomicUsize,
    pub tol: f64,
    pub budget_factor: usize,
}

impl Default for Oracle {
    fn default() -> Self {
        Oracle::new(DEFAULT_TOL, DEFAULT_BUDGET_FACTOR)
    }
}

impl Oracle {
    pub fn new(tol: f64, budget_factor: usize) -> Oracle {
        Oracle {
            calls: AtomicUsize::new(0),
            tol,
            budget_factor,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn solve(&self, p: &SideProblem, lambda: f64, delta: f64) -> Result<QpSolution> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        solve_problem(p, lambda, delta, None, self.tol, self.budget_factor)
    }
}
