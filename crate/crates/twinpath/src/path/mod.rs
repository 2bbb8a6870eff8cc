//! Breakpoint tracing of the multiplier path of one twin sub-problem.
//!
//! Everything works in canonical first-side form (see [`crate::qp`]).
//! Constraint rows `j` run over the other class then the rest; `γ_j` is the
//! multiplier (`α` on the other class, `β` on the rest), `d_j` the margin
//! target, `α₀ = λ·b`. With `A* = (AᵀA + δI)⁻¹`, `v = A*Aᵀe`,
//! `p_j = vᵀx_j` and `K_jk = x_jᵀA*x_k`, the scaled decision value is
//!
//! ```text
//! g_j = λ f(x_j) = α₀ (1 − p_j) − Σ_k γ_k K_jk
//! ```
//!
//! and rows on the margin satisfy `g_j = −d_j λ`. Together with the
//! balance equation `c₀α₀ + Σ_j (1 − p_j) γ_j = 0`, `c₀ = l_own − eᵀA v`,
//! this fixes the free multipliers as affine functions of λ.

pub mod dump;
mod events;
mod init;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::config::Config;
use crate::dataset::TripleView;
use crate::error::{Error, Result};
use crate::qp::{Oracle, Side, SideProblem};

pub use dump::{read_path_table, write_path_table, PathTableRow};
pub use events::detect_events;
pub use init::{
    closed_form_init, limit_start, offset_interval, qp_fallback_init, start_candidates, ClosedFormStart,
};

const MEMBERSHIP_TOL: f64 = 1e-8;
const BALANCE_TOL: f64 = 1e-6;

/// Products reused by every step of one (triple, side) path.
#[derive(Debug, Clone)]
pub struct PairCache {
    pub problem: SideProblem,
    pub delta: f64,
    /// `(AᵀA + δI)⁻¹` of the own class.
    pub astar: DMatrix<f64>,
    /// `A*Aᵀe`; the offset direction of the plane is `−v`.
    pub v: DVector<f64>,
    /// Balance coefficient of `α₀`.
    pub c0: f64,
    /// `vᵀx_j` per constraint row.
    pub p: Vec<f64>,
    /// `x_jᵀA*x_k`.
    pub kernel: DMatrix<f64>,
    /// `A*x_j` as columns.
    pub astar_cons: DMatrix<f64>,
    /// `−A*Σ_j x_j`: the plane direction (times λ) when every multiplier is 1.
    pub wstar: DVector<f64>,
    pub condition: f64,
}

pub fn build_cache(triple: &TripleView, side: Side, eps: f64, delta: f64) -> Result<PairCache> {
    let problem = SideProblem::new(triple, side, eps)?;
    PairCache::new(problem, delta)
}

impl PairCache {
    pub fn new(problem: SideProblem, delta: f64) -> Result<PairCache> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParameter("delta must be positive".into()));
        }
        let own = &problem.own;
        let n = problem.dim();
        let mut gram = own.transpose() * own;
        for d in 0..n {
            gram[(d, d)] += delta;
        }
        let eig = gram.symmetric_eigen();
        let hi = eig.eigenvalues.max();
        let lo = eig.eigenvalues.min();
        let condition = hi / lo;
        if !(lo > 0.0) || condition > 1e14 {
            return Err(Error::Singular(condition));
        }
        let inv = DVector::from_iterator(n, eig.eigenvalues.iter().map(|x| 1.0 / x));
        let vecs = &eig.eigenvectors;
        let astar = vecs * DMatrix::from_diagonal(&inv) * vecs.transpose();
        let astar = (&astar + astar.transpose()) * 0.5;

        let col_sum: DVector<f64> = own.row_sum().transpose();
        let v = &astar * &col_sum;
        // l − eᵀAv written as a sum of squares, free of cancellation when
        // the own block nearly spans the feature space
        let resid = DVector::from_element(own.nrows(), 1.0) - own * &v;
        let c0 = resid.norm_squared() + delta * v.norm_squared();
        let astar_cons = &astar * problem.cons.transpose();
        let kernel = &problem.cons * &astar_cons;
        let kernel = (&kernel + kernel.transpose()) * 0.5;
        let p = (0..problem.m())
            .map(|j| problem.cons.row(j).dot(&v.transpose()))
            .collect();
        let wstar = -(&astar_cons * DVector::from_element(problem.m(), 1.0));
        Ok(PairCache {
            problem,
            delta,
            astar,
            v,
            c0,
            p,
            kernel,
            astar_cons,
            wstar,
            condition,
        })
    }

    pub fn m(&self) -> usize {
        self.problem.m()
    }

    pub fn n_other(&self) -> usize {
        self.problem.n_other
    }

    pub fn target(&self, j: usize) -> f64 {
        self.problem.targets[j]
    }

    /// Balance coefficient of row `j`.
    pub fn coef(&self, j: usize) -> f64 {
        1.0 - self.p[j]
    }

    /// `λ f(x_j)` for every constraint row.
    pub fn scaled_values(&self, alpha0: f64, gamma: &[f64]) -> Vec<f64> {
        let g = DVector::from_column_slice(gamma);
        let kg = &self.kernel * g;
        (0..self.m()).map(|j| alpha0 * self.coef(j) - kg[j]).collect()
    }

    /// Canonical hyperplane `(w, b)` for the given multipliers.
    pub fn canonical_plane(&self, lambda: f64, alpha0: f64, gamma: &[f64]) -> (DVector<f64>, f64) {
        let g = DVector::from_column_slice(gamma);
        let w = -(&self.v * alpha0 + &self.astar_cons * g) / lambda;
        (w, alpha0 / lambda)
    }
}

/// Position of a constraint row relative to its margin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Set {
    /// Inside the margin, multiplier 1.
    L,
    /// On the margin, multiplier free.
    E,
    /// Outside the margin, multiplier 0.
    R,
}

impl Set {
    fn letter(self) -> char {
        match self {
            Set::L => 'L',
            Set::E => 'E',
            Set::R => 'R',
        }
    }
}

/// Which block of constraint rows an index refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    /// The other class (`α`).
    Other,
    /// The rest (`β`).
    Rest,
}

impl Block {
    fn letter(self) -> char {
        match self {
            Block::Other => 'B',
            Block::Rest => 'C',
        }
    }
}

/// Multipliers and L/E/R membership at one λ.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionState {
    pub lambda: f64,
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub other_sets: Vec<Set>,
    pub rest_sets: Vec<Set>,
}

impl PartitionState {
    fn from_rows(lambda: f64, alpha0: f64, gamma: &[f64], sets: &[Set], n_other: usize) -> PartitionState {
        PartitionState {
            lambda,
            alpha0,
            alpha: gamma[..n_other].to_vec(),
            beta: gamma[n_other..].to_vec(),
            other_sets: sets[..n_other].to_vec(),
            rest_sets: sets[n_other..].to_vec(),
        }
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    pub fn sets(&self) -> Vec<Set> {
        self.other_sets.iter().chain(&self.rest_sets).copied().collect()
    }

    fn members(sets: &[Set], s: Set) -> Vec<usize> {
        (0..sets.len()).filter(|&i| sets[i] == s).collect()
    }

    pub fn lb(&self) -> Vec<usize> {
        Self::members(&self.other_sets, Set::L)
    }
    pub fn eb(&self) -> Vec<usize> {
        Self::members(&self.other_sets, Set::E)
    }
    pub fn rb(&self) -> Vec<usize> {
        Self::members(&self.other_sets, Set::R)
    }
    pub fn lc(&self) -> Vec<usize> {
        Self::members(&self.rest_sets, Set::L)
    }
    pub fn ec(&self) -> Vec<usize> {
        Self::members(&self.rest_sets, Set::E)
    }
    pub fn rc(&self) -> Vec<usize> {
        Self::members(&self.rest_sets, Set::R)
    }

    /// Left side of the balance equation.
    pub fn balance(&self, cache: &PairCache) -> f64 {
        cache.c0 * self.alpha0
            + self
                .gamma()
                .iter()
                .enumerate()
                .map(|(j, g)| cache.coef(j) * g)
                .sum::<f64>()
    }

    /// Box, membership and balance checks.
    pub fn check(&self, cache: &PairCache) -> std::result::Result<(), String> {
        if self.alpha.len() + self.beta.len() != cache.m() || self.alpha.len() != cache.n_other() {
            return Err("multiplier count does not match cache".into());
        }
        for (j, (g, s)) in self.gamma().iter().zip(self.sets()).enumerate() {
            let bad = match s {
                Set::L => (g - 1.0).abs() > MEMBERSHIP_TOL,
                Set::R => g.abs() > MEMBERSHIP_TOL,
                Set::E => *g < -MEMBERSHIP_TOL || *g > 1.0 + MEMBERSHIP_TOL,
            };
            if bad || !g.is_finite() {
                return Err(format!("row {j} in {s:?} has multiplier {g}"));
            }
        }
        let bal = self.balance(cache);
        if !(bal.abs() <= BALANCE_TOL * cache.m() as f64) {
            return Err(format!("balance residual {bal:e}"));
        }
        Ok(())
    }
}

/// Rates of change `dα₀/dλ`, `dα_i/dλ` (i in EB), `dβ_k/dλ` (k in EC).
#[derive(Debug, Clone, PartialEq)]
pub struct Direction {
    pub theta0: f64,
    pub theta: Vec<f64>,
    pub nu: Vec<f64>,
    /// Row indices (within the other class) of `theta`.
    pub eb: Vec<usize>,
    /// Row indices (within the rest) of `nu`.
    pub ec: Vec<usize>,
}

impl Direction {
    /// Rate per constraint row (zero off the E sets).
    pub fn row_rates(&self, m: usize, n_other: usize) -> Vec<f64> {
        let mut r = vec![0.0; m];
        for (&i, &t) in self.eb.iter().zip(&self.theta) {
            r[i] = t;
        }
        for (&k, &t) in self.ec.iter().zip(&self.nu) {
            r[n_other + k] = t;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Init,
    Terminal,
    Truncated(String),
    Move {
        block: Block,
        index: usize,
        from: Set,
        to: Set,
    },
}

impl Event {
    /// Tag such as `EB->LB`.
    pub fn kind(&self) -> String {
        match self {
            Event::Init => "init".into(),
            Event::Terminal => "terminal".into(),
            Event::Truncated(_) => "truncated".into(),
            Event::Move { block, from, to, .. } => {
                let b = block.letter();
                format!("{}{b}->{}{b}", from.letter(), to.letter())
            }
        }
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Event::Move { index, .. } => Some(*index),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Breakpoint {
    pub lambda: f64,
    pub state: PartitionState,
    pub events: Vec<Event>,
    /// Direction of the segment running down from this breakpoint; absent
    /// on the last one.
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    ClosedForm,
    /// All multipliers at 1 above the first breakpoint.
    Limit,
    Fallback,
}

#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub side: Side,
    pub pair: (usize, usize),
    pub breakpoints: Vec<Breakpoint>,
    pub cache: Arc<PairCache>,
    pub truncated: Option<String>,
    pub init: InitKind,
}

impl SolutionPath {
    /// `(smallest, largest)` traced λ.
    pub fn range(&self) -> (f64, f64) {
        let last = self.breakpoints.last().expect("nonempty path");
        (last.lambda, self.breakpoints[0].lambda)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.breakpoints.iter().map(|b| b.lambda).collect()
    }

    /// Breakpoint λ values plus the midpoint of each segment, descending.
    pub fn candidate_lambdas(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.breakpoints.len());
        for w in self.breakpoints.windows(2) {
            out.push(w[0].lambda);
            out.push(0.5 * (w[0].lambda + w[1].lambda));
        }
        out.push(self.breakpoints.last().expect("nonempty path").lambda);
        out
    }

    /// Index of the segment `λ^{l+1} < λ ≤ λ^l` containing `lambda`.
    pub fn segment_of(&self, lambda: f64) -> Result<usize> {
        let (low, high) = self.range();
        if !(lambda >= low && lambda <= high) {
            return Err(Error::OutOfRange { lambda, low, high });
        }
        let bps = &self.breakpoints;
        // first index whose λ is below `lambda`, minus one
        let idx = bps.partition_point(|b| b.lambda >= lambda);
        Ok(idx.saturating_sub(1).min(bps.len() - 1))
    }

    pub fn interpolate(&self, lambda: f64) -> Result<PartitionState> {
        let l = self.segment_of(lambda)?;
        let bp = &self.breakpoints[l];
        if lambda == bp.lambda {
            return Ok(bp.state.clone());
        }
        let dir = bp
            .direction
            .as_ref()
            .expect("every breakpoint above the last has a direction");
        Ok(advance_state(&bp.state, dir, lambda))
    }

    /// Side hyperplane `(w, b)` at `lambda`.
    pub fn hyperplane(&self, lambda: f64) -> Result<(DVector<f64>, f64)> {
        let st = self.interpolate(lambda)?;
        Ok(reconstruct_hyperplane(&st, &self.cache))
    }
}

/// State at `lambda` on the segment starting at `state` with direction `dir`.
pub fn advance_state(state: &PartitionState, dir: &Direction, lambda: f64) -> PartitionState {
    let step = state.lambda - lambda;
    let mut out = state.clone();
    out.lambda = lambda;
    out.alpha0 = state.alpha0 - step * dir.theta0;
    for (&i, &t) in dir.eb.iter().zip(&dir.theta) {
        out.alpha[i] = state.alpha[i] - step * t;
    }
    for (&k, &t) in dir.ec.iter().zip(&dir.nu) {
        out.beta[k] = state.beta[k] - step * t;
    }
    out
}

/// Side hyperplane from a partition state.
pub fn reconstruct_hyperplane(state: &PartitionState, cache: &PairCache) -> (DVector<f64>, f64) {
    let (w, b) = cache.canonical_plane(state.lambda, state.alpha0, &state.gamma());
    let s = cache.problem.side.sign();
    (w * s, b * s)
}

/// Linear system for the direction: unknowns `[θ₀, θ_EB, ν_EC]`.
pub fn assemble_system(state: &PartitionState, cache: &PairCache) -> (DMatrix<f64>, DVector<f64>) {
    let e = e_rows(&state.sets(), cache.n_other());
    system_for(&e, cache)
}

fn e_rows(sets: &[Set], _n_other: usize) -> Vec<usize> {
    (0..sets.len()).filter(|&j| sets[j] == Set::E).collect()
}

fn system_for(e: &[usize], cache: &PairCache) -> (DMatrix<f64>, DVector<f64>) {
    let size = 1 + e.len();
    let mut a = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    a[(0, 0)] = cache.c0;
    for (col, &k) in e.iter().enumerate() {
        a[(0, col + 1)] = cache.coef(k);
    }
    for (row, &j) in e.iter().enumerate() {
        a[(row + 1, 0)] = -cache.coef(j);
        for (col, &k) in e.iter().enumerate() {
            a[(row + 1, col + 1)] = cache.kernel[(j, k)];
        }
        rhs[row + 1] = cache.target(j);
    }
    (a, rhs)
}

/// Residual test `‖Āx − b̄‖∞ ≤ 1e-8(1 + ‖b̄‖∞)`. The balance row (row 0)
/// is also held to its own O(1) scale, which margin rows of size λ would
/// otherwise swamp.
fn residual_ok(a: &DMatrix<f64>, x: &DVector<f64>, rhs: &DVector<f64>) -> bool {
    if !x.iter().all(|v| v.is_finite()) {
        return false;
    }
    let r = a * x - rhs;
    let row0: f64 = a.row(0).iter().map(|v| v.abs()).sum();
    r.amax() <= 1e-8 * (1.0 + rhs.amax()) && r[0].abs() <= 1e-8 * (1.0 + rhs[0].abs() + row0)
}

/// LU solve plus one step of iterative refinement.
fn lu_refined(a: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu.solve(rhs)?;
    let r = rhs - a * &x;
    x += lu.solve(&r)?;
    Some(x)
}

/// Row and column scalings that bring every row and column of `a` to unit
/// max-norm.
fn equilibrate(a: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = a.nrows();
    let rows = DVector::from_fn(n, |i, _| {
        let m = a.row(i).amax();
        if m > 0.0 { 1.0 / m } else { 1.0 }
    });
    let cols = DVector::from_fn(a.ncols(), |k, _| {
        let m = (0..n).map(|i| (rows[i] * a[(i, k)]).abs()).fold(0.0, f64::max);
        if m > 0.0 { 1.0 / m } else { 1.0 }
    });
    (rows, cols)
}

/// Solve `Ā d = b̄` after equilibration, retrying once with a `1e-10`
/// diagonal ridge, then as a minimum-norm least-squares problem.
pub fn solve_direction(a: &DMatrix<f64>, rhs: &DVector<f64>) -> std::result::Result<DVector<f64>, String> {
    let (rs, cs) = equilibrate(a);
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, k| rs[i] * a[(i, k)] * cs[k]);
    let srhs = rhs.component_mul(&rs);
    let unscale = |y: DVector<f64>| y.component_mul(&cs);
    if let Some(y) = lu_refined(&scaled, &srhs) {
        let x = unscale(y);
        if residual_ok(a, &x, rhs) {
            return Ok(x);
        }
    }
    let mut ridged = scaled.clone();
    for d in 0..a.nrows() {
        ridged[(d, d)] += 1e-10;
    }
    if let Some(y) = ridged.lu().solve(&srhs) {
        let x = unscale(y);
        if residual_ok(a, &x, rhs) {
            return Ok(x);
        }
    }
    // Redundant margin rows (repeated or affinely dependent samples) make Ā
    // singular but consistent; any solution then gives a valid path, and
    // the minimum-norm one is taken.
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    if let Ok(y) = svd.solve(&srhs, 1e-13 * smax) {
        let x = unscale(y);
        // Ill-conditioned but regular systems (a feature nearly constant on
        // the own class makes A* of order 1/δ) are judged by backward error.
        let r = a * &x - rhs;
        let backward = r.amax() <= 1e-8 * (1.0 + rhs.amax()) + 1e-14 * a.amax() * x.amax() * a.nrows() as f64;
        if x.iter().all(|v| v.is_finite()) && (residual_ok(a, &x, rhs) || backward) {
            return Ok(x);
        }
    }
    Err(format!("singular direction system of size {}", a.nrows()))
}

fn pack_direction(x: &DVector<f64>, e: &[usize], n_other: usize) -> Direction {
    let mut dir = Direction {
        theta0: x[0],
        theta: Vec::new(),
        nu: Vec::new(),
        eb: Vec::new(),
        ec: Vec::new(),
    };
    for (k, &j) in e.iter().enumerate() {
        if j < n_other {
            dir.eb.push(j);
            dir.theta.push(x[k + 1]);
        } else {
            dir.ec.push(j - n_other);
            dir.nu.push(x[k + 1]);
        }
    }
    dir
}

/// Mutable path state over all constraint rows.
#[derive(Debug, Clone)]
pub(crate) struct Cursor {
    pub lambda: f64,
    pub alpha0: f64,
    pub gamma: Vec<f64>,
    pub sets: Vec<Set>,
}

impl Cursor {
    pub fn from_state(st: &PartitionState) -> Cursor {
        Cursor {
            lambda: st.lambda,
            alpha0: st.alpha0,
            gamma: st.gamma(),
            sets: st.sets(),
        }
    }

    pub fn state(&self, n_other: usize) -> PartitionState {
        PartitionState::from_rows(self.lambda, self.alpha0, &self.gamma, &self.sets, n_other)
    }
}

/// Re-solve `α₀` and the E multipliers from the margin and balance
/// equations at the cursor's λ with L/R rows pinned. Returns `None` if the
/// system is singular.
pub(crate) fn solve_free(cur: &Cursor, cache: &PairCache) -> Option<(f64, Vec<(usize, f64)>)> {
    let e = e_rows(&cur.sets, cache.n_other());
    let (a, _) = system_for(&e, cache);
    let l_rows: Vec<usize> = (0..cur.sets.len()).filter(|&j| cur.sets[j] == Set::L).collect();
    let mut rhs = DVector::zeros(1 + e.len());
    rhs[0] = -l_rows.iter().map(|&k| cache.coef(k)).sum::<f64>();
    for (row, &j) in e.iter().enumerate() {
        rhs[row + 1] = cache.target(j) * cur.lambda
            - l_rows.iter().map(|&k| cache.kernel[(j, k)]).sum::<f64>();
    }
    let x = solve_direction(&a, &rhs).ok()?;
    Some((x[0], e.iter().enumerate().map(|(k, &j)| (j, x[k + 1])).collect()))
}

/// Re-anchor `α₀` and the free multipliers on the exact margin and balance
/// equations, so that direction round-off does not accumulate over long
/// segments. Skipped if the re-solve leaves the box.
fn polish_cursor(cur: &mut Cursor, cache: &PairCache) {
    let Some((a0, free)) = solve_free(cur, cache) else { return };
    if free.iter().any(|&(_, g)| !(-1e-9..=1.0 + 1e-9).contains(&g)) {
        return;
    }
    cur.alpha0 = a0;
    for (j, g) in free {
        cur.gamma[j] = g.clamp(0.0, 1.0);
    }
}

/// Largest violation of the set conditions at the cursor, relative to the
/// size of the terms entering each margin.
fn margin_violation(cur: &Cursor, cache: &PairCache) -> f64 {
    let g = cache.scaled_values(cur.alpha0, &cur.gamma);
    let abs_k = cache.kernel.abs() * DVector::from_column_slice(&cur.gamma);
    (0..cache.m())
        .map(|j| {
            let d = cache.target(j);
            let r = g[j] + d * cur.lambda;
            let size = (cur.alpha0 * cache.coef(j)).abs() + abs_k[j] + d * cur.lambda;
            let v = match cur.sets[j] {
                Set::L => (-r).max(0.0),
                Set::R => r.max(0.0),
                Set::E => r.abs(),
            };
            v / size.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

/// Direction for the cursor's partition after resolving degenerate
/// memberships: E rows pinned at a bound whose rate pushes them out of
/// the box go to L/R, and L/R rows sitting on the margin whose value would
/// cross it immediately go to E. All moves happen at the current λ.
pub(crate) fn settle(
    cur: &mut Cursor,
    cache: &PairCache,
    log: &mut Vec<Event>,
) -> std::result::Result<Direction, String> {
    let m = cache.m();
    for _ in 0..(2 * m + 4) {
        polish_cursor(cur, cache);
        let drift = margin_violation(cur, cache);
        if drift > 1e-2 {
            return Err(format!("margin conditions violated by {drift:.1e}"));
        }
        let e = e_rows(&cur.sets, cache.n_other());
        let (a, rhs) = system_for(&e, cache);
        let x = solve_direction(&a, &rhs)?;
        let dir = pack_direction(&x, &e, cache.n_other());
        let rates = dir.row_rates(m, cache.n_other());
        let rate_tol = 1e-9 * (1.0 + x.amax());
        let g = cache.scaled_values(cur.alpha0, &cur.gamma);
        let h = cache.scaled_values(dir.theta0, &rates);
        let mut flips = Vec::new();
        for j in 0..m {
            let d = cache.target(j);
            match cur.sets[j] {
                Set::E if cur.gamma[j] >= 1.0 - 1e-9 && rates[j] < -rate_tol => flips.push((j, Set::L)),
                Set::E if cur.gamma[j] <= 1e-9 && rates[j] > rate_tol => flips.push((j, Set::R)),
                Set::L | Set::R => {
                    let r = g[j] + d * cur.lambda;
                    let slope = h[j] + d;
                    let near = r.abs() <= 1e-9 * (1.0 + cur.lambda + g[j].abs());
                    let crossing = match cur.sets[j] {
                        Set::L => slope > rate_tol,
                        _ => slope < -rate_tol,
                    };
                    if near && crossing {
                        flips.push((j, Set::E));
                    }
                }
                _ => {}
            }
        }
        if flips.is_empty() {
            return Ok(dir);
        }
        // One move at a time keeps the partition from oscillating.
        let (j, to) = flips[0];
        log.push(move_event(j, cur.sets[j], to, cache.n_other()));
        cur.sets[j] = to;
        match to {
            Set::L => cur.gamma[j] = 1.0,
            Set::R => cur.gamma[j] = 0.0,
            Set::E => {}
        }
    }
    Err("degenerate partition did not settle".into())
}

pub(crate) fn move_event(j: usize, from: Set, to: Set, n_other: usize) -> Event {
    let (block, index) = if j < n_other {
        (Block::Other, j)
    } else {
        (Block::Rest, j - n_other)
    };
    Event::Move {
        block,
        index,
        from,
        to,
    }
}

/// Trace the whole path of one side of a triple.
pub fn trace_path(triple: &TripleView, side: Side, config: &Config, oracle: &Oracle) -> Result<SolutionPath> {
    let cache = Arc::new(build_cache(triple, side, config.eps, config.delta)?);
    trace_with_cache(cache, triple.pair, config, oracle)
}

pub fn trace_with_cache(
    cache: Arc<PairCache>,
    pair: (usize, usize),
    config: &Config,
    oracle: &Oracle,
) -> Result<SolutionPath> {
    let side = cache.problem.side;
    let (closed, limit) = if config.closed_form_init {
        (
            closed_form_init(&cache, config.eps1),
            limit_start(&cache, config.lambda_start),
        )
    } else {
        (None, None)
    };
    let (start, init) = match (closed, limit) {
        (Some(cf), _) if cf.lambda0 > config.lambda_min => (cf.state, InitKind::ClosedForm),
        (_, Some((_, st))) => (st, InitKind::Limit),
        _ => (
            qp_fallback_init(&cache, oracle, config.lambda_start).map_err(|e| Error::InitFailed {
                i: pair.0,
                j: pair.1,
                side: side.to_string(),
                reason: e.to_string(),
            })?,
            InitKind::Fallback,
        ),
    };
    let n_other = cache.n_other();
    let max_iter = config.max_iter_factor * cache.m();
    let mut cur = Cursor::from_state(&start);
    let mut pending = vec![Event::Init];
    let mut bps: Vec<Breakpoint> = Vec::new();
    let mut truncated = None;
    loop {
        let dir = match settle(&mut cur, &cache, &mut pending) {
            Ok(d) => d,
            Err(reason) => {
                pending.push(Event::Truncated(reason.clone()));
                bps.push(Breakpoint {
                    lambda: cur.lambda,
                    state: cur.state(n_other),
                    events: pending,
                    direction: None,
                });
                truncated = Some(reason);
                break;
            }
        };
        let state = cur.state(n_other);
        if bps.len() >= max_iter {
            let reason = format!("iteration cap {max_iter} reached");
            pending.push(Event::Truncated(reason.clone()));
            bps.push(Breakpoint {
                lambda: cur.lambda,
                state,
                events: pending,
                direction: None,
            });
            truncated = Some(reason);
            break;
        }
        let (next, events) = events::detect_rows(&cur, &dir, &cache);
        bps.push(Breakpoint {
            lambda: cur.lambda,
            state: state.clone(),
            events: std::mem::take(&mut pending),
            direction: Some(dir.clone()),
        });
        if next <= config.lambda_min {
            let end = config.lambda_min.min(cur.lambda);
            if end < cur.lambda {
                bps.push(Breakpoint {
                    lambda: end,
                    state: advance_state(&state, &dir, end),
                    events: vec![Event::Terminal],
                    direction: None,
                });
            } else {
                let last = bps.last_mut().expect("just pushed");
                last.events.push(Event::Terminal);
                last.direction = None;
            }
            break;
        }
        let moved = advance_state(&state, &dir, next);
        cur = Cursor::from_state(&moved);
        for ev in &events {
            if let Event::Move { block, index, to, .. } = ev {
                let j = match block {
                    Block::Other => *index,
                    Block::Rest => n_other + index,
                };
                cur.sets[j] = *to;
                match to {
                    Set::L => cur.gamma[j] = 1.0,
                    Set::R => cur.gamma[j] = 0.0,
                    Set::E => {}
                }
            }
        }
        pending = events;
    }
    Ok(SolutionPath {
        side,
        pair,
        breakpoints: bps,
        cache,
        truncated,
        init,
    })
}

#[cfg(test)]
mod tests;
