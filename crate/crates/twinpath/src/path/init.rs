//! Starting points of a path: the closed form for very large λ, and a
//! single QP solve otherwise.

use super::{solve_free, Cursor, PairCache, PartitionState, Set};
use crate::error::Result;
use crate::qp::Oracle;

#[derive(Debug, Clone)]
pub struct ClosedFormStart {
    pub lambda0: f64,
    pub b0: f64,
    pub state: PartitionState,
}

/// Rows with the largest `p_j` above 1 and the smallest `p_j` at or below
/// 1, per block. Ties go to the lowest row.
#[derive(Debug, Default, Clone, Copy)]
struct Extremes {
    other_hi: Option<usize>,
    rest_hi: Option<usize>,
    other_lo: Option<usize>,
    rest_lo: Option<usize>,
}

fn extremes(cache: &PairCache) -> Extremes {
    let mut ex = Extremes::default();
    let p = &cache.p;
    for j in 0..cache.m() {
        let other = j < cache.n_other();
        let (hi, lo) = if other {
            (&mut ex.other_hi, &mut ex.other_lo)
        } else {
            (&mut ex.rest_hi, &mut ex.rest_lo)
        };
        if p[j] > 1.0 {
            if hi.is_none_or(|i| p[j] > p[i]) {
                *hi = Some(j);
            }
        } else if lo.is_none_or(|i| p[j] < p[i]) {
            *lo = Some(j);
        }
    }
    ex
}

/// Open interval of offsets `b` for which every row lies strictly inside
/// its margin once λ is large enough (all multipliers 1). `None` when the
/// interval is empty.
pub fn offset_interval(cache: &PairCache, eps1: f64) -> Option<(f64, f64)> {
    let ex = extremes(cache);
    let mut lower: f64 = -1.0;
    let mut upper: f64 = 1.0;
    for j in [ex.other_lo, ex.rest_lo].into_iter().flatten() {
        lower = lower.max(cache.target(j) / (cache.p[j] - 1.0 - eps1));
    }
    for j in [ex.other_hi, ex.rest_hi].into_iter().flatten() {
        upper = upper.min(cache.target(j) / (cache.p[j] - 1.0 + eps1));
    }
    (lower < upper).then_some((lower, upper))
}

/// `(λ, b)` putting rows `i` and `k` exactly on their margins with every
/// multiplier at 1.
fn pin_two(cache: &PairCache, i: usize, k: usize) -> Option<(f64, f64)> {
    let ws = |j: usize| cache.problem.cons.row(j).dot(&cache.wstar.transpose());
    let (pi, qi, di) = (cache.coef(i), ws(i), cache.target(i));
    let (pk, qk, dk) = (cache.coef(k), ws(k), cache.target(k));
    // pi·b + qi/λ = −di and pk·b + qk/λ = −dk
    let det = pi * qk - qi * pk;
    let b = (qi * dk - di * qk) / det;
    let inv_lambda = (pk * di - pi * dk) / det;
    let lambda = 1.0 / inv_lambda;
    (lambda.is_finite() && b.is_finite() && lambda > 0.0).then_some((lambda, b))
}

/// The two closed-form candidates: (other row with the largest `p > 1`,
/// rest row with the smallest `p ≤ 1`) and (other row with the smallest
/// `p ≤ 1`, rest row with the largest `p > 1`), whichever exist.
pub fn start_candidates(cache: &PairCache) -> Vec<(f64, f64)> {
    let ex = extremes(cache);
    let mut out = Vec::new();
    if let (Some(i), Some(k)) = (ex.other_hi, ex.rest_lo) {
        out.extend(pin_two(cache, i, k));
    }
    if let (Some(i), Some(k)) = (ex.other_lo, ex.rest_hi) {
        out.extend(pin_two(cache, i, k));
    }
    out
}

/// Closed-form start. The larger candidate λ wins; its offset must lie in
/// [`offset_interval`]. Rows are then sorted into L/E/R by their margin,
/// and the result is kept only if re-solving the E multipliers and `α₀`
/// from the margin and balance equations leaves a consistent state.
pub fn closed_form_init(cache: &PairCache, eps1: f64) -> Option<ClosedFormStart> {
    let cands = start_candidates(cache);
    let &(lambda0, b0) = cands
        .iter()
        .reduce(|a, b| if b.0 > a.0 { b } else { a })?;
    let (lo, hi) = offset_interval(cache, eps1)?;
    if !(b0 > lo && b0 < hi) {
        return None;
    }
    let m = cache.m();
    let margin_tol = |j: usize| 1e-9 * (1.0 + cache.target(j));
    let mut sets = Vec::with_capacity(m);
    let mut gamma = Vec::with_capacity(m);
    for j in 0..m {
        let ws = cache.problem.cons.row(j).dot(&cache.wstar.transpose());
        let margin = -(b0 * cache.coef(j) + ws / lambda0);
        let d = cache.target(j);
        let s = if margin < d - margin_tol(j) {
            Set::L
        } else if margin <= d + margin_tol(j) {
            Set::E
        } else {
            Set::R
        };
        sets.push(s);
        gamma.push(if s == Set::R { 0.0 } else { 1.0 });
    }
    let mut cur = Cursor {
        lambda: lambda0,
        alpha0: lambda0 * b0,
        gamma,
        sets,
    };
    let (a0, free) = solve_free(&cur, cache)?;
    for &(j, g) in &free {
        if !(-1e-9..=1.0 + 1e-9).contains(&g) {
            return None;
        }
        cur.gamma[j] = g.clamp(0.0, 1.0);
    }
    cur.alpha0 = a0;
    let g = cache.scaled_values(cur.alpha0, &cur.gamma);
    for j in 0..m {
        let margin = -g[j] / lambda0;
        let d = cache.target(j);
        let consistent = match cur.sets[j] {
            Set::L => margin <= d + 1e-8,
            Set::R => margin >= d - 1e-8,
            Set::E => true,
        };
        if !consistent {
            return None;
        }
    }
    let state = cur.state(cache.n_other());
    state.check(cache).ok()?;
    Some(ClosedFormStart {
        lambda0,
        b0: a0 / lambda0,
        state,
    })
}

/// Exact start above the first breakpoint. With every multiplier at 1 the
/// balance equation fixes `α₀`, so each row's margin is `−g_j/λ` and row `j`
/// reaches its target at `λ_j = −g_j/d_j`. Returns the first such λ and the
/// all-L state at `max(lambda_start, 2λ₀)`; the tracer finds λ₀ as its
/// first event.
pub fn limit_start(cache: &PairCache, lambda_start: f64) -> Option<(f64, PartitionState)> {
    let m = cache.m();
    let l_own = cache.problem.own.nrows() as f64;
    if !(cache.c0 > 1e-12 * l_own) {
        return None;
    }
    let ones = vec![1.0; m];
    let alpha0 = -(0..m).map(|j| cache.coef(j)).sum::<f64>() / cache.c0;
    let g = cache.scaled_values(alpha0, &ones);
    let lambda0 = (0..m)
        .map(|j| -g[j] / cache.target(j))
        .fold(f64::NEG_INFINITY, f64::max);
    let top = if lambda0 < lambda_start { lambda_start } else { 2.0 * lambda0 };
    let cur = Cursor {
        lambda: top,
        alpha0,
        gamma: ones,
        sets: vec![Set::L; m],
    };
    let state = cur.state(cache.n_other());
    state.check(cache).ok()?;
    Some((lambda0, state))
}

/// Start from one oracle solve at `lambda_start`, sorting rows by their
/// margin (and multiplier when strictly interior).
pub fn qp_fallback_init(cache: &PairCache, oracle: &Oracle, lambda_start: f64) -> Result<PartitionState> {
    let sol = oracle.solve(&cache.problem, lambda_start, cache.delta)?;
    let mut gamma = sol.multipliers();
    let alpha0 = sol.alpha0();
    let g = cache.scaled_values(alpha0, &gamma);
    let mut sets = Vec::with_capacity(cache.m());
    for j in 0..cache.m() {
        let d = cache.target(j);
        let margin = -g[j] / lambda_start;
        let s = if (margin - d).abs() <= 1e-7 * (1.0 + d) || (gamma[j] > 1e-6 && gamma[j] < 1.0 - 1e-6) {
            Set::E
        } else if margin < d {
            Set::L
        } else {
            Set::R
        };
        match s {
            Set::L => gamma[j] = 1.0,
            Set::R => gamma[j] = 0.0,
            Set::E => gamma[j] = gamma[j].clamp(0.0, 1.0),
        }
        sets.push(s);
    }
    let mut cur = Cursor {
        lambda: lambda_start,
        alpha0,
        gamma,
        sets,
    };
    if let Some((a0, free)) = solve_free(&cur, cache) {
        if free.iter().all(|&(_, g)| (-1e-9..=1.0 + 1e-9).contains(&g)) {
            cur.alpha0 = a0;
            for (j, g) in free {
                cur.gamma[j] = g.clamp(0.0, 1.0);
            }
        }
    }
    Ok(cur.state(cache.n_other()))
}
