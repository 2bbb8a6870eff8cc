//! Next-breakpoint search along a segment.

use super::{move_event, Cursor, Direction, Event, PairCache, PartitionState, Set};

/// Candidate λ at which each row would change set, the largest one below
/// `state.lambda`, and every move tying with it (within `1e-10·λ`).
/// Returns `0` and no events when nothing happens above zero.
pub fn detect_events(state: &PartitionState, dir: &Direction, cache: &PairCache) -> (f64, Vec<Event>) {
    detect_rows(&Cursor::from_state(state), dir, cache)
}

pub(crate) fn detect_rows(cur: &Cursor, dir: &Direction, cache: &PairCache) -> (f64, Vec<Event>) {
    let m = cache.m();
    let lam = cur.lambda;
    let rates = dir.row_rates(m, cache.n_other());
    let g = cache.scaled_values(cur.alpha0, &cur.gamma);
    let h = cache.scaled_values(dir.theta0, &rates);
    let upper = lam * (1.0 - 1e-12);
    let mut cands: Vec<(f64, usize, Set)> = Vec::new();
    for j in 0..m {
        let d = cache.target(j);
        match cur.sets[j] {
            Set::E => {
                // γ(λ) = γ^l − (λ^l − λ)θ
                let t = rates[j];
                if t < 0.0 {
                    cands.push((lam - (cur.gamma[j] - 1.0) / t, j, Set::L));
                } else if t > 0.0 {
                    cands.push((lam - cur.gamma[j] / t, j, Set::R));
                }
            }
            s => {
                // g_j(λ) + d_j λ reaches zero; its slope in λ must carry it
                // towards zero as λ decreases.
                let slope = h[j] + d;
                let ok = match s {
                    Set::L => slope > 0.0,
                    _ => slope < 0.0,
                };
                if ok {
                    cands.push(((lam * h[j] - g[j]) / slope, j, Set::E));
                }
            }
        }
    }
    let next = cands
        .iter()
        .map(|c| c.0)
        .filter(|&x| x.is_finite() && x > 0.0 && x < upper)
        .fold(0.0, f64::max);
    if next == 0.0 {
        return (0.0, Vec::new());
    }
    // A tie must also have reached its bound or margin at `next` to
    // round-off; snapping a row that is still short of it would break the
    // balance and margin equations.
    let tie = next - 1e-10 * lam;
    let step = lam - next;
    let reached = |j: usize, to: Set| match to {
        Set::L => (cur.gamma[j] - step * rates[j] - 1.0).abs() <= 1e-9,
        Set::R => (cur.gamma[j] - step * rates[j]).abs() <= 1e-9,
        Set::E => {
            let gj = g[j] - step * h[j];
            (gj + cache.target(j) * next).abs() <= 1e-9 * (1.0 + next + gj.abs())
        }
    };
    let events = cands
        .into_iter()
        .filter(|&(x, j, to)| x >= tie && x < upper && (x == next || reached(j, to)))
        .map(|(_, j, to)| move_event(j, cur.sets[j], to, cache.n_other()))
        .collect();
    (next, events)
}
