use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{make_triple, TripleView};
use crate::qp::{solve_fixed_lambda, QpSolution};
use crate::synthetic::gaussian_blobs;

const EPS: f64 = 0.1;
const DELTA: f64 = 1e-7;

fn blobs_triple(per_class: usize, spread: f64, seed: u64) -> TripleView {
    let ds = gaussian_blobs(3, per_class, 2, spread, seed);
    make_triple(&ds, 1, 2).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

fn triple_from(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> TripleView {
    TripleView {
        a,
        b,
        c,
        pair: (1, 2),
        rows: [vec![], vec![], vec![]],
    }
}

fn oracle_gap(state: &PartitionState, sol: &QpSolution) -> f64 {
    let mut d = (state.alpha0 - sol.alpha0()).abs();
    for (x, y) in state.gamma().iter().zip(sol.multipliers()) {
        d = d.max((x - y).abs());
    }
    d
}

fn trace(t: &TripleView, side: Side, config: &Config) -> SolutionPath {
    trace_path(t, side, config, &Oracle::default()).unwrap()
}

#[test]
fn cache_inverse_of_identity_rows() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let t = triple_from(a, DMatrix::from_element(1, 2, 2.0), DMatrix::from_element(1, 2, -2.0));
    let cache = build_cache(&t, Side::First, EPS, DELTA).unwrap();
    for r in 0..2 {
        for c in 0..2 {
            let want = if r == c { 1.0 } else { 0.0 };
            assert!((cache.astar[(r, c)] - want).abs() < 1e-6);
        }
    }
}

#[test]
fn cache_inverse_by_multiplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_matrix(20, 2, &mut rng);
    let t = triple_from(a.clone(), random_matrix(3, 2, &mut rng), random_matrix(3, 2, &mut rng));
    let cache = build_cache(&t, Side::First, EPS, DELTA).unwrap();
    let gram = a.transpose() * &a + DMatrix::identity(2, 2) * DELTA;
    let prod = gram * &cache.astar;
    assert!((prod - DMatrix::<f64>::identity(2, 2)).amax() < 1e-8);
    assert!((&cache.astar - cache.astar.transpose()).amax() == 0.0);
}

#[test]
fn cache_second_side_uses_other_class() {
    let t = blobs_triple(6, 1.0, 3);
    let cache = build_cache(&t, Side::Second, EPS, DELTA).unwrap();
    assert_eq!(cache.problem.own, t.b);
    assert_eq!(cache.n_other(), t.a.nrows());
}

#[test]
fn singular_own_block_rejected() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
    let t = triple_from(a, DMatrix::from_element(1, 2, 2.0), DMatrix::from_element(1, 2, -2.0));
    // rank one plus a 1e-20 ridge is beyond the condition limit
    assert!(matches!(build_cache(&t, Side::First, EPS, 1e-20), Err(Error::Singular(_))));
}

fn state_with(cache: &PairCache, e: &[usize]) -> PartitionState {
    let m = cache.m();
    let sets: Vec<Set> = (0..m).map(|j| if e.contains(&j) { Set::E } else { Set::L }).collect();
    PartitionState::from_rows(1.0, 0.0, &vec![1.0; m], &sets, cache.n_other())
}

#[test]
fn empty_e_sets_give_scalar_system() {
    let t = blobs_triple(5, 1.0, 1);
    let cache = build_cache(&t, Side::First, EPS, DELTA).unwrap();
    let (a, b) = assemble_system(&state_with(&cache, &[]), &cache);
    assert_eq!(a.shape(), (1, 1));
    assert_eq!(a[(0, 0)], cache.c0);
    assert_eq!(b.as_slice(), &[0.0]);
}

#[test]
fn rest_targets_are_relaxed() {
    let t = blobs_triple(5, 1.0, 1);
    let cache = build_cache(&t, Side::First, EPS, DELTA).unwrap();
    let n_other = cache.n_other();
    let e = [0, 1, n_other, n_other + 2, n_other + 3];
    let (_, b) = assemble_system(&state_with(&cache, &e), &cache);
    assert_eq!(b[0], 0.0);
    assert_eq!(&b.as_slice()[1..3], &[1.0, 1.0]);
    assert!(b.as_slice()[3..].iter().all(|&x| x == 1.0 - EPS));
}

#[test]
fn system_matches_dense_recomputation() {
    let t = blobs_triple(8, 1.5, 4);
    let cache = build_cache(&t, Side::First, EPS, DELTA).unwrap();
    let (i, k) = (2, 5);
    let n_other = cache.n_other();
    let (a, b) = assemble_system(&state_with(&cache, &[i, n_other + k]), &cache);

    let own = &t.a;
    let astar = (own.transpose() * own + DMatrix::identity(2, 2) * DELTA)
        .try_inverse()
        .unwrap();
    let e = DVector::from_element(own.nrows(), 1.0);
    let proj = own * &astar * own.transpose();
    let c0 = own.nrows() as f64 - e.dot(&(&proj * &e));
    let xi = t.b.row(i).transpose();
    let xk = t.c.row(k).transpose();
    let coef = |x: &DVector<f64>| 1.0 - (&e.transpose() * own * &astar * x)[0];
    let kern = |x: &DVector<f64>, y: &DVector<f64>| (x.transpose() * &astar * y)[0];
    let want = DMatrix::from_row_slice(
        3,
        3,
        &[
            c0,
            coef(&xi),
            coef(&xk),
            -coef(&xi),
            kern(&xi, &xi),
            kern(&xi, &xk),
            -coef(&xk),
            kern(&xk, &xi),
            kern(&xk, &xk),
        ],
    );
    let scale = want.amax();
    assert!((a - want).amax() < 1e-9 * scale);
    assert_eq!(b.as_slice(), &[0.0, 1.0, 1.0 - EPS]);
}

#[test]
fn zero_rhs_gives_zero_offset_rate() {
    let a = DMatrix::from_row_slice(1, 1, &[3.0]);
    let x = solve_direction(&a, &DVector::zeros(1)).unwrap();
    assert_eq!(x[0], 0.0);
}

#[test]
fn direction_matches_qr_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_matrix(4, 4, &mut rng) + DMatrix::identity(4, 4) * 2.0;
    let b = DVector::from_fn(4, |_, _| rng.random::<f64>());
    let x = solve_direction(&a, &b).unwrap();
    let y = a.clone().qr().solve(&b).unwrap();
    assert!((x - y).amax() < 1e-10);
}

#[test]
fn singular_direction_is_reported() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let b = DVector::from_vec(vec![0.0, 1.0]);
    assert!(solve_direction(&a, &b).is_err());
}

#[test]
fn path_matches_oracle_at_midpoints() {
    let config = Config::default();
    for seed in 0..3 {
        let t = blobs_triple(10, 2.0, seed);
        for side in Side::BOTH {
            let path = trace(&t, side, &config);
            assert!(path.truncated.is_none());
            for w in path.breakpoints.windows(2) {
                let mid = 0.5 * (w[0].lambda + w[1].lambda);
                let st = path.interpolate(mid).unwrap();
                let sol = solve_fixed_lambda(&t, side, mid, EPS, DELTA, 1e-8).unwrap();
                assert!(oracle_gap(&st, &sol) < 1e-4, "λ {mid}");
            }
        }
    }
}

#[test]
fn hyperplane_matches_oracle() {
    let config = Config::default();
    let t = blobs_triple(10, 2.0, 5);
    for side in Side::BOTH {
        let path = trace(&t, side, &config);
        let w = &path.breakpoints[path.breakpoints.len() / 2..];
        let mid = 0.5 * (w[0].lambda + w[1].lambda);
        let (wv, b) = path.hyperplane(mid).unwrap();
        let sol = solve_fixed_lambda(&t, side, mid, EPS, DELTA, 1e-8).unwrap();
        let scale = 1.0 + sol.w.amax().max(sol.b.abs());
        assert!((wv - &sol.w).amax() < 1e-6 * scale);
        assert!((b - sol.b).abs() < 1e-6 * scale);
    }
}

#[test]
fn segments_join_continuously() {
    let t = blobs_triple(10, 2.0, 8);
    let path = trace(&t, Side::First, &Config::default());
    for w in path.breakpoints.windows(2) {
        let dir = w[0].direction.as_ref().unwrap();
        let end = advance_state(&w[0].state, dir, w[1].lambda);
        let gap = (end.alpha0 - w[1].state.alpha0).abs().max(
            end.gamma()
                .iter()
                .zip(w[1].state.gamma())
                .fold(0.0, |m, (a, b)| m.max((a - b).abs())),
        );
        assert!(gap < 1e-8, "jump {gap:e} at λ {}", w[1].lambda);
    }
}

#[test]
fn interpolation_reproduces_breakpoints() {
    let t = blobs_triple(10, 2.0, 9);
    let path = trace(&t, Side::Second, &Config::default());
    for bp in &path.breakpoints {
        let st = path.interpolate(bp.lambda).unwrap();
        assert_eq!(st.gamma(), bp.state.gamma());
        assert_eq!(st.alpha0, bp.state.alpha0);
    }
    let (lo, hi) = path.range();
    assert!(path.interpolate(hi * 2.0).is_err());
    assert!(path.interpolate(lo / 2.0).is_err());
}

#[test]
fn first_event_matches_oracle_bisection() {
    let t = blobs_triple(10, 2.0, 2);
    let mut config = Config::default();
    config.closed_form_init = false;
    let path = trace(&t, Side::First, &config);
    let bps = &path.breakpoints;
    let Some(Event::Move { block, index, to, .. }) = bps[1].events.first().cloned() else {
        panic!("second breakpoint has no move: {:?}", bps[1].events);
    };
    let j = match block {
        Block::Other => index,
        Block::Rest => path.cache.n_other() + index,
    };
    let sets_at = |lambda: f64| {
        let sol = solve_fixed_lambda(&t, Side::First, lambda, EPS, DELTA, 1e-10).unwrap();
        let g = sol.multipliers()[j];
        let margin = -path.cache.scaled_values(sol.alpha0(), &sol.multipliers())[j] / lambda;
        let on = (margin - path.cache.target(j)).abs() < 1e-7;
        // the row has left its segment-one set once it is in the target set
        match to {
            Set::L => g > 1.0 - 1e-9 && !on,
            Set::R => g < 1e-9 && !on,
            Set::E => on,
        }
    };
    let (mut hi, mut lo) = (bps[0].lambda, bps[1].lambda * 0.999);
    if bps.len() > 2 {
        lo = lo.max(bps[2].lambda);
    }
    assert!(!sets_at(0.5 * (bps[0].lambda + bps[1].lambda)));
    for _ in 0..40 {
        let mid = 0.5 * (hi + lo);
        if sets_at(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!(((hi - bps[1].lambda) / bps[1].lambda).abs() < 1e-4, "{hi} vs {}", bps[1].lambda);
}

#[test]
fn no_closed_form_when_every_projection_is_small() {
    let t = blobs_triple(10, 1.0, 0);
    let cache = build_cache(&t, Side::First, EPS, DELTA).unwrap();
    assert!(cache.p.iter().all(|&p| p <= 1.0));
    assert!(start_candidates(&cache).is_empty());
    assert!(closed_form_init(&cache, 1e-2).is_none());
}

#[test]
fn closed_form_candidates_pin_two_rows() {
    // other class beyond the own class along the first axis: p > 1 there
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut blob = |n: usize, cx: f64| {
        DMatrix::from_fn(n, 2, |_, c| if c == 0 { cx } else { 0.0 } + 0.6 * (rng.random::<f64>() - 0.5))
    };
    let t = triple_from(blob(6, 1.0), blob(5, 3.0), blob(5, -1.0));
    let cache = build_cache(&t, Side::First, EPS, DELTA).unwrap();
    let cands = start_candidates(&cache);
    assert!(!cands.is_empty());
    for (lambda, b) in cands {
        let margins: Vec<f64> = (0..cache.m())
            .map(|j| {
                let ws = cache.problem.cons.row(j).dot(&cache.wstar.transpose());
                -(b * cache.coef(j) + ws / lambda) - cache.target(j)
            })
            .collect();
        let on = margins.iter().filter(|x| x.abs() < 1e-9).count();
        assert!(on >= 2, "{margins:?}");
    }
}

#[test]
fn limit_start_matches_oracle_on_both_sides_of_first_event() {
    for seed in 0..4 {
        let t = blobs_triple(10, 2.0, seed);
        for side in Side::BOTH {
            let cache = build_cache(&t, side, EPS, DELTA).unwrap();
            let (lambda0, state) = limit_start(&cache, 1e3).unwrap();
            assert!(state.gamma().iter().all(|&g| g == 1.0));
            let above = solve_fixed_lambda(&t, side, lambda0 * (1.0 + 1e-6), EPS, DELTA, 1e-10).unwrap();
            assert!(above.multipliers().iter().all(|&g| (g - 1.0).abs() < 1e-6));
            assert!((above.alpha0() - state.alpha0).abs() < 1e-6 * (1.0 + state.alpha0.abs()));
            let below = solve_fixed_lambda(&t, side, lambda0 * (1.0 - 1e-3), EPS, DELTA, 1e-10).unwrap();
            assert_eq!(below.multipliers().iter().filter(|&&g| g < 1.0 - 1e-9).count(), 1);
        }
    }
}

#[test]
fn limit_start_needs_no_oracle() {
    let t = blobs_triple(10, 2.0, 6);
    let oracle = Oracle::default();
    let path = trace_path(&t, Side::First, &Config::default(), &oracle).unwrap();
    assert_eq!(path.init, InitKind::Limit);
    assert_eq!(oracle.calls(), 0);
}

#[test]
fn fallback_start_satisfies_invariants() {
    let mut config = Config::default();
    config.closed_form_init = false;
    for seed in 0..3 {
        let t = blobs_triple(10, 2.0, seed);
        for side in Side::BOTH {
            let cache = build_cache(&t, side, EPS, DELTA).unwrap();
            let oracle = Oracle::default();
            let st = qp_fallback_init(&cache, &oracle, config.lambda_start).unwrap();
            assert_eq!(oracle.calls(), 1);
            st.check(&cache).unwrap();
            let path = trace_path(&t, side, &config, &oracle).unwrap();
            assert_eq!(path.init, InitKind::Fallback);
        }
    }
}

#[test]
fn dump_round_trip() {
    let t = blobs_triple(6, 2.0, 3);
    let path = trace(&t, Side::First, &Config::default());
    let mut buf = Vec::new();
    write_path_table(&path, &mut buf).unwrap();
    let rows = read_path_table(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), path.breakpoints.len());
    for (row, bp) in rows.iter().zip(&path.breakpoints) {
        assert_eq!(row.lambda, bp.lambda);
        assert_eq!(row.alpha0, bp.state.alpha0);
        assert_eq!(row.multipliers, bp.state.gamma());
    }
    assert!(rows[0].event_kind.starts_with("init"));
    assert!(rows.last().unwrap().event_kind.ends_with("terminal"));
}

fn check_path(path: &SolutionPath) -> std::result::Result<(), TestCaseError> {
    let bps = &path.breakpoints;
    for bp in bps {
        bp.state.check(&path.cache).map_err(TestCaseError::fail)?;
        for g in bp.state.gamma() {
            prop_assert!((-1e-8..=1.0 + 1e-8).contains(&g));
        }
    }
    for w in bps.windows(2) {
        prop_assert!(w[1].lambda < w[0].lambda);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn traced_paths_keep_invariants(seed in 0u64..10_000, spread in 0.5f64..3.0, per in 4usize..12) {
        let t = blobs_triple(per, spread, seed);
        for side in Side::BOTH {
            let path = trace(&t, side, &Config::default());
            prop_assert!(path.truncated.is_none());
            check_path(&path)?;
        }
    }

    #[test]
    fn random_lambda_matches_oracle(seed in 0u64..10_000, u in 0.0f64..1.0) {
        let t = blobs_triple(6, 2.0, seed);
        let path = trace(&t, Side::First, &Config::default());
        let (lo, hi) = path.range();
        let lambda = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
        let st = path.interpolate(lambda).unwrap();
        let sol = solve_fixed_lambda(&t, Side::First, lambda, EPS, DELTA, 1e-8).unwrap();
        prop_assert!(oracle_gap(&st, &sol) < 1e-4);
    }
}
