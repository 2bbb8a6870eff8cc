use std::path::Path;

use twinpath::bench::{run_grid_benchmark, run_path_benchmark};
use twinpath::dataset::{load_table, split, LoadOptions};
use twinpath::multiclass::fit;
use twinpath::path::dump::{read_path_table, write_path_table};
use twinpath::qp::Oracle;
use twinpath::{Config, Dataset, MulticlassModel};

fn iris() -> Dataset {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/iris.csv");
    load_table(&p, &LoadOptions::default()).unwrap()
}

#[test]
fn saved_model_predicts_like_the_fitted_one() {
    let ds = iris();
    let (train, test) = split(&ds, 0.8, 5).unwrap();
    let out = fit(&train, &Config::default(), &Oracle::default()).unwrap();
    let loaded = MulticlassModel::from_text(&out.model.to_text()).unwrap();
    assert_eq!(loaded, out.model);
    assert_eq!(loaded.predict_all(&test), out.model.predict_all(&test));
    assert_eq!(out.paths.len(), 3);
    assert_eq!(out.stats.paths_traced, 6);
}

#[test]
fn dumped_tables_round_trip_every_breakpoint() {
    let ds = iris();
    let out = fit(&ds, &Config::default(), &Oracle::default()).unwrap();
    for pp in &out.paths {
        for p in [&pp.first, &pp.second] {
            let mut buf = Vec::new();
            write_path_table(p, &mut buf).unwrap();
            let rows = read_path_table(buf.as_slice()).unwrap();
            assert_eq!(rows.len(), p.breakpoints.len());
            for (r, bp) in rows.iter().zip(&p.breakpoints) {
                assert_eq!(r.lambda, bp.lambda);
                assert_eq!(r.alpha0, bp.state.alpha0);
                assert_eq!(r.multipliers, bp.state.gamma());
            }
        }
    }
}

#[test]
fn grid_cost_is_grid_size_times_path_count() {
    let ds = iris();
    let cfg = Config {
        grid_size: 7,
        ..Config::default()
    };
    let path = run_path_benchmark(&ds, 2, 1, &cfg).unwrap();
    let grid = run_grid_benchmark(&ds, 2, 1, &cfg.grid(), &cfg).unwrap();
    let traces: usize = path.reps.iter().map(|r| r.path_traces).sum();
    assert_eq!(traces, 2 * 6);
    assert_eq!(grid.qpp_count_grid, 7 * traces);
    assert!(path.qpp_count_path <= traces);
}
