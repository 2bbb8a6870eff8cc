use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use twinpath::path::dump::read_path_table;

fn data(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(file)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twinpath")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn path_writes_table_and_reports_status() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let o = run(&["path", "--data", s(&iris), "--pair", "1", "2", "--side", "first", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("pair (1,2) first:"), "{out}");
    assert!(out.contains("complete"), "{out}");
    let table = std::fs::File::open(dir.path().join("path_1_2_first.csv")).unwrap();
    let rows = read_path_table(std::io::BufReader::new(table)).unwrap();
    let n: usize = out.split(": ").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
    assert_eq!(rows.len(), n);
    assert!(rows.windows(2).all(|w| w[1].lambda < w[0].lambda));
    assert!(!dir.path().join("path_1_2_second.csv").exists());
}

#[test]
fn same_pair_is_rejected() {
    let iris = data("iris.csv");
    let o = run(&["path", "--data", s(&iris), "--pair", "1", "1"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("pair classes must differ"), "{}", stderr(&o));
}

#[test]
fn eps_outside_unit_interval_is_rejected() {
    let iris = data("iris.csv");
    for eps in ["--eps=0.0", "--eps=1.0", "--eps=-0.5"] {
        let o = run(&["path", "--data", s(&iris), "--pair", "1", "2", eps]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains("eps must be in (0,1)"), "{}", stderr(&o));
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "# broken\neps = 0.0\n").unwrap();
    let o = run(&["path", "--data", s(&iris), "--pair", "1", "2", "--config", s(&bad), "--out", s(dir.path())]);
    assert!(!o.status.success());
    let o = run(&[
        "path", "--data", s(&iris), "--pair", "1", "2", "--config", s(&bad), "--eps", "0.2", "--out", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn missing_data_file_fails() {
    let o = run(&["path", "--data", "/nonexistent/x.csv", "--pair", "1", "2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("x.csv"), "{}", stderr(&o));
}

fn percent(out: &str, key: &str) -> f64 {
    let line = out.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {out}"));
    let v = line.trim_start_matches(key).trim().trim_end_matches('%');
    let (_, frac) = v.split_once('.').unwrap();
    assert_eq!(frac.len(), 2, "two decimals in {line}");
    v.parse().unwrap()
}

#[test]
fn fit_then_predict_on_held_out_fifth() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let model = dir.path().join("model.txt");
    let hold = dir.path().join("hold.csv");
    let labels = dir.path().join("labels.txt");
    let o = run(&["fit", "--data", s(&iris), "--model", s(&model), "--holdout", s(&hold), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fit_acc = percent(&stdout(&o), "held-out accuracy:");
    let held = std::fs::read_to_string(&hold).unwrap();
    assert_eq!(held.lines().count(), 30);
    let o = run(&["predict", "--model", s(&model), "--data", s(&hold), "--out", s(&labels)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc = percent(&stdout(&o), "accuracy:");
    assert_eq!(acc, fit_acc);
    let predicted = std::fs::read_to_string(&labels).unwrap();
    let truth: Vec<&str> = held.lines().map(|l| l.rsplit(',').next().unwrap()).collect();
    let hits = predicted.lines().zip(&truth).filter(|(p, t)| p == *t).count();
    assert!((100.0 * hits as f64 / 30.0 - acc).abs() < 0.006);
}

#[test]
fn predict_rejects_other_model_version() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let model = dir.path().join("model.txt");
    let o = run(&["fit", "--data", s(&iris), "--model", s(&model)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&model).unwrap();
    assert!(text.contains("\nversion=1\n"));
    std::fs::write(&model, text.replacen("\nversion=1\n", "\nversion=99\n", 1)).unwrap();
    let o = run(&["predict", "--model", s(&model), "--data", s(&iris)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
    let o = run(&["predict", "--model", s(&dir.path().join("none.txt")), "--data", s(&iris)]);
    assert!(!o.status.success());
}

fn report_value(text: &str, key: &str) -> usize {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn grid_bench_counts_every_solve() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let report = dir.path().join("r.txt");
    let o = run(&[
        "bench", "--data", s(&iris), "--method", "grid", "--grid-size", "100", "--reps", "2", "--out", s(&report),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&report).unwrap();
    // K(K−1)/2 pairs, two sides each, one solve per grid value
    assert_eq!(report_value(&text, "qpp_count_grid"), 100 * 3 * 2 * 2);
    assert_eq!(report_value(&text, "qpp_count_path"), 0);
}

#[test]
fn path_bench_prints_qpp_bound_per_rep() {
    let dir = tempfile::tempdir().unwrap();
    let iris = data("iris.csv");
    let figs = dir.path().join("figs");
    let o = run(&["bench", "--data", s(&iris), "--reps", "3", "--figures", s(&figs)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.contains("O(QPPs) ≤ 6")).count(), 3, "{out}");
    assert!(figs.join("accuracy_iris_path.csv").exists());
    assert!(figs.join("figure_2_3_second.csv").exists());
}

#[test]
fn bench_is_deterministic_under_seed() {
    let iris = data("iris.csv");
    let outputs: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let (r, m) = (dir.path().join("r.txt"), dir.path().join("m.txt"));
            let o = run(&["bench", "--data", s(&iris), "--reps", "2", "--seed", "11", "--out", s(&r), "--model", s(&m)]);
            assert!(o.status.success(), "{}", stderr(&o));
            (std::fs::read(r).unwrap(), std::fs::read(m).unwrap())
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}
