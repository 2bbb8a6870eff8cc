//! Tabular datasets, label encoding, stratified splits and per-pair triples.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which column of a table holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
    Name(String),
    /// No label column (prediction input only).
    Absent,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "last" => LabelColumn::Last,
            "none" => LabelColumn::Absent,
            _ => match s.parse::<usize>() {
                Ok(i) => LabelColumn::Index(i),
                Err(_) => LabelColumn::Name(s.to_string()),
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub label: LabelColumn,
    pub delimiter: u8,
    /// `None` detects a header by checking whether the first row's feature
    /// cells parse as numbers.
    pub has_header: Option<bool>,
    pub standardize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            label: LabelColumn::Last,
            delimiter: b',',
            has_header: None,
            standardize: true,
        }
    }
}

/// Per-column affine map `x ↦ (x − mean)·scale`. Constant columns get
/// `scale = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaling {
    pub fn fit(features: &DMatrix<f64>) -> Scaling {
        let (l, n) = features.shape();
        let mut mean = vec![0.0; n];
        let mut scale = vec![0.0; n];
        for c in 0..n {
            let col = features.column(c);
            let m = col.sum() / l as f64;
            let var = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / l as f64;
            let sd = var.sqrt();
            mean[c] = m;
            scale[c] = if sd > 1e-12 * (1.0 + m.abs()) { 1.0 / sd } else { 0.0 };
        }
        Scaling { mean, scale }
    }

    pub fn apply(&self, features: &mut DMatrix<f64>) {
        for c in 0..features.ncols() {
            for r in 0..features.nrows() {
                features[(r, c)] = (features[(r, c)] - self.mean[c]) * self.scale[c];
            }
        }
    }
}

/// Feature matrix with labels in `1..=K`.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    /// Original label text, indexed by `label − 1`.
    pub class_names: Vec<String>,
    pub scaling: Option<Scaling>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: DMatrix<f64>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Dataset> {
        if features.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        let k = class_names.len();
        if let Some(&bad) = labels.iter().find(|&&y| y == 0 || y > k) {
            return Err(Error::UnknownClass(bad));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            labels,
            class_names,
            scaling: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_classes()];
        for &y in &self.labels {
            sizes[y - 1] += 1;
        }
        sizes
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.features.row(r).iter().copied().collect()
    }

    /// Rows in the given order, same class encoding.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            class_names: self.class_names.clone(),
            scaling: self.scaling.clone(),
        }
    }

    /// Standardize every column in place and remember the map.
    pub fn standardize(&mut self) {
        let s = Scaling::fit(&self.features);
        s.apply(&mut self.features);
        self.scaling = Some(s);
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name={}", self.name);
        let _ = writeln!(out, "instances={}", self.len());
        let _ = writeln!(out, "features={}", self.dim());
        let _ = writeln!(out, "classes={}", self.num_classes());
        for (k, (name, size)) in self.class_names.iter().zip(self.class_sizes()).enumerate() {
            let _ = writeln!(out, "class.{}={} ({})", k + 1, size, name);
        }
        out
    }
}

/// Raw table before label encoding.
#[derive(Debug, Clone)]
pub struct Table {
    pub features: DMatrix<f64>,
    pub labels: Option<Vec<String>>,
}

pub fn read_table(path: &Path, opts: &LoadOptions) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Dimension(format!("{} has no rows", path.display())));
    }
    let width = records[0].len();
    let label_idx = match &opts.label {
        LabelColumn::Last => Some(width - 1),
        LabelColumn::Index(i) if *i < width => Some(*i),
        LabelColumn::Index(i) => return Err(Error::UnknownColumn(i.to_string())),
        LabelColumn::Name(name) => Some(
            records[0]
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?,
        ),
        LabelColumn::Absent => None,
    };
    let header = match (opts.has_header, &opts.label) {
        (Some(h), _) => h,
        (None, LabelColumn::Name(_)) => true,
        (None, _) => records[0]
            .iter()
            .enumerate()
            .any(|(c, v)| Some(c) != label_idx && v.parse::<f64>().is_err()),
    };
    let body = if header { &records[1..] } else { &records[..] };
    let n = width - usize::from(label_idx.is_some());
    let mut data = Vec::with_capacity(body.len() * n);
    let mut labels = Vec::with_capacity(body.len());
    for (r, rec) in body.iter().enumerate() {
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == label_idx {
                labels.push(cell.to_string());
                continue;
            }
            let v = cell.parse::<f64>().map_err(|_| Error::NonNumeric {
                row: r + usize::from(header),
                column: c,
                value: cell.to_string(),
            })?;
            data.push(v);
        }
    }
    Ok(Table {
        features: DMatrix::from_row_slice(body.len(), n, &data),
        labels: label_idx.map(|_| labels),
    })
}

/// Encode label strings as `1..=K` in first-appearance order.
pub fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let labels = raw
        .iter()
        .map(|s| {
            *ids.entry(s.as_str()).or_insert_with(|| {
                names.push(s.clone());
                names.len()
            })
        })
        .collect();
    (labels, names)
}

/// Load a labelled table. Labels are re-encoded `1..=K` by first appearance.
pub fn load_table(path: &Path, opts: &LoadOptions) -> Result<Dataset> {
    let table = read_table(path, opts)?;
    let raw = table
        .labels
        .ok_or_else(|| Error::UnknownColumn("none".into()))?;
    let (labels, names) = encode_labels(&raw);
    if names.len() < 3 {
        return Err(Error::TooFewClasses(names.len()));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut ds = Dataset::new(name, table.features, labels, names)?;
    if opts.standardize {
        ds.standardize();
    }
    Ok(ds)
}

/// Stratified seeded split. Each class sends `round(fraction·size)` rows
/// (at least one) to the first part; row order is preserved in both parts.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "split fraction {fraction} not in (0,1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for k in 1..=dataset.num_classes() {
        let mut rows: Vec<usize> = (0..dataset.len())
            .filter(|&r| dataset.labels[r] == k)
            .collect();
        if rows.is_empty() {
            return Err(Error::EmptyClass(k));
        }
        rows.shuffle(&mut rng);
        let take = ((fraction * rows.len() as f64).round() as usize).clamp(1, rows.len());
        first.extend_from_slice(&rows[..take]);
        second.extend_from_slice(&rows[take..]);
    }
    first.sort_unstable();
    second.sort_unstable();
    Ok((dataset.subset(&first), dataset.subset(&second)))
}

/// Role assignment for the ordered pair `(i, j)`: class `i` rows in `a`,
/// class `j` rows in `b`, everything else in `c`.
#[derive(Debug, Clone)]
pub struct TripleView {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub pair: (usize, usize),
    /// Source row of every row of `a`, `b`, `c`.
    pub rows: [Vec<usize>; 3],
}

impl TripleView {
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }
}

pub fn make_triple(dataset: &Dataset, i: usize, j: usize) -> Result<TripleView> {
    if i == j {
        return Err(Error::SamePair);
    }
    let k = dataset.num_classes();
    for c in [i, j] {
        if c == 0 || c > k {
            return Err(Error::UnknownClass(c));
        }
    }
    let mut rows: [Vec<usize>; 3] = Default::default();
    for (r, &y) in dataset.labels.iter().enumerate() {
        let block = if y == i {
            0
        } else if y == j {
            1
        } else {
            2
        };
        rows[block].push(r);
    }
    Ok(TripleView {
        a: dataset.features.select_rows(&rows[0]),
        b: dataset.features.select_rows(&rows[1]),
        c: dataset.features.select_rows(&rows[2]),
        pair: (i, j),
        rows,
    })
}

/// All unordered pairs `i < j` of `1..=k`.
pub fn class_pairs(k: usize) -> Vec<(usize, usize)> {
    (1..=k)
        .flat_map(|i| ((i + 1)..=k).map(move |j| (i, j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy(labels: &[usize], k: usize) -> Dataset {
        let l = labels.len();
        let feats = DMatrix::from_fn(l, 2, |r, c| (r * 2 + c) as f64);
        let names = (1..=k).map(|c| c.to_string()).collect();
        Dataset::new("toy", feats, labels.to_vec(), names).unwrap()
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_encoding() {
        let f = write("1,2,a\n3,4,b\n5,6,c\n");
        let opts = LoadOptions {
            standardize: false,
            ..Default::default()
        };
        let ds = load_table(f.path(), &opts).unwrap();
        assert_eq!(ds.labels, vec![1, 2, 3]);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.features[(2, 1)], 6.0);
    }

    #[test]
    fn header_and_named_label_column() {
        let f = write("kind,x,y\nb,1,2\na,3,4\nb,5,6\nc,7,8\n");
        let opts = LoadOptions {
            label: LabelColumn::Name("kind".into()),
            standardize: false,
            ..Default::default()
        };
        let ds = load_table(f.path(), &opts).unwrap();
        assert_eq!(ds.labels, vec![1, 2, 1, 3]);
        assert_eq!(ds.class_names, vec!["b", "a", "c"]);
        assert_eq!(ds.row(1), vec![3.0, 4.0]);
    }

    #[test]
    fn semicolon_delimiter_and_index_column() {
        let f = write("x;1;2\ny;3;4\nz;5;6\n");
        let opts = LoadOptions {
            label: LabelColumn::Index(0),
            delimiter: b';',
            standardize: false,
            ..Default::default()
        };
        let ds = load_table(f.path(), &opts).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.class_names, vec!["x", "y", "z"]);
    }

    #[test]
    fn load_errors() {
        let opts = LoadOptions::default();
        assert!(matches!(
            load_table(Path::new("/nonexistent/file.csv"), &opts),
            Err(Error::Io { .. })
        ));
        let f = write("1,2,a\n3,x,b\n5,6,c\n");
        assert!(matches!(
            load_table(f.path(), &opts),
            Err(Error::NonNumeric { .. })
        ));
        let f = write("1,2,a\n3,4,b\n5,6,a\n");
        assert!(matches!(
            load_table(f.path(), &opts),
            Err(Error::TooFewClasses(2))
        ));
    }

    #[test]
    fn standardization_moments() {
        let f = write("1,5,a\n2,5,b\n4,5,c\n9,5,a\n");
        let ds = load_table(f.path(), &LoadOptions::default()).unwrap();
        let col = ds.features.column(0);
        let mean = col.sum() / 4.0;
        let sd = (col.iter().map(|x| x * x).sum::<f64>() / 4.0 - mean * mean).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((sd - 1.0).abs() < 1e-6);
        assert!(ds.features.column(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn split_is_deterministic_and_stratified() {
        let labels: Vec<usize> = (0..60).map(|r| r % 3 + 1).collect();
        let ds = toy(&labels, 3);
        let (a1, b1) = split(&ds, 0.8, 7).unwrap();
        let (a2, b2) = split(&ds, 0.8, 7).unwrap();
        assert_eq!(a1.features, a2.features);
        assert_eq!(b1.labels, b2.labels);
        assert_eq!(a1.class_sizes(), vec![16, 16, 16]);
        assert_eq!(b1.len(), 12);
        assert_eq!(a1.num_classes(), b1.num_classes());
    }

    #[test]
    fn split_keeps_one_row_of_tiny_class() {
        let ds = toy(&[1, 1, 1, 1, 2, 2, 2, 3], 3);
        let (a, _) = split(&ds, 0.2, 1).unwrap();
        assert_eq!(a.class_sizes(), vec![1, 1, 1]);
        let empty = ds.subset(&[0, 1, 4]);
        assert!(matches!(split(&empty, 0.5, 1), Err(Error::EmptyClass(3))));
    }

    #[test]
    fn triple_blocks() {
        let ds = toy(&[1, 2, 3, 1, 3, 2, 1], 3);
        let t = make_triple(&ds, 1, 2).unwrap();
        assert_eq!(t.sizes(), (3, 2, 2));
        assert_eq!(t.rows[0], vec![0, 3, 6]);
        assert_eq!(t.b.row(1), ds.features.row(5));
        assert!(matches!(make_triple(&ds, 2, 2), Err(Error::SamePair)));
        assert!(matches!(make_triple(&ds, 1, 4), Err(Error::UnknownClass(4))));
    }

    #[test]
    fn pair_enumeration_matches_brute_force() {
        for k in 3..9 {
            let mut brute = 0;
            for i in 1..=k {
                for j in 1..=k {
                    if i < j {
                        brute += 1;
                    }
                }
            }
            assert_eq!(class_pairs(k).len(), brute);
        }
        assert_eq!(class_pairs(3), vec![(1, 2), (1, 3), (2, 3)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn labels_strategy() -> impl Strategy<Value = Vec<usize>> {
            prop::collection::vec(1usize..=4, 8..40).prop_filter("all classes", |v| {
                (1..=4).all(|k| v.contains(&k))
            })
        }

        proptest! {
            #[test]
            fn triple_roles_mirror(labels in labels_strategy(), i in 1usize..=4, j in 1usize..=4) {
                prop_assume!(i != j);
                let ds = toy(&labels, 4);
                let t1 = make_triple(&ds, i, j).unwrap();
                let t2 = make_triple(&ds, j, i).unwrap();
                prop_assert_eq!(&t1.a, &t2.b);
                let mut all: Vec<usize> = t1.rows.concat();
                all.sort_unstable();
                prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
            }

            #[test]
            fn split_deviation_below_one(labels in labels_strategy(), frac in 0.05f64..0.95, seed in 0u64..1000) {
                let ds = toy(&labels, 4);
                let (a, b) = split(&ds, frac, seed).unwrap();
                prop_assert_eq!(a.len() + b.len(), ds.len());
                for (got, total) in a.class_sizes().into_iter().zip(ds.class_sizes()) {
                    let want = frac * total as f64;
                    prop_assert!((got as f64 - want).abs() < 1.0);
                    prop_assert!(got >= 1);
                }
            }
        }
    }
}
