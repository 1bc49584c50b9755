//! Datasets: the synthetic parabola, delimited tables, and IDX image files;
//! normalization, splits and mini-batching.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backprop::Targets;
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngStream};

const STD_FLOOR: f64 = 1e-12;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Per-column affine normalization `x' = (x − mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn of(m: &Matrix) -> Self {
        let n = m.rows().max(1) as f64;
        let mean: Vec<f64> = m.column_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; m.cols()];
        for r in 0..m.rows() {
            for (j, &x) in m.row(r).iter().enumerate() {
                var[j] += (x - mean[j]).powi(2);
            }
        }
        let std = var.into_iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
        Self { mean, std }
    }

    pub fn apply(&self, m: &mut Matrix) {
        for r in 0..m.rows() {
            for (j, x) in m.row_mut(r).iter_mut().enumerate() {
                *x = (*x - self.mean[j]) / self.std[j];
            }
        }
    }

    pub fn invert(&self, m: &mut Matrix) {
        for r in 0..m.rows() {
            for (j, x) in m.row_mut(r).iter_mut().enumerate() {
                *x = *x * self.std[j] + self.mean[j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub targets: Targets,
    pub task: Task,
    /// Number of classes (0 for regression).
    pub n_classes: usize,
    /// Set when features were z-scored.
    pub feature_stats: Option<ColumnStats>,
    /// Set when regression targets were z-scored.
    pub target_stats: Option<ColumnStats>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }

    /// Rows `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            features: self.features.row_slice(indices)?,
            targets: self.select_targets(indices)?,
            task: self.task,
            n_classes: self.n_classes,
            feature_stats: self.feature_stats.clone(),
            target_stats: self.target_stats.clone(),
        })
    }

    pub fn select_targets(&self, indices: &[usize]) -> Result<Targets> {
        Ok(match &self.targets {
            Targets::Values(m) => Targets::Values(m.row_slice(indices)?),
            Targets::Classes(c) => Targets::Classes(
                indices
                    .iter()
                    .map(|&i| {
                        c.get(i).copied().ok_or(Error::Index {
                            index: i,
                            len: c.len(),
                        })
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    pub fn take(&self, n: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Z-scores the features with the given stats (e.g. from a train split).
    pub fn normalize_features_with(&mut self, stats: &ColumnStats) {
        stats.apply(&mut self.features);
        self.feature_stats = Some(stats.clone());
    }

    /// Z-scores regression targets with the given stats.
    pub fn normalize_targets_with(&mut self, stats: &ColumnStats) {
        if let Targets::Values(m) = &mut self.targets {
            stats.apply(m);
            self.target_stats = Some(stats.clone());
        }
    }

    /// Maps normalized predictions back to target units.
    pub fn denormalize_targets(&self, pred: &Matrix) -> Matrix {
        let mut out = pred.clone();
        if let Some(s) = &self.target_stats {
            s.invert(&mut out);
        }
        out
    }
}

/// Samples of `y = −x²` on an even grid of `n` points over `[−1, 1]`.
pub fn gen_toy(n: usize) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Parameter(format!("toy set needs at least 2 points, got {n}")));
    }
    let xs: Vec<f64> = (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect();
    toy_from_points(&xs)
}

/// The `n − 1` midpoints of the `gen_toy(n)` grid, used as held-out points.
pub fn gen_toy_midpoints(n: usize) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Parameter(format!("toy set needs at least 2 points, got {n}")));
    }
    let xs: Vec<f64> = (0..n - 1)
        .map(|i| -1.0 + (2 * i + 1) as f64 / (n - 1) as f64)
        .collect();
    toy_from_points(&xs)
}

fn toy_from_points(xs: &[f64]) -> Result<Dataset> {
    let ys: Vec<f64> = xs.iter().map(|x| -x * x).collect();
    Ok(Dataset {
        features: Matrix::new(xs.len(), 1, xs.to_vec())?,
        targets: Targets::Values(Matrix::new(ys.len(), 1, ys)?),
        task: Task::Regression,
        n_classes: 0,
        feature_stats: None,
        target_stats: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Column holding the target; negative values count from the end.
    pub target_column: i64,
    pub delimiter: Delimiter,
    pub has_header: bool,
    pub task: Task,
    pub normalize: bool,
}

/// Reads a rectangular numeric table.
pub fn load_table(path: impl AsRef<Path>, opts: &TableOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if (opts.has_header && i == 0) || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = match opts.delimiter {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        };
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(parse_err(format!("expected {w} fields, found {}", cells.len())))
            }
            _ => {}
        }
        let row = cells
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| parse_err(format!("non-numeric cell '{c}'"))))
            .collect::<Result<Vec<_>>>()?;
        if let Some(bad) = row.iter().find(|x| !x.is_finite()) {
            return Err(parse_err(format!("non-finite cell {bad}")));
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::Data(format!("{} holds no data rows", path.display())))?;
    let target_col = if opts.target_column < 0 {
        width as i64 + opts.target_column
    } else {
        opts.target_column
    };
    if target_col < 0 || target_col as usize >= width {
        return Err(Error::Config(format!(
            "target column {} outside a table of width {width}",
            opts.target_column
        )));
    }
    let target_col = target_col as usize;
    let n = rows.len();
    let mut features = Vec::with_capacity(n * (width - 1));
    let mut raw_targets = Vec::with_capacity(n);
    for row in &rows {
        for (j, &v) in row.iter().enumerate() {
            if j == target_col {
                raw_targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let mut features = Matrix::new(n, width - 1, features)?;
    let (targets, n_classes) = match opts.task {
        Task::Regression => (Targets::Values(Matrix::new(n, 1, raw_targets)?), 0),
        Task::Classification => {
            let (labels, n_classes) = contiguous_labels(&raw_targets, path)?;
            (Targets::Classes(labels), n_classes)
        }
    };
    let feature_stats = opts.normalize.then(|| {
        let s = ColumnStats::of(&features);
        s.apply(&mut features);
        s
    });
    Ok(Dataset {
        features,
        targets,
        task: opts.task,
        n_classes,
        feature_stats,
        target_stats: None,
    })
}

/// Maps the distinct (integral) class values to `0..k` in ascending order.
fn contiguous_labels(values: &[f64], path: &Path) -> Result<(Vec<usize>, usize)> {
    let mut classes = BTreeMap::new();
    for &v in values {
        if v.fract() != 0.0 {
            return Err(Error::Data(format!(
                "{}: class value {v} is not an integer",
                path.display()
            )));
        }
        classes.insert(v as i64, 0usize);
    }
    for (i, slot) in classes.values_mut().enumerate() {
        *slot = i;
    }
    let labels = values.iter().map(|&v| classes[&(v as i64)]).collect();
    Ok((labels, classes.len()))
}

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: "truncated header".into(),
        })
}

/// Parses an IDX file of unsigned bytes: returns the dimensions and payload.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let fmt_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let magic = read_be_u32(bytes, 0, path)?;
    if magic != expected_magic {
        return Err(fmt_err(format!(
            "magic number {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let n_dims = (magic & 0xff) as usize;
    let dims = (0..n_dims)
        .map(|i| read_be_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * n_dims;
    let expected: usize = dims.iter().product();
    let payload = &bytes[header.min(bytes.len())..];
    if payload.len() != expected {
        return Err(fmt_err(format!(
            "dimensions {dims:?} need {expected} bytes, file holds {}",
            payload.len()
        )));
    }
    Ok((dims, payload.to_vec()))
}

/// Reads an IDX image/label pair; pixels are scaled to `[0, 1]`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let ibytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let lbytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let (idims, pixels) = parse_idx(&ibytes, IDX_IMAGES_MAGIC, ip)?;
    let (ldims, labels) = parse_idx(&lbytes, IDX_LABELS_MAGIC, lp)?;
    if idims[0] != ldims[0] {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    let n = idims[0];
    let d = idims[1..].iter().product();
    let features = Matrix::new(n, d, pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        features,
        targets: Targets::Classes(labels),
        task: Task::Classification,
        n_classes,
        feature_stats: None,
        target_stats: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

/// Seeded disjoint split; the train part gets `floor(fraction · N)` rows.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n = ds.len();
    let n_train = (spec.train_fraction * n as f64).floor() as usize;
    let mut rng = RngStream::new(spec.seed);
    let (mut train, mut test) = match (spec.stratified, ds.labels()) {
        (true, Some(labels)) => stratified_indices(labels, ds.n_classes, n_train, &mut rng),
        _ => {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            let test = idx.split_off(n_train);
            (idx, test)
        }
    };
    rng.shuffle(&mut train);
    rng.shuffle(&mut test);
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}

fn stratified_indices(
    labels: &[usize],
    n_classes: usize,
    n_train: usize,
    rng: &mut RngStream,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes.max(1)];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let n = labels.len() as f64;
    let f = n_train as f64 / n;
    // floor quotas, then hand out the remainder by largest fractional part
    let mut quotas: Vec<(usize, f64)> = by_class
        .iter()
        .map(|c| {
            let exact = f * c.len() as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].1.total_cmp(&quotas[a].1).then(a.cmp(&b)));
    for &c in order.iter().take(n_train.saturating_sub(assigned)) {
        quotas[c].0 += 1;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, (quota, _)) in by_class.iter_mut().zip(quotas) {
        rng.shuffle(class);
        train.extend_from_slice(&class[..quota]);
        test.extend_from_slice(&class[quota..]);
    }
    (train, test)
}

/// Index batches covering `0..n` once. `batch_size = None` is full-batch.
pub fn batches(n: usize, batch_size: Option<usize>, seed: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    let size = match batch_size {
        Some(0) => return Err(Error::Config("batch size must be >= 1".into())),
        Some(b) => b,
        None => n.max(1),
    };
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        RngStream::new(seed).shuffle(&mut idx);
    }
    Ok(idx.chunks(size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn classes(n_per: &[usize]) -> Dataset {
        let labels: Vec<usize> = n_per
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat(c).take(k))
            .collect();
        let n = labels.len();
        Dataset {
            features: Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap(),
            targets: Targets::Classes(labels),
            task: Task::Classification,
            n_classes: n_per.len(),
            feature_stats: None,
            target_stats: None,
        }
    }

    #[test]
    fn toy_grid() {
        let ds = gen_toy(40).unwrap();
        assert_eq!(ds.len(), 40);
        assert_eq!(ds.features.get(0, 0), -1.0);
        let Targets::Values(y) = &ds.targets else { panic!() };
        assert_eq!(y.get(0, 0), -1.0);
        let spacing = 2.0 / 39.0;
        assert!((0..40).any(|i| ds.features.get(i, 0).abs() <= spacing && y.get(i, 0) >= -spacing * spacing));
        let two = gen_toy(2).unwrap();
        assert_eq!(two.features.data(), &[-1.0, 1.0]);
        let Targets::Values(y2) = &two.targets else { panic!() };
        assert_eq!(y2.data(), &[-1.0, -1.0]);
        assert!(gen_toy(1).is_err());
        assert_eq!(gen_toy_midpoints(40).unwrap().len(), 39);
    }

    #[test]
    fn table_errors() {
        let dir = tempfile::tempdir().unwrap();
        let opts = TableOptions {
            target_column: -1,
            delimiter: Delimiter::Comma,
            has_header: false,
            task: Task::Regression,
            normalize: false,
        };
        assert!(matches!(load_table(dir.path().join("nope.csv"), &opts), Err(Error::Io { .. })));

        let ragged = dir.path().join("ragged.csv");
        fs::write(&ragged, "1,2,3\n4,5,6\n7,8\n").unwrap();
        assert!(matches!(load_table(&ragged, &opts), Err(Error::Parse { line: 3, .. })));

        let text = dir.path().join("text.csv");
        fs::write(&text, "1,2,3\n4,abc,6\n").unwrap();
        assert!(matches!(load_table(&text, &opts), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        let mut f = fs::File::create(&p).unwrap();
        for i in 0..5 {
            writeln!(f, "7 {} {}", i, i % 2 + 3).unwrap();
        }
        let ds = load_table(
            &p,
            &TableOptions {
                target_column: -1,
                delimiter: Delimiter::Whitespace,
                has_header: false,
                task: Task::Classification,
                normalize: true,
            },
        )
        .unwrap();
        assert!(ds.features.column(0).iter().all(|&x| x == 0.0));
        let mean: f64 = ds.features.column(1).iter().sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-9);
        assert_eq!(ds.n_classes, 2);
        assert_eq!(ds.labels().unwrap(), &[0, 1, 0, 1, 0]);
    }

    #[test]
    fn normalization_round_trip() {
        let m = Matrix::from_rows(&[vec![1.0, 100.0], vec![2.0, 300.0], vec![4.0, -50.0]]).unwrap();
        let s = ColumnStats::of(&m);
        let mut z = m.clone();
        s.apply(&mut z);
        s.invert(&mut z);
        for (a, b) in z.data().iter().zip(m.data()) {
            assert!((a - b).abs() <= 1e-9 * b.abs());
        }
    }

    #[test]
    fn idx_bad_magic_and_mismatch() {
        let p = Path::new("mem");
        let mut bytes = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3, 4];
        let (dims, payload) = parse_idx(&bytes, IDX_IMAGES_MAGIC, p).unwrap();
        assert_eq!(dims, vec![1, 2, 2]);
        assert_eq!(payload, vec![1, 2, 3, 4]);
        assert!(matches!(parse_idx(&bytes, IDX_LABELS_MAGIC, p), Err(Error::Format { .. })));
        bytes.pop();
        assert!(matches!(parse_idx(&bytes, IDX_IMAGES_MAGIC, p), Err(Error::Format { .. })));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = classes(&[506]);
        let spec = SplitSpec {
            train_fraction: 0.8,
            seed: 3,
            stratified: false,
        };
        let (a, b) = split(&ds, &spec).unwrap();
        assert_eq!((a.len(), b.len()), (404, 102));
        let (a2, _) = split(&ds, &spec).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<f64> = a.features.data().iter().chain(b.features.data()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..506).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn stratified_split_balances_classes() {
        let ds = classes(&[50, 50]);
        let (tr, te) = split(
            &ds,
            &SplitSpec {
                train_fraction: 0.7,
                seed: 1,
                stratified: true,
            },
        )
        .unwrap();
        let count = |d: &Dataset, c| d.labels().unwrap().iter().filter(|&&l| l == c).count();
        assert_eq!(tr.len(), 70);
        assert!(count(&tr, 0).abs_diff(35) <= 1 && count(&tr, 1).abs_diff(35) <= 1);
        assert!(count(&te, 0).abs_diff(15) <= 1);
    }

    #[test]
    fn batch_cases() {
        let b = batches(10, Some(3), 0, false).unwrap();
        assert_eq!(b, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8], vec![9]]);
        assert_eq!(batches(10, Some(50), 0, true).unwrap().len(), 1);
        assert_eq!(batches(10, None, 0, false).unwrap(), vec![(0..10).collect::<Vec<_>>()]);
        assert!(batches(10, Some(0), 0, false).is_err());
        let n_train = (58508.0f64 * 0.8).floor() as usize;
        assert_eq!(batches(n_train, Some(500), 1, true).unwrap().len(), n_train.div_ceil(500));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn epoch_coverage(n in 1usize..300, b in 1usize..64, seed in any::<u64>()) {
                let mut seen: Vec<usize> = batches(n, Some(b), seed, true).unwrap().concat();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
