//! Multi-label datasets: the binary label matrix, a seeded synthetic
//! generator and the CSV file format.
//!
//! CSV layout: a header `f0,…,f{D-1},y0,…,y{C-1}`, then one sample per row.
//! Features are written in Rust's shortest round-trip decimal form, labels as
//! `0`/`1`, lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

/// N×C binary annotation matrix with cached per-class positive counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
    positives: Vec<usize>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<u8>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::shape(
                "LabelMatrix::new",
                (rows, cols),
                (entries.len(), 1),
            ));
        }
        if let Some(bad) = entries.iter().find(|&&v| v > 1) {
            return Err(Error::Config(format!("label value {bad} is not binary")));
        }
        let mut positives = vec![0; cols];
        for row in entries.chunks(cols.max(1)) {
            for (p, &v) in positives.iter_mut().zip(row) {
                *p += usize::from(v);
            }
        }
        Ok(LabelMatrix {
            rows,
            cols,
            entries,
            positives,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMatrix {
            rows,
            cols,
            entries: vec![0; rows * cols],
            positives: vec![0; cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[u8] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    /// Sets one entry, keeping the positive-count cache consistent.
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let idx = row * self.cols + col;
        let old = self.entries[idx];
        let new = u8::from(value);
        if old != new {
            self.entries[idx] = new;
            if value {
                self.positives[col] += 1;
            } else {
                self.positives[col] -= 1;
            }
        }
    }

    pub fn positives_per_class(&self) -> &[usize] {
        &self.positives
    }

    pub fn total_positives(&self) -> usize {
        self.positives.iter().sum()
    }

    pub fn select_rows(&self, indices: &[usize]) -> LabelMatrix {
        let mut entries = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            entries.extend_from_slice(self.row(i));
        }
        LabelMatrix::new(indices.len(), self.cols, entries).expect("rows of a valid matrix")
    }

    /// Labels as a real-valued matrix of 0.0 / 1.0.
    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(
            self.rows,
            self.cols,
            self.entries.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("binary entries are finite")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiLabelDataset {
    features: Matrix,
    labels: LabelMatrix,
    split: Split,
}

impl MultiLabelDataset {
    pub fn new(features: Matrix, labels: LabelMatrix, split: Split) -> Result<Self> {
        if features.rows() != labels.rows() {
            return Err(Error::shape(
                "MultiLabelDataset::new",
                features.shape(),
                labels.shape(),
            ));
        }
        Ok(MultiLabelDataset {
            features,
            labels,
            split,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.cols()
    }

    /// Same features, different labels (used for noisy training copies).
    pub fn with_labels(&self, labels: LabelMatrix) -> Result<Self> {
        MultiLabelDataset::new(self.features.clone(), labels, self.split)
    }
}

/// Parameters of the synthetic generator: labels are independent
/// Bernoulli(π_c) and features are `x = P·y + ε`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub samples: usize,
    pub classes: usize,
    pub features: usize,
    pub class_priors: Vec<f64>,
    pub prototype_scale: f64,
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            samples: 2000,
            classes: 10,
            features: 32,
            class_priors: vec![0.2; 10],
            prototype_scale: 1.0,
            feature_noise: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 || self.classes == 0 || self.features == 0 {
            return Err(Error::Config(
                "synthetic spec needs positive sample, class and feature counts".into(),
            ));
        }
        if self.class_priors.len() != self.classes {
            return Err(Error::Config(format!(
                "{} class priors given for {} classes",
                self.class_priors.len(),
                self.classes
            )));
        }
        if let Some(p) = self.class_priors.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Config(format!("class prior {p} outside (0, 1)")));
        }
        if !(self.prototype_scale.is_finite() && self.prototype_scale >= 0.0)
            || !(self.feature_noise.is_finite() && self.feature_noise >= 0.0)
        {
            return Err(Error::Config(
                "prototype scale and feature noise must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: MultiLabelDataset,
    pub val: MultiLabelDataset,
    pub test: MultiLabelDataset,
    /// D×C prototype matrix used to embed labels into feature space.
    pub prototypes: Matrix,
}

const MAX_SPLIT_ATTEMPTS: usize = 100;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let root = RngState::new(spec.seed);
    let (n, c, d) = (spec.samples, spec.classes, spec.features);

    let mut proto_rng = root.child("prototypes");
    let proto_dist = normal(spec.prototype_scale);
    let prototypes = Matrix::from_fn(d, c, |_, _| sample(&proto_dist, &mut proto_rng));

    let mut label_rng = root.child("labels");
    let mut entries = Vec::with_capacity(n * c);
    for _ in 0..n {
        for &prior in &spec.class_priors {
            entries.push(u8::from(label_rng.random_bool(prior)));
        }
    }
    let labels = LabelMatrix::new(n, c, entries)?;

    let mut noise_rng = root.child("features");
    let noise_dist = normal(spec.feature_noise);
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        let y = labels.row(i);
        for k in 0..d {
            let mut v = 0.0;
            for (j, &yj) in y.iter().enumerate() {
                if yj == 1 {
                    v += prototypes.get(k, j);
                }
            }
            x.push(v + sample(&noise_dist, &mut noise_rng));
        }
    }
    let features = Matrix::new(n, d, x)?;

    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let split_root = root.child("split");
    let mut last_failure = None;
    for attempt in 0..MAX_SPLIT_ATTEMPTS {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut split_root.child_index(attempt as u64));
        let mut parts = [
            order[..n_train].to_vec(),
            order[n_train..n_train + n_val].to_vec(),
            order[n_train + n_val..].to_vec(),
        ];
        for p in &mut parts {
            p.sort_unstable();
        }
        let failure = parts
            .iter()
            .zip([Split::Train, Split::Val, Split::Test])
            .find_map(|(idx, split)| {
                let sub = labels.select_rows(idx);
                sub.positives_per_class()
                    .iter()
                    .position(|&p| p == 0)
                    .map(|class| (class, split))
            });
        match failure {
            Some(f) => last_failure = Some(f),
            None => {
                let make = |idx: &[usize], split| {
                    MultiLabelDataset::new(
                        features.select_rows(idx),
                        labels.select_rows(idx),
                        split,
                    )
                };
                return Ok(SyntheticData {
                    train: make(&parts[0], Split::Train)?,
                    val: make(&parts[1], Split::Val)?,
                    test: make(&parts[2], Split::Test)?,
                    prototypes,
                });
            }
        }
    }
    let (class, split) = last_failure.expect("at least one attempt");
    Err(Error::InfeasibleSplit {
        class,
        split: split.name(),
        attempts: MAX_SPLIT_ATTEMPTS,
    })
}

fn normal(std_dev: f64) -> Option<Normal<f64>> {
    (std_dev > 0.0).then(|| Normal::new(0.0, std_dev).expect("finite positive std dev"))
}

fn sample(dist: &Option<Normal<f64>>, rng: &mut RngState) -> f64 {
    dist.as_ref().map_or(0.0, |d| d.sample(rng))
}

pub fn save_dataset(ds: &MultiLabelDataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(ds))?;
    Ok(())
}

pub fn dataset_to_csv(ds: &MultiLabelDataset) -> String {
    let (d, c) = (ds.num_features(), ds.num_classes());
    let mut out = String::new();
    let header: Vec<String> = (0..d)
        .map(|k| format!("f{k}"))
        .chain((0..c).map(|j| format!("y{j}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..ds.len() {
        let mut first = true;
        for v in ds.features.row(i) {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{v}").expect("write to String");
        }
        for &y in ds.labels.row(i) {
            if !first {
                out.push(',');
            }
            first = false;
            out.push(if y == 1 { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

/// Writes a bare label matrix with a `y0,…,y{C-1}` header.
pub fn labels_to_csv(labels: &LabelMatrix) -> String {
    let mut out: String = (0..labels.cols())
        .map(|j| format!("y{j}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for i in 0..labels.rows() {
        let row: Vec<&str> = labels
            .row(i)
            .iter()
            .map(|&v| if v == 1 { "1" } else { "0" })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn load_dataset(path: &Path, split: Split) -> Result<MultiLabelDataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let mut d = 0;
    let mut c = 0;
    for (k, name) in header.iter().enumerate() {
        let expected_f = format!("f{k}");
        let expected_y = format!("y{}", k - d);
        if c == 0 && name == expected_f {
            d += 1;
        } else if name == expected_y {
            c += 1;
        } else {
            return Err(parse_err(1, format!("unexpected header column `{name}`")));
        }
    }
    if c == 0 {
        return Err(parse_err(1, "header has no label columns".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != d + c {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", d + c, record.len()),
            ));
        }
        for (k, field) in record.iter().enumerate() {
            if k < d {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(line, format!("malformed feature `{field}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite feature `{field}`")));
                }
                features.push(v);
            } else {
                match field {
                    "0" => labels.push(0),
                    "1" => labels.push(1),
                    other => return Err(parse_err(line, format!("non-binary label `{other}`"))),
                }
            }
        }
        rows += 1;
    }
    MultiLabelDataset::new(
        Matrix::new(rows, d, features)?,
        LabelMatrix::new(rows, c, labels)?,
        split,
    )
}
