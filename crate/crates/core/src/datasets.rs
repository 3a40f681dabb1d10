//! Labelled datasets: the interleaved-spiral generator, seeded splitting and
//! CSV ingestion.

use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::rng_from;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::config("a dataset needs at least one sample"));
        }
        if class_count == 0 {
            return Err(Error::config("class_count must be positive"));
        }
        if let Some(i) = labels.iter().position(|&y| y >= class_count) {
            return Err(Error::config(format!(
                "label {} at row {i} is not below class_count {class_count}",
                labels[i]
            )));
        }
        if inputs.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("dataset inputs must be finite"));
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
        })
    }

    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.class_count,
        )
    }

    /// True if any sample of `other` has bit-identical features to one of ours.
    pub fn overlaps(&self, other: &Dataset) -> bool {
        use std::collections::HashSet;
        let key = |row: &[f64]| row.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
        let mine: HashSet<Vec<u64>> = self.inputs.iter_rows().map(key).collect();
        other.inputs.iter_rows().any(|r| mine.contains(&key(r)))
    }
}

/// Read access to labelled samples. Model selection and final reporting take
/// this trait so tests can observe which split is read, and when.
pub trait Samples: Sync {
    fn inputs(&self) -> &Matrix;
    fn labels(&self) -> &[usize];
    fn class_count(&self) -> usize;

    fn len(&self) -> usize {
        self.labels().len()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Samples for Dataset {
    fn inputs(&self) -> &Matrix {
        &self.inputs
    }
    fn labels(&self) -> &[usize] {
        &self.labels
    }
    fn class_count(&self) -> usize {
        self.class_count
    }
}

/// Ordered record of dataset reads, shared by several [`Audited`] wrappers.
#[derive(Debug, Default)]
pub struct AccessLog(Mutex<Vec<&'static str>>);

impl AccessLog {
    pub fn events(&self) -> Vec<&'static str> {
        self.0.lock().expect("access log poisoned").clone()
    }
}

/// A dataset wrapper that appends its name to an [`AccessLog`] on every read
/// of its inputs.
pub struct Audited<'a> {
    pub name: &'static str,
    pub data: &'a Dataset,
    pub log: &'a AccessLog,
}

impl Samples for Audited<'_> {
    fn inputs(&self) -> &Matrix {
        self.log.0.lock().expect("access log poisoned").push(self.name);
        &self.data.inputs
    }
    fn labels(&self) -> &[usize] {
        &self.data.labels
    }
    fn class_count(&self) -> usize {
        self.data.class_count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralParams {
    pub n: usize,
    #[serde(default = "SpiralParams::default_noise")]
    pub noise_std: f64,
    #[serde(default = "SpiralParams::default_turns")]
    pub turns: f64,
    pub seed: u64,
}

impl SpiralParams {
    fn default_noise() -> f64 {
        0.05
    }
    fn default_turns() -> f64 {
        1.75
    }

    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            noise_std: Self::default_noise(),
            turns: Self::default_turns(),
            seed,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        make_spirals(self.n, self.noise_std, self.turns, self.seed)
    }
}

/// Two interleaved spiral arms. Class `c` uses radius `t` and angle
/// `2π·turns·t + c·π` for `t ~ U[0, 1]`, plus isotropic Gaussian jitter.
/// Samples alternate between the classes.
pub fn make_spirals(n: usize, noise_std: f64, turns: f64, seed: u64) -> Result<Dataset> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::config(format!(
            "spiral sample count must be a positive even number, got {n}"
        )));
    }
    if !(noise_std >= 0.0) || !noise_std.is_finite() {
        return Err(Error::config("noise_std must be a finite nonnegative number"));
    }
    if !(turns > 0.0) || !turns.is_finite() {
        return Err(Error::config("turns must be positive"));
    }
    let mut rng = rng_from(seed);
    let jitter = Normal::new(0.0, noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let t: f64 = rng.random();
        let angle = 2.0 * std::f64::consts::PI * turns * t + class as f64 * std::f64::consts::PI;
        let (mut x, mut y) = (t * angle.sin(), t * angle.cos());
        if noise_std > 0.0 {
            x += jitter.sample(&mut rng);
            y += jitter.sample(&mut rng);
        }
        data.push(x);
        data.push(y);
        labels.push(class);
    }
    Dataset::new(Matrix::from_vec(n, 2, data)?, labels, 2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: Vec<f64>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.len() < 2 {
            return Err(Error::config("a split needs at least two fractions"));
        }
        if self.fractions.iter().any(|f| !(*f >= 0.0) || !f.is_finite()) {
            return Err(Error::config("split fractions must be nonnegative"));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Part sizes: floor of each share, remainder to the first part.
    pub fn sizes(&self, n: usize) -> Result<Vec<usize>> {
        self.validate()?;
        let mut sizes: Vec<usize> = self.fractions.iter().map(|f| (f * n as f64).floor() as usize).collect();
        let assigned: usize = sizes.iter().sum();
        sizes[0] += n - assigned.min(n);
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::config(format!("split part {i} would be empty for {n} samples")));
        }
        Ok(sizes)
    }
}

/// Seeded shuffle, then consecutive slices of the sizes given by [`SplitSpec::sizes`].
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<Vec<Dataset>> {
    let sizes = spec.sizes(data.len())?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng_from(spec.seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for size in sizes {
        parts.push(data.subset(&order[start..start + size])?);
        start += size;
    }
    Ok(parts)
}

/// Reads feature columns followed by an integer label column. A first row
/// with any non-numeric field is treated as a header. The class count is one
/// more than the largest label.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    load_csv_with_classes(path, None)
}

pub fn load_csv_with_classes(path: impl AsRef<Path>, class_count: Option<usize>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, class_count)
}

pub fn parse_csv(text: &str, class_count: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut width = None;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                row,
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        if w < 2 {
            return Err(Error::Parse {
                row,
                message: "need at least one feature and a label".into(),
            });
        }
        for field in record.iter().take(w - 1) {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric feature {field:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("non-finite feature {field:?}"),
                });
            }
            features.push(v);
        }
        let label_field = &record[w - 1];
        let label: usize = label_field.parse().map_err(|_| Error::Parse {
            row,
            message: format!("label {label_field:?} is not a nonnegative integer"),
        })?;
        if let Some(c) = class_count {
            if label >= c {
                return Err(Error::Parse {
                    row,
                    message: format!("label {label} is not below class count {c}"),
                });
            }
        }
        labels.push(label);
    }
    let Some(w) = width else {
        return Err(Error::Parse {
            row: 0,
            message: "no samples".into(),
        });
    };
    let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    Dataset::new(Matrix::from_vec(labels.len(), w - 1, features)?, labels, classes)
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_csv_string(data)).map_err(|e| Error::io(path, e))
}

pub fn to_csv_string(data: &Dataset) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for c in 0..data.dim() {
        let _ = write!(out, "x{c},");
    }
    out.push_str("label\n");
    for (row, y) in data.inputs.iter_rows().zip(&data.labels) {
        for v in row {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{y}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spirals_are_balanced_and_deterministic() {
        let d = make_spirals(2500, 0.05, 1.75, 1).unwrap();
        assert_eq!(d.len(), 2500);
        assert_eq!(d.labels().iter().filter(|&&y| y == 0).count(), 1250);
        assert_eq!(d, make_spirals(2500, 0.05, 1.75, 1).unwrap());
        assert_ne!(d, make_spirals(2500, 0.05, 1.75, 2).unwrap());
    }

    #[test]
    fn odd_spiral_count_is_rejected() {
        assert!(matches!(make_spirals(7, 0.05, 1.75, 0), Err(Error::Config(_))));
    }

    #[test]
    fn noiseless_arms_do_not_touch() {
        let d = make_spirals(400, 0.0, 1.75, 3).unwrap();
        let (zero, one): (Vec<_>, Vec<_>) = (0..d.len()).partition(|&i| d.labels()[i] == 0);
        for &i in &zero {
            for &j in &one {
                let a = d.inputs().row(i);
                let b = d.inputs().row(j);
                assert!(a != b, "rows {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn points_stay_within_noise_radius() {
        let noise = 0.05;
        let d = make_spirals(2500, noise, 1.75, 9).unwrap();
        for row in d.inputs().iter_rows() {
            assert!(row[0].hypot(row[1]) <= 1.0 + 6.0 * noise);
        }
    }

    #[test]
    fn split_sizes() {
        let spec = SplitSpec {
            fractions: vec![0.5, 0.5],
            seed: 1,
        };
        assert_eq!(spec.sizes(250).unwrap(), vec![125, 125]);
        assert_eq!(spec.sizes(5).unwrap(), vec![3, 2]);
        let empty = SplitSpec {
            fractions: vec![1.0, 0.0],
            seed: 1,
        };
        assert!(matches!(empty.sizes(10), Err(Error::Config(_))));
        let bad = SplitSpec {
            fractions: vec![0.5, 0.6],
            seed: 1,
        };
        assert!(bad.validate().is_err());
        let single = SplitSpec {
            fractions: vec![1.0],
            seed: 1,
        };
        assert!(single.validate().is_err());
    }

    #[test]
    fn split_partitions_the_samples() {
        let d = make_spirals(250, 0.05, 1.75, 4).unwrap();
        let parts = split(
            &d,
            &SplitSpec {
                fractions: vec![0.5, 0.5],
                seed: 8,
            },
        )
        .unwrap();
        assert_eq!(parts.iter().map(Dataset::len).collect::<Vec<_>>(), vec![125, 125]);
        assert!(!parts[0].overlaps(&parts[1]));
        let mut all: Vec<Vec<u64>> = parts
            .iter()
            .flat_map(|p| {
                p.inputs()
                    .iter_rows()
                    .map(|r| r.iter().map(|v| v.to_bits()).collect())
                    .collect::<Vec<_>>()
            })
            .collect();
        let mut orig: Vec<Vec<u64>> = d
            .inputs()
            .iter_rows()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        all.sort();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn csv_round_trip() {
        let d = make_spirals(200, 0.05, 1.75, 5).unwrap();
        let back = parse_csv(&to_csv_string(&d), None).unwrap();
        assert_eq!(back.labels(), d.labels());
        for (a, b) in back.inputs().as_slice().iter().zip(d.inputs().as_slice()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn csv_without_header() {
        let d = parse_csv("0.5,1.5,1\n-1,2,0\n", None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.class_count(), 2);
        assert_eq!(d.inputs().row(1), &[-1.0, 2.0]);
    }

    #[test]
    fn csv_errors_name_the_row() {
        match parse_csv("x,y,label\n0.1,0.2,1\n0.1,0.2,banana\n", None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        match parse_csv("0.1,0.2,1\n0.3,1\n", None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        match parse_csv("0.1,oops,1\n0.3,0.2,1\n", None) {
            // a non-numeric first row is a header, so this parses one sample
            Ok(d) => assert_eq!(d.len(), 1),
            other => panic!("{other:?}"),
        }
        match parse_csv("1,2,0\n0.1,oops,1\n", None) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
        match parse_csv("0.1,0.2,3\n", Some(2)) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("{other:?}"),
        }
        match parse_csv("", None) {
            Err(Error::Parse { message, .. }) => assert_eq!(message, "no samples"),
            other => panic!("{other:?}"),
        }
    }
}
