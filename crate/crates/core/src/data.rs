//! Datasets, CSV ingestion, min-max scaling, splitting and synthetic targets.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// `n x d` features with `n` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape {
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if let Some(names) = &feature_names {
            if names.len() != x.ncols() {
                return Err(Error::Shape {
                    expected: x.ncols(),
                    got: names.len(),
                });
            }
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        Ok(Dataset { x, y, feature_names })
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Which CSV column holds the target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TargetColumn {
    /// Zero-based column index.
    Index(usize),
    #[default]
    Last,
}

impl std::str::FromStr for TargetColumn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "last" {
            return Ok(TargetColumn::Last);
        }
        s.parse()
            .map(TargetColumn::Index)
            .map_err(|_| Error::Argument(format!("target column must be an index or \"last\", got {s:?}")))
    }
}

/// Read a numeric CSV file; see [`read_csv`].
pub fn load_csv(path: impl AsRef<Path>, target: TargetColumn, has_header: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target, has_header)
}

/// Parse comma-separated numeric rows. The target column becomes `y`, the
/// remaining columns (in order) become the features.
pub fn read_csv<R: Read>(reader: R, target: TargetColumn, has_header: bool) -> Result<Dataset> {
    let table = read_table(reader, has_header, None)?;
    let width = table.width;
    if width < 2 {
        return Err(Error::Format(format!(
            "need at least 2 columns, found {width}"
        )));
    }
    let target = match target {
        TargetColumn::Last => width - 1,
        TargetColumn::Index(i) if i < width => i,
        TargetColumn::Index(i) => {
            return Err(Error::Argument(format!(
                "target column {i} out of range for {width} columns"
            )))
        }
    };
    let features: Vec<usize> = (0..width).filter(|&j| j != target).collect();
    let n = table.rows.len();
    let mut x = Array2::zeros((n, width - 1));
    let mut y = Vec::with_capacity(n);
    for (i, row) in table.rows.iter().enumerate() {
        y.push(row[target]);
        for (k, &j) in features.iter().enumerate() {
            x[[i, k]] = row[j];
        }
    }
    let names = table
        .header
        .map(|h| features.iter().map(|&j| h[j].clone()).collect());
    Dataset::new(x, y, names)
}

/// A parsed numeric CSV table. The optional text column is kept verbatim in
/// `text` and holds NaN in `rows`.
pub(crate) struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
    pub text: Vec<String>,
    pub width: usize,
}

pub(crate) fn read_table<R: Read>(reader: R, has_header: bool, text_column: Option<usize>) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .quoting(false)
        .from_reader(reader);
    let mut header = None;
    let mut rows = Vec::new();
    let mut text = Vec::new();
    let mut width = None;
    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Format(format!(
                "row {line} has {} columns, expected {w}",
                record.len()
            )));
        }
        if has_header && k == 0 {
            header = Some(record.iter().map(|s| s.trim().to_string()).collect());
            continue;
        }
        if let Some(c) = text_column {
            let cell = record.get(c).ok_or_else(|| {
                Error::Argument(format!("column {c} out of range for {w} columns"))
            })?;
            text.push(cell.trim().to_string());
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if Some(j) == text_column {
                    return Ok(f64::NAN);
                }
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    row: line,
                    column: j + 1,
                    value: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table {
        header,
        rows,
        text,
        width: width.unwrap_or(0),
    })
}

/// Per-feature minimum and maximum of a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn fit_scaler(train: &Dataset) -> Result<ScalingParams> {
    if train.is_empty() {
        return Err(Error::EmptyData);
    }
    let x = train.x();
    let min = x
        .columns()
        .into_iter()
        .map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b)))
        .collect();
    let max = x
        .columns()
        .into_iter()
        .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
        .collect();
    Ok(ScalingParams { min, max })
}

impl ScalingParams {
    /// The scaler that leaves every value unchanged.
    pub fn identity(dim: usize) -> Self {
        ScalingParams {
            min: vec![0.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() {
            return Err(Error::Shape {
                expected: self.min.len(),
                got: self.max.len(),
            });
        }
        if self.min.iter().chain(&self.max).any(|v| !v.is_finite()) {
            return Err(Error::Data("scaling bounds must be finite".into()));
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| a > b) {
            return Err(Error::Data("scaling min exceeds max".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Scale a single value of feature `j`.
    #[inline]
    pub fn scale(&self, j: usize, v: f64) -> f64 {
        let (lo, hi) = (self.min[j], self.max[j]);
        if hi > lo {
            (v - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub(crate) fn apply_row_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            *o = self.scale(j, v);
        }
    }

    /// Map every feature through `v -> (v - min) / (max - min)`; constant
    /// features map to 0. No clamping.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let mut out = x.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| self.scale(j, v));
        }
        Ok(out)
    }
}

/// Random train/test split: the first `floor(fraction * n)` rows of a seeded
/// permutation go to train.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = data.n_samples();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream(seed));
    let n_train = (train_fraction * n as f64).floor() as usize;
    let (train, test) = perm.split_at(n_train);
    Ok((data.select(train), data.select(test)))
}

/// Regression functions for synthetic data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// `sum_j x_j`
    Linear,
    /// `||x||_2`
    Norm,
    /// `sum_j sin(pi x_j)`
    SmoothSine,
}

impl Generator {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Generator::Linear => x.iter().sum(),
            Generator::Norm => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Generator::SmoothSine => x.iter().map(|v| (std::f64::consts::PI * v).sin()).sum(),
        }
    }
}

impl std::str::FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Generator::Linear),
            "norm" => Ok(Generator::Norm),
            "smooth_sine" | "smooth-sine" | "sine" => Ok(Generator::SmoothSine),
            other => Err(Error::Argument(format!("unknown generator {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub generator: Generator,
    pub n: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Argument("synthetic sample count must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Argument("noise sigma must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Half-width of the sampling cube `[-1/sqrt(d), 1/sqrt(d)]^d`, which sits
    /// inside the unit ball.
    pub fn half_width(&self) -> f64 {
        1.0 / (self.d as f64).sqrt()
    }
}

/// Draw `X` uniformly from the cube of [`SynthSpec::half_width`] and set
/// `y = f(X) + N(0, sigma^2)`.
pub fn synth(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed);
    let a = spec.half_width();
    let x = Array2::from_shape_simple_fn((spec.n, spec.d), || rng.random_range(-a..=a));
    let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
    let y = x
        .rows()
        .into_iter()
        .map(|row| {
            let f = spec.generator.eval(row.as_slice().expect("standard layout"));
            if spec.noise_sigma > 0.0 {
                f + noise.sample(&mut rng)
            } else {
                f
            }
        })
        .collect();
    Dataset::new(x, y, None)
}
