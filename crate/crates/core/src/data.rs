//! Tabular datasets: CSV ingestion, preprocessing, splitting and a synthetic
//! correlated-Gaussian generator.

use std::fs::File;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::Scalar;

/// Distinct-value count at or above which a feature counts as continuous.
pub const DEFAULT_CONTINUITY_THRESHOLD: usize = 20;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    /// `row` is the 1-based data row (header excluded), `column` the header name.
    #[error("non-numeric cell at data row {row}, column `{column}`")]
    NonNumericCell { row: usize, column: String },
    #[error("non-finite value at row {row}, feature {feature}")]
    NonFiniteValue { row: usize, feature: usize },
    #[error("invalid class label {value} at data row {row}")]
    InvalidLabel { row: usize, value: String },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("fraction {0} outside (0, 1] or yields an empty sample")]
    FractionOutOfRange(f64),
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("correlation matrix is not positive semi-definite")]
    NotPositiveSemiDefinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub name: String,
    pub continuous: bool,
    pub index: usize,
}

impl FeatureMeta {
    pub fn new(name: impl Into<String>, index: usize, continuous: bool) -> Self {
        Self {
            name: name.into(),
            continuous,
            index,
        }
    }

    /// `x0, x1, ...` all flagged continuous.
    pub fn numbered(count: usize) -> Vec<Self> {
        (0..count).map(|i| Self::new(format!("x{i}"), i, true)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Validation,
    Test,
    Reduced,
    #[default]
    Unspecified,
}

/// Feature matrix with class labels and per-feature metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Dataset<T: Scalar> {
    features: Matrix<T>,
    labels: Vec<usize>,
    meta: Vec<FeatureMeta>,
    num_classes: usize,
    role: SplitRole,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Matrix<T>,
        labels: Vec<usize>,
        meta: Vec<FeatureMeta>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        validate_meta(&meta, features.cols())?;
        if num_classes < 2 {
            return Err(DataError::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(DataError::InvalidLabel {
                row: row + 1,
                value: l.to_string(),
            });
        }
        for (r, row) in features.iter_rows().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(DataError::NonFiniteValue { row: r, feature: j });
            }
        }
        Ok(Self {
            features,
            labels,
            meta,
            num_classes,
            role: SplitRole::Unspecified,
        })
    }

    pub fn with_role(mut self, role: SplitRole) -> Self {
        self.role = role;
        self
    }

    /// Raises the class count (labels stay valid). Used to align splits that
    /// happen not to contain the highest class.
    pub fn with_num_classes(mut self, k: usize) -> Self {
        self.num_classes = self.num_classes.max(k);
        self
    }

    pub fn with_meta(mut self, meta: Vec<FeatureMeta>) -> Result<Self, DataError> {
        validate_meta(&meta, self.n_features())?;
        self.meta = meta;
        Ok(self)
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &[FeatureMeta] {
        &self.meta
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.features.row(i)
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        self.meta.iter().filter(|m| m.continuous).map(|m| m.index).collect()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
            num_classes: self.num_classes,
            role: self.role,
        }
    }

    /// Row-wise concatenation. Both sets must share the feature layout.
    pub fn concat(&self, other: &Self) -> Result<Self, DataError> {
        if self.meta != other.meta {
            return Err(DataError::ShapeMismatch(
                "datasets have different feature metadata".into(),
            ));
        }
        let features = self
            .features
            .vstack(&other.features)
            .ok_or_else(|| DataError::ShapeMismatch("feature widths differ".into()))?;
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Ok(Self {
            features,
            labels,
            meta: self.meta.clone(),
            num_classes: self.num_classes.max(other.num_classes),
            role: self.role,
        })
    }

    /// Number of rows per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// SHA-256 over shape, feature values (as little-endian `f64`) and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.n_features() as u64).to_le_bytes());
        for v in self.features.as_slice() {
            h.update(v.to_f64_lossy().to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn convert<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.map(|v| U::from_f64_lossy(v.to_f64_lossy())),
            labels: self.labels.clone(),
            meta: self.meta.clone(),
            num_classes: self.num_classes,
            role: self.role,
        }
    }
}

fn validate_meta(meta: &[FeatureMeta], width: usize) -> Result<(), DataError> {
    if meta.len() != width {
        return Err(DataError::ShapeMismatch(format!(
            "{} metadata entries for {} features",
            meta.len(),
            width
        )));
    }
    if let Some((pos, m)) = meta.iter().enumerate().find(|(i, m)| m.index != *i) {
        return Err(DataError::InvalidSchema(format!(
            "feature `{}` at position {pos} has index {}",
            m.name, m.index
        )));
    }
    Ok(())
}

/// Train / validation / test splits sharing one feature layout.
#[derive(Clone, Debug)]
pub struct SplitBundle<T: Scalar> {
    pub train: Dataset<T>,
    pub validation: Dataset<T>,
    pub test: Dataset<T>,
}

impl<T: Scalar> SplitBundle<T> {
    /// Aligns class counts and checks that the metadata agree.
    pub fn new(train: Dataset<T>, validation: Dataset<T>, test: Dataset<T>) -> Result<Self, DataError> {
        if train.meta() != validation.meta() || train.meta() != test.meta() {
            return Err(DataError::ShapeMismatch("splits disagree on feature metadata".into()));
        }
        let k = train
            .num_classes()
            .max(validation.num_classes())
            .max(test.num_classes());
        Ok(Self {
            train: train.with_num_classes(k).with_role(SplitRole::Train),
            validation: validation.with_num_classes(k).with_role(SplitRole::Validation),
            test: test.with_num_classes(k).with_role(SplitRole::Test),
        })
    }

    /// Random partition of `d` into the three splits.
    pub fn random(d: &Dataset<T>, train_fraction: f64, validation_fraction: f64, seed: u64) -> Result<Self, DataError> {
        let valid = |f: f64| (0.0..=1.0).contains(&f);
        if !valid(train_fraction) || !valid(validation_fraction) || train_fraction + validation_fraction > 1.0 {
            return Err(DataError::InvalidArgument(format!(
                "split fractions {train_fraction} / {validation_fraction} do not fit in [0, 1]"
            )));
        }
        let n = d.n_rows();
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(seed));
        let n_train = (train_fraction * n as f64).round() as usize;
        let n_val = ((validation_fraction * n as f64).round() as usize).min(n - n_train);
        let train = d.select(&order[..n_train]);
        let validation = d.select(&order[n_train..n_train + n_val]);
        let test = d.select(&order[n_train + n_val..]);
        Self::new(train, validation, test)
    }

    pub fn map(&self, f: impl Fn(&Dataset<T>) -> Dataset<T>) -> Self {
        Self {
            train: f(&self.train),
            validation: f(&self.validation),
            test: f(&self.test),
        }
    }
}

/// Reads the header of `path` and returns one continuous [`FeatureMeta`] per
/// column other than `label_column`, in file order.
pub fn infer_schema(path: &Path, label_column: &str) -> Result<Vec<FeatureMeta>, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile);
    }
    if !headers.iter().any(|h| h == label_column) {
        return Err(DataError::MissingColumn(label_column.to_string()));
    }
    Ok(headers
        .iter()
        .filter(|h| *h != label_column)
        .enumerate()
        .map(|(i, h)| FeatureMeta::new(h, i, true))
        .collect())
}

/// Loads a CSV file with a header row. Feature columns are taken in `schema`
/// order; columns not named in the schema are ignored. Labels must be
/// non-negative integers; the class count is `max(label) + 1` (at least 2).
pub fn load_csv<T: Scalar>(path: &Path, schema: &[FeatureMeta], label_column: &str) -> Result<Dataset<T>, DataError> {
    validate_meta(schema, schema.len())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let label_pos = position(label_column)?;
    let feature_pos: Vec<usize> = schema.iter().map(|m| position(&m.name)).collect::<Result<_, _>>()?;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (meta, &pos) in schema.iter().zip(&feature_pos) {
            let cell = record.get(pos).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| DataError::NonNumericCell {
                row,
                column: meta.name.clone(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFiniteValue {
                    row,
                    feature: meta.index,
                });
            }
            values.push(T::from_f64_lossy(v));
        }
        let cell = record.get(label_pos).unwrap_or("");
        let v: f64 = cell.parse().map_err(|_| DataError::NonNumericCell {
            row,
            column: label_column.to_string(),
        })?;
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
            return Err(DataError::InvalidLabel {
                row,
                value: cell.to_string(),
            });
        }
        labels.push(v as usize);
    }
    if labels.is_empty() {
        return Err(DataError::EmptyFile);
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0).max(1) + 1;
    let features = Matrix::from_vec(labels.len(), schema.len(), values).expect("row width fixed by schema");
    Dataset::new(features, labels, schema.to_vec(), num_classes)
}

/// Writes `d` as CSV: feature columns in metadata order, then `label_column`.
pub fn write_csv<T: Scalar>(d: &Dataset<T>, path: &Path, label_column: &str) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    let mut header: Vec<&str> = d.meta().iter().map(|m| m.name.as_str()).collect();
    header.push(label_column);
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for (i, row) in d.features().iter_rows().enumerate() {
        record.clear();
        record.extend(row.iter().map(|v| v.to_string()));
        record.push(d.labels()[i].to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-feature statistics from [`zscore_normalize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ZScoreStats<T: Scalar> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    /// Feature was continuous and had zero spread; it passed through unchanged.
    pub degenerate: Vec<bool>,
    /// Feature was transformed.
    pub applied: Vec<bool>,
}

impl<T: Scalar> ZScoreStats<T> {
    /// Statistics of the continuous features of `source` (sample standard
    /// deviation).
    pub fn fit(source: &Dataset<T>) -> Result<Self, DataError> {
        let n = source.n_rows();
        if n < 2 {
            return Err(DataError::TooFewRows { needed: 2, found: n });
        }
        let f = source.n_features();
        let nf = T::from_usize_lossy(n);
        let mut mean = vec![T::zero(); f];
        let mut std = vec![T::one(); f];
        let mut degenerate = vec![false; f];
        let mut applied = vec![false; f];
        for meta in source.meta().iter().filter(|m| m.continuous) {
            let j = meta.index;
            let col = source.features().column(j);
            let mu = col.iter().copied().sum::<T>() / nf;
            let ss: T = col.iter().map(|&v| (v - mu) * (v - mu)).sum();
            let sd = (ss / T::from_usize_lossy(n - 1)).sqrt();
            if sd > T::zero() && sd.is_finite() {
                mean[j] = mu;
                std[j] = sd;
                applied[j] = true;
            } else {
                degenerate[j] = true;
            }
        }
        Ok(Self {
            mean,
            std,
            degenerate,
            applied,
        })
    }

    pub fn apply(&self, d: &Dataset<T>) -> Dataset<T> {
        let mut out = d.clone();
        let f = d.n_features();
        for r in 0..d.n_rows() {
            let row = out.features.row_mut(r);
            for j in 0..f {
                if self.applied[j] {
                    row[j] = (row[j] - self.mean[j]) / self.std[j];
                }
            }
        }
        out
    }

    pub fn invert(&self, d: &Dataset<T>) -> Dataset<T> {
        let mut out = d.clone();
        let f = d.n_features();
        for r in 0..d.n_rows() {
            let row = out.features.row_mut(r);
            for j in 0..f {
                if self.applied[j] {
                    row[j] = row[j] * self.std[j] + self.mean[j];
                }
            }
        }
        out
    }
}

/// Standardizes the continuous features of `d` with the mean and sample
/// standard deviation of `stats_source`. Zero-spread features pass through
/// and are flagged in the returned statistics.
pub fn zscore_normalize<T: Scalar>(
    d: &Dataset<T>,
    stats_source: &Dataset<T>,
) -> Result<(Dataset<T>, ZScoreStats<T>), DataError> {
    let stats = ZScoreStats::fit(stats_source)?;
    Ok((stats.apply(d), stats))
}

/// Flags each feature continuous iff it has at least `threshold` distinct
/// values in `d`. Thresholds below 2 are treated as 2.
pub fn detect_continuous<T: Scalar>(d: &Dataset<T>, threshold: usize) -> Vec<FeatureMeta> {
    let threshold = threshold.max(2);
    d.meta()
        .iter()
        .map(|m| {
            let mut col = d.features().column(m.index);
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
            let distinct = if col.is_empty() {
                0
            } else {
                1 + col.windows(2).filter(|w| w[0] != w[1]).count()
            };
            FeatureMeta {
                continuous: distinct >= threshold,
                ..m.clone()
            }
        })
        .collect()
}

/// Uniform sample without replacement of `round(fraction * N)` rows.
pub fn subsample<T: Scalar>(d: &Dataset<T>, fraction: f64, seed: u64) -> Result<Dataset<T>, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::FractionOutOfRange(fraction));
    }
    let size = (fraction * d.n_rows() as f64).round() as usize;
    if size == 0 {
        return Err(DataError::FractionOutOfRange(fraction));
    }
    subsample_to_size(d, size, seed)
}

/// Uniform sample without replacement of exactly `size` rows.
pub fn subsample_to_size<T: Scalar>(d: &Dataset<T>, size: usize, seed: u64) -> Result<Dataset<T>, DataError> {
    if size == 0 || size > d.n_rows() {
        return Err(DataError::InvalidArgument(format!(
            "sample size {size} not in 1..={}",
            d.n_rows()
        )));
    }
    let picked = index::sample(&mut rng::stream(seed), d.n_rows(), size).into_vec();
    Ok(d.select(&picked))
}

/// Lower-triangular `L` with `L Lᵀ = a`, tolerating zero pivots so that
/// singular PSD matrices are accepted.
pub fn cholesky_psd(a: &Matrix<f64>) -> Result<Matrix<f64>, DataError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(DataError::ShapeMismatch("correlation matrix is not square".into()));
    }
    let tol = 1e-10;
    let mut l = Matrix::filled(n, n, 0.0);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d < -tol {
            return Err(DataError::NotPositiveSemiDefinite);
        }
        let pivot = d.max(0.0).sqrt();
        l.set(j, j, pivot);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            if pivot > tol {
                l.set(i, j, s / pivot);
            } else if s.abs() > 1e-8 {
                return Err(DataError::NotPositiveSemiDefinite);
            }
        }
    }
    Ok(l)
}

fn validate_correlation(c: &Matrix<f64>, f: usize) -> Result<(), DataError> {
    if c.shape() != (f, f) {
        return Err(DataError::ShapeMismatch(format!(
            "correlation matrix is {:?}, expected {f}x{f}",
            c.shape()
        )));
    }
    for i in 0..f {
        if (c.get(i, i) - 1.0).abs() > 1e-12 {
            return Err(DataError::InvalidArgument(format!(
                "correlation diagonal entry {i} is {}",
                c.get(i, i)
            )));
        }
        for j in 0..i {
            if (c.get(i, j) - c.get(j, i)).abs() > 1e-12 {
                return Err(DataError::InvalidArgument("correlation matrix is not symmetric".into()));
            }
        }
    }
    Ok(())
}

/// Draws `n` rows from a `k`-class Gaussian mixture. Each row picks a class
/// uniformly; its features are `N(0, correlation)` shifted by
/// `(class - (k-1)/2) * class_shift`, so the class means are centred on zero.
pub fn synthesize_correlated<T: Scalar>(
    n: usize,
    f: usize,
    k: usize,
    correlation: &Matrix<f64>,
    class_shift: &[f64],
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    if f < 2 || k < 2 {
        return Err(DataError::InvalidArgument(format!(
            "need f >= 2 and k >= 2, got f={f}, k={k}"
        )));
    }
    if class_shift.len() != f {
        return Err(DataError::ShapeMismatch(format!(
            "class shift has {} entries for {f} features",
            class_shift.len()
        )));
    }
    validate_correlation(correlation, f)?;
    let l = cholesky_psd(correlation)?;
    let mut rng = rng::stream(seed);
    let centre = (k as f64 - 1.0) / 2.0;
    let mut values = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; f];
    for _ in 0..n {
        let class = rng.random_range(0..k);
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let offset = class as f64 - centre;
        for i in 0..f {
            let mut x = offset * class_shift[i];
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                x += l.get(i, j) * zj;
            }
            values.push(T::from_f64_lossy(x));
        }
        labels.push(class);
    }
    let features = Matrix::from_vec(n, f, values).expect("n*f values");
    Dataset::new(features, labels, FeatureMeta::numbered(f), k)
}

/// Correlation structure for [`SyntheticSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CorrelationSpec {
    Identity,
    /// Every off-diagonal entry equals this value.
    Uniform(f64),
    /// Entries `rho^|i-j|`.
    Ar1(f64),
    Full(Vec<Vec<f64>>),
}

impl CorrelationSpec {
    pub fn matrix(&self, f: usize) -> Result<Matrix<f64>, DataError> {
        let build = |g: &dyn Fn(usize, usize) -> f64| {
            let mut m = Matrix::filled(f, f, 0.0);
            for i in 0..f {
                for j in 0..f {
                    m.set(i, j, if i == j { 1.0 } else { g(i, j) });
                }
            }
            m
        };
        match self {
            Self::Identity => Ok(build(&|_, _| 0.0)),
            Self::Uniform(rho) => Ok(build(&|_, _| *rho)),
            Self::Ar1(rho) => Ok(build(&|i, j| rho.powi((i as i32 - j as i32).abs()))),
            Self::Full(rows) => Matrix::from_rows(f, rows)
                .filter(|m| m.rows() == f)
                .ok_or_else(|| DataError::ShapeMismatch(format!("correlation matrix must be {f}x{f}"))),
        }
    }
}

fn default_train_fraction() -> f64 {
    0.6
}

fn default_validation_fraction() -> f64 {
    0.1
}

/// Declarative synthetic dataset (see [`synthesize_correlated`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub features: usize,
    #[serde(default = "two")]
    pub classes: usize,
    pub correlation: CorrelationSpec,
    /// One entry per feature, or a single entry applied to all features.
    pub class_shift: Vec<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn two() -> usize {
    2
}

impl SyntheticSpec {
    pub fn shift_vector(&self) -> Result<Vec<f64>, DataError> {
        match self.class_shift.len() {
            1 => Ok(vec![self.class_shift[0]; self.features]),
            n if n == self.features => Ok(self.class_shift.clone()),
            n => Err(DataError::ShapeMismatch(format!(
                "class_shift has {n} entries for {} features",
                self.features
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        self.shift_vector()?;
        let c = self.correlation.matrix(self.features)?;
        validate_correlation(&c, self.features)?;
        cholesky_psd(&c)?;
        if self.features < 2 || self.classes < 2 || self.rows < 3 {
            return Err(DataError::InvalidArgument(
                "synthetic data needs >= 2 features, >= 2 classes and >= 3 rows".into(),
            ));
        }
        let f = |v: f64| (0.0..=1.0).contains(&v);
        if !f(self.train_fraction)
            || !f(self.validation_fraction)
            || self.train_fraction + self.validation_fraction >= 1.0
        {
            return Err(DataError::InvalidArgument(
                "split fractions must leave a non-empty test split".into(),
            ));
        }
        Ok(())
    }

    /// Generates the full table and splits it. The split permutation uses a
    /// seed derived from the generator seed.
    pub fn generate<T: Scalar>(&self, fallback_seed: u64) -> Result<SplitBundle<T>, DataError> {
        self.validate()?;
        let seed = self.seed.unwrap_or(fallback_seed);
        let d = synthesize_correlated(
            self.rows,
            self.features,
            self.classes,
            &self.correlation.matrix(self.features)?,
            &self.shift_vector()?,
            seed,
        )?;
        SplitBundle::random(
            &d,
            self.train_fraction,
            self.validation_fraction,
            rng::derive_seed(seed, 1),
        )
    }
}

/// Writes a free-form table of already formatted cells.
pub(crate) fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
