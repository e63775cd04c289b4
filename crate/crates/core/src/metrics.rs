//! Evaluation quantities for attacks and retrained models.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::AttackOutcome;
use crate::histogram::{BinningMode, FeatureHistogram};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Bin count for the per-feature JSD evaluation histograms.
pub const DEFAULT_JSD_BINS: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no attack outcomes")]
    EmptyOutcomeList,
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("only one class present in the labels")]
    SingleClass,
    #[error("label {0} out of range")]
    InvalidLabel(usize),
    #[error("empty list")]
    EmptyList,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

/// Square root of the Jensen-Shannon divergence between two probability
/// vectors. Inputs are normalized to sum 1; terms with zero mass contribute
/// nothing. The result lies in `[0, sqrt(ln 2)]` (natural log) or `[0, 1]`
/// (base 2).
pub fn jensen_shannon_distance(p: &[f64], q: &[f64], base: LogBase) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions must share a support");
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let mut div = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        let pi = pi / sp;
        let qi = qi / sq;
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            div += pi * (pi / mi).ln();
        }
        if qi > 0.0 {
            div += qi * (qi / mi).ln();
        }
    }
    div *= 0.5;
    if base == LogBase::Two {
        div /= std::f64::consts::LN_2;
    }
    div.max(0.0).sqrt()
}

/// Share of attacked (initially correctly classified) inputs that were
/// flipped.
pub fn fooling_ratio<T: Scalar>(outcomes: &[AttackOutcome<T>]) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::EmptyOutcomeList);
    }
    let hits = outcomes.iter().filter(|o| o.succeeded).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// Mean over samples of the mean absolute per-feature difference.
pub fn mean_feature_change<T: Scalar>(clean: &Matrix<T>, adv: &Matrix<T>) -> Result<T, MetricsError> {
    if clean.shape() != adv.shape() {
        return Err(MetricsError::ShapeMismatch(clean.shape(), adv.shape()));
    }
    let (n, f) = clean.shape();
    if n == 0 || f == 0 {
        return Err(MetricsError::TooFewSamples { needed: 1, found: 0 });
    }
    let nf = T::from_usize_lossy(f);
    let total: T = clean
        .iter_rows()
        .zip(adv.iter_rows())
        .map(|(c, a)| c.iter().zip(a).map(|(&x, &y)| (x - y).abs()).sum::<T>() / nf)
        .sum();
    Ok(total / T::from_usize_lossy(n))
}

/// Pearson correlation matrix. Zero-variance features are flagged in
/// `degenerate` and get 0 off the diagonal, 1 on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CorrelationMatrix<T: Scalar> {
    pub values: Matrix<T>,
    pub degenerate: Vec<bool>,
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn dim(&self) -> usize {
        self.values.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.values.get(i, j)
    }

    /// Sub-matrix over the given features, in that order.
    pub fn restrict(&self, features: &[usize]) -> Self {
        let k = features.len();
        let mut values = Matrix::filled(k, k, T::zero());
        for (a, &i) in features.iter().enumerate() {
            for (b, &j) in features.iter().enumerate() {
                values.set(a, b, self.values.get(i, j));
            }
        }
        Self {
            values,
            degenerate: features.iter().map(|&i| self.degenerate[i]).collect(),
        }
    }

    /// Mean of `|rho_ij|` over `i != j`; 0 for a 1x1 matrix.
    pub fn mean_abs_off_diagonal(&self) -> T {
        let f = self.dim();
        if f < 2 {
            return T::zero();
        }
        let mut s = T::zero();
        for i in 0..f {
            for j in 0..f {
                if i != j {
                    s = s + self.values.get(i, j).abs();
                }
            }
        }
        s / T::from_usize_lossy(f * (f - 1))
    }
}

pub fn correlation_matrix<T: Scalar>(d: &Matrix<T>) -> Result<CorrelationMatrix<T>, MetricsError> {
    let (n, f) = d.shape();
    if n < 2 {
        return Err(MetricsError::TooFewSamples { needed: 2, found: n });
    }
    let nt = T::from_usize_lossy(n);
    let mut means = vec![T::zero(); f];
    for row in d.iter_rows() {
        for (m, &v) in means.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    for m in means.iter_mut() {
        *m = *m / nt;
    }
    let mut cov = Matrix::filled(f, f, T::zero());
    let mut centred = vec![T::zero(); f];
    for row in d.iter_rows() {
        for j in 0..f {
            centred[j] = row[j] - means[j];
        }
        for i in 0..f {
            let ci = centred[i];
            let out = cov.row_mut(i);
            for j in i..f {
                out[j] = out[j] + ci * centred[j];
            }
        }
    }
    let sd: Vec<T> = (0..f).map(|i| cov.get(i, i).sqrt()).collect();
    let degenerate: Vec<bool> = sd.iter().map(|&s| !(s > T::zero())).collect();
    let mut values = Matrix::filled(f, f, T::zero());
    for i in 0..f {
        values.set(i, i, T::one());
        for j in i + 1..f {
            let r = if degenerate[i] || degenerate[j] {
                T::zero()
            } else {
                (cov.get(i, j) / (sd[i] * sd[j])).max(-T::one()).min(T::one())
            };
            values.set(i, j, r);
            values.set(j, i, r);
        }
    }
    Ok(CorrelationMatrix { values, degenerate })
}

/// `(1/F^2) * sum_ij |A_ij - B_ij|`, diagonal included.
pub fn correlation_diff<T: Scalar>(a: &CorrelationMatrix<T>, b: &CorrelationMatrix<T>) -> Result<T, MetricsError> {
    if a.values.shape() != b.values.shape() {
        return Err(MetricsError::ShapeMismatch(a.values.shape(), b.values.shape()));
    }
    let f = a.dim();
    if f == 0 {
        return Ok(T::zero());
    }
    let s: T = a
        .values
        .as_slice()
        .iter()
        .zip(b.values.as_slice())
        .map(|(&x, &y)| (x - y).abs())
        .sum();
    Ok(s / T::from_usize_lossy(f * f))
}

/// Binary ROC AUC via the Mann-Whitney statistic with mid-ranks for ties.
/// `labels` must be 0 (negative) or 1 (positive).
pub fn auroc<T: Scalar>(scores: &[T], labels: &[usize]) -> Result<f64, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(MetricsError::InvalidLabel(l));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Unweighted one-vs-rest macro AUROC over the columns of `proba`. Classes
/// absent from `labels` (or present in every row) are skipped; with two
/// columns this is the binary AUROC of column 1.
pub fn auroc_macro<T: Scalar>(proba: &Matrix<T>, labels: &[usize]) -> Result<f64, MetricsError> {
    if proba.rows() != labels.len() {
        return Err(MetricsError::LengthMismatch(proba.rows(), labels.len()));
    }
    let k = proba.cols();
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(MetricsError::InvalidLabel(l));
    }
    if k == 2 {
        let bin: Vec<usize> = labels.to_vec();
        return auroc(&proba.column(1), &bin);
    }
    let mut sum = 0.0;
    let mut used = 0;
    for c in 0..k {
        let bin: Vec<usize> = labels.iter().map(|&l| usize::from(l == c)).collect();
        match auroc(&proba.column(c), &bin) {
            Ok(a) => {
                sum += a;
                used += 1;
            }
            Err(MetricsError::SingleClass) => continue,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok(sum / used as f64)
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if pred.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(pred.len(), labels.len()));
    }
    if pred.is_empty() {
        return Err(MetricsError::TooFewSamples { needed: 1, found: 0 });
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Per-feature JSD between the clean and adversarial columns, each evaluated
/// on an equal-width histogram of the clean column with `bins` bins.
pub fn per_feature_jsd<T: Scalar>(
    clean: &Matrix<T>,
    adv: &Matrix<T>,
    features: &[usize],
    bins: usize,
    base: LogBase,
) -> Result<Vec<f64>, MetricsError> {
    if clean.cols() != adv.cols() {
        return Err(MetricsError::ShapeMismatch(clean.shape(), adv.shape()));
    }
    if clean.rows() == 0 || adv.rows() == 0 {
        return Err(MetricsError::TooFewSamples { needed: 1, found: 0 });
    }
    Ok(features
        .iter()
        .map(|&j| {
            let h = FeatureHistogram::from_values(j, &clean.column(j), bins.max(1), BinningMode::EqualWidth)
                .expect("clean column is finite and non-empty");
            crate::histogram::jsd_between_base(&h, &adv.column(j), base)
        })
        .collect())
}

/// Mean and root-mean-square deviation about the mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub rms: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyList);
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(Aggregate {
            mean: values[0],
            rms: 0.0,
            n: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let rms = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    Ok(Aggregate {
        mean,
        rms,
        n: values.len(),
    })
}

/// Everything measured for one attack run or one retrained model. Attack
/// quantities are absent for augmentation rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fooling_ratio: Option<f64>,
    /// Spread of the fooling ratio over runs; filled on aggregated rows.
    pub fr_std: Option<f64>,
    pub mean_feature_change: Option<f64>,
    pub per_feature_jsd: Vec<f64>,
    pub mean_jsd: Option<f64>,
    /// Over all features.
    pub correlation_diff: Option<f64>,
    /// Over the shuffle scope only.
    pub correlation_diff_scope: Option<f64>,
    /// Mean absolute off-diagonal correlation of the adversarial set within
    /// the shuffle scope.
    pub adversarial_mean_abs_correlation: Option<f64>,
    pub accuracy: f64,
    pub auroc: f64,
    pub attacked: Option<usize>,
    pub succeeded: Option<usize>,
}

impl MetricsReport {
    /// Scalar metrics by name, in a fixed order. Used for tidy output and
    /// aggregation.
    pub fn scalars(&self) -> Vec<(&'static str, f64)> {
        let mut out = Vec::new();
        let mut push = |name, v: Option<f64>| {
            if let Some(v) = v {
                out.push((name, v));
            }
        };
        push("fooling_ratio", self.fooling_ratio);
        push("mean_feature_change", self.mean_feature_change);
        push("mean_jsd", self.mean_jsd);
        push("correlation_diff", self.correlation_diff);
        push("correlation_diff_scope", self.correlation_diff_scope);
        push(
            "adversarial_mean_abs_correlation",
            self.adversarial_mean_abs_correlation,
        );
        push("accuracy", Some(self.accuracy));
        push("auroc", Some(self.auroc));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().iter().all(|(_, v)| v.is_finite()) && self.per_feature_jsd.iter().all(|v| v.is_finite())
    }
}
