//! Finely binned one-dimensional empirical distributions.
//!
//! A [`FeatureHistogram`] is built from one feature column and sampled by
//! inverse-CDF lookup: a bin is drawn with probability equal to its
//! frequency, then a value is drawn uniformly inside the bin.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, SplitRole};
use crate::metrics::{jensen_shannon_distance, LogBase};
use crate::scalar::Scalar;

/// Bin count used for attack histograms unless configured otherwise.
pub const DEFAULT_BINS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum HistogramError {
    #[error("feature {0} has no values")]
    EmptyFeature(usize),
    #[error("feature {feature} has a non-finite value at row {row}")]
    NonFiniteValue { feature: usize, row: usize },
    #[error("feature index {0} out of range")]
    FeatureOutOfRange(usize),
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("invalid histogram: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinningMode {
    /// `bins` equal-width bins spanning `[min, max]`.
    #[default]
    EqualWidth,
    /// Edges at the `i / bins` quantiles, so each bin holds roughly the same
    /// number of samples. Repeated quantiles are merged, so discrete features
    /// end up with fewer bins.
    EqualPopulation,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct RawHistogram<T: Scalar> {
    feature_index: usize,
    bin_edges: Vec<T>,
    frequencies: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", try_from = "RawHistogram<T>", into = "RawHistogram<T>")]
pub struct FeatureHistogram<T: Scalar> {
    feature_index: usize,
    bin_edges: Vec<T>,
    frequencies: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<T: Scalar> TryFrom<RawHistogram<T>> for FeatureHistogram<T> {
    type Error = HistogramError;

    fn try_from(raw: RawHistogram<T>) -> Result<Self, Self::Error> {
        Self::from_parts(raw.feature_index, raw.bin_edges, raw.frequencies)
    }
}

impl<T: Scalar> From<FeatureHistogram<T>> for RawHistogram<T> {
    fn from(h: FeatureHistogram<T>) -> Self {
        Self {
            feature_index: h.feature_index,
            bin_edges: h.bin_edges,
            frequencies: h.frequencies,
        }
    }
}

impl<T: Scalar> FeatureHistogram<T> {
    /// Validates edges and frequencies and precomputes the cumulative table.
    pub fn from_parts(feature_index: usize, bin_edges: Vec<T>, frequencies: Vec<f64>) -> Result<Self, HistogramError> {
        if frequencies.is_empty() {
            return Err(HistogramError::ZeroBins);
        }
        if bin_edges.len() != frequencies.len() + 1 {
            return Err(HistogramError::Invalid(format!(
                "{} edges for {} bins",
                bin_edges.len(),
                frequencies.len()
            )));
        }
        if bin_edges.iter().any(|e| !e.is_finite()) || bin_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HistogramError::Invalid(
                "bin edges must be finite and strictly increasing".into(),
            ));
        }
        if frequencies.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
            return Err(HistogramError::Invalid(
                "frequencies must be finite and non-negative".into(),
            ));
        }
        let total: f64 = frequencies.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(HistogramError::Invalid(format!("frequencies sum to {total}")));
        }
        let cumulative = cumulative_table(&frequencies);
        Ok(Self {
            feature_index,
            bin_edges,
            frequencies,
            cumulative,
        })
    }

    /// Histogram of `values` for feature `feature_index`.
    pub fn from_values(
        feature_index: usize,
        values: &[T],
        bins: usize,
        mode: BinningMode,
    ) -> Result<Self, HistogramError> {
        if bins == 0 {
            return Err(HistogramError::ZeroBins);
        }
        if values.is_empty() {
            return Err(HistogramError::EmptyFeature(feature_index));
        }
        if let Some(row) = values.iter().position(|v| !v.is_finite()) {
            return Err(HistogramError::NonFiniteValue {
                feature: feature_index,
                row,
            });
        }
        let (lo, hi) = values
            .iter()
            .fold((values[0], values[0]), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let edges = if lo == hi {
            // a constant feature gets one bin narrow enough to reproduce it
            vec![lo, lo + lo.abs().max(T::one()) * T::epsilon()]
        } else {
            match mode {
                BinningMode::EqualWidth => equal_width_edges(lo, hi, bins),
                BinningMode::EqualPopulation => equal_population_edges(values, lo, hi, bins),
            }
        };
        let mut counts = vec![0u64; edges.len() - 1];
        for &v in values {
            counts[bin_index(&edges, v)] += 1;
        }
        let n = values.len() as f64;
        let frequencies = counts.iter().map(|&c| c as f64 / n).collect::<Vec<_>>();
        let cumulative = cumulative_table(&frequencies);
        Ok(Self {
            feature_index,
            bin_edges: edges,
            frequencies,
            cumulative,
        })
    }

    pub fn feature_index(&self) -> usize {
        self.feature_index
    }

    pub fn bin_edges(&self) -> &[T] {
        &self.bin_edges
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn bins(&self) -> usize {
        self.frequencies.len()
    }

    /// Bin holding `x`; values outside the edges are clipped to the end bins
    /// and the upper edge belongs to the last bin.
    pub fn bin_of(&self, x: T) -> usize {
        bin_index(&self.bin_edges, x)
    }

    /// Counts of `values` per bin, with out-of-range values clipped.
    pub fn counts_of(&self, values: &[T]) -> Vec<u64> {
        let mut counts = vec![0u64; self.bins()];
        for &v in values {
            counts[self.bin_of(v)] += 1;
        }
        counts
    }

    /// Draws a bin with probability equal to its frequency, then a value
    /// uniformly from that bin's half-open interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u: f64 = rng.random();
        // first bin whose cumulative bound exceeds u; boundary ties go up
        let bin = self.cumulative.partition_point(|&c| c <= u).min(self.bins() - 1);
        let lo = self.bin_edges[bin];
        let hi = self.bin_edges[bin + 1];
        let t: f64 = rng.random();
        let v = lo + (hi - lo) * T::from_f64_lossy(t);
        if v < hi {
            v
        } else {
            lo
        }
    }
}

fn cumulative_table(frequencies: &[f64]) -> Vec<f64> {
    let total: f64 = frequencies.iter().sum();
    let last_positive = frequencies.iter().rposition(|&f| f > 0.0).unwrap_or(0);
    let mut running = 0.0;
    frequencies
        .iter()
        .enumerate()
        .map(|(i, f)| {
            running += f;
            if i >= last_positive {
                1.0
            } else {
                running / total
            }
        })
        .collect()
}

fn equal_width_edges<T: Scalar>(lo: T, hi: T, bins: usize) -> Vec<T> {
    let span = hi - lo;
    let nb = T::from_usize_lossy(bins);
    let mut edges: Vec<T> = (0..bins).map(|i| lo + span * T::from_usize_lossy(i) / nb).collect();
    edges.push(hi);
    edges.dedup();
    edges
}

fn equal_population_edges<T: Scalar>(values: &[T], lo: T, hi: T, bins: usize) -> Vec<T> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let mut edges = vec![lo];
    for i in 1..bins {
        let q = sorted[(i * n / bins).min(n - 1)];
        if q > *edges.last().expect("non-empty") && q < hi {
            edges.push(q);
        }
    }
    edges.push(hi);
    edges
}

fn bin_index<T: Scalar>(edges: &[T], x: T) -> usize {
    let bins = edges.len() - 1;
    edges[1..bins].partition_point(|&e| e <= x)
}

/// Provenance of a [`HistogramSet`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFingerprint {
    pub n_rows: usize,
    pub role: SplitRole,
    pub content_hash: String,
}

/// Histograms for every shuffleable feature of one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HistogramSet<T: Scalar> {
    histograms: BTreeMap<usize, FeatureHistogram<T>>,
    source: SourceFingerprint,
    bins: usize,
    mode: BinningMode,
}

impl<T: Scalar> HistogramSet<T> {
    pub fn get(&self, feature: usize) -> Option<&FeatureHistogram<T>> {
        self.histograms.get(&feature)
    }

    pub fn features(&self) -> impl Iterator<Item = usize> + '_ {
        self.histograms.keys().copied()
    }

    pub fn covers(&self, features: &[usize]) -> bool {
        features.iter().all(|f| self.histograms.contains_key(f))
    }

    pub fn len(&self) -> usize {
        self.histograms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histograms.is_empty()
    }

    pub fn source(&self) -> &SourceFingerprint {
        &self.source
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn mode(&self) -> BinningMode {
        self.mode
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("histograms serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Equal-width histograms of the listed features of `d`.
pub fn build_histograms<T: Scalar>(
    d: &Dataset<T>,
    features: &[usize],
    bins: usize,
) -> Result<HistogramSet<T>, HistogramError> {
    build_histograms_with(d, features, bins, BinningMode::EqualWidth)
}

pub fn build_histograms_with<T: Scalar>(
    d: &Dataset<T>,
    features: &[usize],
    bins: usize,
    mode: BinningMode,
) -> Result<HistogramSet<T>, HistogramError> {
    if bins == 0 {
        return Err(HistogramError::ZeroBins);
    }
    let mut histograms = BTreeMap::new();
    for &j in features {
        if j >= d.n_features() {
            return Err(HistogramError::FeatureOutOfRange(j));
        }
        let column = d.features().column(j);
        histograms.insert(j, FeatureHistogram::from_values(j, &column, bins, mode)?);
    }
    Ok(HistogramSet {
        histograms,
        source: SourceFingerprint {
            n_rows: d.n_rows(),
            role: d.role(),
            content_hash: d.content_hash(),
        },
        bins,
        mode,
    })
}

/// One draw from `h`.
pub fn sample_value<T: Scalar, R: Rng + ?Sized>(h: &FeatureHistogram<T>, rng: &mut R) -> T {
    h.sample(rng)
}

/// Jensen-Shannon distance (natural log) between the reference histogram and
/// `values` binned on the same edges.
pub fn jsd_between<T: Scalar>(h_ref: &FeatureHistogram<T>, values: &[T]) -> f64 {
    jsd_between_base(h_ref, values, LogBase::Natural)
}

pub fn jsd_between_base<T: Scalar>(h_ref: &FeatureHistogram<T>, values: &[T], base: LogBase) -> f64 {
    let counts = h_ref.counts_of(values);
    let m = values.len().max(1) as f64;
    let q: Vec<f64> = counts.iter().map(|&c| c as f64 / m).collect();
    jensen_shannon_distance(h_ref.frequencies(), &q, base)
}
