//! Random distribution shuffle attacks (RDSA) on tabular classifiers.
//!
//! RDSA builds adversarial inputs by resampling a random subset of features
//! from their one-dimensional empirical distributions until the classifier's
//! decision flips. The per-feature marginals of the adversarial set stay
//! close to the clean data while the correlations between the resampled
//! features collapse.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`). The aliases
//! at the crate root fix the scalar to `f64`, which is what the pipelines and
//! the command-line driver use.

pub mod attack;
pub mod data;
pub mod histogram;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod scalar;

pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Dataset = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type Classifier = model::Classifier<f64>;
pub type HistogramSet = histogram::HistogramSet<f64>;
pub type AttackOutcome = attack::AttackOutcome<f64>;

/// Sizes the global worker pool used by attacks and augmentation
/// repetitions. Must run before any parallel work.
pub fn configure_threads(n: usize) -> Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()
}
