//! Adversarial example generation: distribution-shuffle attacks and a
//! signed-gradient baseline.

mod gradient;
mod rdsa;

pub use gradient::{gradient_attack_one, gradient_attack_set, GradientAttackConfig};
pub use rdsa::{rdsa_attack_one, rdsa_attack_set, select_shuffle_vars, AttackConfig, DEFAULT_MAX_ATTEMPTS};

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{write_rows, DataError, FeatureMeta};
use crate::model::{InputGradient, Predictor};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("cannot shuffle {requested} variables from a scope of {available}")]
    TooManyVars { requested: usize, available: usize },
    #[error("scope mismatch: {0}")]
    ScopeMismatch(String),
    #[error("input has {found} features, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
}

/// Result of attacking one input. `adversary` is present only on success;
/// `last_candidate` holds the final perturbed vector of a failed attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AttackOutcome<T: Scalar> {
    pub row: usize,
    pub original: Vec<T>,
    pub adversary: Option<Vec<T>>,
    pub last_candidate: Option<Vec<T>>,
    pub shuffled: Vec<usize>,
    pub attempts_used: usize,
    pub original_label: usize,
    pub adversarial_label: Option<usize>,
    pub succeeded: bool,
}

impl<T: Scalar> AttackOutcome<T> {
    /// The adversary if the attack succeeded, else the last perturbed
    /// vector, else the original.
    pub fn final_vector(&self) -> &[T] {
        self.adversary
            .as_deref()
            .or(self.last_candidate.as_deref())
            .unwrap_or(&self.original)
    }
}

/// Outcomes for the correctly classified rows of a dataset, in row order,
/// plus the rows skipped because the model already misclassified them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AttackSet<T: Scalar> {
    pub outcomes: Vec<AttackOutcome<T>>,
    pub skipped: Vec<usize>,
}

impl<T: Scalar> AttackSet<T> {
    pub fn succeeded(&self) -> impl Iterator<Item = &AttackOutcome<T>> {
        self.outcomes.iter().filter(|o| o.succeeded)
    }

    pub fn success_count(&self) -> usize {
        self.succeeded().count()
    }
}

/// Writes one row per outcome: the final feature vector, the true label,
/// then `succeeded, attempts_used, original_label, adversarial_label`.
pub fn write_adversarial_csv<T: Scalar>(
    path: &Path,
    meta: &[FeatureMeta],
    label_column: &str,
    outcomes: &[AttackOutcome<T>],
) -> Result<(), DataError> {
    let mut header: Vec<String> = meta.iter().map(|m| m.name.clone()).collect();
    header.extend(
        [
            label_column,
            "succeeded",
            "attempts_used",
            "original_label",
            "adversarial_label",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            let mut r: Vec<String> = o.final_vector().iter().map(|v| v.to_string()).collect();
            r.push(o.original_label.to_string());
            r.push(o.succeeded.to_string());
            r.push(o.attempts_used.to_string());
            r.push(o.original_label.to_string());
            r.push(o.adversarial_label.map(|l| l.to_string()).unwrap_or_default());
            r
        })
        .collect();
    write_rows(path, &header, &rows)
}

/// Wraps a predictor and counts its queries.
#[derive(Debug, Default)]
pub struct CountingPredictor<P> {
    inner: P,
    queries: AtomicUsize,
    gradients: AtomicUsize,
}

impl<P> CountingPredictor<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            queries: AtomicUsize::new(0),
            gradients: AtomicUsize::new(0),
        }
    }

    pub fn queries(&self) -> usize {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn gradient_calls(&self) -> usize {
        self.gradients.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.queries.store(0, Ordering::Relaxed);
        self.gradients.store(0, Ordering::Relaxed);
    }

    pub fn into_inner(self) -> P {
        self.inner
    }
}

impl<T, P: Predictor<T>> Predictor<T> for CountingPredictor<P> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn query(&self, x: &[T]) -> usize {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.inner.query(x)
    }
}

impl<T, P: InputGradient<T>> InputGradient<T> for CountingPredictor<P> {
    fn loss_gradient(&self, x: &[T], label: usize) -> Vec<T> {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.loss_gradient(x, label)
    }
}
