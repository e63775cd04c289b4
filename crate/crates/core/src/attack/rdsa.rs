use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AttackError, AttackOutcome, AttackSet};
use crate::data::Dataset;
use crate::histogram::HistogramSet;
use crate::model::Predictor;
use crate::rng;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_ATTEMPTS: usize = 100;

fn default_max_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub n_vars: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    /// Features eligible for shuffling. `None` means every continuous
    /// feature of the attacked dataset (every feature for a bare vector).
    #[serde(default)]
    pub shuffle_scope: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reselect_vars_per_attempt: bool,
}

impl AttackConfig {
    pub fn new(n_vars: usize, max_attempts: usize, seed: u64) -> Self {
        Self {
            n_vars,
            max_attempts,
            shuffle_scope: None,
            seed,
            reselect_vars_per_attempt: false,
        }
    }

    pub fn with_scope(mut self, scope: Vec<usize>) -> Self {
        self.shuffle_scope = Some(scope);
        self
    }

    fn scope_or(&self, fallback: impl FnOnce() -> Vec<usize>) -> Vec<usize> {
        self.shuffle_scope.clone().unwrap_or_else(fallback)
    }

    fn check(&self, scope: &[usize], dim: usize, hists: &HistogramSet<impl Scalar>) -> Result<(), AttackError> {
        if self.n_vars == 0 {
            return Err(AttackError::InvalidConfig("n_vars must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(AttackError::InvalidConfig("max_attempts must be at least 1".into()));
        }
        if self.n_vars > scope.len() {
            return Err(AttackError::TooManyVars {
                requested: self.n_vars,
                available: scope.len(),
            });
        }
        let mut seen = vec![false; dim];
        for &f in scope {
            if f >= dim {
                return Err(AttackError::ScopeMismatch(format!(
                    "feature {f} out of range for {dim} features"
                )));
            }
            if std::mem::replace(&mut seen[f], true) {
                return Err(AttackError::ScopeMismatch(format!("feature {f} listed twice")));
            }
            if hists.get(f).is_none() {
                return Err(AttackError::ScopeMismatch(format!("no histogram for feature {f}")));
            }
        }
        Ok(())
    }
}

/// Uniform sample of `n_vars` distinct entries of `scope`.
pub fn select_shuffle_vars<R: Rng + ?Sized>(
    scope: &[usize],
    n_vars: usize,
    rng: &mut R,
) -> Result<Vec<usize>, AttackError> {
    if n_vars > scope.len() {
        return Err(AttackError::TooManyVars {
            requested: n_vars,
            available: scope.len(),
        });
    }
    Ok(index::sample(rng, scope.len(), n_vars)
        .into_iter()
        .map(|i| scope[i])
        .collect())
}

/// Resamples the selected features from their histograms and queries the
/// model once per attempt, stopping at the first prediction different from
/// `true_label`. Issues at most `cfg.max_attempts` queries.
pub fn rdsa_attack_one<T: Scalar, P: Predictor<T> + ?Sized, R: Rng + ?Sized>(
    x: &[T],
    true_label: usize,
    model: &P,
    hists: &HistogramSet<T>,
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<AttackOutcome<T>, AttackError> {
    if x.len() != model.input_dim() {
        return Err(AttackError::DimensionMismatch {
            expected: model.input_dim(),
            found: x.len(),
        });
    }
    let scope = cfg.scope_or(|| (0..x.len()).collect());
    cfg.check(&scope, x.len(), hists)?;
    Ok(shuffle_loop(x, true_label, model, hists, cfg, &scope, rng))
}

fn shuffle_loop<T: Scalar, P: Predictor<T> + ?Sized, R: Rng + ?Sized>(
    x: &[T],
    true_label: usize,
    model: &P,
    hists: &HistogramSet<T>,
    cfg: &AttackConfig,
    scope: &[usize],
    rng: &mut R,
) -> AttackOutcome<T> {
    let mut vars = select_shuffle_vars(scope, cfg.n_vars, rng).expect("scope checked");
    let mut adv = x.to_vec();
    let mut label = true_label;
    for attempt in 1..=cfg.max_attempts {
        if cfg.reselect_vars_per_attempt && attempt > 1 {
            for &v in &vars {
                adv[v] = x[v];
            }
            vars = select_shuffle_vars(scope, cfg.n_vars, rng).expect("scope checked");
        }
        for &v in &vars {
            adv[v] = hists.get(v).expect("scope checked").sample(rng);
        }
        label = model.query(&adv);
        if label != true_label {
            return AttackOutcome {
                row: 0,
                original: x.to_vec(),
                adversary: Some(adv),
                last_candidate: None,
                shuffled: vars,
                attempts_used: attempt,
                original_label: true_label,
                adversarial_label: Some(label),
                succeeded: true,
            };
        }
    }
    AttackOutcome {
        row: 0,
        original: x.to_vec(),
        adversary: None,
        last_candidate: Some(adv),
        shuffled: vars,
        attempts_used: cfg.max_attempts,
        original_label: true_label,
        adversarial_label: Some(label),
        succeeded: false,
    }
}

/// Attacks every correctly classified row of `d` in parallel. Row `i` draws
/// from a stream seeded by `(cfg.seed, i)`, so the result does not depend on
/// the thread count.
pub fn rdsa_attack_set<T: Scalar, P: Predictor<T> + Sync + ?Sized>(
    d: &Dataset<T>,
    model: &P,
    hists: &HistogramSet<T>,
    cfg: &AttackConfig,
) -> Result<AttackSet<T>, AttackError> {
    if d.n_features() != model.input_dim() {
        return Err(AttackError::DimensionMismatch {
            expected: model.input_dim(),
            found: d.n_features(),
        });
    }
    let scope = cfg.scope_or(|| d.continuous_indices());
    cfg.check(&scope, d.n_features(), hists)?;
    let results: Vec<Result<AttackOutcome<T>, usize>> = (0..d.n_rows())
        .into_par_iter()
        .map(|i| {
            let x = d.row(i);
            let label = d.labels()[i];
            if model.query(x) != label {
                return Err(i);
            }
            let mut r = rng::stream(rng::derive_seed(cfg.seed, i as u64));
            let mut o = shuffle_loop(x, label, model, hists, cfg, &scope, &mut r);
            o.row = i;
            Ok(o)
        })
        .collect();
    Ok(split_results(results))
}

pub(super) fn split_results<T: Scalar>(results: Vec<Result<AttackOutcome<T>, usize>>) -> AttackSet<T> {
    let mut outcomes = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(o) => outcomes.push(o),
            Err(i) => skipped.push(i),
        }
    }
    AttackSet { outcomes, skipped }
}
