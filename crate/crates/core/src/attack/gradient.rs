use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rdsa::split_results;
use super::{AttackError, AttackOutcome, AttackSet};
use crate::data::Dataset;
use crate::model::InputGradient;
use crate::scalar::Scalar;

fn default_steps() -> usize {
    100
}

/// Iterative signed-gradient ascent on the loss. `steps = 1` is the
/// single-step fast gradient sign method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientAttackConfig {
    pub epsilon: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Per-feature `(min, max)` bounds applied after every step.
    #[serde(default)]
    pub clip: Option<Vec<(f64, f64)>>,
}

impl GradientAttackConfig {
    pub fn new(epsilon: f64, steps: usize) -> Self {
        Self {
            epsilon,
            steps,
            clip: None,
        }
    }

    fn check(&self, dim: usize) -> Result<(), AttackError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(AttackError::InvalidConfig(format!(
                "epsilon {} must be finite and non-negative",
                self.epsilon
            )));
        }
        if self.steps == 0 {
            return Err(AttackError::InvalidConfig("steps must be at least 1".into()));
        }
        if let Some(c) = &self.clip {
            if c.len() != dim {
                return Err(AttackError::DimensionMismatch {
                    expected: dim,
                    found: c.len(),
                });
            }
            if let Some(j) = c.iter().position(|(lo, hi)| !(lo <= hi)) {
                return Err(AttackError::InvalidConfig(format!(
                    "empty clip interval for feature {j}"
                )));
            }
        }
        Ok(())
    }
}

/// `x <- clip(x + epsilon * sign(dL/dx))` until the prediction leaves
/// `true_label` or `steps` iterations are spent.
pub fn gradient_attack_one<T: Scalar, P: InputGradient<T> + ?Sized>(
    x: &[T],
    true_label: usize,
    model: &P,
    cfg: &GradientAttackConfig,
) -> Result<AttackOutcome<T>, AttackError> {
    if x.len() != model.input_dim() {
        return Err(AttackError::DimensionMismatch {
            expected: model.input_dim(),
            found: x.len(),
        });
    }
    cfg.check(x.len())?;
    Ok(descend(x, true_label, model, cfg))
}

fn descend<T: Scalar, P: InputGradient<T> + ?Sized>(
    x: &[T],
    true_label: usize,
    model: &P,
    cfg: &GradientAttackConfig,
) -> AttackOutcome<T> {
    let eps = T::from_f64_lossy(cfg.epsilon);
    let mut adv = x.to_vec();
    let mut label = true_label;
    let mut used = 0;
    if cfg.epsilon > 0.0 {
        for step in 1..=cfg.steps {
            let g = model.loss_gradient(&adv, true_label);
            for (j, v) in adv.iter_mut().enumerate() {
                if g[j] > T::zero() {
                    *v = *v + eps;
                } else if g[j] < T::zero() {
                    *v = *v - eps;
                }
                if let Some(c) = &cfg.clip {
                    *v = v.max(T::from_f64_lossy(c[j].0)).min(T::from_f64_lossy(c[j].1));
                }
            }
            used = step;
            label = model.query(&adv);
            if label != true_label {
                break;
            }
        }
    }
    let succeeded = label != true_label;
    let changed = (0..x.len()).filter(|&j| adv[j] != x[j]).collect();
    AttackOutcome {
        row: 0,
        original: x.to_vec(),
        adversary: succeeded.then(|| adv.clone()),
        last_candidate: (!succeeded && used > 0).then_some(adv),
        shuffled: changed,
        attempts_used: used,
        original_label: true_label,
        adversarial_label: (used > 0).then_some(label),
        succeeded,
    }
}

/// Gradient attack on every correctly classified row of `d`, in parallel.
pub fn gradient_attack_set<T: Scalar, P: InputGradient<T> + Sync + ?Sized>(
    d: &Dataset<T>,
    model: &P,
    cfg: &GradientAttackConfig,
) -> Result<AttackSet<T>, AttackError> {
    if d.n_features() != model.input_dim() {
        return Err(AttackError::DimensionMismatch {
            expected: model.input_dim(),
            found: d.n_features(),
        });
    }
    cfg.check(d.n_features())?;
    let results = (0..d.n_rows())
        .into_par_iter()
        .map(|i| {
            let x = d.row(i);
            let label = d.labels()[i];
            if model.query(x) != label {
                return Err(i);
            }
            let mut o = descend(x, label, model, cfg);
            o.row = i;
            Ok(o)
        })
        .collect();
    Ok(split_results(results))
}
