use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::records::persist_results;
use super::sweep::SweepResult;
use super::{
    create_run_dir, evaluate_classifier, record_hashes, split_hashes, write_json, At, Experiment, PipelineError,
    RunOptions, RunRecord, Stage,
};
use crate::attack::{
    gradient_attack_one, gradient_attack_set, rdsa_attack_set, select_shuffle_vars, AttackConfig, AttackOutcome,
    GradientAttackConfig, DEFAULT_MAX_ATTEMPTS,
};
use crate::data::{subsample, subsample_to_size, write_csv, Dataset, SplitRole};
use crate::histogram::{build_histograms, HistogramSet, DEFAULT_BINS};
use crate::matrix::Matrix;
use crate::metrics::MetricsReport;
use crate::model::{Classifier, ModelConfig};
use crate::rng::{self, derive_seed};

/// Size of the data-starved training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Reduction {
    Fraction(f64),
    Size(usize),
}

fn default_max_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdsaStrategy {
    pub n_vars: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default)]
    pub shuffle_scope: Option<Vec<usize>>,
    #[serde(default)]
    pub reselect_vars_per_attempt: bool,
}

/// How the reduced set is augmented. `None` keeps the data-starved model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    None,
    Rdsa(RdsaStrategy),
    Gradient(GradientAttackConfig),
}

impl Strategy {
    pub fn label(&self) -> String {
        match self {
            Strategy::None => "none".into(),
            Strategy::Rdsa(r) => match &r.shuffle_scope {
                Some(scope) => format!("rdsa(n_vars={},scope={:?})", r.n_vars, scope),
                None => format!("rdsa(n_vars={})", r.n_vars),
            },
            Strategy::Gradient(g) => format!("gradient(epsilon={},steps={})", g.epsilon, g.steps),
        }
    }
}

fn three() -> usize {
    3
}

fn yes() -> bool {
    true
}

/// What to do when fewer inputs flip than the reduced set has rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FillPolicy {
    /// Re-attack failed inputs with fresh variable selections this many times.
    #[serde(default = "three")]
    pub retry_rounds: usize,
    /// Then use the last perturbed vector of each remaining failure (and a
    /// single resampled vector for inputs the model already misclassifies).
    #[serde(default = "yes")]
    pub include_unflipped: bool,
}

impl Default for FillPolicy {
    fn default() -> Self {
        Self {
            retry_rounds: 3,
            include_unflipped: true,
        }
    }
}

fn default_repetitions() -> usize {
    50
}

fn default_seed_base() -> u64 {
    42
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub reduction: Reduction,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// Seeds the reduced-set draw; repetition `r` uses `derive(seed_base, r)`.
    #[serde(default = "default_seed_base")]
    pub seed_base: u64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default)]
    pub fill: FillPolicy,
    #[serde(default)]
    pub write_adversaries: bool,
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.strategies.is_empty() {
            return bad("no augmentation strategies".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.bins == 0 {
            return bad("bins must be at least 1".into());
        }
        match self.reduction {
            Reduction::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return bad(format!("reduction fraction {f} not in (0, 1]"))
            }
            Reduction::Size(0) => return bad("reduction size must be positive".into()),
            _ => {}
        }
        for s in &self.strategies {
            match s {
                Strategy::None => {}
                Strategy::Rdsa(r) if r.n_vars == 0 || r.max_attempts == 0 => {
                    return bad(format!("{}: n_vars and max_attempts must be at least 1", s.label()))
                }
                Strategy::Gradient(g) if g.steps == 0 || !(g.epsilon >= 0.0) => {
                    return bad(format!("{}: invalid step settings", s.label()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn scope_of(&self, s: &RdsaStrategy, default: &[usize]) -> Vec<usize> {
        s.shuffle_scope.clone().unwrap_or_else(|| default.to_vec())
    }
}

struct Generated {
    adversaries: Dataset<f64>,
    flipped: usize,
    first_pass: Option<f64>,
}

/// Subsample the training split, train a data-starved model, augment the
/// reduced set with adversaries of that model (keeping true labels), reset
/// and retrain, and evaluate on the untouched test split. Repeated with
/// derived seeds; repetitions run in parallel.
pub fn run_augmentation_pipeline(
    exp: &Experiment,
    spec: &AugmentationSpec,
    opts: &RunOptions,
) -> Result<SweepResult, PipelineError> {
    spec.validate()?;
    let model_cfg = exp.validate()?;
    let prepared = exp.prepare()?;
    let splits = &prepared.splits;
    let test = &splits.test;
    let continuous = splits.train.continuous_indices();
    let mut scopes = Vec::with_capacity(spec.strategies.len());
    for s in &spec.strategies {
        if let Strategy::Rdsa(r) = s {
            let scope = spec.scope_of(r, &continuous);
            if let Some(&f) = scope.iter().find(|&&f| f >= test.n_features()) {
                return Err(PipelineError::Config(format!("shuffle scope feature {f} out of range")));
            }
            if r.n_vars > scope.len() {
                return Err(PipelineError::Config(format!(
                    "{}: n_vars exceeds the shuffle scope of {} features",
                    s.label(),
                    scope.len()
                )));
            }
            scopes.push(scope);
        } else {
            scopes.push(Vec::new());
        }
    }
    let reduced = match spec.reduction {
        Reduction::Fraction(f) => subsample(&splits.train, f, spec.seed_base),
        Reduction::Size(n) => subsample_to_size(&splits.train, n, spec.seed_base),
    }
    .map_err(|e| PipelineError::Config(format!("reduction: {e}")))?
    .with_role(SplitRole::Reduced);

    let out = &opts.out;
    create_run_dir(out)?;
    write_json(&out.join("augmentation_spec.json"), spec)?;
    write_csv(&reduced, &out.join("reduced_train.csv"), "label").at(Stage::Persist)?;
    if spec.write_adversaries {
        std::fs::create_dir_all(out.join("adversarial")).at(Stage::Persist)?;
    }
    let test_hash = test.content_hash();
    let all_scope: Vec<usize> = {
        let mut v: Vec<usize> = scopes.iter().flatten().copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let hists = build_histograms(&reduced, &all_scope, spec.bins).at(Stage::Histograms)?;
    std::fs::write(out.join("histograms.json"), hists.to_json()).at(Stage::Persist)?;

    let per_rep: Vec<Result<Vec<RunRecord>, PipelineError>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|r| repetition(r, spec, &model_cfg, &reduced, test, &hists, &scopes, opts))
        .collect();
    let mut records = Vec::with_capacity(spec.repetitions * spec.strategies.len());
    for r in per_rep {
        records.extend(r?);
    }
    records.sort_by_key(|r| (r.cell, r.run));

    let after = test.content_hash();
    if after != test_hash {
        return Err(PipelineError::TestSetAltered {
            before: test_hash,
            after,
        });
    }
    let cells = persist_results(out, &records, &[])?;
    let mut hashes = split_hashes(splits);
    hashes.insert("split:reduced".into(), reduced.content_hash());
    hashes.insert("split:test_after".into(), after);
    record_hashes(out, hashes, &["reduced_train.csv", "histograms.json", "aggregate.csv"])?;
    Ok(SweepResult {
        records,
        cells,
        run_dir: out.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn repetition(
    r: usize,
    spec: &AugmentationSpec,
    model_cfg: &ModelConfig,
    reduced: &Dataset<f64>,
    test: &Dataset<f64>,
    hists: &HistogramSet<f64>,
    scopes: &[Vec<usize>],
    opts: &RunOptions,
) -> Result<Vec<RunRecord>, PipelineError> {
    let seed = derive_seed(spec.seed_base, r as u64);
    let cfg = ModelConfig {
        init_seed: derive_seed(seed, 0),
        ..model_cfg.clone()
    };
    let no_validation = reduced.select(&[]);
    let mut starved = Classifier::new(cfg.clone()).at(Stage::Train)?;
    starved.train(reduced, &no_validation).at(Stage::Train)?;
    let (base_acc, base_auc) = evaluate_classifier(&starved, test)?;

    let mut records = Vec::with_capacity(spec.strategies.len());
    for (cell, strategy) in spec.strategies.iter().enumerate() {
        let mut record = RunRecord {
            cell,
            config: strategy.label(),
            n_vars: None,
            run: r,
            seed,
            report: MetricsReport {
                accuracy: base_acc,
                auroc: base_auc,
                ..MetricsReport::default()
            },
            reduced_size: Some(reduced.n_rows()),
            augmented_size: None,
            flipped: None,
        };
        let attack_seed = derive_seed(seed, 1 + cell as u64);
        let generated = match strategy {
            Strategy::None => None,
            Strategy::Rdsa(s) => {
                record.n_vars = Some(s.n_vars);
                Some(rdsa_adversaries(
                    reduced,
                    &starved,
                    hists,
                    s,
                    &scopes[cell],
                    attack_seed,
                    spec,
                    &strategy.label(),
                )?)
            }
            Strategy::Gradient(g) => Some(gradient_adversaries(reduced, &starved, g, spec, &strategy.label())?),
        };
        if let Some(g) = generated {
            if spec.write_adversaries {
                let path = opts
                    .out
                    .join("adversarial")
                    .join(format!("cell{cell:03}_run{r:03}.csv"));
                write_csv(&g.adversaries, &path, "label").at(Stage::Persist)?;
            }
            let augmented = reduced.concat(&g.adversaries).at(Stage::Augment)?;
            if augmented.n_rows() != 2 * reduced.n_rows() {
                return Err(PipelineError::AugmentedSizeMismatch {
                    expected: 2 * reduced.n_rows(),
                    found: augmented.n_rows(),
                });
            }
            // same initialization as the data-starved model
            let mut model = Classifier::new(cfg.clone()).at(Stage::Retrain)?;
            model.train(&augmented, &no_validation).at(Stage::Retrain)?;
            let (acc, auc) = evaluate_classifier(&model, test)?;
            record.report.accuracy = acc;
            record.report.auroc = auc;
            record.report.fooling_ratio = g.first_pass;
            record.augmented_size = Some(augmented.n_rows());
            record.flipped = Some(g.flipped);
        }
        records.push(record);
    }
    Ok(records)
}

fn dataset_from(rows: Vec<Vec<f64>>, like: &Dataset<f64>) -> Result<Dataset<f64>, PipelineError> {
    let f = like.n_features();
    let n = rows.len();
    let m = Matrix::from_vec(n, f, rows.into_iter().flatten().collect()).expect("rows of width F");
    Ok(
        Dataset::new(m, like.labels().to_vec(), like.meta().to_vec(), like.num_classes())
            .at(Stage::Augment)?
            .with_role(like.role()),
    )
}

#[allow(clippy::too_many_arguments)]
fn rdsa_adversaries(
    reduced: &Dataset<f64>,
    model: &Classifier<f64>,
    hists: &HistogramSet<f64>,
    s: &RdsaStrategy,
    scope: &[usize],
    seed: u64,
    spec: &AugmentationSpec,
    label: &str,
) -> Result<Generated, PipelineError> {
    let n = reduced.n_rows();
    let mut cfg = AttackConfig {
        n_vars: s.n_vars,
        max_attempts: s.max_attempts,
        shuffle_scope: Some(scope.to_vec()),
        seed,
        reselect_vars_per_attempt: s.reselect_vars_per_attempt,
    };
    let first = rdsa_attack_set(reduced, model, hists, &cfg).at(Stage::Attack)?;
    let first_pass = (!first.outcomes.is_empty()).then(|| first.success_count() as f64 / first.outcomes.len() as f64);
    let mut vectors: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut fallback: Vec<Option<Vec<f64>>> = vec![None; n];
    let mut failed = Vec::new();
    let mut absorb = |o: AttackOutcome<f64>, row: usize, failed: &mut Vec<usize>| {
        if o.succeeded {
            vectors[row] = o.adversary;
        } else {
            fallback[row] = o.last_candidate;
            failed.push(row);
        }
    };
    for o in first.outcomes {
        let row = o.row;
        absorb(o, row, &mut failed);
    }
    for round in 1..=spec.fill.retry_rounds {
        if failed.is_empty() {
            break;
        }
        let sub = reduced.select(&failed);
        cfg.seed = derive_seed(seed, round as u64);
        let retry = rdsa_attack_set(&sub, model, hists, &cfg).at(Stage::Attack)?;
        let mut still = Vec::new();
        for o in retry.outcomes {
            let row = failed[o.row];
            absorb(o, row, &mut still);
        }
        failed = still;
    }
    let flipped = vectors.iter().filter(|v| v.is_some()).count();
    if flipped < n && !spec.fill.include_unflipped {
        return Err(PipelineError::InsufficientAdversaries {
            strategy: label.to_string(),
            needed: n,
            produced: flipped,
        });
    }
    let mut rows = Vec::with_capacity(n);
    for (i, v) in vectors.into_iter().enumerate() {
        let v = match v.or_else(|| fallback[i].take()) {
            Some(v) => v,
            None => {
                // misclassified from the start: one resampling pass, no queries
                let mut r = rng::stream(derive_seed(derive_seed(seed, u64::MAX), i as u64));
                let mut x = reduced.row(i).to_vec();
                for j in select_shuffle_vars(scope, s.n_vars, &mut r).at(Stage::Augment)? {
                    x[j] = hists.get(j).expect("scope covered").sample(&mut r);
                }
                x
            }
        };
        rows.push(v);
    }
    Ok(Generated {
        adversaries: dataset_from(rows, reduced)?,
        flipped,
        first_pass,
    })
}

fn gradient_adversaries(
    reduced: &Dataset<f64>,
    model: &Classifier<f64>,
    g: &GradientAttackConfig,
    spec: &AugmentationSpec,
    label: &str,
) -> Result<Generated, PipelineError> {
    let n = reduced.n_rows();
    let set = gradient_attack_set(reduced, model, g).at(Stage::Attack)?;
    let first_pass = (!set.outcomes.is_empty()).then(|| set.success_count() as f64 / set.outcomes.len() as f64);
    let flipped = set.success_count();
    if flipped < n && !spec.fill.include_unflipped {
        return Err(PipelineError::InsufficientAdversaries {
            strategy: label.to_string(),
            needed: n,
            produced: flipped,
        });
    }
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; n];
    for o in &set.outcomes {
        rows[o.row] = Some(o.final_vector().to_vec());
    }
    for &i in &set.skipped {
        let o = gradient_attack_one(reduced.row(i), reduced.labels()[i], model, g).at(Stage::Attack)?;
        rows[i] = Some(o.final_vector().to_vec());
    }
    let rows = rows.into_iter().map(|r| r.expect("every row handled")).collect();
    Ok(Generated {
        adversaries: dataset_from(rows, reduced)?,
        flipped,
        first_pass,
    })
}
