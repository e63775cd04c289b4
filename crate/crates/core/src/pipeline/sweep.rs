use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::records::persist_results;
use super::{
    create_run_dir, evaluate_classifier, load_reused, record_hashes, split_hashes, write_json, At, CellAggregate,
    Experiment, PipelineError, RunOptions, RunRecord, Stage,
};
use crate::attack::{rdsa_attack_set, write_adversarial_csv, AttackConfig, AttackSet, DEFAULT_MAX_ATTEMPTS};
use crate::data::Dataset;
use crate::histogram::{build_histograms, DEFAULT_BINS};
use crate::matrix::Matrix;
use crate::metrics::{
    correlation_diff, correlation_matrix, mean_feature_change, per_feature_jsd, CorrelationMatrix, LogBase,
    MetricsReport, DEFAULT_JSD_BINS,
};
use crate::model::{save_checkpoint, Classifier, TrainingLog};
use crate::rng::derive_seed;

fn default_runs() -> usize {
    10
}

fn default_max_attempts() -> usize {
    DEFAULT_MAX_ATTEMPTS
}

fn default_bins() -> usize {
    DEFAULT_BINS
}

fn default_jsd_bins() -> usize {
    DEFAULT_JSD_BINS
}

fn yes() -> bool {
    true
}

/// Grid of shuffle widths, each attacked `runs` times over the full test
/// split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSweepSpec {
    pub n_vars: Vec<usize>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Defaults to the continuous features.
    #[serde(default)]
    pub shuffle_scope: Option<Vec<usize>>,
    #[serde(default)]
    pub reselect_vars_per_attempt: bool,
    /// Sampling histogram resolution.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Resolution of the histograms the JSD metric is evaluated on.
    #[serde(default = "default_jsd_bins")]
    pub jsd_bins: usize,
    #[serde(default)]
    pub log_base: LogBase,
    /// Defaults to a seed derived from the experiment seed.
    #[serde(default)]
    pub seed_base: Option<u64>,
    #[serde(default = "yes")]
    pub write_adversaries: bool,
}

impl AttackSweepSpec {
    pub fn new(n_vars: Vec<usize>, runs: usize) -> Self {
        Self {
            n_vars,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            runs,
            shuffle_scope: None,
            reselect_vars_per_attempt: false,
            bins: DEFAULT_BINS,
            jsd_bins: DEFAULT_JSD_BINS,
            log_base: LogBase::Natural,
            seed_base: None,
            write_adversaries: true,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.n_vars.is_empty() {
            return bad("n_vars grid is empty");
        }
        if self.n_vars.contains(&0) {
            return bad("n_vars values must be at least 1");
        }
        if self.runs == 0 {
            return bad("runs must be at least 1");
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1");
        }
        if self.bins == 0 || self.jsd_bins == 0 {
            return bad("bin counts must be at least 1");
        }
        Ok(())
    }

    /// Checks the grid against the resolved shuffle scope.
    pub fn validate_scope(&self, scope: &[usize], n_features: usize) -> Result<(), PipelineError> {
        if let Some(&f) = scope.iter().find(|&&f| f >= n_features) {
            return Err(PipelineError::Config(format!("shuffle scope feature {f} out of range")));
        }
        if let Some(&nv) = self.n_vars.iter().find(|&&nv| nv > scope.len()) {
            return Err(PipelineError::Config(format!(
                "n_vars {nv} exceeds the shuffle scope of {} features",
                scope.len()
            )));
        }
        Ok(())
    }

    fn attack_seed_base(&self, exp: &Experiment) -> u64 {
        self.seed_base.unwrap_or(derive_seed(exp.seed, 3))
    }
}

/// Per-run records and per-cell aggregates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
    pub cells: Vec<CellAggregate>,
    pub run_dir: PathBuf,
}

/// Preprocess, train (or reuse) the model, build histograms on the test
/// split, then attack the whole test split for every grid point and run.
/// Configuration problems are reported before anything is written.
pub fn run_attack_pipeline(
    exp: &Experiment,
    spec: &AttackSweepSpec,
    opts: &RunOptions,
) -> Result<SweepResult, PipelineError> {
    spec.validate()?;
    let model_cfg = exp.validate()?;
    let prepared = exp.prepare()?;
    let splits = &prepared.splits;
    let test = &splits.test;
    let scope = spec.shuffle_scope.clone().unwrap_or_else(|| test.continuous_indices());
    spec.validate_scope(&scope, test.n_features())?;
    let reused = match &opts.reuse_model {
        Some(p) => Some(load_reused(p, test.n_features())?),
        None => None,
    };

    let out = &opts.out;
    create_run_dir(out)?;
    write_json(&out.join("sweep_spec.json"), spec)?;
    let test_hash = test.content_hash();

    let (model, log) = match reused {
        Some(m) => (m, TrainingLog::default()),
        None => {
            let mut m = Classifier::new(model_cfg).at(Stage::Train)?;
            let log = m.train(&splits.train, &splits.validation).at(Stage::Train)?;
            (m, log)
        }
    };
    save_checkpoint(&model, &out.join("model.ckpt")).at(Stage::Persist)?;
    write_json(&out.join("training_log.json"), &log)?;

    let hists = build_histograms(test, &scope, spec.bins).at(Stage::Histograms)?;
    std::fs::write(out.join("histograms.json"), hists.to_json()).at(Stage::Persist)?;

    let (clean_accuracy, clean_auroc) = evaluate_classifier(&model, test)?;
    let clean_corr = correlation_matrix(test.features()).at(Stage::Metrics)?;
    let base = spec.attack_seed_base(exp);
    if spec.write_adversaries {
        std::fs::create_dir_all(out.join("adversarial")).at(Stage::Persist)?;
    }

    let mut records = Vec::new();
    for (cell, &nv) in spec.n_vars.iter().enumerate() {
        let cell_seed = derive_seed(base, cell as u64);
        for run in 0..spec.runs {
            let seed = derive_seed(cell_seed, run as u64);
            let cfg = AttackConfig {
                n_vars: nv,
                max_attempts: spec.max_attempts,
                shuffle_scope: Some(scope.clone()),
                seed,
                reselect_vars_per_attempt: spec.reselect_vars_per_attempt,
            };
            let set = rdsa_attack_set(test, &model, &hists, &cfg).at(Stage::Attack)?;
            if spec.write_adversaries {
                let path = out.join("adversarial").join(format!("cell{cell:03}_run{run:03}.csv"));
                write_adversarial_csv(&path, test.meta(), "label", &set.outcomes).at(Stage::Persist)?;
            }
            let mut report = attack_report(test, &set, &scope, &clean_corr, spec)?;
            report.accuracy = clean_accuracy;
            report.auroc = clean_auroc;
            records.push(RunRecord {
                cell,
                config: format!("n_vars={nv}"),
                n_vars: Some(nv),
                run,
                seed,
                report,
                reduced_size: None,
                augmented_size: None,
                flipped: None,
            });
        }
    }

    let after = test.content_hash();
    if after != test_hash {
        return Err(PipelineError::TestSetAltered {
            before: test_hash,
            after,
        });
    }
    let cells = persist_results(
        out,
        &records,
        &["fooling_ratio", "mean_feature_change", "mean_jsd", "correlation_diff"],
    )?;
    record_hashes(
        out,
        split_hashes(splits),
        &["model.ckpt", "histograms.json", "aggregate.csv"],
    )?;
    Ok(SweepResult {
        records,
        cells,
        run_dir: out.clone(),
    })
}

/// Attack metrics of one run. Feature change pairs each success with its
/// original; JSD and correlations compare the successful adversaries with
/// the full clean split.
pub(crate) fn attack_report(
    clean: &Dataset<f64>,
    set: &AttackSet<f64>,
    scope: &[usize],
    clean_corr: &CorrelationMatrix<f64>,
    spec: &AttackSweepSpec,
) -> Result<MetricsReport, PipelineError> {
    let f = clean.n_features();
    let attacked = set.outcomes.len();
    let wins: Vec<_> = set.succeeded().collect();
    let mut report = MetricsReport {
        attacked: Some(attacked),
        succeeded: Some(wins.len()),
        fooling_ratio: (attacked > 0).then(|| wins.len() as f64 / attacked as f64),
        ..MetricsReport::default()
    };
    if wins.is_empty() {
        return Ok(report);
    }
    let originals = Matrix::from_vec(
        wins.len(),
        f,
        wins.iter().flat_map(|o| o.original.iter().copied()).collect(),
    )
    .expect("rows of width F");
    let adv = Matrix::from_vec(
        wins.len(),
        f,
        wins.iter()
            .flat_map(|o| o.adversary.as_ref().expect("success").iter().copied())
            .collect(),
    )
    .expect("rows of width F");
    report.mean_feature_change = Some(mean_feature_change(&originals, &adv).at(Stage::Metrics)?);
    report.per_feature_jsd =
        per_feature_jsd(clean.features(), &adv, scope, spec.jsd_bins, spec.log_base).at(Stage::Metrics)?;
    report.mean_jsd = Some(report.per_feature_jsd.iter().sum::<f64>() / scope.len() as f64);
    if wins.len() >= 2 {
        let adv_corr = correlation_matrix(&adv).at(Stage::Metrics)?;
        report.correlation_diff = Some(correlation_diff(clean_corr, &adv_corr).at(Stage::Metrics)?);
        let scoped = adv_corr.restrict(scope);
        report.correlation_diff_scope =
            Some(correlation_diff(&clean_corr.restrict(scope), &scoped).at(Stage::Metrics)?);
        report.adversarial_mean_abs_correlation = Some(scoped.mean_abs_off_diagonal());
    }
    Ok(report)
}
