//! End-to-end workflows: the attack-evaluation sweep and the
//! augmentation/retraining experiment, with their run-directory artifacts.
//!
//! Pipelines work on `f64` data.

mod augment;
mod records;
mod sweep;

pub use augment::{run_augmentation_pipeline, AugmentationSpec, FillPolicy, RdsaStrategy, Reduction, Strategy};
pub use records::{
    aggregate_records, generate_report, read_records, write_aggregate_csv, CellAggregate, MetricAggregate, ReportFiles,
    RunRecord, METRICS,
};
pub use sweep::{run_attack_pipeline, AttackSweepSpec, SweepResult};

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::attack::AttackError;
use crate::data::{
    detect_continuous, infer_schema, load_csv, write_csv, DataError, Dataset, SplitBundle, SyntheticSpec, ZScoreStats,
    DEFAULT_CONTINUITY_THRESHOLD,
};
use crate::histogram::HistogramError;
use crate::metrics::{accuracy, auroc_macro, MetricsError};
use crate::model::{save_checkpoint, Architecture, Classifier, ModelConfig, ModelError, TrainingLog};
use crate::rng::derive_seed;

/// Stage names used to tag pipeline failures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Load,
    Preprocess,
    Train,
    Histograms,
    Attack,
    Metrics,
    Augment,
    Retrain,
    Persist,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Train => "train",
            Stage::Histograms => "histograms",
            Stage::Attack => "attack",
            Stage::Metrics => "metrics",
            Stage::Augment => "augment",
            Stage::Retrain => "retrain",
            Stage::Persist => "persist",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Data {
        stage: Stage,
        #[source]
        source: DataError,
    },
    #[error("{stage}: {source}")]
    Model {
        stage: Stage,
        #[source]
        source: ModelError,
    },
    #[error("{stage}: {source}")]
    Histogram {
        stage: Stage,
        #[source]
        source: HistogramError,
    },
    #[error("{stage}: {source}")]
    Attack {
        stage: Stage,
        #[source]
        source: AttackError,
    },
    #[error("{stage}: {source}")]
    Metrics {
        stage: Stage,
        #[source]
        source: MetricsError,
    },
    #[error("{stage}: {source}")]
    Io {
        stage: Stage,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Json {
        stage: Stage,
        #[source]
        source: serde_json::Error,
    },
    #[error("checkpoint {0} does not exist")]
    MissingCheckpoint(PathBuf),
    #[error("strategy {strategy}: {produced} of {needed} adversaries produced")]
    InsufficientAdversaries {
        strategy: String,
        needed: usize,
        produced: usize,
    },
    #[error("augmented set has {found} rows, expected {expected}")]
    AugmentedSizeMismatch { expected: usize, found: usize },
    #[error("test split changed during the run ({before} -> {after})")]
    TestSetAltered { before: String, after: String },
    #[error("no run artifacts in {0}")]
    MissingRunArtifacts(PathBuf),
}

pub(crate) trait Tag {
    fn tag(self, stage: Stage) -> PipelineError;
}

macro_rules! tag_impl {
    ($t:ty, $v:ident) => {
        impl Tag for $t {
            fn tag(self, stage: Stage) -> PipelineError {
                PipelineError::$v { stage, source: self }
            }
        }
    };
}

tag_impl!(DataError, Data);
tag_impl!(ModelError, Model);
tag_impl!(HistogramError, Histogram);
tag_impl!(AttackError, Attack);
tag_impl!(MetricsError, Metrics);
tag_impl!(std::io::Error, Io);
tag_impl!(serde_json::Error, Json);

pub(crate) trait At<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Tag> At<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| e.tag(stage))
    }
}

fn default_label_column() -> String {
    "label".into()
}

fn default_train_fraction() -> f64 {
    0.6
}

fn default_validation_fraction() -> f64 {
    0.1
}

/// CSV input: either one file split at random, or explicit train,
/// validation and test files sharing the train file's header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    #[serde(default)]
    pub validation: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default = "default_label_column")]
    pub label_column: String,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(CsvSource),
}

impl DataSource {
    pub fn validate(&self) -> Result<(), PipelineError> {
        match self {
            DataSource::Synthetic(s) => s.validate().map_err(|e| PipelineError::Config(e.to_string())),
            DataSource::Csv(c) => {
                if c.validation.is_some() != c.test.is_some() {
                    return Err(PipelineError::Config(
                        "csv source needs both validation and test files, or neither".into(),
                    ));
                }
                let f = |v: f64| (0.0..1.0).contains(&v);
                if !f(c.train_fraction) || !f(c.validation_fraction) || c.train_fraction + c.validation_fraction >= 1.0
                {
                    return Err(PipelineError::Config(
                        "split fractions must leave a non-empty test split".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Feature count, read from the generator spec or the CSV header.
    pub fn feature_count(&self) -> Result<usize, PipelineError> {
        match self {
            DataSource::Synthetic(s) => Ok(s.features),
            DataSource::Csv(c) => Ok(infer_schema(&c.train, &c.label_column).at(Stage::Load)?.len()),
        }
    }

    pub fn label_column(&self) -> &str {
        match self {
            DataSource::Synthetic(_) => "label",
            DataSource::Csv(c) => &c.label_column,
        }
    }

    pub fn load(&self, seed: u64) -> Result<SplitBundle<f64>, PipelineError> {
        match self {
            DataSource::Synthetic(s) => s.generate(derive_seed(seed, 1)).at(Stage::Load),
            DataSource::Csv(c) => {
                let schema = infer_schema(&c.train, &c.label_column).at(Stage::Load)?;
                let train = load_csv(&c.train, &schema, &c.label_column).at(Stage::Load)?;
                match (&c.validation, &c.test) {
                    (Some(v), Some(t)) => {
                        let v = load_csv(v, &schema, &c.label_column).at(Stage::Load)?;
                        let t = load_csv(t, &schema, &c.label_column).at(Stage::Load)?;
                        SplitBundle::new(train, v, t).at(Stage::Load)
                    }
                    _ => SplitBundle::random(&train, c.train_fraction, c.validation_fraction, derive_seed(seed, 1))
                        .at(Stage::Load),
                }
            }
        }
    }
}

fn default_threshold() -> usize {
    DEFAULT_CONTINUITY_THRESHOLD
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSpec {
    /// Minimum distinct training values for a feature to count as continuous.
    #[serde(default = "default_threshold")]
    pub continuity_threshold: usize,
    /// Z-score continuous features with training statistics.
    #[serde(default = "yes")]
    pub normalize: bool,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        Self {
            continuity_threshold: DEFAULT_CONTINUITY_THRESHOLD,
            normalize: true,
        }
    }
}

/// A reference architecture with optional overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSpec {
    pub name: Architecture,
    /// Replaces the preset's input width, keeping the hidden layers.
    #[serde(default)]
    pub input_dim: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub init_seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Preset(PresetSpec),
    Custom(ModelConfig),
}

impl ModelSpec {
    pub fn resolve(&self, master_seed: u64, n_features: usize) -> Result<ModelConfig, PipelineError> {
        let cfg = match self {
            ModelSpec::Preset(p) => {
                let mut c = p.name.config(p.init_seed.unwrap_or(derive_seed(master_seed, 2)));
                if let Some(d) = p.input_dim {
                    c.input_dim = d;
                }
                if let Some(e) = p.epochs {
                    c.epochs = e;
                }
                if let Some(l) = p.learning_rate {
                    c.learning_rate = l;
                }
                if let Some(b) = p.batch_size {
                    c.batch_size = b;
                }
                c
            }
            ModelSpec::Custom(c) => c.clone(),
        };
        cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if cfg.input_dim != n_features {
            return Err(PipelineError::Config(format!(
                "model expects {} inputs but the data has {n_features} features",
                cfg.input_dim
            )));
        }
        Ok(cfg)
    }
}

/// Data, preprocessing and model shared by every workflow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub data: DataSource,
    #[serde(default)]
    pub preprocess: PreprocessSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub seed: u64,
}

/// Splits after continuity detection and normalization.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: SplitBundle<f64>,
    pub zscore: Option<ZScoreStats<f64>>,
}

impl Experiment {
    /// Replaces every seed with one derived from `seed`.
    pub fn with_master_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let DataSource::Synthetic(s) = &mut self.data {
            s.seed = None;
        }
        match &mut self.model {
            ModelSpec::Preset(p) => p.init_seed = None,
            ModelSpec::Custom(c) => c.init_seed = derive_seed(seed, 2),
        }
        self
    }

    /// Checks the configuration without loading data rows. Returns the
    /// resolved model configuration.
    pub fn validate(&self) -> Result<ModelConfig, PipelineError> {
        self.data.validate()?;
        let nf = self.data.feature_count()?;
        self.model.resolve(self.seed, nf)
    }

    pub fn prepare(&self) -> Result<Prepared, PipelineError> {
        let splits = self.data.load(self.seed)?;
        let meta = detect_continuous(&splits.train, self.preprocess.continuity_threshold);
        let with = |d: &Dataset<f64>| d.clone().with_meta(meta.clone());
        let splits = SplitBundle::new(
            with(&splits.train).at(Stage::Preprocess)?,
            with(&splits.validation).at(Stage::Preprocess)?,
            with(&splits.test).at(Stage::Preprocess)?,
        )
        .at(Stage::Preprocess)?;
        if !self.preprocess.normalize {
            return Ok(Prepared { splits, zscore: None });
        }
        let stats = ZScoreStats::fit(&splits.train).at(Stage::Preprocess)?;
        let splits = splits.map(|d| stats.apply(d));
        Ok(Prepared {
            splits,
            zscore: Some(stats),
        })
    }
}

/// Where a run writes and which trained model it may reuse.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub out: PathBuf,
    pub reuse_model: Option<PathBuf>,
}

pub(crate) fn load_reused(path: &Path, input_dim: usize) -> Result<Classifier<f64>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::MissingCheckpoint(path.to_path_buf()));
    }
    let m: Classifier<f64> = crate::model::load_checkpoint(path).at(Stage::Load)?;
    if m.input_dim() != input_dim {
        return Err(PipelineError::Config(format!(
            "checkpoint expects {} inputs but the data has {input_dim} features",
            m.input_dim()
        )));
    }
    Ok(m)
}

pub(crate) fn create_run_dir(out: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out).at(Stage::Persist)
}

pub(crate) fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).at(Stage::Persist)?;
    text.push('\n');
    fs::write(path, text).at(Stage::Persist)
}

pub fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

pub(crate) fn record_hashes(
    out: &Path,
    mut hashes: BTreeMap<String, String>,
    files: &[&str],
) -> Result<(), PipelineError> {
    for f in files {
        let p = out.join(f);
        if p.exists() {
            hashes.insert((*f).to_string(), sha256_file(&p).at(Stage::Persist)?);
        }
    }
    write_json(&out.join("hashes.json"), &hashes)
}

/// Accuracy and AUROC on `d`.
pub fn evaluate_classifier(model: &Classifier<f64>, d: &Dataset<f64>) -> Result<(f64, f64), PipelineError> {
    let proba = model.predict_proba_batch(d.features()).at(Stage::Metrics)?;
    let pred = model.predict_batch(d.features()).at(Stage::Metrics)?;
    let acc = accuracy(&pred, d.labels()).at(Stage::Metrics)?;
    let auc = auroc_macro(&proba, d.labels()).at(Stage::Metrics)?;
    Ok((acc, auc))
}

/// Output of [`run_training`].
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub checkpoint: PathBuf,
    pub log: TrainingLog,
    pub accuracy: f64,
    pub auroc: f64,
}

/// Loads and preprocesses the data, trains the model on the training split
/// (validation split for monitoring) and persists checkpoint and log.
pub fn run_training(exp: &Experiment, out: &Path) -> Result<TrainedRun, PipelineError> {
    let cfg = exp.validate()?;
    let prepared = exp.prepare()?;
    let mut model = Classifier::new(cfg).at(Stage::Train)?;
    let log = model
        .train(&prepared.splits.train, &prepared.splits.validation)
        .at(Stage::Train)?;
    let (accuracy, auroc) = evaluate_classifier(&model, &prepared.splits.test)?;
    create_run_dir(out)?;
    let checkpoint = out.join("model.ckpt");
    save_checkpoint(&model, &checkpoint).at(Stage::Persist)?;
    write_json(&out.join("training_log.json"), &log)?;
    write_json(
        &out.join("evaluation.json"),
        &BTreeMap::from([("test_accuracy", accuracy), ("test_auroc", auroc)]),
    )?;
    record_hashes(
        out,
        split_hashes(&prepared.splits),
        &["model.ckpt", "training_log.json"],
    )?;
    Ok(TrainedRun {
        checkpoint,
        log,
        accuracy,
        auroc,
    })
}

pub(crate) fn split_hashes(s: &SplitBundle<f64>) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("split:train".to_string(), s.train.content_hash()),
        ("split:validation".to_string(), s.validation.content_hash()),
        ("split:test".to_string(), s.test.content_hash()),
    ])
}

/// Generates a synthetic dataset and writes its splits as
/// `train.csv`, `validation.csv` and `test.csv` under `out`.
pub fn write_synthetic(spec: &SyntheticSpec, seed: u64, out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let splits: SplitBundle<f64> = spec.generate(derive_seed(seed, 1)).at(Stage::Load)?;
    create_run_dir(out)?;
    let mut paths = Vec::new();
    for (name, d) in [
        ("train", &splits.train),
        ("validation", &splits.validation),
        ("test", &splits.test),
    ] {
        let p = out.join(format!("{name}.csv"));
        write_csv(d, &p, "label").at(Stage::Persist)?;
        paths.push(p);
    }
    write_json(&out.join("synthetic_spec.json"), spec)?;
    Ok(paths)
}
