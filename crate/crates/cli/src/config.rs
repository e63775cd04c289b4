//! Run configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use rdsa_core::data::SyntheticSpec;
use rdsa_core::pipeline::{AttackSweepSpec, AugmentationSpec, DataSource, Experiment, ModelSpec, PreprocessSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// One experiment: data, preprocessing, model, and the workflows to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSource,
    #[serde(default)]
    pub preprocess: PreprocessSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub attack: Option<AttackSweepSpec>,
    #[serde(default)]
    pub augmentation: Option<AugmentationSpec>,
    /// Run directory, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv(c) = &mut cfg.data {
            rebase(&mut c.train);
            c.validation.as_mut().map(rebase);
            c.test.as_mut().map(rebase);
        }
        cfg.output.as_mut().map(rebase);
        Ok(cfg)
    }

    /// Applies a global seed: every stage seed is re-derived from it.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        let Some(seed) = seed else { return self };
        self.seed = seed;
        let exp = self.experiment().with_master_seed(seed);
        self.data = exp.data;
        self.model = exp.model;
        if let Some(a) = &mut self.attack {
            a.seed_base = None;
        }
        if let Some(a) = &mut self.augmentation {
            a.seed_base = seed;
        }
        self
    }

    pub fn experiment(&self) -> Experiment {
        Experiment {
            data: self.data.clone(),
            preprocess: self.preprocess.clone(),
            model: self.model.clone(),
            seed: self.seed,
        }
    }

    pub fn synthetic(&self) -> Result<&SyntheticSpec, ConfigError> {
        match &self.data {
            DataSource::Synthetic(s) => Ok(s),
            DataSource::Csv(_) => Err(ConfigError::Invalid("synth needs a synthetic data source".into())),
        }
    }

    /// `--out` wins over the config's `output`.
    pub fn run_dir(&self, out: Option<&Path>) -> Result<PathBuf, ConfigError> {
        out.map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .ok_or_else(|| ConfigError::Invalid("no output directory: pass --out or set \"output\"".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "data": {"synthetic": {"rows": 100, "features": 3, "correlation": "identity", "class_shift": [1.0]}},
        "model": {"preset": {"name": "vbf", "input_dim": 3}}
    }"#;

    #[test]
    fn minimal_config_parses() {
        let c: RunConfig = serde_json::from_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 0);
        assert!(c.attack.is_none());
        assert!(c.experiment().validate().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replacen("\"model\"", "\"modle\": 1, \"model\"", 1);
        assert!(serde_json::from_str::<RunConfig>(&bad).is_err());
    }

    #[test]
    fn global_seed_overrides_stage_seeds() {
        let mut c: RunConfig = serde_json::from_str(MINIMAL).unwrap();
        if let DataSource::Synthetic(s) = &mut c.data {
            s.seed = Some(5);
        }
        let c = c.with_seed(Some(9));
        assert_eq!(c.seed, 9);
        assert!(matches!(&c.data, DataSource::Synthetic(s) if s.seed.is_none()));
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(
            &path,
            r#"{"data": {"csv": {"train": "data/t.csv"}}, "model": {"preset": {"name": "vbf"}}, "output": "out"}"#,
        )
        .unwrap();
        let c = RunConfig::load(&path).unwrap();
        match &c.data {
            DataSource::Csv(s) => assert_eq!(s.train, dir.path().join("data/t.csv")),
            _ => unreachable!(),
        }
        assert_eq!(c.run_dir(None).unwrap(), dir.path().join("out"));
        assert_eq!(c.run_dir(Some(Path::new("x"))).unwrap(), PathBuf::from("x"));
    }
}
