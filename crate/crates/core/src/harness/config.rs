use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, DatasetKind, ValSource};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, Variant};
use crate::train::{LsuvConfig, OptimizerConfig};

/// A model given by file path or written inline. Loading a run config
/// always resolves it to `Inline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Inline(Box<ModelConfig>),
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub name: DatasetKind,
    /// Directory holding the dataset folders; overridden by --data-dir.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Keep only the first N training samples (before any holdout split).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_subset: Option<usize>,
    /// Keep only the first N test samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_subset: Option<usize>,
    #[serde(default)]
    pub val: ValSource,
    #[serde(default = "no_flip")]
    pub augment: AugmentConfig,
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Sample counts for generated data (`name = "synthetic"`).
    #[serde(default = "synthetic_counts")]
    pub synthetic: [usize; 2],
}

fn no_flip() -> AugmentConfig {
    AugmentConfig { horizontal_flip: false }
}

fn yes() -> bool {
    true
}

fn synthetic_counts() -> [usize; 2] {
    [512, 128]
}

fn default_l2() -> f64 {
    0.002
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum InitConfig {
    #[default]
    Baseline,
    Lsuv {
        #[serde(default = "default_probe")]
        probe: usize,
        #[serde(default, flatten)]
        lsuv: LsuvConfig,
    },
}

fn default_probe() -> usize {
    128
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelRef,
    /// Overrides the model config's variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub dataset: DataConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub init: InitConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Required: runs are never seeded from the clock.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// L2 coefficient for IRCNN-block kernels.
    #[serde(default = "default_l2")]
    pub l2: f64,
    /// Write per-epoch wall time to metrics.csv. Off makes the file a pure
    /// function of the config.
    #[serde(default = "yes")]
    pub record_epoch_time: bool,
}

impl RunConfig {
    /// Reads a run config. The model file and dataset directory, when
    /// relative, are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let ModelRef::Path(p) = &cfg.model {
            let p = base.join(p);
            cfg.model = ModelRef::Inline(Box::new(ModelConfig::load(&p)?));
        }
        if let Some(dir) = &cfg.dataset.dir {
            cfg.dataset.dir = Some(base.join(dir));
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run config serializes")
    }

    /// Folds the variant override into the model and validates everything.
    fn resolve(&mut self) -> Result<()> {
        let ModelRef::Inline(model) = &mut self.model else {
            return Err(Error::Config("model path must be resolved relative to a config file".into()));
        };
        if let Some(v) = self.variant.take() {
            model.variant = v;
        }
        self.validate()
    }

    pub fn set_variant(&mut self, v: Variant) {
        if let ModelRef::Inline(m) = &mut self.model {
            m.variant = v;
        }
    }

    pub fn model(&self) -> &ModelConfig {
        match &self.model {
            ModelRef::Inline(m) => m,
            ModelRef::Path(_) => unreachable!("run configs are resolved on load"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.optimizer.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!("l2 must be non-negative, got {}", self.l2)));
        }
        if let ValSource::Holdout { fraction } = self.dataset.val {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Config(format!("holdout fraction must lie in (0, 1), got {fraction}")));
            }
        }
        if let InitConfig::Lsuv { probe, .. } = self.init {
            if probe < crate::train::LSUV_MIN_PROBE {
                return Err(Error::Config(format!("LSUV probe must hold at least {} samples", crate::train::LSUV_MIN_PROBE)));
            }
        }
        Ok(())
    }

    /// True when two configs describe the same run up to its length and
    /// output location (what a resume may change).
    pub fn same_run(&self, other: &RunConfig) -> bool {
        let strip = |c: &RunConfig| RunConfig {
            epochs: 0,
            out_dir: PathBuf::new(),
            dataset: DataConfig { dir: None, ..c.dataset.clone() },
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RUN: &str = r#"{
        "model": "model.json",
        "variant": "ein",
        "dataset": {"name": "mnist", "train_subset": 5000},
        "optimizer": {"name": "sgd"},
        "epochs": 5,
        "batch_size": 128,
        "seed": 7,
        "out_dir": "runs/x"
    }"#;

    #[test]
    fn loads_model_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("model.json"), ModelConfig::tiny().to_json()).unwrap();
        std::fs::write(dir.path().join("run.json"), RUN).unwrap();
        let cfg = RunConfig::load(&dir.path().join("run.json")).unwrap();
        assert_eq!(cfg.model().variant, Variant::Ein);
        assert_eq!(cfg.model().preset, "tiny");
        assert_eq!(cfg.dataset.val, ValSource::Holdout { fraction: 0.1 });
        assert_eq!(cfg.l2, 0.002);
        assert!(!cfg.dataset.augment.horizontal_flip);
        // The resolved config serializes self-contained.
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn seed_is_mandatory_and_unknown_fields_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("model.json"), ModelConfig::tiny().to_json()).unwrap();
        std::fs::write(dir.path().join("a.json"), RUN.replace("\"seed\": 7,", "")).unwrap();
        let err = RunConfig::load(&dir.path().join("a.json")).unwrap_err();
        assert_eq!(err.category(), "config");
        assert!(err.to_string().contains("seed"), "{err}");
        std::fs::write(dir.path().join("b.json"), RUN.replace("\"seed\": 7,", "\"seed\": 7, \"sed\": 1,")).unwrap();
        assert_eq!(RunConfig::load(&dir.path().join("b.json")).unwrap_err().category(), "config");
        std::fs::write(dir.path().join("c.json"), RUN.replace("model.json", "nope.json")).unwrap();
        assert_eq!(RunConfig::load(&dir.path().join("c.json")).unwrap_err().category(), "io");
    }

    #[test]
    fn resume_may_change_epochs_only() {
        let mut a = RunConfig::from_json(&RUN.replace("\"model.json\"", &ModelConfig::tiny().to_json())).unwrap();
        let mut b = a.clone();
        b.epochs = 9;
        b.out_dir = "elsewhere".into();
        assert!(a.same_run(&b));
        a.seed = 8;
        assert!(!a.same_run(&b));
    }

    #[test]
    fn lsuv_init_parses_with_defaults() {
        let init: InitConfig = serde_json::from_str(r#"{"name":"lsuv"}"#).unwrap();
        assert_eq!(init, InitConfig::Lsuv { probe: 128, lsuv: LsuvConfig::default() });
        let init: InitConfig = serde_json::from_str(r#"{"name":"lsuv","probe":64,"tol_var":0.05}"#).unwrap();
        assert_eq!(init, InitConfig::Lsuv { probe: 64, lsuv: LsuvConfig { tol_var: 0.05, max_iters: 10 } });
    }
}
