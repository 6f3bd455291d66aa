//! Experiment plumbing: run configs, metrics files, checkpoints and the
//! train / eval / gradcheck / params commands.

mod checkpoint;
mod config;
mod gradcheck;
mod metrics;
mod params;
mod run;

use std::path::Path;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use config::{DataConfig, InitConfig, ModelRef, RunConfig};
pub use gradcheck::{cmd_gradcheck, GradcheckOptions, GradcheckReport, TensorCheck, GRADCHECK_MAX_PARAMS};
pub use metrics::{read_metrics, MetricsRow, MetricsWriter, METRICS_HEADER};
pub use params::{cmd_params, ParamsReport};
pub use run::{
    cmd_eval, cmd_train, evaluate, linear_baseline, load_train_val, EvalReport, EvalSplit, EvalStats, Failure,
    TrainOptions, TrainSummary, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE,
};

use crate::error::{Error, Result};
use crate::models::ModelConfig;

/// Reads a model config, or the model inside a run config.
pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if value.get("stages").is_some() {
        ModelConfig::load(path)
    } else {
        Ok(RunConfig::load(path)?.model().clone())
    }
}
