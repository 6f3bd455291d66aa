//! Initialization, optimizers and weight regularization.

mod init;
mod optim;

pub use init::{init_baseline, lsuv_init, LsuvConfig, LsuvLayer, LsuvReport, LSUV_MIN_PROBE};
pub use optim::{
    apply_l2, AdamConfig, EveConfig, Optimizer, OptimizerConfig, OptimizerState, SgdConfig, StepInfo,
};
