//! Layer-level math and the static layer graph.

mod dropout;
mod graph;
mod lrn;
mod rcl;
mod softmax;

pub use dropout::{dropout, dropout_grad, MaskRng, Mode, RngState};
pub use graph::{
    Gradients, GraphBuilder, InputShape, LayerGraph, LayerKind, LayerNode, Param, ParamRole, StepOutput,
};
pub use lrn::{lrn, lrn_grad, LrnAttrs};
pub use rcl::{rcl_backward, rcl_forward, RclCache, RclGrads};
pub use softmax::{argmax, softmax, softmax_xent, SoftmaxXent};
