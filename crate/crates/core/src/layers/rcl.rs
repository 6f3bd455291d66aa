//! Recurrent convolution layer.
//!
//! The feedforward input is re-applied at every step while the previous
//! step's activation is fed back through a second kernel:
//!
//! ```text
//! z(0) = relu(conv(x, w_f) + b)
//! z(t) = relu(conv(x, w_f) + conv(z(t-1), w_r) + b),  t = 1..=T
//! ```
//!
//! The layer owns exactly `w_f`, `w_r` and `b` whatever the value of `T`.

use crate::error::{Error, Result};
use crate::tensor::{add, conv2d, conv2d_grad, relu, relu_grad, ConvSpec, Padding, Scalar, Tensor};

/// Everything the backward pass needs from one forward call.
#[derive(Debug, Clone)]
pub struct RclCache<S> {
    x: Tensor<S>,
    /// Activations `z(0) ..= z(T)`.
    z: Vec<Tensor<S>>,
    w_shapes: (crate::Shape, crate::Shape),
}

impl<S: Scalar> RclCache<S> {
    pub fn steps(&self) -> usize {
        self.z.len() - 1
    }

    /// Activations after each step, `z(0)` first.
    pub fn states(&self) -> &[Tensor<S>] {
        &self.z
    }
}

#[derive(Debug, Clone)]
pub struct RclGrads<S> {
    pub grad_x: Tensor<S>,
    pub grad_w_f: Tensor<S>,
    pub grad_w_r: Tensor<S>,
    pub grad_b: Vec<S>,
}

pub(crate) fn check_spec(spec: &ConvSpec) -> Result<()> {
    if spec.stride != (1, 1) || spec.padding != Padding::Same {
        return Err(Error::Config(format!(
            "recurrent convolution must keep spatial dims (stride 1, same padding), got {spec:?}"
        )));
    }
    Ok(())
}

/// Unrolls the layer for `steps` recurrent applications and returns `z(T)`.
pub fn rcl_forward<S: Scalar>(
    x: &Tensor<S>,
    w_f: &Tensor<S>,
    w_r: &Tensor<S>,
    b: &[S],
    steps: usize,
    spec: &ConvSpec,
) -> Result<(Tensor<S>, RclCache<S>)> {
    check_spec(spec)?;
    let recurrent_spec = *spec;
    let expected_wr = recurrent_spec.weight_shape(spec.out_channels);
    if w_r.shape() != expected_wr {
        return Err(Error::shape("rcl_forward recurrent kernel", expected_wr, w_r.shape()));
    }
    let feedforward = conv2d(x, w_f, Some(b), spec)?;
    let mut z = Vec::with_capacity(steps + 1);
    z.push(relu(&feedforward));
    for _ in 0..steps {
        let recurrent = conv2d(z.last().unwrap(), w_r, None, &recurrent_spec)?;
        z.push(relu(&add(&feedforward, &recurrent)?));
    }
    let out = z.last().unwrap().clone();
    Ok((
        out,
        RclCache {
            x: x.clone(),
            z,
            w_shapes: (w_f.shape(), w_r.shape()),
        },
    ))
}

/// Backpropagation through the unrolled recursion. `w_f` and `b` collect
/// `T + 1` contributions, `w_r` collects `T`.
pub fn rcl_backward<S: Scalar>(
    cache: &RclCache<S>,
    w_f: &Tensor<S>,
    w_r: &Tensor<S>,
    spec: &ConvSpec,
    grad_out: &Tensor<S>,
) -> Result<RclGrads<S>> {
    let out_shape = cache.z.last().map(|z| z.shape());
    if out_shape != Some(grad_out.shape()) || cache.w_shapes != (w_f.shape(), w_r.shape()) {
        return Err(Error::Internal(format!(
            "stale RCL cache: cached output {out_shape:?} / kernels {:?}, got gradient {} / kernels ({}, {})",
            cache.w_shapes,
            grad_out.shape(),
            w_f.shape(),
            w_r.shape()
        )));
    }
    let mut grad_w_r = Tensor::zeros(w_r.shape());
    let mut grad_feedforward = Tensor::zeros(grad_out.shape());
    let mut upstream = grad_out.clone();
    for t in (0..cache.z.len()).rev() {
        // z(t) > 0 exactly where its pre-activation was positive.
        let grad_pre = relu_grad(&cache.z[t], &upstream)?;
        grad_feedforward = add(&grad_feedforward, &grad_pre)?;
        if t > 0 {
            let g = conv2d_grad(&cache.z[t - 1], w_r, spec, &grad_pre)?;
            grad_w_r = add(&grad_w_r, &g.grad_w)?;
            upstream = g.grad_x;
        }
    }
    let g = conv2d_grad(&cache.x, w_f, spec, &grad_feedforward)?;
    Ok(RclGrads {
        grad_x: g.grad_x,
        grad_w_f: g.grad_w,
        grad_w_r,
        grad_b: g.grad_b,
    })
}
