use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Passes `grad_out` where the forward input was strictly positive.
pub fn relu_grad<S: Scalar>(x: &Tensor<S>, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape("relu_grad", x.shape(), grad_out.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::new(x.shape(), data)
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)?.finite("add")
}

/// Per-(n, c) spatial mean, producing an `(n, c, 1, 1)` tensor.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let s = x.shape();
    if s.plane() == 0 {
        return Err(Error::Config(format!("global_avg_pool needs a non-empty plane, got {s}")));
    }
    let count = S::from_usize(s.plane()).unwrap();
    let data = x.data().chunks(s.plane()).map(|p| p.iter().copied().sum::<S>() / count).collect();
    Tensor::new(Shape::new(s.n, s.c, 1, 1), data)?.finite("global_avg_pool")
}

pub fn global_avg_pool_grad<S: Scalar>(input: Shape, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let expected = Shape::new(input.n, input.c, 1, 1);
    if grad_out.shape() != expected {
        return Err(Error::shape("global_avg_pool_grad", expected, grad_out.shape()));
    }
    let count = S::from_usize(input.plane()).unwrap();
    let mut data = Vec::with_capacity(input.len());
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g / count, input.plane()));
    }
    Tensor::new(input, data)
}

/// Concatenates along the channel axis, preserving part order.
pub fn concat_channels<S: Scalar>(parts: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Config("concat_channels needs at least one part".into()))?
        .shape();
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape("concat_channels", first, s));
        }
    }
    let channels: usize = parts.iter().map(|p| p.shape().c).sum();
    let shape = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(shape.len());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.sample(n));
        }
    }
    Tensor::new(shape, data)
}

/// Inverse of [`concat_channels`]: slices `x` into parts of the given
/// channel counts. This is also the gradient of the concatenation.
pub fn split_channels<S: Scalar>(x: &Tensor<S>, channels: &[usize]) -> Result<Vec<Tensor<S>>> {
    let s = x.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape("split_channels", s.c, channels));
    }
    let mut parts: Vec<Vec<S>> = channels.iter().map(|&c| Vec::with_capacity(s.n * c * s.plane())).collect();
    for n in 0..s.n {
        let mut offset = 0;
        let sample = x.sample(n);
        for (part, &c) in parts.iter_mut().zip(channels) {
            let len = c * s.plane();
            part.extend_from_slice(&sample[offset..offset + len]);
            offset += len;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(data, &c)| Tensor::new(Shape::new(s.n, c, s.h, s.w), data))
        .collect()
}

/// Mirrors every plane left to right.
pub fn flip_horizontal<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let w = x.shape().w;
    let mut out = x.clone();
    if w > 0 {
        for row in out.data_mut().chunks_mut(w) {
            row.reverse();
        }
    }
    out
}
