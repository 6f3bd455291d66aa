use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Cross-channel local response normalization constants.
///
/// `y[c] = x[c] / (k + alpha * sum_{c' in window(c)} x[c']^2)^beta`, with the
/// window `c - depth_radius ..= c + depth_radius` clipped to valid channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnAttrs {
    pub depth_radius: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnAttrs {
    /// The AlexNet constants.
    fn default() -> Self {
        LrnAttrs {
            depth_radius: 2,
            alpha: 1e-4,
            beta: 0.75,
            k: 2.0,
        }
    }
}

impl LrnAttrs {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.beta >= 0.0 && self.alpha >= 0.0) || !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::Config(format!(
                "LRN needs k > 0, alpha >= 0 and beta >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    fn window(&self, c: usize, channels: usize) -> std::ops::Range<usize> {
        c.saturating_sub(self.depth_radius)..(c + self.depth_radius + 1).min(channels)
    }

    /// Per-element denominator base `k + alpha * windowed sum of squares`.
    fn scales<S: Scalar>(&self, x: &Tensor<S>) -> Vec<S> {
        let s = x.shape();
        let plane = s.plane();
        let (k, alpha) = (S::from_f64_lossy(self.k), S::from_f64_lossy(self.alpha));
        let mut out = vec![S::zero(); x.len()];
        for n in 0..s.n {
            let sample = x.sample(n);
            for c in 0..s.c {
                let dst = &mut out[(n * s.c + c) * plane..(n * s.c + c + 1) * plane];
                for cc in self.window(c, s.c) {
                    for (d, &v) in dst.iter_mut().zip(&sample[cc * plane..(cc + 1) * plane]) {
                        *d += v * v;
                    }
                }
                for d in dst.iter_mut() {
                    *d = k + alpha * *d;
                }
            }
        }
        out
    }
}

pub fn lrn<S: Scalar>(x: &Tensor<S>, attrs: &LrnAttrs) -> Result<Tensor<S>> {
    attrs.validate()?;
    let beta = S::from_f64_lossy(attrs.beta);
    let scales = attrs.scales(x);
    let data = x.data().iter().zip(&scales).map(|(&v, &s)| v / s.powf(beta)).collect();
    Tensor::new(x.shape(), data)?.finite("lrn")
}

/// Gradient of [`lrn`] with respect to its input.
pub fn lrn_grad<S: Scalar>(x: &Tensor<S>, attrs: &LrnAttrs, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    attrs.validate()?;
    if x.shape() != grad_out.shape() {
        return Err(Error::shape("lrn_grad", x.shape(), grad_out.shape()));
    }
    let s = x.shape();
    let plane = s.plane();
    let beta = S::from_f64_lossy(attrs.beta);
    let two_alpha_beta = S::from_f64_lossy(2.0 * attrs.alpha * attrs.beta);
    let scales = attrs.scales(x);
    // t[c] = g[c] * x[c] * s[c]^(-beta - 1)
    let t: Vec<S> = grad_out
        .data()
        .iter()
        .zip(x.data())
        .zip(&scales)
        .map(|((&g, &v), &sc)| g * v * sc.powf(-beta - S::one()))
        .collect();
    let mut out = Tensor::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * plane;
            let mut acc = vec![S::zero(); plane];
            // The window relation is symmetric, so c' ranges over window(c).
            for cc in attrs.window(c, s.c) {
                let tb = (n * s.c + cc) * plane;
                for (a, &tv) in acc.iter_mut().zip(&t[tb..tb + plane]) {
                    *a += tv;
                }
            }
            let dst = &mut out.data_mut()[base..base + plane];
            for p in 0..plane {
                let (g, v, sc) = (grad_out.data()[base + p], x.data()[base + p], scales[base + p]);
                dst[p] = g * sc.powf(-beta) - two_alpha_beta * v * acc[p];
            }
        }
    }
    out.finite("lrn_grad")
}
