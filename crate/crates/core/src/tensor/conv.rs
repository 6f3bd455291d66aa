use serde::{Deserialize, Serialize};

use super::{matmul, Mat, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output is `ceil(input / stride)`; an odd total pad puts the extra
    /// row/column at the bottom/right.
    Same,
    Valid,
}

impl Padding {
    /// Output length and leading pad for one spatial axis.
    pub(crate) fn resolve(self, input: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        if stride == 0 || kernel == 0 {
            return None;
        }
        match self {
            Padding::Valid => {
                if input < kernel {
                    None
                } else {
                    Some(((input - kernel) / stride + 1, 0))
                }
            }
            Padding::Same => {
                if input == 0 {
                    return None;
                }
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                Some((out, total / 2))
            }
        }
    }
}

/// Kernel geometry for a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
    pub out_channels: usize,
}

impl ConvSpec {
    /// Stride-1, same-padded square kernel.
    pub fn same(kernel: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: Padding::Same,
            out_channels,
        }
    }

    pub fn valid(kernel: usize, out_channels: usize) -> Self {
        ConvSpec {
            padding: Padding::Valid,
            ..Self::same(kernel, out_channels)
        }
    }

    pub fn weight_shape(&self, in_channels: usize) -> Shape {
        Shape::new(self.out_channels, in_channels, self.kernel.0, self.kernel.1)
    }

    pub(crate) fn geometry(&self, input: Shape) -> Result<Geometry> {
        let (oh, pad_top) = self
            .padding
            .resolve(input.h, self.kernel.0, self.stride.0)
            .ok_or_else(|| {
                Error::Config(format!("convolution {self:?} has no valid output for input {input}"))
            })?;
        let (ow, pad_left) = self
            .padding
            .resolve(input.w, self.kernel.1, self.stride.1)
            .ok_or_else(|| {
                Error::Config(format!("convolution {self:?} has no valid output for input {input}"))
            })?;
        Ok(Geometry {
            input,
            kh: self.kernel.0,
            kw: self.kernel.1,
            sh: self.stride.0,
            sw: self.stride.1,
            pad_top,
            pad_left,
            oh,
            ow,
        })
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let g = self.geometry(input)?;
        Ok(Shape::new(input.n, self.out_channels, g.oh, g.ow))
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub input: Shape,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    /// Input row/col for output position `o` and kernel offset `k`, or
    /// `None` when it falls in the padding.
    #[inline]
    pub fn source(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < len).then_some(pos)
    }
}

impl Geometry {
    /// Output columns `[lo, hi)` whose kernel column `kj` lands inside the
    /// input; output column `oj` reads input column `oj * sw + kj - pad_left`.
    #[inline]
    fn col_range(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad_left.saturating_sub(kj).div_ceil(self.sw);
        let reach = self.input.w + self.pad_left;
        let hi = if reach > kj { ((reach - kj - 1) / self.sw + 1).min(self.ow) } else { 0 };
        (lo.min(hi), hi)
    }
}

/// Unfolds one sample into a `(c*kh*kw, oh*ow)` matrix.
fn im2col<S: Scalar>(x: &[S], g: &Geometry, cols: &mut [S]) {
    let (h, w) = (g.input.h, g.input.w);
    let plane = g.oh * g.ow;
    for c in 0..g.input.c {
        let src = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.col_range(kj);
                for oi in 0..g.oh {
                    let out_row = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    let Some(ii) = Geometry::source(oi, ki, g.sh, g.pad_top, h) else {
                        out_row.fill(S::zero());
                        continue;
                    };
                    out_row[..lo].fill(S::zero());
                    out_row[hi..].fill(S::zero());
                    let base = ii * w + lo * g.sw + kj - g.pad_left;
                    if g.sw == 1 {
                        out_row[lo..hi].copy_from_slice(&src[base..base + (hi - lo)]);
                    } else {
                        for (t, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src[base + t * g.sw];
                        }
                    }
                }
            }
        }
    }
}

/// Folds a column matrix back, summing overlapping contributions into `x`.
fn col2im<S: Scalar>(cols: &[S], g: &Geometry, x: &mut [S]) {
    let (h, w) = (g.input.h, g.input.w);
    let plane = g.oh * g.ow;
    for c in 0..g.input.c {
        let dst = &mut x[c * h * w..(c + 1) * h * w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.col_range(kj);
                for oi in 0..g.oh {
                    let Some(ii) = Geometry::source(oi, ki, g.sh, g.pad_top, h) else {
                        continue;
                    };
                    let base = ii * w + lo * g.sw + kj - g.pad_left;
                    for (t, &v) in src[oi * g.ow + lo..oi * g.ow + hi].iter().enumerate() {
                        dst[base + t * g.sw] += v;
                    }
                }
            }
        }
    }
}

fn check_weights<S: Scalar>(op: &'static str, x: Shape, w: &Tensor<S>, spec: &ConvSpec) -> Result<()> {
    let expected = spec.weight_shape(x.c);
    if w.shape() != expected {
        return Err(Error::shape(op, (expected, "for input", x), w.shape()));
    }
    Ok(())
}

/// Cross-correlation of `x` with `w` (`(co, ci, kh, kw)`) plus an optional
/// per-output-channel bias.
pub fn conv2d<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: Option<&[S]>, spec: &ConvSpec) -> Result<Tensor<S>> {
    let xs = x.shape();
    check_weights("conv2d", xs, w, spec)?;
    if let Some(b) = b {
        if b.len() != spec.out_channels {
            return Err(Error::shape("conv2d bias", spec.out_channels, b.len()));
        }
    }
    let g = spec.geometry(xs)?;
    let co = spec.out_channels;
    let k = xs.c * g.kh * g.kw;
    let plane = g.oh * g.ow;
    let mut out = Tensor::zeros(Shape::new(xs.n, co, g.oh, g.ow));
    let wmat = Mat::new(w.data(), co, k);
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![S::zero(); k * plane] };
    for n in 0..xs.n {
        let dst = out.sample_mut(n);
        if g.is_pointwise() {
            matmul(wmat, Mat::new(x.sample(n), k, plane), dst, false);
        } else {
            im2col(x.sample(n), &g, &mut cols);
            matmul(wmat, Mat::new(&cols, k, plane), dst, false);
        }
        if let Some(b) = b {
            for (o, &bias) in b.iter().enumerate() {
                for v in &mut dst[o * plane..(o + 1) * plane] {
                    *v += bias;
                }
            }
        }
    }
    out.finite("conv2d")
}

#[derive(Debug, Clone)]
pub struct ConvGrads<S> {
    pub grad_x: Tensor<S>,
    pub grad_w: Tensor<S>,
    pub grad_b: Vec<S>,
}

/// Reverse-mode counterpart of [`conv2d`]. The bias gradient is always
/// returned; callers without a bias ignore it.
pub fn conv2d_grad<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    spec: &ConvSpec,
    grad_out: &Tensor<S>,
) -> Result<ConvGrads<S>> {
    let xs = x.shape();
    check_weights("conv2d_grad", xs, w, spec)?;
    let out_shape = spec.output_shape(xs)?;
    if grad_out.shape() != out_shape {
        return Err(Error::shape("conv2d_grad", out_shape, grad_out.shape()));
    }
    let g = spec.geometry(xs)?;
    let co = spec.out_channels;
    let k = xs.c * g.kh * g.kw;
    let plane = g.oh * g.ow;

    let mut grad_x = Tensor::zeros(xs);
    let mut grad_w = Tensor::zeros(w.shape());
    let mut grad_b = vec![S::zero(); co];
    let wmat = Mat::new(w.data(), co, k);
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![S::zero(); k * plane] };
    let mut grad_cols = if pointwise { Vec::new() } else { vec![S::zero(); k * plane] };

    for n in 0..xs.n {
        let go = grad_out.sample(n);
        let gomat = Mat::new(go, co, plane);
        for (o, gb) in grad_b.iter_mut().enumerate() {
            *gb += go[o * plane..(o + 1) * plane].iter().copied().sum::<S>();
        }
        if pointwise {
            matmul(gomat, Mat::new(x.sample(n), k, plane).t(), grad_w.data_mut(), true);
            matmul(wmat.t(), gomat, grad_x.sample_mut(n), false);
        } else {
            im2col(x.sample(n), &g, &mut cols);
            matmul(gomat, Mat::new(&cols, k, plane).t(), grad_w.data_mut(), true);
            matmul(wmat.t(), gomat, &mut grad_cols, false);
            col2im(&grad_cols, &g, grad_x.sample_mut(n));
        }
    }
    Ok(ConvGrads {
        grad_x: grad_x.finite("conv2d_grad input")?,
        grad_w: grad_w.finite("conv2d_grad weights")?,
        grad_b,
    })
}
