use serde::{Deserialize, Serialize};

use super::conv::Geometry;
use super::{Padding, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Max,
    Avg,
}

/// Spatial pooling window. Padded positions never contribute: max ignores
/// them and avg divides by the number of in-bounds elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub mode: PoolMode,
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl PoolSpec {
    /// 3x3 window, stride 2, same padding.
    pub fn overlapping_max() -> Self {
        PoolSpec {
            mode: PoolMode::Max,
            window: (3, 3),
            stride: (2, 2),
            padding: Padding::Same,
        }
    }

    /// 3x3 window, stride 1, same padding: spatial dims unchanged.
    pub fn smoothing_avg() -> Self {
        PoolSpec {
            mode: PoolMode::Avg,
            window: (3, 3),
            stride: (1, 1),
            padding: Padding::Same,
        }
    }

    fn geometry(&self, input: Shape) -> Result<Geometry> {
        let bad = || Error::Config(format!("pooling {self:?} has no valid output for input {input}"));
        let (oh, pad_top) = self.padding.resolve(input.h, self.window.0, self.stride.0).ok_or_else(bad)?;
        let (ow, pad_left) = self.padding.resolve(input.w, self.window.1, self.stride.1).ok_or_else(bad)?;
        Ok(Geometry {
            input,
            kh: self.window.0,
            kw: self.window.1,
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
        Ok(Shape::new(input.n, input.c, g.oh, g.ow))
    }
}

/// In-bounds source offsets (within one plane) of every window, in
/// row-major order; window `o` is `offsets[starts[o]..starts[o + 1]]`.
struct Windows {
    offsets: Vec<usize>,
    starts: Vec<usize>,
}

impl Windows {
    fn new(g: &Geometry) -> Self {
        let mut offsets = Vec::with_capacity(g.oh * g.ow * g.kh * g.kw);
        let mut starts = Vec::with_capacity(g.oh * g.ow + 1);
        starts.push(0);
        for oi in 0..g.oh {
            for oj in 0..g.ow {
                for ki in 0..g.kh {
                    let Some(i) = Geometry::source(oi, ki, g.sh, g.pad_top, g.input.h) else {
                        continue;
                    };
                    for kj in 0..g.kw {
                        if let Some(j) = Geometry::source(oj, kj, g.sw, g.pad_left, g.input.w) {
                            offsets.push(i * g.input.w + j);
                        }
                    }
                }
                starts.push(offsets.len());
            }
        }
        Windows { offsets, starts }
    }

    fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.starts.windows(2).map(|w| &self.offsets[w[0]..w[1]])
    }
}

/// First (row-major) position of the maximum.
fn argmax<S: Scalar>(plane: &[S], idx: &[usize]) -> usize {
    let mut best = idx[0];
    for &i in &idx[1..] {
        if plane[i] > plane[best] {
            best = i;
        }
    }
    best
}

pub fn pool2d<S: Scalar>(x: &Tensor<S>, spec: &PoolSpec) -> Result<Tensor<S>> {
    let xs = x.shape();
    let g = spec.geometry(xs)?;
    let mut out = Tensor::zeros(Shape::new(xs.n, xs.c, g.oh, g.ow));
    let (in_plane, out_plane) = (xs.plane(), g.oh * g.ow);
    let windows = Windows::new(&g);
    for (p, dst) in out.data_mut().chunks_mut(out_plane).enumerate() {
        let src = &x.data()[p * in_plane..(p + 1) * in_plane];
        for (v, idx) in dst.iter_mut().zip(windows.iter()) {
            *v = match spec.mode {
                PoolMode::Max => src[argmax(src, idx)],
                PoolMode::Avg => idx.iter().map(|&i| src[i]).sum::<S>() / S::from_usize(idx.len()).unwrap(),
            };
        }
    }
    out.finite("pool2d")
}

/// Gradient of [`pool2d`] with respect to its input.
pub fn pool2d_grad<S: Scalar>(x: &Tensor<S>, spec: &PoolSpec, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
    let xs = x.shape();
    let g = spec.geometry(xs)?;
    let expected = Shape::new(xs.n, xs.c, g.oh, g.ow);
    if grad_out.shape() != expected {
        return Err(Error::shape("pool2d_grad", expected, grad_out.shape()));
    }
    let mut grad_x = Tensor::zeros(xs);
    let (in_plane, out_plane) = (xs.plane(), g.oh * g.ow);
    let windows = Windows::new(&g);
    for p in 0..xs.n * xs.c {
        let src = &x.data()[p * in_plane..(p + 1) * in_plane];
        let go = &grad_out.data()[p * out_plane..(p + 1) * out_plane];
        let dst = &mut grad_x.data_mut()[p * in_plane..(p + 1) * in_plane];
        for (&gv, idx) in go.iter().zip(windows.iter()) {
            match spec.mode {
                PoolMode::Max => dst[argmax(src, idx)] += gv,
                PoolMode::Avg => {
                    let share = gv / S::from_usize(idx.len()).unwrap();
                    for &i in idx {
                        dst[i] += share;
                    }
                }
            }
        }
    }
    grad_x.finite("pool2d_grad")
}
