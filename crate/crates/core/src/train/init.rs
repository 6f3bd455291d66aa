use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerGraph, LayerKind, ParamRole};
use crate::tensor::{Scalar, Shape, Tensor};

fn fans(shape: Shape) -> (usize, usize) {
    let receptive = shape.h * shape.w;
    (shape.c * receptive, shape.n * receptive)
}

/// Glorot-uniform kernels, zero biases. Parameters are visited in store
/// order from one generator, so the result is a function of `seed` alone.
pub fn init_baseline<S: Scalar>(graph: &mut LayerGraph<S>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in graph.params_mut() {
        match p.role {
            ParamRole::Bias => p.value.data_mut().iter_mut().for_each(|v| *v = S::zero()),
            ParamRole::Kernel | ParamRole::RecurrentKernel => {
                let (fan_in, fan_out) = fans(p.value.shape());
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in p.value.data_mut() {
                    *v = S::from_f64_lossy(rng.random_range(-bound..bound));
                }
            }
        }
    }
}

/// Fills `w` (viewed as `rows x cols`, `rows = out_channels`) with a random
/// orthonormal system: orthonormal rows when `rows <= cols`, otherwise
/// orthonormal columns. Modified Gram-Schmidt on a Gaussian draw.
pub(crate) fn orthonormal<S: Scalar>(w: &mut Tensor<S>, rng: &mut ChaCha8Rng) -> Result<()> {
    let shape = w.shape();
    let (rows, cols) = (shape.n, shape.sample_len());
    let (count, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while vecs.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        // Two passes keep the basis orthogonal to working precision.
        for _ in 0..2 {
            for u in &vecs {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(x, &a)| *x -= dot * a);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        vecs.push(v);
    }
    let data = w.data_mut();
    for (i, v) in vecs.iter().enumerate() {
        for (j, &x) in v.iter().enumerate() {
            let idx = if rows <= cols { i * cols + j } else { j * cols + i };
            data[idx] = S::from_f64_lossy(x);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsuvLayer {
    pub node: String,
    /// Pre-activation variance after the last rescale.
    pub variance: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LsuvReport {
    pub layers: Vec<LsuvLayer>,
}

impl LsuvReport {
    pub fn unconverged(&self) -> impl Iterator<Item = &LsuvLayer> {
        self.layers.iter().filter(|l| !l.converged)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsuvConfig {
    pub tol_var: f64,
    pub max_iters: usize,
}

impl Default for LsuvConfig {
    fn default() -> Self {
        LsuvConfig { tol_var: 0.01, max_iters: 10 }
    }
}

pub const LSUV_MIN_PROBE: usize = 64;

fn variance<S: Scalar>(t: &Tensor<S>) -> f64 {
    let n = t.len() as f64;
    let mean = t.data().iter().map(|v| v.as_f64()).sum::<f64>() / n;
    t.data().iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n
}

/// Layer-sequential unit-variance initialization.
///
/// All kernels are first replaced by orthonormal systems and biases zeroed.
/// Then each conv and RCL node, in topological order, has its (feedforward)
/// kernel rescaled until its pre-activation variance on `probe` is within
/// `tol_var` of 1. RCL nodes are probed without recurrence; their recurrent
/// kernel stays orthonormal.
pub fn lsuv_init<S: Scalar>(graph: &mut LayerGraph<S>, probe: &Tensor<S>, cfg: LsuvConfig, seed: u64) -> Result<LsuvReport> {
    if probe.shape().n < LSUV_MIN_PROBE {
        return Err(Error::Init(format!(
            "LSUV probe batch needs at least {LSUV_MIN_PROBE} samples, got {}",
            probe.shape().n
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in graph.params_mut() {
        match p.role {
            ParamRole::Bias => p.value.data_mut().iter_mut().for_each(|v| *v = S::zero()),
            _ => orthonormal(&mut p.value, &mut rng)?,
        }
    }
    let mut report = LsuvReport::default();
    for node in 0..graph.nodes().len() {
        if !matches!(graph.nodes()[node].kind, LayerKind::Conv { .. } | LayerKind::Rcl { .. }) {
            continue;
        }
        let id = graph.nodes()[node].id.clone();
        let kernel = graph.node_params(node)[0];
        let mut var = variance(&graph.preactivation(probe, node)?);
        let mut iterations = 0;
        while (var - 1.0).abs() > cfg.tol_var && iterations < cfg.max_iters {
            if var == 0.0 || !var.is_finite() {
                return Err(Error::Init(format!("layer '{id}' has pre-activation variance {var} on the probe batch")));
            }
            let k = S::from_f64_lossy(1.0 / var.sqrt());
            let w = &mut graph.params_mut()[kernel].value;
            *w = w.scale(k);
            var = variance(&graph.preactivation(probe, node)?);
            iterations += 1;
        }
        if var == 0.0 || !var.is_finite() {
            return Err(Error::Init(format!("layer '{id}' has pre-activation variance {var} on the probe batch")));
        }
        report.layers.push(LsuvLayer {
            node: id,
            variance: var,
            iterations,
            converged: (var - 1.0).abs() <= cfg.tol_var,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{GraphBuilder, InputShape};
    use crate::tensor::ConvSpec;

    fn single_conv(ci: usize, co: usize) -> LayerGraph<f64> {
        let mut b = GraphBuilder::new();
        b.add("input", LayerKind::Input, &[]);
        b.add("conv", LayerKind::Conv { spec: ConvSpec::same(3, co), bias: true }, &["input"]);
        b.build(InputShape { channels: ci, height: 6, width: 6 }).unwrap()
    }

    #[test]
    fn baseline_is_deterministic_with_zero_bias() {
        let (mut a, mut b) = (single_conv(4, 8), single_conv(4, 8));
        init_baseline(&mut a, 5);
        init_baseline(&mut b, 5);
        assert_eq!(a.param("conv.w").unwrap().value, b.param("conv.w").unwrap().value);
        assert!(a.param("conv.b").unwrap().value.data().iter().all(|&v| v == 0.0));
        init_baseline(&mut b, 6);
        assert_ne!(a.param("conv.w").unwrap().value, b.param("conv.w").unwrap().value);
    }

    /// Uniform(-b, b) has variance b^2 / 3 = 2 / (fan_in + fan_out).
    #[test]
    fn glorot_sample_variance() {
        let mut g = single_conv(64, 64);
        init_baseline(&mut g, 11);
        let w = &g.param("conv.w").unwrap().value;
        let expected = 2.0 / (64.0 * 9.0 * 2.0);
        let var = variance(w);
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");
        let bound = (6.0f64 / (64.0 * 9.0 * 2.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
    }

    fn gram(w: &Tensor<f64>, by_rows: bool) -> Vec<Vec<f64>> {
        let (rows, cols) = (w.shape().n, w.shape().sample_len());
        let get = |i: usize, j: usize| if by_rows { w.data()[i * cols + j] } else { w.data()[j * cols + i] };
        let (count, len) = if by_rows { (rows, cols) } else { (cols, rows) };
        (0..count)
            .map(|a| (0..count).map(|b| (0..len).map(|k| get(a, k) * get(b, k)).sum()).collect())
            .collect()
    }

    #[test]
    fn orthonormal_rows_and_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (shape, by_rows) in [([8, 4, 3, 3], true), ([40, 4, 1, 1], false), ([9, 9, 1, 1], true)] {
            let mut w = Tensor::zeros(shape);
            orthonormal(&mut w, &mut rng).unwrap();
            for (i, row) in gram(&w, by_rows).iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-12, "{shape:?} [{i},{j}] = {v}");
                }
            }
        }
    }

    fn unit_probe(c: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([64, c, 6, 6], |_| rng.sample(StandardNormal))
    }

    #[test]
    fn single_conv_converges_and_only_rescales() {
        let mut g = single_conv(3, 8);
        let probe = unit_probe(3, 1);
        let report = lsuv_init(&mut g, &probe, LsuvConfig::default(), 9).unwrap();
        let layer = &report.layers[0];
        assert!(layer.converged && layer.iterations <= 10, "{layer:?}");
        assert!((layer.variance - 1.0).abs() <= 0.01);

        // Same seed, no rescaling: the final kernel is a positive multiple.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut ortho = Tensor::zeros([8, 3, 3, 3]);
        orthonormal(&mut ortho, &mut rng).unwrap();
        let w = &g.param("conv.w").unwrap().value;
        let k = w.data()[0] / ortho.data()[0];
        assert!(k > 0.0);
        assert!(w.max_abs_diff(&ortho.scale(k)) < 1e-12);
    }

    #[test]
    fn dead_layer_is_reported_by_name() {
        let mut g = single_conv(3, 8);
        let probe = Tensor::zeros([64, 3, 6, 6]);
        let err = lsuv_init(&mut g, &probe, LsuvConfig::default(), 0).unwrap_err();
        assert_eq!(err.category(), "init");
        assert!(err.to_string().contains("'conv'"), "{err}");
    }

    #[test]
    fn small_probe_rejected() {
        let mut g = single_conv(3, 8);
        let probe = Tensor::zeros([8, 3, 6, 6]);
        assert_eq!(lsuv_init(&mut g, &probe, LsuvConfig::default(), 0).unwrap_err().category(), "init");
    }

    #[test]
    fn tiny_model_layers_reach_unit_variance() {
        let cfg = crate::models::ModelConfig::tiny();
        let mut g: LayerGraph<f32> = crate::models::build_model(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let probe = Tensor::from_fn([64, 1, 28, 28], |_| rng.sample::<f64, _>(StandardNormal) as f32);
        let report = lsuv_init(&mut g, &probe, LsuvConfig::default(), 1).unwrap();
        let visited = g.nodes().iter().filter(|n| matches!(n.kind, LayerKind::Conv { .. } | LayerKind::Rcl { .. })).count();
        assert_eq!(report.layers.len(), visited);
        for l in &report.layers {
            assert!(!l.converged || (l.variance - 1.0).abs() <= 0.01, "{l:?}");
        }
        assert_eq!(report.unconverged().count(), 0, "{report:?}");
    }
}
