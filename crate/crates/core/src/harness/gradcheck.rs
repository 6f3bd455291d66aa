use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{LayerGraph, Mode, ParamRole};
use crate::models::{build_model, ModelConfig};
use crate::tensor::Tensor;
use crate::train::init_baseline;

pub const GRADCHECK_MAX_PARAMS: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Spatial size the model input is shrunk to.
    pub spatial: usize,
    pub samples: usize,
    /// Coordinates sampled per kernel tensor (biases are checked in full).
    pub coords: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Gradients with both magnitudes below this are compared absolutely.
    pub floor: f64,
    /// Fault injection: negate the analytic gradient of this tensor.
    pub negate_grad_of: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            spatial: 10,
            samples: 2,
            coords: 200,
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
            negate_grad_of: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub variant: String,
    pub params: usize,
    pub tensors: Vec<TensorCheck>,
    pub pass: bool,
}

impl GradcheckReport {
    pub fn render(&self) -> String {
        let mut s = format!("gradcheck {} ({} params)\n", self.variant, self.params);
        for t in &self.tensors {
            s += &format!(
                "  {:<28} {:>5} coords  max rel err {:.3e}  {}\n",
                t.name,
                t.checked,
                t.max_rel_err,
                if t.pass { "ok" } else { "FAIL" }
            );
        }
        s += if self.pass { "PASS\n" } else { "FAIL\n" };
        s
    }
}

/// Compares backprop gradients with central finite differences at f64.
///
/// The model is rebuilt at `spatial x spatial`, initialized from the seed
/// (with small random biases so bias paths are exercised), and run in train
/// mode with the dropout generator rewound before every forward, so each
/// evaluation sees the same masks.
pub fn cmd_gradcheck(model: &ModelConfig, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut cfg = model.clone();
    cfg.input.height = opts.spatial;
    cfg.input.width = opts.spatial;
    let mut graph: LayerGraph<f64> = build_model(&cfg)?;
    let params = graph.param_count();
    if params > GRADCHECK_MAX_PARAMS {
        return Err(Error::Config(format!(
            "gradcheck runs on small models only ({params} parameters > {GRADCHECK_MAX_PARAMS})"
        )));
    }
    init_baseline(&mut graph, opts.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6772_6164);
    for p in graph.params_mut() {
        if p.role == ParamRole::Bias {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let x = Tensor::from_fn([opts.samples, cfg.input.channels, opts.spatial, opts.spatial], |_| rng.random_range(-1.0..1.0));
    let labels: Vec<usize> = (0..opts.samples).map(|_| rng.random_range(0..cfg.classes)).collect();
    graph.reseed(opts.seed);
    let rng_state = graph.rng_state();

    let loss_at = |g: &mut LayerGraph<f64>| -> Result<f64> {
        g.set_rng_state(rng_state);
        Ok(g.run(&x, &labels, Mode::Train)?.loss)
    };
    graph.set_rng_state(rng_state);
    let analytic = graph.run(&x, &labels, Mode::Train)?.grads.expect("train mode yields gradients");

    let mut tensors = Vec::new();
    for pi in 0..graph.params().len() {
        let p = &graph.params()[pi];
        let name = p.name.clone();
        let len = p.value.len();
        let coords: Vec<usize> = if p.role == ParamRole::Bias || len <= opts.coords {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, opts.coords).into_vec();
            c.sort_unstable();
            c
        };
        let sign = if opts.negate_grad_of.as_deref() == Some(name.as_str()) { -1.0 } else { 1.0 };
        let mut max_rel_err = 0.0f64;
        for &i in &coords {
            let orig = graph.params()[pi].value.data()[i];
            graph.params_mut()[pi].value.data_mut()[i] = orig + opts.step;
            let plus = loss_at(&mut graph)?;
            graph.params_mut()[pi].value.data_mut()[i] = orig - opts.step;
            let minus = loss_at(&mut graph)?;
            graph.params_mut()[pi].value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = sign * analytic.tensors[pi].data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            max_rel_err = max_rel_err.max(rel);
        }
        tensors.push(TensorCheck { name, checked: coords.len(), max_rel_err, pass: max_rel_err < opts.tolerance });
    }
    let pass = tensors.iter().all(|t| t.pass);
    Ok(GradcheckReport { variant: cfg.variant.to_string(), params, tensors, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_large_models() {
        let err = cmd_gradcheck(&ModelConfig::paper(), &GradcheckOptions::default()).unwrap_err();
        assert_eq!(err.category(), "config");
    }
}

#[cfg(test)]
mod tiny_tests {
    use super::*;
    use crate::models::Variant;

    #[test]
    fn tiny_variants_pass_and_fault_is_caught() {
        for v in Variant::ALL {
            let r = cmd_gradcheck(&ModelConfig::tiny().with_variant(v), &GradcheckOptions { coords: 20, ..Default::default() }).unwrap();
            eprintln!("{}", r.render());
            assert!(r.pass, "{}", r.render());
        }
        let opts = GradcheckOptions { coords: 20, negate_grad_of: Some("block1.b3x3.rcl.w_r".into()), ..Default::default() };
        let r = cmd_gradcheck(&ModelConfig::tiny(), &opts).unwrap();
        assert!(!r.pass);
        let bad: Vec<_> = r.tensors.iter().filter(|t| !t.pass).map(|t| t.name.as_str()).collect();
        assert_eq!(bad, ["block1.b3x3.rcl.w_r"]);
    }
}
