//! wasm-bindgen surface for the static page in `www/`. Every function is a
//! thin wrapper over the core crate so it can also be tested natively.

use ircnn::layers::{rcl_forward, Gradients, LayerGraph, Param, ParamRole};
use ircnn::models::{build_model, ModelConfig, Variant};
use ircnn::tensor::{ConvSpec, Tensor};
use ircnn::train::{AdamConfig, EveConfig, Optimizer, OptimizerConfig};
use wasm_bindgen::prelude::*;

fn js_err(e: ircnn::Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.category()))
}

/// Runs a one-channel 3x3 RCL over a `size x size` image and returns the
/// activations of every step, concatenated: `(steps + 1) * size * size`
/// values, step 0 first.
///
/// The feedforward kernel is an edge detector; `w_r` is the centre tap of a
/// recurrent kernel whose other taps are `w_r / 8`, so larger values spread
/// activity to neighbours on each step.
#[wasm_bindgen]
pub fn rcl_unroll(image: &[f32], size: usize, steps: usize, w_r: f32, bias: f32) -> Result<Vec<f32>, JsError> {
    if image.len() != size * size {
        return Err(JsError::new(&format!("image has {} pixels, expected {}", image.len(), size * size)));
    }
    let x = Tensor::new([1, 1, size, size], image.to_vec()).map_err(js_err)?;
    let edge = [-1.0, -1.0, -1.0, -1.0, 8.0, -1.0, -1.0, -1.0, -1.0];
    let w_f = Tensor::new([1, 1, 3, 3], edge.to_vec()).map_err(js_err)?;
    let w_r = Tensor::from_fn([1, 1, 3, 3], |[_, _, i, j]| if (i, j) == (1, 1) { w_r } else { w_r / 8.0 });
    let (_, cache) = rcl_forward(&x, &w_f, &w_r, &[bias], steps, &ConvSpec::same(3, 1)).map_err(js_err)?;
    Ok(cache.states().iter().flat_map(|z| z.data().iter().copied()).collect())
}

fn scalar_param(v: f64) -> Vec<Param<f64>> {
    vec![Param {
        name: "theta".into(),
        node: 0,
        role: ParamRole::Kernel,
        l2: false,
        value: Tensor::full([1, 1, 1, 1], v),
    }]
}

/// Trajectory of one optimizer on f(x, y) = (x^2 + scale * y^2) / 2 with a
/// deterministic oscillating gradient perturbation. Returns JSON
/// `{"loss": [...], "x": [...], "y": [...], "d": [...]}`.
fn trajectory(cfg: OptimizerConfig, steps: usize, scale: f64, noise: f64) -> ircnn::Result<serde_json::Value> {
    let mut px = scalar_param(2.0);
    let mut py = scalar_param(2.0);
    let mut ox = Optimizer::new(cfg, &px)?;
    let mut oy = Optimizer::new(cfg, &py)?;
    let (mut loss, mut xs, mut ys, mut ds) = (vec![], vec![], vec![], vec![]);
    for t in 0..steps {
        let (x, y) = (px[0].value.data()[0], py[0].value.data()[0]);
        let f = 0.5 * (x * x + scale * y * y);
        loss.push(f);
        xs.push(x);
        ys.push(y);
        let wobble = noise * (t as f64 * 0.7).sin();
        let grad = |g: f64| Gradients { names: vec!["theta".into()], tensors: vec![Tensor::full([1, 1, 1, 1], g + wobble)] };
        let info = ox.step(&mut px, &grad(x), f)?;
        oy.step(&mut py, &grad(scale * y), f)?;
        ds.push(info.eve_d.unwrap_or(1.0));
    }
    Ok(serde_json::json!({ "loss": loss, "x": xs, "y": ys, "d": ds }))
}

/// Adam and EVE side by side with a shared learning rate, as JSON
/// `{"adam": trajectory, "eve": trajectory}`.
#[wasm_bindgen]
pub fn adam_vs_eve(steps: usize, lr: f64, scale: f64, noise: f64) -> Result<String, JsError> {
    let adam = OptimizerConfig::Adam(AdamConfig { lr, ..AdamConfig::default() });
    let eve = OptimizerConfig::Eve(EveConfig { lr, decay: 0.0, ..EveConfig::default() });
    let out = serde_json::json!({
        "adam": trajectory(adam, steps, scale, noise).map_err(js_err)?,
        "eve": trajectory(eve, steps, scale, noise).map_err(js_err)?,
    });
    Ok(out.to_string())
}

/// Per-node parameter table for a preset and variant, as JSON
/// `{"total": n, "nodes": [[name, n], ...], "variants": {"ircnn": n, ...}}`.
#[wasm_bindgen]
pub fn param_table(preset: &str, variant: &str) -> Result<String, JsError> {
    let variant: Variant = variant.parse().map_err(js_err)?;
    let model = ModelConfig::preset(preset).map_err(js_err)?.with_variant(variant);
    let graph: LayerGraph<f32> = build_model(&model).map_err(js_err)?;
    let counts = ircnn::models::count_params(&graph);
    let mut variants = serde_json::Map::new();
    for v in Variant::ALL {
        let g: LayerGraph<f32> = build_model(&model.with_variant(v)).map_err(js_err)?;
        variants.insert(v.to_string(), g.param_count().into());
    }
    Ok(serde_json::json!({ "total": counts.total, "nodes": counts.per_node, "variants": variants }).to_string())
}
