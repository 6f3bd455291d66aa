use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Gradients, Param};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub decay: f64,
    pub nesterov: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr0: 0.01, momentum: 0.9, decay: 9.99e-7, nesterov: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, decay: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EveConfig {
    pub lr: f64,
    /// Per-step learning-rate decay (gamma).
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    /// Lower clip for the relative loss change.
    pub k: f64,
    /// Upper clip for the relative loss change.
    #[serde(rename = "K")]
    pub big_k: f64,
    pub epsilon: f64,
}

impl Default for EveConfig {
    fn default() -> Self {
        EveConfig {
            lr: 1e-4,
            decay: 1e-4,
            beta1: 0.9,
            beta2: 0.9,
            beta3: 0.9,
            k: 0.1,
            big_k: 10.0,
            epsilon: 1e-8,
        }
    }
}

impl EveConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, epsilon: self.epsilon, decay: self.decay }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Adam(AdamConfig),
    Eve(EveConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd(SgdConfig::default())
    }
}

fn check_unit(name: &str, v: f64, closed: bool) -> Result<()> {
    let ok = if closed { (0.0..=1.0).contains(&v) } else { (0.0..1.0).contains(&v) };
    if !ok {
        let range = if closed { "[0, 1]" } else { "[0, 1)" };
        return Err(Error::Config(format!("{name} must lie in {range}, got {v}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

fn check_decay(v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("decay must be non-negative, got {v}")));
    }
    Ok(())
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd(_) => "sgd",
            OptimizerConfig::Adam(_) => "adam",
            OptimizerConfig::Eve(_) => "eve",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OptimizerConfig::Sgd(c) => {
                check_positive("lr0", c.lr0)?;
                check_unit("momentum", c.momentum, false)?;
                check_decay(c.decay)
            }
            OptimizerConfig::Adam(c) => {
                check_positive("lr", c.lr)?;
                check_unit("beta1", c.beta1, false)?;
                check_unit("beta2", c.beta2, false)?;
                check_positive("epsilon", c.epsilon)?;
                check_decay(c.decay)
            }
            OptimizerConfig::Eve(c) => {
                check_positive("lr", c.lr)?;
                check_unit("beta1", c.beta1, false)?;
                check_unit("beta2", c.beta2, false)?;
                // beta3 = 1 freezes d and is allowed.
                check_unit("beta3", c.beta3, true)?;
                check_positive("epsilon", c.epsilon)?;
                check_decay(c.decay)?;
                if !(c.k > 0.0 && c.k < c.big_k && c.big_k.is_finite()) {
                    return Err(Error::Config(format!("EVE needs 0 < k < K, got k={} K={}", c.k, c.big_k)));
                }
                Ok(())
            }
        }
    }
}

/// Everything an optimizer carries between steps. Buffers are kept in f64
/// regardless of the parameter type.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Completed steps.
    pub t: u64,
    /// SGD velocity, or the Adam/EVE first moment.
    pub first: Vec<Vec<f64>>,
    /// Adam/EVE second moment (empty for SGD).
    pub second: Vec<Vec<f64>>,
    /// EVE feedback coefficient.
    pub d: f64,
    pub prev_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Learning rate actually applied this step (after decay and, for EVE,
    /// division by d).
    pub effective_lr: f64,
    pub eve_d: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new<S: Scalar>(cfg: OptimizerConfig, params: &[Param<S>]) -> Result<Self> {
        cfg.validate()?;
        let zeros = || params.iter().map(|p| vec![0.0; p.value.len()]).collect::<Vec<_>>();
        let second = match cfg {
            OptimizerConfig::Sgd(_) => Vec::new(),
            _ => zeros(),
        };
        Ok(Optimizer {
            cfg,
            state: OptimizerState { t: 0, first: zeros(), second, d: 1.0, prev_loss: None },
        })
    }

    /// Rebuilds an optimizer from saved state, checking buffer sizes.
    pub fn from_state<S: Scalar>(cfg: OptimizerConfig, params: &[Param<S>], state: OptimizerState) -> Result<Self> {
        let fresh = Self::new(cfg, params)?;
        let sizes = |b: &[Vec<f64>]| b.iter().map(Vec::len).collect::<Vec<_>>();
        if sizes(&state.first) != sizes(&fresh.state.first) || sizes(&state.second) != sizes(&fresh.state.second) {
            return Err(Error::Format("optimizer state does not match the model's parameters".into()));
        }
        Ok(Optimizer { cfg, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Learning rate the next step will use.
    pub fn current_lr(&self) -> f64 {
        let t = self.state.t as f64;
        match self.cfg {
            OptimizerConfig::Sgd(c) => c.lr0 / (1.0 + c.decay * t),
            OptimizerConfig::Adam(c) => c.lr / (1.0 + c.decay * t),
            OptimizerConfig::Eve(c) => c.lr / (1.0 + c.decay * t),
        }
    }

    /// One update. `loss` is the batch loss the gradients came from; only
    /// EVE reads it.
    pub fn step<S: Scalar>(&mut self, params: &mut [Param<S>], grads: &Gradients<S>, loss: f64) -> Result<StepInfo> {
        if grads.tensors.len() != params.len() || self.state.first.len() != params.len() {
            return Err(Error::Internal(format!(
                "{} gradients and {} optimizer buffers for {} parameters",
                grads.tensors.len(),
                self.state.first.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(&grads.tensors) {
            if g.shape() != p.value.shape() {
                return Err(Error::shape("optimizer step", p.value.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::Training(format!("non-finite gradient for '{}'", p.name)));
            }
        }
        let lr = self.current_lr();
        let info = match self.cfg {
            OptimizerConfig::Sgd(c) => {
                for ((p, g), v) in params.iter_mut().zip(&grads.tensors).zip(&mut self.state.first) {
                    for ((w, &g), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        let g = g.as_f64();
                        *v = c.momentum * *v - lr * g;
                        let step = if c.nesterov { c.momentum * *v - lr * g } else { *v };
                        *w = S::from_f64_lossy(w.as_f64() + step);
                    }
                }
                StepInfo { effective_lr: lr, eve_d: None }
            }
            OptimizerConfig::Adam(c) => {
                self.adam_update(params, grads, &c, lr);
                StepInfo { effective_lr: lr, eve_d: None }
            }
            OptimizerConfig::Eve(c) => {
                if !loss.is_finite() {
                    return Err(Error::Training(format!("EVE needs a finite batch loss, got {loss}")));
                }
                match self.state.prev_loss {
                    None => self.state.d = 1.0,
                    Some(prev) => {
                        let r = (loss - prev).abs() / c.epsilon.max(loss.min(prev));
                        let clipped = r.clamp(c.k, c.big_k);
                        self.state.d = c.beta3 * self.state.d + (1.0 - c.beta3) * clipped;
                    }
                }
                self.state.prev_loss = Some(loss);
                let step = lr / self.state.d;
                self.adam_update(params, grads, &c.adam(), step);
                StepInfo { effective_lr: step, eve_d: Some(self.state.d) }
            }
        };
        self.state.t += 1;
        Ok(info)
    }

    fn adam_update<S: Scalar>(&mut self, params: &mut [Param<S>], grads: &Gradients<S>, c: &AdamConfig, step: f64) {
        let t = (self.state.t + 1) as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        let bufs = self.state.first.iter_mut().zip(self.state.second.iter_mut());
        for ((p, g), (m, v)) in params.iter_mut().zip(&grads.tensors).zip(bufs) {
            for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let (m_hat, v_hat) = (*m / bc1, *v / bc2);
                *w = S::from_f64_lossy(w.as_f64() - step * m_hat / (v_hat + c.epsilon).sqrt());
            }
        }
    }
}

/// Coupled L2: adds `lambda * theta` to the gradient of every kernel tagged
/// for regularization. Biases and untagged layers are left alone.
pub fn apply_l2<S: Scalar>(grads: &mut Gradients<S>, params: &[Param<S>], lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    let l = S::from_f64_lossy(lambda);
    for (p, g) in params.iter().zip(&mut grads.tensors) {
        if p.l2 {
            for (g, &w) in g.data_mut().iter_mut().zip(p.value.data()) {
                *g += l * w;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamRole;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn scalar(theta: f64) -> Vec<Param<f64>> {
        vec![Param {
            name: "theta".into(),
            node: 0,
            role: ParamRole::Kernel,
            l2: true,
            value: Tensor::full([1, 1, 1, 1], theta),
        }]
    }

    fn grad(g: f64) -> Gradients<f64> {
        Gradients { names: vec!["theta".into()], tensors: vec![Tensor::full([1, 1, 1, 1], g)] }
    }

    /// Runs `steps` updates on the quadratic loss theta^2 / 2 (gradient theta).
    fn quadratic(cfg: OptimizerConfig, theta0: f64, steps: usize) -> Vec<f64> {
        let mut p = scalar(theta0);
        let mut opt = Optimizer::new(cfg, &p).unwrap();
        (0..steps)
            .map(|_| {
                let th = p[0].value.data()[0];
                opt.step(&mut p, &grad(th), 0.5 * th * th).unwrap();
                p[0].value.data()[0]
            })
            .collect()
    }

    #[test]
    fn nesterov_three_step_golden() {
        let cfg = OptimizerConfig::Sgd(SgdConfig { lr0: 0.1, momentum: 0.9, decay: 0.0, nesterov: true });
        let got = quadratic(cfg, 1.0, 3);
        // Unrolled by hand: v1 = -0.1, v2 = -0.171, v3 = -0.21141.
        for (g, want) in got.iter().zip([0.81, 0.5751, 0.327321]) {
            assert!((g - want).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let cfg = OptimizerConfig::Sgd(SgdConfig { lr0: 0.3, momentum: 0.0, decay: 0.0, nesterov: true });
        let mut p = scalar(2.0);
        let mut opt = Optimizer::new(cfg, &p).unwrap();
        opt.step(&mut p, &grad(0.7), 0.0).unwrap();
        assert_eq!(p[0].value.data()[0], 2.0 - 0.3 * 0.7);
    }

    #[test]
    fn sgd_lr_decays_with_completed_steps() {
        let cfg = OptimizerConfig::Sgd(SgdConfig { lr0: 0.01, momentum: 0.9, decay: 0.5, nesterov: true });
        let mut p = scalar(0.0);
        let mut opt = Optimizer::new(cfg, &p).unwrap();
        let lrs: Vec<f64> = (0..3).map(|_| opt.step(&mut p, &grad(0.0), 0.0).unwrap().effective_lr).collect();
        assert_eq!(lrs, [0.01, 0.01 / 1.5, 0.01 / 2.0]);
        assert_eq!(p[0].value.data()[0], 0.0);
    }

    /// Independent scalar Adam with epsilon under the root.
    fn adam_oracle(theta0: f64, lr: f64, b1: f64, b2: f64, eps: f64, steps: usize) -> Vec<f64> {
        let (mut th, mut m, mut v) = (theta0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            th -= lr * mh / (vh + eps).sqrt();
            out.push(th);
        }
        out
    }

    #[test]
    fn adam_five_step_oracle() {
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let got = quadratic(OptimizerConfig::Adam(cfg), 1.0, 5);
        let want = adam_oracle(1.0, 0.1, 0.9, 0.999, 1e-8, 5);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
        }
        // With a positive gradient every step moves by just under lr.
        assert!((got[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_is_lr_and_zero_grad_is_fixed() {
        let mut p = scalar(5.0);
        let mut opt = Optimizer::new(OptimizerConfig::Adam(AdamConfig::default()), &p).unwrap();
        opt.step(&mut p, &grad(1.0), 0.0).unwrap();
        assert!((5.0 - p[0].value.data()[0] - 0.001).abs() < 1e-9);

        let mut p = scalar(5.0);
        let mut opt = Optimizer::new(OptimizerConfig::Adam(AdamConfig::default()), &p).unwrap();
        for _ in 0..10 {
            opt.step(&mut p, &grad(0.0), 0.0).unwrap();
        }
        assert_eq!(p[0].value.data()[0], 5.0);
    }

    #[test]
    fn eve_constant_loss_decays_d_toward_k() {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::Eve(EveConfig::default()), &p).unwrap();
        let mut d = Vec::new();
        for _ in 0..60 {
            d.push(opt.step(&mut p, &grad(0.1), 2.0).unwrap().eve_d.unwrap());
        }
        assert_eq!(d[0], 1.0);
        // d_t = 0.1 + 0.9^(t-1) * 0.9
        for (t, &v) in d.iter().enumerate() {
            assert!((v - (0.1 + 0.9f64.powi(t as i32) * 0.9)).abs() < 1e-12, "step {t}: {v}");
        }
        assert!((d[59] - 0.1).abs() < 1e-2);
    }

    #[test]
    fn eve_exploding_loss_raises_d_toward_upper_clip() {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::Eve(EveConfig::default()), &p).unwrap();
        let mut loss = 1.0;
        let mut info = None;
        for _ in 0..80 {
            info = Some(opt.step(&mut p, &grad(0.1), loss).unwrap());
            loss *= 20.0;
        }
        let info = info.unwrap();
        assert!((info.eve_d.unwrap() - 10.0).abs() < 1e-2);
        let lr = EveConfig::default().lr / (1.0 + 1e-4 * 79.0);
        assert!((info.effective_lr - lr / info.eve_d.unwrap()).abs() < 1e-18);
    }

    #[test]
    fn eve_guards_non_positive_losses() {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::Eve(EveConfig::default()), &p).unwrap();
        for loss in [0.0, -1.0, 0.0, 3.0] {
            let d = opt.step(&mut p, &grad(0.1), loss).unwrap().eve_d.unwrap();
            assert!((0.1..=10.0).contains(&d));
        }
        assert_eq!(opt.step(&mut p, &grad(0.1), f64::NAN).unwrap_err().category(), "training");
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar(1.0);
        let mut opt = Optimizer::new(OptimizerConfig::default(), &p).unwrap();
        let err = opt.step(&mut p, &grad(f64::INFINITY), 0.0).unwrap_err();
        assert_eq!(err.category(), "training");
        assert!(err.to_string().contains("theta"));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let bad = [
            OptimizerConfig::Sgd(SgdConfig { momentum: 1.0, ..SgdConfig::default() }),
            OptimizerConfig::Sgd(SgdConfig { lr0: 0.0, ..SgdConfig::default() }),
            OptimizerConfig::Eve(EveConfig { k: 10.0, big_k: 0.1, ..EveConfig::default() }),
            OptimizerConfig::Adam(AdamConfig { beta2: 1.0, ..AdamConfig::default() }),
        ];
        for cfg in bad {
            assert_eq!(cfg.validate().unwrap_err().category(), "config", "{cfg:?}");
        }
    }

    #[test]
    fn l2_adds_scaled_weights_in_scope_only() {
        let mut params = scalar(1.0);
        params.push(Param { name: "stem.w".into(), node: 1, role: ParamRole::Kernel, l2: false, value: Tensor::full([1, 1, 1, 1], 1.0) });
        let mut g = Gradients {
            names: vec!["theta".into(), "stem.w".into()],
            tensors: vec![Tensor::zeros([1, 1, 1, 1]), Tensor::full([1, 1, 1, 1], 0.25)],
        };
        apply_l2(&mut g, &params, 0.0);
        assert_eq!(g.tensors[0].data()[0], 0.0);
        apply_l2(&mut g, &params, 0.002);
        assert_eq!(g.tensors[0].data()[0], 0.002);
        assert_eq!(g.tensors[1].data()[0], 0.25);
    }

    #[test]
    fn config_json_names() {
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"name":"eve","K":12.0}"#).unwrap();
        assert_eq!(cfg, OptimizerConfig::Eve(EveConfig { big_k: 12.0, ..EveConfig::default() }));
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"name":"sgd"}"#).unwrap();
        assert_eq!(cfg, OptimizerConfig::default());
    }

    proptest! {
        /// beta3 = 1 and gamma = 0 freeze d at 1, leaving Adam's trajectory.
        #[test]
        fn eve_with_frozen_d_is_adam(
            gs in prop::collection::vec(-5.0f64..5.0, 1..20),
            losses in prop::collection::vec(0.01f64..100.0, 20),
        ) {
            let eve = EveConfig { beta3: 1.0, decay: 0.0, ..EveConfig::default() };
            let mut pa = scalar(0.3);
            let mut pe = scalar(0.3);
            let mut adam = Optimizer::new(OptimizerConfig::Adam(eve.adam()), &pa).unwrap();
            let mut opt = Optimizer::new(OptimizerConfig::Eve(eve), &pe).unwrap();
            for (g, l) in gs.iter().zip(&losses) {
                adam.step(&mut pa, &grad(*g), *l).unwrap();
                let info = opt.step(&mut pe, &grad(*g), *l).unwrap();
                prop_assert_eq!(info.eve_d, Some(1.0));
                prop_assert_eq!(pa[0].value.data()[0].to_bits(), pe[0].value.data()[0].to_bits());
            }
        }

        #[test]
        fn eve_d_stays_in_clip_range(losses in prop::collection::vec(-10.0f64..1e6, 1..60)) {
            let mut p = scalar(1.0);
            let mut opt = Optimizer::new(OptimizerConfig::Eve(EveConfig::default()), &p).unwrap();
            for l in losses {
                let d = opt.step(&mut p, &grad(0.5), l).unwrap().eve_d.unwrap();
                prop_assert!((0.1..=10.0).contains(&d));
            }
        }

        #[test]
        fn sgd_zero_momentum_matches_descent_bitwise(gs in prop::collection::vec(-3.0f64..3.0, 1..20), lr in 1e-4f64..1.0) {
            let cfg = OptimizerConfig::Sgd(SgdConfig { lr0: lr, momentum: 0.0, decay: 0.0, nesterov: true });
            let mut p = scalar(0.7);
            let mut opt = Optimizer::new(cfg, &p).unwrap();
            let mut th = 0.7f64;
            for g in gs {
                opt.step(&mut p, &grad(g), 0.0).unwrap();
                th -= lr * g;
                prop_assert_eq!(p[0].value.data()[0].to_bits(), th.to_bits());
            }
        }
    }
}
