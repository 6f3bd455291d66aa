//! Static layer DAG with a named parameter store and a reverse-mode pass.
//!
//! Nodes are declared by id with string references to their inputs. `build`
//! resolves the references, sorts the nodes topologically, infers every
//! output shape and allocates zero-filled parameters. Forward runs in
//! topological order; backward walks the same order in reverse, summing
//! gradients where an activation fans out to several consumers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dropout::{check_rate, dropout, dropout_grad, MaskRng, Mode, RngState};
use super::lrn::{lrn, lrn_grad, LrnAttrs};
use super::rcl::{check_spec, rcl_backward, rcl_forward, RclCache};
use super::softmax::{softmax_xent, SoftmaxXent};
use crate::error::{Error, Result};
use crate::tensor::{
    add, concat_channels, conv2d, conv2d_grad, global_avg_pool, global_avg_pool_grad, pool2d, pool2d_grad,
    relu, relu_grad, split_channels, ConvSpec, PoolMode, PoolSpec, Scalar, Shape, Tensor,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv { spec: ConvSpec, bias: bool },
    Rcl { spec: ConvSpec, steps: usize },
    Relu,
    Lrn(LrnAttrs),
    Dropout { rate: f64 },
    Pool(PoolSpec),
    Gap,
    Concat,
    ResidualAdd,
    SoftmaxXent,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::Rcl { .. } => "rcl",
            LayerKind::Relu => "relu",
            LayerKind::Lrn(_) => "lrn",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Pool(p) if p.mode == PoolMode::Max => "maxpool",
            LayerKind::Pool(_) => "avgpool",
            LayerKind::Gap => "gap",
            LayerKind::Concat => "concat",
            LayerKind::ResidualAdd => "residual_add",
            LayerKind::SoftmaxXent => "softmax_xent",
        }
    }

    fn arity_ok(&self, n: usize) -> bool {
        match self {
            LayerKind::Input => n == 0,
            LayerKind::Concat => n >= 1,
            LayerKind::ResidualAdd => n == 2,
            _ => n == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNode {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    /// Kernels of this node receive L2 weight regularization.
    #[serde(default)]
    pub l2: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Kernel,
    RecurrentKernel,
    Bias,
}

#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub node: usize,
    pub role: ParamRole,
    /// Inside the L2 regularization scope (never true for biases).
    pub l2: bool,
    pub value: Tensor<S>,
}

/// Per-sample input extents (channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn batch(&self, n: usize) -> Shape {
        Shape::new(n, self.channels, self.height, self.width)
    }
}

#[derive(Debug, Default, Clone)]
pub struct GraphBuilder {
    nodes: Vec<LayerNode>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a node and returns its id for chaining.
    pub fn add(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> String {
        self.push(id, kind, inputs, false)
    }

    /// Like [`add`](Self::add), with the node's kernels L2-regularized.
    pub fn add_regularized(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str]) -> String {
        self.push(id, kind, inputs, true)
    }

    fn push(&mut self, id: impl Into<String>, kind: LayerKind, inputs: &[&str], l2: bool) -> String {
        let id = id.into();
        self.nodes.push(LayerNode {
            id: id.clone(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            l2,
        });
        id
    }

    pub fn add_node(&mut self, node: LayerNode) {
        self.nodes.push(node);
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn build<S: Scalar>(self, input: InputShape) -> Result<LayerGraph<S>> {
        LayerGraph::new(self.nodes, input)
    }
}

#[derive(Debug, Clone)]
pub struct LayerGraph<S> {
    nodes: Vec<LayerNode>,
    inputs: Vec<Vec<usize>>,
    /// Output shape of every node for a batch of one.
    shapes: Vec<Shape>,
    node_params: Vec<Vec<usize>>,
    params: Vec<Param<S>>,
    input_shape: InputShape,
    input_node: usize,
    loss_node: Option<usize>,
    output_node: usize,
    rng: MaskRng,
}

/// Parameter gradients, aligned with [`LayerGraph::params`].
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    pub logits: Tensor<S>,
    /// Present only in train mode.
    pub grads: Option<Gradients<S>>,
}

impl<S> StepOutput<S> {
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }
}

#[derive(Debug)]
enum Cache<S> {
    None,
    Rcl(RclCache<S>),
    Mask(Vec<S>),
}

struct Pass<S> {
    acts: Vec<Option<Tensor<S>>>,
    caches: Vec<Cache<S>>,
    xent: Option<SoftmaxXent<S>>,
}

fn config_err(node: &LayerNode, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("node '{}' ({}): {msg}", node.id, node.kind.name()))
}

impl<S: Scalar> LayerGraph<S> {
    fn new(declared: Vec<LayerNode>, input_shape: InputShape) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, n) in declared.iter().enumerate() {
            if index.insert(n.id.as_str(), i).is_some() {
                return Err(Error::Config(format!("duplicate node id '{}'", n.id)));
            }
        }
        let mut deps = Vec::with_capacity(declared.len());
        for n in &declared {
            if !n.kind.arity_ok(n.inputs.len()) {
                return Err(config_err(n, format!("wrong number of inputs ({})", n.inputs.len())));
            }
            let resolved = n
                .inputs
                .iter()
                .map(|id| index.get(id.as_str()).copied().ok_or_else(|| config_err(n, format!("unresolved input '{id}'"))))
                .collect::<Result<Vec<_>>>()?;
            deps.push(resolved);
        }

        // Kahn's algorithm, always taking the earliest declared ready node so
        // the order is deterministic.
        let count = declared.len();
        let mut pending: Vec<usize> = deps.iter().map(Vec::len).collect();
        let mut consumers = vec![Vec::new(); count];
        for (i, d) in deps.iter().enumerate() {
            for &j in d {
                consumers[j].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..count).filter(|&i| pending[i] == 0).collect();
        let mut order = Vec::with_capacity(count);
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &c in &consumers[i] {
                pending[c] -= 1;
                if pending[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != count {
            let stuck: Vec<&str> = (0..count).filter(|i| !order.contains(i)).map(|i| declared[i].id.as_str()).collect();
            return Err(Error::Config(format!("graph has a cycle through {stuck:?}")));
        }
        let mut position = vec![0; count];
        for (p, &i) in order.iter().enumerate() {
            position[i] = p;
        }
        let inputs: Vec<Vec<usize>> = order.iter().map(|&i| deps[i].iter().map(|&j| position[j]).collect()).collect();
        let has_consumer: Vec<bool> = order.iter().map(|&i| !consumers[i].is_empty()).collect();
        let mut slots: Vec<Option<LayerNode>> = declared.into_iter().map(Some).collect();
        let nodes: Vec<LayerNode> = order.iter().map(|&i| slots[i].take().unwrap()).collect();

        let input_nodes: Vec<usize> = (0..count).filter(|&i| nodes[i].kind == LayerKind::Input).collect();
        let [input_node] = input_nodes[..] else {
            return Err(Error::Config(format!("graph needs exactly one input node, found {}", input_nodes.len())));
        };
        let losses: Vec<usize> = (0..count).filter(|&i| nodes[i].kind == LayerKind::SoftmaxXent).collect();
        if losses.len() > 1 {
            return Err(Error::Config(format!("graph has {} loss nodes", losses.len())));
        }
        let loss_node = losses.first().copied();
        let sinks: Vec<usize> = (0..count).filter(|&i| !has_consumer[i]).collect();
        if sinks.len() != 1 {
            let ids: Vec<&str> = sinks.iter().map(|&i| nodes[i].id.as_str()).collect();
            return Err(Error::Config(format!("graph must have exactly one terminal node, found {ids:?}")));
        }
        if let Some(l) = loss_node {
            if sinks[0] != l {
                return Err(config_err(&nodes[l], "loss node must be terminal"));
            }
        }
        let output_node = match loss_node {
            Some(l) => inputs[l][0],
            None => sinks[0],
        };

        let mut shapes = Vec::with_capacity(count);
        let mut params = Vec::new();
        let mut node_params = vec![Vec::new(); count];
        for (i, node) in nodes.iter().enumerate() {
            let ins: Vec<Shape> = inputs[i].iter().map(|&j| shapes[j]).collect();
            let mut add_param = |suffix: &str, role: ParamRole, shape: Shape| {
                node_params[i].push(params.len());
                params.push(Param {
                    name: format!("{}.{suffix}", node.id),
                    node: i,
                    role,
                    l2: node.l2 && role != ParamRole::Bias,
                    value: Tensor::zeros(shape),
                });
            };
            let shape = match &node.kind {
                LayerKind::Input => input_shape.batch(1),
                LayerKind::Conv { spec, bias } => {
                    let out = spec.output_shape(ins[0]).map_err(|e| config_err(node, e))?;
                    add_param("w", ParamRole::Kernel, spec.weight_shape(ins[0].c));
                    if *bias {
                        add_param("b", ParamRole::Bias, Shape::new(spec.out_channels, 1, 1, 1));
                    }
                    out
                }
                LayerKind::Rcl { spec, .. } => {
                    check_spec(spec).map_err(|e| config_err(node, e))?;
                    add_param("w_f", ParamRole::Kernel, spec.weight_shape(ins[0].c));
                    add_param("w_r", ParamRole::RecurrentKernel, spec.weight_shape(spec.out_channels));
                    add_param("b", ParamRole::Bias, Shape::new(spec.out_channels, 1, 1, 1));
                    spec.output_shape(ins[0]).map_err(|e| config_err(node, e))?
                }
                LayerKind::Relu => ins[0],
                LayerKind::Lrn(attrs) => {
                    attrs.validate().map_err(|e| config_err(node, e))?;
                    ins[0]
                }
                LayerKind::Dropout { rate } => {
                    check_rate(*rate).map_err(|e| config_err(node, e))?;
                    ins[0]
                }
                LayerKind::Pool(spec) => spec.output_shape(ins[0]).map_err(|e| config_err(node, e))?,
                LayerKind::Gap => Shape::new(1, ins[0].c, 1, 1),
                LayerKind::Concat => {
                    let first = ins[0];
                    if ins.iter().any(|s| (s.h, s.w) != (first.h, first.w)) {
                        return Err(config_err(node, format!("spatial mismatch between inputs {ins:?}")));
                    }
                    Shape::new(1, ins.iter().map(|s| s.c).sum(), first.h, first.w)
                }
                LayerKind::ResidualAdd => {
                    if ins[0] != ins[1] {
                        return Err(config_err(node, format!("cannot add {} and {}", ins[0], ins[1])));
                    }
                    ins[0]
                }
                LayerKind::SoftmaxXent => {
                    if (ins[0].h, ins[0].w) != (1, 1) {
                        return Err(config_err(node, format!("expects (n, K, 1, 1) logits, got {}", ins[0])));
                    }
                    ins[0]
                }
            };
            shapes.push(shape);
        }

        Ok(LayerGraph {
            nodes,
            inputs,
            shapes,
            node_params,
            params,
            input_shape,
            input_node,
            loss_node,
            output_node,
            rng: MaskRng::new(0),
        })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn node_inputs(&self, node: usize) -> &[usize] {
        &self.inputs[node]
    }

    /// Output shape of `node` for a batch of one.
    pub fn node_shape(&self, node: usize) -> Shape {
        self.shapes[node]
    }

    pub fn input_shape(&self) -> InputShape {
        self.input_shape
    }

    pub fn output_shape(&self) -> Shape {
        self.shapes[self.output_node]
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn node_params(&self, node: usize) -> &[usize] {
        &self.node_params[node]
    }

    pub fn param(&self, name: &str) -> Option<&Param<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn rng_state(&self) -> RngState {
        self.rng.state()
    }

    pub fn set_rng_state(&mut self, state: RngState) {
        self.rng = MaskRng::from_state(state);
    }

    /// Restarts the dropout generator from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = MaskRng::new(seed);
    }

    /// Same graph and parameters in another element type.
    pub fn cast<T: Scalar>(&self) -> LayerGraph<T> {
        LayerGraph {
            nodes: self.nodes.clone(),
            inputs: self.inputs.clone(),
            shapes: self.shapes.clone(),
            node_params: self.node_params.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    node: p.node,
                    role: p.role,
                    l2: p.l2,
                    value: p.value.cast(),
                })
                .collect(),
            input_shape: self.input_shape,
            input_node: self.input_node,
            loss_node: self.loss_node,
            output_node: self.output_node,
            rng: self.rng.clone(),
        }
    }

    /// Copies parameter values by name from `other` (shapes must agree).
    pub fn load_params_from(&mut self, other: &LayerGraph<S>) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .param(&p.name)
                .ok_or_else(|| Error::Config(format!("parameter '{}' missing from source graph", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::shape("load_params_from", p.value.shape(), src.value.shape()));
            }
            p.value = src.value.clone();
        }
        Ok(())
    }

    fn check_batch(&self, x: &Tensor<S>) -> Result<()> {
        let s = x.shape();
        let want = self.input_shape;
        if (s.c, s.h, s.w) != (want.channels, want.height, want.width) {
            return Err(Error::shape("graph input", want.batch(s.n), s));
        }
        Ok(())
    }

    fn weight(&self, node: usize, k: usize) -> &Tensor<S> {
        &self.params[self.node_params[node][k]].value
    }

    fn forward_pass(&mut self, x: &Tensor<S>, labels: Option<&[usize]>, mode: Mode, stop: Option<usize>) -> Result<Pass<S>> {
        self.check_batch(x)?;
        let count = self.nodes.len();
        let last = stop.unwrap_or(count - 1);
        let mut acts: Vec<Option<Tensor<S>>> = vec![None; count];
        let mut caches: Vec<Cache<S>> = (0..count).map(|_| Cache::None).collect();
        let mut xent = None;
        for i in 0..=last {
            let ins = &self.inputs[i];
            let arg = |k: usize| acts[ins[k]].as_ref().expect("topological order");
            let out = match &self.nodes[i].kind {
                LayerKind::Input => x.clone(),
                LayerKind::Conv { spec, bias } => {
                    let b = bias.then(|| self.weight(i, 1).data());
                    conv2d(arg(0), self.weight(i, 0), b, spec)?
                }
                LayerKind::Rcl { spec, steps } => {
                    let (y, cache) =
                        rcl_forward(arg(0), self.weight(i, 0), self.weight(i, 1), self.weight(i, 2).data(), *steps, spec)?;
                    if mode == Mode::Train {
                        caches[i] = Cache::Rcl(cache);
                    }
                    y
                }
                LayerKind::Relu => relu(arg(0)),
                LayerKind::Lrn(attrs) => lrn(arg(0), attrs)?,
                LayerKind::Dropout { rate } => {
                    let (y, mask) = dropout(arg(0), *rate, mode, &mut self.rng)?;
                    if let Some(mask) = mask {
                        caches[i] = Cache::Mask(mask);
                    }
                    y
                }
                LayerKind::Pool(spec) => pool2d(arg(0), spec)?,
                LayerKind::Gap => global_avg_pool(arg(0))?,
                LayerKind::Concat => {
                    let parts: Vec<&Tensor<S>> = ins.iter().map(|&j| acts[j].as_ref().unwrap()).collect();
                    concat_channels(&parts)?
                }
                LayerKind::ResidualAdd => add(arg(0), arg(1))?,
                LayerKind::SoftmaxXent => match labels {
                    Some(labels) => {
                        let out = softmax_xent(arg(0), labels)?;
                        let probs = out.probs.clone();
                        xent = Some(out);
                        probs
                    }
                    None => continue,
                },
            };
            acts[i] = Some(out);
        }
        Ok(Pass { acts, caches, xent })
    }

    /// Logits for a batch (loss node skipped).
    pub fn predict(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let out = self.output_node;
        let mut pass = self.forward_pass(x, None, mode, Some(out))?;
        Ok(pass.acts[out].take().unwrap())
    }

    /// Forward through the loss; in train mode also backward, yielding
    /// gradients for every parameter. Infer mode produces no gradients and
    /// turns dropout into the identity.
    pub fn run(&mut self, x: &Tensor<S>, labels: &[usize], mode: Mode) -> Result<StepOutput<S>> {
        let loss_node = self
            .loss_node
            .ok_or_else(|| Error::Config("graph has no loss node".into()))?;
        let pass = self.forward_pass(x, Some(labels), mode, None)?;
        let xent = pass.xent.as_ref().unwrap();
        let (loss, correct) = (xent.loss, xent.correct);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss is {loss}")));
        }
        let logits = pass.acts[self.output_node].clone().unwrap();
        let grads = match mode {
            Mode::Infer => None,
            Mode::Train => Some(self.backward(pass, loss_node)?),
        };
        Ok(StepOutput {
            loss,
            correct,
            count: labels.len(),
            logits,
            grads,
        })
    }

    fn backward(&self, pass: Pass<S>, loss_node: usize) -> Result<Gradients<S>> {
        let Pass { acts, mut caches, xent } = pass;
        let mut upstream: Vec<Option<Tensor<S>>> = vec![None; self.nodes.len()];
        upstream[self.inputs[loss_node][0]] = Some(xent.unwrap().grad_logits);
        let mut param_grads: Vec<Tensor<S>> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();

        fn accumulate<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) -> Result<()> {
            *slot = Some(match slot.take() {
                Some(prev) => add(&prev, &g)?,
                None => g,
            });
            Ok(())
        }
        fn bias_tensor<S: Scalar>(b: Vec<S>) -> Tensor<S> {
            let n = b.len();
            Tensor::new([n, 1, 1, 1], b).unwrap()
        }

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = upstream[i].take() else { continue };
            let ins = &self.inputs[i];
            let arg = |k: usize| acts[ins[k]].as_ref().unwrap();
            let pidx = &self.node_params[i];
            match &self.nodes[i].kind {
                LayerKind::Input | LayerKind::SoftmaxXent => {}
                LayerKind::Conv { spec, bias } => {
                    let cg = conv2d_grad(arg(0), self.weight(i, 0), spec, &g)?;
                    param_grads[pidx[0]] = cg.grad_w;
                    if *bias {
                        param_grads[pidx[1]] = bias_tensor(cg.grad_b);
                    }
                    accumulate(&mut upstream[ins[0]], cg.grad_x)?;
                }
                LayerKind::Rcl { spec, .. } => {
                    let Cache::Rcl(cache) = std::mem::replace(&mut caches[i], Cache::None) else {
                        return Err(Error::Internal(format!("missing RCL cache for '{}'", self.nodes[i].id)));
                    };
                    let rg = rcl_backward(&cache, self.weight(i, 0), self.weight(i, 1), spec, &g)?;
                    param_grads[pidx[0]] = rg.grad_w_f;
                    param_grads[pidx[1]] = rg.grad_w_r;
                    param_grads[pidx[2]] = bias_tensor(rg.grad_b);
                    accumulate(&mut upstream[ins[0]], rg.grad_x)?;
                }
                LayerKind::Relu => {
                    let gx = relu_grad(acts[i].as_ref().unwrap(), &g)?;
                    accumulate(&mut upstream[ins[0]], gx)?;
                }
                LayerKind::Lrn(attrs) => accumulate(&mut upstream[ins[0]], lrn_grad(arg(0), attrs, &g)?)?,
                LayerKind::Dropout { .. } => {
                    let Cache::Mask(mask) = &caches[i] else {
                        return Err(Error::Internal(format!("missing dropout mask for '{}'", self.nodes[i].id)));
                    };
                    accumulate(&mut upstream[ins[0]], dropout_grad(mask, &g)?)?;
                }
                LayerKind::Pool(spec) => accumulate(&mut upstream[ins[0]], pool2d_grad(arg(0), spec, &g)?)?,
                LayerKind::Gap => accumulate(&mut upstream[ins[0]], global_avg_pool_grad(arg(0).shape(), &g)?)?,
                LayerKind::Concat => {
                    let channels: Vec<usize> = ins.iter().map(|&j| self.shapes[j].c).collect();
                    for (&j, part) in ins.iter().zip(split_channels(&g, &channels)?) {
                        accumulate(&mut upstream[j], part)?;
                    }
                }
                LayerKind::ResidualAdd => {
                    accumulate(&mut upstream[ins[0]], g.clone())?;
                    accumulate(&mut upstream[ins[1]], g)?;
                }
            }
        }
        for (p, g) in self.params.iter().zip(&param_grads) {
            g.ensure_finite(&format!("gradient of {}", p.name))?;
        }
        Ok(Gradients {
            names: self.params.iter().map(|p| p.name.clone()).collect(),
            tensors: param_grads,
        })
    }

    /// Pre-activation output of a conv or RCL node on `x`, with dropout off.
    /// RCL nodes report their feedforward pre-activation (no recurrence).
    pub fn preactivation(&mut self, x: &Tensor<S>, node: usize) -> Result<Tensor<S>> {
        let src = self.inputs[node][0];
        let last = self.inputs[node].iter().copied().max().unwrap_or(0);
        let pass = self.forward_pass(x, None, Mode::Infer, Some(last))?;
        let input = pass.acts[src].as_ref().unwrap();
        match &self.nodes[node].kind {
            LayerKind::Conv { spec, bias } => {
                let b = bias.then(|| self.weight(node, 1).data());
                conv2d(input, self.weight(node, 0), b, spec)
            }
            LayerKind::Rcl { spec, .. } => conv2d(input, self.weight(node, 0), Some(self.weight(node, 2).data()), spec),
            _ => Err(Error::Config(format!("node '{}' has no pre-activation", self.nodes[node].id))),
        }
    }
}
