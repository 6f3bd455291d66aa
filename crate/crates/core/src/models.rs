//! IRCNN blocks, transaction blocks and whole-model assembly for the three
//! variants (IRCNN, EIN, EIRN).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{GraphBuilder, InputShape, LayerGraph, LayerKind, LrnAttrs};
use crate::tensor::{ConvSpec, Padding, PoolSpec, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Recurrent convolution layers in every branch.
    Ircnn,
    /// Each RCL replaced by two unshared conv+ReLU layers.
    Ein,
    /// EIN plus a residual shortcut around every block.
    Eirn,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Ircnn, Variant::Ein, Variant::Eirn];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Ircnn => "ircnn",
            Variant::Ein => "ein",
            Variant::Eirn => "eirn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ircnn" => Ok(Variant::Ircnn),
            "ein" => Ok(Variant::Ein),
            "eirn" => Ok(Variant::Eirn),
            other => Err(Error::Config(format!("unknown variant '{other}' (expected ircnn, ein or eirn)"))),
        }
    }
}

/// Where the block's LRN sits relative to the branch concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrnPlacement {
    #[default]
    PerBranch,
    AfterConcat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrcnnBlockConfig {
    pub c_1x1: usize,
    pub c_3x3: usize,
    pub c_pool_1x1: usize,
    /// Recurrence steps of every RCL in the block.
    pub steps: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl IrcnnBlockConfig {
    pub fn out_channels(&self) -> usize {
        self.c_1x1 + self.c_3x3 + self.c_pool_1x1
    }

    fn validate(&self) -> Result<()> {
        if self.c_1x1 == 0 || self.c_3x3 == 0 || self.c_pool_1x1 == 0 {
            return Err(Error::Config(format!("IRCNN block branch widths must be positive, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransactionBlockConfig {
    pub conv: ConvSpec,
    #[serde(default)]
    pub has_maxpool: bool,
    #[serde(default)]
    pub has_gap: bool,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

impl TransactionBlockConfig {
    fn validate(&self) -> Result<()> {
        if self.has_maxpool && self.has_gap {
            return Err(Error::Config("transaction block cannot have both max pooling and global average pooling".into()));
        }
        if self.conv.out_channels == 0 {
            return Err(Error::Config("transaction conv needs at least one output channel".into()));
        }
        Ok(())
    }
}

fn default_dropout() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub block: IrcnnBlockConfig,
    pub transaction: TransactionBlockConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub preset: String,
    pub variant: Variant,
    pub input: InputShape,
    pub classes: usize,
    pub stem: ConvSpec,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub lrn: LrnAttrs,
    #[serde(default)]
    pub lrn_placement: LrnPlacement,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model config serializes")
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        ModelConfig { variant, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("model needs at least one stage".into()));
        }
        for s in &self.stages {
            s.block.validate()?;
            s.transaction.validate()?;
        }
        let last = self.stages.last().unwrap();
        if !last.transaction.has_gap {
            return Err(Error::Config("final transaction block must end in global average pooling".into()));
        }
        if self.stages[..self.stages.len() - 1].iter().any(|s| s.transaction.has_gap) {
            return Err(Error::Config("only the final transaction block may use global average pooling".into()));
        }
        if self.preset == "paper" {
            if self.stages.len() != 3 {
                return Err(Error::Config(format!("paper preset has 3 stages, got {}", self.stages.len())));
            }
            let t = &self.stages[1].transaction;
            if t.has_maxpool || t.has_gap {
                return Err(Error::Config("paper preset's second transaction block has no pooling".into()));
            }
        }
        self.lrn.validate()
    }

    /// The full-size CIFAR-100 configuration (about 3.12M parameters).
    pub fn paper() -> Self {
        let block = |a, b, c| IrcnnBlockConfig { c_1x1: a, c_3x3: b, c_pool_1x1: c, steps: 2, dropout: 0.5 };
        let trans = |co, has_maxpool, has_gap| TransactionBlockConfig {
            conv: ConvSpec::same(3, co),
            has_maxpool,
            has_gap,
            dropout: 0.5,
        };
        ModelConfig {
            preset: "paper".into(),
            variant: Variant::Ircnn,
            input: InputShape { channels: 3, height: 32, width: 32 },
            classes: 100,
            stem: ConvSpec::same(3, 64),
            stages: vec![
                Stage { block: block(64, 96, 64), transaction: trans(224, true, false) },
                Stage { block: block(96, 128, 96), transaction: trans(320, false, false) },
                Stage { block: block(128, 160, 128), transaction: trans(82, false, true) },
            ],
            lrn: LrnAttrs::default(),
            lrn_placement: LrnPlacement::PerBranch,
        }
    }

    /// Small MNIST-sized model; every shortcut is an identity.
    pub fn tiny() -> Self {
        let block = |steps| IrcnnBlockConfig { c_1x1: 4, c_3x3: 8, c_pool_1x1: 4, steps, dropout: 0.5 };
        let trans = |has_maxpool, has_gap| TransactionBlockConfig {
            conv: ConvSpec::same(3, 16),
            has_maxpool,
            has_gap,
            dropout: 0.5,
        };
        ModelConfig {
            preset: "tiny".into(),
            variant: Variant::Ircnn,
            input: InputShape { channels: 1, height: 28, width: 28 },
            classes: 10,
            stem: ConvSpec::same(3, 16),
            stages: vec![
                Stage { block: block(1), transaction: trans(true, false) },
                Stage { block: block(2), transaction: trans(false, false) },
                Stage { block: block(3), transaction: trans(false, true) },
            ],
            lrn: LrnAttrs::default(),
            lrn_placement: LrnPlacement::PerBranch,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected paper or tiny)"))),
        }
    }
}

/// Adds a recurrent branch core (RCL, or its EIN replacement) and returns
/// the id of its activated output.
fn branch_core(b: &mut GraphBuilder, id: &str, input: &str, spec: ConvSpec, steps: usize, variant: Variant) -> String {
    match variant {
        Variant::Ircnn => b.add_regularized(format!("{id}.rcl"), LayerKind::Rcl { spec, steps }, &[input]),
        Variant::Ein | Variant::Eirn => {
            // Two unshared kernels mirror w_f and w_r; only the first carries
            // a bias so the parameter count matches the RCL exactly.
            let c1 = b.add_regularized(format!("{id}.conv1"), LayerKind::Conv { spec, bias: true }, &[input]);
            let r1 = b.add(format!("{id}.relu1"), LayerKind::Relu, &[&c1]);
            let c2 = b.add_regularized(format!("{id}.conv2"), LayerKind::Conv { spec, bias: false }, &[&r1]);
            b.add(format!("{id}.relu2"), LayerKind::Relu, &[&c2])
        }
    }
}

/// Appends an IRCNN block reading `input` (with `in_channels` channels) and
/// returns the id of its output node.
pub fn build_ircnn_block(
    b: &mut GraphBuilder,
    prefix: &str,
    input: &str,
    in_channels: usize,
    cfg: &IrcnnBlockConfig,
    variant: Variant,
    lrn: LrnAttrs,
    placement: LrnPlacement,
) -> Result<String> {
    cfg.validate()?;
    let pool = b.add(format!("{prefix}.pool.avg"), LayerKind::Pool(PoolSpec::smoothing_avg()), &[input]);
    let branches = [
        ("b1x1", input.to_string(), ConvSpec::same(1, cfg.c_1x1)),
        ("b3x3", input.to_string(), ConvSpec::same(3, cfg.c_3x3)),
        ("pool", pool, ConvSpec::same(1, cfg.c_pool_1x1)),
    ];
    let mut outs = Vec::new();
    for (name, src, spec) in branches {
        let id = format!("{prefix}.{name}");
        let mut y = branch_core(b, &id, &src, spec, cfg.steps, variant);
        if placement == LrnPlacement::PerBranch {
            let n = b.add(format!("{id}.lrn"), LayerKind::Lrn(lrn), &[&y]);
            y = b.add(format!("{id}.drop"), LayerKind::Dropout { rate: cfg.dropout }, &[&n]);
        }
        outs.push(y);
    }
    let refs: Vec<&str> = outs.iter().map(String::as_str).collect();
    let mut out = b.add(format!("{prefix}.concat"), LayerKind::Concat, &refs);
    if placement == LrnPlacement::AfterConcat {
        let n = b.add(format!("{prefix}.lrn"), LayerKind::Lrn(lrn), &[&out]);
        out = b.add(format!("{prefix}.drop"), LayerKind::Dropout { rate: cfg.dropout }, &[&n]);
    }
    if variant == Variant::Eirn {
        let shortcut = if in_channels == cfg.out_channels() {
            input.to_string()
        } else {
            let spec = ConvSpec::same(1, cfg.out_channels());
            b.add(format!("{prefix}.proj"), LayerKind::Conv { spec, bias: false }, &[input])
        };
        out = b.add(format!("{prefix}.residual"), LayerKind::ResidualAdd, &[&out, &shortcut]);
    }
    Ok(out)
}

pub fn build_transaction_block(b: &mut GraphBuilder, prefix: &str, input: &str, cfg: &TransactionBlockConfig) -> Result<String> {
    cfg.validate()?;
    let c = b.add(format!("{prefix}.conv"), LayerKind::Conv { spec: cfg.conv, bias: true }, &[input]);
    let mut y = b.add(format!("{prefix}.relu"), LayerKind::Relu, &[&c]);
    if cfg.has_maxpool {
        y = b.add(format!("{prefix}.maxpool"), LayerKind::Pool(PoolSpec::overlapping_max()), &[&y]);
    }
    if cfg.has_gap {
        y = b.add(format!("{prefix}.gap"), LayerKind::Gap, &[&y]);
    }
    Ok(b.add(format!("{prefix}.drop"), LayerKind::Dropout { rate: cfg.dropout }, &[&y]))
}

/// Builder for the whole model: stem, stages, 1x1 classifier and loss.
pub fn model_builder(cfg: &ModelConfig) -> Result<GraphBuilder> {
    cfg.validate()?;
    let mut b = GraphBuilder::new();
    b.add("input", LayerKind::Input, &[]);
    let stem = b.add("stem.conv", LayerKind::Conv { spec: cfg.stem, bias: true }, &["input"]);
    let mut x = b.add("stem.relu", LayerKind::Relu, &[&stem]);
    let mut channels = cfg.stem.out_channels;
    for (i, stage) in cfg.stages.iter().enumerate() {
        let n = i + 1;
        x = build_ircnn_block(&mut b, &format!("block{n}"), &x, channels, &stage.block, cfg.variant, cfg.lrn, cfg.lrn_placement)?;
        x = build_transaction_block(&mut b, &format!("trans{n}"), &x, &stage.transaction)?;
        channels = stage.transaction.conv.out_channels;
    }
    let spec = ConvSpec { padding: Padding::Valid, ..ConvSpec::same(1, cfg.classes) };
    b.add("logits", LayerKind::Conv { spec, bias: true }, &[&x]);
    b.add("loss", LayerKind::SoftmaxXent, &["logits"]);
    Ok(b)
}

pub fn build_model<S: Scalar>(cfg: &ModelConfig) -> Result<LayerGraph<S>> {
    model_builder(cfg)?.build(cfg.input)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// (node id, parameter count) for every node that owns parameters.
    pub per_node: Vec<(String, usize)>,
}

pub fn count_params<S: Scalar>(graph: &LayerGraph<S>) -> ParamCount {
    let per_node = graph
        .nodes()
        .iter()
        .enumerate()
        .filter(|(i, _)| !graph.node_params(*i).is_empty())
        .map(|(i, n)| {
            let count = graph.node_params(i).iter().map(|&p| graph.params()[p].value.len()).sum();
            (n.id.clone(), count)
        })
        .collect();
    ParamCount { total: graph.param_count(), per_node }
}
