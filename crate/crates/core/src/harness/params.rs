use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::LayerGraph;
use crate::models::{build_model, count_params, ModelConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsReport {
    pub preset: String,
    pub variant: Variant,
    pub total: usize,
    pub per_node: Vec<(String, usize)>,
    /// Totals for every variant, when comparing.
    pub variants: Option<Vec<(Variant, usize)>>,
}

impl ParamsReport {
    /// IRCNN and EIN totals agree (vacuously true without a comparison).
    pub fn parity_ok(&self) -> bool {
        let Some(v) = &self.variants else { return true };
        let get = |x: Variant| v.iter().find(|(k, _)| *k == x).map(|(_, n)| *n);
        get(Variant::Ircnn) == get(Variant::Ein)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{} / {}\n", self.preset, self.variant);
        let width = self.per_node.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(5);
        for (node, n) in &self.per_node {
            s += &format!("  {node:<width$}  {n:>9}\n");
        }
        s += &format!("  {:<width$}  {:>9}\n", "total", self.total);
        if let Some(v) = &self.variants {
            let ein = v.iter().find(|(k, _)| *k == Variant::Ein).map(|(_, n)| *n).unwrap_or(0);
            for (k, n) in v {
                let delta = *n as i64 - ein as i64;
                s += &format!("  {k:<6} {n:>9}  (vs ein {delta:+})\n");
            }
            s += if self.parity_ok() { "parity ircnn = ein: ok\n" } else { "parity ircnn = ein: FAIL\n" };
        }
        s
    }
}

pub fn cmd_params(model: &ModelConfig, compare_variants: bool) -> Result<ParamsReport> {
    let graph: LayerGraph<f32> = build_model(model)?;
    let counts = count_params(&graph);
    let variants = if compare_variants {
        let mut v = Vec::new();
        for variant in Variant::ALL {
            let g: LayerGraph<f32> = build_model(&model.with_variant(variant))?;
            v.push((variant, g.param_count()));
        }
        Some(v)
    } else {
        None
    };
    Ok(ParamsReport {
        preset: model.preset.clone(),
        variant: model.variant,
        total: counts.total,
        per_node: counts.per_node,
        variants,
    })
}
