use serde::{Deserialize, Serialize};

use crate::model::ClusterTopology;

pub const BYTES_PER_PARAM: u64 = 4;

/// Compute and link costs. Link parameters come from the topology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Seconds of compute per token per layer.
    pub seconds_per_token_layer: f64,
    /// Tokens per accumulation step per device.
    pub batch_tokens: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            seconds_per_token_layer: 6e-7,
            batch_tokens: 4096,
        }
    }
}

impl CostModel {
    pub fn compute_time(&self, layers: usize) -> f64 {
        self.seconds_per_token_layer * self.batch_tokens as f64 * layers as f64
    }
}

/// Ring allreduce of `bytes` over `g` devices:
/// `2(g−1)α + 2(g−1)/g · bytes/β`, using the inter-node link if the group
/// spans nodes. Zero for `g ≤ 1`.
pub fn allreduce_time(topo: &ClusterTopology, g: usize, spans_nodes: bool, bytes: u64) -> f64 {
    if g <= 1 {
        return 0.0;
    }
    let (alpha, beta) = if spans_nodes {
        (topo.alpha_inter, topo.beta_inter)
    } else {
        (topo.alpha_intra, topo.beta_intra)
    };
    let steps = (g - 1) as f64;
    2.0 * steps * alpha + 2.0 * steps / g as f64 * bytes as f64 / beta
}
