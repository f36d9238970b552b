//! Trainable networks: neighbor-aggregation MLPs, the view / panorama /
//! instruction encoders, the distance-aware cross-modal graph encoder, and
//! the alignment losses.
//!
//! All forward passes are written against [`Graph`] so one implementation
//! serves training, gradient checking, and inference.

mod encoders;
mod graph;
mod losses;
mod mlp;

pub use encoders::{encode_instruction, encode_panorama, encode_view, sinusoid_rows, sinusoid_xy};
pub use graph::{encode_graph_nodes, gasa_block, score_nodes};
pub use losses::{l_region, l_rgbd, l_view};
pub use mlp::{aggregate_point, mlp_feature_batch, mlp_rgbd_batch, NeighborBatch};

use crate::autodiff::{Array, BoundParams, Graph, ParamSet, Tid};
use crate::error::Result;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Structural hyperparameters shared by all networks.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Feature dimension D.
    pub dim: usize,
    /// Neighbors aggregated per sample point (K).
    pub knn_k: usize,
    pub heads: usize,
    pub view_layers: usize,
    pub panorama_layers: usize,
    pub graph_layers: usize,
    pub ffn_mult: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_views: usize,
    pub max_instruction_len: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            knn_k: 4,
            heads: 4,
            view_layers: 4,
            panorama_layers: 2,
            graph_layers: 4,
            ffn_mult: 4,
            grid_h: 7,
            grid_w: 7,
            n_views: 12,
            max_instruction_len: 48,
        }
    }
}

impl NetConfig {
    /// Miniature configuration for gradient checks.
    pub fn miniature() -> Self {
        Self {
            dim: 8,
            knn_k: 2,
            heads: 2,
            view_layers: 1,
            panorama_layers: 1,
            graph_layers: 1,
            ffn_mult: 2,
            grid_h: 2,
            grid_w: 2,
            n_views: 3,
            max_instruction_len: 12,
        }
    }

    pub fn head_dim(&self) -> usize {
        debug_assert_eq!(self.dim % self.heads, 0, "dim must divide heads");
        self.dim / self.heads
    }
}

/// Instruction vocabulary: the 16 class names plus direction tokens.
pub fn instruction_vocab() -> Vec<String> {
    let mut v: Vec<String> = crate::worldgen::CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    for t in ["left", "right", "forward", "stop", "then"] {
        v.push(t.to_string());
    }
    v
}

pub fn token_id(vocab: &[String], token: &str) -> Option<usize> {
    vocab.iter().position(|t| t == token)
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

pub(crate) struct Init<'r, R: Rng> {
    rng: &'r mut R,
}

impl<'r, R: Rng> Init<'r, R> {
    fn gauss(&mut self) -> f64 {
        let u1: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = self.rng.gen_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    fn linear(&mut self, params: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize) {
        let std = 1.0 / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.gauss() * std).collect();
        params.insert(format!("{prefix}.w"), Array::matrix(fan_in, fan_out, data));
        params.insert(format!("{prefix}.b"), Array::zeros(vec![fan_out]));
    }

    fn table(&mut self, params: &mut ParamSet, name: &str, rows: usize, cols: usize, std: f64) {
        let data = (0..rows * cols).map(|_| self.gauss() * std).collect();
        params.insert(name.to_string(), Array::matrix(rows, cols, data));
    }

    fn attention(&mut self, params: &mut ParamSet, prefix: &str, dim: usize) {
        for name in ["wq", "wk", "wv", "wo"] {
            self.linear(params, &format!("{prefix}.{name}"), dim, dim);
        }
    }

    fn ffn(&mut self, params: &mut ParamSet, prefix: &str, dim: usize, mult: usize) {
        self.linear(params, &format!("{prefix}.ffn1"), dim, dim * mult);
        self.linear(params, &format!("{prefix}.ffn2"), dim * mult, dim);
    }
}

fn mlp_params<R: Rng>(init: &mut Init<R>, params: &mut ParamSet, prefix: &str, cfg: &NetConfig, head: &str, head_out: usize) {
    let d = cfg.dim;
    init.linear(params, &format!("{prefix}.pos"), 6, d);
    init.linear(params, &format!("{prefix}.fc1"), cfg.knn_k * d, d);
    init.linear(params, &format!("{prefix}.fc2"), d, d);
    init.linear(params, &format!("{prefix}.fc3"), d, d);
    init.linear(params, &format!("{prefix}.{head}"), d, head_out);
    init.linear(params, &format!("{prefix}.sigma"), d, 1);
}

/// Parameters of the rendering model: both MLPs and the view encoder.
pub fn init_hnr_params(cfg: &NetConfig, seed: u64) -> ParamSet {
    let mut rng = crate::rng::stream(seed, crate::rng::streams::PARAM_INIT);
    let mut init = Init { rng: &mut rng };
    let mut p = ParamSet::new();
    let d = cfg.dim;
    mlp_params(&mut init, &mut p, "featmlp", cfg, "latent", d);
    mlp_params(&mut init, &mut p, "rgbdmlp", cfg, "color", 3);
    init.table(&mut p, "viewenc.token", 1, d, 0.02);
    init.table(&mut p, "viewenc.pos", 1 + cfg.grid_h * cfg.grid_w, d, 0.02);
    for l in 0..cfg.view_layers {
        init.attention(&mut p, &format!("viewenc.l{l}.attn"), d);
        init.ffn(&mut p, &format!("viewenc.l{l}"), d, cfg.ffn_mult);
    }
    p
}

/// Parameters of the planner model: panorama and instruction encoders, the
/// cross-modal graph encoder, the score head, and node-type embeddings.
pub fn init_vln_params(cfg: &NetConfig, seed: u64) -> ParamSet {
    let mut rng = crate::rng::stream(seed ^ 0xa5a5_5a5a, crate::rng::streams::PARAM_INIT);
    let mut init = Init { rng: &mut rng };
    let mut p = ParamSet::new();
    let d = cfg.dim;
    init.table(&mut p, "panoenc.pos", cfg.n_views, d, 0.02);
    for l in 0..cfg.panorama_layers {
        init.attention(&mut p, &format!("panoenc.l{l}.attn"), d);
        init.ffn(&mut p, &format!("panoenc.l{l}"), d, cfg.ffn_mult);
    }
    let vocab = instruction_vocab();
    init.table(&mut p, "instr.embed", vocab.len(), d, 0.5);
    init.attention(&mut p, "instr.l0.attn", d);
    init.ffn(&mut p, "instr.l0", d, cfg.ffn_mult);
    for l in 0..cfg.graph_layers {
        init.attention(&mut p, &format!("graphenc.l{l}.cross"), d);
        init.attention(&mut p, &format!("graphenc.l{l}.gasa"), d);
        init.table(&mut p, &format!("graphenc.l{l}.gasa.we"), 1, cfg.heads, 0.02);
        init.ffn(&mut p, &format!("graphenc.l{l}"), d, cfg.ffn_mult);
    }
    init.linear(&mut p, "graphenc.score1", d, d);
    init.linear(&mut p, "graphenc.score2", d, 1);
    init.table(&mut p, "graphenc.stop", 1, d, 0.02);
    // Node type embeddings: visited / candidate / lookahead / stop.
    init.table(&mut p, "graphenc.type", 4, d, 0.02);
    // Projection of the sinusoidal relative-position code onto D.
    init.linear(&mut p, "graphenc.posproj", SINUSOID_XY_DIM, d);
    p
}

/// Width of the sinusoidal (Δx, Δy) code before projection.
pub const SINUSOID_XY_DIM: usize = 16;

// ---------------------------------------------------------------------------
// Shared building blocks
// ---------------------------------------------------------------------------

/// x·W + b under the given parameter prefix.
pub(crate) fn linear(g: &mut Graph, bound: &BoundParams, prefix: &str, x: Tid) -> Result<Tid> {
    let h = g.matmul(x, bound.tid(&format!("{prefix}.w")))?;
    g.add(h, bound.tid(&format!("{prefix}.b")))
}

/// Multi-head attention core: queries from `q_src`, keys/values from
/// `kv_src`, optional per-head additive logit bias.
pub(crate) fn attention(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    cfg: &NetConfig,
    q_src: Tid,
    kv_src: Tid,
    bias: Option<&dyn Fn(&mut Graph, usize) -> Result<Tid>>,
) -> Result<Tid> {
    let dh = cfg.head_dim();
    let q = linear(g, bound, &format!("{prefix}.wq"), q_src)?;
    let k = linear(g, bound, &format!("{prefix}.wk"), kv_src)?;
    let v = linear(g, bound, &format!("{prefix}.wv"), kv_src)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh)?;
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh)?;
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh)?;
        let kt = g.transpose(kh)?;
        let logits = g.matmul(qh, kt)?;
        let mut logits = g.scale(logits, 1.0 / (dh as f64).sqrt())?;
        if let Some(bias_fn) = bias {
            let b = bias_fn(g, h)?;
            logits = g.add(logits, b)?;
        }
        let attn = g.softmax(logits)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let o = g.concat(&heads, 1)?;
    linear(g, bound, &format!("{prefix}.wo"), o)
}

/// Pre-norm residual feed-forward.
pub(crate) fn ffn_block(g: &mut Graph, bound: &BoundParams, prefix: &str, x: Tid) -> Result<Tid> {
    let xn = g.layer_norm(x)?;
    let h = linear(g, bound, &format!("{prefix}.ffn1"), xn)?;
    let h = g.relu(h)?;
    let h = linear(g, bound, &format!("{prefix}.ffn2"), h)?;
    g.add(x, h)
}

/// Pre-norm residual self-attention followed by a feed-forward block.
pub(crate) fn transformer_block(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    cfg: &NetConfig,
    x: Tid,
) -> Result<Tid> {
    let xn = g.layer_norm(x)?;
    let att = attention(g, bound, &format!("{prefix}.attn"), cfg, xn, xn, None)?;
    let x = g.add(x, att)?;
    ffn_block(g, bound, prefix, x)
}
