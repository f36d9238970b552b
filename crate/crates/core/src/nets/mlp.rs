//! Neighbor-aggregation MLPs for latent/density and color/density heads.
//!
//! Each sample point gathers its k nearest cloud entries. Per neighbor, a
//! positional code `LN(W·[P_rel, θ_rel, s])` is added element-wise onto the
//! stored feature; the K slots are concatenated (missing slots zero-filled)
//! and pushed through three FC/LN/ReLU blocks and two heads.

use super::{linear, NetConfig};
use crate::autodiff::{Array, BoundParams, Graph, Tid};
use crate::error::{HnrError, Result};

/// Inputs for a batch of sample points, in (sample-major, slot-minor) row
/// order: `batch` rows of K slots each.
#[derive(Debug, Clone)]
pub struct NeighborBatch {
    pub batch: usize,
    /// [batch·K, D] stored features; zero rows for missing slots.
    pub features: Array,
    /// [batch·K, 6] positional inputs [P_rel(3), θ_rel(2), s(1)].
    pub positional: Array,
    /// [batch·K, 1] → broadcast over D: 1.0 real slot, 0.0 missing.
    pub mask: Vec<f64>,
}

impl NeighborBatch {
    pub fn new(batch: usize, k: usize, dim: usize) -> Self {
        Self {
            batch,
            features: Array::zeros(vec![batch * k, dim]),
            positional: Array::zeros(vec![batch * k, 6]),
            mask: vec![0.0; batch * k],
        }
    }

    /// Fill slot `slot` of sample `sample`.
    pub fn set_slot(&mut self, sample: usize, slot: usize, k: usize, feature: &[f64], positional: [f64; 6]) {
        let row = sample * k + slot;
        let d = feature.len();
        self.features.data_mut()[row * d..(row + 1) * d].copy_from_slice(feature);
        self.positional.data_mut()[row * 6..(row + 1) * 6].copy_from_slice(&positional);
        self.mask[row] = 1.0;
    }
}

fn mlp_trunk(
    g: &mut Graph,
    bound: &BoundParams,
    prefix: &str,
    cfg: &NetConfig,
    batch: &NeighborBatch,
) -> Result<Tid> {
    let d = cfg.dim;
    let k = cfg.knn_k;
    let feats = g.constant(batch.features.clone());
    let pos = g.constant(batch.positional.clone());
    // Mask materialized at [batch·K, D] so one elementwise mul zeroes
    // missing slots after the positional code is added.
    let mut mask_full = Array::zeros(vec![batch.batch * k, d]);
    for (row, &m) in batch.mask.iter().enumerate() {
        if m != 0.0 {
            mask_full.data_mut()[row * d..(row + 1) * d].fill(1.0);
        }
    }
    let mask = g.constant(mask_full);

    let q = linear(g, bound, &format!("{prefix}.pos"), pos)?;
    let q = g.layer_norm(q)?;
    let x = g.add(feats, q)?;
    let x = g.mul(x, mask)?;
    let x = g.reshape(x, vec![batch.batch, k * d])?;

    let mut h = x;
    for fc in ["fc1", "fc2", "fc3"] {
        h = linear(g, bound, &format!("{prefix}.{fc}"), h)?;
        h = g.layer_norm(h)?;
        h = g.relu(h)?;
    }
    Ok(h)
}

/// Latent/density network over a batch of sample points.
/// Returns `(latents [batch, D], densities [batch])`.
pub fn mlp_feature_batch(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &NetConfig,
    batch: &NeighborBatch,
) -> Result<(Tid, Tid)> {
    let h = mlp_trunk(g, bound, "featmlp", cfg, batch)?;
    let r = linear(g, bound, "featmlp.latent", h)?;
    let s = linear(g, bound, "featmlp.sigma", h)?;
    let s = g.softplus(s)?;
    let s = g.reshape(s, vec![batch.batch])?;
    Ok((r, s))
}

/// Color/density network over a batch of sample points.
/// Returns `(rgb [batch, 3] in [0,1], densities [batch])`.
pub fn mlp_rgbd_batch(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &NetConfig,
    batch: &NeighborBatch,
) -> Result<(Tid, Tid)> {
    let h = mlp_trunk(g, bound, "rgbdmlp", cfg, batch)?;
    let c = linear(g, bound, "rgbdmlp.color", h)?;
    let c = g.sigmoid(c)?;
    let s = linear(g, bound, "rgbdmlp.sigma", h)?;
    let s = g.softplus(s)?;
    let s = g.reshape(s, vec![batch.batch])?;
    Ok((c, s))
}

/// Single-point aggregation of up to K (feature, positional) neighbors,
/// nearest first. Zero neighbors is a contract error: callers are expected
/// to consult the empty-space predicate first.
pub fn aggregate_point(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &NetConfig,
    neighbors: &[(&[f64], [f64; 6])],
) -> Result<(Tid, Tid)> {
    if neighbors.is_empty() {
        return Err(HnrError::Contract(
            "aggregate_point with zero neighbors; use the sparse-sampling predicate".into(),
        ));
    }
    if neighbors.len() > cfg.knn_k {
        return Err(HnrError::Contract(format!(
            "{} neighbors exceeds K={}",
            neighbors.len(),
            cfg.knn_k
        )));
    }
    let mut batch = NeighborBatch::new(1, cfg.knn_k, cfg.dim);
    for (slot, (feat, pos)) in neighbors.iter().enumerate() {
        batch.set_slot(0, slot, cfg.knn_k, feat, *pos);
    }
    let (r, s) = mlp_feature_batch(g, bound, cfg, &batch)?;
    let r = g.reshape(r, vec![cfg.dim])?;
    Ok((r, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, ParamSet, Precision};
    use crate::nets::{init_hnr_params, NetConfig};

    fn mini() -> (NetConfig, ParamSet) {
        let cfg = NetConfig::miniature();
        let params = init_hnr_params(&cfg, 3);
        (cfg, params)
    }

    #[test]
    fn zero_neighbors_is_contract_error() {
        let (cfg, params) = mini();
        let mut g = Graph::new(Precision::Double);
        let bound = crate::autodiff::BoundParams::bind(&mut g, &params);
        assert!(matches!(
            aggregate_point(&mut g, &bound, &cfg, &[]),
            Err(HnrError::Contract(_))
        ));
    }

    #[test]
    fn zero_parameters_give_softplus_zero_density() {
        let cfg = NetConfig::miniature();
        let mut params = init_hnr_params(&cfg, 3);
        for (_, v) in params.iter_mut() {
            for x in v.data_mut() {
                *x = 0.0;
            }
        }
        let mut g = Graph::new(Precision::Double);
        let bound = crate::autodiff::BoundParams::bind(&mut g, &params);
        let feat = vec![0.3; cfg.dim];
        let (r, s) = aggregate_point(&mut g, &bound, &cfg, &[(&feat, [0.1, 0.2, 0.3, 0.0, 1.0, 0.05])]).unwrap();
        assert!((g.scalar_value(s) - 2.0f64.ln()).abs() < 1e-12);
        assert!(g.value(r).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_under_tied_ordering() {
        let (cfg, params) = mini();
        let feat = vec![0.5; cfg.dim];
        let pos = [0.2, -0.1, 0.0, 0.5, 0.8, 0.1];
        let run = || {
            let mut g = Graph::new(Precision::Double);
            let bound = crate::autodiff::BoundParams::bind(&mut g, &params);
            let (r, s) =
                aggregate_point(&mut g, &bound, &cfg, &[(&feat, pos), (&feat, pos)]).unwrap();
            (g.value(r).data().to_vec(), g.scalar_value(s))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn density_gradient_matches_finite_differences() {
        let (cfg, params) = mini();
        let mut rng = crate::rng::stream(8, 41);
        let f1: Vec<f64> = (0..cfg.dim).map(|_| gradcheck::randn(&mut rng, vec![1], 1.0).data()[0]).collect();
        let f2: Vec<f64> = (0..cfg.dim).map(|_| gradcheck::randn(&mut rng, vec![1], 1.0).data()[0]).collect();
        let report = gradcheck::check(&params, |g, bound| {
            let (r, s) = aggregate_point(
                g,
                bound,
                &cfg,
                &[(&f1, [0.3, -0.2, 0.1, 0.6, 0.8, 0.07]), (&f2, [-0.5, 0.4, 0.0, -0.9, 0.43, 0.12])],
            )?;
            let rsum = g.sum_all(r)?;
            let rsum = g.scale(rsum, 0.3)?;
            let total = g.add(s, rsum)?;
            g.sum_all(total)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {} at {}", report.max_rel_err, report.worst_param);
    }
}
