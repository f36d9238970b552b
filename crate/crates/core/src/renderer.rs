//! Ray sampling, sparse-sampling fast path, k-NN feature aggregation, and
//! volume-rendering composition.
//!
//! Rays are sampled uniformly from 0 to `t_max`. A sample is *active* when
//! the cloud has an entry within `sparse_radius`; inactive samples contribute
//! exactly zero latent and density without touching the network. The fast
//! path classifies samples by distance-bound marching (a 1-NN query bounds
//! how far the emptiness extends along the ray), with a conservative slack
//! so its classification is identical to evaluating the predicate at every
//! sample; the dense mode exists to assert that equivalence.
//!
//! Active samples are evaluated in waves batched across all rays of a view,
//! so network cost is a few large matrix products instead of thousands of
//! small ones. An optional transmittance cutoff stops spending waves on rays
//! that are already opaque; it is off by default and never used in training.

use crate::autodiff::{Array, BoundParams, Graph, Precision, Tid};
use crate::cloud::FeatureCloud;
use crate::error::{HnrError, Result};
use crate::geometry::{
    panorama_headings, relative_orientation, relative_position, CameraModel, Ray, Vec3,
};
use crate::nets::{encode_view, mlp_feature_batch, mlp_rgbd_batch, NeighborBatch, NetConfig};
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Samples evaluated per wave and ray before checking the transmittance
/// cutoff.
const WAVE_CHUNK: usize = 24;
/// Safety slack (meters) for the marching bounds; samples this close to the
/// sparse-radius boundary fall back to the exact per-sample predicate.
const MARCH_SLACK: f64 = 1e-6;

/// Counts view renders, for mode-contract tests.
pub static RENDER_CALLS: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SparseMode {
    /// Distance-bound marching (production).
    #[default]
    Fast,
    /// Evaluate the network wherever the per-point predicate is non-empty,
    /// with no skipping machinery.
    DensePredicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexBackend {
    #[default]
    KdTree,
    /// Exhaustive scan, for the benchmark comparison.
    LinearScan,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Samples per ray (N).
    pub n_samples: usize,
    /// Far end of every ray, meters.
    pub t_max: f64,
    pub knn_k: usize,
    pub knn_radius: f64,
    pub sparse_radius: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    /// Depth/RGB grid resolution.
    pub depth_h: usize,
    pub depth_w: usize,
    pub hfov: f64,
    pub sparse_mode: SparseMode,
    pub index: IndexBackend,
    /// Stop evaluating a ray once transmittance falls below this.
    /// `None` keeps the exact full-sum semantics (always during training).
    pub tau_cutoff: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            n_samples: 256,
            t_max: 10.0,
            knn_k: 4,
            knn_radius: 1.0,
            sparse_radius: 1.0,
            grid_h: 7,
            grid_w: 7,
            depth_h: 24,
            depth_w: 24,
            hfov: std::f64::consts::FRAC_PI_2,
            sparse_mode: SparseMode::Fast,
            index: IndexBackend::KdTree,
            tau_cutoff: None,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(HnrError::Config("n_samples must be at least 2".into()));
        }
        if self.t_max <= 0.0 {
            return Err(HnrError::Config("t_max must be positive".into()));
        }
        if !(self.sparse_radius > 0.0 && self.sparse_radius <= self.knn_radius) {
            return Err(HnrError::Config(format!(
                "need 0 < sparse_radius ({}) <= knn_radius ({}) for the fast path to be exact",
                self.sparse_radius, self.knn_radius
            )));
        }
        if let Some(c) = self.tau_cutoff {
            if !(c > 0.0 && c < 1.0) {
                return Err(HnrError::Config("tau_cutoff must be in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.t_max / (self.n_samples as f64 - 1.0)
    }
}

/// Uniform sample distances: t_n = (n−1)·t_max/(N−1), so the first sample
/// sits at the ray origin.
pub fn sample_ray(cfg: &RenderConfig) -> Vec<f64> {
    let delta = cfg.spacing();
    (0..cfg.n_samples).map(|n| n as f64 * delta).collect()
}

// ---------------------------------------------------------------------------
// Sparse-sampling classification
// ---------------------------------------------------------------------------

fn has_within(cloud: &FeatureCloud, index: IndexBackend, p: Vec3, r: f64) -> bool {
    match index {
        IndexBackend::KdTree => cloud.has_neighbor_within(p, r),
        IndexBackend::LinearScan => cloud.has_neighbor_within_linear(p, r),
    }
}

fn nearest_dist(cloud: &FeatureCloud, index: IndexBackend, p: Vec3) -> Option<f64> {
    match index {
        IndexBackend::KdTree => cloud.nearest_dist(p),
        IndexBackend::LinearScan => cloud.nearest_dist_linear(p),
    }
}

/// Indices of active samples along a ray.
pub fn active_samples(cloud: &FeatureCloud, cfg: &RenderConfig, ray: &Ray, ts: &[f64]) -> Vec<usize> {
    match cfg.sparse_mode {
        SparseMode::DensePredicate => ts
            .iter()
            .enumerate()
            .filter(|(_, &t)| has_within(cloud, cfg.index, ray.at(t), cfg.sparse_radius))
            .map(|(i, _)| i)
            .collect(),
        SparseMode::Fast => {
            let r_hat = cfg.sparse_radius;
            let mut active = Vec::new();
            let mut i = 0;
            while i < ts.len() {
                let p = ray.at(ts[i]);
                let Some(nd) = nearest_dist(cloud, cfg.index, p) else { break };
                if nd > r_hat + MARCH_SLACK {
                    // Everything closer along the ray than the emptiness
                    // bound is certainly inactive.
                    let horizon = ts[i] + (nd - r_hat) - MARCH_SLACK;
                    i += 1;
                    while i < ts.len() && ts[i] < horizon {
                        i += 1;
                    }
                } else if nd <= r_hat - MARCH_SLACK {
                    // Certainly active, as are samples within the occupancy
                    // bound.
                    let horizon = ts[i] + (r_hat - nd) - MARCH_SLACK;
                    active.push(i);
                    i += 1;
                    while i < ts.len() && ts[i] < horizon {
                        active.push(i);
                        i += 1;
                    }
                } else {
                    // Boundary band: fall back to the exact predicate.
                    if has_within(cloud, cfg.index, p, r_hat) {
                        active.push(i);
                    }
                    i += 1;
                }
            }
            active
        }
    }
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

/// Volume-render values along a ray: out = Σ τ_n(1 − e^{−σ_nΔ_n})·value_n
/// with τ₁ = 1 and exclusive transmittance accumulation.
///
/// Returns `(composited [Dv], weights [n], weights_sum [1])`.
pub fn composite(g: &mut Graph, values: Tid, sigmas: Tid, deltas: &[f64]) -> Result<(Tid, Tid, Tid)> {
    let n = g.shape(sigmas)[0];
    if deltas.len() != n {
        return Err(HnrError::Shape { op: "composite", left: vec![n], right: vec![deltas.len()] });
    }
    let d = g.constant(Array::vector(deltas.to_vec()));
    let a = g.mul(sigmas, d)?;
    let cum = g.cumsum_exclusive(a)?;
    let ncum = g.neg(cum)?;
    let tau = g.exp(ncum)?;
    let na = g.neg(a)?;
    let ea = g.exp(na)?;
    let ones = g.constant(Array::full(vec![n], 1.0));
    let alpha = g.sub(ones, ea)?;
    let w = g.mul(tau, alpha)?;
    let wrow = g.reshape(w, vec![1, n])?;
    let out = g.matmul(wrow, values)?;
    let dv = g.shape(out)[1];
    let out = g.reshape(out, vec![dv])?;
    let wsum = g.sum_all(w)?;
    Ok((out, w, wsum))
}

// ---------------------------------------------------------------------------
// Batched ray evaluation
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum MlpKind {
    Feature,
    Rgbd,
}

/// Per-ray network outputs over its evaluated samples.
struct RayEval {
    /// [n_i, Dv] values (latents or rgb) and [n_i] densities; `None` when
    /// the ray had no active samples.
    values: Option<Tid>,
    sigmas: Option<Tid>,
    ts: Vec<f64>,
}

fn gather_neighbors(
    cloud: &FeatureCloud,
    cfg: &RenderConfig,
    batch: &mut NeighborBatch,
    sample_row: usize,
    k: usize,
    pos: Vec3,
    heading: f64,
) -> Result<()> {
    let neighbors = match cfg.index {
        IndexBackend::KdTree => cloud.knn_radius(pos, k, cfg.knn_radius),
        IndexBackend::LinearScan => cloud.knn_radius_linear(pos, k, cfg.knn_radius),
    };
    if neighbors.is_empty() {
        return Err(HnrError::Contract(
            "active sample has no neighbor within the k-NN radius".into(),
        ));
    }
    for (slot, nb) in neighbors.iter().enumerate() {
        let e = cloud.entry(nb.index);
        let p_rel = relative_position(e.position, pos, heading);
        let o_rel = relative_orientation(e.heading, heading);
        batch.set_slot(
            sample_row,
            slot,
            k,
            &e.feature,
            [p_rel[0], p_rel[1], p_rel[2], o_rel[0], o_rel[1], e.region_size],
        );
    }
    Ok(())
}

/// Evaluate the MLP over the active samples of many rays, in waves.
fn evaluate_rays(
    g: &mut Graph,
    bound: &BoundParams,
    netcfg: &NetConfig,
    cfg: &RenderConfig,
    cloud: &FeatureCloud,
    rays: &[Ray],
    kind: MlpKind,
) -> Result<Vec<RayEval>> {
    if cfg.knn_k != netcfg.knn_k {
        return Err(HnrError::Config(format!(
            "render knn_k ({}) must match the network's K ({})",
            cfg.knn_k, netcfg.knn_k
        )));
    }
    let ts = sample_ray(cfg);
    let actives: Vec<Vec<usize>> =
        rays.iter().map(|r| active_samples(cloud, cfg, r, &ts)).collect();

    struct State {
        consumed: usize,
        acc: f64,
        done: bool,
        pieces_v: Vec<Tid>,
        pieces_s: Vec<Tid>,
        ts: Vec<f64>,
    }
    let mut states: Vec<State> = actives
        .iter()
        .map(|a| State {
            consumed: 0,
            acc: 0.0,
            done: a.is_empty(),
            pieces_v: Vec::new(),
            pieces_s: Vec::new(),
            ts: Vec::new(),
        })
        .collect();

    let chunk = if cfg.tau_cutoff.is_some() { WAVE_CHUNK } else { usize::MAX };
    let stop_acc = cfg.tau_cutoff.map(|c| -c.ln());
    let delta = cfg.spacing();
    let k = cfg.knn_k;

    loop {
        // Plan this wave: (ray, first_active_idx, count).
        let mut plan: Vec<(usize, usize, usize)> = Vec::new();
        let mut rows = 0;
        for (ri, st) in states.iter().enumerate() {
            if st.done {
                continue;
            }
            let remaining = actives[ri].len() - st.consumed;
            let take = remaining.min(chunk);
            plan.push((ri, st.consumed, take));
            rows += take;
        }
        if plan.is_empty() {
            break;
        }

        let mut batch = NeighborBatch::new(rows, k, netcfg.dim);
        let mut row = 0;
        for &(ri, from, take) in &plan {
            let ray = &rays[ri];
            for ai in from..from + take {
                let t = ts[actives[ri][ai]];
                gather_neighbors(cloud, cfg, &mut batch, row, k, ray.at(t), ray.horizontal_heading)?;
                row += 1;
            }
        }
        let (values, sigmas) = match kind {
            MlpKind::Feature => mlp_feature_batch(g, bound, netcfg, &batch)?,
            MlpKind::Rgbd => mlp_rgbd_batch(g, bound, netcfg, &batch)?,
        };

        let mut row = 0;
        for &(ri, from, take) in &plan {
            let st = &mut states[ri];
            let v = g.slice_rows(values, row, row + take)?;
            let s = g.slice_rows(sigmas, row, row + take)?;
            st.pieces_v.push(v);
            st.pieces_s.push(s);
            for ai in from..from + take {
                st.ts.push(ts[actives[ri][ai]]);
            }
            st.consumed += take;
            for &sv in g.value(s).data() {
                st.acc += sv * delta;
            }
            if st.consumed >= actives[ri].len() {
                st.done = true;
            } else if let Some(stop) = stop_acc {
                if st.acc >= stop {
                    st.done = true;
                }
            }
            row += take;
        }
    }

    let mut out = Vec::with_capacity(rays.len());
    for st in states {
        if st.pieces_v.is_empty() {
            out.push(RayEval { values: None, sigmas: None, ts: st.ts });
        } else {
            let v = if st.pieces_v.len() == 1 { st.pieces_v[0] } else { g.concat(&st.pieces_v, 0)? };
            let s = if st.pieces_s.len() == 1 { st.pieces_s[0] } else { g.concat(&st.pieces_s, 0)? };
            out.push(RayEval { values: Some(v), sigmas: Some(s), ts: st.ts });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// View-level rendering
// ---------------------------------------------------------------------------

/// Region grid rendered on an existing graph (differentiable when the graph
/// records). Returns `(regions [H·W, D], weights_sum per cell)`.
pub fn render_region_grid(
    g: &mut Graph,
    bound: &BoundParams,
    netcfg: &NetConfig,
    cfg: &RenderConfig,
    cloud: &FeatureCloud,
    position: Vec3,
    heading: f64,
) -> Result<(Tid, Vec<f64>)> {
    RENDER_CALLS.fetch_add(1, Ordering::Relaxed);
    let cam = CameraModel::looking(position, heading, cfg.hfov, cfg.grid_h, cfg.grid_w)?;
    let rays: Vec<Ray> = (0..cfg.grid_h)
        .flat_map(|h| (0..cfg.grid_w).map(move |w| (h, w)))
        .map(|(h, w)| cam.cell_ray(h, w))
        .collect();
    let evals = evaluate_rays(g, bound, netcfg, cfg, cloud, &rays, MlpKind::Feature)?;
    let delta = cfg.spacing();
    let mut rows = Vec::with_capacity(evals.len());
    let mut wsums = Vec::with_capacity(evals.len());
    for e in evals {
        match (e.values, e.sigmas) {
            (Some(v), Some(s)) => {
                let deltas = vec![delta; e.ts.len()];
                let (out, _, wsum) = composite(g, v, s, &deltas)?;
                rows.push(g.reshape(out, vec![1, netcfg.dim])?);
                wsums.push(g.scalar_value(wsum));
            }
            _ => {
                rows.push(g.constant(Array::zeros(vec![1, netcfg.dim])));
                wsums.push(0.0);
            }
        }
    }
    let regions = g.concat(&rows, 0)?;
    Ok((regions, wsums))
}

/// RGB, depth, and weight sums along arbitrary rays via the color/density
/// network. Returns `(rgb [M,3], depth [M], weights_sum [M])` on the graph.
pub fn render_rgbd_rays(
    g: &mut Graph,
    bound: &BoundParams,
    netcfg: &NetConfig,
    cfg: &RenderConfig,
    cloud: &FeatureCloud,
    rays: &[Ray],
) -> Result<(Tid, Tid, Tid)> {
    let evals = evaluate_rays(g, bound, netcfg, cfg, cloud, rays, MlpKind::Rgbd)?;
    let delta = cfg.spacing();
    let mut rgb_rows = Vec::with_capacity(evals.len());
    let mut depth_vals = Vec::with_capacity(evals.len());
    let mut wsum_vals = Vec::with_capacity(evals.len());
    for e in evals {
        match (e.values, e.sigmas) {
            (Some(v), Some(s)) => {
                // Stack color with per-sample camera distance so one
                // composite covers both.
                let tcol = g.constant(Array::matrix(e.ts.len(), 1, e.ts.clone()));
                let joined = g.concat(&[v, tcol], 1)?;
                let deltas = vec![delta; e.ts.len()];
                let (out, _, wsum) = composite(g, joined, s, &deltas)?;
                rgb_rows.push(g.slice_rows(out, 0, 3)?);
                depth_vals.push(g.slice_rows(out, 3, 4)?);
                wsum_vals.push(wsum);
            }
            _ => {
                rgb_rows.push(g.constant(Array::zeros(vec![3])));
                depth_vals.push(g.constant(Array::zeros(vec![1])));
                wsum_vals.push(g.constant(Array::zeros(vec![1])));
            }
        }
    }
    let m = rays.len();
    let rgb = g.concat(&rgb_rows, 0)?;
    let rgb = g.reshape(rgb, vec![m, 3])?;
    let depth = g.concat(&depth_vals, 0)?;
    let wsum = g.concat(&wsum_vals, 0)?;
    Ok((rgb, depth, wsum))
}

/// One fully rendered and encoded future view (inference).
#[derive(Debug, Clone)]
pub struct RenderedView {
    pub heading: f64,
    /// Raw composited region features, [H·W, D].
    pub region_features: Array,
    /// Encoded region features after the view encoder, [H·W, D].
    pub encoded_regions: Array,
    /// View feature V̂ after the view encoder.
    pub view_feature: Vec<f64>,
    /// Per-region-cell weight sums (diagnostic).
    pub weights_sum: Vec<f64>,
    /// Depth/RGB grids at (depth_h × depth_w); empty when not requested.
    pub rgb: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub depth_weights: Vec<f64>,
}

/// Render and encode one future view with frozen parameters.
pub fn render_view_eval(
    hnr: &crate::autodiff::ParamSet,
    netcfg: &NetConfig,
    cfg: &RenderConfig,
    cloud: &FeatureCloud,
    position: Vec3,
    heading: f64,
    with_depth_grid: bool,
) -> Result<RenderedView> {
    let mut g = Graph::inference(Precision::Double);
    let bound = BoundParams::bind_frozen(&mut g, hnr);
    let (regions, weights_sum) =
        render_region_grid(&mut g, &bound, netcfg, cfg, cloud, position, heading)?;
    let (view_feature, encoded) = encode_view(&mut g, &bound, netcfg, regions)?;

    let (rgb, depth, depth_weights) = if with_depth_grid && cfg.depth_h * cfg.depth_w > 0 {
        let cam = CameraModel::looking(position, heading, cfg.hfov, cfg.depth_h, cfg.depth_w)?;
        let rays: Vec<Ray> = (0..cfg.depth_h)
            .flat_map(|h| (0..cfg.depth_w).map(move |w| (h, w)))
            .map(|(h, w)| cam.cell_ray(h, w))
            .collect();
        let (rgb_t, depth_t, wsum_t) = render_rgbd_rays(&mut g, &bound, netcfg, cfg, cloud, &rays)?;
        let rgb_v = g.value(rgb_t);
        let rgb: Vec<[f64; 3]> = (0..rays.len())
            .map(|i| {
                let r = rgb_v.row(i);
                [r[0], r[1], r[2]]
            })
            .collect();
        (rgb, g.value(depth_t).data().to_vec(), g.value(wsum_t).data().to_vec())
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };

    Ok(RenderedView {
        heading,
        region_features: g.value(regions).clone(),
        encoded_regions: g.value(encoded).clone(),
        view_feature: g.value(view_feature).data().to_vec(),
        weights_sum,
        rgb,
        depth,
        depth_weights,
    })
}

/// A candidate's full predicted panorama.
#[derive(Debug, Clone)]
pub struct CandidatePanorama {
    pub views: Vec<RenderedView>,
    /// Composited clearance per panorama heading from the probe rays;
    /// unknown directions report 0.
    pub clearances: Vec<f64>,
}

/// Weight-sum threshold below which a probed direction counts as unknown.
pub const PROBE_KNOWN_WSUM: f64 = 0.5;

/// Render the 12 future views of a candidate location, plus per-heading
/// clearance probes from the depth head when `with_probes` is set.
pub fn render_candidate_panorama(
    hnr: &crate::autodiff::ParamSet,
    netcfg: &NetConfig,
    cfg: &RenderConfig,
    cloud: &FeatureCloud,
    position: Vec3,
    with_probes: bool,
    with_depth_grid: bool,
) -> Result<CandidatePanorama> {
    let headings = panorama_headings(netcfg.n_views, 0.0);
    let views = headings
        .iter()
        .map(|&h| render_view_eval(hnr, netcfg, cfg, cloud, position, h, with_depth_grid))
        .collect::<Result<Vec<_>>>()?;

    let clearances = if with_probes {
        let spread = 5.0f64.to_radians();
        let mut rays = Vec::with_capacity(headings.len() * 3);
        for &h in &headings {
            for dh in [-spread, 0.0, spread] {
                let a = h + dh;
                rays.push(Ray::new(position, [a.cos(), a.sin(), 0.0]));
            }
        }
        let mut g = Graph::inference(Precision::Double);
        let bound = BoundParams::bind_frozen(&mut g, hnr);
        let (_, depth_t, wsum_t) = render_rgbd_rays(&mut g, &bound, netcfg, cfg, cloud, &rays)?;
        let depth = g.value(depth_t).data();
        let wsum = g.value(wsum_t).data();
        headings
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let mut c = f64::INFINITY;
                for j in 0..3 {
                    let idx = i * 3 + j;
                    let d = if wsum[idx] >= PROBE_KNOWN_WSUM { depth[idx] } else { 0.0 };
                    c = c.min(d);
                }
                c
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(CandidatePanorama { views, clearances })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::FeatureEntry;
    use rand::Rng;

    #[test]
    fn sample_ray_endpoints_and_spacing() {
        let cfg = RenderConfig { n_samples: 2, t_max: 10.0, ..Default::default() };
        let ts = sample_ray(&cfg);
        assert_eq!(ts, vec![0.0, 10.0]);
        let cfg = RenderConfig::default();
        let ts = sample_ray(&cfg);
        assert_eq!(ts.len(), 256);
        assert!((cfg.spacing() - 10.0 / 255.0).abs() < 1e-12);
        assert_eq!(ts[0], 0.0);
        assert!((ts[255] - 10.0).abs() < 1e-12);
    }

    fn composite_values(sigmas: &[f64], deltas: &[f64], values: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = sigmas.len();
        let mut g = Graph::inference(Precision::Double);
        let v = g.constant(Array::matrix(n, 1, values.to_vec()));
        let s = g.constant(Array::vector(sigmas.to_vec()));
        let (out, w, wsum) = composite(&mut g, v, s, deltas).unwrap();
        (
            g.value(out).data().to_vec(),
            g.value(w).data().to_vec(),
            g.scalar_value(wsum),
        )
    }

    #[test]
    fn composite_closed_forms() {
        // All zero density: zero output and weight.
        let (out, _, wsum) = composite_values(&[0.0; 4], &[1.0; 4], &[5.0; 4]);
        assert_eq!(out[0], 0.0);
        assert_eq!(wsum, 0.0);

        // Two samples, σ = {0, ln 2}, Δ = 1 → weights {0, 0.5}.
        let ln2 = 2.0f64.ln();
        let (out, w, wsum) = composite_values(&[0.0, ln2], &[1.0, 1.0], &[3.0, 8.0]);
        assert!((w[0] - 0.0).abs() < 1e-12);
        assert!((w[1] - 0.5).abs() < 1e-12);
        assert!((out[0] - 4.0).abs() < 1e-12);
        assert!((wsum - 0.5).abs() < 1e-12);

        // Near-opaque tail: σ = {ln 2, 1e6} → weights {0.5, ≈0.5}.
        let (out, w, _) = composite_values(&[ln2, 1e6], &[1.0, 1.0], &[1.0, 2.0]);
        assert!((w[0] - 0.5).abs() < 1e-9);
        assert!((w[1] - 0.5).abs() < 1e-9);
        assert!((out[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn composite_invariants_on_random_rays() {
        let mut rng = crate::rng::stream(12, 61);
        for _ in 0..200 {
            let n = rng.gen_range(2..40);
            let sigmas: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let deltas = vec![rng.gen_range(0.01..0.5); n];
            let values = vec![1.0; n];
            let (_, w, wsum) = composite_values(&sigmas, &deltas, &values);
            assert!(w.iter().all(|&x| x >= 0.0));
            assert!((0.0..=1.0 + 1e-12).contains(&wsum));
            let mut tau = 1.0;
            for (i, &wi) in w.iter().enumerate() {
                let alpha = 1.0 - (-sigmas[i] * deltas[i]).exp();
                assert!((wi - tau * alpha).abs() < 1e-12);
                let new_tau = tau * (-sigmas[i] * deltas[i]).exp();
                assert!(new_tau <= tau + 1e-15);
                tau = new_tau;
            }
        }
    }

    fn wall_cloud(dim: usize) -> FeatureCloud {
        // Dense plane of entries at x = 2, spanning y and z.
        let mut cloud = FeatureCloud::new(dim);
        for yi in -12..=12 {
            for zi in 0..=10 {
                cloud
                    .push_entry(FeatureEntry {
                        feature: vec![0.5; dim],
                        position: [2.0, yi as f64 * 0.25, zi as f64 * 0.3],
                        heading: 0.0,
                        region_size: 0.1,
                    })
                    .unwrap();
            }
        }
        cloud.rebuild_index();
        cloud
    }

    #[test]
    fn marching_mask_equals_dense_predicate() {
        let cloud = wall_cloud(4);
        let mut rng = crate::rng::stream(13, 62);
        for _ in 0..300 {
            let origin = [rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.5..2.5)];
            let dir: Vec3 = [
                rng.gen_range(0.05..1.0),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.2..0.2),
            ];
            let ray = Ray::new(origin, dir);
            let fast = RenderConfig { sparse_mode: SparseMode::Fast, ..Default::default() };
            let dense = RenderConfig { sparse_mode: SparseMode::DensePredicate, ..Default::default() };
            let ts = sample_ray(&fast);
            assert_eq!(
                active_samples(&cloud, &fast, &ray, &ts),
                active_samples(&cloud, &dense, &ray, &ts)
            );
        }
    }

    #[test]
    fn empty_cloud_renders_zero() {
        let netcfg = NetConfig::miniature();
        let params = crate::nets::init_hnr_params(&netcfg, 1);
        let cloud = FeatureCloud::new(netcfg.dim);
        let cfg = RenderConfig { grid_h: netcfg.grid_h, grid_w: netcfg.grid_w, knn_k: netcfg.knn_k, ..Default::default() };
        let mut g = Graph::inference(Precision::Double);
        let bound = BoundParams::bind_frozen(&mut g, &params);
        let (regions, wsum) =
            render_region_grid(&mut g, &bound, &netcfg, &cfg, &cloud, [0.0; 3], 0.0).unwrap();
        assert!(g.value(regions).data().iter().all(|&x| x == 0.0));
        assert!(wsum.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sparse_fast_path_is_bit_identical_to_dense() {
        let netcfg = NetConfig::miniature();
        let params = crate::nets::init_hnr_params(&netcfg, 2);
        let cloud = wall_cloud(netcfg.dim);
        for cutoff in [None, Some(1e-7)] {
            let fast = RenderConfig {
                grid_h: netcfg.grid_h,
                grid_w: netcfg.grid_w,
                knn_k: netcfg.knn_k,
                sparse_mode: SparseMode::Fast,
                tau_cutoff: cutoff,
                ..Default::default()
            };
            let dense = RenderConfig { sparse_mode: SparseMode::DensePredicate, ..fast.clone() };
            let run = |cfg: &RenderConfig| {
                let mut g = Graph::inference(Precision::Double);
                let bound = BoundParams::bind_frozen(&mut g, &params);
                let (r, w) =
                    render_region_grid(&mut g, &bound, &netcfg, cfg, &cloud, [0.0, 0.3, 1.4], 0.2)
                        .unwrap();
                (g.value(r).clone(), w)
            };
            let (rf, wf) = run(&fast);
            let (rd, wd) = run(&dense);
            assert_eq!(rf, rd);
            assert_eq!(wf, wd);
        }
    }

    #[test]
    fn opaque_density_profile_composites_to_wall_depth() {
        let cfg = RenderConfig::default();
        let ts = sample_ray(&cfg);
        let wall_t = 2.0;
        let sigmas: Vec<f64> = ts.iter().map(|&t| if t >= wall_t { 500.0 } else { 0.0 }).collect();
        let deltas = vec![cfg.spacing(); ts.len()];
        let mut g = Graph::inference(Precision::Double);
        let v = g.constant(Array::matrix(ts.len(), 1, ts.clone()));
        let s = g.constant(Array::vector(sigmas));
        let (out, _, wsum) = composite(&mut g, v, s, &deltas).unwrap();
        let depth = g.value(out).data()[0];
        assert!((depth - wall_t).abs() <= cfg.spacing() + 1e-9, "depth {depth}");
        assert!(g.scalar_value(wsum) > 0.999);
    }

    #[test]
    fn panorama_shape_contract() {
        let netcfg = NetConfig::miniature();
        let params = crate::nets::init_hnr_params(&netcfg, 2);
        let cloud = wall_cloud(netcfg.dim);
        let cfg = RenderConfig {
            grid_h: netcfg.grid_h,
            grid_w: netcfg.grid_w,
            knn_k: netcfg.knn_k,
            depth_h: 4,
            depth_w: 4,
            ..Default::default()
        };
        let pano =
            render_candidate_panorama(&params, &netcfg, &cfg, &cloud, [0.0, 0.0, 1.4], true, true)
                .unwrap();
        assert_eq!(pano.views.len(), netcfg.n_views);
        assert_eq!(pano.clearances.len(), netcfg.n_views);
        for v in &pano.views {
            assert_eq!(v.region_features.shape(), &[netcfg.grid_h * netcfg.grid_w, netcfg.dim]);
            assert_eq!(v.view_feature.len(), netcfg.dim);
            assert_eq!(v.depth.len(), cfg.depth_h * cfg.depth_w);
        }
        // Determinism across repeated calls.
        let again =
            render_candidate_panorama(&params, &netcfg, &cfg, &cloud, [0.0, 0.0, 1.4], true, true)
                .unwrap();
        assert_eq!(pano.views[1].view_feature, again.views[1].view_feature);
        assert_eq!(pano.views[2].depth, again.views[2].depth);
        assert_eq!(pano.clearances, again.clearances);
    }
}
