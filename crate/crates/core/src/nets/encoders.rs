//! View, panorama, and instruction encoders.

use super::{transformer_block, NetConfig};
use crate::autodiff::{Array, BoundParams, Graph, Tid};
use crate::error::{HnrError, Result};

/// Classic sinusoidal position code, one row per position.
pub fn sinusoid_rows(len: usize, dim: usize) -> Array {
    let mut data = vec![0.0; len * dim];
    for p in 0..len {
        for i in 0..dim / 2 {
            let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
            data[p * dim + 2 * i] = (p as f64 * freq).sin();
            data[p * dim + 2 * i + 1] = (p as f64 * freq).cos();
        }
    }
    Array::matrix(len, dim, data)
}

/// Sinusoidal code of a planar offset, [`super::SINUSOID_XY_DIM`] wide:
/// four geometric frequencies × sin/cos × (Δx, Δy).
pub fn sinusoid_xy(dx: f64, dy: f64) -> Array {
    let mut data = Vec::with_capacity(super::SINUSOID_XY_DIM);
    for &v in &[dx, dy] {
        let mut freq = 0.5;
        for _ in 0..4 {
            data.push((v * freq).sin());
            data.push((v * freq).cos());
            freq *= 2.0;
        }
    }
    Array::vector(data)
}

/// Encode one view: a learnable view token plus `grid_h × grid_w` region
/// tokens with slot position embeddings, through the view transformer.
///
/// Returns `(view_feature [D], encoded_regions [H·W, D])`.
pub fn encode_view(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &NetConfig,
    regions: Tid,
) -> Result<(Tid, Tid)> {
    let cells = cfg.grid_h * cfg.grid_w;
    let shape = g.shape(regions).to_vec();
    if shape != [cells, cfg.dim] {
        return Err(HnrError::Shape { op: "encode_view", left: shape, right: vec![cells, cfg.dim] });
    }
    let token = bound.tid("viewenc.token");
    let mut x = g.concat(&[token, regions], 0)?;
    let pos = bound.tid("viewenc.pos");
    if g.shape(pos) != [cells + 1, cfg.dim] {
        return Err(HnrError::Shape {
            op: "encode_view",
            left: g.shape(pos).to_vec(),
            right: vec![cells + 1, cfg.dim],
        });
    }
    x = g.add(x, pos)?;
    for l in 0..cfg.view_layers {
        x = transformer_block(g, bound, &format!("viewenc.l{l}"), cfg, x)?;
    }
    let view = g.slice_rows(x, 0, 1)?;
    let view = g.reshape(view, vec![cfg.dim])?;
    let encoded = g.slice_rows(x, 1, cells + 1)?;
    Ok((view, encoded))
}

/// Encode a panorama of view features with heading position embeddings.
///
/// Returns `(encoded_views [n_views, D], candidate_embedding [D])` where the
/// candidate embedding is the mean of the encoded views.
pub fn encode_panorama(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &NetConfig,
    view_feats: Tid,
) -> Result<(Tid, Tid)> {
    let shape = g.shape(view_feats).to_vec();
    if shape != [cfg.n_views, cfg.dim] {
        return Err(HnrError::Shape {
            op: "encode_panorama",
            left: shape,
            right: vec![cfg.n_views, cfg.dim],
        });
    }
    let pos = bound.tid("panoenc.pos");
    let mut x = g.add(view_feats, pos)?;
    for l in 0..cfg.panorama_layers {
        x = transformer_block(g, bound, &format!("panoenc.l{l}"), cfg, x)?;
    }
    let candidate = g.mean_rows(x)?;
    Ok((x, candidate))
}

/// Embed instruction tokens, add sinusoidal positions, and run the single
/// self-attention layer. Returns the word memory `[len, D]`.
pub fn encode_instruction(
    g: &mut Graph,
    bound: &BoundParams,
    cfg: &NetConfig,
    token_ids: &[usize],
) -> Result<Tid> {
    if token_ids.is_empty() {
        return Err(HnrError::Contract("empty instruction".into()));
    }
    let ids: Vec<usize> = token_ids.iter().copied().take(cfg.max_instruction_len).collect();
    let table = bound.tid("instr.embed");
    let mut x = g.select_rows(table, &ids)?;
    let pos = g.constant(sinusoid_rows(ids.len(), cfg.dim));
    x = g.add(x, pos)?;
    transformer_block(g, bound, "instr.l0", cfg, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, BoundParams, Graph, ParamSet, Precision};
    use crate::nets::{init_hnr_params, init_vln_params};

    fn randm(rng: &mut impl rand::Rng, r: usize, c: usize) -> Array {
        gradcheck::randn(rng, vec![r, c], 1.0)
    }

    #[test]
    fn view_encoder_shapes() {
        let cfg = NetConfig { dim: 16, heads: 2, view_layers: 2, grid_h: 7, grid_w: 7, ..NetConfig::miniature() };
        let params = init_hnr_params(&cfg, 5);
        let mut rng = crate::rng::stream(5, 77);
        let mut g = Graph::inference(Precision::Double);
        let bound = BoundParams::bind_frozen(&mut g, &params);
        let regions = g.constant(randm(&mut rng, 49, 16));
        let (view, encoded) = encode_view(&mut g, &bound, &cfg, regions).unwrap();
        assert_eq!(g.shape(view), &[16]);
        assert_eq!(g.shape(encoded), &[49, 16]);
    }

    #[test]
    fn view_encoder_position_sensitive() {
        let cfg = NetConfig::miniature();
        let params = init_hnr_params(&cfg, 5);
        let mut rng = crate::rng::stream(6, 78);
        let cells = cfg.grid_h * cfg.grid_w;
        let base = randm(&mut rng, cells, cfg.dim);
        let mut swapped = base.clone();
        for c in 0..cfg.dim {
            let a = base.data()[c];
            let b = base.data()[cfg.dim + c];
            swapped.data_mut()[c] = b;
            swapped.data_mut()[cfg.dim + c] = a;
        }
        let run = |input: &Array| {
            let mut g = Graph::inference(Precision::Double);
            let bound = BoundParams::bind_frozen(&mut g, &params);
            let regions = g.constant(input.clone());
            let (view, _) = encode_view(&mut g, &bound, &cfg, regions).unwrap();
            g.value(view).data().to_vec()
        };
        assert_ne!(run(&base), run(&swapped));
    }

    #[test]
    fn panorama_zero_weights_reduces_to_mean() {
        let cfg = NetConfig::miniature();
        let mut params = init_vln_params(&cfg, 5);
        // Zero the residual write-out paths and position embeddings.
        for name in params.names().cloned().collect::<Vec<_>>() {
            if name.starts_with("panoenc") && (name.contains(".wo.") || name.contains(".ffn2.") || name.ends_with("pos")) {
                for x in params.get_mut(&name).unwrap().data_mut() {
                    *x = 0.0;
                }
            }
        }
        let mut rng = crate::rng::stream(7, 79);
        let input = randm(&mut rng, cfg.n_views, cfg.dim);
        let mut g = Graph::inference(Precision::Double);
        let bound = BoundParams::bind_frozen(&mut g, &params);
        let x = g.constant(input.clone());
        let (encoded, candidate) = encode_panorama(&mut g, &bound, &cfg, x).unwrap();
        assert_eq!(g.shape(encoded), &[cfg.n_views, cfg.dim]);
        let mut mean = vec![0.0; cfg.dim];
        for r in 0..cfg.n_views {
            for c in 0..cfg.dim {
                mean[c] += input.data()[r * cfg.dim + c] / cfg.n_views as f64;
            }
        }
        for (a, b) in g.value(candidate).data().iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn panorama_rotation_equivariance() {
        // Rotating inputs by one slot together with the heading embeddings
        // leaves the pooled candidate embedding unchanged.
        let cfg = NetConfig::miniature();
        let params = init_vln_params(&cfg, 9);
        let mut rng = crate::rng::stream(8, 80);
        let input = randm(&mut rng, cfg.n_views, cfg.dim);

        let rotate = |a: &Array, by: usize| {
            let n = cfg.n_views;
            let d = cfg.dim;
            let mut out = Array::zeros(vec![n, d]);
            for r in 0..n {
                let src = (r + by) % n;
                out.data_mut()[r * d..(r + 1) * d].copy_from_slice(&a.data()[src * d..(src + 1) * d]);
            }
            out
        };

        let run = |p: &ParamSet, x: &Array| {
            let mut g = Graph::inference(Precision::Double);
            let bound = BoundParams::bind_frozen(&mut g, p);
            let xc = g.constant(x.clone());
            let (_, cand) = encode_panorama(&mut g, &bound, &cfg, xc).unwrap();
            g.value(cand).data().to_vec()
        };

        let base = run(&params, &input);
        let mut rotated_params = params.clone();
        let pos = rotated_params.get("panoenc.pos").unwrap().clone();
        *rotated_params.get_mut("panoenc.pos").unwrap() = rotate(&pos, 1);
        let rotated = run(&rotated_params, &rotate(&input, 1));
        for (a, b) in base.iter().zip(&rotated) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn view_encoder_gradients_match_fd() {
        let cfg = NetConfig::miniature();
        let params = init_hnr_params(&cfg, 11);
        let mut rng = crate::rng::stream(9, 81);
        let cells = cfg.grid_h * cfg.grid_w;
        let regions = randm(&mut rng, cells, cfg.dim);
        let target = gradcheck::randn(&mut rng, vec![cfg.dim], 1.0);
        let report = gradcheck::check(&params, |g, bound| {
            let r = g.constant(regions.clone());
            let (view, _) = encode_view(g, bound, &cfg, r)?;
            let t = g.constant(target.clone());
            let cos = g.cosine_similarity(view, t)?;
            let one = g.constant(Array::scalar(1.0));
            g.sub(one, cos)
        })
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "rel err {} at {}", report.max_rel_err, report.worst_param);
    }
}
