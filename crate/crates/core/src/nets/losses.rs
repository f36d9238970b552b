//! Alignment and reconstruction losses.

use crate::autodiff::{Array, Graph, Tid};
use crate::error::{HnrError, Result};

/// Σ over sampled cells of (1 − cos(pred, target)).
///
/// `pred` is the encoded region grid `[cells, D]`; `targets` the oracle grid;
/// `sampled` the cell indices chosen for this step.
pub fn l_region(g: &mut Graph, pred: Tid, targets: &[Vec<f64>], sampled: &[usize]) -> Result<Tid> {
    if sampled.is_empty() {
        return Err(HnrError::Contract("l_region with no sampled cells".into()));
    }
    let mut total: Option<Tid> = None;
    for &cell in sampled {
        let row = g.slice_rows(pred, cell, cell + 1)?;
        let d = g.shape(row)[1];
        let row = g.reshape(row, vec![d])?;
        let t = g.constant(Array::vector(targets[cell].clone()));
        let cos = g.cosine_similarity(row, t)?;
        let one = g.constant(Array::scalar(1.0));
        let term = g.sub(one, cos)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(total.unwrap())
}

/// 1 − cos(pred view feature, oracle view embedding).
pub fn l_view(g: &mut Graph, pred: Tid, target: &[f64]) -> Result<Tid> {
    let t = g.constant(Array::vector(target.to_vec()));
    let cos = g.cosine_similarity(pred, t)?;
    let one = g.constant(Array::scalar(1.0));
    g.sub(one, cos)
}

/// Mean squared error over RGB channels and depth jointly.
pub fn l_rgbd(
    g: &mut Graph,
    pred_rgb: Tid,
    pred_depth: Tid,
    gt_rgb: &[[f64; 3]],
    gt_depth: &[f64],
) -> Result<Tid> {
    let m = gt_depth.len();
    if g.shape(pred_rgb) != [m, 3] || g.shape(pred_depth) != [m] {
        return Err(HnrError::Shape {
            op: "l_rgbd",
            left: g.shape(pred_rgb).to_vec(),
            right: vec![m, 3],
        });
    }
    let rgb_flat: Vec<f64> = gt_rgb.iter().flatten().copied().collect();
    let rgb_t = g.constant(Array::matrix(m, 3, rgb_flat));
    let depth_t = g.constant(Array::vector(gt_depth.to_vec()));
    let dr = g.sub(pred_rgb, rgb_t)?;
    let dr = g.mul(dr, dr)?;
    let dr = g.reshape(dr, vec![m * 3])?;
    let dd = g.sub(pred_depth, depth_t)?;
    let dd = g.mul(dd, dd)?;
    let all = g.concat(&[dr, dd], 0)?;
    g.mean_all(all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Precision};

    #[test]
    fn view_loss_extremes() {
        let run = |a: Vec<f64>, b: Vec<f64>| {
            let mut g = Graph::inference(Precision::Double);
            let p = g.constant(Array::vector(a));
            let l = l_view(&mut g, p, &b).unwrap();
            g.scalar_value(l)
        };
        assert!((run(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0])).abs() < 1e-12);
        assert!((run(vec![1.0, 0.0], vec![0.0, 1.0]) - 1.0).abs() < 1e-12);
        assert!((run(vec![1.0, -2.0], vec![-1.0, 2.0]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_numeric_fault() {
        let mut g = Graph::inference(Precision::Double);
        let p = g.constant(Array::vector(vec![0.0, 0.0]));
        assert!(matches!(
            l_view(&mut g, p, &[1.0, 0.0]),
            Err(HnrError::NumericFault { .. })
        ));
    }

    #[test]
    fn rgbd_mse_hand_value() {
        let mut g = Graph::inference(Precision::Double);
        let rgb = g.constant(Array::matrix(2, 3, vec![0.5, 0.5, 0.5, 0.0, 0.0, 0.0]));
        let depth = g.constant(Array::vector(vec![2.0, 4.0]));
        let l = l_rgbd(
            &mut g,
            rgb,
            depth,
            &[[0.5, 0.5, 0.5], [0.0, 0.0, 1.0]],
            &[2.0, 3.0],
        )
        .unwrap();
        // Squared errors: rgb: one channel off by 1 → 1.0; depth: off by 1 → 1.0.
        // Mean over 8 entries = 2/8.
        assert!((g.scalar_value(l) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn region_loss_sums_sampled_cells() {
        let mut g = Graph::inference(Precision::Double);
        let pred = g.constant(Array::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]));
        let targets = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let l = l_region(&mut g, pred, &targets, &[0, 1, 2]).unwrap();
        // Cells: cos 1 → 0; cos 0 → 1; cos 0 → 1. Sum = 2.
        assert!((g.scalar_value(l) - 2.0).abs() < 1e-12);
    }
}
