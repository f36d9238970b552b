//! Central finite-difference oracle for gradients.
//!
//! This module deliberately avoids the backward machinery: it evaluates the
//! loss twice per perturbed element and differences the results, so it stays
//! an independent check on every analytic VJP.

use super::{Array, BoundParams, Graph, ParamSet, Precision, Tid};
use crate::error::Result;

/// Largest relative error between analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Relative error with a floor so near-zero gradients compare sanely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare analytic gradients of `loss_fn` against central differences for
/// every element of every parameter.
///
/// `loss_fn` must build the loss on the given graph using the bound
/// parameters; it is re-invoked on fresh graphs for each perturbation.
pub fn check<F>(params: &ParamSet, mut loss_fn: F) -> Result<GradReport>
where
    F: FnMut(&mut Graph, &BoundParams) -> Result<Tid>,
{
    let eval = |p: &ParamSet, f: &mut F| -> Result<f64> {
        let mut g = Graph::new(Precision::Double);
        let bound = BoundParams::bind(&mut g, p);
        let loss = f(&mut g, &bound)?;
        Ok(g.scalar_value(loss))
    };

    // Analytic gradients.
    let mut graph = Graph::new(Precision::Double);
    let bound = BoundParams::bind(&mut graph, params);
    let loss = loss_fn(&mut graph, &bound)?;
    graph.backward(loss)?;
    let analytic = bound.grads(&graph, params);

    let mut report = GradReport { max_rel_err: 0.0, worst_param: String::new(), checked: 0 };
    let mut scratch = params.clone();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).unwrap().len();
        for i in 0..n {
            let x0 = params.get(&name).unwrap().data()[i];
            let h = 1e-5 * x0.abs().max(1.0);
            scratch.get_mut(&name).unwrap().data_mut()[i] = x0 + h;
            let up = eval(&scratch, &mut loss_fn)?;
            scratch.get_mut(&name).unwrap().data_mut()[i] = x0 - h;
            let down = eval(&scratch, &mut loss_fn)?;
            scratch.get_mut(&name).unwrap().data_mut()[i] = x0;
            let fd = (up - down) / (2.0 * h);
            let an = analytic.get(&name).unwrap().data()[i];
            let e = rel_err(an, fd);
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

/// Convenience: random-normal array from an explicit RNG.
pub fn randn(rng: &mut impl rand::Rng, shape: Vec<usize>, std: f64) -> Array {
    use rand::distributions::Distribution;
    let dist = rand_distr_normal();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng) * std).collect();
    Array::from_vec(shape, data)
}

// Small local normal sampler (Box-Muller) so the gradcheck helper does not
// pull in rand_distr.
fn rand_distr_normal() -> impl rand::distributions::Distribution<f64> {
    struct BoxMuller;
    impl rand::distributions::Distribution<f64> for BoxMuller {
        fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }
    BoxMuller
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn catches_matmul_chain() {
        let mut rng = rng::stream(11, 99);
        let mut params = ParamSet::new();
        params.insert("w", randn(&mut rng, vec![4, 3], 0.5));
        params.insert("b", randn(&mut rng, vec![3], 0.5));
        let x = randn(&mut rng, vec![2, 4], 1.0);
        let report = check(&params, |g, bound| {
            let xc = g.constant(x.clone());
            let h = g.matmul(xc, bound.tid("w"))?;
            let h = g.add(h, bound.tid("b"))?;
            let h = g.tanh(h)?;
            g.sum_all(h)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-6, "rel err {} at {}", report.max_rel_err, report.worst_param);
    }
}
