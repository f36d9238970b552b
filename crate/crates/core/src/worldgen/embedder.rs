//! Deterministic class embeddings: the stand-in for a learned image encoder.

use super::NUM_CLASSES;
use rand::Rng;

/// Unit embedding per semantic class, from a seeded Gaussian draw followed by
/// Gram-Schmidt when the dimension allows full orthogonalization.
#[derive(Debug, Clone)]
pub struct ClassEmbedder {
    dim: usize,
    vectors: Vec<Vec<f64>>,
}

impl ClassEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = crate::rng::stream(seed, crate::rng::streams::EMBEDDER);
        let mut vectors: Vec<Vec<f64>> = (0..NUM_CLASSES)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                        let u2: f64 = rng.gen_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect()
            })
            .collect();
        if dim >= NUM_CLASSES {
            // Gram-Schmidt for exact pairwise orthogonality.
            for i in 0..NUM_CLASSES {
                for j in 0..i {
                    let dot: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| a * b).sum();
                    let proj: Vec<f64> = vectors[j].iter().map(|x| x * dot).collect();
                    for (a, p) in vectors[i].iter_mut().zip(proj) {
                        *a -= p;
                    }
                }
                normalize(&mut vectors[i]);
            }
        } else {
            for v in &mut vectors {
                normalize(v);
            }
        }
        Self { dim, vectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, class_id: u8) -> &[f64] {
        &self.vectors[class_id as usize]
    }

    /// Unit-normalized mix of class embeddings by nonnegative weights.
    /// Returns `None` when all weights are zero.
    pub fn mix(&self, weights: &[f64; NUM_CLASSES]) -> Option<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        let mut total = 0.0;
        for (w, v) in weights.iter().zip(&self.vectors) {
            if *w > 0.0 {
                total += w;
                for (o, x) in out.iter_mut().zip(v) {
                    *o += w * x;
                }
            }
        }
        if total == 0.0 {
            return None;
        }
        normalize(&mut out);
        Some(out)
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let a = ClassEmbedder::new(5, 32);
        let b = ClassEmbedder::new(5, 32);
        assert_eq!(a.embed(7), b.embed(7));
        let c = ClassEmbedder::new(6, 32);
        assert_ne!(a.embed(7), c.embed(7));
    }

    #[test]
    fn orthogonalized_when_dim_allows() {
        let e = ClassEmbedder::new(1, 64);
        for i in 0..NUM_CLASSES {
            let n: f64 = e.embed(i as u8).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
            for j in 0..i {
                let c = cosine(e.embed(i as u8), e.embed(j as u8));
                assert!(c.abs() <= 0.1, "classes {i},{j} cos {c}");
            }
        }
    }

    #[test]
    fn mix_of_single_class_is_that_class() {
        let e = ClassEmbedder::new(3, 24);
        let mut w = [0.0; NUM_CLASSES];
        w[5] = 2.0;
        let m = e.mix(&w).unwrap();
        assert!(cosine(&m, e.embed(5)) > 1.0 - 1e-12);
        assert!(e.mix(&[0.0; NUM_CLASSES]).is_none());
    }
}
