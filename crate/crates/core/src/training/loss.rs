use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub grad_anchors: Vec<Vec<f64>>,
    pub grad_replicas: Vec<Vec<f64>>,
}

/// NT-Xent over N anchor/replica pairs.
///
/// The 2N embeddings are treated as views; view `i`'s positive is its
/// partner and every other view is a negative. Similarities are dot
/// products scaled by `1/tau`. The loss is the mean over all 2N views of
/// the softmax cross-entropy of the positive.
pub fn ntxent_loss(
    anchors: &[Vec<f64>],
    replicas: &[Vec<f64>],
    tau: f64,
) -> Result<ContrastiveLoss> {
    let n = anchors.len();
    if n == 0 || replicas.len() != n {
        return Err(Error::InvalidInput(format!(
            "{} anchors and {} replicas",
            n,
            replicas.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParams(format!(
            "temperature {tau} must be positive"
        )));
    }
    let views: Vec<&[f64]> = anchors.iter().chain(replicas).map(Vec::as_slice).collect();
    let dim = views[0].len();
    for (index, v) in views.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::Shape(format!(
                "embedding {index} has {} dims, expected {dim}",
                v.len()
            )));
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !((norm - 1.0).abs() <= 1e-4) {
            return Err(Error::NonUnitInput { index, norm });
        }
    }

    let m = 2 * n;
    let partner = |i: usize| (i + n) % m;
    let mut logits = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let s = views[i]
                .iter()
                .zip(views[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / tau;
            logits[i * m + j] = s;
            logits[j * m + i] = s;
        }
    }

    // coeff[i][j] = dL/ds_ij
    let mut coeff = vec![0.0; m * m];
    let mut total = 0.0;
    let scale = 1.0 / m as f64;
    for i in 0..m {
        let row = &logits[i * m..(i + 1) * m];
        let max = (0..m)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..m)
            .filter(|&j| j != i)
            .map(|j| (row[j] - max).exp())
            .sum();
        let lse = max + sum.ln();
        total += lse - row[partner(i)];
        for j in (0..m).filter(|&j| j != i) {
            let p = (row[j] - lse).exp();
            let target = if j == partner(i) { 1.0 } else { 0.0 };
            coeff[i * m + j] = scale * (p - target);
        }
    }

    let mut grads = vec![vec![0.0; dim]; m];
    for k in 0..m {
        for j in 0..m {
            if j == k {
                continue;
            }
            // s_kj appears in row k and (as s_jk) in row j
            let c = (coeff[k * m + j] + coeff[j * m + k]) / tau;
            if c != 0.0 {
                for (g, x) in grads[k].iter_mut().zip(views[j]) {
                    *g += c * x;
                }
            }
        }
    }
    let grad_replicas = grads.split_off(n);
    Ok(ContrastiveLoss {
        loss: total * scale,
        grad_anchors: grads,
        grad_replicas,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    /// Loss by direct evaluation of the 2N x 2N similarity matrix.
    fn oracle_loss(a: &[Vec<f64>], r: &[Vec<f64>], tau: f64) -> f64 {
        let views: Vec<&Vec<f64>> = a.iter().chain(r).collect();
        let m = views.len();
        let n = m / 2;
        let sim = |i: usize, j: usize| {
            views[i]
                .iter()
                .zip(views[j])
                .map(|(x, y)| x * y)
                .sum::<f64>()
        };
        let mut total = 0.0;
        for i in 0..m {
            let p = (i + n) % m;
            let denom: f64 = (0..m)
                .filter(|&j| j != i)
                .map(|j| (sim(i, j) / tau).exp())
                .sum();
            total += -((sim(i, p) / tau).exp() / denom).ln();
        }
        total / m as f64
    }

    #[test]
    fn single_pair_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = ntxent_loss(&[unit(&mut rng, 8)], &[unit(&mut rng, 8)], 0.05).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn orthogonal_pairs_closed_form() {
        let a = vec![1.0, 0.0, 0.0];
        let b = vec![0.0, 1.0, 0.0];
        for tau in [0.05, 0.5, 1.0] {
            let anchors = vec![a.clone(), b.clone()];
            let out = ntxent_loss(&anchors, &anchors, tau).unwrap();
            let want = (1.0 + 2.0 * ((0.0 - 1.0) / tau).exp()).ln();
            assert!((out.loss - want).abs() < 1e-12, "{} vs {want}", out.loss);
            assert!((oracle_loss(&anchors, &anchors, tau) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<_> = (0..6).map(|_| unit(&mut rng, 5)).collect();
        let r: Vec<_> = (0..6).map(|_| unit(&mut rng, 5)).collect();
        let out = ntxent_loss(&a, &r, 0.3).unwrap();
        assert!((out.loss - oracle_loss(&a, &r, 0.3)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let eps = 1e-6;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<_> = (0..4).map(|_| unit(&mut rng, 6)).collect();
            let r: Vec<_> = (0..4).map(|_| unit(&mut rng, 6)).collect();
            let tau = 0.5;
            let out = ntxent_loss(&a, &r, tau).unwrap();
            // the loss is smooth in the raw embeddings, so perturb them directly
            for side in 0..2 {
                for i in 0..4 {
                    for k in 0..6 {
                        let eval = |delta: f64| {
                            let (mut a2, mut r2) = (a.clone(), r.clone());
                            if side == 0 {
                                a2[i][k] += delta
                            } else {
                                r2[i][k] += delta
                            }
                            oracle_loss(&a2, &r2, tau)
                        };
                        let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                        let analytic = if side == 0 {
                            out.grad_anchors[i][k]
                        } else {
                            out.grad_replicas[i][k]
                        };
                        let rel = (analytic - numeric).abs()
                            / analytic.abs().max(numeric.abs()).max(1e-8);
                        assert!(
                            rel <= 1e-6,
                            "seed {seed} side {side} ({i},{k}): {analytic} vs {numeric}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn permutation_and_swap_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<_> = (0..5).map(|_| unit(&mut rng, 4)).collect();
        let r: Vec<_> = (0..5).map(|_| unit(&mut rng, 4)).collect();
        let base = ntxent_loss(&a, &r, 0.1).unwrap().loss;
        let perm = [3, 0, 4, 1, 2];
        let pa: Vec<_> = perm.iter().map(|&i| a[i].clone()).collect();
        let pr: Vec<_> = perm.iter().map(|&i| r[i].clone()).collect();
        assert!((ntxent_loss(&pa, &pr, 0.1).unwrap().loss - base).abs() <= 1e-12);
        assert!((ntxent_loss(&r, &a, 0.1).unwrap().loss - base).abs() <= 1e-12);
    }

    #[test]
    fn rejects_non_unit() {
        let out = ntxent_loss(&[vec![1.0, 0.0]], &[vec![0.5, 0.0]], 0.1);
        assert!(matches!(out, Err(Error::NonUnitInput { index: 1, .. })));
    }
}
