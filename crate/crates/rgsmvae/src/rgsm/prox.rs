//! Exact proximal operators for the group-l0 and group-Lasso penalties.
//!
//! Both minimize penalty(z) + 1/2 ||z - w||^2 over a group vector z:
//! group-l0 keeps the group iff its l2 norm exceeds sqrt(2*lambda), group
//! Lasso shrinks the norm by lambda (to zero at or below lambda).

use crate::tensor::Scalar;

pub fn group_norm<E: Scalar>(w: &[E]) -> f64 {
    w.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
}

/// Hard group threshold: w if ||w||_2 > sqrt(2 lambda), else 0.
/// Ties at the threshold keep the group (strict inequality).
pub fn prox_gl0<E: Scalar>(w: &[E], lambda: f64) -> Vec<E> {
    if group_norm(w) > (2.0 * lambda).sqrt() {
        w.to_vec()
    } else {
        vec![E::zero(); w.len()]
    }
}

/// Group soft threshold: w * max(||w|| - lambda, 0) / ||w||, with the
/// zero vector returned whenever ||w|| <= lambda (covers w = 0).
pub fn prox_gl<E: Scalar>(w: &[E], lambda: f64) -> Vec<E> {
    let norm = group_norm(w);
    if norm <= lambda {
        return vec![E::zero(); w.len()];
    }
    let scale = E::from_f64_lossy((norm - lambda) / norm);
    w.iter().map(|&v| v * scale).collect()
}

/// In-place application over column groups of a (rows, cols) matrix; column
/// `g` is zeroed when its norm fails the group-l0 threshold.
pub fn prox_gl0_columns<E: Scalar>(w: &mut [E], rows: usize, cols: usize, lambda: f64) {
    let thresh2 = 2.0 * lambda;
    let mut norms2 = vec![0.0f64; cols];
    for r in 0..rows {
        for (c, n) in norms2.iter_mut().enumerate() {
            let v = w[r * cols + c].as_f64();
            *n += v * v;
        }
    }
    for r in 0..rows {
        for (c, n) in norms2.iter().enumerate() {
            if *n <= thresh2 {
                w[r * cols + c] = E::zero();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn gl0_objective(z: &[f64], w: &[f64], lambda: f64) -> f64 {
        let nz = z.iter().any(|&v| v != 0.0);
        let dist2: f64 = z.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
        lambda * (nz as u8 as f64) + 0.5 * dist2
    }

    fn gl_objective(z: &[f64], w: &[f64], lambda: f64) -> f64 {
        let norm: f64 = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dist2: f64 = z.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
        lambda * norm + 0.5 * dist2
    }

    /// Best objective over random candidates, radial scalings, zero and w.
    fn oracle_best(
        w: &[f64],
        lambda: f64,
        obj: impl Fn(&[f64], &[f64], f64) -> f64,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let dim = w.len();
        let mut best = obj(&vec![0.0; dim], w, lambda).min(obj(w, w, lambda));
        for i in 0..10_000 {
            let z: Vec<f64> = if i % 2 == 0 {
                let s = rng.gen_range(0.0..1.2);
                w.iter().map(|&v| v * s).collect()
            } else {
                w.iter().map(|&v| v + rng.gen_range(-0.5..0.5)).collect()
            };
            let o = obj(&z, w, lambda);
            if o < best {
                best = o;
            }
        }
        best
    }

    #[test]
    fn gl0_below_threshold_zeroes_the_group() {
        // lambda = 0.04: ||(0.2, 0.1)|| ~= 0.2236 < sqrt(0.08) ~= 0.28284
        let out = prox_gl0(&[0.2f64, 0.1], 0.04);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn gl0_above_threshold_keeps_the_group() {
        let w = [0.3f64, 0.2];
        let out = prox_gl0(&w, 0.04);
        assert_eq!(out, w.to_vec());
    }

    #[test]
    fn gl0_of_zero_is_zero_for_any_lambda() {
        for lambda in [0.0, 0.04, 10.0] {
            assert_eq!(prox_gl0(&[0.0f64; 3], lambda), vec![0.0; 3]);
        }
    }

    #[test]
    fn gl_soft_threshold_example() {
        // ||(0.3, 0.4)|| = 0.5, scale = (0.5 - 0.04) / 0.5 = 0.92
        let out = prox_gl(&[0.3f64, 0.4], 0.04);
        assert!((out[0] - 0.276).abs() < 1e-12);
        assert!((out[1] - 0.368).abs() < 1e-12);
    }

    #[test]
    fn gl_small_norm_collapses_to_zero() {
        assert_eq!(prox_gl(&[0.03f64, 0.0], 0.04), vec![0.0, 0.0]);
    }

    #[test]
    fn gl_with_zero_lambda_is_identity() {
        let w = [0.5f64, -0.25, 0.125];
        assert_eq!(prox_gl(&w, 0.0), w.to_vec());
    }

    #[test]
    fn both_operators_minimize_their_proximal_objective() {
        // 200 random (w, lambda) pairs in dims 1..=8 against a candidate-set
        // oracle; the prox output may not lose by more than 1e-9.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..200 {
            let dim = rng.gen_range(1..=8usize);
            let w: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.6..0.6)).collect();
            let lambda = rng.gen_range(0.0..0.2);
            let z0 = prox_gl0(&w, lambda);
            let o0 = gl0_objective(&z0, &w, lambda);
            let best0 = oracle_best(&w, lambda, gl0_objective, &mut rng);
            assert!(o0 <= best0 + 1e-9, "case {case}: gl0 {o0} vs oracle {best0}");

            let z1 = prox_gl(&w, lambda);
            let o1 = gl_objective(&z1, &w, lambda);
            let best1 = oracle_best(&w, lambda, gl_objective, &mut rng);
            assert!(o1 <= best1 + 1e-9, "case {case}: gl {o1} vs oracle {best1}");
        }
    }

    #[test]
    fn gl0_is_idempotent_and_gl_is_nonexpansive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let dim = rng.gen_range(1..=6usize);
            let lambda = rng.gen_range(0.0..0.3);
            let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_eq!(prox_gl0(&prox_gl0(&a, lambda), lambda), prox_gl0(&a, lambda));
            let (pa, pb) = (prox_gl(&a, lambda), prox_gl(&b, lambda));
            let d_out: f64 =
                pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let d_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(d_out <= d_in + 1e-12, "non-expansiveness violated: {d_out} > {d_in}");
        }
    }
}
