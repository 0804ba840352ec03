//! Model-based LQR reference route.
//!
//! With the convention `u = K x`, the closed loop is `A + B K` and the cost
//! of a stabilizing gain is `C(K) = Tr((Q + K' R K) Sigma_K)` where
//! `Sigma_K = I + (A + B K) Sigma_K (A + B K)'`. The data-driven modules never
//! call into this one; it exists so the two routes can be compared.

use crate::{numerics, Error, Mat, Result};

/// Solves the discrete algebraic Riccati equation by fixed-point iteration.
///
/// Returns `P` with `P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA`.
pub fn dare(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let mut p = q.clone();
    for _ in 0..100_000 {
        let rbpb = r + b.transpose() * &p * b;
        let inv = rbpb.try_inverse().ok_or_else(|| Error::IllConditioned {
            detail: "R + B'PB singular in Riccati iteration".into(),
        })?;
        let next = q + a.transpose() * &p * a
            - a.transpose() * &p * b * inv * b.transpose() * &p * a;
        let delta = (&next - &p).norm();
        p = numerics::sym(&next);
        if delta <= 1e-14 * (1.0 + p.norm()) {
            return Ok(p);
        }
    }
    let _ = n;
    Err(Error::IllConditioned { detail: "Riccati iteration did not converge".into() })
}

/// Optimal LQR gain `K* = -(R + B'PB)^-1 B'PA` for the `u = K x` convention.
pub fn optimal_gain(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let p = dare(a, b, q, r)?;
    let rbpb = r + b.transpose() * &p * b;
    let inv = rbpb.try_inverse().ok_or_else(|| Error::IllConditioned {
        detail: "R + B'PB singular in gain recovery".into(),
    })?;
    Ok(-(inv * b.transpose() * &p * a))
}

/// LQR cost `C(K)` of a stabilizing gain on the true model `(A, B)`.
pub fn cost(a: &Mat, b: &Mat, k: &Mat, q: &Mat, r: &Mat) -> Result<f64> {
    let a_cl = a + b * k;
    let sigma = numerics::solve_dlyap(&a_cl, &Mat::identity(a.nrows(), a.nrows()))?;
    Ok((q + k.transpose() * r * k).dot(&sigma.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn test_system() -> (Mat, Mat, Mat, Mat) {
        let a = Mat::from_row_slice(2, 2, &[1.1, 0.3, -0.1, 0.8]);
        let b = Mat::from_column_slice(2, 1, &[0.5, 1.0]);
        let q = Mat::identity(2, 2);
        let r = Mat::from_element(1, 1, 1.0);
        (a, b, q, r)
    }

    #[test]
    fn dare_residual_is_tiny() {
        let (a, b, q, r) = test_system();
        let p = dare(&a, &b, &q, &r).unwrap();
        let inv = (&r + b.transpose() * &p * &b).try_inverse().unwrap();
        let res = &q + a.transpose() * &p * &a
            - a.transpose() * &p * &b * inv * b.transpose() * &p * &a
            - &p;
        assert!(res.norm() < 1e-10 * p.norm());
    }

    #[test]
    fn optimal_gain_stabilizes_and_minimizes() {
        let (a, b, q, r) = test_system();
        let k_star = optimal_gain(&a, &b, &q, &r).unwrap();
        assert!(numerics::spectral_radius(&(&a + &b * &k_star)) < 1.0);
        let c_star = cost(&a, &b, &k_star, &q, &r).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut tried = 0;
        while tried < 20 {
            let dk = Mat::from_fn(1, 2, |_, _| 0.05 * rng.sample::<f64, _>(StandardNormal));
            let k = &k_star + dk;
            if numerics::spectral_radius(&(&a + &b * &k)) < 1.0 {
                let c = cost(&a, &b, &k, &q, &r).unwrap();
                assert!(c >= c_star - 1e-10, "perturbed cost {c} below optimum {c_star}");
                tried += 1;
            }
        }
    }

    #[test]
    fn cost_rejects_unstable_gain() {
        let (a, b, q, r) = test_system();
        let k = Mat::from_row_slice(1, 2, &[5.0, 5.0]);
        if numerics::spectral_radius(&(&a + &b * &k)) >= 1.0 {
            assert!(matches!(cost(&a, &b, &k, &q, &r), Err(Error::NotStable { .. })));
        }
    }

    #[test]
    fn cost_matches_hand_computation_for_zero_gain() {
        // Stable A, K = 0: C = Tr(Q Sigma) with Sigma = I + A Sigma A'.
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.3]);
        let b = Mat::from_column_slice(2, 1, &[1.0, 1.0]);
        let q = Mat::identity(2, 2);
        let r = Mat::from_element(1, 1, 1.0);
        let k = Mat::zeros(1, 2);
        // Diagonal A: Sigma_ii = 1/(1-a_ii^2).
        let expected = 1.0 / (1.0 - 0.25) + 1.0 / (1.0 - 0.09);
        assert!((cost(&a, &b, &k, &q, &r).unwrap() - expected).abs() < 1e-12);
    }
}
