//! Offline synthesis of the initial stabilizing policy.
//!
//! Solves the regularized covariance-parameterized LQR over offline data by a
//! convex reformulation: with `Y = V Sigma` and `Sigma = Xbar0 Y`, stability,
//! input cost and the robustness regularizer each become a Schur-complement
//! block, and the objective `Tr(Q Sigma) + Tr(W) + gamma Tr(Z)` is linear. To
//! keep `Xbar0 Y` symmetric by construction the solver parameterizes
//! `Y = pinv(Xbar0) Sigma + N0 H` with `N0` a nullspace basis of `Xbar0` and
//! `Sigma` an explicit symmetric variable. A projected-gradient polish on the
//! smooth parameterization then tightens the recovered policy, and a
//! spectral-radius certificate gates every returned result.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::WeightedCovariance;
use crate::deepo::{self, Policy};
use crate::sdp::{self, SdpProblem};
use crate::{numerics, Error, Mat, Result, Vec64};

/// Margin on the stability certificate `rho(Xbar1 V) < 1`.
const CERT_MARGIN: f64 = 1e-6;

/// Offline data and weights of the regularized synthesis problem.
#[derive(Debug, Clone)]
pub struct RegularizedProblem {
    pub cov: WeightedCovariance,
    pub q: Mat,
    pub r: Mat,
    /// Regularization coefficient; zero recovers the plain program.
    pub gamma: f64,
}

/// Solver metadata recorded alongside the returned policy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverInfo {
    pub phase1_iterations: usize,
    pub barrier_iterations: usize,
    pub polish_iterations: usize,
}

/// Synthesis result: certified policy plus diagnostics.
#[derive(Debug, Clone)]
pub struct InitPolicyReport {
    pub policy: Policy,
    /// `J_t(V) + gamma Tr(V Sigma V' Phi)` at the returned policy.
    pub objective: f64,
    pub certificate_rho: f64,
    pub solver: SolverInfo,
}

/// Index map for the symmetric-plus-nullspace variable layout.
struct VarLayout {
    n: usize,
    m: usize,
    dim: usize,
    sigma_pairs: Vec<(usize, usize)>,
    w_pairs: Vec<(usize, usize)>,
    z_pairs: Vec<(usize, usize)>,
    n_sigma: usize,
    n_h: usize,
    n_w: usize,
}

impl VarLayout {
    fn new(m: usize, n: usize) -> Self {
        let dim = m + n;
        let pairs = |k: usize| {
            let mut v = Vec::new();
            for i in 0..k {
                for j in i..k {
                    v.push((i, j));
                }
            }
            v
        };
        let sigma_pairs = pairs(n);
        let w_pairs = pairs(m);
        let z_pairs = pairs(dim);
        let n_sigma = sigma_pairs.len();
        let n_h = m * n;
        let n_w = w_pairs.len();
        Self { n, m, dim, sigma_pairs, w_pairs, z_pairs, n_sigma, n_h, n_w }
    }

    fn total(&self) -> usize {
        self.n_sigma + self.n_h + self.n_w + self.z_pairs.len()
    }

    fn sym_basis(k: usize, i: usize, j: usize) -> Mat {
        let mut e = Mat::zeros(k, k);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        e
    }
}

/// Solves the regularized covariance-parameterized LQR on offline data.
pub fn solve_regularized(prob: &RegularizedProblem) -> Result<InitPolicyReport> {
    if prob.gamma < 0.0 {
        return Err(Error::Config("gamma must be non-negative".into()));
    }
    let cov = &prob.cov;
    let (m, n) = (cov.input_dim(), cov.state_dim());
    let layout = VarLayout::new(m, n);
    let dim = layout.dim;

    let ubar = cov.ubar0();
    let xbar0 = cov.xbar0();
    let xbar1 = cov.xbar1().clone();
    let phi_half = numerics::psd_sqrt(cov.phi());
    let r_half = numerics::psd_sqrt(&prob.r);

    // Nullspace basis of Xbar0 (dim x m) and its pseudoinverse (dim x n).
    let x0_pinv = numerics::pinv(&xbar0);
    let svd = xbar0.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut n0 = Mat::zeros(dim, m);
    for k in 0..m {
        n0.set_column(k, &v_t.row(n + k).transpose());
    }
    debug_assert!((&xbar0 * &n0).norm() < 1e-8 * (1.0 + xbar0.norm()));

    // dY per scalar variable; dSigma is nonzero only for Sigma variables.
    let p_total = layout.total();
    let mut d_y: Vec<Mat> = Vec::with_capacity(p_total);
    let mut d_sigma: Vec<Mat> = Vec::with_capacity(p_total);
    for &(i, j) in &layout.sigma_pairs {
        let basis = VarLayout::sym_basis(n, i, j);
        d_y.push(&x0_pinv * &basis);
        d_sigma.push(basis);
    }
    for r_idx in 0..m {
        for c_idx in 0..n {
            let mut e = Mat::zeros(m, n);
            e[(r_idx, c_idx)] = 1.0;
            d_y.push(&n0 * &e);
            d_sigma.push(Mat::zeros(n, n));
        }
    }
    for _ in 0..layout.n_w + layout.z_pairs.len() {
        d_y.push(Mat::zeros(dim, n));
        d_sigma.push(Mat::zeros(n, n));
    }

    // Objective: Tr(Q Sigma) + Tr(W) + gamma Tr(Z).
    let mut c = Vec64::zeros(p_total);
    for (idx, &(i, j)) in layout.sigma_pairs.iter().enumerate() {
        c[idx] = if i == j { prob.q[(i, i)] } else { 2.0 * prob.q[(i, j)] };
    }
    let w_offset = layout.n_sigma + layout.n_h;
    for (idx, &(i, j)) in layout.w_pairs.iter().enumerate() {
        if i == j {
            c[w_offset + idx] = 1.0;
        }
    }
    let z_offset = w_offset + layout.n_w;
    for (idx, &(i, j)) in layout.z_pairs.iter().enumerate() {
        if i == j {
            c[z_offset + idx] = prob.gamma;
        }
    }

    // Three Schur blocks assembled per variable.
    let b1_size = 2 * n;
    let b2_size = m + n;
    let b3_size = dim + n;
    let mut f0 = vec![Mat::zeros(b1_size, b1_size), Mat::zeros(b2_size, b2_size), Mat::zeros(b3_size, b3_size)];
    f0[0].view_mut((0, 0), (n, n)).copy_from(&(-Mat::identity(n, n)));

    let mut fi: Vec<Vec<Mat>> = vec![Vec::with_capacity(p_total); 3];
    for v_idx in 0..p_total {
        let dy = &d_y[v_idx];
        let ds = &d_sigma[v_idx];

        // Stability block [[Sigma - I, Xbar1 Y], [., Sigma]].
        let mut b1 = Mat::zeros(b1_size, b1_size);
        b1.view_mut((0, 0), (n, n)).copy_from(ds);
        let x1y = &xbar1 * dy;
        b1.view_mut((0, n), (n, n)).copy_from(&x1y);
        b1.view_mut((n, 0), (n, n)).copy_from(&x1y.transpose());
        b1.view_mut((n, n), (n, n)).copy_from(ds);
        fi[0].push(b1);

        // Input-cost block [[W, R^1/2 U Y], [., Sigma]].
        let mut b2 = Mat::zeros(b2_size, b2_size);
        if v_idx >= w_offset && v_idx < z_offset {
            let (i, j) = layout.w_pairs[v_idx - w_offset];
            b2.view_mut((0, 0), (m, m)).copy_from(&VarLayout::sym_basis(m, i, j));
        }
        let ruy = &r_half * &ubar * dy;
        b2.view_mut((0, m), (m, n)).copy_from(&ruy);
        b2.view_mut((m, 0), (n, m)).copy_from(&ruy.transpose());
        b2.view_mut((m, m), (n, n)).copy_from(ds);
        fi[1].push(b2);

        // Regularizer block [[Z, Phi^1/2 Y], [., Sigma]].
        let mut b3 = Mat::zeros(b3_size, b3_size);
        if v_idx >= z_offset {
            let (i, j) = layout.z_pairs[v_idx - z_offset];
            b3.view_mut((0, 0), (dim, dim)).copy_from(&VarLayout::sym_basis(dim, i, j));
        }
        let py = &phi_half * dy;
        b3.view_mut((0, dim), (dim, n)).copy_from(&py);
        b3.view_mut((dim, 0), (n, dim)).copy_from(&py.transpose());
        b3.view_mut((dim, dim), (n, n)).copy_from(ds);
        fi[2].push(b3);
    }

    let problem = SdpProblem { c, f0, fi };
    let mut x0_guess = Vec64::zeros(p_total);
    for (idx, &(i, j)) in layout.sigma_pairs.iter().enumerate() {
        if i == j {
            x0_guess[idx] = 2.0;
        }
    }
    let solution = sdp::solve(&problem, &x0_guess, 1e-9)?;

    // Recover Y, Sigma and the policy V = Y Sigma^-1.
    let mut y = Mat::zeros(dim, n);
    for (v_idx, dy) in d_y.iter().enumerate() {
        if solution.x[v_idx] != 0.0 {
            y += dy * solution.x[v_idx];
        }
    }
    let mut sigma = Mat::zeros(n, n);
    for (idx, &(i, j)) in layout.sigma_pairs.iter().enumerate() {
        sigma += VarLayout::sym_basis(n, i, j) * solution.x[idx];
    }
    let sigma_inv = sigma.clone().try_inverse().ok_or_else(|| Error::IllConditioned {
        detail: "recovered Sigma is singular".into(),
    })?;
    let v_sdp = &y * sigma_inv;

    let rho_sdp = numerics::spectral_radius(&(cov.xbar1() * &v_sdp));
    if rho_sdp >= 1.0 - CERT_MARGIN {
        return Err(Error::NotStabilizing { rho: rho_sdp });
    }

    let (v_final, polish_iterations) = polish(&v_sdp, cov, &prob.q, &prob.r, prob.gamma)?;
    let rho = numerics::spectral_radius(&(cov.xbar1() * &v_final));
    if rho >= 1.0 - CERT_MARGIN {
        return Err(Error::NotStabilizing { rho });
    }

    let objective = regularized_objective(&v_final, cov, &prob.q, &prob.r, prob.gamma)?;
    let k = deepo::recover_gain(cov, &v_final);
    Ok(InitPolicyReport {
        policy: Policy { k, v: v_final, stabilizing: true },
        objective,
        certificate_rho: rho,
        solver: SolverInfo {
            phase1_iterations: solution.phase1_iterations,
            barrier_iterations: solution.barrier_iterations,
            polish_iterations,
        },
    })
}

/// Regularizer value `Tr(V Sigma(V) V' Phi)`, the data-direction energy of
/// the policy; in tests this is correlated against the true Lyapunov gap
/// computed from injected noise.
pub fn gap_diagnostic(v: &Mat, cov: &WeightedCovariance) -> Result<f64> {
    let n = cov.state_dim();
    let a_cl = cov.xbar1() * v;
    let sigma = numerics::solve_dlyap(&a_cl, &Mat::identity(n, n))?;
    Ok((v * sigma * v.transpose() * cov.phi()).trace())
}

fn regularized_objective(
    v: &Mat,
    cov: &WeightedCovariance,
    q: &Mat,
    r: &Mat,
    gamma: f64,
) -> Result<f64> {
    let j = deepo::cost(v, cov, q, r)?;
    if gamma == 0.0 {
        return Ok(j);
    }
    Ok(j + gamma * gap_diagnostic(v, cov)?)
}

/// Gradient of the regularizer `Tr(V Sigma(V) V' Phi)` with respect to `V`.
///
/// Same adjoint structure as the cost gradient with `V' Phi V` in place of
/// the stage weight: `2 (Phi + Xbar1' P Xbar1) V Sigma` where
/// `P = dlyap((Xbar1 V)', V' Phi V)`.
fn regularizer_gradient(v: &Mat, cov: &WeightedCovariance) -> Result<Mat> {
    let n = cov.state_dim();
    let a_cl = cov.xbar1() * v;
    let sigma = numerics::solve_dlyap(&a_cl, &Mat::identity(n, n))?;
    let weight = numerics::sym(&(v.transpose() * cov.phi() * v));
    let p = numerics::solve_dlyap(&a_cl.transpose(), &weight)?;
    Ok(2.0 * (cov.phi() + cov.xbar1().transpose() * p * cov.xbar1()) * v * sigma)
}

/// Projected-gradient refinement of the SDP solution on the smooth
/// parameterization; every accepted step keeps the certificate margin.
fn polish(
    v0: &Mat,
    cov: &WeightedCovariance,
    q: &Mat,
    r: &Mat,
    gamma: f64,
) -> Result<(Mat, usize)> {
    let proj = deepo::projection(cov)?;
    let x0_pinv = numerics::pinv(&cov.xbar0());
    let n = cov.state_dim();

    // Exact re-projection onto the affine constraint Xbar0 V = I.
    let correct = |v: &Mat| v - &x0_pinv * (cov.xbar0() * v - Mat::identity(n, n));

    let mut v = correct(v0);
    let mut value = regularized_objective(&v, cov, q, r, gamma)?;
    let mut alpha = 1e-2;
    let mut iterations = 0;

    for _ in 0..3000 {
        let grad_cost = deepo::gradient(&v, cov, q, r)?;
        let grad = if gamma == 0.0 {
            grad_cost
        } else {
            grad_cost + gamma * regularizer_gradient(&v, cov)?
        };
        let direction = &proj * grad;
        let g_norm = direction.norm();
        if g_norm <= 1e-10 * (1.0 + value.abs()) {
            break;
        }

        let mut accepted = false;
        for _ in 0..60 {
            let candidate = correct(&(&v - alpha * &direction));
            let rho = numerics::spectral_radius(&(cov.xbar1() * &candidate));
            if rho < 1.0 - CERT_MARGIN {
                if let Ok(cand_value) = regularized_objective(&candidate, cov, q, r, gamma) {
                    if cand_value <= value - 1e-4 * alpha * g_norm * g_norm {
                        v = candidate;
                        value = cand_value;
                        accepted = true;
                        alpha = (alpha * 2.0).min(1e2);
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    Ok((v, iterations))
}

/// Serialized form of a synthesized policy.
#[derive(Debug, Serialize, Deserialize)]
pub struct PolicyArtifact {
    pub policy: PolicySection,
    pub solver: SolverSection,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PolicySection {
    /// Gain rows, `m` rows of `n` entries.
    pub k: Vec<Vec<f64>>,
    /// Parameterized policy rows, `m+n` rows of `n` entries.
    pub v: Vec<Vec<f64>>,
    pub objective: f64,
    pub certificate_rho: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolverSection {
    pub phase1_iterations: usize,
    pub barrier_iterations: usize,
    pub polish_iterations: usize,
    pub gamma: f64,
    pub lambda: f64,
}

fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn rows_to_mat(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::Io("empty matrix in policy artifact".into()));
    }
    let c = rows[0].len();
    if c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Io("ragged matrix in policy artifact".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Writes the policy artifact as a TOML key-value file.
pub fn write_policy_artifact(
    path: &Path,
    report: &InitPolicyReport,
    gamma: f64,
    lambda: f64,
) -> Result<()> {
    let artifact = PolicyArtifact {
        policy: PolicySection {
            k: mat_to_rows(&report.policy.k),
            v: mat_to_rows(&report.policy.v),
            objective: report.objective,
            certificate_rho: report.certificate_rho,
        },
        solver: SolverSection {
            phase1_iterations: report.solver.phase1_iterations,
            barrier_iterations: report.solver.barrier_iterations,
            polish_iterations: report.solver.polish_iterations,
            gamma,
            lambda,
        },
    };
    let text = toml::to_string_pretty(&artifact)
        .map_err(|e| Error::Io(format!("policy serialization failed: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a policy artifact back; returns the gain and parameterized policy.
pub fn read_policy_artifact(path: &Path) -> Result<(Mat, Mat, PolicyArtifact)> {
    let text = std::fs::read_to_string(path)?;
    let artifact: PolicyArtifact =
        toml::from_str(&text).map_err(|e| Error::Io(format!("policy parse failed: {e}")))?;
    let k = rows_to_mat(&artifact.policy.k)?;
    let v = rows_to_mat(&artifact.policy.v)?;
    Ok((k, v, artifact))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrajectoryLog;
    use crate::lqr;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Closed-loop data from `x+ = A x + B u + w`, `u = k_c x + probe`.
    fn collect(
        a: &Mat,
        b: &Mat,
        k_c: &Mat,
        noise_std: f64,
        t: usize,
        rng: &mut ChaCha8Rng,
    ) -> (TrajectoryLog, Mat) {
        let n = a.nrows();
        let m = b.ncols();
        let mut log = TrajectoryLog::with_dims(m, n);
        let mut w0 = Mat::zeros(n, t);
        let mut x = Vec64::zeros(n);
        for kk in 0..t {
            let probe = Vec64::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
            let u = k_c * &x + probe;
            let w = Vec64::from_fn(n, |_, _| noise_std * rng.sample::<f64, _>(StandardNormal));
            let x_next = a * &x + b * &u + &w;
            w0.set_column(kk, &w);
            log.push(&u, &x, &x_next);
            x = x_next;
        }
        (log, w0)
    }

    fn stable_test_system() -> (Mat, Mat, Mat, Mat) {
        let a = Mat::from_row_slice(2, 2, &[0.9, 0.25, -0.12, 0.7]);
        let b = Mat::from_column_slice(2, 1, &[0.4, 1.0]);
        let q = Mat::identity(2, 2);
        let r = Mat::from_element(1, 1, 0.5);
        (a, b, q, r)
    }

    #[test]
    fn gamma_zero_noiseless_matches_riccati() {
        let (a, b, q, r) = stable_test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (log, _) = collect(&a, &b, &Mat::zeros(1, 2), 0.0, 120, &mut rng);
        let cov = WeightedCovariance::from_batch(&log, 1.0).unwrap();
        let prob = RegularizedProblem { cov, q: q.clone(), r: r.clone(), gamma: 0.0 };
        let report = solve_regularized(&prob).unwrap();

        let k_star = lqr::optimal_gain(&a, &b, &q, &r).unwrap();
        assert!(
            (&report.policy.k - &k_star).norm() < 1e-4,
            "K {:?} vs K* {:?}",
            report.policy.k.as_slice(),
            k_star.as_slice()
        );
        // Objective of the gamma = 0 program equals the model-based optimum.
        let c_star = lqr::cost(&a, &b, &k_star, &q, &r).unwrap();
        assert!((report.objective - c_star).abs() <= 1e-6 * c_star);
    }

    #[test]
    fn constraint_and_lyapunov_feasibility_hold() {
        let (a, b, q, r) = stable_test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (log, _) = collect(&a, &b, &Mat::zeros(1, 2), 1e-2, 150, &mut rng);
        let cov = WeightedCovariance::from_batch(&log, 1.0).unwrap();
        let prob = RegularizedProblem { cov: cov.clone(), q, r, gamma: 1.0 };
        let report = solve_regularized(&prob).unwrap();

        let v = &report.policy.v;
        let residual = cov.xbar0() * v - Mat::identity(2, 2);
        assert!(residual.norm() <= 1e-6, "constraint residual {:.3e}", residual.norm());

        let a_cl = cov.xbar1() * v;
        let sigma = numerics::solve_dlyap(&a_cl, &Mat::identity(2, 2)).unwrap();
        let lyap_gap = &sigma - Mat::identity(2, 2) - &a_cl * &sigma * a_cl.transpose();
        assert!(numerics::is_psd(&(lyap_gap + Mat::identity(2, 2) * 1e-7), 1e-9).unwrap());
        assert!(report.certificate_rho < 1.0);
    }

    #[test]
    fn large_gamma_does_not_increase_gain_energy() {
        let (a, b, q, r) = stable_test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (log, _) = collect(&a, &b, &Mat::zeros(1, 2), 5e-2, 200, &mut rng);
        let cov = WeightedCovariance::from_batch(&log, 1.0).unwrap();
        let at = |gamma: f64| {
            solve_regularized(&RegularizedProblem {
                cov: cov.clone(),
                q: q.clone(),
                r: r.clone(),
                gamma,
            })
            .unwrap()
        };
        let k1 = at(1.0).policy.k.norm();
        let k_big = at(1e6).policy.k.norm();
        assert!(k_big <= k1 * (1.0 + 1e-9), "gain grew under heavy regularization: {k_big} > {k1}");
    }

    #[test]
    fn regularizer_value_is_nonnegative_and_gradient_checks_out() {
        let (a, b, _, _) = stable_test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let (log, _) = collect(&a, &b, &Mat::zeros(1, 2), 1e-2, 100, &mut rng);
        let cov = WeightedCovariance::from_batch(&log, 1.0).unwrap();
        let v = deepo::parameterize(&Mat::zeros(1, 2), &cov).unwrap();
        let reg = gap_diagnostic(&v, &cov).unwrap();
        assert!(reg >= 0.0);

        // Central finite differences along projected directions.
        let proj = deepo::projection(&cov).unwrap();
        let grad = regularizer_gradient(&v, &cov).unwrap();
        for _ in 0..10 {
            let dir_raw = &proj * Mat::from_fn(3, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let dir = &dir_raw / dir_raw.norm();
            let h = 1e-6;
            let plus = gap_diagnostic(&(&v + h * &dir), &cov).unwrap();
            let minus = gap_diagnostic(&(&v - h * &dir), &cov).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            let analytic = grad.dot(&dir);
            assert!(
                (fd - analytic).abs() <= 1e-5 * (1.0 + analytic.abs()),
                "fd {fd} vs {analytic}"
            );
        }
    }

    /// With zero injected noise the certainty-equivalence gap vanishes.
    #[test]
    fn true_gap_is_zero_without_noise() {
        let (a, b, _, _) = stable_test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (log, w0) = collect(&a, &b, &Mat::zeros(1, 2), 0.0, 100, &mut rng);
        let cov = WeightedCovariance::from_batch(&log, 1.0).unwrap();
        let v = deepo::parameterize(&Mat::zeros(1, 2), &cov).unwrap();
        let gap = true_lyapunov_gap(&v, &cov, &log, &w0);
        assert!(gap < 1e-12);
    }

    /// Oracle: with known injected noise, the difference between the
    /// certainty-equivalence closed loop and the true one.
    fn true_lyapunov_gap(v: &Mat, cov: &WeightedCovariance, log: &TrajectoryLog, w0: &Mat) -> f64 {
        let t = log.len();
        let lambda = cov.lambda();
        let d = log.stacked();
        let mut wbar = Mat::zeros(w0.nrows(), d.nrows());
        for k in 0..t {
            let w = lambda.powi((t - 1 - k) as i32);
            wbar += w * w0.column(k).into_owned() * d.column(k).transpose();
        }
        wbar /= t as f64;

        let n = cov.state_dim();
        let a_ce = cov.xbar1() * v;
        let sigma = numerics::solve_dlyap(&a_ce, &Mat::identity(n, n)).unwrap();
        let rhs_ce = Mat::identity(n, n) + &a_ce * &sigma * a_ce.transpose();
        let a_true = (cov.xbar1() - &wbar) * v;
        let rhs_true = Mat::identity(n, n) + &a_true * &sigma * a_true.transpose();
        (rhs_ce - rhs_true).norm()
    }

    /// Smaller regularizer values must come with smaller true gaps in the
    /// bulk of random noise realizations.
    #[test]
    fn regularizer_correlates_with_true_gap() {
        let (a, b, q, r) = stable_test_system();
        let mut ordered = 0;
        let mut counted = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let (log, w0) = collect(&a, &b, &Mat::zeros(1, 2), 0.08, 60, &mut rng);
            let cov = match WeightedCovariance::from_batch(&log, 1.0) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let solve = |gamma: f64| {
                solve_regularized(&RegularizedProblem {
                    cov: cov.clone(),
                    q: q.clone(),
                    r: r.clone(),
                    gamma,
                })
            };
            let (low_reg, high_reg) = match (solve(50.0), solve(0.0)) {
                (Ok(lo), Ok(hi)) => (lo, hi),
                _ => continue,
            };
            let reg_a = gap_diagnostic(&low_reg.policy.v, &cov).unwrap();
            let reg_b = gap_diagnostic(&high_reg.policy.v, &cov).unwrap();
            if reg_a >= 0.5 * reg_b {
                continue;
            }
            counted += 1;
            let gap_a = true_lyapunov_gap(&low_reg.policy.v, &cov, &log, &w0);
            let gap_b = true_lyapunov_gap(&high_reg.policy.v, &cov, &log, &w0);
            if gap_a < gap_b {
                ordered += 1;
            }
        }
        assert!(counted >= 20, "too few comparable instances: {counted}");
        assert!(
            ordered as f64 >= 0.8 * counted as f64,
            "gap ordering held in {ordered}/{counted} cases"
        );
    }

    #[test]
    fn artifact_round_trip() {
        let (a, b, q, r) = stable_test_system();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let (log, _) = collect(&a, &b, &Mat::zeros(1, 2), 1e-2, 100, &mut rng);
        let cov = WeightedCovariance::from_batch(&log, 1.0).unwrap();
        let report =
            solve_regularized(&RegularizedProblem { cov, q, r, gamma: 1.0 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.toml");
        write_policy_artifact(&path, &report, 1.0, 1.0).unwrap();
        let (k, v, artifact) = read_policy_artifact(&path).unwrap();
        assert!((k - &report.policy.k).norm() == 0.0);
        assert!((v - &report.policy.v).norm() == 0.0);
        assert_eq!(artifact.solver.gamma, 1.0);
    }
}
