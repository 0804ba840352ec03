//! Covariance-parameterized policy optimization for direct adaptive LQR.
//!
//! Each sample the online loop parameterizes the applied gain through the
//! current covariance, takes one projected gradient step on the
//! data-parameterized LQR cost, and recovers a candidate gain. The candidate
//! replaces the applied gain only on the gain-update schedule, and only when
//! its closed-loop certificate holds.

use rand::Rng;
use rand_distr::Normal;

use crate::data::WeightedCovariance;
use crate::{numerics, Error, Mat, Result, Vec64};

/// Floor on the stepsize denominator under weak excitation.
pub const EPS_STEP_DEN: f64 = 1e-9;
/// Condition-number limit above which the covariance inverse is distrusted.
const COND_LIMIT: f64 = 1e12;

/// Feedback gain together with its parameterized form and certificate flag.
#[derive(Debug, Clone)]
pub struct Policy {
    /// Applied feedback gain, `m x n`.
    pub k: Mat,
    /// Parameterized policy `V`, `(m+n) x n`.
    pub v: Mat,
    /// Whether the last stamped certificate `rho(Xbar1 V) < 1` held.
    pub stabilizing: bool,
}

impl Policy {
    pub fn from_gain(k: Mat, cov: &WeightedCovariance) -> Result<Self> {
        let v = parameterize(&k, cov)?;
        let rho = numerics::spectral_radius(&(cov.xbar1() * &v));
        Ok(Self { k, v, stabilizing: rho < 1.0 })
    }
}

/// Tuning knobs of the adaptive loop.
#[derive(Debug, Clone)]
pub struct DeepoConfig {
    /// State weight, `n x n` positive definite.
    pub q: Mat,
    /// Input weight, `m x m` positive definite.
    pub r: Mat,
    /// Base stepsize scaled online by the excitation level.
    pub eta0: f64,
    /// Forgetting factor in `(0, 1]`.
    pub lambda: f64,
    /// Gain-update interval in samples (1 = every sample).
    pub xi: usize,
    /// Covariance reset period in samples; 0 disables scheduled resets.
    pub reset_period: usize,
    /// Probing-noise standard deviation as a fraction of the commanded input.
    pub probe_scale: f64,
    /// Absolute floor on the probing-noise standard deviation.
    pub probe_floor: f64,
}

impl DeepoConfig {
    pub fn validate(&self) -> Result<()> {
        if !numerics::is_psd(&self.q, 0.0).unwrap_or(false)
            || numerics::min_symmetric_eigenvalue(&self.q) <= 0.0
        {
            return Err(Error::Config("Q must be symmetric positive definite".into()));
        }
        if numerics::min_symmetric_eigenvalue(&self.r) <= 0.0 {
            return Err(Error::Config("R must be symmetric positive definite".into()));
        }
        if self.eta0 < 0.0 {
            return Err(Error::Config("eta0 must be non-negative".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config("lambda must lie in (0, 1]".into()));
        }
        if self.xi == 0 {
            return Err(Error::Config("xi must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stacks `[K; I_n]`.
fn stack_gain(k: &Mat) -> Mat {
    let (m, n) = k.shape();
    let mut s = Mat::zeros(m + n, n);
    s.view_mut((0, 0), (m, n)).copy_from(k);
    s.view_mut((m, 0), (n, n)).copy_from(&Mat::identity(n, n));
    s
}

/// Solves `Phi V = [K; I]` for the parameterized policy of a gain.
pub fn parameterize(k: &Mat, cov: &WeightedCovariance) -> Result<Mat> {
    let cond = numerics::cond_2(cov.phi());
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::IllConditioned {
            detail: format!("covariance condition estimate {cond:.3e}"),
        });
    }
    Ok(cov.phi_inv() * stack_gain(k))
}

/// Recovers the gain `K = Ubar0 V` from a parameterized policy.
pub fn recover_gain(cov: &WeightedCovariance, v: &Mat) -> Mat {
    cov.ubar0() * v
}

pub(crate) fn cost_raw(v: &Mat, ubar0: &Mat, xbar1: &Mat, q: &Mat, r: &Mat) -> Result<f64> {
    let a_cl = xbar1 * v;
    let n = a_cl.nrows();
    let sigma = numerics::solve_dlyap(&a_cl, &Mat::identity(n, n))?;
    let uv = ubar0 * v;
    let weight = q + uv.transpose() * r * &uv;
    Ok(weight.dot(&sigma))
}

/// Data-parameterized LQR cost `J_t(V) = Tr((Q + V'U'RUV) Sigma(V))`.
pub fn cost(v: &Mat, cov: &WeightedCovariance, q: &Mat, r: &Mat) -> Result<f64> {
    cost_raw(v, &cov.ubar0(), cov.xbar1(), q, r)
}

pub(crate) fn gradient_raw(v: &Mat, ubar0: &Mat, xbar1: &Mat, q: &Mat, r: &Mat) -> Result<Mat> {
    let a_cl = xbar1 * v;
    let n = a_cl.nrows();
    let sigma = numerics::solve_dlyap(&a_cl, &Mat::identity(n, n))?;
    let uv = ubar0 * v;
    let m_weight = numerics::sym(&(q + uv.transpose() * r * &uv));
    let p = numerics::solve_dlyap(&a_cl.transpose(), &m_weight)?;
    let lhs = ubar0.transpose() * r * ubar0 + xbar1.transpose() * &p * xbar1;
    Ok(2.0 * lhs * v * sigma)
}

/// Gradient of `J_t` with respect to `V` (policy-gradient form).
pub fn gradient(v: &Mat, cov: &WeightedCovariance, q: &Mat, r: &Mat) -> Result<Mat> {
    gradient_raw(v, &cov.ubar0(), cov.xbar1(), q, r)
}

pub(crate) fn projection_of(xbar0: &Mat) -> Result<Mat> {
    let svd = xbar0.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smax == 0.0 || smin <= 1e-12 * smax {
        return Err(Error::RankDeficient { min_singular_value: smin.min(smax) });
    }
    let dim = xbar0.ncols();
    Ok(Mat::identity(dim, dim) - numerics::pinv(xbar0) * xbar0)
}

/// Orthogonal projector onto the nullspace of `Xbar0`.
pub fn projection(cov: &WeightedCovariance) -> Result<Mat> {
    projection_of(&cov.xbar0())
}

pub(crate) fn stepsize_raw(eta0: f64, ubar0: &Mat, proj: &Mat) -> f64 {
    let snr = ubar0 * proj * ubar0.transpose();
    let norm = snr
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max);
    eta0 / norm.max(EPS_STEP_DEN)
}

/// Excitation-scaled stepsize `eta_t = eta0 / ||Ubar0 Pi Ubar0'||`.
pub fn adaptive_stepsize(eta0: f64, cov: &WeightedCovariance, proj: &Mat) -> f64 {
    stepsize_raw(eta0, &cov.ubar0(), proj)
}

/// Outcome of one policy-update step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub policy: Policy,
    /// Whether the applied gain changed on this sample.
    pub gain_updated: bool,
    /// Cost of the updated parameterized policy on the current data.
    pub cost: f64,
}

/// One iteration of the adaptive loop: parameterize the applied gain, take a
/// projected gradient step, recover the candidate gain, and apply it when the
/// sample index hits the gain-update schedule.
///
/// Fails with `NotStable` when either the parameterization of the current
/// gain or the candidate policy loses its closed-loop certificate; callers
/// keep the previous gain in that case.
pub fn step(
    policy: &Policy,
    cov: &WeightedCovariance,
    config: &DeepoConfig,
    t: usize,
) -> Result<StepOutcome> {
    let v = parameterize(&policy.k, cov)?;
    let proj = projection(cov)?;
    let grad = gradient(&v, cov, &config.q, &config.r)?;
    let eta = adaptive_stepsize(config.eta0, cov, &proj);
    let v_next = &v - eta * &proj * grad;

    let rho = numerics::spectral_radius(&(cov.xbar1() * &v_next));
    if rho >= 1.0 - numerics::EPS_STAB {
        return Err(Error::NotStable { rho });
    }
    let candidate = recover_gain(cov, &v_next);
    let cost = cost(&v_next, cov, &config.q, &config.r)?;

    let gain_updated = t % config.xi == 0;
    let k = if gain_updated { candidate } else { policy.k.clone() };
    Ok(StepOutcome { policy: Policy { k, v: v_next, stabilizing: true }, gain_updated, cost })
}

/// Draws probing noise with per-channel deviation
/// `max(probe_scale * |u|, probe_floor)`.
pub fn probing_noise<R: Rng>(
    u_deepo: &Vec64,
    probe_scale: f64,
    probe_floor: f64,
    rng: &mut R,
) -> Vec64 {
    Vec64::from_iterator(
        u_deepo.len(),
        u_deepo.iter().map(|&u| {
            let sd = (probe_scale * u.abs()).max(probe_floor);
            if sd == 0.0 {
                0.0
            } else {
                rng.sample(Normal::new(0.0, sd).expect("positive std"))
            }
        }),
    )
}

/// Report of one controller sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct SampleReport {
    pub gain_updated: bool,
    pub step_skipped: bool,
    pub covariance_reset: bool,
    pub cost: Option<f64>,
}

/// Owns the covariance, policy and schedules of one adaptive control loop.
pub struct DeepoController {
    config: DeepoConfig,
    cov: WeightedCovariance,
    policy: Policy,
    /// Samples processed by `observe` since construction.
    samples_seen: usize,
    /// Remaining samples during which policy updates stay frozen after a reset.
    freeze_remaining: usize,
    skipped_steps: usize,
}

impl DeepoController {
    pub fn new(config: DeepoConfig, cov: WeightedCovariance, initial_gain: Mat) -> Result<Self> {
        config.validate()?;
        let policy = Policy::from_gain(initial_gain, &cov)?;
        if !policy.stabilizing {
            let rho = numerics::spectral_radius(&(cov.xbar1() * &policy.v));
            return Err(Error::NotStabilizing { rho });
        }
        Ok(Self { config, cov, policy, samples_seen: 0, freeze_remaining: 0, skipped_steps: 0 })
    }

    /// Feedback part of the outer input, `u = K x` (probing noise excluded).
    pub fn control(&self, x: &Vec64) -> Vec64 {
        (&self.policy.k * x).column(0).into_owned()
    }

    pub fn gain(&self) -> &Mat {
        &self.policy.k
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn covariance(&self) -> &WeightedCovariance {
        &self.cov
    }

    pub fn skipped_steps(&self) -> usize {
        self.skipped_steps
    }

    fn safeguard_reset(&mut self) {
        let fresh = self.cov.input_dim() + self.cov.state_dim();
        self.cov.reset(fresh);
        self.freeze_remaining = fresh;
    }

    /// Ingests the sample `(u_outer, x, x_next)` and advances the policy.
    ///
    /// Excitation loss triggers the covariance-reset safeguard instead of
    /// failing; a candidate policy without a stability certificate is skipped
    /// and the previous gain retained.
    pub fn observe(&mut self, u_outer: &Vec64, x: &Vec64, x_next: &Vec64) -> Result<SampleReport> {
        self.samples_seen += 1;
        let mut report = SampleReport::default();

        let mut phi_vec = Vec64::zeros(u_outer.len() + x.len());
        phi_vec.rows_mut(0, u_outer.len()).copy_from(u_outer);
        phi_vec.rows_mut(u_outer.len(), x.len()).copy_from(x);

        if self.config.reset_period > 0 && self.samples_seen % self.config.reset_period == 0 {
            self.safeguard_reset();
            report.covariance_reset = true;
        }

        match self.cov.update(&phi_vec, x_next) {
            Ok(()) => {}
            Err(Error::IllConditioned { .. }) => {
                self.safeguard_reset();
                report.covariance_reset = true;
                self.cov.update(&phi_vec, x_next)?;
            }
            Err(e) => return Err(e),
        }

        if self.freeze_remaining > 0 {
            self.freeze_remaining -= 1;
            report.step_skipped = true;
            return Ok(report);
        }

        match step(&self.policy, &self.cov, &self.config, self.samples_seen) {
            Ok(outcome) => {
                report.gain_updated = outcome.gain_updated;
                report.cost = Some(outcome.cost);
                self.policy = outcome.policy;
            }
            Err(Error::NotStable { .. }) => {
                self.skipped_steps += 1;
                report.step_skipped = true;
            }
            Err(Error::IllConditioned { .. }) => {
                self.safeguard_reset();
                self.skipped_steps += 1;
                report.step_skipped = true;
                report.covariance_reset = true;
            }
            Err(e) => return Err(e),
        }
        Ok(report)
    }
}
