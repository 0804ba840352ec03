//! Nonlinear point-mass bicycle simulator with steering actuator, input
//! saturation and sensor noise, plus a linearization utility and randomized
//! LTI test plants.
//!
//! Lean dynamics (upright at zero lean, constant forward speed, vertical
//! steering axis):
//!
//! ```text
//! phi_dd = (g/h) sin(phi) + (a/(b h)) cos(phi) v dd
//!          - (1/(b h) - tan(delta) tan(phi) / b^2) tan(delta) v^2
//! ```
//!
//! where `dd` is the actuator-filtered steering rate. The rate command and
//! the steering-angle sensor are measured in opposite senses, so the angle
//! integrates as `d delta / dt = -dd`; with the sign conventions aligned this
//! way the internal steering dynamics under output-linearizing control are
//! contracting (`d delta/dt = -(v/a) tan(delta)` on the zero-error manifold)
//! instead of winding up.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{numerics, Error, Mat, Result};

/// Guard band around the tangent singularities at +-pi/2.
pub const EPS_SING: f64 = 1e-3;
/// Steering-rate command saturation in rad/s.
pub const STEER_RATE_LIMIT: f64 = 4.0;
/// RK4 substeps per control period.
const SUBSTEPS: usize = 10;

/// Physical constants of the lean-dynamics model.
#[derive(Debug, Clone, Copy)]
pub struct BicycleParams {
    /// Horizontal distance from the rear contact point to the CoG, m.
    pub a: f64,
    /// CoG height, m.
    pub h: f64,
    /// Wheelbase, m.
    pub b: f64,
    /// Gravity, m/s^2.
    pub g: f64,
    /// Constant forward speed, m/s.
    pub v: f64,
    /// Steering-axis angle, rad; the model assumes a vertical axis.
    pub nu: f64,
    /// Pole of the first-order steering-rate actuator, rad/s.
    pub actuator_pole: f64,
}

impl Default for BicycleParams {
    /// Instrumented-bicycle values at 8 km/h.
    fn default() -> Self {
        Self {
            a: 0.550,
            h: 0.700,
            b: 1.200,
            g: 9.82,
            v: 2.22,
            nu: std::f64::consts::FRAC_PI_2,
            actuator_pole: 100.0,
        }
    }
}

impl BicycleParams {
    pub fn validate(&self) -> Result<()> {
        if self.a <= 0.0 || self.h <= 0.0 || self.b <= 0.0 || self.v < 0.0 {
            return Err(Error::Config("bicycle geometry must be positive".into()));
        }
        if (self.nu - std::f64::consts::FRAC_PI_2).abs() > 1e-12 {
            return Err(Error::Config("the model assumes a vertical steering axis".into()));
        }
        if self.actuator_pole <= 0.0 {
            return Err(Error::Config("actuator pole must be positive".into()));
        }
        Ok(())
    }

    /// Control-effectiveness factor `a v / (b h)`.
    pub fn lean_gain(&self) -> f64 {
        self.a / (self.b * self.h) * self.v
    }
}

/// Continuous plant state.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlantState {
    /// Lean angle, rad.
    pub phi: f64,
    /// Lean rate, rad/s.
    pub phi_dot: f64,
    /// Steering angle, rad.
    pub delta: f64,
    /// Actuator-filtered steering rate, rad/s.
    pub delta_dot: f64,
}

impl PlantState {
    pub fn upright() -> Self {
        Self::default()
    }
}

/// Standard deviations of the measurement noise, in degrees.
#[derive(Debug, Clone, Copy)]
pub struct SensorNoise {
    pub sigma_phi_deg: f64,
    pub sigma_phi_dot_deg: f64,
    pub sigma_delta_deg: f64,
}

impl SensorNoise {
    pub fn none() -> Self {
        Self { sigma_phi_deg: 0.0, sigma_phi_dot_deg: 0.0, sigma_delta_deg: 0.0 }
    }

    /// Simulation-study values: 0.5 deg on angles, 0.5 deg/s on the rate.
    pub fn paper_default() -> Self {
        Self { sigma_phi_deg: 0.5, sigma_phi_dot_deg: 0.5, sigma_delta_deg: 0.5 }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma_phi_deg == 0.0 && self.sigma_phi_dot_deg == 0.0 && self.sigma_delta_deg == 0.0
    }
}

/// Noisy measurement of the sensed states.
#[derive(Debug, Clone, Copy)]
pub struct Measurement {
    pub phi: f64,
    pub phi_dot: f64,
    pub delta: f64,
}

/// Time derivatives of the plant state for a given steering-rate command.
pub fn dynamics_rhs(state: &PlantState, u: f64, params: &BicycleParams) -> Result<[f64; 4]> {
    let guard = std::f64::consts::FRAC_PI_2 - EPS_SING;
    if state.phi.abs() >= guard {
        return Err(Error::Singularity { angle: state.phi });
    }
    if state.delta.abs() >= guard {
        return Err(Error::Singularity { angle: state.delta });
    }

    let (a, h, b, g, v) = (params.a, params.h, params.b, params.g, params.v);
    let tan_d = state.delta.tan();
    let tan_p = state.phi.tan();
    let phi_dd = g / h * state.phi.sin() + a / (b * h) * state.phi.cos() * v * state.delta_dot
        - (1.0 / (b * h) - tan_d * tan_p / (b * b)) * tan_d * v * v;
    let delta_d = -state.delta_dot;
    let actuator_d = params.actuator_pole * (u - state.delta_dot);
    Ok([state.phi_dot, phi_dd, delta_d, actuator_d])
}

fn rk4_substep(state: &PlantState, u: f64, dt: f64, params: &BicycleParams) -> Result<PlantState> {
    let add = |s: &PlantState, k: &[f64; 4], scale: f64| PlantState {
        phi: s.phi + scale * k[0],
        phi_dot: s.phi_dot + scale * k[1],
        delta: s.delta + scale * k[2],
        delta_dot: s.delta_dot + scale * k[3],
    };
    let k1 = dynamics_rhs(state, u, params)?;
    let k2 = dynamics_rhs(&add(state, &k1, dt / 2.0), u, params)?;
    let k3 = dynamics_rhs(&add(state, &k2, dt / 2.0), u, params)?;
    let k4 = dynamics_rhs(&add(state, &k3, dt), u, params)?;
    Ok(PlantState {
        phi: state.phi + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        phi_dot: state.phi_dot + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        delta: state.delta + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        delta_dot: state.delta_dot + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
    })
}

/// Advances the plant by `dt` with an explicit substep count.
///
/// The lean guard band counts as fallen: the model is undefined past it.
pub fn step_with_substeps<R: Rng>(
    state: &PlantState,
    u: f64,
    dt: f64,
    substeps: usize,
    params: &BicycleParams,
    noise: &SensorNoise,
    rng: &mut R,
) -> Result<(PlantState, Measurement)> {
    assert!(dt > 0.0 && substeps > 0);
    let u_applied = u.clamp(-STEER_RATE_LIMIT, STEER_RATE_LIMIT);
    let h = dt / substeps as f64;
    let fall_guard = std::f64::consts::FRAC_PI_2 - EPS_SING;

    let mut s = *state;
    for _ in 0..substeps {
        if s.phi.abs() >= fall_guard {
            return Err(Error::Fallen { time: 0.0, phi: s.phi });
        }
        s = rk4_substep(&s, u_applied, h, params)?;
    }
    if s.phi.abs() >= fall_guard {
        return Err(Error::Fallen { time: 0.0, phi: s.phi });
    }

    let measurement = measure(&s, noise, rng);
    Ok((s, measurement))
}

/// Samples a noisy measurement of the sensed states; exact in noiseless mode.
pub fn measure<R: Rng>(state: &PlantState, noise: &SensorNoise, rng: &mut R) -> Measurement {
    if noise.is_zero() {
        return Measurement { phi: state.phi, phi_dot: state.phi_dot, delta: state.delta };
    }
    let deg = std::f64::consts::PI / 180.0;
    Measurement {
        phi: state.phi + noise.sigma_phi_deg * deg * rng.sample::<f64, _>(StandardNormal),
        phi_dot: state.phi_dot
            + noise.sigma_phi_dot_deg * deg * rng.sample::<f64, _>(StandardNormal),
        delta: state.delta + noise.sigma_delta_deg * deg * rng.sample::<f64, _>(StandardNormal),
    }
}

/// Advances the plant by one control period (10 internal RK4 substeps).
pub fn step<R: Rng>(
    state: &PlantState,
    u: f64,
    dt: f64,
    params: &BicycleParams,
    noise: &SensorNoise,
    rng: &mut R,
) -> Result<(PlantState, Measurement)> {
    step_with_substeps(state, u, dt, SUBSTEPS, params, noise, rng)
}

/// Exact Jacobians of the lean dynamics at the upright equilibrium.
///
/// States `(phi, phi_dot, delta)` with the steering rate as input; the
/// actuator lag is fast enough to ignore for analysis purposes.
pub fn linearize_upright(params: &BicycleParams) -> (Mat, Mat) {
    let (a, h, b, g, v) = (params.a, params.h, params.b, params.g, params.v);
    let a_c = Mat::from_row_slice(
        3,
        3,
        &[
            0.0,
            1.0,
            0.0,
            g / h,
            0.0,
            -v * v / (b * h),
            0.0,
            0.0,
            0.0,
        ],
    );
    let b_c = Mat::from_column_slice(3, 1, &[0.0, a / (b * h) * v, -1.0]);
    (a_c, b_c)
}

/// Random controllable discrete-time pair for library-level validation.
///
/// The spectral radius of `A` lands in `[0.8, 1.2]`; the suggested process
/// noise level matches the convergence study. Seeded calls are reproducible.
pub fn make_test_lti(n: usize, m: usize, seed: u64) -> (Mat, Mat, f64) {
    assert!(n >= 1 && m >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let raw = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let rho = numerics::spectral_radius(&raw);
        if rho < 1e-9 {
            continue;
        }
        let target: f64 = rng.gen_range(0.8..1.2);
        let a = raw * (target / rho);
        let b = Mat::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        if numerics::controllability_rank(&a, &b) == n {
            return (a, b, 1e-3);
        }
    }
    unreachable!("random pairs are almost surely controllable");
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_params() -> BicycleParams {
        BicycleParams::default()
    }

    #[test]
    fn upright_equilibrium_is_fixed_point() {
        let params = table_params();
        let rhs = dynamics_rhs(&PlantState::upright(), 0.0, &params).unwrap();
        assert!(rhs.iter().all(|&d| d == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, meas) =
            step(&PlantState::upright(), 0.0, 0.01, &params, &SensorNoise::none(), &mut rng)
                .unwrap();
        assert!(next.phi.abs() < 1e-12 && next.phi_dot.abs() < 1e-12);
        assert!(next.delta.abs() < 1e-12 && next.delta_dot.abs() < 1e-12);
        assert_eq!(meas.phi, next.phi);
    }

    #[test]
    fn pendulum_mode_when_steering_locked() {
        let params = table_params();
        let state = PlantState { phi: 0.05, phi_dot: 0.0, delta: 0.0, delta_dot: 0.0 };
        let rhs = dynamics_rhs(&state, 0.0, &params).unwrap();
        let expected = params.g / params.h * 0.05f64.sin();
        assert!((rhs[1] - expected).abs() < 1e-14);
        // Linearized pendulum pole sqrt(g/h) with the instrumented-bicycle values.
        assert!(((params.g / params.h).sqrt() - 3.7455).abs() < 1e-4);
    }

    #[test]
    fn steer_rate_coupling_matches_hand_evaluation() {
        let params = table_params();
        let state = PlantState { phi: 0.0, phi_dot: 0.0, delta: 0.0, delta_dot: 1.0 };
        let rhs = dynamics_rhs(&state, 0.0, &params).unwrap();
        // a/(b h) * v = 0.55 / (1.2 * 0.7) * 2.22
        assert!((rhs[1] - 1.4535714285714285).abs() < 1e-12);
        assert!((params.lean_gain() - 1.4535714285714285).abs() < 1e-14);
    }

    #[test]
    fn saturation_clamps_the_command() {
        let params = table_params();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // One period with u = 10 must behave identically to u = 4.
        let from_large =
            step(&PlantState::upright(), 10.0, 0.01, &params, &SensorNoise::none(), &mut rng)
                .unwrap()
                .0;
        let from_limit =
            step(&PlantState::upright(), 4.0, 0.01, &params, &SensorNoise::none(), &mut rng)
                .unwrap()
                .0;
        assert!((from_large.delta_dot - from_limit.delta_dot).abs() < 1e-15);
        assert!((from_large.phi - from_limit.phi).abs() < 1e-15);
    }

    #[test]
    fn open_loop_lean_diverges() {
        let params = table_params();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut state =
            PlantState { phi: 1.0f64.to_radians(), phi_dot: 0.0, delta: 0.0, delta_dot: 0.0 };
        let mut last = state.phi.abs();
        for _ in 0..100 {
            match step(&state, 0.0, 0.01, &params, &SensorNoise::none(), &mut rng) {
                Ok((next, _)) => {
                    assert!(next.phi.abs() >= last, "lean must grow monotonically");
                    last = next.phi.abs();
                    state = next;
                }
                Err(Error::Fallen { .. }) => return,
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert!(last > 2.0f64.to_radians());
    }

    #[test]
    fn rk4_halved_substep_changes_little() {
        let params = table_params();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let start = PlantState { phi: 0.02, phi_dot: -0.01, delta: 0.01, delta_dot: 0.0 };
        let run = |substeps: usize, rng: &mut ChaCha8Rng| {
            let mut s = start;
            // 1 s horizon, mild bounded input keeps the trajectory smooth.
            for k in 0..100 {
                let u = 0.3 * (0.05 * k as f64).sin();
                s = step_with_substeps(&s, u, 0.01, substeps, &params, &SensorNoise::none(), rng)
                    .unwrap()
                    .0;
            }
            s
        };
        let coarse = run(10, &mut rng);
        let fine = run(20, &mut rng);
        let diff = (coarse.phi - fine.phi).abs().max((coarse.phi_dot - fine.phi_dot).abs());
        let diff = diff.max((coarse.delta - fine.delta).abs());
        assert!(diff <= 1e-8, "substep halving moved the trajectory by {diff:.3e}");
    }

    #[test]
    fn zero_speed_reduces_to_inverted_pendulum() {
        let params = BicycleParams { v: 0.0, ..table_params() };
        let state = PlantState { phi: 0.3, phi_dot: 0.1, delta: 0.2, delta_dot: 0.0 };
        let rhs = dynamics_rhs(&state, 0.0, &params).unwrap();
        assert!((rhs[1] * params.h - params.g * state.phi.sin()).abs() < 1e-14);
    }

    #[test]
    fn measurement_noise_is_reproducible() {
        let params = table_params();
        let noise = SensorNoise::paper_default();
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = PlantState { phi: 0.01, ..PlantState::upright() };
            let mut trace = Vec::new();
            for _ in 0..20 {
                let (next, meas) = step(&s, 0.1, 0.01, &params, &noise, &mut rng).unwrap();
                trace.push((meas.phi, meas.phi_dot, meas.delta));
                s = next;
            }
            trace
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
    }

    #[test]
    fn singularity_guard_on_steering() {
        let params = table_params();
        let state = PlantState { delta: std::f64::consts::FRAC_PI_2 - 1e-4, ..Default::default() };
        assert!(matches!(dynamics_rhs(&state, 0.0, &params), Err(Error::Singularity { .. })));
    }

    #[test]
    fn linearization_matches_finite_differences() {
        let params = table_params();
        let (a_c, b_c) = linearize_upright(&params);
        assert!((a_c[(1, 0)] - params.g / params.h).abs() < 1e-12);
        assert!((a_c[(1, 0)] - 14.028571428571428).abs() < 1e-10);
        assert!((b_c[(1, 0)] - params.lean_gain()).abs() < 1e-12);

        // Finite-difference Jacobian of the (phi, phi_dot, delta) dynamics.
        let h = 1e-7;
        let f = |x: [f64; 3], u: f64| {
            let s = PlantState { phi: x[0], phi_dot: x[1], delta: x[2], delta_dot: u };
            let d = dynamics_rhs(&s, u, &params).unwrap();
            [d[0], d[1], d[2]]
        };
        for col in 0..3 {
            let mut xp = [0.0; 3];
            let mut xm = [0.0; 3];
            xp[col] += h;
            xm[col] -= h;
            let fp = f(xp, 0.0);
            let fm = f(xm, 0.0);
            for row in 0..3 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert!(
                    (fd - a_c[(row, col)]).abs() < 1e-6,
                    "A[{row}][{col}] fd {fd} vs {}",
                    a_c[(row, col)]
                );
            }
        }
        let fp = f([0.0; 3], h);
        let fm = f([0.0; 3], -h);
        for row in 0..3 {
            let fd = (fp[row] - fm[row]) / (2.0 * h);
            assert!((fd - b_c[(row, 0)]).abs() < 1e-6, "B[{row}] fd {fd}");
        }
    }

    #[test]
    fn test_lti_pairs_are_controllable_and_reproducible() {
        let (a1, b1, noise) = make_test_lti(2, 1, 99);
        let (a2, b2, _) = make_test_lti(2, 1, 99);
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(noise, 1e-3);
        for seed in 0..10 {
            let (a, b, _) = make_test_lti(3, 2, seed);
            assert_eq!(numerics::controllability_rank(&a, &b), 3);
            let rho = numerics::spectral_radius(&a);
            assert!((0.8..1.2).contains(&rho), "rho {rho}");
        }
        let (a, b, _) = make_test_lti(1, 1, 7);
        assert_eq!(numerics::controllability_rank(&a, &b), 1);
    }
}
