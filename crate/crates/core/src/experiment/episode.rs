//! Closed-loop episodes at 100 Hz: offline collection (excitation switch) and
//! adaptive or baseline runs (outer-loop switch).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ExperimentConfig, Mode};
use crate::data::{TrajectoryLog, WeightedCovariance};
use crate::deepo::{self, DeepoController};
use crate::fl;
use crate::init_policy::{solve_regularized, InitPolicyReport, RegularizedProblem};
use crate::plant::{self, PlantState, STEER_RATE_LIMIT};
use crate::{Error, Mat, Result, Vec64};

/// Squared-degree conversion applied exactly once when summarizing.
pub const RAD2_TO_DEG2: f64 = (180.0 / std::f64::consts::PI) * (180.0 / std::f64::consts::PI);

/// Soft-failure threshold on the lean angle for sweep reporting.
pub const SOFT_FAIL_RAD: f64 = std::f64::consts::FRAC_PI_4;

// ChaCha stream ids: paired runs share the episode sensor stream, while the
// probing and collection streams stay independent so noise realizations match
// between baseline and adaptive episodes.
const STREAM_EPISODE_SENSOR: u64 = 0;
const STREAM_PROBE: u64 = 1;
const STREAM_PE: u64 = 2;
const STREAM_COLLECT_SENSOR: u64 = 3;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One logged control-period sample.
#[derive(Debug, Clone)]
pub struct EpisodeRow {
    pub t: f64,
    pub phi: f64,
    pub phi_dot: f64,
    pub delta: f64,
    pub phi_ref: f64,
    pub phi_dot_ref: f64,
    /// Saturated total steering-rate command, rad/s.
    pub u_total: f64,
    pub u_fl: f64,
    pub u_deepo: f64,
    pub e_probe: f64,
    /// Applied gain entries, row-major.
    pub gains: Vec<f64>,
    /// Data-parameterized cost of the updated policy, when defined.
    pub cost: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EpisodeSummary {
    pub ise_phi_deg2: f64,
    pub ise_phi_dot_deg2: f64,
    pub fell: bool,
    pub max_abs_phi_deg: f64,
    pub steps_completed: usize,
    /// Diagnostic only; never serialized so artifacts stay reproducible.
    pub wall_time_s: f64,
}

impl EpisodeSummary {
    pub fn soft_fail(&self) -> bool {
        self.max_abs_phi_deg > SOFT_FAIL_RAD.to_degrees()
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub rows: Vec<EpisodeRow>,
    pub summary: EpisodeSummary,
}

/// Collects offline data: inner loop plus zero-mean excitation, zero
/// reference. The logged state is the tracking error as sensed.
pub fn collect_offline(config: &ExperimentConfig) -> Result<TrajectoryLog> {
    let plant_params = config.true_plant();
    let fl_params = config.fl_params();
    let noise = config.sensor_noise();
    let dt = config.dt_s;
    let t_samples = config.offline_samples;

    let mut sensor_rng = stream_rng(config.seed, STREAM_COLLECT_SENSOR);
    let mut pe_rng = stream_rng(config.seed, STREAM_PE);

    let mut state = PlantState {
        phi: config.plant.phi0_deg.to_radians(),
        ..PlantState::upright()
    };
    let mut meas = plant::measure(&state, &noise, &mut sensor_rng);
    let mut log = TrajectoryLog::with_dims(1, 2);
    let reference = fl::Reference::default();

    for k in 0..t_samples {
        let x_e = Vec64::from_vec(vec![-meas.phi, -meas.phi_dot]);
        let u_pe = config.sigma_pe * pe_rng.sample::<f64, _>(StandardNormal);
        let u_fl = fl::compute(&meas, &reference, &fl_params)?;
        match plant::step(&state, u_fl + u_pe, dt, &plant_params, &noise, &mut sensor_rng) {
            Ok((next, m)) => {
                let x_e_next = Vec64::from_vec(vec![-m.phi, -m.phi_dot]);
                log.push(&Vec64::from_vec(vec![u_pe]), &x_e, &x_e_next);
                state = next;
                meas = m;
            }
            Err(Error::Fallen { phi, .. }) => {
                return Err(Error::Fallen { time: k as f64 * dt, phi })
            }
            Err(e) => return Err(e),
        }
    }

    let pe = log.pe_check();
    if !pe.ok {
        return Err(Error::PeLost { min_singular_value: pe.min_singular_value });
    }
    Ok(log)
}

/// Synthesizes the initial policy from the offline phase of `config`.
pub fn initial_policy(config: &ExperimentConfig) -> Result<InitPolicyReport> {
    let log = collect_offline(config)?;
    initial_policy_from_log(config, &log)
}

pub fn initial_policy_from_log(
    config: &ExperimentConfig,
    log: &TrajectoryLog,
) -> Result<InitPolicyReport> {
    let cov = WeightedCovariance::from_batch(log, config.deepo.offline_lambda)?;
    let deepo_cfg = config.deepo_config();
    solve_regularized(&RegularizedProblem {
        cov,
        q: deepo_cfg.q,
        r: deepo_cfg.r,
        gamma: config.deepo.gamma,
    })
}

/// Runs one closed-loop episode.
///
/// In the adaptive mode the offline phase is replayed first (same seed, its
/// own noise streams) to warm-start the covariance, and `initial_gain` must
/// hold a certified stabilizing gain. The baseline mode ignores it and leaves
/// the outer input at zero. A fall truncates the episode and marks the
/// summary instead of failing.
pub fn run_episode(config: &ExperimentConfig, initial_gain: Option<&Mat>) -> Result<EpisodeRecord> {
    let started = std::time::Instant::now();
    let mode = config.mode;
    if mode == Mode::Collect {
        return Err(Error::Config("run_episode expects run_fl_only or run_deepo".into()));
    }

    let plant_params = config.true_plant();
    let fl_params = config.fl_params();
    let noise = config.sensor_noise();
    let spec = config.reference_spec()?;
    let dt = config.dt_s;
    let steps = config.steps();
    let deepo_cfg = config.deepo_config();

    let mut controller = match mode {
        Mode::RunDeepo => {
            let k0 = initial_gain
                .ok_or_else(|| Error::Config("adaptive mode needs an initial policy".into()))?;
            let log = collect_offline(config)?;
            let cov = WeightedCovariance::from_batch(&log, config.deepo.lambda)?;
            Some(DeepoController::new(deepo_cfg, cov, k0.clone())?)
        }
        _ => None,
    };

    let mut sensor_rng = stream_rng(config.seed, STREAM_EPISODE_SENSOR);
    let mut probe_rng = stream_rng(config.seed, STREAM_PROBE);

    let mut state = PlantState {
        phi: config.plant.phi0_deg.to_radians(),
        ..PlantState::upright()
    };
    let mut meas = plant::measure(&state, &noise, &mut sensor_rng);

    let mut rows: Vec<EpisodeRow> = Vec::with_capacity(steps);
    let mut ise_phi = 0.0;
    let mut ise_phi_dot = 0.0;
    let mut max_abs_phi = state.phi.abs();
    let mut fell = false;

    for k in 0..steps {
        let t = k as f64 * dt;
        let reference = fl::reference_signal(t, &spec);
        let x_e = Vec64::from_vec(vec![
            reference.y_r - meas.phi,
            reference.y_r_dot - meas.phi_dot,
        ]);

        let u_fl = match fl::compute(&meas, &reference, &fl_params) {
            Ok(u) => u,
            Err(Error::Singularity { .. }) => {
                fell = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let (u_deepo, e_probe, gains) = match &controller {
            Some(ctrl) => {
                let u_dp = ctrl.control(&x_e)[0];
                let e = deepo::probing_noise(
                    &Vec64::from_vec(vec![u_dp]),
                    deepo_cfg.probe_scale,
                    deepo_cfg.probe_floor,
                    &mut probe_rng,
                )[0];
                let g = ctrl.gain().iter().cloned().collect::<Vec<f64>>();
                (u_dp, e, g)
            }
            None => (0.0, 0.0, vec![0.0, 0.0]),
        };
        let u_outer = u_deepo + e_probe;
        let u_cmd = u_fl + u_outer;
        let u_total = u_cmd.clamp(-STEER_RATE_LIMIT, STEER_RATE_LIMIT);

        // ISE over true states against the reference at the sample instants.
        ise_phi += (state.phi - reference.y_r).powi(2);
        ise_phi_dot += (state.phi_dot - reference.y_r_dot).powi(2);
        max_abs_phi = max_abs_phi.max(state.phi.abs());

        let step_result = plant::step(&state, u_cmd, dt, &plant_params, &noise, &mut sensor_rng);
        let (next, m) = match step_result {
            Ok(pair) => pair,
            Err(Error::Fallen { .. }) | Err(Error::Singularity { .. }) => {
                fell = true;
                rows.push(EpisodeRow {
                    t,
                    phi: state.phi,
                    phi_dot: state.phi_dot,
                    delta: state.delta,
                    phi_ref: reference.y_r,
                    phi_dot_ref: reference.y_r_dot,
                    u_total,
                    u_fl,
                    u_deepo,
                    e_probe,
                    gains,
                    cost: None,
                });
                break;
            }
            Err(e) => return Err(e),
        };

        let mut cost = None;
        if let Some(ctrl) = controller.as_mut() {
            let ref_next = fl::reference_signal(t + dt, &spec);
            let x_e_next =
                Vec64::from_vec(vec![ref_next.y_r - m.phi, ref_next.y_r_dot - m.phi_dot]);
            let report = ctrl.observe(&Vec64::from_vec(vec![u_outer]), &x_e, &x_e_next)?;
            cost = report.cost;
        }

        rows.push(EpisodeRow {
            t,
            phi: state.phi,
            phi_dot: state.phi_dot,
            delta: state.delta,
            phi_ref: reference.y_r,
            phi_dot_ref: reference.y_r_dot,
            u_total,
            u_fl,
            u_deepo,
            e_probe,
            gains,
            cost,
        });

        state = next;
        meas = m;
    }

    let summary = EpisodeSummary {
        ise_phi_deg2: ise_phi * RAD2_TO_DEG2,
        ise_phi_dot_deg2: ise_phi_dot * RAD2_TO_DEG2,
        fell,
        max_abs_phi_deg: max_abs_phi.to_degrees(),
        steps_completed: rows.len(),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok(EpisodeRecord { rows, summary })
}

/// Full adaptive pipeline: collect, synthesize the initial policy, run.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<EpisodeRecord> {
    let init = initial_policy(config)?;
    let mut episode_config = config.clone();
    episode_config.mode = Mode::RunDeepo;
    run_episode(&episode_config, Some(&init.policy.k))
}
