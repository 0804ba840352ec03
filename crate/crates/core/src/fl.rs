//! Inner-loop output feedback-linearization controller.
//!
//! Cancels the known lean nonlinearities and assigns the tracking-error
//! dynamics `e_dd + k1 e_d + k2 e = 0`. The steering angle stays an internal
//! state: it is not linearized and is left to the outer loop.

use crate::plant::{BicycleParams, Measurement, EPS_SING};
use crate::{Error, Result};

/// Gains and nominal model of the linearizing law.
#[derive(Debug, Clone)]
pub struct FlParams {
    /// Derivative-error gain, 1/s.
    pub k1: f64,
    /// Proportional-error gain, 1/s^2.
    pub k2: f64,
    /// Nominal plant model; may be mismatched from the true plant.
    pub model: BicycleParams,
}

impl FlParams {
    /// Table values `k1 = 1`, `k2 = 6` on the nominal plant.
    pub fn paper_default() -> Self {
        Self { k1: 1.0, k2: 6.0, model: BicycleParams::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k1 <= 0.0 || self.k2 <= 0.0 {
            return Err(Error::Config("FL gains must be positive".into()));
        }
        self.model.validate()
    }
}

/// Reference output and its first two derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reference {
    /// Lean-angle reference, rad.
    pub y_r: f64,
    /// Reference rate, rad/s.
    pub y_r_dot: f64,
    /// Reference acceleration, rad/s^2.
    pub y_r_ddot: f64,
}

/// Reference waveform, all amplitudes in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReferenceSpec {
    Zero,
    /// `A sin(omega t)` with analytically exact derivatives.
    Sine { amplitude: f64, omega: f64 },
    /// Alternating `+-amplitude` levels with `dwell` seconds each and a
    /// cosine ramp of `ramp` seconds at every transition.
    Steps { amplitude: f64, dwell: f64, ramp: f64 },
}

impl ReferenceSpec {
    /// Simulation default: alternating +-2 degrees, 10 s dwell, 0.5 s ramps.
    pub fn default_steps() -> Self {
        ReferenceSpec::Steps { amplitude: 2.0f64.to_radians(), dwell: 10.0, ramp: 0.5 }
    }
}

/// Evaluates the reference waveform at time `t`.
pub fn reference_signal(t: f64, spec: &ReferenceSpec) -> Reference {
    match *spec {
        ReferenceSpec::Zero => Reference::default(),
        ReferenceSpec::Sine { amplitude, omega } => Reference {
            y_r: amplitude * (omega * t).sin(),
            y_r_dot: amplitude * omega * (omega * t).cos(),
            y_r_ddot: -amplitude * omega * omega * (omega * t).sin(),
        },
        ReferenceSpec::Steps { amplitude, dwell, ramp } => {
            let segment = (t / dwell).floor() as i64;
            let level = |k: i64| -> f64 {
                if k < 0 {
                    0.0
                } else if k % 2 == 0 {
                    amplitude
                } else {
                    -amplitude
                }
            };
            let current = level(segment);
            let previous = level(segment - 1);
            let s = t - segment as f64 * dwell;
            if s < ramp && ramp > 0.0 {
                let jump = current - previous;
                let phase = std::f64::consts::PI * s / ramp;
                Reference {
                    y_r: previous + jump * 0.5 * (1.0 - phase.cos()),
                    y_r_dot: jump * std::f64::consts::PI / (2.0 * ramp) * phase.sin(),
                    y_r_ddot: jump * std::f64::consts::PI * std::f64::consts::PI
                        / (2.0 * ramp * ramp)
                        * phase.cos(),
                }
            } else {
                Reference { y_r: current, y_r_dot: 0.0, y_r_ddot: 0.0 }
            }
        }
    }
}

/// Linearizing steering-rate command `u = (w - f(x)) / p(x)`.
///
/// Uses the noisy measurements directly; noise robustness is the outer
/// loop's job. Never returns a non-finite value: the singularity guard
/// fires first.
pub fn compute(meas: &Measurement, reference: &Reference, params: &FlParams) -> Result<f64> {
    let guard = std::f64::consts::FRAC_PI_2 - EPS_SING;
    if meas.phi.abs() >= guard {
        return Err(Error::Singularity { angle: meas.phi });
    }
    if meas.delta.abs() >= guard {
        return Err(Error::Singularity { angle: meas.delta });
    }

    let m = &params.model;
    let (a, h, b, g, v) = (m.a, m.h, m.b, m.g, m.v);
    let (x1, x3) = (meas.phi, meas.delta);
    let f = -(1.0 / (b * h) - x3.tan() * x1.tan() / (b * b)) * x3.tan() * v * v
        + g / h * x1.sin();
    let p = a / (b * h) * x1.cos() * v;
    if p.abs() < 1e-9 {
        return Err(Error::Singularity { angle: meas.phi });
    }
    let w = reference.y_r_ddot
        + params.k1 * (reference.y_r_dot - meas.phi_dot)
        + params.k2 * (reference.y_r - meas.phi);
    Ok((w - f) / p)
}
