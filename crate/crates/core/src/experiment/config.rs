//! Experiment configuration: one human-readable TOML file with nested
//! sections; every simulation-study constant has a key and its published
//! value as the default. A partial file overlays the chosen profile.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deepo::DeepoConfig;
use crate::fl::{FlParams, ReferenceSpec};
use crate::plant::{BicycleParams, SensorNoise};
use crate::{Error, Mat, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Offline data collection under the inner loop plus excitation input.
    Collect,
    /// Baseline episode with the inner loop only.
    RunFlOnly,
    /// Adaptive episode with the learned outer loop engaged.
    RunDeepo,
}

/// Base parameter profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Simulation-study weights: Q = diag(1, 0.01), R = 1e-4, T = 200.
    Simulation,
    /// Hardware-style weights: Q = I, R = 0.01, T = 300.
    HardwareLike,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simulation" => Ok(Profile::Simulation),
            "hardware-like" => Ok(Profile::HardwareLike),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantSection {
    /// CoG horizontal offset from the rear contact, m.
    pub a: f64,
    /// CoG height, m.
    pub h: f64,
    /// Wheelbase, m.
    pub b: f64,
    /// Gravity, m/s^2.
    pub g: f64,
    /// Forward speed, m/s.
    pub v: f64,
    /// Steering-actuator pole, rad/s.
    pub actuator_pole: f64,
    /// Initial lean angle of each episode, deg.
    pub phi0_deg: f64,
    /// True-plant perturbations relative to the nominal model.
    pub mismatch: MismatchSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MismatchSection {
    pub a_scale: f64,
    pub h_scale: f64,
    pub b_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlSection {
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeepoSection {
    /// Diagonal of the state weight Q.
    pub q: Vec<f64>,
    /// Diagonal of the input weight R.
    pub r: Vec<f64>,
    pub eta0: f64,
    pub lambda: f64,
    pub xi: usize,
    /// Scheduled covariance reset period in samples; 0 disables it.
    pub reset_period: usize,
    pub probe_scale: f64,
    /// Floor on the probing-noise deviation, rad/s.
    pub probe_floor: f64,
    /// Regularization coefficient of the initial-policy synthesis.
    pub gamma: f64,
    /// Forgetting factor applied to the offline covariance before synthesis.
    pub offline_lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseSection {
    pub sigma_phi_deg: f64,
    pub sigma_phi_dot_deg: f64,
    pub sigma_delta_deg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSection {
    /// `zero`, `sine` or `steps`.
    pub kind: String,
    pub amplitude_deg: f64,
    pub dwell_s: f64,
    pub ramp_s: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Episode length, s.
    pub horizon_s: f64,
    /// Control period, s (100 Hz sampling).
    pub dt_s: f64,
    /// Offline collection length, samples.
    pub offline_samples: usize,
    /// Excitation deviation during collection, rad/s.
    pub sigma_pe: f64,
    pub plant: PlantSection,
    pub fl: FlSection,
    pub deepo: DeepoSection,
    pub noise: NoiseSection,
    pub reference: ReferenceSection,
}

impl ExperimentConfig {
    pub fn simulation_default() -> Self {
        Self {
            mode: Mode::RunDeepo,
            seed: 42,
            horizon_s: 60.0,
            dt_s: 0.01,
            offline_samples: 200,
            sigma_pe: 0.2,
            plant: PlantSection {
                a: 0.550,
                h: 0.700,
                b: 1.200,
                g: 9.82,
                v: 2.22,
                actuator_pole: 100.0,
                phi0_deg: 0.0,
                mismatch: MismatchSection { a_scale: 1.0, h_scale: 1.0, b_scale: 1.0 },
            },
            fl: FlSection { k1: 1.0, k2: 6.0 },
            deepo: DeepoSection {
                q: vec![1.0, 0.01],
                r: vec![1e-4],
                eta0: 1e-3,
                lambda: 1.0 - 1e-4,
                xi: 1,
                reset_period: 0,
                probe_scale: 0.2,
                probe_floor: 0.01,
                gamma: 1.0,
                offline_lambda: 1.0,
            },
            noise: NoiseSection {
                sigma_phi_deg: 0.5,
                sigma_phi_dot_deg: 0.5,
                sigma_delta_deg: 0.5,
            },
            reference: ReferenceSection {
                kind: "steps".into(),
                amplitude_deg: 2.0,
                dwell_s: 10.0,
                ramp_s: 0.5,
                freq_hz: 0.1,
            },
        }
    }

    pub fn hardware_like() -> Self {
        let mut cfg = Self::simulation_default();
        cfg.offline_samples = 300;
        cfg.deepo.q = vec![1.0, 1.0];
        cfg.deepo.r = vec![0.01];
        cfg
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Simulation => Self::simulation_default(),
            Profile::HardwareLike => Self::hardware_like(),
        }
    }

    /// Loads a possibly partial TOML file overlaid on the profile defaults.
    pub fn load(path: &Path, profile: Profile) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, profile)
    }

    pub fn from_toml_str(text: &str, profile: Profile) -> Result<Self> {
        let overlay: toml::Value =
            text.parse().map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let defaults = Self::for_profile(profile);
        let mut base: toml::Value = toml::Value::try_from(&defaults)
            .map_err(|e| Error::Config(format!("default serialization failed: {e}")))?;
        merge_value(&mut base, overlay);
        let cfg: Self =
            base.try_into().map_err(|e| Error::Config(format!("config field error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt_s <= 0.0 || self.horizon_s <= 0.0 {
            return Err(Error::Config("dt and horizon must be positive".into()));
        }
        if self.offline_samples == 0 {
            return Err(Error::Config("offline_samples must be positive".into()));
        }
        if self.sigma_pe < 0.0 {
            return Err(Error::Config("sigma_pe must be non-negative".into()));
        }
        if self.deepo.q.len() != 2 || self.deepo.r.len() != 1 {
            return Err(Error::Config(
                "the outer loop uses a 2-state, 1-input error system".into(),
            ));
        }
        self.nominal_plant().validate()?;
        self.true_plant().validate()?;
        self.fl_params().validate()?;
        self.deepo_config().validate()?;
        self.reference_spec()?;
        Ok(())
    }

    /// Nominal model used by the linearizing controller.
    pub fn nominal_plant(&self) -> BicycleParams {
        BicycleParams {
            a: self.plant.a,
            h: self.plant.h,
            b: self.plant.b,
            g: self.plant.g,
            v: self.plant.v,
            nu: std::f64::consts::FRAC_PI_2,
            actuator_pole: self.plant.actuator_pole,
        }
    }

    /// Simulated plant: nominal values scaled by the mismatch section.
    pub fn true_plant(&self) -> BicycleParams {
        let nominal = self.nominal_plant();
        BicycleParams {
            a: nominal.a * self.plant.mismatch.a_scale,
            h: nominal.h * self.plant.mismatch.h_scale,
            b: nominal.b * self.plant.mismatch.b_scale,
            ..nominal
        }
    }

    pub fn fl_params(&self) -> FlParams {
        FlParams { k1: self.fl.k1, k2: self.fl.k2, model: self.nominal_plant() }
    }

    pub fn deepo_config(&self) -> DeepoConfig {
        DeepoConfig {
            q: Mat::from_diagonal(&crate::Vec64::from_vec(self.deepo.q.clone())),
            r: Mat::from_diagonal(&crate::Vec64::from_vec(self.deepo.r.clone())),
            eta0: self.deepo.eta0,
            lambda: self.deepo.lambda,
            xi: self.deepo.xi,
            reset_period: self.deepo.reset_period,
            probe_scale: self.deepo.probe_scale,
            probe_floor: self.deepo.probe_floor,
        }
    }

    pub fn sensor_noise(&self) -> SensorNoise {
        SensorNoise {
            sigma_phi_deg: self.noise.sigma_phi_deg,
            sigma_phi_dot_deg: self.noise.sigma_phi_dot_deg,
            sigma_delta_deg: self.noise.sigma_delta_deg,
        }
    }

    pub fn reference_spec(&self) -> Result<ReferenceSpec> {
        match self.reference.kind.as_str() {
            "zero" => Ok(ReferenceSpec::Zero),
            "sine" => Ok(ReferenceSpec::Sine {
                amplitude: self.reference.amplitude_deg.to_radians(),
                omega: 2.0 * std::f64::consts::PI * self.reference.freq_hz,
            }),
            "steps" => Ok(ReferenceSpec::Steps {
                amplitude: self.reference.amplitude_deg.to_radians(),
                dwell: self.reference.dwell_s,
                ramp: self.reference.ramp_s,
            }),
            other => Err(Error::Config(format!("unknown reference kind {other:?}"))),
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon_s / self.dt_s).round() as usize
    }
}

/// Recursively overlays `other` onto `base`; tables merge, scalars replace.
fn merge_value(base: &mut toml::Value, other: toml::Value) {
    match (base, other) {
        (toml::Value::Table(base_table), toml::Value::Table(other_table)) => {
            for (key, value) in other_table {
                match base_table.get_mut(&key) {
                    Some(slot) => merge_value(slot, value),
                    None => {
                        base_table.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_match_study_values() {
        let cfg = ExperimentConfig::simulation_default();
        cfg.validate().unwrap();
        assert_eq!(cfg.dt_s, 0.01);
        assert_eq!(cfg.offline_samples, 200);
        assert_eq!(cfg.sigma_pe, 0.2);
        assert_eq!(cfg.deepo.q, vec![1.0, 0.01]);
        assert_eq!(cfg.deepo.r, vec![1e-4]);
        assert_eq!(cfg.deepo.lambda, 1.0 - 1e-4);
        assert_eq!(cfg.deepo.eta0, 1e-3);
        assert_eq!(cfg.deepo.gamma, 1.0);
        assert!((cfg.plant.v - 2.22).abs() < 1e-12);

        let hw = ExperimentConfig::hardware_like();
        assert_eq!(hw.offline_samples, 300);
        assert_eq!(hw.deepo.q, vec![1.0, 1.0]);
        assert_eq!(hw.deepo.r, vec![0.01]);
    }

    #[test]
    fn partial_overlay_keeps_other_defaults() {
        let text = "seed = 7\n[deepo]\nxi = 50\n";
        let cfg = ExperimentConfig::from_toml_str(text, Profile::Simulation).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.deepo.xi, 50);
        assert_eq!(cfg.deepo.q, vec![1.0, 0.01]);
        assert_eq!(cfg.offline_samples, 200);
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = ExperimentConfig::simulation_default();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, Profile::HardwareLike).unwrap();
        // A full file overrides every profile default.
        assert_eq!(back.deepo.q, vec![1.0, 0.01]);
        assert_eq!(back.offline_samples, 200);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("dt_s = -1.0", Profile::Simulation).is_err());
        assert!(ExperimentConfig::from_toml_str("[reference]\nkind = \"sawtooth\"", Profile::Simulation)
            .is_err());
        assert!(ExperimentConfig::from_toml_str("mode = \"fly\"", Profile::Simulation).is_err());
    }
}
