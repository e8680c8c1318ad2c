//! Direct-drive motor model and the suspended-weight calibration run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::Phase;

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotorSpec {
    /// Torque constant, N·m/A.
    pub torque_constant: f64,
    /// Torque limit, N·m.
    pub torque_limit: f64,
    /// Current noise standard deviation relative to |I|.
    pub noise_rel: f64,
    /// Logging rate, Hz.
    pub sample_rate: f64,
}

impl Default for MotorSpec {
    fn default() -> Self {
        Self { torque_constant: 0.083, torque_limit: 1.2, noise_rel: 0.032, sample_rate: 380.0 }
    }
}

impl MotorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.torque_constant > 0.0 && self.torque_constant.is_finite()) {
            return Err(Error::config("motor.torque_constant must be > 0"));
        }
        if !(self.torque_limit > 0.0 && self.torque_limit.is_finite()) {
            return Err(Error::config("motor.torque_limit must be > 0"));
        }
        if !(self.noise_rel >= 0.0 && self.noise_rel.is_finite()) {
            return Err(Error::config("motor.noise_rel must be >= 0"));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::config("motor.sample_rate must be > 0"));
        }
        Ok(())
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_rel = 0.0;
        self
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }
}

/// One proprioceptive log row for one flipper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleRecord {
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub current1: f64,
    pub current2: f64,
    pub tau1_sense: f64,
    pub tau2_sense: f64,
    pub phase: Phase,
}

/// Current drawn to hold `tau` against an external load.
pub fn torque_to_current<R: Rng + ?Sized>(tau: f64, spec: &MotorSpec, rng: &mut R) -> Result<f64> {
    if tau.abs() > spec.torque_limit {
        return Err(Error::TorqueLimit { tau, limit: spec.torque_limit });
    }
    let ideal = tau / spec.torque_constant;
    if spec.noise_rel == 0.0 {
        return Ok(ideal);
    }
    let z: f64 = rng.sample(StandardNormal);
    Ok(ideal + z * spec.noise_rel * ideal.abs())
}

/// Current at the torque limit, signed like `tau`. Used when a motor stalls.
pub fn saturated_current<R: Rng + ?Sized>(tau: f64, spec: &MotorSpec, rng: &mut R) -> f64 {
    let clipped = tau.clamp(-spec.torque_limit, spec.torque_limit);
    torque_to_current(clipped, spec, rng).expect("clipped torque is within limit")
}

pub fn sense_torque(current: f64, spec: &MotorSpec) -> f64 {
    spec.torque_constant * current
}

/// Seed for motor `index` of a trial, giving each motor its own stream.
pub fn motor_seed(trial_seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = trial_seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn motor_rng(trial_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(motor_seed(trial_seed, index))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightStats {
    pub mass: f64,
    pub tau_ext: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub per_weight: Vec<WeightStats>,
    pub rmse: f64,
}

/// Hang each weight at `moment_arm` and compare sensed torque with `m·g·l`.
pub fn run_calibration(
    weights: &[f64],
    moment_arm: f64,
    spec: &MotorSpec,
    trials: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    if weights.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::config("calibration weights must be > 0"));
    }
    if !(moment_arm > 0.0) {
        return Err(Error::config("calibration moment arm must be > 0"));
    }
    if trials == 0 {
        return Err(Error::config("calibration needs at least one trial per weight"));
    }
    let mut rng = motor_rng(seed, 0);
    let mut per_weight = Vec::with_capacity(weights.len());
    let mut sq = 0.0;
    for &mass in weights {
        let tau_ext = mass * GRAVITY * moment_arm;
        let mut readings = Vec::with_capacity(trials);
        for _ in 0..trials {
            let i = torque_to_current(tau_ext, spec, &mut rng)?;
            readings.push(sense_torque(i, spec));
        }
        let mean = readings.iter().sum::<f64>() / trials as f64;
        let var = if trials > 1 {
            readings.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
        } else {
            0.0
        };
        sq += readings.iter().map(|r| (r - tau_ext).powi(2)).sum::<f64>();
        per_weight.push(WeightStats { mass, tau_ext, mean, std: var.sqrt() });
    }
    let rmse = (sq / (weights.len() * trials) as f64).sqrt();
    Ok(CalibrationReport { per_weight, rmse })
}

/// The suspended loads of the bench calibration, kg.
pub const CALIBRATION_WEIGHTS: [f64; 8] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8];
