//! Target distributions: the sampling target `pi` and optimization
//! objective `log f` are the same object.

mod gmm;
mod sensor;

pub use gmm::{gmm_generate_benchmark, gmm_log_density, GaussianMixture, WeightScheme, GENERATOR_BASE_SIDE};
pub use sensor::{
    sensor_generate_instance, sensor_log_density, Observation, SensorNetwork, SensorSpec,
};

use thiserror::Error;

use crate::numerics::{Mat, Objective};

/// Log of a zero density. Any proposal landing here is rejected.
pub const LOG_ZERO: f64 = f64::NEG_INFINITY;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gradient requested at a zero-density point")]
    ZeroDensity,
    #[error("invalid target: {0}")]
    Invalid(String),
    #[error(transparent)]
    Format(#[from] crate::textfmt::FormatError),
}

/// Mean and covariance of a target.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub covariance: Mat,
}

pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    /// Log-density up to an additive constant; `LOG_ZERO` off the support.
    fn log_density(&self, x: &[f64]) -> f64;

    /// Analytic gradient of the log-density.
    fn grad_log_density(&self, x: &[f64]) -> Result<Vec<f64>, TargetError>;

    fn log_density_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>), TargetError> {
        let v = self.log_density(x);
        if v == LOG_ZERO || v.is_nan() {
            return Err(TargetError::ZeroDensity);
        }
        Ok((v, self.grad_log_density(x)?))
    }

    fn reference_moments(&self) -> Option<&Moments> {
        None
    }
}

/// Gradient of the log-density of `t` at `x`.
pub fn gradient(t: &dyn Target, x: &[f64]) -> Result<Vec<f64>, TargetError> {
    if x.len() != t.dim() {
        return Err(TargetError::DimensionMismatch {
            expected: t.dim(),
            got: x.len(),
        });
    }
    t.grad_log_density(x)
}

/// `log f` as a BFGS objective.
pub struct LogDensityObjective<'a>(pub &'a dyn Target);

impl Objective for LogDensityObjective<'_> {
    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self.0.log_density_and_gradient(x) {
            Ok(vg) => vg,
            Err(_) => (LOG_ZERO, vec![f64::NAN; x.len()]),
        }
    }
}

/// Enum wrapper used by the harness so presets can be handled uniformly.
pub enum AnyTarget {
    Gmm(GaussianMixture),
    Sensor(SensorNetwork),
}

impl AnyTarget {
    pub fn as_target(&self) -> &dyn Target {
        match self {
            AnyTarget::Gmm(g) => g,
            AnyTarget::Sensor(s) => s,
        }
    }
}
