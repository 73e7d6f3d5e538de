//! Rigid multi-modal registration by mutual-information maximization.
//!
//! The fixed volume (CT) defines the output grid; the moving volume (MRI) is
//! trilinearly resampled through a [`RigidTransform`] and scored by the
//! mutual information of the joint intensity histogram.

mod histogram;
mod optimize;
mod resample;
mod transform;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::Shape;

pub use histogram::{joint_histogram, mutual_information, Binning, JointHistogram};
pub use optimize::{register, RegistrationResult, RegistrationWarning, TraceEntry};
pub use resample::{downsample2, resample, resample_to, IndexMap, Interpolator};
pub use transform::{rotation_angle, RigidTransform};

#[derive(Debug, Error, PartialEq)]
pub enum RegisterError {
    #[error("volume has constant intensity (zero marginal entropy)")]
    DegenerateIntensity,
    #[error("grids differ: {0} vs {1}")]
    GridMismatch(Shape, Shape),
    #[error("invalid registration config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub bins: usize,
    /// Search iterations per pyramid level.
    pub max_iterations: usize,
    /// Final step size, in mm-equivalent units at full resolution.
    pub convergence_tol: f64,
    pub pyramid_levels: usize,
    pub sampling_fraction: f64,
    /// Starting step at full resolution, scaled up 2× per coarser level.
    pub initial_step_mm: f64,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            bins: 64,
            max_iterations: 200,
            convergence_tol: 0.01,
            pyramid_levels: 3,
            sampling_fraction: 1.0,
            initial_step_mm: 2.0,
            seed: 0x5eed,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<(), RegisterError> {
        let bad = |m: &str| Err(RegisterError::InvalidConfig(m.to_string()));
        if self.bins < 8 || self.bins > u16::MAX as usize {
            return bad("bins must be in [8, 65535]");
        }
        if self.pyramid_levels < 1 {
            return bad("pyramid_levels must be at least 1");
        }
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction <= 1.0) {
            return bad("sampling_fraction must be in (0, 1]");
        }
        if !(self.convergence_tol > 0.0) || !(self.initial_step_mm > 0.0) {
            return bad("step sizes must be positive");
        }
        Ok(())
    }
}
