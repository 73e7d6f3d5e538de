//! Preprocessing, registration, patching and evaluation for paired MRI/CT
//! volume datasets.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod formats;
pub mod metrics;
pub mod morph;
pub mod netshape;
pub mod patch;
pub mod pipeline;
pub mod records;
pub mod register;
pub mod synth;
pub mod volume;

pub use volume::{Geometry, IntensityDomain, Shape, Volume, VoxelData};
