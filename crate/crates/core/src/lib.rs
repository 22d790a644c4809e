//! Manning's n measurement from 3D point clouds.
//!
//! The crate covers the whole measurement chain:
//!
//! * [`flume`] reduces laboratory depth/velocity records to per-region
//!   Manning's n ground truth.
//! * [`pointcloud`] parses, normalizes and tiles laboratory scans and lidar
//!   surveys.
//! * [`augment`] turns a handful of labelled regions into a training corpus
//!   by random subsampling and count-weighted blending.
//! * [`regressor`] is a PointNet-style network (shared per-point encoder,
//!   max-pool, feed-forward head) trained with Adam on an L1 loss.
//! * [`xsection`] rasterizes tiled predictions and compounds them into
//!   cross-section roughness tables with at most 20 segments.
//! * [`metrics`] holds the fit statistics used to compare model runs.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod error;
pub mod flume;
pub mod metrics;
pub mod pointcloud;
pub mod regressor;
pub mod xsection;

pub use error::{Error, Result};

/// Lowest Manning's n in the experimental measurement range. Also the value
/// written wherever a cloud yields no measurement.
pub const N_MIN: f64 = 0.025;
/// Highest Manning's n in the experimental measurement range.
pub const N_MAX: f64 = 0.25;
