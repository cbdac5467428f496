//! Differentiable dose-distribution objectives for radiotherapy dose prediction.
//!
//! The crate is organised around the data flow of a dose-prediction study:
//!
//! - [`volume`]: 3D grids, structure masks, resampling, cropping and the MVOL file format.
//! - [`preprocess`]: CT normalisation, one-hot structure channels, PTV-mean dose
//!   normalisation and the mask-guided crop/resample pipeline.
//! - [`losses`]: mean absolute error, sigmoid-smoothed DVH loss and the moment
//!   (power-mean) loss, each with an analytic gradient with respect to the predicted dose.
//! - [`metrics`]: exact DVH curves, dose score, DVH score, homogeneity and Paddick
//!   conformity indices and a clinical criteria report.
//! - [`phantom`]: deterministic synthetic thorax cases.
//! - [`mimic`]: Adam-based voxel dose mimicking, restart studies and convexity probes.
//! - [`tinymodel`]: a small 3D convolutional encoder-decoder with hand-written
//!   backpropagation, trainable with any loss configuration.
//! - [`cli`]: the `dosekit` command line.

pub mod cli;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod mimic;
pub mod phantom;
pub mod preprocess;
pub(crate) mod rng;
pub mod tinymodel;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{CaseBundle, Grid3, GridGeometry, Role, StructureMask, Unit};
