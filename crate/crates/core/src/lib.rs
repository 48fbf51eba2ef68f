//! Tomographic SAR elevation inversion.
//!
//! A stack of co-registered SAR acquisitions taken from slightly different
//! cross-track positions turns every range-azimuth pixel into a small linear
//! inverse problem: the N-channel measurement is the elevation reflectivity
//! profile seen through an N x L complex steering matrix. This crate provides
//!
//! * the imaging model: steering-matrix construction, pixel and scene echo
//!   simulation, training-set generators ([`geometry`], [`simulate`]);
//! * classical sparse baselines: soft thresholding, ISTA, OMP and a
//!   truncated-SVD pseudoinverse ([`solvers`]);
//! * the analytic weight precomputation shared by the unrolled solvers
//!   ([`weights`]);
//! * an unrolled K-layer shrinkage network with element-wise adaptive
//!   thresholds, plus its hand-derived reverse-mode training ([`net`],
//!   [`train`]);
//! * evaluation: NMSE/PSNR/SSIM, 3-D entropy, elevation CRLB and Monte Carlo
//!   detection-success-rate sweeps ([`metrics`]);
//! * whole-scene orchestration and exporters: profile cubes, PLY/XYZ point
//!   clouds, threshold maps ([`pipeline`], [`io`]).
//!
//! All numeric kernels are generic over the real scalar type through the
//! [`scalar::Real`] trait; `f64` aliases for the main types are re-exported
//! at the crate root.

pub mod error;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod scalar;
pub mod simulate;
pub mod solvers;
pub mod train;
pub mod weights;

pub use error::{Result, TomoError};
pub use scalar::Real;

/// Complex sample with `f64` components, the default precision everywhere.
pub type C64 = num_complex::Complex<f64>;
/// Complex sample with `f32` components.
pub type C32 = num_complex::Complex<f32>;

pub type ImagingGeometry64 = geometry::ImagingGeometry<f64>;
pub type SteeringMatrix64 = geometry::SteeringMatrix<f64>;
pub type ReflectivityProfile64 = simulate::ReflectivityProfile<f64>;
pub type PixelMeasurement64 = simulate::PixelMeasurement<f64>;
pub type AlistaWeights64 = weights::AlistaWeights<f64>;
pub type NetworkParams64 = net::NetworkParams<f64>;
pub type MeasurementStack64 = pipeline::MeasurementStack<f64>;
pub type ProfileCube64 = pipeline::ProfileCube<f64>;
