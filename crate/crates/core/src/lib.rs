//! Depth-weighted spatial sign methods for robust multivariate statistics.
//!
//! The crate covers weighted spatial medians, weighted sign covariance
//! matrices and their affine equivariant M-estimator counterpart, eigenvalue
//! repair by median-of-variances, influence functions and asymptotic
//! efficiencies, Monte-Carlo efficiency studies, robust sufficient dimension
//! reduction, and functional outlier detection.

pub mod asymptotics;
pub mod bench;
pub mod data;
pub mod depth_weights;
pub mod elliptical;
pub mod error;
pub mod fdata;
pub mod linalg;
pub mod location;
pub mod scatter;
pub mod sdr;
pub mod stats;

pub use data::DataMatrix;
pub use depth_weights::{spatial_sign, weight, weighted_signs, WeightFunction, WeightKind, WeightSpec, WeightedSign};
pub use elliptical::{EllipticalModel, Family, SphericalSample};
pub use error::{Error, Result};
pub use location::{weighted_spatial_median, LocationFit};
pub use scatter::{adcm, recover_eigenvalues, scm, tyler, wscm, EigenvalueRecoverySpec, ScatterEstimator, ScatterFit};
