//! Adaptive-to-model lack-of-fit tests for parametric single-index
//! errors-in-variables regression when a validation sample is available.
//!
//! The primary sample holds `(y, w)` pairs where `w = x + u` is a noisy
//! surrogate of the covariate. The validation sample holds `(w̃, x̃)` pairs in
//! which the true covariate is observed. The pipeline is:
//!
//! 1. [`estimators`]: projection least-squares estimate of the index `β`.
//! 2. [`sdr`]: dimension-reduction estimate `B̂` of the mean subspace, which
//!    collapses to one direction under the null.
//! 3. [`calibrate`]: kernel estimates of `E[g(βᵀX) | βᵀW]` from validation
//!    rows, full-sample and split-sample, and the residual sets.
//! 4. [`teststat`]: kernel-weighted U-statistics on `B̂ᵀw`, their variance
//!    plug-ins and the standardized statistics for each sample-ratio regime.
//!
//! [`dgp`] and [`mc`] reproduce the simulation designs; [`io`] reads and
//! writes the CSV data formats.

pub mod calibrate;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod io;
pub mod kernels;
mod linalg;
pub mod mc;
pub mod sample;
pub mod sdr;
pub mod teststat;

pub use error::{Error, Result};
pub use estimators::LinkFunction;
pub use kernels::{BandwidthPlan, BandwidthRegime, KernelSpec, PointSet};
pub use sample::{PrimarySample, ValidationSample};
pub use teststat::{run_test, CriticalConvention, Regime, RegimeRequest, TestConfig, TestOutcome};
