//! Parametric bootstrap for spectral statistics of high-dimensional
//! elliptical data.

// `!(x > 0.0)` is used on purpose so NaN lands in the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bootstrap;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod inference;
pub mod linalg;
pub mod mp;
pub mod parallel;
pub mod quest;
pub mod reference;
pub mod rng;
pub mod sampling;
pub mod spectra;

pub use bootstrap::{BootstrapConfig, BootstrapDraws, StatisticSpec};
pub use error::{Error, Result};
pub use estimators::EstimatorBundle;
pub use mp::{MPDistribution, SpectralFunction};
pub use sampling::{Dataset, EllipticalLaw, RadialLaw};
pub use spectra::{CovarianceSpec, Setting, SpectrumModel};
