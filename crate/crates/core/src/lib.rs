//! Block-weighted bootstrap for Gaussian quasi-likelihood estimation of
//! ergodic SDEs observed at high frequency, possibly driven by pure-jump
//! Lévy noise.

pub mod adjustment;
pub mod bootstrap;
pub mod error;
pub mod experiment;
pub mod gqmle;
pub mod model;
pub mod noise;
pub mod optim;
pub mod simulate;

pub use adjustment::RateScalings;
pub use bootstrap::{BlockPartition, BootstrapDistribution, BootstrapMode, WeightScheme};
pub use error::{Error, Result};
pub use experiment::{run_coverage, CoverageReport, ExperimentConfig};
pub use gqmle::{fit, hessians, FitOptions, GqmleFit};
pub use model::{CoefficientModel, ParamDomain, SamplingDesign, TrueDynamics};
pub use noise::{NoiseKind, RngStream, StreamRole};
pub use simulate::{simulate, SamplePath};
