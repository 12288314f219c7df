//! Variational inference with Gaussian mixture models under per-component
//! KL trust regions.

pub mod adaptation;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod io;
pub mod mixture;
pub mod numeric;
pub mod rng;
pub mod runner;
pub mod sample_db;
pub mod surrogate;
pub mod targets;
pub mod trust_region;

pub use config::VipsConfig;
pub use error::{Result, VipsError};
pub use gaussian::Gaussian;
pub use evaluation::{mmd, MmdKernel};
pub use mixture::MixtureModel;
pub use runner::{run, IterationStats, Optimizer, RunOutput};
pub use sample_db::{ActiveSampleSet, Dissimilarity, SampleDatabase};
pub use surrogate::QuadraticSurrogate;
pub use targets::{LogDensity, Target};
