//! Manifold denoising and reconstruction for point clouds in high dimension.
//!
//! Given noisy samples P of a low-dimensional manifold in R^n, the solver
//! produces a smaller, quasi-uniform point set Q lying close to the manifold.
//! Every Q point is pulled toward nearby samples by a smoothed L1-median
//! attraction and pushed away from other Q points by a short-range
//! repulsion; distances are measured through a random orthonormal sketch so
//! that ambient noise does not swamp them.
//!
//! The crate also carries the synthetic benchmark generators and the metrics
//! used to evaluate reconstructions.

pub mod cloud;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod neighborhood;
pub mod rng;
pub mod sketch;
pub mod solver;
pub mod stats;

pub use cloud::{load_cloud, save_cloud, PointCloud};
pub use config::{AttractionWeights, InitMode, SolverConfig, StepRule};
pub use datasets::{generate, Dataset, DatasetKind, DatasetSpec, Manifold};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentOutcome};
pub use metrics::ExperimentReport;
pub use neighborhood::SupportParams;
pub use rng::Rng;
pub use sketch::{build_sketch, SketchMatrix};
