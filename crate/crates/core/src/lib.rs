//! Bayesian smoothing of travel times on road networks.
//!
//! Each edge of a network is split into equal-length sub-edges, sub-edge mean
//! travel times are smoothed with a Gaussian prior built from the line-graph
//! Laplacian, and the posterior is aggregated back to the original edges.
//! The smoothing level is picked by generalized cross-validation.

pub mod bayes;
pub mod error;
pub mod netgraph;
pub mod numkernel;
pub mod router;
pub mod simkit;
pub mod spectral;

pub use bayes::{
    estimate, estimate_pipeline, CovarianceModel, GaussianPosterior, Level, Observations, PipelineOptions,
    PipelineResult, VarianceEstimator,
};
pub use error::{Error, Result};
pub use netgraph::{refine, Graph, GraphFile, HighResGraph, ResolutionSpec};
pub use numkernel::SymMatrix;
pub use router::{Basis, DisutilitySpec, RouteChoice, RouteExperimentReport, RouteQuery};
pub use simkit::{ErrorReport, SampleDistribution, SimConfig, VelocityProfile};
pub use spectral::{DeltaDiagnostics, SpectralReport};
