//! Supervised phase identification for distribution feeders.
//!
//! The crate is organised around the stages of the workflow:
//!
//! * [`numerics`]: SPD factorisation, Schur complements, log-determinants and PCA.
//! * [`circuit`]: synthetic radial feeders and their voltage covariance.
//! * [`selection`]: unsupervised training-set selection from a cosine kernel.
//! * [`infonet`]: small MLPs with exact gradients, MINE-f estimation and
//!   information-loading training.
//! * [`baselines`]: nearest neighbours, correlation linkage and k-means.
//! * [`entropy`]: entropy bound expressions and Gaussian entropies.
//! * [`pipeline`]: preprocessing, file formats, experiments and reports.

pub mod baselines;
pub mod circuit;
pub mod entropy;
pub mod exec;
pub mod infonet;
pub mod numerics;
pub mod pipeline;
pub mod selection;

pub use circuit::{CircuitSpec, CouplingMode, PhaseLabel, VoltageDataset};
pub use exec::Exec;
pub use numerics::{IndexSet, SymMatrix};
pub use selection::{SelectionMethod, SelectionResult};
