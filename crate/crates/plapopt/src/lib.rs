//! Principal eigenvalue of the weighted p-Laplacian with a potential,
//! under Dirichlet boundary conditions, together with the machinery needed
//! to optimize that eigenvalue over rearrangement classes of the weight and
//! the potential:
//!
//! * structured P1 finite-element meshes on intervals and rectangles with
//!   equal-measure cells ([`mesh`]),
//! * rearrangement classes, extremal (sorted) rearrangements, and
//!   comonotonicity certificates ([`rearrangement`]),
//! * a regularized projected-descent eigensolver, Sobolev-constant
//!   estimation, and admissibility checks ([`eigen`]),
//! * compactly supported deformation fields, their flows, and transport of
//!   cell data along them ([`flow`]),
//! * three formulas for the eigenvalue derivative along a deformation flow,
//!   cross-checked by a finite-difference oracle ([`derivative`]),
//! * an alternating minimizer over rearrangement classes with optimality
//!   certificates ([`optimizer`]),
//! * a configuration-driven command line front end ([`cli`], [`io`]).
//!
//! Everything is deterministic: identical inputs (including seeds) produce
//! bitwise-identical results. No global state, no threads; all types are
//! plain data and safe to share immutably across threads if a caller wants
//! to run independent solves in parallel.

pub mod analytic;
mod banded;
pub mod cli;
pub mod derivative;
pub mod eigen;
pub mod flow;
pub mod io;
pub mod mesh;
pub mod optimizer;
pub mod rearrangement;

use thiserror::Error;

/// Crate-wide error type.
///
/// Validation failures (bad geometry, inadmissible data, malformed
/// configuration) are distinguished from solver failures (non-convergence)
/// because the command line maps them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate extents [{0}, {1}]: lower bound must be strictly below upper")]
    DegenerateExtents(f64, f64),
    #[error("resolution must be at least 2 cells per axis, got {0}")]
    ResolutionTooSmall(usize),
    #[error("unsupported mesh dimension {0} (expected 1 or 2)")]
    BadDimension(usize),
    #[error("size mismatch: expected {expected} values, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("cells do not all have the same measure; rearrangement by sorting needs equal-measure cells")]
    UnequalMeasure,
    #[error("dimension mismatch: mesh is {mesh}D but field is {field}D")]
    DimensionMismatch { mesh: usize, field: usize },
    #[error("value multisets differ: not a rearrangement")]
    NotARearrangement,
    #[error("weighted p-th power integral of the test function is not positive")]
    NonPositiveNormalization,
    #[error("hypothesis (H1) violated: {0}")]
    HypothesisH1(String),
    #[error("admissibility violated: {0}")]
    Admissibility(String),
    #[error("could not build an initial iterate with positive weighted norm")]
    NoInitialIterate,
    #[error("point ({0}, {1}) lies outside the mesh")]
    PointLocation(f64, f64),
    #[error("deformation field is not divergence-free")]
    NotDivergenceFree,
    #[error("deformation field must vanish within one cell of the boundary: {0}")]
    SupportTouchesBoundary(String),
    #[error("flow integration produced a non-finite point")]
    FlowDiverged,
    #[error("solver did not converge: {0}")]
    NotConverged(String),
    #[error("inadmissible constraint exponent: {0}")]
    BadSobolevExponent(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that indicate bad input or environment rather than a
    /// failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::NotConverged(_) | Error::FlowDiverged)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
