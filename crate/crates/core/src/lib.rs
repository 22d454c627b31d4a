//! Measurement design and reconstruction for low-rank matrices observed
//! through noisy affine maps.
//!
//! The crate covers the observation model ([`affine_map`]), power-constrained
//! optimal designs given a column subspace ([`map_design`]), generalised
//! least-squares estimation ([`estimator`]), the two-step sample-then-design
//! reconstruction ([`two_step`]) and nuclear-norm / factorisation baselines
//! ([`baselines`]).

pub mod affine_map;
pub mod baselines;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod map_design;
pub mod rng;
pub mod two_step;

pub use affine_map::{AffineMap, Coherence, NoiseKind, NoiseModel};
pub use baselines::{mf_solve, nnm_solve, svt, SolverOptions};
pub use error::{Error, Result};
pub use estimator::{gls_estimate, nmse, project_onto_subspace, reconstruct, GlsEstimator, GlsProblem};
pub use map_design::{
    lift_design, mse_profile, optimal_rank, optimal_subspace, restrict_to_subspace,
    solve_power_constrained_design, DesignResult, NoiseSpectrum, SubspaceBasis,
};
pub use two_step::{RankMode, SubspaceEstimate, TwoStepConfig, TwoStepResult};

pub use nalgebra::{DMatrix, DVector};
