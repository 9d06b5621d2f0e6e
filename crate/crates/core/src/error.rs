//! Error type shared by all solver stages.

use thiserror::Error;

/// Errors produced by grid construction, field validation and the solvers.
#[derive(Debug, Error)]
pub enum SolverError {
    /// Invalid grid or time discretization parameters.
    #[error("invalid discretization: {0}")]
    InvalidGrid(String),

    /// A density field whose total mass is too far from 1.
    #[error("density mass {mass} deviates from 1 by more than {tol}")]
    UnnormalizedDensity { mass: f64, tol: f64 },

    /// Mismatched grids or time grids between coupled fields.
    #[error("incompatible fields: {0}")]
    IncompatibleFields(String),

    /// The explicit time step exceeds the stable step for the current run.
    #[error("CFL violation at slice {slice}: dt = {dt:.6e} exceeds stable dt = {stable_dt:.6e} (max |D_v u| = {max_dvu:.3e})")]
    CflViolation {
        slice: usize,
        dt: f64,
        stable_dt: f64,
        max_dvu: f64,
    },

    /// A non-finite value appeared during a marching scheme.
    #[error("NaN/Inf detected at slice {slice} during {stage}")]
    NanDetected { slice: usize, stage: &'static str },

    /// Density mass reached the boundary ring of the truncated box.
    #[error("support reached the domain boundary at slice {slice}: ring mass {ring_mass:.3e} exceeds {budget:.1e} (truncation box too tight)")]
    SupportLeak {
        slice: usize,
        ring_mass: f64,
        budget: f64,
    },

    /// Accumulated negative-value clamping exceeded its budget.
    #[error("negativity correction {correction:.3e} exceeds budget {budget:.1e} at slice {slice}")]
    NegativityBudget {
        slice: usize,
        correction: f64,
        budget: f64,
    },

    /// Shooting Newton iteration failed to meet the residual tolerance.
    #[error("shooting did not converge after {iterations} iterations: residual {residual:.3e}")]
    ShootingNotConverged { iterations: usize, residual: f64 },

    /// A shot trajectory left twice the truncation box.
    #[error("trajectory diverged outside 2x the box at s = {time:.4} (|x| = {x:.3}, |v| = {v:.3})")]
    TrajectoryDiverged { time: f64, x: f64, v: f64 },

    /// Particle advection stepped outside the grid box.
    #[error("particle {index} exited the box at t = {time:.4}")]
    ParticleExited { index: usize, time: f64 },

    /// Too few cells above the sampling threshold.
    #[error("initial density is degenerate: only {cells} cells above threshold (need >= {min_cells})")]
    DegenerateDensity { cells: usize, min_cells: usize },

    /// A precondition on operation inputs failed.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Configuration file parsing or validation error.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;
