//! Phase-space and time discretizations.
//!
//! The state space of the double integrator is the (x, v) plane; the
//! solvers work on a truncated box [x_min, x_max] x [v_min, v_max] with
//! uniform node spacing. The box is sized so that the transported density
//! never approaches the boundary; diagnostics that compare against
//! closed-form solutions are restricted to the inner half-box, where the
//! truncation does not pollute the values.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

/// Uniform node-centered discretization of the truncated (x, v) box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub nx: usize,
    pub nv: usize,
}

impl PhaseGrid {
    pub const MIN_NODES: usize = 8;

    pub fn new(x_min: f64, x_max: f64, v_min: f64, v_max: f64, nx: usize, nv: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && v_min.is_finite() && v_max.is_finite()) {
            return Err(SolverError::InvalidGrid("non-finite box bounds".into()));
        }
        if x_max <= x_min || v_max <= v_min {
            return Err(SolverError::InvalidGrid(format!(
                "empty box: x [{x_min}, {x_max}], v [{v_min}, {v_max}]"
            )));
        }
        if nx < Self::MIN_NODES || nv < Self::MIN_NODES {
            return Err(SolverError::InvalidGrid(format!(
                "need at least {} nodes per axis, got nx = {nx}, nv = {nv}",
                Self::MIN_NODES
            )));
        }
        Ok(Self { x_min, x_max, v_min, v_max, nx, nv })
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.nx - 1) as f64
    }

    #[inline]
    pub fn dv(&self) -> f64 {
        (self.v_max - self.v_min) / (self.nv - 1) as f64
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    #[inline]
    pub fn v(&self, j: usize) -> f64 {
        self.v_min + j as f64 * self.dv()
    }

    /// Largest |v| representable on the grid; enters the advective CFL bound.
    #[inline]
    pub fn v_abs_max(&self) -> f64 {
        self.v_min.abs().max(self.v_max.abs())
    }

    /// Quadrature weight of one node cell.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dv()
    }

    pub fn x_center(&self) -> f64 {
        0.5 * (self.x_min + self.x_max)
    }

    pub fn v_center(&self) -> f64 {
        0.5 * (self.v_min + self.v_max)
    }

    /// Inner half-box: the centered box with half the side lengths.
    ///
    /// All oracle comparisons and residual metrics are taken here so that
    /// the artificial truncation boundary stays quarantined.
    pub fn is_inner_half(&self, i: usize, j: usize) -> bool {
        let x = self.x(i);
        let v = self.v(j);
        (x - self.x_center()).abs() <= 0.25 * (self.x_max - self.x_min)
            && (v - self.v_center()).abs() <= 0.25 * (self.v_max - self.v_min)
    }

    /// Whether a point lies inside the box (with a tolerance of one ulp-ish margin).
    pub fn contains(&self, x: f64, v: f64) -> bool {
        x >= self.x_min && x <= self.x_max && v >= self.v_min && v <= self.v_max
    }

    /// Grid refined by an integer factor in both axes (node count scales,
    /// box stays fixed). Used by convergence studies.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            nx: (self.nx - 1) * factor + 1,
            nv: (self.nv - 1) * factor + 1,
            ..*self
        }
    }

    /// Grid with node counts multiplied by an arbitrary positive scale.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        let nx = ((self.nx as f64) * scale).round() as usize;
        let nv = ((self.nv as f64) * scale).round() as usize;
        Self::new(self.x_min, self.x_max, self.v_min, self.v_max, nx, nv)
    }
}

/// Uniform partition of the horizon [0, T] into nt steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub nt: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, nt: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(SolverError::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if nt == 0 {
            return Err(SolverError::InvalidGrid("need at least one time step".into()));
        }
        Ok(Self { horizon, nt })
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    #[inline]
    pub fn t(&self, n: usize) -> f64 {
        self.horizon * n as f64 / self.nt as f64
    }

    /// Number of stored slices (nt + 1, including both endpoints).
    #[inline]
    pub fn n_slices(&self) -> usize {
        self.nt + 1
    }

    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::new(self.horizon, ((self.nt as f64) * scale).round() as usize)
    }

    /// Five checkpoint indices {0, nt/4, nt/2, 3nt/4, nt} used by the
    /// fixed-point residual and the representation checks.
    pub fn checkpoints(&self) -> [usize; 5] {
        [0, self.nt / 4, self.nt / 2, 3 * self.nt / 4, self.nt]
    }
}

/// Grid values of one time slice of u, m or an effective cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: PhaseGrid,
    pub values: Array2<f64>,
}

impl ScalarField {
    pub fn zeros(grid: PhaseGrid) -> Self {
        Self { grid, values: Array2::zeros((grid.nx, grid.nv)) }
    }

    pub fn constant(grid: PhaseGrid, value: f64) -> Self {
        Self { grid, values: Array2::from_elem((grid.nx, grid.nv), value) }
    }

    pub fn from_fn(grid: PhaseGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.nx, grid.nv), |(i, j)| f(grid.x(i), grid.v(j)));
        Self { grid, values }
    }

    /// All values finite; fields never carry NaN/Inf past construction.
    pub fn validate_finite(&self) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SolverError::NanDetected { slice: 0, stage: "field construction" })
        }
    }

    /// Grid quadrature of the field (rectangle rule with uniform weights).
    pub fn integral(&self) -> f64 {
        self.values.sum() * self.grid.cell_area()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    }

    /// Maximum absolute difference against another field on the same grid.
    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0_f64, |a, (&x, &y)| a.max((x - y).abs()))
    }

    /// Same, restricted to the inner half-box.
    pub fn max_abs_diff_inner(&self, other: &ScalarField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        let mut worst = 0.0_f64;
        for i in 0..self.grid.nx {
            for j in 0..self.grid.nv {
                if self.grid.is_inner_half(i, j) {
                    worst = worst.max((self.values[[i, j]] - other.values[[i, j]]).abs());
                }
            }
        }
        worst
    }
}

/// A field stacked over all time slices (nt + 1 entries).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPath {
    pub time: TimeGrid,
    pub slices: Vec<ScalarField>,
}

impl FieldPath {
    pub fn new(time: TimeGrid, slices: Vec<ScalarField>) -> Result<Self> {
        if slices.len() != time.n_slices() {
            return Err(SolverError::IncompatibleFields(format!(
                "expected {} slices, got {}",
                time.n_slices(),
                slices.len()
            )));
        }
        let grid = slices[0].grid;
        if slices.iter().any(|s| s.grid != grid) {
            return Err(SolverError::IncompatibleFields("slices on different grids".into()));
        }
        Ok(Self { time, slices })
    }

    pub fn constant(grid: PhaseGrid, time: TimeGrid, value: f64) -> Self {
        let slices = (0..time.n_slices()).map(|_| ScalarField::constant(grid, value)).collect();
        Self { time, slices }
    }

    pub fn from_fn(grid: PhaseGrid, time: TimeGrid, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let slices = (0..time.n_slices())
            .map(|n| {
                let t = time.t(n);
                ScalarField::from_fn(grid, |x, v| f(x, v, t))
            })
            .collect();
        Self { time, slices }
    }

    pub fn grid(&self) -> PhaseGrid {
        self.slices[0].grid
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().fold(0.0_f64, |a, s| a.max(s.max_abs()))
    }
}
