//! Problem data: Hamiltonian, running costs, smoothing couplings, initial
//! densities and the closed-form linear-quadratic benchmark.
//!
//! The control problem is the double integrator x' = v, v' = alpha with
//! running cost l(x,v) + |alpha|^2/2 + |v|^2/2, so the reduced Hamiltonian
//! in the costate component p_v is
//!
//!   H(x, v, p_v) = max_alpha (-alpha p_v - |alpha|^2/2) - |v|^2/2 - l(x,v)
//!               = |p_v|^2/2 - |v|^2/2 - l(x,v),
//!
//! with maximizer alpha* = -p_v. The mean-field couplings F[m], G[m] are
//! kernel smoothings of the density: bounded in C^2 uniformly over
//! probability densities and Lipschitz in the Monge-Kantorovich distance,
//! which is exactly what the fixed-point argument needs from them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::grid::{PhaseGrid, ScalarField};

/// Total mass may drift from 1 by at most this much before a coupling
/// evaluation refuses the field outright.
pub const MASS_REJECT_TOL: f64 = 1e-3;

/// Reduced Hamiltonian H(x, v, p_v) = |p_v|^2/2 - |v|^2/2 - l(x,v).
///
/// Total on finite inputs; the maximizing control is alpha* = -p_v.
#[inline]
pub fn eval_hamiltonian(v: f64, p_v: f64, l_val: f64) -> f64 {
    0.5 * p_v * p_v - 0.5 * v * v - l_val
}

/// Largest stable explicit time step for the upwind/centered schemes:
/// safety * min(dx/max|v|, dv/max|D_v u|, dx^2/(4 sigma), dv^2/(4 sigma)),
/// with divisions by zero treated as +infinity.
pub fn cfl_dt(grid: &PhaseGrid, max_dvu: f64, sigma: f64) -> f64 {
    const SAFETY: f64 = 0.9;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { f64::INFINITY };
    let adv_x = ratio(grid.dx(), grid.v_abs_max());
    let adv_v = ratio(grid.dv(), max_dvu);
    let diff_x = ratio(grid.dx() * grid.dx(), 4.0 * sigma);
    let diff_v = ratio(grid.dv() * grid.dv(), 4.0 * sigma);
    SAFETY * adv_x.min(adv_v).min(diff_x).min(diff_v)
}

// ---------------------------------------------------------------------------
// Running cost
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostKind {
    Zero,
    CosineBump,
    GaussianBump,
}

/// Bounded C^2 running-cost term l(x, v).
///
/// The enumerated family keeps the C^2 bound of hypothesis-style
/// assumptions checkable: `c2_bound` returns a closed-form constant that
/// dominates the sup-norms of the value, the gradient and the Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunningCost {
    pub kind: CostKind,
    pub amplitude: f64,
    pub length_x: f64,
    pub length_v: f64,
    pub center_x: f64,
    pub center_v: f64,
}

impl RunningCost {
    pub fn zero() -> Self {
        Self { kind: CostKind::Zero, amplitude: 0.0, length_x: 1.0, length_v: 1.0, center_x: 0.0, center_v: 0.0 }
    }

    pub fn cosine_bump(amplitude: f64, length_x: f64, length_v: f64) -> Self {
        Self { kind: CostKind::CosineBump, amplitude, length_x, length_v, center_x: 0.0, center_v: 0.0 }
    }

    pub fn gaussian_bump(amplitude: f64, length_x: f64, length_v: f64) -> Self {
        Self { kind: CostKind::GaussianBump, amplitude, length_x, length_v, center_x: 0.0, center_v: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != CostKind::Zero && (self.length_x <= 0.0 || self.length_v <= 0.0) {
            return Err(SolverError::Precondition("running-cost length scales must be positive".into()));
        }
        if !self.amplitude.is_finite() {
            return Err(SolverError::Precondition("running-cost amplitude must be finite".into()));
        }
        Ok(())
    }

    pub fn value(&self, x: f64, v: f64) -> f64 {
        let xi = (x - self.center_x) / self.length_x;
        let eta = (v - self.center_v) / self.length_v;
        match self.kind {
            CostKind::Zero => 0.0,
            CostKind::CosineBump => {
                // A * cos^4(pi r / 2) inside r < 1: C^2 across the support
                // edge (value, gradient and Hessian all vanish at r = 1).
                let r2 = xi * xi + eta * eta;
                if r2 >= 1.0 {
                    0.0
                } else {
                    let w = 0.5 * (1.0 + (std::f64::consts::PI * r2.sqrt()).cos());
                    self.amplitude * w * w
                }
            }
            CostKind::GaussianBump => self.amplitude * (-0.5 * (xi * xi + eta * eta)).exp(),
        }
    }

    /// Closed-form constant dominating sup|l|, sup|Dl| and sup|D^2 l|.
    ///
    /// Cosine bump: with f(r) = cos^4(pi r/2), |f'| <= 2.05 and the chain
    /// rule gives |Dl| <= 2.05 A / l_min; |f''| <= pi^2 and the radial
    /// Hessian terms give |D^2 l| <= 3 pi^2 A / l_min^2.
    /// Gaussian bump: |Dl| <= A e^{-1/2} / l_min, |D^2 l| <= 2 A / l_min^2.
    pub fn c2_bound(&self) -> f64 {
        let a = self.amplitude.abs();
        let lmin = self.length_x.min(self.length_v);
        match self.kind {
            CostKind::Zero => 0.0,
            CostKind::CosineBump => {
                let grad = 2.05 * a / lmin;
                let hess = 3.0 * std::f64::consts::PI.powi(2) * a / (lmin * lmin);
                a.max(grad).max(hess)
            }
            CostKind::GaussianBump => {
                let grad = a * (-0.5_f64).exp() / lmin;
                let hess = 2.0 * a / (lmin * lmin);
                a.max(grad).max(hess)
            }
        }
    }

    pub fn discretize(&self, grid: PhaseGrid) -> ScalarField {
        ScalarField::from_fn(grid, |x, v| self.value(x, v))
    }
}

// ---------------------------------------------------------------------------
// Couplings
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// F[m] = c (K * m) with K an even truncated Gaussian.
    Gaussian,
    /// F[m] = c (K * K * m); the self-convolution makes the smoothing
    /// operator symmetric positive semi-definite, hence monotone in the
    /// Lasry-Lions sense.
    SelfConvolutionGaussian,
}

/// Which of the two couplings to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingSide {
    F,
    G,
}

/// Kernel-smoothing couplings F[m] and G[m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub kernel: KernelKind,
    pub bandwidth_f: f64,
    pub bandwidth_g: f64,
    pub weight_f: f64,
    pub weight_g: f64,
}

/// Truncation radius of the smoothing kernel, in bandwidths. Cutting at 4
/// bandwidths then renormalizing loses < 1e-4 of the mass and keeps the
/// kernel even, which the monotonicity identity needs.
pub const KERNEL_TRUNCATION_BANDWIDTHS: f64 = 4.0;

impl CouplingSpec {
    pub fn decoupled() -> Self {
        Self { kernel: KernelKind::Gaussian, bandwidth_f: 0.25, bandwidth_g: 0.25, weight_f: 0.0, weight_g: 0.0 }
    }

    pub fn gaussian(bandwidth: f64, weight_f: f64, weight_g: f64) -> Self {
        Self { kernel: KernelKind::Gaussian, bandwidth_f: bandwidth, bandwidth_g: bandwidth, weight_f, weight_g }
    }

    pub fn self_convolution(bandwidth: f64, weight_f: f64, weight_g: f64) -> Self {
        Self {
            kernel: KernelKind::SelfConvolutionGaussian,
            bandwidth_f: bandwidth,
            bandwidth_g: bandwidth,
            weight_f,
            weight_g,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_f <= 0.0 || self.bandwidth_g <= 0.0 {
            return Err(SolverError::Precondition("coupling bandwidths must be positive".into()));
        }
        if self.weight_f < 0.0 || self.weight_g < 0.0 {
            return Err(SolverError::Precondition("coupling weights must be nonnegative".into()));
        }
        Ok(())
    }

    fn params(&self, side: CouplingSide) -> (f64, f64) {
        match side {
            CouplingSide::F => (self.bandwidth_f, self.weight_f),
            CouplingSide::G => (self.bandwidth_g, self.weight_g),
        }
    }

    /// Evaluate the coupling on a probability density slice.
    pub fn eval(&self, m: &ScalarField, side: CouplingSide) -> Result<ScalarField> {
        let (bandwidth, weight) = self.params(side);
        let mass = m.integral();
        if (mass - 1.0).abs() > MASS_REJECT_TOL {
            return Err(SolverError::UnnormalizedDensity { mass, tol: MASS_REJECT_TOL });
        }
        if weight == 0.0 {
            return Ok(ScalarField::zeros(m.grid));
        }
        let kx = kernel_1d(bandwidth, m.grid.dx());
        let kv = kernel_1d(bandwidth, m.grid.dv());
        let mut out = convolve_separable(&m.values, &kx, &kv, m.grid.dx(), m.grid.dv());
        if self.kernel == KernelKind::SelfConvolutionGaussian {
            out = convolve_separable(&out, &kx, &kv, m.grid.dx(), m.grid.dv());
        }
        out.mapv_inplace(|u| u * weight);
        Ok(ScalarField { grid: m.grid, values: out })
    }

    /// Sup-norm bound of the coupling output over all probability densities:
    /// weight times the peak of the (possibly self-convolved) kernel.
    pub fn sup_bound(&self, side: CouplingSide, grid: &PhaseGrid) -> f64 {
        let (bandwidth, weight) = self.params(side);
        let kx = kernel_1d(bandwidth, grid.dx());
        let kv = kernel_1d(bandwidth, grid.dv());
        let peak = |k: &[f64], h: f64| -> f64 {
            match self.kernel {
                KernelKind::Gaussian => k.iter().fold(0.0_f64, |a, &b| a.max(b)),
                // Peak of k*k sits at the origin: sum of squared weights.
                KernelKind::SelfConvolutionGaussian => k.iter().map(|w| w * w * h).sum(),
            }
        };
        weight * peak(&kx, grid.dx()) * peak(&kv, grid.dv())
    }

    /// Lipschitz constant of m -> F[m] from (P_1, d_1) to the sup-norm,
    /// estimated as the gradient bound of the discrete kernel.
    pub fn lipschitz_d1_bound(&self, side: CouplingSide, grid: &PhaseGrid) -> f64 {
        let (bandwidth, weight) = self.params(side);
        let mut kx = kernel_1d(bandwidth, grid.dx());
        let mut kv = kernel_1d(bandwidth, grid.dv());
        if self.kernel == KernelKind::SelfConvolutionGaussian {
            kx = self_convolve(&kx, grid.dx());
            kv = self_convolve(&kv, grid.dv());
        }
        let grad = |k: &[f64], h: f64| {
            k.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0_f64, f64::max)
        };
        let peak = |k: &[f64]| k.iter().fold(0.0_f64, |a, &b| a.max(b));
        let gx = grad(&kx, grid.dx()) * peak(&kv);
        let gv = grad(&kv, grid.dv()) * peak(&kx);
        weight * (gx * gx + gv * gv).sqrt()
    }
}

/// Evaluate F[m] or G[m]; rejects fields whose mass deviates from 1 by
/// more than 1e-3 (an unnormalized density upstream).
pub fn eval_coupling(spec: &CouplingSpec, m: &ScalarField, side: CouplingSide) -> Result<ScalarField> {
    spec.eval(m, side)
}

/// 1D truncated Gaussian kernel sampled on the grid spacing, normalized so
/// that sum(w) * h = 1. Returned as weights for offsets -R..=R.
fn kernel_1d(bandwidth: f64, h: f64) -> Vec<f64> {
    let radius = (KERNEL_TRUNCATION_BANDWIDTHS * bandwidth / h).ceil() as i64;
    let mut w: Vec<f64> = (-radius..=radius)
        .map(|r| {
            let z = r as f64 * h / bandwidth;
            (-0.5 * z * z).exp()
        })
        .collect();
    let total: f64 = w.iter().sum::<f64>() * h;
    for wi in &mut w {
        *wi /= total;
    }
    w
}

/// Discrete self-convolution of a 1D kernel (used only for bound estimates).
fn self_convolve(k: &[f64], h: f64) -> Vec<f64> {
    let n = k.len();
    let mut out = vec![0.0; 2 * n - 1];
    for (i, &a) in k.iter().enumerate() {
        for (j, &b) in k.iter().enumerate() {
            out[i + j] += a * b * h;
        }
    }
    out
}

/// Separable 2D convolution with zero padding outside the box.
fn convolve_separable(field: &Array2<f64>, kx: &[f64], kv: &[f64], dx: f64, dv: f64) -> Array2<f64> {
    let (nx, nv) = field.dim();
    let rx = (kx.len() / 2) as i64;
    let rv = (kv.len() / 2) as i64;

    // Pass 1: convolve along x for each v column.
    let mut tmp = Array2::<f64>::zeros((nx, nv));
    for i in 0..nx as i64 {
        let lo = (-rx).max(i + 1 - nx as i64);
        let hi = rx.min(i);
        for r in lo..=hi {
            let w = kx[(rx + r) as usize] * dx;
            let src = (i - r) as usize;
            for j in 0..nv {
                tmp[[i as usize, j]] += w * field[[src, j]];
            }
        }
    }
    // Pass 2: convolve along v for each x row.
    let mut out = Array2::<f64>::zeros((nx, nv));
    for j in 0..nv as i64 {
        let lo = (-rv).max(j + 1 - nv as i64);
        let hi = rv.min(j);
        for r in lo..=hi {
            let w = kv[(rv + r) as usize] * dv;
            let src = (j - r) as usize;
            for i in 0..nx {
                out[[i, j as usize]] += w * tmp[[i, src]];
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Initial density
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    TruncatedGaussian,
    Bump,
    TwoBumps,
}

/// Compactly supported initial density m_0.
///
/// `support_x` / `support_v` are half-widths of the support box around the
/// center; the box must sit strictly inside the phase grid (and inside the
/// inner half-box for transport runs, so that the truncated dynamics never
/// push mass into the boundary ring).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDensity {
    pub kind: DensityKind,
    pub center_x: f64,
    pub center_v: f64,
    pub sigma_x: f64,
    pub sigma_v: f64,
    pub support_x: f64,
    pub support_v: f64,
    /// Center-to-center distance of the two components (TwoBumps only).
    pub separation: f64,
}

impl InitialDensity {
    pub fn truncated_gaussian(center_x: f64, center_v: f64, sigma_x: f64, sigma_v: f64, support_x: f64, support_v: f64) -> Self {
        Self { kind: DensityKind::TruncatedGaussian, center_x, center_v, sigma_x, sigma_v, support_x, support_v, separation: 0.0 }
    }

    pub fn bump(center_x: f64, center_v: f64, support_x: f64, support_v: f64) -> Self {
        Self { kind: DensityKind::Bump, center_x, center_v, sigma_x: 0.0, sigma_v: 0.0, support_x, support_v, separation: 0.0 }
    }

    pub fn two_bumps(center_x: f64, center_v: f64, support_x: f64, support_v: f64, separation: f64) -> Self {
        Self { kind: DensityKind::TwoBumps, center_x, center_v, sigma_x: 0.0, sigma_v: 0.0, support_x, support_v, separation }
    }

    pub fn validate(&self) -> Result<()> {
        if self.support_x <= 0.0 || self.support_v <= 0.0 {
            return Err(SolverError::Precondition("density support half-widths must be positive".into()));
        }
        if self.kind == DensityKind::TruncatedGaussian && (self.sigma_x <= 0.0 || self.sigma_v <= 0.0) {
            return Err(SolverError::Precondition("gaussian density needs positive sigmas".into()));
        }
        if self.kind == DensityKind::TwoBumps && (self.separation <= 0.0 || self.separation >= 2.0 * self.support_x) {
            return Err(SolverError::Precondition("two-bump separation must fit inside the support box".into()));
        }
        Ok(())
    }

    /// Hull of the support: (x_lo, x_hi, v_lo, v_hi).
    pub fn support_box(&self) -> (f64, f64, f64, f64) {
        (
            self.center_x - self.support_x,
            self.center_x + self.support_x,
            self.center_v - self.support_v,
            self.center_v + self.support_v,
        )
    }

    pub fn support_strictly_inside(&self, grid: &PhaseGrid) -> bool {
        let (xl, xh, vl, vh) = self.support_box();
        xl > grid.x_min && xh < grid.x_max && vl > grid.v_min && vh < grid.v_max
    }

    pub fn support_in_inner_half(&self, grid: &PhaseGrid) -> bool {
        let (xl, xh, vl, vh) = self.support_box();
        let qx = 0.25 * (grid.x_max - grid.x_min);
        let qv = 0.25 * (grid.v_max - grid.v_min);
        (xl - grid.x_center()).abs() <= qx
            && (xh - grid.x_center()).abs() <= qx
            && (vl - grid.v_center()).abs() <= qv
            && (vh - grid.v_center()).abs() <= qv
    }

    /// Unnormalized pointwise value; zero outside the compact support.
    pub fn value_raw(&self, x: f64, v: f64) -> f64 {
        match self.kind {
            DensityKind::TruncatedGaussian => {
                let xi = (x - self.center_x) / self.support_x;
                let eta = (v - self.center_v) / self.support_v;
                // Holder continuity of m_0 rules out a hard cutoff; a cos^2
                // taper on the outer quarter of the support box keeps the
                // profile continuous with compact support.
                let g = (-0.5 * ((x - self.center_x) / self.sigma_x).powi(2)
                    - 0.5 * ((v - self.center_v) / self.sigma_v).powi(2))
                .exp();
                g * taper(xi) * taper(eta)
            }
            DensityKind::Bump => bump_profile(
                (x - self.center_x) / self.support_x,
                (v - self.center_v) / self.support_v,
            ),
            DensityKind::TwoBumps => {
                let half_sep = 0.5 * self.separation;
                let wx = self.support_x - half_sep;
                let b1 = bump_profile((x - self.center_x + half_sep) / wx, (v - self.center_v) / self.support_v);
                let b2 = bump_profile((x - self.center_x - half_sep) / wx, (v - self.center_v) / self.support_v);
                b1 + b2
            }
        }
    }

    /// Sample on the grid, clamp tiny negatives, normalize to unit mass.
    pub fn discretize(&self, grid: PhaseGrid) -> Result<ScalarField> {
        self.validate()?;
        if !self.support_strictly_inside(&grid) {
            return Err(SolverError::Precondition(
                "initial density support must lie strictly inside the phase grid".into(),
            ));
        }
        let mut field = ScalarField::from_fn(grid, |x, v| self.value_raw(x, v).max(0.0));
        let mass = field.integral();
        if mass <= 0.0 {
            return Err(SolverError::DegenerateDensity { cells: 0, min_cells: 1 });
        }
        field.values.mapv_inplace(|m| m / mass);
        Ok(field)
    }
}

/// C^1 taper: 1 on |xi| <= 3/4, cos^2 roll-off to 0 at |xi| = 1.
fn taper(xi: f64) -> f64 {
    let a = xi.abs();
    if a >= 1.0 {
        0.0
    } else if a <= 0.75 {
        1.0
    } else {
        let s = (a - 0.75) / 0.25;
        let c = (0.5 * std::f64::consts::PI * s).cos();
        c * c
    }
}

/// Classic smooth bump exp(-1/(1-r^2)) on r < 1 (elliptical support).
fn bump_profile(xi: f64, eta: f64) -> f64 {
    let r2 = xi * xi + eta * eta;
    if r2 >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - r2)).exp()
    }
}

// ---------------------------------------------------------------------------
// Linear-quadratic benchmark
// ---------------------------------------------------------------------------

/// Closed-form benchmark: with l = 0, F = G = 0 the value function is
/// u(x, v, t) = tanh(T - t) v^2 / 2, independent of x. The feedback slope
/// P(t) = tanh(T - t) solves the Riccati equation P' = P^2 - 1, P(T) = 0,
/// and the optimal flow contracts velocities as cosh(T-s)/cosh(T-t0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqOracle {
    pub horizon: f64,
}

impl LqOracle {
    pub fn new(horizon: f64) -> Self {
        Self { horizon }
    }

    pub fn slope(&self, t: f64) -> f64 {
        (self.horizon - t).tanh()
    }

    pub fn value(&self, _x: f64, v: f64, t: f64) -> f64 {
        0.5 * self.slope(t) * v * v
    }

    pub fn dvu(&self, v: f64, t: f64) -> f64 {
        self.slope(t) * v
    }

    /// Optimal velocity at time s of the trajectory starting at (v0, t0).
    pub fn characteristic_v(&self, v0: f64, t0: f64, s: f64) -> f64 {
        v0 * (self.horizon - s).cosh() / (self.horizon - t0).cosh()
    }

    /// Cost-to-go of the optimal trajectory from (v0, t0).
    pub fn cost(&self, v0: f64, t0: f64) -> f64 {
        0.5 * (self.horizon - t0).tanh() * v0 * v0
    }
}

/// Value of the LQ benchmark; rejects t outside [0, T].
pub fn lq_value(x: f64, v: f64, t: f64, horizon: f64) -> Result<f64> {
    if !(0.0..=horizon).contains(&t) {
        return Err(SolverError::Precondition(format!("t = {t} outside [0, {horizon}]")));
    }
    Ok(LqOracle::new(horizon).value(x, v, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PhaseGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_grid() -> PhaseGrid {
        PhaseGrid::new(-3.0, 3.0, -3.0, 3.0, 96, 96).unwrap()
    }

    // --- Hamiltonian ---

    #[test]
    fn hamiltonian_trivial_values() {
        assert_eq!(eval_hamiltonian(0.0, 0.0, 0.0), 0.0);
        assert!((eval_hamiltonian(1.0, 2.0, 0.5) - 1.0).abs() < 1e-15);
    }

    /// Brute-force maximization over a fine control grid.
    fn hamiltonian_brute_force(v: f64, p_v: f64, l_val: f64) -> f64 {
        let mut best = f64::NEG_INFINITY;
        let mut alpha = -5.0;
        while alpha <= 5.0 + 1e-12 {
            let cand = -alpha * p_v - 0.5 * alpha * alpha - 0.5 * v * v - l_val;
            best = best.max(cand);
            alpha += 0.01;
        }
        best
    }

    #[test]
    fn hamiltonian_matches_brute_force_example() {
        let h = eval_hamiltonian(0.7, -1.3, 0.2);
        assert!((h - hamiltonian_brute_force(0.7, -1.3, 0.2)).abs() < 1e-4);
    }

    #[test]
    fn hamiltonian_matches_brute_force_randomized() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let v: f64 = rng.gen_range(-3.0..3.0);
            let p_v: f64 = rng.gen_range(-4.0..4.0);
            let l: f64 = rng.gen_range(-1.0..1.0);
            let h = eval_hamiltonian(v, p_v, l);
            assert!((h - hamiltonian_brute_force(v, p_v, l)).abs() < 1e-4);
        }
    }

    // --- LQ oracle ---

    #[test]
    fn lq_value_trivial_cases() {
        assert_eq!(lq_value(3.0, 0.0, 0.4, 1.0).unwrap(), 0.0);
        assert_eq!(lq_value(-1.0, 2.5, 1.0, 1.0).unwrap(), 0.0);
        assert!(lq_value(0.0, 1.0, 1.5, 1.0).is_err());
        assert!(lq_value(0.0, 1.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn lq_value_at_origin_state() {
        let u = lq_value(0.0, 1.0, 0.0, 1.0).unwrap();
        assert!((u - 0.5 * 1.0_f64.tanh()).abs() < 1e-12);
        assert!((u - 0.380797).abs() < 1e-6);
    }

    /// RK4 integration of the Riccati equation P' = P^2 - 1 backward from
    /// P(T) = 0; independent oracle for the tanh slope.
    fn riccati_backward(horizon: f64, t: f64, step: f64) -> f64 {
        let f = |p: f64| p * p - 1.0;
        let mut p = 0.0_f64;
        let mut s = horizon;
        while s > t + 1e-12 {
            let h = step.min(s - t);
            // Backward march: dP/ds = f(P), moving s downward.
            let k1 = f(p);
            let k2 = f(p - 0.5 * h * k1);
            let k3 = f(p - 0.5 * h * k2);
            let k4 = f(p - h * k3);
            p -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            s -= h;
        }
        p
    }

    #[test]
    fn lq_riccati_slope_matches_numerical_integration() {
        let oracle = LqOracle::new(1.0);
        for &t in &[0.0, 0.25, 0.5, 0.9] {
            let p_num = riccati_backward(1.0, t, 1e-4);
            assert!(
                (oracle.slope(t) - p_num).abs() <= 1e-8,
                "t = {t}: tanh = {}, numeric = {p_num}",
                oracle.slope(t)
            );
        }
    }

    #[test]
    fn lq_cost_matches_feedback_trajectory_quadrature() {
        // J = int_0^T (v'^2 + v^2)/2 ds with v(s) = cosh(T-s)/cosh(T).
        let horizon = 1.0;
        let oracle = LqOracle::new(horizon);
        let n = 20_000;
        let h = horizon / n as f64;
        let mut j = 0.0;
        for k in 0..n {
            // Midpoint rule.
            let s = (k as f64 + 0.5) * h;
            let v = oracle.characteristic_v(1.0, 0.0, s);
            let vp = -(horizon - s).sinh() / horizon.cosh();
            j += 0.5 * (vp * vp + v * v) * h;
        }
        assert!((j - oracle.cost(1.0, 0.0)).abs() < 1e-8);
    }

    // --- CFL ---

    #[test]
    fn cfl_single_binding_term() {
        let g = PhaseGrid::new(-1.0, 1.0, -2.0, 2.0, 21, 21).unwrap();
        // dx = 0.1, |v|max = 2, no drift, no diffusion.
        let dt = cfl_dt(&g, 0.0, 0.0);
        assert!((dt - 0.9 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn cfl_arithmetic_with_all_terms() {
        let g = PhaseGrid::new(-1.0, 1.0, -2.0, 2.0, 21, 41).unwrap();
        // dx = dv = 0.1, sigma = 0.01: min(0.05, 0.1, 0.25, 0.25) = 0.05.
        let dt = cfl_dt(&g, 1.0, 0.01);
        assert!((dt - 0.045).abs() < 1e-12);
    }

    // --- Running cost ---

    #[test]
    fn running_cost_c2_bound_holds_on_dense_sampling() {
        for cost in [
            RunningCost::cosine_bump(0.5, 1.2, 1.0),
            RunningCost::gaussian_bump(0.8, 0.9, 1.1),
        ] {
            let bound = cost.c2_bound();
            let h = 1e-4;
            let mut max_val = 0.0_f64;
            let mut max_grad = 0.0_f64;
            let mut max_hess = 0.0_f64;
            for i in 0..200 {
                for j in 0..200 {
                    let x = -2.0 + 4.0 * i as f64 / 199.0;
                    let v = -2.0 + 4.0 * j as f64 / 199.0;
                    let c = cost.value(x, v);
                    let dx = (cost.value(x + h, v) - cost.value(x - h, v)) / (2.0 * h);
                    let dv = (cost.value(x, v + h) - cost.value(x, v - h)) / (2.0 * h);
                    let dxx = (cost.value(x + h, v) - 2.0 * c + cost.value(x - h, v)) / (h * h);
                    let dvv = (cost.value(x, v + h) - 2.0 * c + cost.value(x, v - h)) / (h * h);
                    let dxv = (cost.value(x + h, v + h) - cost.value(x + h, v - h)
                        - cost.value(x - h, v + h)
                        + cost.value(x - h, v - h))
                        / (4.0 * h * h);
                    max_val = max_val.max(c.abs());
                    max_grad = max_grad.max((dx * dx + dv * dv).sqrt());
                    max_hess = max_hess.max(dxx.abs()).max(dvv.abs()).max(dxv.abs());
                }
            }
            assert!(max_val <= bound + 1e-9, "value {max_val} > bound {bound}");
            assert!(max_grad <= bound + 1e-6, "gradient {max_grad} > bound {bound}");
            assert!(max_hess <= bound + 1e-3, "hessian {max_hess} > bound {bound}");
        }
    }

    // --- Couplings ---

    fn unit_bump_at(grid: PhaseGrid, cx: f64, cv: f64) -> ScalarField {
        let d = InitialDensity::bump(cx, cv, 0.5, 0.5);
        d.discretize(grid).unwrap()
    }

    #[test]
    fn coupling_zero_weight_gives_zero_field() {
        let grid = test_grid();
        let m = unit_bump_at(grid, 0.0, 0.0);
        let spec = CouplingSpec::gaussian(0.25, 0.0, 0.0);
        let f = eval_coupling(&spec, &m, CouplingSide::F).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn coupling_rejects_unnormalized_density() {
        let grid = test_grid();
        let mut m = unit_bump_at(grid, 0.0, 0.0);
        m.values.mapv_inplace(|v| 1.01 * v);
        let spec = CouplingSpec::gaussian(0.25, 1.0, 1.0);
        assert!(matches!(
            eval_coupling(&spec, &m, CouplingSide::F),
            Err(SolverError::UnnormalizedDensity { .. })
        ));
    }

    #[test]
    fn coupling_of_uniform_density_is_constant_in_inner_half_box() {
        let grid = test_grid();
        let c0 = 1.0 / (grid.nx as f64 * grid.nv as f64 * grid.cell_area());
        let m = ScalarField::constant(grid, c0);
        let spec = CouplingSpec::gaussian(0.25, 1.0, 1.0);
        let f = spec.eval(&m, CouplingSide::F).unwrap();
        let mut worst_rel = 0.0_f64;
        for i in 0..grid.nx {
            for j in 0..grid.nv {
                if grid.is_inner_half(i, j) {
                    worst_rel = worst_rel.max((f.values[[i, j]] - c0).abs() / c0);
                }
            }
        }
        assert!(worst_rel < 0.01, "uniform-input deviation {worst_rel}");
    }

    #[test]
    fn coupling_of_point_mass_reproduces_kernel() {
        let grid = test_grid();
        let rho = 0.25;
        // Discrete delta: all mass in a single cell near (0.5, -0.4).
        let i0 = ((0.5 - grid.x_min) / grid.dx()).round() as usize;
        let j0 = ((-0.4 - grid.v_min) / grid.dv()).round() as usize;
        let mut m = ScalarField::zeros(grid);
        m.values[[i0, j0]] = 1.0 / grid.cell_area();
        let spec = CouplingSpec::gaussian(rho, 1.0, 1.0);
        let f = spec.eval(&m, CouplingSide::F).unwrap();

        // Analytic truncated-renormalized Gaussian kernel by quadrature of
        // the continuous profile.
        let trunc = KERNEL_TRUNCATION_BANDWIDTHS * rho;
        let norm_1d = {
            let n = 40_000;
            let h = 2.0 * trunc / n as f64;
            let mut s = 0.0;
            for k in 0..n {
                let z = -trunc + (k as f64 + 0.5) * h;
                s += (-0.5 * (z / rho).powi(2)).exp() * h;
            }
            s
        };
        let k1 = |z: f64| {
            if z.abs() > trunc {
                0.0
            } else {
                (-0.5 * (z / rho).powi(2)).exp() / norm_1d
            }
        };
        let x0 = grid.x(i0);
        let v0 = grid.v(j0);
        let mut worst = 0.0_f64;
        for i in 0..grid.nx {
            for j in 0..grid.nv {
                let expect = k1(grid.x(i) - x0) * k1(grid.v(j) - v0);
                worst = worst.max((f.values[[i, j]] - expect).abs());
            }
        }
        assert!(worst < 1e-3, "kernel reproduction error {worst}");
    }

    #[test]
    fn coupling_sup_bound_holds_for_point_mass() {
        let grid = test_grid();
        for kernel in [KernelKind::Gaussian, KernelKind::SelfConvolutionGaussian] {
            let spec = CouplingSpec { kernel, bandwidth_f: 0.3, bandwidth_g: 0.3, weight_f: 0.7, weight_g: 0.7 };
            let mut m = ScalarField::zeros(grid);
            m.values[[48, 48]] = 1.0 / grid.cell_area();
            let f = spec.eval(&m, CouplingSide::F).unwrap();
            let bound = spec.sup_bound(CouplingSide::F, &grid);
            assert!(
                f.max_abs() <= bound * (1.0 + 1e-12),
                "sup {} exceeds bound {bound}",
                f.max_abs()
            );
        }
    }

    /// Random mixtures of bumps, normalized; deterministic seed.
    fn random_density(grid: PhaseGrid, rng: &mut ChaCha8Rng) -> ScalarField {
        let mut f = ScalarField::zeros(grid);
        let n_bumps = rng.gen_range(1..4);
        for _ in 0..n_bumps {
            let cx: f64 = rng.gen_range(-1.5..1.5);
            let cv: f64 = rng.gen_range(-1.5..1.5);
            let w: f64 = rng.gen_range(0.2..1.0);
            let sx: f64 = rng.gen_range(0.2..0.6);
            let sv: f64 = rng.gen_range(0.2..0.6);
            for i in 0..grid.nx {
                for j in 0..grid.nv {
                    let b = bump_profile((grid.x(i) - cx) / sx, (grid.v(j) - cv) / sv);
                    f.values[[i, j]] += w * b;
                }
            }
        }
        let mass = f.integral();
        f.values.mapv_inplace(|v| v / mass);
        f
    }

    #[test]
    fn self_convolution_coupling_is_monotone_on_random_pairs() {
        let grid = test_grid();
        let spec = CouplingSpec::self_convolution(0.25, 0.05, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let m1 = random_density(grid, &mut rng);
            let m2 = random_density(grid, &mut rng);
            let f1 = spec.eval(&m1, CouplingSide::F).unwrap();
            let f2 = spec.eval(&m2, CouplingSide::F).unwrap();
            let mut integral = 0.0;
            for i in 0..grid.nx {
                for j in 0..grid.nv {
                    integral += (f1.values[[i, j]] - f2.values[[i, j]])
                        * (m1.values[[i, j]] - m2.values[[i, j]]);
                }
            }
            integral *= grid.cell_area();
            assert!(integral >= -1e-12, "monotonicity integral {integral}");
        }
    }

    #[test]
    fn coupling_is_lipschitz_in_d1_on_translated_bumps() {
        let grid = test_grid();
        let spec = CouplingSpec::gaussian(0.25, 1.0, 1.0);
        let lip = spec.lipschitz_d1_bound(CouplingSide::F, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let cx: f64 = rng.gen_range(-1.0..0.0);
            let cv: f64 = rng.gen_range(-0.5..0.5);
            let shift_cells: i64 = rng.gen_range(1..20);
            let delta = shift_cells as f64 * grid.dx();
            let m1 = unit_bump_at(grid, cx, cv);
            // Exact grid translate: d_1(m1, m2) = delta.
            let mut m2 = ScalarField::zeros(grid);
            for i in 0..grid.nx {
                for j in 0..grid.nv {
                    if i as i64 >= shift_cells {
                        m2.values[[i, j]] = m1.values[[(i as i64 - shift_cells) as usize, j]];
                    }
                }
            }
            let f1 = spec.eval(&m1, CouplingSide::F).unwrap();
            let f2 = spec.eval(&m2, CouplingSide::F).unwrap();
            let sup = f1.max_abs_diff(&f2);
            assert!(
                sup <= lip * delta * (1.0 + 1e-9),
                "sup |F[m1]-F[m2]| = {sup} > L d1 = {}",
                lip * delta
            );
        }
    }

    #[test]
    fn coupling_c2_sampling_bound_uniform_over_densities() {
        // (H3)-style check: first and second finite differences of F[m]
        // bounded by kernel constants, uniformly over random densities.
        let grid = test_grid();
        let spec = CouplingSpec::gaussian(0.3, 0.8, 0.8);
        let lip = spec.lipschitz_d1_bound(CouplingSide::F, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst_grad = 0.0_f64;
        for _ in 0..10 {
            let m = random_density(grid, &mut rng);
            let f = spec.eval(&m, CouplingSide::F).unwrap();
            for i in 1..grid.nx {
                for j in 0..grid.nv {
                    worst_grad = worst_grad
                        .max((f.values[[i, j]] - f.values[[i - 1, j]]).abs() / grid.dx());
                }
            }
        }
        assert!(worst_grad <= lip * (1.0 + 1e-9), "grad {worst_grad} > {lip}");
    }

    // --- Initial densities ---

    #[test]
    fn densities_are_normalized_nonnegative_compact() {
        let grid = test_grid();
        for d in [
            InitialDensity::truncated_gaussian(-0.3, 0.4, 0.25, 0.25, 0.75, 0.75),
            InitialDensity::bump(0.2, -0.1, 0.6, 0.6),
            InitialDensity::two_bumps(0.0, 0.0, 1.0, 0.5, 1.0),
        ] {
            let m = d.discretize(grid).unwrap();
            assert!((m.integral() - 1.0).abs() < 1e-10);
            assert!(m.min() >= 0.0);
            let (xl, xh, vl, vh) = d.support_box();
            for i in 0..grid.nx {
                for j in 0..grid.nv {
                    let (x, v) = (grid.x(i), grid.v(j));
                    if x < xl - 1e-12 || x > xh + 1e-12 || v < vl - 1e-12 || v > vh + 1e-12 {
                        assert_eq!(m.values[[i, j]], 0.0, "mass outside support at ({x}, {v})");
                    }
                }
            }
        }
    }

    #[test]
    fn density_rejects_support_touching_boundary() {
        let grid = test_grid();
        let d = InitialDensity::bump(2.8, 0.0, 0.5, 0.5);
        assert!(d.discretize(grid).is_err());
    }

    #[test]
    fn two_bumps_has_two_separated_modes() {
        let grid = test_grid();
        let d = InitialDensity::two_bumps(0.0, 0.0, 1.2, 0.5, 1.6);
        let m = d.discretize(grid).unwrap();
        // Center line between the bumps carries (numerically) no mass.
        let i_mid = ((0.0 - grid.x_min) / grid.dx()).round() as usize;
        let mid_max = (0..grid.nv).map(|j| m.values[[i_mid, j]]).fold(0.0_f64, f64::max);
        assert!(mid_max < 1e-6 * m.max());
    }
}
