//! Forward conservative solver for the continuity / Fokker-Planck equation
//!
//!   dm/dt + d(v m)/dx + d(-D_v u m)/dv - sigma Lap m = 0,  m(0) = m_0,
//!
//! with donor-cell upwind fluxes (upwind side picked by the face drift
//! sign), centered diffusion and zero-flux boundaries, so the total mass
//! is conserved to rounding. Under the CFL bound every update weight is
//! nonnegative: densities stay nonnegative up to rounding, and the tiny
//! negative excursions are clamped and renormalized with the correction
//! logged (the run aborts if the correction budget 1e-8 is exceeded).
//!
//! Also hosts the sliced Monge-Kantorovich estimate d1_estimate used by the
//! fixed point, the moment/L-infinity traces and the time-Hoelder report.

use crate::error::{Result, SolverError};
use crate::grid::{FieldPath, PhaseGrid, ScalarField, TimeGrid};
use crate::model::{cfl_dt, InitialDensity};

/// Mass allowed in the outer two-cell ring before the run aborts with a
/// support diagnostic (truncation box too tight).
pub const SUPPORT_RING_BUDGET: f64 = 1e-6;

/// Total clamped negativity allowed per run.
pub const NEGATIVITY_BUDGET: f64 = 1e-8;

/// Transported density with its conservation traces.
#[derive(Debug, Clone)]
pub struct DensityPath {
    pub m: FieldPath,
    pub sigma: f64,
    /// Total mass per slice (rectangle quadrature).
    pub mass_trace: Vec<f64>,
    /// Second moment per slice: integral of (x^2 + v^2) dm.
    pub moment_trace: Vec<f64>,
    /// Max density value per slice.
    pub max_trace: Vec<f64>,
    /// Most negative pre-clamp value seen during the march.
    pub min_before_clamp: f64,
    /// Total mass removed by clamping, accumulated over the run.
    pub clamp_correction: f64,
    /// Earliest slice from which every interior node is strictly positive
    /// (discrete information spreads one cell per step; None if never).
    pub first_all_positive_slice: Option<usize>,
}

impl DensityPath {
    pub fn grid(&self) -> PhaseGrid {
        self.m.grid()
    }

    /// Sup over slices of the max value (the L-infinity constant K_run).
    pub fn sup_max(&self) -> f64 {
        self.max_trace.iter().fold(0.0_f64, |a, &b| a.max(b))
    }

    /// max_t M2(t) / (M2(0) + 1), the recorded moment constant.
    pub fn moment_constant(&self) -> f64 {
        let m2_max = self.moment_trace.iter().fold(0.0_f64, |a, &b| a.max(b));
        m2_max / (self.moment_trace[0] + 1.0)
    }

    /// Moment constant with the exact heat-kernel production removed:
    /// diffusion adds 2*(2N)*sigma*t to M2 directly plus (2/3)*sigma*t^3
    /// through the kinetic coupling x' = v. Subtracting it isolates the
    /// drift contribution, which is the sigma-uniform Gronwall constant.
    pub fn moment_constant_adjusted(&self) -> f64 {
        let time = self.m.time;
        let mut worst = 0.0_f64;
        for (n, &m2) in self.moment_trace.iter().enumerate() {
            let t = time.t(n);
            let heat = 4.0 * self.sigma * t + 2.0 / 3.0 * self.sigma * t.powi(3);
            worst = worst.max(m2 - heat);
        }
        worst / (self.moment_trace[0] + 1.0)
    }
}

pub fn solve_transport_forward(m0: &InitialDensity, dvu: &FieldPath, sigma: f64) -> Result<DensityPath> {
    let grid = dvu.grid();
    if !m0.support_in_inner_half(&grid) {
        return Err(SolverError::Precondition(
            "initial density support must lie inside the inner half-box".into(),
        ));
    }
    let initial = m0.discretize(grid)?;
    solve_transport_forward_from(&initial, dvu, sigma)
}

/// March from an arbitrary starting slice (restart support; the public
/// entry point discretizes m_0 first).
pub fn solve_transport_forward_from(initial: &ScalarField, dvu: &FieldPath, sigma: f64) -> Result<DensityPath> {
    if sigma < 0.0 {
        return Err(SolverError::Precondition("sigma must be nonnegative".into()));
    }
    let grid = dvu.grid();
    if initial.grid != grid {
        return Err(SolverError::IncompatibleFields("initial slice grid differs from drift grid".into()));
    }
    let time = dvu.time;
    let dt = time.dt();
    let (nx, nv) = (grid.nx, grid.nv);
    let (dx, dv) = (grid.dx(), grid.dv());
    let area = grid.cell_area();

    // CFL precondition against the worst drift over the whole path.
    let max_dvu = dvu.max_abs();
    let stable = cfl_dt(&grid, max_dvu, sigma);
    if dt > stable {
        return Err(SolverError::CflViolation { slice: 0, dt, stable_dt: stable, max_dvu });
    }

    let mut slices: Vec<ScalarField> = Vec::with_capacity(time.n_slices());
    slices.push(initial.clone());
    let mut mass_trace = vec![initial.integral()];
    let mut moment_trace = vec![second_moment(initial)];
    let mut max_trace = vec![initial.max()];
    let mut min_before_clamp = 0.0_f64;
    let mut clamp_correction = 0.0_f64;
    let mut first_all_positive: Option<usize> = None;

    let mut fx = vec![0.0_f64; nx + 1]; // reused per column sweep
    for n in 0..time.nt {
        let cur = slices[n].values.clone();
        let drift = &dvu.slices[n].values;
        let mut next = cur.clone();

        // x-direction fluxes: speed is v_j, constant along each row j.
        for j in 0..nv {
            let v = grid.v(j);
            fx[0] = 0.0;
            fx[nx] = 0.0;
            for i in 1..nx {
                let adv = if v >= 0.0 { v * cur[[i - 1, j]] } else { v * cur[[i, j]] };
                let diff = sigma * (cur[[i, j]] - cur[[i - 1, j]]) / dx;
                fx[i] = adv - diff;
            }
            for i in 0..nx {
                next[[i, j]] -= dt / dx * (fx[i + 1] - fx[i]);
            }
        }
        // v-direction fluxes: face drift a = -D_v u averaged to the face.
        for i in 0..nx {
            let mut f_lo = 0.0_f64;
            for j in 0..nv {
                let f_hi = if j + 1 < nv {
                    let a = -0.5 * (drift[[i, j]] + drift[[i, j + 1]]);
                    let adv = if a >= 0.0 { a * cur[[i, j]] } else { a * cur[[i, j + 1]] };
                    let diff = sigma * (cur[[i, j + 1]] - cur[[i, j]]) / dv;
                    adv - diff
                } else {
                    0.0
                };
                next[[i, j]] -= dt / dv * (f_hi - f_lo);
                f_lo = f_hi;
            }
        }

        // Clamp rounding negatives, renormalize, log the correction.
        let mut removed = 0.0_f64;
        for val in next.iter_mut() {
            if *val < 0.0 {
                min_before_clamp = min_before_clamp.min(*val);
                removed += -*val;
                *val = 0.0;
            }
        }
        clamp_correction += removed * area;
        if clamp_correction > NEGATIVITY_BUDGET {
            return Err(SolverError::NegativityBudget {
                slice: n + 1,
                correction: clamp_correction,
                budget: NEGATIVITY_BUDGET,
            });
        }
        let mass = next.sum() * area;
        if !mass.is_finite() || mass <= 0.0 {
            return Err(SolverError::NanDetected { slice: n + 1, stage: "transport march" });
        }
        if removed > 0.0 {
            let scale = mass_trace[n] / mass;
            next.mapv_inplace(|x| x * scale);
        }

        let field = ScalarField { grid, values: next };

        // Support monitor: the outer two-cell ring must stay empty.
        let ring = ring_mass(&field, 2);
        if ring > SUPPORT_RING_BUDGET {
            return Err(SolverError::SupportLeak {
                slice: n + 1,
                ring_mass: ring,
                budget: SUPPORT_RING_BUDGET,
            });
        }

        if first_all_positive.is_none() {
            let all_pos = (1..nx - 1).all(|i| (1..nv - 1).all(|j| field.values[[i, j]] > 0.0));
            if all_pos {
                first_all_positive = Some(n + 1);
            }
        }

        mass_trace.push(field.integral());
        moment_trace.push(second_moment(&field));
        max_trace.push(field.max());
        slices.push(field);
    }

    Ok(DensityPath {
        m: FieldPath::new(time, slices)?,
        sigma,
        mass_trace,
        moment_trace,
        max_trace,
        min_before_clamp,
        clamp_correction,
        first_all_positive_slice: first_all_positive,
    })
}

fn second_moment(field: &ScalarField) -> f64 {
    let g = field.grid;
    let mut s = 0.0;
    for i in 0..g.nx {
        let x2 = g.x(i) * g.x(i);
        for j in 0..g.nv {
            let v = g.v(j);
            s += (x2 + v * v) * field.values[[i, j]];
        }
    }
    s * g.cell_area()
}

fn ring_mass(field: &ScalarField, width: usize) -> f64 {
    let g = field.grid;
    let mut s = 0.0;
    for i in 0..g.nx {
        for j in 0..g.nv {
            if i < width || i >= g.nx - width || j < width || j >= g.nv - width {
                s += field.values[[i, j]];
            }
        }
    }
    s * g.cell_area()
}

// ---------------------------------------------------------------------------
// Moment report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct MomentReport {
    pub m2_initial: f64,
    pub m2_max: f64,
    /// K_run = max_t M2(t) / (M2(0) + 1).
    pub constant: f64,
    /// K_run with the exact diffusive production subtracted; this is the
    /// quantity whose sigma-stability is asserted.
    pub constant_adjusted: f64,
    pub pass: bool,
}

/// Fixed bound constant for max_t M2(t) <= K (M2(0) + 1).
pub const MOMENT_BOUND_K: f64 = 2.0;

/// Second-moment trace bound mirroring the uniform-in-sigma estimate
/// int (|x|^2+|v|^2) dm(t) <= K (int (|x|^2+|v|^2) dm_0 + 1).
pub fn moment_report(path: &DensityPath) -> MomentReport {
    let m2_max = path.moment_trace.iter().fold(0.0_f64, |a, &b| a.max(b));
    MomentReport {
        m2_initial: path.moment_trace[0],
        m2_max,
        constant: path.moment_constant(),
        constant_adjusted: path.moment_constant_adjusted(),
        pass: m2_max <= MOMENT_BOUND_K * (path.moment_trace[0] + 1.0),
    }
}

// ---------------------------------------------------------------------------
// Sliced Monge-Kantorovich estimate
// ---------------------------------------------------------------------------

/// The 8 projection directions: axes, diagonals and their negations.
const DIRECTIONS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
];

/// Average over the direction set of |<omega, e>| for any axis or diagonal
/// unit vector e; dividing by it makes the sliced estimate exact on
/// translations along those directions.
pub const SLICED_W1_CALIBRATION: f64 = (1.0 + std::f64::consts::SQRT_2) / 4.0;

/// Sliced-W1 surrogate for the Monge-Kantorovich distance d_1: the average
/// over 8 fixed projection directions of the exact 1D W1 (integral of
/// |CDF_1 - CDF_2|) of the projected marginals, divided by the calibration
/// constant so that translations along the axis/diagonal directions are
/// reproduced exactly. A lower-bound-style surrogate (up to the known
/// factor), used for convergence monitoring and Hoelder diagnostics only.
pub fn d1_estimate(m1: &ScalarField, m2: &ScalarField) -> Result<f64> {
    if m1.grid != m2.grid {
        return Err(SolverError::IncompatibleFields("d1_estimate fields on different grids".into()));
    }
    let g = m1.grid;
    let area = g.cell_area();
    let mass1 = m1.integral();
    let mass2 = m2.integral();
    if (mass1 - mass2).abs() > 1e-6 {
        return Err(SolverError::UnnormalizedDensity { mass: mass1 - mass2, tol: 1e-6 });
    }
    if m1.values.iter().chain(m2.values.iter()).any(|&x| x < 0.0) {
        return Err(SolverError::Precondition("d1_estimate needs nonnegative fields".into()));
    }

    let n = g.nx * g.nv;
    let mut proj: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    let mut total = 0.0;
    for &(wx, wv) in DIRECTIONS.iter() {
        proj.clear();
        for i in 0..g.nx {
            let px = g.x(i) * wx;
            for j in 0..g.nv {
                let p = px + g.v(j) * wv;
                proj.push((p, m1.values[[i, j]] * area, m2.values[[i, j]] * area));
            }
        }
        proj.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        // Integral of |CDF1 - CDF2| over the projected line.
        let mut c1 = 0.0;
        let mut c2 = 0.0;
        let mut w1 = 0.0;
        for k in 0..n - 1 {
            c1 += proj[k].1;
            c2 += proj[k].2;
            let gap = proj[k + 1].0 - proj[k].0;
            if gap > 0.0 {
                w1 += (c1 - c2).abs() * gap;
            }
        }
        total += w1 / mass1;
    }
    Ok(total / DIRECTIONS.len() as f64 / SLICED_W1_CALIBRATION)
}

/// Plain L1 distance between two density slices (secondary residual metric).
pub fn l1_distance(m1: &ScalarField, m2: &ScalarField) -> f64 {
    debug_assert_eq!(m1.grid, m2.grid);
    m1.values
        .iter()
        .zip(m2.values.iter())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<f64>()
        * m1.grid.cell_area()
}

// ---------------------------------------------------------------------------
// Time-Hoelder report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TimeHolderReport {
    /// max over the dyadic pairs of d1(m(t1), m(t2)) / sqrt(t2 - t1).
    pub ratio_max: f64,
    pub pairs: Vec<(f64, f64, f64)>,
}

/// Checks the C^{1/2}([0,T]; P_1) bound on dyadic time pairs.
pub fn time_holder_report(path: &DensityPath) -> Result<TimeHolderReport> {
    let time = path.m.time;
    let mut pairs = Vec::new();
    let mut ratio_max = 0.0_f64;
    for level in 0..=3usize {
        let pieces = 1usize << level;
        for k in 0..pieces {
            let n1 = time.nt * k / pieces;
            let n2 = time.nt * (k + 1) / pieces;
            if n1 == n2 {
                continue;
            }
            let t1 = time.t(n1);
            let t2 = time.t(n2);
            let d = d1_estimate(&path.m.slices[n1], &path.m.slices[n2])?;
            let ratio = d / (t2 - t1).sqrt();
            ratio_max = ratio_max.max(ratio);
            pairs.push((t1, t2, ratio));
        }
    }
    Ok(TimeHolderReport { ratio_max, pairs })
}

// ---------------------------------------------------------------------------
// Exact coarse-grid W1 cross-check
// ---------------------------------------------------------------------------

/// Exact 2D W1 between two densities after conservative coarsening to
/// roughly `target` bins per axis. Solves the transportation LP with
/// successive shortest paths and Johnson potentials. Far too slow for the
/// iteration loop; run once per acceptance run to cross-check the sliced
/// surrogate.
pub fn exact_w1_coarse(m1: &ScalarField, m2: &ScalarField, target: usize) -> Result<f64> {
    if m1.grid != m2.grid {
        return Err(SolverError::IncompatibleFields("exact_w1 fields on different grids".into()));
    }
    let g = m1.grid;
    let factor = g.nx.min(g.nv).div_ceil(target);
    let (c1, pos) = coarsen(m1, factor);
    let (c2, _) = coarsen(m2, factor);

    // Sources: excess of c1 over c2; sinks: the reverse.
    let mut src: Vec<(usize, f64)> = Vec::new();
    let mut snk: Vec<(usize, f64)> = Vec::new();
    for (idx, (&a, &b)) in c1.iter().zip(c2.iter()).enumerate() {
        let d = a - b;
        if d > 1e-15 {
            src.push((idx, d));
        } else if d < -1e-15 {
            snk.push((idx, -d));
        }
    }
    let ns = src.len();
    let nk = snk.len();
    if ns == 0 || nk == 0 {
        return Ok(0.0);
    }
    // Close the tiny rounding imbalance so the flow problem is feasible.
    let total_s: f64 = src.iter().map(|s| s.1).sum();
    let total_k: f64 = snk.iter().map(|s| s.1).sum();
    let fix = total_s / total_k;
    let mut supply: Vec<f64> = src.iter().map(|s| s.1).collect();
    let mut demand: Vec<f64> = snk.iter().map(|s| s.1 * fix).collect();

    let cost = |i: usize, j: usize| -> f64 {
        let (xa, va) = pos[src[i].0];
        let (xb, vb) = pos[snk[j].0];
        ((xa - xb).powi(2) + (va - vb).powi(2)).sqrt()
    };

    // Node layout: 0..ns sources, ns..ns+nk sinks.
    let n_nodes = ns + nk;
    let mut flow = vec![0.0_f64; ns * nk];
    let mut pot = vec![0.0_f64; n_nodes];
    let mut dist = vec![0.0_f64; n_nodes];
    let mut prev = vec![usize::MAX; n_nodes];
    let mut done = vec![false; n_nodes];
    const EPS: f64 = 1e-14;

    loop {
        if !supply.iter().any(|&s| s > EPS) {
            break;
        }
        // Dense Dijkstra over the residual graph with reduced costs,
        // started from every source that still has supply.
        for v in 0..n_nodes {
            dist[v] = f64::INFINITY;
            prev[v] = usize::MAX;
            done[v] = false;
        }
        for (i, &s) in supply.iter().enumerate() {
            if s > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n_nodes {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..n_nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u < ns {
                // Forward arcs source u -> every sink.
                for j in 0..nk {
                    let w = ns + j;
                    let rc = cost(u, j) + pot[u] - pot[w];
                    if dist[u] + rc < dist[w] - 1e-15 {
                        dist[w] = dist[u] + rc;
                        prev[w] = u;
                    }
                }
            } else {
                // Residual arcs sink -> source where flow is positive.
                let j = u - ns;
                for i in 0..ns {
                    if flow[i * nk + j] > EPS {
                        let rc = -cost(i, j) + pot[u] - pot[i];
                        if dist[u] + rc < dist[i] - 1e-15 {
                            dist[i] = dist[u] + rc;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        // Cheapest reachable sink with remaining demand.
        let mut target_node = usize::MAX;
        let mut best = f64::INFINITY;
        for (j, &d) in demand.iter().enumerate() {
            if d > EPS && dist[ns + j] < best {
                best = dist[ns + j];
                target_node = ns + j;
            }
        }
        if target_node == usize::MAX {
            break; // numerically exhausted
        }
        // Bottleneck along the augmenting path.
        let mut amount = demand[target_node - ns];
        let mut v = target_node;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                amount = amount.min(supply[v]);
                break;
            }
            if u >= ns {
                // v is a source reached through residual arc (u=sink).
                amount = amount.min(flow[v * nk + (u - ns)]);
            }
            v = u;
        }
        // Apply the augmentation.
        let mut v = target_node;
        loop {
            let u = prev[v];
            if u == usize::MAX {
                supply[v] -= amount;
                break;
            }
            if u < ns {
                flow[u * nk + (v - ns)] += amount;
            } else {
                flow[v * nk + (u - ns)] -= amount;
            }
            v = u;
        }
        demand[target_node - ns] -= amount;
        // Johnson potential update keeps reduced costs nonnegative.
        let d_target = dist[target_node];
        for v in 0..n_nodes {
            if dist[v].is_finite() {
                pot[v] += dist[v].min(d_target);
            } else {
                pot[v] += d_target;
            }
        }
    }

    let mut total = 0.0;
    for i in 0..ns {
        for j in 0..nk {
            let f = flow[i * nk + j];
            if f > 0.0 {
                total += f * cost(i, j);
            }
        }
    }
    Ok(total)
}

/// Conservative block coarsening; returns per-cell masses and centers.
fn coarsen(m: &ScalarField, factor: usize) -> (Vec<f64>, Vec<(f64, f64)>) {
    let g = m.grid;
    let nxc = g.nx.div_ceil(factor);
    let nvc = g.nv.div_ceil(factor);
    let mut mass = vec![0.0_f64; nxc * nvc];
    let area = g.cell_area();
    for i in 0..g.nx {
        for j in 0..g.nv {
            mass[(i / factor) * nvc + j / factor] += m.values[[i, j]] * area;
        }
    }
    let mut pos = vec![(0.0_f64, 0.0_f64); nxc * nvc];
    for ci in 0..nxc {
        let i_mid = (ci * factor + factor / 2).min(g.nx - 1);
        for cj in 0..nvc {
            let j_mid = (cj * factor + factor / 2).min(g.nv - 1);
            pos[ci * nvc + cj] = (g.x(i_mid), g.v(j_mid));
        }
    }
    (mass, pos)
}
