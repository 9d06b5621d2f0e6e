//! Interpolation of grid fields at off-node points.
//!
//! Bilinear is used wherever first-order accuracy matches the scheme
//! (particle advection, feedback residuals); Catmull-Rom bicubic is used
//! for the cost gradients fed to the shooting oracle, where the smoother
//! interpolant keeps the Newton iteration well behaved. Queries are
//! clamped to the box: outside points read the nearest boundary value.

use crate::grid::{FieldPath, PhaseGrid, ScalarField};

/// Fractional index of a point along one axis, clamped to [0, n-1].
#[inline]
fn frac_index(coord: f64, min: f64, spacing: f64, n: usize) -> (usize, f64) {
    let s = ((coord - min) / spacing).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

pub fn bilinear(field: &ScalarField, x: f64, v: f64) -> f64 {
    let g = &field.grid;
    let (i, fx) = frac_index(x, g.x_min, g.dx(), g.nx);
    let (j, fv) = frac_index(v, g.v_min, g.dv(), g.nv);
    let f00 = field.values[[i, j]];
    let f10 = field.values[[i + 1, j]];
    let f01 = field.values[[i, j + 1]];
    let f11 = field.values[[i + 1, j + 1]];
    (1.0 - fx) * (1.0 - fv) * f00 + fx * (1.0 - fv) * f10 + (1.0 - fx) * fv * f01 + fx * fv * f11
}

/// Catmull-Rom weights for a unit-spaced 4-point stencil.
#[inline]
fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

pub fn bicubic(field: &ScalarField, x: f64, v: f64) -> f64 {
    let g = &field.grid;
    let (i, fx) = frac_index(x, g.x_min, g.dx(), g.nx);
    let (j, fv) = frac_index(v, g.v_min, g.dv(), g.nv);
    let wx = catmull_rom(fx);
    let wv = catmull_rom(fv);
    let clamp_i = |k: i64| -> usize { k.clamp(0, g.nx as i64 - 1) as usize };
    let clamp_j = |k: i64| -> usize { k.clamp(0, g.nv as i64 - 1) as usize };
    let mut out = 0.0;
    for (a, &wxa) in wx.iter().enumerate() {
        let ii = clamp_i(i as i64 + a as i64 - 1);
        for (b, &wvb) in wv.iter().enumerate() {
            let jj = clamp_j(j as i64 + b as i64 - 1);
            out += wxa * wvb * field.values[[ii, jj]];
        }
    }
    out
}

/// Space interpolation per slice, linear interpolation in time.
pub fn path_bilinear(path: &FieldPath, x: f64, v: f64, t: f64) -> f64 {
    let (n, ft) = time_index(path, t);
    let a = bilinear(&path.slices[n], x, v);
    if ft == 0.0 {
        a
    } else {
        let b = bilinear(&path.slices[n + 1], x, v);
        (1.0 - ft) * a + ft * b
    }
}

pub fn path_bicubic(path: &FieldPath, x: f64, v: f64, t: f64) -> f64 {
    let (n, ft) = time_index(path, t);
    let a = bicubic(&path.slices[n], x, v);
    if ft == 0.0 {
        a
    } else {
        let b = bicubic(&path.slices[n + 1], x, v);
        (1.0 - ft) * a + ft * b
    }
}

#[inline]
fn time_index(path: &FieldPath, t: f64) -> (usize, f64) {
    let nt = path.time.nt;
    let s = (t / path.time.dt()).clamp(0.0, nt as f64);
    let n = (s.floor() as usize).min(nt - 1);
    let ft = s - n as f64;
    if ft < 1e-14 {
        (n, 0.0)
    } else {
        (n, ft)
    }
}

/// Central-difference gradient fields (one-sided at the boundary).
pub fn gradient(field: &ScalarField) -> (ScalarField, ScalarField) {
    let g = field.grid;
    let mut dx_field = ScalarField::zeros(g);
    let mut dv_field = ScalarField::zeros(g);
    let (dx, dv) = (g.dx(), g.dv());
    for i in 0..g.nx {
        for j in 0..g.nv {
            dx_field.values[[i, j]] = if i == 0 {
                (field.values[[1, j]] - field.values[[0, j]]) / dx
            } else if i == g.nx - 1 {
                (field.values[[i, j]] - field.values[[i - 1, j]]) / dx
            } else {
                (field.values[[i + 1, j]] - field.values[[i - 1, j]]) / (2.0 * dx)
            };
            dv_field.values[[i, j]] = if j == 0 {
                (field.values[[i, 1]] - field.values[[i, 0]]) / dv
            } else if j == g.nv - 1 {
                (field.values[[i, j]] - field.values[[i, j - 1]]) / dv
            } else {
                (field.values[[i, j + 1]] - field.values[[i, j - 1]]) / (2.0 * dv)
            };
        }
    }
    (dx_field, dv_field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{PhaseGrid, TimeGrid};

    fn grid() -> PhaseGrid {
        PhaseGrid::new(-2.0, 2.0, -2.0, 2.0, 33, 33).unwrap()
    }

    #[test]
    fn bilinear_reproduces_affine_fields() {
        let f = ScalarField::from_fn(grid(), |x, v| 2.0 * x - 3.0 * v + 0.5);
        for (x, v) in [(0.13, -0.77), (-1.9, 1.95), (0.0, 0.0)] {
            let exact = 2.0 * x - 3.0 * v + 0.5;
            assert!((bilinear(&f, x, v) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn bicubic_reproduces_quadratics_and_tracks_cubics() {
        let q = ScalarField::from_fn(grid(), |x, v| 1.5 * x * x - 2.0 * v * v + x * v);
        let c = ScalarField::from_fn(grid(), |x, v| x * x * x - 2.0 * v * v + x * v);
        for (x, v) in [(0.2, -0.3), (-0.55, 0.8)] {
            let exact_q = 1.5 * x * x - 2.0 * v * v + x * v;
            assert!((bicubic(&q, x, v) - exact_q).abs() < 1e-12);
            // Catmull-Rom slopes are centered differences: cubics are
            // reproduced only to O(h^3).
            let exact_c = x * x * x - 2.0 * v * v + x * v;
            assert!((bicubic(&c, x, v) - exact_c).abs() < 1e-3);
        }
    }

    #[test]
    fn queries_outside_the_box_clamp_to_boundary() {
        let f = ScalarField::from_fn(grid(), |x, _| x);
        assert!((bilinear(&f, 5.0, 0.0) - 2.0).abs() < 1e-12);
        assert!((bilinear(&f, -5.0, 0.0) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn path_interpolation_is_linear_in_time() {
        let time = TimeGrid::new(1.0, 4).unwrap();
        let path = crate::grid::FieldPath::from_fn(grid(), time, |x, _, t| x * t);
        let val = path_bilinear(&path, 1.0, 0.0, 0.375);
        assert!((val - 0.375).abs() < 1e-12);
    }

    #[test]
    fn gradient_of_linear_field_is_exact_everywhere() {
        let f = ScalarField::from_fn(grid(), |x, v| 3.0 * x - 0.5 * v);
        let (gx, gv) = gradient(&f);
        assert!(gx.values.iter().all(|&d| (d - 3.0).abs() < 1e-12));
        assert!(gv.values.iter().all(|&d| (d + 0.5).abs() < 1e-12));
    }
}
