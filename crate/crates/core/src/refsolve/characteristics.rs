use alloc::format;
use alloc::vec::Vec;

use super::flux::{check_scalar, grid_jacobian, FluxSpec};
use crate::error::{shape_err, Error, Result};
use crate::grid::{interpolate, Field, MAX_DIM};

/// Margin kept below the estimated shock time.
pub const SHOCK_MARGIN: f64 = 0.9;
/// Iteration cap of [`gt_fixed_point`].
pub const MAX_FIXED_POINT_ITERS: usize = 100;
const FIXED_POINT_TOL: f64 = 1e-12;

/// Grid estimate of the first time characteristics of `u0` cross.
///
/// In 1D this is `1 / max(-d/dx A(u0))`; in higher dimensions the bound
/// `1 / max ‖D(A∘u0)‖_F` is used instead. Infinite when the data only
/// expands.
pub fn shock_time(u0: &Field<f64>, spec: &FluxSpec) -> Result<f64> {
    let b = spec.velocity_field(u0)?;
    let jac = grid_jacobian(&b);
    let d = b.dim();
    let n = b.geom().len();
    let mut worst = 0.0f64;
    for j in 0..n {
        let s = if d == 1 {
            -jac[j]
        } else {
            let mut fro = 0.0;
            for e in 0..d * d {
                fro += jac[e * n + j] * jac[e * n + j];
            }
            libm::sqrt(fro)
        };
        worst = worst.max(s);
    }
    Ok(if worst > 0.0 { 1.0 / worst } else { f64::INFINITY })
}

pub(super) fn node_coords(f: &Field<f64>) -> Vec<f64> {
    let geom = f.geom();
    let n = geom.len();
    let d = geom.dim();
    let mut x = alloc::vec![0.0; d * n];
    for flat in 0..n {
        let idx = geom.unravel(flat);
        for a in 0..d {
            x[a * n + flat] = geom.center(a, idx[a]);
        }
    }
    x
}

/// Solves `y = x - t B(y)` for every query point by Banach iteration,
/// with `B` interpolated from `b` (one channel per axis) under its boundary
/// rule. `x` is laid out `[d, M]`.
pub fn gt_fixed_point(b: &Field<f64>, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let d = b.dim();
    if b.channels() != d {
        return Err(shape_err("gt_fixed_point", format!("{} channels for a {d}D velocity", b.channels())));
    }
    if !x.len().is_multiple_of(d) {
        return Err(shape_err("gt_fixed_point", format!("{} coordinates for d = {d}", x.len())));
    }
    let extent = b.geom().extent().iter().cloned().fold(0.0, f64::max);
    let tol = FIXED_POINT_TOL * extent;
    let bc = b.geom().bc();
    let mut y = x.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_FIXED_POINT_ITERS {
        let by = interpolate(b, &y, bc)?;
        residual = 0.0;
        for ((yi, &xi), &bi) in y.iter_mut().zip(x).zip(&by) {
            let next = xi - t * bi;
            residual = residual.max((next - *yi).abs());
            *yi = next;
        }
        if residual < tol {
            return Ok(y);
        }
    }
    Err(Error::FixedPointDiverged {
        iterations: MAX_FIXED_POINT_ITERS,
        residual,
    })
}

/// Solution of the conservation law at time `t` before characteristics
/// cross: `u(t, ·) = u0 ∘ G_t`.
pub fn characteristics_solve(u0: &Field<f64>, spec: &FluxSpec, t: f64) -> Result<Field<f64>> {
    check_scalar(u0, spec)?;
    let t_shock = shock_time(u0, spec)?;
    let ratio = t / t_shock;
    if !(t >= 0.0) || ratio >= SHOCK_MARGIN {
        return Err(Error::ShockTooClose { t, t_shock, ratio });
    }
    let b = spec.velocity_field(u0)?;
    let g = gt_fixed_point(&b, t, &node_coords(u0))?;
    let vals = interpolate(u0, &g, u0.geom().bc())?;
    Field::new(u0.geom().clone(), 1, vals)
}

/// One-sided warp difference `(u(x + s e_j) - u(x)) / s` at every node.
pub fn warp_gradient(u: &Field<f64>, axis: usize, s: f64) -> Result<Field<f64>> {
    let geom = u.geom();
    if axis >= geom.dim() {
        return Err(Error::ConfigInvalid(format!("axis {axis} on a {}D grid", geom.dim())));
    }
    if !(s > 0.0 && s <= geom.spacing(axis) * (1.0 + 1e-12)) {
        return Err(Error::ConfigInvalid(format!(
            "warp difference step {s} outside (0, {}]",
            geom.spacing(axis)
        )));
    }
    let n = geom.len();
    let mut x = node_coords(u);
    for v in &mut x[axis * n..(axis + 1) * n] {
        *v += s;
    }
    let shifted = interpolate(u, &x, geom.bc())?;
    let data = shifted.iter().zip(u.data()).map(|(a, b)| (a - b) / s).collect();
    Field::new(geom.clone(), u.channels(), data)
}

/// Second-order expansion of the flow map,
/// `G_t(x) ≈ x - t A(u0) + t² A'(u0) (∇u0 · A(u0))`, evaluated at the query
/// points `x` (`[d, M]`). Gradients come from [`warp_gradient`] with a
/// one-cell step.
pub fn gt_taylor2(u0: &Field<f64>, spec: &FluxSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_scalar(u0, spec)?;
    let d = u0.dim();
    if !x.len().is_multiple_of(d) {
        return Err(shape_err("gt_taylor2", format!("{} coordinates for d = {d}", x.len())));
    }
    let m = x.len() / d;
    let bc = u0.geom().bc();
    let u = interpolate(u0, x, bc)?;
    let mut grads = Vec::with_capacity(d);
    for a in 0..d {
        let g = warp_gradient(u0, a, u0.geom().spacing(a))?;
        grads.push(interpolate(&g, x, bc)?);
    }
    let mut out = x.to_vec();
    for j in 0..m {
        let a = spec.velocity(u[j]);
        let ap = spec.velocity_prime(u[j]);
        let mut grad_dot_a = 0.0;
        for (k, g) in grads.iter().enumerate() {
            grad_dot_a += g[j] * a[k];
        }
        for i in 0..d {
            out[i * m + j] += -t * a[i] + t * t * ap[i] * grad_dot_a;
        }
    }
    Ok(out)
}

/// Forward characteristic map `Φ_t(x) = x + t A(u0(x))` at every node, `[d, N]`.
pub fn characteristic_map(u0: &Field<f64>, spec: &FluxSpec, t: f64) -> Result<Vec<f64>> {
    check_scalar(u0, spec)?;
    let n = u0.geom().len();
    let d = u0.dim();
    let mut x = node_coords(u0);
    for (j, &u) in u0.data().iter().enumerate() {
        let a: [f64; MAX_DIM] = spec.velocity(u);
        for i in 0..d {
            x[i * n + j] += t * a[i];
        }
    }
    Ok(x)
}

