use alloc::format;

use crate::error::{shape_err, Error, Result};
use crate::grid::{Boundary, Field};

/// Largest accepted Courant number.
pub const MAX_CFL: f64 = 0.5;

/// Exact Godunov flux for `f(u) = u²/2` between states `l` and `r`.
#[inline]
fn godunov_flux(l: f64, r: f64) -> f64 {
    let f = |u: f64| 0.5 * u * u;
    if l <= r {
        // rarefaction: minimum of f over [l, r]
        if l > 0.0 {
            f(l)
        } else if r < 0.0 {
            f(r)
        } else {
            0.0
        }
    } else {
        // shock: maximum of f over [r, l]
        f(l).max(f(r))
    }
}

/// Advances Burgers' equation on a periodic 1D grid to time `t` with the
/// first-order Godunov scheme. Time steps are `cfl * h / max|u|`, the
/// last one shortened to land on `t`.
pub fn fv_burgers_solve(u0: &Field<f64>, t: f64, cfl: f64) -> Result<Field<f64>> {
    if u0.dim() != 1 || u0.channels() != 1 {
        return Err(shape_err(
            "fv_burgers_solve",
            format!("{}D field with {} channels, expected 1D scalar", u0.dim(), u0.channels()),
        ));
    }
    if u0.geom().bc() != Boundary::Periodic {
        return Err(Error::InvalidGeometry("finite-volume Burgers needs a periodic grid".into()));
    }
    if !(cfl > 0.0 && cfl <= MAX_CFL) {
        return Err(Error::ConfigInvalid(format!("cfl {cfl} outside (0, {MAX_CFL}]")));
    }
    if !(t >= 0.0) {
        return Err(Error::ConfigInvalid(format!("negative time {t}")));
    }
    let h = u0.geom().spacing(0);
    let n = u0.geom().len();
    let mut u = u0.data().to_vec();
    let mut flux = alloc::vec![0.0; n];
    let mut now = 0.0;
    while now < t {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if umax == 0.0 {
            break;
        }
        let dt = (cfl * h / umax).min(t - now);
        // flux[i] sits on the interface between cells i and i + 1
        for i in 0..n {
            flux[i] = godunov_flux(u[i], u[(i + 1) % n]);
        }
        let r = dt / h;
        for i in 0..n {
            u[i] -= r * (flux[i] - flux[(i + n - 1) % n]);
        }
        now += dt;
    }
    Field::new(u0.geom().clone(), 1, u)
}
