use alloc::format;
use alloc::vec;

use crate::diff::warp_forward;
use crate::error::{shape_err, Error, Result};
use crate::grid::Field;

/// Depth-as-time streaming: `n_steps` warp updates
/// `u_{n+1}(x, η_h) = u_n(x + Δt b_h, η_h)` with `Δt = t_final / n_steps`.
///
/// `u0` stacks the `H` velocity nodes as channel blocks (`[H c, N...]`);
/// `b` holds one velocity per node, `[H d]`. There is no collision term.
pub fn kinetic_cascade(u0: &Field<f64>, heads: usize, b: &[f64], n_steps: usize, t_final: f64) -> Result<Field<f64>> {
    let d = u0.dim();
    if heads == 0 || !u0.channels().is_multiple_of(heads) {
        return Err(shape_err("kinetic_cascade", format!("{} channels over {heads} nodes", u0.channels())));
    }
    if b.len() != heads * d {
        return Err(shape_err("kinetic_cascade", format!("{} velocities for {heads} nodes in {d}D", b.len())));
    }
    if n_steps == 0 || !(t_final.is_finite()) {
        return Err(Error::ConfigInvalid(format!("{n_steps} steps to time {t_final}")));
    }
    let dt = t_final / n_steps as f64;
    let p = u0.geom().len();
    let mut disp = vec![0.0; heads * d * p];
    for (k, &v) in b.iter().enumerate() {
        disp[k * p..(k + 1) * p].fill(dt * v);
    }
    let mut u = u0.data().to_vec();
    for _ in 0..n_steps {
        u = warp_forward(&u, &disp, u0.channels(), heads, u0.geom());
    }
    Field::new(u0.geom().clone(), u0.channels(), u)
}
