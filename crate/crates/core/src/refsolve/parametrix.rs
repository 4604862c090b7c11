use alloc::format;
use alloc::vec::Vec;

use super::conv::{fixed_warp, sum_heads};
use crate::error::{shape_err, Error, Result};
use crate::flower::{selfwarp, SelfwarpParams};
use crate::grid::{interpolate, Field};

/// `H` equally spaced unit directions `(cos 2πh/H, sin 2πh/H)`.
pub fn directions(heads: usize) -> Vec<[f64; 2]> {
    (0..heads)
        .map(|h| {
            let th = 2.0 * core::f64::consts::PI * h as f64 / heads as f64;
            [libm::cos(th), libm::sin(th)]
        })
        .collect()
}

fn check(u0: &Field<f64>, weights: &[f64]) -> Result<()> {
    if u0.dim() != 2 || u0.channels() != 1 {
        return Err(shape_err(
            "parametrix",
            format!("{}D field with {} channels, expected a 2D scalar", u0.dim(), u0.channels()),
        ));
    }
    if weights.is_empty() {
        return Err(Error::ConfigInvalid("parametrix needs at least one direction".into()));
    }
    Ok(())
}

/// `Σ_h w_h u0(x - c t η_h)` over `weights.len()` equally spaced directions.
pub fn parametrix_superposition(u0: &Field<f64>, c: f64, t: f64, weights: &[f64]) -> Result<Field<f64>> {
    check(u0, weights)?;
    let geom = u0.geom();
    let n = geom.len();
    let mut out = alloc::vec![0.0; n];
    let mut q = alloc::vec![0.0; 2 * n];
    for (eta, &w) in directions(weights.len()).iter().zip(weights) {
        for flat in 0..n {
            let idx = geom.unravel(flat);
            for a in 0..2 {
                q[a * n + flat] = geom.center(a, idx[a]) - c * t * eta[a];
            }
        }
        let vals = interpolate(u0, &q, geom.bc())?;
        for (o, v) in out.iter_mut().zip(vals) {
            *o += w * v;
        }
    }
    Field::new(geom.clone(), 1, out)
}

/// The same superposition as a hand-set warp layer: value map `V = w`,
/// displacements forced to `-c t η_h` through the output bias of `g`.
pub fn parametrix_as_selfwarp(c: f64, t: f64, weights: &[f64]) -> Result<SelfwarpParams<f64>> {
    let heads = weights.len();
    let disp = directions(heads).iter().flat_map(|e| [-c * t * e[0], -c * t * e[1]]).collect();
    fixed_warp(weights.to_vec(), alloc::vec![0.0; heads], 1, heads, disp)
}

/// Applies [`parametrix_as_selfwarp`] and sums the heads.
pub fn parametrix_via_selfwarp(u0: &Field<f64>, c: f64, t: f64, weights: &[f64]) -> Result<Field<f64>> {
    check(u0, weights)?;
    let p = parametrix_as_selfwarp(c, t, weights)?;
    sum_heads(&selfwarp(u0, &p)?, weights.len())
}
