use alloc::format;

use crate::diff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::grid::Field;
use crate::scalar::Scalar;

/// Guard added to each channel's variance.
pub const VRMSE_EPS: f64 = 1e-7;

/// Variance-scaled RMSE: per channel `sqrt(mse / (var(truth) + ε))`,
/// averaged over channels. Accumulated in double precision.
pub fn vrmse<T: Scalar>(pred: &Field<T>, truth: &Field<T>) -> Result<f64> {
    if pred.channels() != truth.channels() || pred.geom().shape() != truth.geom().shape() {
        return Err(shape_err(
            "vrmse",
            format!("prediction {:?} vs truth {:?}", pred.tensor_shape(), truth.tensor_shape()),
        ));
    }
    let c = truth.channels();
    let n = truth.geom().len() as f64;
    let mut total = 0.0;
    for ch in 0..c {
        let (p, t) = (pred.channel(ch), truth.channel(ch));
        let mean = t.iter().map(|v| v.f64()).sum::<f64>() / n;
        let var = t.iter().map(|v| sq(v.f64() - mean)).sum::<f64>() / n;
        let mse = p.iter().zip(t).map(|(a, b)| sq(a.f64() - b.f64())).sum::<f64>() / n;
        total += libm::sqrt(mse / (var + VRMSE_EPS));
    }
    Ok(total / c as f64)
}

/// Records [`vrmse`] on a tape; `pred` and `truth` are `[C, N...]` vars.
pub fn record_vrmse<T: Scalar>(tape: &mut Tape<T>, pred: Var, truth: Var) -> Result<Var> {
    let diff = tape.sub(pred, truth)?;
    let sq = tape.mul(diff, diff)?;
    let mse = tape.reduce_mean(sq);
    let var = tape.reduce_var(truth);
    let var = tape.add_const(var, T::of(VRMSE_EPS));
    let ratio = tape.div(mse, var)?;
    let r = tape.sqrt(ratio);
    Ok(tape.mean(r))
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}
