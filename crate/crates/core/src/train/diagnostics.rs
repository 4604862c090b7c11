use alloc::format;
use alloc::vec::Vec;

use super::model::Model;
use crate::dataset::TrajectoryDataset;
use crate::error::{shape_err, Result};
use crate::exec::Executor;
use crate::flower::{extract_displacements, DisplacementSet};
use crate::scalar::Scalar;

/// Head displacements averaged with weights `‖V^(h)‖_F`, the Frobenius
/// norm of each head's rows of the block's value map. Returns `[d, N]`.
pub fn weighted_displacement<T: Scalar>(model: &Model<T>, block: &str, disp: &DisplacementSet<T>) -> Result<Vec<f64>> {
    let v = model
        .params
        .get(&format!("{block}.warp.V"))
        .ok_or_else(|| crate::Error::UnknownBlock(block.into()))?;
    let heads = disp.heads();
    let rows = v.shape()[0] / heads;
    let cols = v.shape()[1];
    let weights: Vec<f64> = (0..heads)
        .map(|h| {
            let s: f64 = v.data()[h * rows * cols..(h + 1) * rows * cols].iter().map(|x| x.f64() * x.f64()).sum();
            libm::sqrt(s)
        })
        .collect();
    let wsum: f64 = weights.iter().sum();
    let (d, n) = (disp.dim(), disp.geom().len());
    let mut out = alloc::vec![0.0; d * n];
    for (h, w) in weights.iter().enumerate() {
        for a in 0..d {
            for (o, x) in out[a * n..(a + 1) * n].iter_mut().zip(disp.component(h, a)) {
                *o += w / wsum.max(f64::MIN_POSITIVE) * x.f64();
            }
        }
    }
    Ok(out)
}

/// Mean cosine similarity between the weighted displacement of `block`
/// and the fixed direction `reference`, over every node of the first
/// window of each trajectory in `data`. Nodes with zero displacement count as 0.
pub fn displacement_alignment<T: Scalar, E: Executor>(
    exec: &E,
    model: &Model<T>,
    data: &TrajectoryDataset,
    block: &str,
    reference: &[f64],
) -> Result<f64> {
    let d = data.geom().dim();
    if reference.len() != d {
        return Err(shape_err("displacement_alignment", format!("{}D reference on a {d}D grid", reference.len())));
    }
    let rnorm = libm::sqrt(reference.iter().map(|x| x * x).sum());
    let per = exec.map(data.n_traj(), |i| -> Result<(f64, usize)> {
        let (x, _) = data.window(i, 0)?;
        let x = model.norm.forward(&x.cast::<T>());
        let disp = extract_displacements(&x, &model.params, block)?;
        let w = weighted_displacement(model, block, &disp)?;
        let n = disp.geom().len();
        let mut total = 0.0;
        for j in 0..n {
            let (mut dot, mut nn) = (0.0, 0.0);
            for a in 0..d {
                dot += w[a * n + j] * reference[a];
                nn += w[a * n + j] * w[a * n + j];
            }
            if nn > 0.0 {
                total += dot / (libm::sqrt(nn) * rnorm);
            }
        }
        Ok((total, n))
    });
    let (mut sum, mut count) = (0.0, 0usize);
    for r in per {
        let (s, n) = r?;
        sum += s;
        count += n;
    }
    Ok(sum / count.max(1) as f64)
}
