use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::diff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::flower::{selfwarp, SelfwarpParams};
use crate::grid::{Field, Geometry, MAX_DIM};

/// A convolution rewritten as a multihead warp: one head per kernel tap,
/// each with a fixed displacement and fixed pointwise mixing weights.
///
/// Applying it computes `out(x) = Σ_o k[o] f(x - o h)` over tap offsets `o`
/// measured from the kernel centre, i.e. a discrete convolution, with the
/// input field's boundary rule.
#[derive(Clone, Debug)]
pub struct ConvWarp {
    channels: usize,
    extents: Vec<usize>,
    /// `[C, C, taps]`, taps row-major over the extents.
    kernel: Vec<f64>,
}

/// Builds the warp form of `kernel`, laid out `[C, C, k_1, ..., k_d]`.
pub fn conv_as_warp(kernel: &[f64], shape: &[usize]) -> Result<ConvWarp> {
    if shape.len() < 3 || shape.len() > 2 + MAX_DIM || shape[0] != shape[1] || shape[0] == 0 {
        return Err(shape_err("conv_as_warp", format!("kernel shape {shape:?}, expected [C, C, k...]")));
    }
    if let Some(&k) = shape[2..].iter().find(|&&k| k % 2 == 0) {
        return Err(Error::EvenKernel(k));
    }
    if kernel.len() != shape.iter().product::<usize>() {
        return Err(shape_err("conv_as_warp", format!("{} values for shape {shape:?}", kernel.len())));
    }
    Ok(ConvWarp {
        channels: shape[0],
        extents: shape[2..].to_vec(),
        kernel: kernel.to_vec(),
    })
}

impl ConvWarp {
    pub fn heads(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    /// Offset of tap `h` from the kernel centre, in cells.
    pub fn offset(&self, h: usize) -> [i64; MAX_DIM] {
        let mut o = [0i64; MAX_DIM];
        let mut rem = h;
        for a in (0..self.dim()).rev() {
            let k = self.extents[a];
            o[a] = (rem % k) as i64 - (k as i64 - 1) / 2;
            rem /= k;
        }
        o
    }

    /// Warp parameters on `geom`: value rows `V[h C + co, ci] = k[co, ci, h]`
    /// and a displacement network whose output is the constant `-offset(h) * spacing`.
    pub fn selfwarp_params(&self, geom: &Geometry) -> Result<SelfwarpParams<f64>> {
        let d = self.dim();
        if geom.dim() != d {
            return Err(shape_err("conv_as_warp", format!("{d}D kernel on a {}D grid", geom.dim())));
        }
        let c = self.channels;
        let heads = self.heads();
        let mut v = vec![0.0; heads * c * c];
        for co in 0..c {
            for ci in 0..c {
                for h in 0..heads {
                    v[(h * c + co) * c + ci] = self.kernel[(co * c + ci) * heads + h];
                }
            }
        }
        let mut b2 = vec![0.0; heads * d];
        for h in 0..heads {
            let o = self.offset(h);
            for a in 0..d {
                b2[h * d + a] = -(o[a] as f64) * geom.spacing(a);
            }
        }
        fixed_warp(v, vec![0.0; heads * c], c, heads, b2)
    }

    /// Applies the operator to a `C`-channel field.
    pub fn apply(&self, f: &Field<f64>) -> Result<Field<f64>> {
        if f.channels() != self.channels {
            return Err(shape_err(
                "conv_as_warp",
                format!("{} channels, kernel has {}", f.channels(), self.channels),
            ));
        }
        let p = self.selfwarp_params(f.geom())?;
        sum_heads(&selfwarp(f, &p)?, self.heads())
    }
}

/// A warp layer with value map `(v, vb)` and heads displaced by the
/// constants `disp` (`[H d]`, physical units), independent of the input.
pub(super) fn fixed_warp(v: Vec<f64>, vb: Vec<f64>, c_in: usize, heads: usize, disp: Vec<f64>) -> Result<SelfwarpParams<f64>> {
    let c_out = vb.len();
    let hd = disp.len();
    Ok(SelfwarpParams {
        v: Tensor::new(&[c_out, c_in], v)?,
        vb: Tensor::new(&[c_out], vb)?,
        g_w1: Tensor::zeros(&[c_in, c_in]),
        g_b1: Tensor::zeros(&[c_in]),
        g_w2: Tensor::zeros(&[hd, c_in]),
        g_b2: Tensor::new(&[hd], disp)?,
        heads,
    })
}

/// Sums a `[H C, N...]` field over heads.
pub(super) fn sum_heads(f: &Field<f64>, heads: usize) -> Result<Field<f64>> {
    let c = f.channels() / heads;
    let n = f.geom().len();
    let mut out = vec![0.0; c * n];
    for h in 0..heads {
        for (o, v) in out.iter_mut().zip(&f.data()[h * c * n..(h + 1) * c * n]) {
            *o += v;
        }
    }
    Field::new(f.geom().clone(), c, out)
}
