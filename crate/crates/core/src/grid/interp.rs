use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Boundary, Field, Geometry, MAX_DIM};
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;

/// Splits a continuous index-space position into `(base, frac)` with
/// `frac ∈ (0, 1]`.
///
/// A position exactly on a node lands in the cell to its left with
/// `frac = 1`, which fixes the one-sided derivative convention.
#[inline]
pub(crate) fn split<T: Scalar>(p: T) -> (i64, T) {
    let base = p.ceil() - T::one();
    (base.to_i64().unwrap_or(0), p - base)
}

/// The `2^d` neighbours and weights used to sample one query point.
///
/// `lo`/`hi` hold flat-index contributions (`index * stride`) after the
/// boundary rule has mapped them into range.
#[derive(Clone, Copy, Debug)]
pub struct Stencil<T> {
    d: usize,
    lo: [usize; MAX_DIM],
    hi: [usize; MAX_DIM],
    frac: [T; MAX_DIM],
}

impl<T: Scalar> Stencil<T> {
    /// Builds a stencil from integer cell bases and fractions in `(0, 1]`.
    #[inline]
    pub fn from_split(base: &[i64], frac: &[T], geom: &Geometry, bc: Boundary) -> Self {
        let d = geom.dim();
        let strides = geom.strides();
        let shape = geom.shape();
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        let mut fr = [T::one(); MAX_DIM];
        for a in 0..d {
            lo[a] = bc.index(base[a], shape[a]) * strides[a];
            hi[a] = bc.index(base[a] + 1, shape[a]) * strides[a];
            fr[a] = frac[a];
        }
        Self {
            d,
            lo,
            hi,
            frac: fr,
        }
    }

    /// Stencil for a physical coordinate.
    #[inline]
    pub fn from_physical(x: &[T], geom: &Geometry, bc: Boundary) -> Self {
        let d = geom.dim();
        let mut base = [0i64; MAX_DIM];
        let mut frac = [T::one(); MAX_DIM];
        let half = T::of(0.5);
        for a in 0..d {
            let p = x[a] / T::of(geom.spacing(a)) - half;
            let (b, f) = split(p);
            base[a] = b;
            frac[a] = f;
        }
        Self::from_split(&base[..d], &frac[..d], geom, bc)
    }

    /// True when the query coincides with a grid node on every axis.
    #[inline]
    pub fn is_node(&self) -> bool {
        self.frac[..self.d].iter().all(|&f| f == T::one())
    }

    #[inline]
    fn node_offset(&self) -> usize {
        self.hi[..self.d].iter().sum()
    }

    /// Interpolated value of one channel slice.
    ///
    /// Evaluated as nested `hi - (1 - f) (hi - lo)` blends, one axis at a
    /// time, so constants are reproduced exactly and an axis with `f = 1`
    /// contributes its `hi` node without rounding.
    #[inline]
    pub fn sample(&self, chan: &[T]) -> T {
        if self.is_node() {
            return chan[self.node_offset()];
        }
        let mut corners = [T::zero(); 1 << MAX_DIM];
        let n = 1usize << self.d;
        for (mask, c) in corners.iter_mut().enumerate().take(n) {
            let mut off = 0;
            for a in 0..self.d {
                off += if mask >> a & 1 == 1 { self.hi[a] } else { self.lo[a] };
            }
            *c = chan[off];
        }
        // reduce the highest axis bit first: pairs (mask, mask | bit)
        let mut len = n;
        for a in (0..self.d).rev() {
            let half = len / 2;
            let g = T::one() - self.frac[a];
            for m in 0..half {
                let lo = corners[m];
                let hi = corners[m + half];
                corners[m] = hi - g * (hi - lo);
            }
            len = half;
        }
        corners[0]
    }

    /// Derivative of the interpolant with respect to each fractional
    /// coordinate (index units).
    ///
    /// Each component is a weighted sum of `hi - lo` differences along its
    /// axis, so a locally constant field gives exactly zero.
    #[inline]
    pub fn sample_dfrac(&self, chan: &[T]) -> [T; MAX_DIM] {
        let mut out = [T::zero(); MAX_DIM];
        for a in 0..self.d {
            let mut acc = T::zero();
            for mask in 0..(1usize << self.d) {
                if mask >> a & 1 == 1 {
                    continue;
                }
                let mut w = T::one();
                let mut off = 0;
                for b in 0..self.d {
                    if b == a {
                        continue;
                    }
                    if mask >> b & 1 == 1 {
                        w *= self.frac[b];
                        off += self.hi[b];
                    } else {
                        w *= T::one() - self.frac[b];
                        off += self.lo[b];
                    }
                }
                acc += w * (chan[off + self.hi[a]] - chan[off + self.lo[a]]);
            }
            out[a] = acc;
        }
        out
    }

    /// Adds `g * weight` into every neighbour of `chan_grad` (adjoint of
    /// [`Stencil::sample`] with respect to the field values).
    #[inline]
    pub fn scatter(&self, chan_grad: &mut [T], g: T) {
        if self.is_node() {
            chan_grad[self.node_offset()] += g;
            return;
        }
        for mask in 0..(1usize << self.d) {
            let mut w = T::one();
            let mut off = 0;
            for a in 0..self.d {
                if mask >> a & 1 == 1 {
                    w *= self.frac[a];
                    off += self.hi[a];
                } else {
                    w *= T::one() - self.frac[a];
                    off += self.lo[a];
                }
            }
            chan_grad[off] += w * g;
        }
    }
}

fn check_query<T>(field_dim: usize, query: &[T]) -> Result<usize> {
    if !query.len().is_multiple_of(field_dim) {
        return Err(shape_err(
            "interpolate",
            format!("query length {} not a multiple of d = {}", query.len(), field_dim),
        ));
    }
    Ok(query.len() / field_dim)
}

/// Multilinear interpolation of every channel at `M` physical query points.
///
/// `query` is laid out `[d, M]`; the result is `[C, M]`.
pub fn interpolate<T: Scalar>(field: &Field<T>, query: &[T], bc: Boundary) -> Result<Vec<T>> {
    let d = field.dim();
    let m = check_query(d, query)?;
    let c = field.channels();
    let mut out = vec![T::zero(); c * m];
    let mut x = [T::zero(); MAX_DIM];
    for j in 0..m {
        for a in 0..d {
            x[a] = query[a * m + j];
        }
        let st = Stencil::from_physical(&x[..d], field.geom(), bc);
        for ch in 0..c {
            out[ch * m + j] = st.sample(field.channel(ch));
        }
    }
    Ok(out)
}

/// Adjoint of [`interpolate`]: returns `(grad_field [C, N...], grad_query [d, M])`.
///
/// The coordinate gradient is piecewise constant per cell; on a node it
/// uses the cell to the left. Under [`Boundary::Clamp`] it vanishes in the
/// clamped direction.
pub fn interpolate_vjp<T: Scalar>(
    field: &Field<T>,
    query: &[T],
    bc: Boundary,
    upstream: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let d = field.dim();
    let m = check_query(d, query)?;
    let c = field.channels();
    if upstream.len() != c * m {
        return Err(shape_err(
            "interpolate_vjp",
            format!("upstream length {} != {} x {}", upstream.len(), c, m),
        ));
    }
    let n = field.geom().len();
    let mut grad_field = vec![T::zero(); c * n];
    let mut grad_query = vec![T::zero(); d * m];
    let inv_h: Vec<T> = (0..d).map(|a| T::of(1.0 / field.geom().spacing(a))).collect();
    let mut x = [T::zero(); MAX_DIM];
    for j in 0..m {
        for a in 0..d {
            x[a] = query[a * m + j];
        }
        let st = Stencil::from_physical(&x[..d], field.geom(), bc);
        for ch in 0..c {
            let g = upstream[ch * m + j];
            st.scatter(&mut grad_field[ch * n..(ch + 1) * n], g);
            let df = st.sample_dfrac(field.channel(ch));
            for a in 0..d {
                grad_query[a * m + j] += g * df[a] * inv_h[a];
            }
        }
    }
    Ok((grad_field, grad_query))
}
