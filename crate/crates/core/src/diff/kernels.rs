//! Forward and adjoint kernels behind the tape ops.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::{Boundary, Geometry, Stencil, MAX_DIM};
use crate::scalar::Scalar;

#[inline]
pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    x * T::of(0.5) * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

#[inline]
pub(crate) fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x * T::of(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(0.398_942_280_401_432_7);
    cdf + x * pdf
}

pub(crate) fn groupnorm_forward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    c: usize,
    groups: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let p = x.len() / c;
    let cg = c / groups;
    let count = T::of((cg * p) as f64);
    let eps = T::of(super::tape::GROUPNORM_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut means = Vec::with_capacity(groups);
    let mut rstds = Vec::with_capacity(groups);
    for gi in 0..groups {
        let block = &x[gi * cg * p..(gi + 1) * cg * p];
        let mean = block.iter().copied().sum::<T>() / count;
        let var = block.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / count;
        let rstd = T::one() / (var + eps).sqrt();
        for k in 0..cg {
            let ch = gi * cg + k;
            let (gm, bt) = (gamma[ch], beta[ch]);
            for j in 0..p {
                let idx = ch * p + j;
                y[idx] = gm * ((x[idx] - mean) * rstd) + bt;
            }
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (y, means, rstds)
}

pub(crate) struct GroupNormGrads<T> {
    pub dx: Vec<T>,
    pub dgamma: Vec<T>,
    pub dbeta: Vec<T>,
}

pub(crate) fn groupnorm_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    g: &[T],
    means: &[T],
    rstds: &[T],
    c: usize,
    groups: usize,
) -> GroupNormGrads<T> {
    let p = x.len() / c;
    let cg = c / groups;
    let count = T::of((cg * p) as f64);
    let mut dx = vec![T::zero(); x.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for gi in 0..groups {
        let (mean, rstd) = (means[gi], rstds[gi]);
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for k in 0..cg {
            let ch = gi * cg + k;
            for j in 0..p {
                let idx = ch * p + j;
                let xhat = (x[idx] - mean) * rstd;
                let dxhat = g[idx] * gamma[ch];
                m1 += dxhat;
                m2 += dxhat * xhat;
                dgamma[ch] += g[idx] * xhat;
                dbeta[ch] += g[idx];
            }
        }
        m1 /= count;
        m2 /= count;
        for k in 0..cg {
            let ch = gi * cg + k;
            for j in 0..p {
                let idx = ch * p + j;
                let xhat = (x[idx] - mean) * rstd;
                dx[idx] = rstd * (g[idx] * gamma[ch] - m1 - xhat * m2);
            }
        }
    }
    GroupNormGrads { dx, dgamma, dbeta }
}

/// Stencil for head `h` at node `flat`: the node index plus the displacement
/// converted to index units, split into an integer cell and a fraction so
/// whole-cell displacements stay exact.
#[inline]
fn head_stencil<T: Scalar>(
    disp: &[T],
    h: usize,
    flat: usize,
    geom: &Geometry,
    inv_h: &[T; MAX_DIM],
) -> Stencil<T> {
    let d = geom.dim();
    let p = geom.len();
    let idx = geom.unravel(flat);
    let mut base = [0i64; MAX_DIM];
    let mut frac = [T::one(); MAX_DIM];
    for a in 0..d {
        let delta = disp[(h * d + a) * p + flat] * inv_h[a];
        let (b, f) = crate::grid::split_index(delta);
        base[a] = idx[a] as i64 + b;
        frac[a] = f;
    }
    Stencil::from_split(&base[..d], &frac[..d], geom, geom.bc())
}

fn inverse_spacing<T: Scalar>(geom: &Geometry) -> [T; MAX_DIM] {
    let mut inv = [T::one(); MAX_DIM];
    for (a, v) in inv.iter_mut().enumerate().take(geom.dim()) {
        *v = T::of(1.0 / geom.spacing(a));
    }
    inv
}

pub(crate) fn warp_forward<T: Scalar>(v: &[T], disp: &[T], c: usize, heads: usize, geom: &Geometry) -> Vec<T> {
    let p = geom.len();
    let ch = c / heads;
    let inv_h = inverse_spacing::<T>(geom);
    let mut y = vec![T::zero(); c * p];
    for h in 0..heads {
        for flat in 0..p {
            let st = head_stencil(disp, h, flat, geom, &inv_h);
            for k in 0..ch {
                let chan = h * ch + k;
                y[chan * p + flat] = st.sample(&v[chan * p..(chan + 1) * p]);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn warp_backward<T: Scalar>(
    v: &[T],
    disp: &[T],
    g: &[T],
    c: usize,
    heads: usize,
    geom: &Geometry,
    mut dv: Option<&mut [T]>,
    mut dd: Option<&mut [T]>,
) {
    let p = geom.len();
    let d = geom.dim();
    let ch = c / heads;
    let inv_h = inverse_spacing::<T>(geom);
    for h in 0..heads {
        for flat in 0..p {
            let st = head_stencil(disp, h, flat, geom, &inv_h);
            let mut acc = [T::zero(); MAX_DIM];
            for k in 0..ch {
                let chan = h * ch + k;
                let gv = g[chan * p + flat];
                if let Some(dv) = dv.as_deref_mut() {
                    st.scatter(&mut dv[chan * p..(chan + 1) * p], gv);
                }
                if dd.is_some() {
                    let df = st.sample_dfrac(&v[chan * p..(chan + 1) * p]);
                    for a in 0..d {
                        acc[a] += gv * df[a];
                    }
                }
            }
            if let Some(dd) = dd.as_deref_mut() {
                for a in 0..d {
                    dd[(h * d + a) * p + flat] += acc[a] * inv_h[a];
                }
            }
        }
    }
}

/// Feeds the integer interpolation cell of every warp query to `mix`.
pub(crate) fn warp_cells<T: Scalar>(disp: &[T], heads: usize, geom: &Geometry, mix: &mut impl FnMut(u64)) {
    let d = geom.dim();
    let p = geom.len();
    let inv_h = inverse_spacing::<T>(geom);
    for h in 0..heads {
        for a in 0..d {
            for flat in 0..p {
                let (b, _) = crate::grid::split_index(disp[(h * d + a) * p + flat] * inv_h[a]);
                mix(b as u64);
            }
        }
    }
}

/// For every (tap, output node) of the kernel-3 stride-2 convolution, the
/// input node it reads, or `None` for a zero-padded tap.
fn down_table(geom: &Geometry, out_geom: &Geometry) -> Vec<Option<usize>> {
    let d = geom.dim();
    let taps = 3usize.pow(d as u32);
    let p_out = out_geom.len();
    let strides = geom.strides();
    let circular = geom.bc() == Boundary::Periodic;
    let mut table = vec![None; taps * p_out];
    for t in 0..taps {
        let mut k = [0usize; MAX_DIM];
        let mut r = t;
        for a in (0..d).rev() {
            k[a] = r % 3;
            r /= 3;
        }
        'out: for o in 0..p_out {
            let oi = out_geom.unravel(o);
            let mut flat = 0;
            for a in 0..d {
                let n = geom.shape()[a] as i64;
                let mut i = 2 * oi[a] as i64 + k[a] as i64 - 1;
                if circular {
                    i = i.rem_euclid(n);
                } else if i < 0 || i >= n {
                    continue 'out;
                }
                flat += i as usize * strides[a];
            }
            table[t * p_out + o] = Some(flat);
        }
    }
    table
}

fn im2col<T: Scalar>(x: &[T], c_in: usize, p_in: usize, table: &[Option<usize>], taps: usize, p_out: usize) -> Vec<T> {
    let mut cols = vec![T::zero(); c_in * taps * p_out];
    for ci in 0..c_in {
        let xc = &x[ci * p_in..(ci + 1) * p_in];
        for t in 0..taps {
            let row = &mut cols[(ci * taps + t) * p_out..(ci * taps + t + 1) * p_out];
            for (o, src) in table[t * p_out..(t + 1) * p_out].iter().enumerate() {
                if let Some(s) = *src {
                    row[o] = xc[s];
                }
            }
        }
    }
    cols
}

pub(crate) fn conv_down_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    c_in: usize,
    c_out: usize,
    geom: &Geometry,
    out_geom: &Geometry,
) -> Vec<T> {
    let taps = 3usize.pow(geom.dim() as u32);
    let p_out = out_geom.len();
    let table = down_table(geom, out_geom);
    let cols = im2col(x, c_in, geom.len(), &table, taps, p_out);
    let mut y = vec![T::zero(); c_out * p_out];
    for co in 0..c_out {
        y[co * p_out..(co + 1) * p_out].fill(b[co]);
    }
    let k = c_in * taps;
    T::gemm(c_out, k, p_out, T::one(), w, (k, 1), &cols, (p_out, 1), T::one(), &mut y, (p_out, 1));
    y
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn conv_down_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &[T],
    c_in: usize,
    c_out: usize,
    geom: &Geometry,
    out_geom: &Geometry,
    mut dx: Option<Vec<T>>,
    mut dw: Option<Vec<T>>,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let taps = 3usize.pow(geom.dim() as u32);
    let p_in = geom.len();
    let p_out = out_geom.len();
    let k = c_in * taps;
    let table = down_table(geom, out_geom);
    let db: Vec<T> = (0..c_out)
        .map(|co| g[co * p_out..(co + 1) * p_out].iter().copied().sum())
        .collect();
    if let Some(dw) = dw.as_mut() {
        let cols = im2col(x, c_in, p_in, &table, taps, p_out);
        T::gemm(c_out, p_out, k, T::one(), g, (p_out, 1), &cols, (1, p_out), T::one(), dw, (k, 1));
    }
    if let Some(dx) = dx.as_mut() {
        let mut dcols = vec![T::zero(); k * p_out];
        T::gemm(k, c_out, p_out, T::one(), w, (1, k), g, (p_out, 1), T::zero(), &mut dcols, (p_out, 1));
        for ci in 0..c_in {
            let dxc = &mut dx[ci * p_in..(ci + 1) * p_in];
            for t in 0..taps {
                let row = &dcols[(ci * taps + t) * p_out..(ci * taps + t + 1) * p_out];
                for (o, src) in table[t * p_out..(t + 1) * p_out].iter().enumerate() {
                    if let Some(s) = *src {
                        dxc[s] += row[o];
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

/// For every (tap, input node) of the kernel-2 stride-2 transposed
/// convolution, the output node it writes.
fn up_table(geom: &Geometry, out_geom: &Geometry) -> Vec<usize> {
    let d = geom.dim();
    let taps = 1usize << d;
    let p_in = geom.len();
    let strides = out_geom.strides();
    let mut table = vec![0; taps * p_in];
    for t in 0..taps {
        for i in 0..p_in {
            let ii = geom.unravel(i);
            let mut flat = 0;
            for a in 0..d {
                let k = (t >> (d - 1 - a)) & 1;
                flat += (2 * ii[a] + k) * strides[a];
            }
            table[t * p_in + i] = flat;
        }
    }
    table
}

pub(crate) fn conv_up_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    c_in: usize,
    c_out: usize,
    geom: &Geometry,
    out_geom: &Geometry,
) -> Vec<T> {
    let taps = 1usize << geom.dim();
    let p_in = geom.len();
    let p_out = out_geom.len();
    let table = up_table(geom, out_geom);
    let mut y = vec![T::zero(); c_out * p_out];
    let mut tmp = vec![T::zero(); c_out * p_in];
    for t in 0..taps {
        T::gemm(
            c_out,
            c_in,
            p_in,
            T::one(),
            &w[t..],
            (c_in * taps, taps),
            x,
            (p_in, 1),
            T::zero(),
            &mut tmp,
            (p_in, 1),
        );
        let tab = &table[t * p_in..(t + 1) * p_in];
        for co in 0..c_out {
            let yc = &mut y[co * p_out..(co + 1) * p_out];
            for (i, &o) in tab.iter().enumerate() {
                yc[o] = tmp[co * p_in + i] + b[co];
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn conv_up_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    g: &[T],
    c_in: usize,
    c_out: usize,
    geom: &Geometry,
    out_geom: &Geometry,
    mut dx: Option<Vec<T>>,
    mut dw: Option<Vec<T>>,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let taps = 1usize << geom.dim();
    let p_in = geom.len();
    let p_out = out_geom.len();
    let table = up_table(geom, out_geom);
    let db: Vec<T> = (0..c_out)
        .map(|co| g[co * p_out..(co + 1) * p_out].iter().copied().sum())
        .collect();
    let mut gt = vec![T::zero(); c_out * p_in];
    for t in 0..taps {
        let tab = &table[t * p_in..(t + 1) * p_in];
        for co in 0..c_out {
            let gc = &g[co * p_out..(co + 1) * p_out];
            for (i, &o) in tab.iter().enumerate() {
                gt[co * p_in + i] = gc[o];
            }
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                c_in,
                c_out,
                p_in,
                T::one(),
                &w[t..],
                (taps, c_in * taps),
                &gt,
                (p_in, 1),
                T::one(),
                dx,
                (p_in, 1),
            );
        }
        if let Some(dw) = dw.as_mut() {
            T::gemm(
                c_out,
                p_in,
                c_in,
                T::one(),
                &gt,
                (p_in, 1),
                x,
                (1, p_in),
                T::one(),
                &mut dw[t..],
                (c_in * taps, taps),
            );
        }
    }
    (dx, dw, db)
}
