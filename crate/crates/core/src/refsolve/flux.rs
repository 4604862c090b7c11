use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Field, MAX_DIM};

type VecFn = Box<dyn Fn(f64) -> [f64; MAX_DIM] + Send + Sync>;

/// Flux `G` of a scalar conservation law `∂_t u + ∇·G(u) = 0` and its
/// characteristic velocity `A = dG/du`.
pub struct FluxSpec {
    dim: usize,
    g: VecFn,
    a: VecFn,
    a_prime: Option<VecFn>,
}

impl core::fmt::Debug for FluxSpec {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("FluxSpec").field("dim", &self.dim).finish_non_exhaustive()
    }
}

const CHECK_POINTS: usize = 41;
const CHECK_STEP: f64 = 1e-4;
const CHECK_TOL: f64 = 1e-6;

impl FluxSpec {
    /// A user-supplied 1D flux. `a` is checked against a central
    /// difference of `g` on `u ∈ [-2, 2]`.
    pub fn new(g: impl Fn(f64) -> f64 + Send + Sync + 'static, a: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        let spec = Self {
            dim: 1,
            g: Box::new(move |u| [g(u), 0.0, 0.0]),
            a: Box::new(move |u| [a(u), 0.0, 0.0]),
            a_prime: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `G(u) = u²/2` in 1D.
    pub fn burgers() -> Self {
        Self::burgers_along(&[1.0]).expect("unit direction")
    }

    /// Burgers flux along a fixed direction: `G(u) = (u²/2) w`, `A(u) = u w`.
    pub fn burgers_along(w: &[f64]) -> Result<Self> {
        let w = direction(w)?;
        Ok(Self {
            dim: w.1,
            g: Box::new(move |u| scale(w.0, 0.5 * u * u)),
            a: Box::new(move |u| scale(w.0, u)),
            a_prime: Some(Box::new(move |_| w.0)),
        })
    }

    /// Linear advection `G(u) = u v`: characteristics are straight with velocity `v`.
    pub fn linear(v: &[f64]) -> Result<Self> {
        let v = direction(v)?;
        Ok(Self {
            dim: v.1,
            g: Box::new(move |u| scale(v.0, u)),
            a: Box::new(move |_| v.0),
            a_prime: Some(Box::new(|_| [0.0; MAX_DIM])),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn flux(&self, u: f64) -> [f64; MAX_DIM] {
        (self.g)(u)
    }

    pub fn velocity(&self, u: f64) -> [f64; MAX_DIM] {
        (self.a)(u)
    }

    /// `A'(u)`: analytic when known, otherwise a central difference of `A`.
    pub fn velocity_prime(&self, u: f64) -> [f64; MAX_DIM] {
        if let Some(ap) = &self.a_prime {
            return ap(u);
        }
        let h = 1e-5 * u.abs().max(1.0);
        let (p, m) = ((self.a)(u + h), (self.a)(u - h));
        let mut out = [0.0; MAX_DIM];
        for i in 0..self.dim {
            out[i] = (p[i] - m[i]) / (2.0 * h);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        for k in 0..CHECK_POINTS {
            let u = -2.0 + 4.0 * k as f64 / (CHECK_POINTS - 1) as f64;
            let (p, m, a) = ((self.g)(u + CHECK_STEP), (self.g)(u - CHECK_STEP), (self.a)(u));
            for i in 0..self.dim {
                let fd = (p[i] - m[i]) / (2.0 * CHECK_STEP);
                let err = (fd - a[i]).abs() / a[i].abs().max(1.0);
                if !(err <= CHECK_TOL) {
                    return Err(Error::FluxDerivative { at: u, error: err });
                }
            }
        }
        Ok(())
    }

    /// The characteristic velocity field `B = A ∘ u0`, one channel per axis.
    pub fn velocity_field(&self, u0: &Field<f64>) -> Result<Field<f64>> {
        check_scalar(u0, self)?;
        let n = u0.geom().len();
        let d = self.dim;
        let mut data = alloc::vec![0.0; d * n];
        for (j, &u) in u0.data().iter().enumerate() {
            let a = (self.a)(u);
            for i in 0..d {
                data[i * n + j] = a[i];
            }
        }
        Field::new(u0.geom().clone(), d, data)
    }
}

fn direction(w: &[f64]) -> Result<([f64; MAX_DIM], usize)> {
    if w.is_empty() || w.len() > MAX_DIM || w.iter().any(|x| !x.is_finite()) {
        return Err(Error::ConfigInvalid(format!("flux direction {w:?}")));
    }
    let mut out = [0.0; MAX_DIM];
    out[..w.len()].copy_from_slice(w);
    Ok((out, w.len()))
}

fn scale(w: [f64; MAX_DIM], s: f64) -> [f64; MAX_DIM] {
    let mut out = w;
    for x in &mut out {
        *x *= s;
    }
    out
}

pub(super) fn check_scalar(u0: &Field<f64>, spec: &FluxSpec) -> Result<()> {
    if u0.channels() != 1 {
        return Err(crate::error::shape_err("refsolve", format!("{} channels, expected 1", u0.channels())));
    }
    if u0.dim() != spec.dim {
        return Err(crate::error::shape_err(
            "refsolve",
            format!("{}D field with a {}D flux", u0.dim(), spec.dim),
        ));
    }
    Ok(())
}

/// Centred (one-sided at clamped edges) differences of every channel along every axis.
///
/// Returns `[C, d, N]`.
pub(super) fn grid_jacobian(f: &Field<f64>) -> Vec<f64> {
    let geom = f.geom();
    let d = geom.dim();
    let n = geom.len();
    let strides = geom.strides();
    let bc = geom.bc();
    let mut out = alloc::vec![0.0; f.channels() * d * n];
    for c in 0..f.channels() {
        let chan = f.channel(c);
        for flat in 0..n {
            let idx = geom.unravel(flat);
            for a in 0..d {
                let len = geom.shape()[a];
                let base = flat - idx[a] * strides[a];
                let i = idx[a] as i64;
                let (ip, im) = (bc.index(i + 1, len), bc.index(i - 1, len));
                let span = (ip as f64 - im as f64).abs().max(0.0);
                // periodic wrap makes the index difference misleading; the
                // stencil always spans two cells unless an edge is clamped
                let cells = match bc {
                    crate::grid::Boundary::Periodic => 2.0,
                    _ => span,
                };
                let v = if cells == 0.0 {
                    0.0
                } else {
                    (chan[base + ip * strides[a]] - chan[base + im * strides[a]]) / (cells * geom.spacing(a))
                };
                out[(c * d + a) * n + flat] = v;
            }
        }
    }
    out
}
