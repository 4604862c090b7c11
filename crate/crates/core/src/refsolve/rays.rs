use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Boundary, Geometry, MAX_DIM};

/// A positive wave speed `c(x)`.
pub trait WaveSpeed {
    fn dim(&self) -> usize;

    fn c(&self, x: &[f64]) -> f64;

    /// `∇ log c`; the default is a central difference.
    fn grad_log_c(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        let mut xp = [0.0; MAX_DIM];
        let d = self.dim();
        xp[..d].copy_from_slice(&x[..d]);
        for a in 0..d {
            let h = 1e-6 * x[a].abs().max(1.0);
            xp[a] = x[a] + h;
            let up = libm::log(self.c(&xp[..d]));
            xp[a] = x[a] - h;
            let dn = libm::log(self.c(&xp[..d]));
            xp[a] = x[a];
            g[a] = (up - dn) / (2.0 * h);
        }
        g
    }

    /// `(c_min, c_max)`.
    fn bounds(&self) -> (f64, f64);
}

/// `c ≡ c0`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantSpeed {
    dim: usize,
    c: f64,
}

impl ConstantSpeed {
    pub fn new(dim: usize, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) || dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidSpeed(format!("constant speed {c} in {dim}D")));
        }
        Ok(Self { dim, c })
    }
}

impl WaveSpeed for ConstantSpeed {
    fn dim(&self) -> usize {
        self.dim
    }

    fn c(&self, _x: &[f64]) -> f64 {
        self.c
    }

    fn grad_log_c(&self, _x: &[f64]) -> [f64; MAX_DIM] {
        [0.0; MAX_DIM]
    }

    fn bounds(&self) -> (f64, f64) {
        (self.c, self.c)
    }
}

/// `c(x) = c0 + amp · sin(2π k x_axis)`.
#[derive(Clone, Copy, Debug)]
pub struct SineSpeed {
    dim: usize,
    c0: f64,
    amp: f64,
    k: f64,
    axis: usize,
}

impl SineSpeed {
    pub fn new(dim: usize, c0: f64, amp: f64, k: f64, axis: usize) -> Result<Self> {
        if axis >= dim || dim > MAX_DIM || !(c0 - amp.abs() > 0.0) || !k.is_finite() {
            return Err(Error::InvalidSpeed(format!(
                "{c0} + {amp} sin(2π {k} x_{axis}) in {dim}D is not bounded away from zero"
            )));
        }
        Ok(Self { dim, c0, amp, k, axis })
    }
}

impl WaveSpeed for SineSpeed {
    fn dim(&self) -> usize {
        self.dim
    }

    fn c(&self, x: &[f64]) -> f64 {
        self.c0 + self.amp * libm::sin(2.0 * core::f64::consts::PI * self.k * x[self.axis])
    }

    fn grad_log_c(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let w = 2.0 * core::f64::consts::PI * self.k;
        let mut g = [0.0; MAX_DIM];
        g[self.axis] = self.amp * w * libm::cos(w * x[self.axis]) / self.c(x);
        g
    }

    fn bounds(&self) -> (f64, f64) {
        (self.c0 - self.amp.abs(), self.c0 + self.amp.abs())
    }
}

/// Position, velocity and time along a ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RayState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

/// A traced ray.
#[derive(Clone, Debug)]
pub struct RayPath {
    pub states: Vec<RayState>,
    /// The ray crossed the edge of a clamped domain and was cut there.
    pub left_domain: bool,
    /// `max_t | |ẋ(t)| - c(x(t)) |` over the stored states.
    pub speed_residual: f64,
}

impl RayPath {
    pub fn last(&self) -> &RayState {
        self.states.last().expect("a path holds at least its start")
    }
}

fn accel(speed: &dyn WaveSpeed, x: &[f64], v: &[f64], out: &mut [f64]) {
    let d = x.len();
    let g = speed.grad_log_c(x);
    let c = speed.c(x);
    let gv: f64 = (0..d).map(|a| g[a] * v[a]).sum();
    for a in 0..d {
        out[a] = 2.0 * gv * v[a] - c * c * g[a];
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// Integrates `ẍ = 2 (∇log c · ẋ) ẋ - c² ∇log c` with classical RK4 from
/// `x(0) = y`, `ẋ(0) = c(y) η`.
///
/// When `domain` is given with a clamped boundary, the path stops at the
/// last state inside `[0, extent]`.
pub fn ray_trace(
    speed: &dyn WaveSpeed,
    y: &[f64],
    eta: &[f64],
    t_max: f64,
    dt: f64,
    domain: Option<&Geometry>,
) -> Result<RayPath> {
    let d = speed.dim();
    if y.len() != d || eta.len() != d {
        return Err(Error::ConfigInvalid(format!("ray in {d}D from {y:?} along {eta:?}")));
    }
    if (norm(eta) - 1.0).abs() > 1e-9 {
        return Err(Error::ConfigInvalid(format!("ray direction {eta:?} is not a unit vector")));
    }
    if !(dt > 0.0 && t_max >= 0.0) {
        return Err(Error::ConfigInvalid(format!("ray step {dt} to time {t_max}")));
    }
    let clamp = domain.filter(|g| g.bc() == Boundary::Clamp);
    let inside = |x: &[f64]| match clamp {
        Some(g) => x.iter().zip(g.extent()).all(|(&p, &e)| (0.0..=e).contains(&p)),
        None => true,
    };

    let c0 = speed.c(y);
    let mut x = y.to_vec();
    let mut v: Vec<f64> = eta.iter().map(|e| c0 * e).collect();
    let mut t = 0.0;
    let mut states = alloc::vec![RayState { x: x.clone(), v: v.clone(), t }];
    let mut residual = (norm(&v) - c0).abs();
    let mut left_domain = false;

    let mut kx = [[0.0; MAX_DIM]; 4];
    let mut kv = [[0.0; MAX_DIM]; 4];
    let mut xs = [0.0; MAX_DIM];
    let mut vs = [0.0; MAX_DIM];
    let steps = libm::ceil(t_max / dt - 1e-9).max(0.0) as usize;
    for step in 0..steps {
        let last = step + 1 == steps;
        let h = if last { t_max - t } else { dt };
        for s in 0..4 {
            let w = match s {
                0 => 0.0,
                3 => h,
                _ => 0.5 * h,
            };
            for a in 0..d {
                let (px, pv) = if s == 0 { (0.0, 0.0) } else { (kx[s - 1][a], kv[s - 1][a]) };
                xs[a] = x[a] + w * px;
                vs[a] = v[a] + w * pv;
            }
            kx[s][..d].copy_from_slice(&vs[..d]);
            accel(speed, &xs[..d], &vs[..d], &mut kv[s][..d]);
        }
        for a in 0..d {
            x[a] += h / 6.0 * (kx[0][a] + 2.0 * kx[1][a] + 2.0 * kx[2][a] + kx[3][a]);
            v[a] += h / 6.0 * (kv[0][a] + 2.0 * kv[1][a] + 2.0 * kv[2][a] + kv[3][a]);
        }
        t = if last { t_max } else { t + h };
        if !inside(&x) {
            left_domain = true;
            break;
        }
        residual = residual.max((norm(&v) - speed.c(&x)).abs());
        states.push(RayState { x: x.clone(), v: v.clone(), t });
    }
    Ok(RayPath {
        states,
        left_domain,
        speed_residual: residual,
    })
}
