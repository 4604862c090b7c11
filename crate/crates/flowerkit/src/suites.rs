//! Property suites for the reference solvers, each measured against an
//! independent oracle (brute-force sums, Newton iterations, analytic
//! solutions, or a second solver).

use std::f64::consts::PI;

use flowerkit_core::grid::{interpolate, Boundary, Field, Geometry};
use flowerkit_core::refsolve::{
    characteristic_map, characteristics_solve, conv_as_warp, eikonal_solve, fv_burgers_solve, gt_fixed_point,
    gt_taylor2, kinetic_cascade, ray_trace, shock_time, ConstantSpeed, FluxSpec, SineSpeed, WaveSpeed,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Characteristics,
    Taylor,
    Conv,
    Kinetic,
    Rays,
    Eikonal,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Characteristics,
        Suite::Taylor,
        Suite::Conv,
        Suite::Kinetic,
        Suite::Rays,
        Suite::Eikonal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Characteristics => "characteristics",
            Suite::Taylor => "taylor",
            Suite::Conv => "conv",
            Suite::Kinetic => "kinetic",
            Suite::Rays => "rays",
            Suite::Eikonal => "eikonal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
            Bound::Within(lo, hi) => (lo..=hi).contains(&v),
        }
    }

    pub fn describe(self) -> String {
        match self {
            Bound::AtMost(b) => format!("<= {b:e}"),
            Bound::AtLeast(b) => format!(">= {b}"),
            Bound::Within(lo, hi) => format!("in [{lo}, {hi}]"),
        }
    }
}

/// One measured quantity and the bound it must satisfy.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, bound: Bound) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.bound.holds(self.value)
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    match suite {
        Suite::Characteristics => characteristics(),
        Suite::Taylor => taylor(),
        Suite::Conv => conv(),
        Suite::Kinetic => kinetic(),
        Suite::Rays => rays(),
        Suite::Eikonal => eikonal(),
    }
}

fn line(n: usize) -> Geometry {
    Geometry::unit(&[n], Boundary::Periodic).expect("valid line")
}

fn sine(n: usize, amp: f64) -> Field<f64> {
    Field::from_fn(line(n), 1, |_, x| amp * (2.0 * PI * x[0]).sin())
}

/// Exact cell averages of `amp sin(2πx)`.
fn sine_avg(n: usize, amp: f64) -> Field<f64> {
    let h = 1.0 / n as f64;
    let data = (0..n)
        .map(|i| {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            amp * ((2.0 * PI * a).cos() - (2.0 * PI * b).cos()) / (2.0 * PI * h)
        })
        .collect();
    Field::new(line(n), 1, data).expect("sized")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn centres(g: &Geometry) -> Vec<f64> {
    (0..g.len()).map(|i| g.center(0, i)).collect()
}

/// Newton's method on `y + t B(y) = x`, `B` the periodic piecewise-linear
/// interpolant of `vals` on cell centres.
pub fn newton_inverse(vals: &[f64], t: f64, x: f64) -> f64 {
    let n = vals.len();
    let h = 1.0 / n as f64;
    let eval = |y: f64| {
        let p = y / h - 0.5;
        let i = p.floor();
        let f = p - i;
        let i0 = (i as i64).rem_euclid(n as i64) as usize;
        let i1 = (i0 + 1) % n;
        (vals[i0] * (1.0 - f) + vals[i1] * f, (vals[i1] - vals[i0]) / h)
    };
    let mut y = x;
    for _ in 0..60 {
        let (b, db) = eval(y);
        let step = (y + t * b - x) / (1.0 + t * db);
        y -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    y
}

fn characteristics() -> Result<Vec<Check>> {
    let spec = FluxSpec::burgers();
    let u0 = sine(4096, 0.2);
    let ts = shock_time(&u0, &spec)?;
    let t = 0.5 * ts;
    let u = characteristics_solve(&u0, &spec, t)?;
    let phi = characteristic_map(&u0, &spec, t)?;
    let along = interpolate(&u, &phi, Boundary::Periodic)?;
    let constancy = max_abs_diff(&along, u0.data());

    let b = Field::from_fn(line(200), 1, |_, x| 0.3 * (2.0 * PI * x[0]).sin());
    let xs: Vec<f64> = (0..57).map(|k| 0.013 + k as f64 / 57.0).collect();
    let y = gt_fixed_point(&b, 0.2, &xs)?;
    let newton = xs
        .iter()
        .zip(&y)
        .map(|(&x, &yk)| (yk - newton_inverse(b.data(), 0.2, x)).abs())
        .fold(0.0, f64::max);

    let coarse_u0 = sine(512, 0.2);
    let t_fv = 0.25 * shock_time(&coarse_u0, &spec)?;
    let exact = characteristics_solve(&coarse_u0, &spec, t_fv)?;
    let fine = fv_burgers_solve(&sine_avg(4096, 0.2), t_fv, 0.4)?;
    let coarse: Vec<f64> = fine.data().chunks(8).map(|c| c.iter().sum::<f64>() / 8.0).collect();
    let l2 = (exact.data().iter().zip(&coarse).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 512.0).sqrt();

    Ok(vec![
        Check::new("constancy along characteristics (max abs)", constancy, Bound::AtMost(1e-6)),
        Check::new("fixed point vs Newton (max abs)", newton, Bound::AtMost(1e-10)),
        Check::new("characteristics vs finite volume, 512 cells (L2)", l2, Bound::AtMost(2e-3)),
    ])
}

/// `max |G_fixed_point - G_taylor2|` over the grid nodes at times
/// `fractions * t_shock` on a 4096-cell sine.
pub fn taylor_gaps(fractions: &[f64]) -> Result<Vec<f64>> {
    let spec = FluxSpec::burgers();
    let u0 = sine(4096, 0.2);
    let ts = shock_time(&u0, &spec)?;
    let x = centres(u0.geom());
    let b = spec.velocity_field(&u0)?;
    fractions
        .iter()
        .map(|f| {
            let fp = gt_fixed_point(&b, f * ts, &x)?;
            let ty = gt_taylor2(&u0, &spec, f * ts, &x)?;
            Ok(max_abs_diff(&fp, &ty))
        })
        .collect()
}

fn taylor() -> Result<Vec<Check>> {
    let e = taylor_gaps(&[0.2, 0.1, 0.05])?;
    let order = (e[0] / e[2]).log2() / 2.0;
    let mut checks = vec![Check::new("remainder order over t = {0.2, 0.1, 0.05} t_shock", order, Bound::AtLeast(2.5))];
    for (i, w) in e.windows(2).enumerate() {
        checks.push(Check::new(
            format!("halving ratio {}", i + 1),
            w[0] / w[1],
            Bound::Within(6.5, 9.5),
        ));
    }
    Ok(checks)
}

/// `out[co, n] = Σ_{ci, o} k[co, ci, o] f[ci, bc(n - o)]`, straight from
/// the definition.
pub fn brute_conv(f: &Field<f64>, k: &[f64], shape: &[usize]) -> Vec<f64> {
    let g = f.geom();
    let c = shape[0];
    let ext = &shape[2..];
    let taps: usize = ext.iter().product();
    let n = g.len();
    let strides = g.strides();
    let mut out = vec![0.0; c * n];
    for co in 0..c {
        for ci in 0..c {
            for tap in 0..taps {
                let mut off = vec![0i64; ext.len()];
                let mut rem = tap;
                for a in (0..ext.len()).rev() {
                    off[a] = (rem % ext[a]) as i64 - (ext[a] as i64 - 1) / 2;
                    rem /= ext[a];
                }
                let w = k[(co * c + ci) * taps + tap];
                for flat in 0..n {
                    let idx = g.unravel(flat);
                    let mut src = 0;
                    for a in 0..ext.len() {
                        src += g.bc().index(idx[a] as i64 - off[a], g.shape()[a]) * strides[a];
                    }
                    out[co * n + flat] += w * f.data()[ci * n + src];
                }
            }
        }
    }
    out
}

/// Worst error of `conv_as_warp` against [`brute_conv`] over `trials`
/// random kernels of spatial size `k x k` on a 16x16 grid.
pub fn conv_worst_error(k: usize, trials: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bcs = [Boundary::Periodic, Boundary::Clamp, Boundary::Reflect];
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let c = rng.gen_range(1..=3);
        let g = Geometry::unit(&[16, 16], bcs[trial % 3])?;
        let f = Field::from_fn(g, c, |_, _| rng.gen_range(-1.0..1.0));
        let shape = [c, c, k, k];
        let kern: Vec<f64> = (0..c * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = conv_as_warp(&kern, &shape)?.apply(&f)?;
        worst = worst.max(max_abs_diff(out.data(), &brute_conv(&f, &kern, &shape)));
    }
    Ok(worst)
}

fn conv() -> Result<Vec<Check>> {
    [1usize, 3, 5]
        .iter()
        .map(|&k| {
            Ok(Check::new(
                format!("{k}x{k} kernels, 20 trials (max abs)"),
                conv_worst_error(k, 20, 100 + k as u64)?,
                Bound::AtMost(1e-12),
            ))
        })
        .collect()
}

/// Max error of the streaming cascade against the exact translate of a
/// unit sine at `t = 0.3`.
pub fn cascade_error(n: usize, steps: usize) -> Result<f64> {
    let u0 = sine(n, 1.0);
    let t = 0.3;
    let u = kinetic_cascade(&u0, 1, &[1.0], steps, t)?;
    let exact: Vec<f64> = centres(u0.geom()).iter().map(|x| (2.0 * PI * (x + t)).sin()).collect();
    Ok(max_abs_diff(u.data(), &exact))
}

/// Difference between a whole-cell cascade and the exact roll.
pub fn cascade_shift_error() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Geometry::unit(&[16, 16], Boundary::Periodic)?;
    let u0 = Field::from_fn(g, 2, |_, _| rng.gen_range(-1.0..1.0));
    let b = [1.0, 0.0, 0.0, -1.0];
    let u = kinetic_cascade(&u0, 2, &b, 5, 5.0 / 16.0)?;
    let n = 256;
    let r0 = Field::new(u0.geom().clone(), 1, u0.data()[..n].to_vec())?.roll(&[-5, 0]);
    let r1 = Field::new(u0.geom().clone(), 1, u0.data()[n..].to_vec())?.roll(&[0, 5]);
    Ok(max_abs_diff(&u.data()[..n], r0.data()).max(max_abs_diff(&u.data()[n..], r1.data())))
}

fn kinetic() -> Result<Vec<Check>> {
    // the Courant fraction is held fixed while the step count doubles
    let runs = [(64, 10), (128, 20), (256, 40)];
    let e = runs
        .iter()
        .map(|&(n, s)| cascade_error(n, s))
        .collect::<Result<Vec<_>>>()?;
    let mut checks: Vec<Check> = e
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            Check::new(
                format!("order in dt, steps {} -> {}", runs[i].1, runs[i + 1].1),
                (w[0] / w[1]).log2(),
                Bound::Within(0.8, 1.5),
            )
        })
        .collect();
    checks.push(Check::new("whole-cell shift (max abs)", cascade_shift_error()?, Bound::AtMost(0.0)));
    Ok(checks)
}

fn straight_deviation(c0: f64) -> Result<f64> {
    let c = ConstantSpeed::new(2, c0)?;
    let (y, eta) = ([0.1, 0.2], [0.6, 0.8]);
    let p = ray_trace(&c, &y, &eta, 1.0, 1e-2, None)?;
    Ok(p.states
        .iter()
        .map(|s| {
            let dx = s.x[0] - (y[0] + c0 * s.t * eta[0]);
            let dy = s.x[1] - (y[1] + c0 * s.t * eta[1]);
            dx.hypot(dy)
        })
        .fold(0.0, f64::max))
}

fn rays() -> Result<Vec<Check>> {
    let c = SineSpeed::new(2, 1.0, 0.3, 1.0, 0)?;
    let mut residual: f64 = 0.0;
    for k in 0..8 {
        let th = k as f64 * PI / 4.0 + 0.1;
        let p = ray_trace(&c, &[0.3, 0.5], &[th.cos(), th.sin()], 1.0, 1e-3, None)?;
        residual = residual.max(p.speed_residual);
    }
    Ok(vec![
        Check::new("c = 1 straight-ray deviation", straight_deviation(1.0)?, Bound::AtMost(1e-10)),
        Check::new("c = 2 straight-ray deviation", straight_deviation(2.0)?, Bound::AtMost(1e-10)),
        Check::new("speed residual, c = 1 + 0.3 sin(2 pi x1), dt = 1e-3", residual, Bound::AtMost(1e-8)),
    ])
}

/// Max `|tau - |x - y| / c0|` in grid spacings on 128².
pub fn eikonal_constant_error(c0: f64) -> Result<f64> {
    let g = Geometry::unit(&[128, 128], Boundary::Clamp)?;
    let y = [0.4, 0.55];
    let tau = eikonal_solve(&ConstantSpeed::new(2, c0)?, &g, &y)?;
    let mut worst: f64 = 0.0;
    for flat in 0..g.len() {
        let idx = g.unravel(flat);
        let r = (g.center(0, idx[0]) - y[0]).hypot(g.center(1, idx[1]) - y[1]);
        worst = worst.max((tau.data()[flat] - r / c0).abs());
    }
    Ok(worst / g.spacing(0))
}

/// Worst eikonal/ray arrival-time disagreement, as a distance in grid
/// spacings, over 16 rays reaching `t = 0.25` on 128².
pub fn eikonal_ray_gap() -> Result<f64> {
    let g = Geometry::unit(&[128, 128], Boundary::Clamp)?;
    let c = SineSpeed::new(2, 1.0, 0.3, 1.0, 0)?;
    let y = [0.5, 0.5];
    let tau = eikonal_solve(&c, &g, &y)?;
    let h = g.spacing(0);
    let mut worst: f64 = 0.0;
    for k in 0..16 {
        let th = 2.0 * PI * k as f64 / 16.0;
        let p = ray_trace(&c, &y, &[th.cos(), th.sin()], 0.25, 1e-3, Some(&g))?;
        let end = p.last();
        let at = interpolate(&tau, &end.x, Boundary::Clamp)?[0];
        worst = worst.max((at - end.t).abs() * c.c(&end.x) / h);
    }
    Ok(worst)
}

fn eikonal() -> Result<Vec<Check>> {
    Ok(vec![
        Check::new("c = 1 vs distance (spacings)", eikonal_constant_error(1.0)?, Bound::AtMost(2.0)),
        Check::new("c = 2 vs distance / 2 (spacings)", eikonal_constant_error(2.0)?, Bound::AtMost(2.0)),
        Check::new("eikonal vs ray arrival times (spacings)", eikonal_ray_gap()?, Bound::AtMost(3.0)),
    ])
}
