use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ic::{trajectory_seed, BandLimited};
use super::{Family, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::exec::{Executor, Serial};
use crate::grid::{Boundary, Field, Geometry, MAX_DIM};
use crate::refsolve::{characteristics_solve, directions, kinetic_cascade, shock_time, FluxSpec};

/// Fraction of the shock time a Burgers dataset may span.
pub const SHOCK_HORIZON_FRACTION: f64 = 0.8;

/// Generator knobs. Each family reads the subset it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyParams {
    /// Advection velocity, or the Burgers flux direction.
    pub velocity: Vec<f64>,
    /// Scale of the initial condition (unit variance before scaling).
    pub amplitude: f64,
    /// Amplitude of the sinusoidal part of a variable velocity field.
    pub swirl: f64,
    /// Time between stored frames.
    pub dt: f64,
    /// Highest wavenumber per axis in the initial condition.
    pub modes: usize,
    /// Velocity nodes of the streaming family.
    pub heads: usize,
    /// Streaming speed.
    pub speed: f64,
    /// Integrator steps per frame (ODE tracing and streaming updates).
    pub substeps: usize,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            velocity: Vec::new(),
            amplitude: 1.0,
            swirl: 0.5,
            dt: 0.05,
            modes: 4,
            heads: 4,
            speed: 0.5,
            substeps: 4,
        }
    }
}

fn bad(family: Family, detail: impl Into<String>) -> Error {
    Error::InvalidFamilyParams {
        family: family.name(),
        detail: detail.into(),
    }
}

fn velocity(family: Family, p: &FamilyParams, dim: usize, default: &[f64]) -> Result<[f64; MAX_DIM]> {
    let v = if p.velocity.is_empty() { default } else { &p.velocity[..] };
    if v.len() != dim || v.iter().any(|x| !x.is_finite()) {
        return Err(bad(family, format!("velocity {v:?} for a {dim}D grid")));
    }
    let mut out = [0.0; MAX_DIM];
    out[..dim].copy_from_slice(v);
    Ok(out)
}

struct Plan {
    family: Family,
    params: FamilyParams,
    geom: Geometry,
    channels: usize,
    frames: usize,
    vel: [f64; MAX_DIM],
    coefficients: Vec<(String, String)>,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    parts.join(",")
}

fn plan(family: Family, p: &FamilyParams, n_frames: usize, shape: &[usize]) -> Result<Plan> {
    let geom = Geometry::unit(shape, Boundary::Periodic).map_err(|e| bad(family, e.to_string()))?;
    let d = geom.dim();
    if !(p.dt > 0.0 && p.dt.is_finite()) {
        return Err(bad(family, format!("dt = {}", p.dt)));
    }
    if p.modes == 0 || !(p.amplitude.is_finite()) {
        return Err(bad(family, format!("{} modes at amplitude {}", p.modes, p.amplitude)));
    }
    if n_frames < super::HISTORY + 1 {
        return Err(bad(family, format!("{n_frames} frames; a window needs {}", super::HISTORY + 1)));
    }
    let mut coefficients = alloc::vec![
        ("dt".to_string(), format!("{}", p.dt)),
        ("modes".to_string(), format!("{}", p.modes)),
        ("amplitude".to_string(), format!("{}", p.amplitude)),
    ];
    let mut channels = 1;
    let mut vel = [0.0; MAX_DIM];
    match family {
        Family::AdvectionConst => {
            vel = velocity(family, p, d, &[0.0; MAX_DIM][..d])?;
            coefficients.push(("velocity".into(), fmt_vec(&vel[..d])));
        }
        Family::AdvectionVar => {
            vel = velocity(family, p, d, &[0.0; MAX_DIM][..d])?;
            if p.substeps == 0 || !p.swirl.is_finite() {
                return Err(bad(family, "need substeps > 0 and finite swirl"));
            }
            coefficients.push(("velocity".into(), fmt_vec(&vel[..d])));
            coefficients.push(("swirl".into(), format!("{}", p.swirl)));
            coefficients.push(("substeps".into(), format!("{}", p.substeps)));
        }
        Family::Burgers1d => {
            if d != 1 {
                return Err(bad(family, format!("{d}D grid")));
            }
            vel[0] = 1.0;
        }
        Family::Burgers2dAxis => {
            if d != 2 {
                return Err(bad(family, format!("{d}D grid")));
            }
            vel = velocity(family, p, d, &[1.0, 0.0])?;
            if vel[0] == 0.0 && vel[1] == 0.0 {
                return Err(bad(family, "flux direction is zero"));
            }
            coefficients.push(("direction".into(), fmt_vec(&vel[..d])));
        }
        Family::KineticStream => {
            if d != 2 || p.heads == 0 || p.substeps == 0 || !p.speed.is_finite() {
                return Err(bad(family, format!("{d}D grid, {} heads, {} substeps", p.heads, p.substeps)));
            }
            channels = p.heads;
            coefficients.push(("heads".into(), format!("{}", p.heads)));
            coefficients.push(("speed".into(), format!("{}", p.speed)));
            coefficients.push(("substeps".into(), format!("{}", p.substeps)));
        }
        Family::Custom => return Err(bad(family, "custom datasets are loaded from files, not generated")),
    }
    // Files store coefficients keyed and sorted; keep memory in the same order.
    coefficients.sort();
    Ok(Plan {
        family,
        params: p.clone(),
        geom,
        channels,
        frames: n_frames,
        vel,
        coefficients,
    })
}

fn push_frame(out: &mut Vec<f32>, vals: &[f64]) {
    out.extend(vals.iter().map(|&v| v as f32));
}

/// `v(x)_a = v0_a + swirl · sin(2π x_{a+1})`, axes cyclic.
fn swirl_velocity(v0: &[f64; MAX_DIM], swirl: f64, d: usize, x: &[f64; MAX_DIM]) -> [f64; MAX_DIM] {
    let mut v = *v0;
    for a in 0..d {
        v[a] += swirl * libm::sin(2.0 * core::f64::consts::PI * x[(a + 1) % d]);
    }
    v
}

fn generate_one(plan: &Plan, seed: u64) -> Result<Vec<f32>> {
    let p = &plan.params;
    let geom = &plan.geom;
    let d = geom.dim();
    let n = geom.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(plan.frames * plan.channels * n);
    let scaled = |f: Field<f64>| f.map(|v| v * p.amplitude);
    match plan.family {
        Family::AdvectionConst => {
            let ic = BandLimited::sample(d, p.modes, &mut rng);
            let mut cells = [0.0; MAX_DIM];
            for (a, c) in cells.iter_mut().enumerate().take(d) {
                *c = p.dt * plan.vel[a] / geom.spacing(a);
            }
            let mut shift = [0.0; MAX_DIM];
            for k in 0..plan.frames {
                for a in 0..d {
                    shift[a] = k as f64 * cells[a];
                }
                let vals = ic.on_grid_shifted(geom, &shift[..d]);
                push_frame(&mut out, &vals.iter().map(|v| v * p.amplitude).collect::<Vec<_>>());
            }
        }
        Family::AdvectionVar => {
            let ic = BandLimited::sample(d, p.modes, &mut rng);
            // feet of the backward characteristics, advanced one frame at a time
            let mut feet: Vec<[f64; MAX_DIM]> = (0..n)
                .map(|flat| {
                    let idx = geom.unravel(flat);
                    let mut x = [0.0; MAX_DIM];
                    for a in 0..d {
                        x[a] = geom.center(a, idx[a]);
                    }
                    x
                })
                .collect();
            let h = -p.dt / p.substeps as f64;
            let f = |x: &[f64; MAX_DIM]| swirl_velocity(&plan.vel, p.swirl, d, x);
            for k in 0..plan.frames {
                if k > 0 {
                    for x in &mut feet {
                        for _ in 0..p.substeps {
                            *x = rk4(*x, h, d, &f);
                        }
                    }
                }
                let vals: Vec<f64> = feet.iter().map(|x| p.amplitude * ic.eval(&x[..d], geom.extent())).collect();
                push_frame(&mut out, &vals);
            }
        }
        Family::Burgers1d | Family::Burgers2dAxis => {
            let spec = if plan.family == Family::Burgers1d {
                FluxSpec::burgers()
            } else {
                FluxSpec::burgers_along(&plan.vel[..2])?
            };
            let u0 = scaled(BandLimited::sample(d, p.modes, &mut rng).on_grid(geom));
            let t_shock = shock_time(&u0, &spec)?;
            let horizon = (plan.frames - 1) as f64 * p.dt;
            if horizon >= SHOCK_HORIZON_FRACTION * t_shock {
                return Err(Error::ShockWithinHorizon { horizon, t_shock });
            }
            push_frame(&mut out, u0.data());
            for k in 1..plan.frames {
                let u = characteristics_solve(&u0, &spec, k as f64 * p.dt)?;
                push_frame(&mut out, u.data());
            }
        }
        Family::KineticStream => {
            let heads = p.heads;
            let mut data = Vec::with_capacity(heads * n);
            for _ in 0..heads {
                let ic = BandLimited::sample(d, p.modes, &mut rng).on_grid(geom);
                data.extend(ic.data().iter().map(|v| v * p.amplitude));
            }
            let b: Vec<f64> = directions(heads).iter().flat_map(|e| [p.speed * e[0], p.speed * e[1]]).collect();
            let mut u = Field::new(geom.clone(), heads, data)?;
            push_frame(&mut out, u.data());
            for _ in 1..plan.frames {
                u = kinetic_cascade(&u, heads, &b, p.substeps, p.dt)?;
                push_frame(&mut out, u.data());
            }
        }
        Family::Custom => unreachable!("rejected while planning"),
    }
    Ok(out)
}

fn rk4(x: [f64; MAX_DIM], h: f64, d: usize, f: &impl Fn(&[f64; MAX_DIM]) -> [f64; MAX_DIM]) -> [f64; MAX_DIM] {
    let add = |a: &[f64; MAX_DIM], k: &[f64; MAX_DIM], s: f64| {
        let mut o = *a;
        for i in 0..d {
            o[i] += s * k[i];
        }
        o
    };
    let k1 = f(&x);
    let k2 = f(&add(&x, &k1, 0.5 * h));
    let k3 = f(&add(&x, &k2, 0.5 * h));
    let k4 = f(&add(&x, &k3, h));
    let mut o = x;
    for i in 0..d {
        o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    o
}

/// Generates `n_traj` trajectories of `n_frames` frames on a unit periodic
/// grid of `shape`. Trajectory `i` depends only on `(family, params, seed, i)`.
pub fn gen_dataset(
    family: Family,
    params: &FamilyParams,
    n_traj: usize,
    n_frames: usize,
    shape: &[usize],
    seed: u64,
) -> Result<TrajectoryDataset> {
    gen_dataset_with(&Serial, family, params, n_traj, n_frames, shape, seed)
}

/// [`gen_dataset`] with trajectories spread over `exec`.
pub fn gen_dataset_with<E: Executor>(
    exec: &E,
    family: Family,
    params: &FamilyParams,
    n_traj: usize,
    n_frames: usize,
    shape: &[usize],
    seed: u64,
) -> Result<TrajectoryDataset> {
    let plan = plan(family, params, n_frames, shape)?;
    let trajs = exec
        .map(n_traj, |i| generate_one(&plan, trajectory_seed(seed, i)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    TrajectoryDataset::new(
        family,
        plan.coefficients.clone(),
        params.dt,
        seed,
        plan.geom.clone(),
        plan.channels,
        n_frames,
        trajs,
    )
}
