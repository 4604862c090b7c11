//! End-to-end gradient checks of a whole network against finite
//! differences, and an adjoint test of the grid interpolation.

use flowerkit_core::diff::check::{gradcheck, GradCheckOptions, GradCheckReport, NamedTensor};
use flowerkit_core::diff::{OpKind, Tape, Var};
use flowerkit_core::flower::{record_flower, FlowerConfig, FlowerParams, ForwardOptions, ParamVars};
use flowerkit_core::grid::{interpolate, interpolate_vjp, Boundary, Field, Geometry};
use flowerkit_core::train::record_vrmse;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// What to check and how.
#[derive(Clone, Debug)]
pub struct NetCheck {
    pub cfg: FlowerConfig,
    pub shape: Vec<usize>,
    pub seed: u64,
    /// Probed entries per tensor (`0`: every entry).
    pub max_entries: usize,
    /// `false` replaces every warp by its value map.
    pub warp: bool,
    /// Scale of random values written into the (zero-initialised)
    /// displacement output layers, so that warps are exercised.
    pub displacement_scale: f64,
    /// Adjoint to corrupt deliberately (harness self-test).
    pub fault: Option<OpKind>,
}

impl NetCheck {
    pub fn new(cfg: FlowerConfig, shape: &[usize]) -> Self {
        Self {
            cfg,
            shape: shape.to_vec(),
            seed: 0,
            max_entries: 0,
            warp: true,
            displacement_scale: 0.05,
            fault: None,
        }
    }
}

fn vrmse_loss(
    t: &mut Tape<f64>,
    v: &[Var],
    names: &[String],
    cfg: &FlowerConfig,
    u: &Field<f64>,
    target: &[f64],
    opts: ForwardOptions,
) -> flowerkit_core::Result<Var> {
    let vars = ParamVars::from_pairs(names.iter().cloned().zip(v.iter().copied()));
    let x = t.constant(&u.tensor_shape(), u.data().to_vec())?;
    let rec = record_flower(t, &vars, cfg, x, u.geom(), opts)?;
    let shape = t.shape(rec.out).to_vec();
    let y = t.constant(&shape, target.to_vec())?;
    record_vrmse(t, rec.out, y)
}

/// Per-tensor agreement of reverse-mode gradients of the VRMSE training
/// loss through the full network with central differences.
pub fn network_gradcheck(spec: &NetCheck) -> Result<GradCheckReport> {
    let cfg = &spec.cfg;
    let mut p = FlowerParams::<f64>::init(cfg, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9);
    for (name, t) in p.iter_mut() {
        if name.ends_with("g.w2") || name.ends_with("g.b2") {
            for x in t.data_mut() {
                *x = spec.displacement_scale * rng.gen_range(-1.0..1.0);
            }
        }
    }
    let geom = Geometry::unit(&spec.shape, cfg.bc)?;
    let u = Field::from_fn(geom.clone(), cfg.in_channels(), |_, _| rng.gen_range(-1.0..1.0));
    let target: Vec<f64> = (0..cfg.out_channels * geom.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let names: Vec<String> = p.iter().map(|(n, _)| n.clone()).collect();
    let params: Vec<NamedTensor> = p
        .iter()
        .map(|(n, t)| NamedTensor::new(n.clone(), t.shape(), t.data().to_vec()))
        .collect();
    let opts = ForwardOptions { warp: spec.warp };
    Ok(gradcheck(
        &params,
        |t, v| vrmse_loss(t, v, &names, cfg, &u, &target, opts),
        &GradCheckOptions {
            max_entries: spec.max_entries,
            seed: spec.seed,
            fault: spec.fault,
            ..Default::default()
        },
    )?)
}

/// Outcome of [`interpolate_dot_test`].
#[derive(Clone, Copy, Debug)]
pub struct InterpDot {
    pub forward: f64,
    pub adjoint: f64,
    pub rel: f64,
}

/// `<u, J (df, dq)>` from a five-point directional difference of
/// [`interpolate`] against `<J^T u, (df, dq)>` from [`interpolate_vjp`].
///
/// Queries sit in cell interiors and the probe moves them by at most a few
/// hundredths of a cell, so the interpolant is a polynomial of degree `d`
/// along the probe line and the difference formula is exact.
pub fn interpolate_dot_test(shape: &[usize], channels: usize, m: usize, bc: Boundary, seed: u64) -> Result<InterpDot> {
    let geom = Geometry::unit(shape, bc)?;
    let d = geom.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = Field::from_fn(geom.clone(), channels, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = vec![0.0; d * m];
    for j in 0..m {
        for a in 0..d {
            let cell = rng.gen_range(0..shape[a]) as f64;
            q[a * m + j] = (cell + 0.5 + rng.gen_range(0.1..0.4)) * geom.spacing(a);
        }
    }
    let df: Vec<f64> = (0..f.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dq: Vec<f64> = (0..d * m)
        .map(|i| rng.gen_range(-1.0..1.0) * geom.spacing(i / m))
        .collect();
    let u: Vec<f64> = (0..channels * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let (gf, gq) = interpolate_vjp(&f, &q, bc, &u)?;
    let adjoint = dot(&gf, &df) + dot(&gq, &dq);
    let h = 0.01;
    let probe = |s: f64| -> Result<f64> {
        let fs = Field::new(geom.clone(), channels, f.data().iter().zip(&df).map(|(a, b)| a + s * b).collect())?;
        let qs: Vec<f64> = q.iter().zip(&dq).map(|(a, b)| a + s * b).collect();
        Ok(dot(&interpolate(&fs, &qs, bc)?, &u))
    };
    let forward = (-probe(2.0 * h)? + 8.0 * probe(h)? - 8.0 * probe(-h)? + probe(-2.0 * h)?) / (12.0 * h);
    let rel = (forward - adjoint).abs() / forward.abs().max(adjoint.abs()).max(1e-300);
    Ok(InterpDot { forward, adjoint, rel })
}
