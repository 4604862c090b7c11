//! Throughput of a warp layer and the full network across resolutions.

use std::time::Instant;

use flowerkit_core::flower::{flower_forward, FlowerConfig, FlowerParams, SelfwarpParams};
use flowerkit_core::grid::{Field, Geometry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub shape: Vec<usize>,
    pub pixels: usize,
    /// Median seconds per warp-layer forward pass.
    pub selfwarp_secs: f64,
    /// Median seconds per network forward pass.
    pub forward_secs: f64,
}

impl BenchRow {
    pub fn selfwarp_sps(&self) -> f64 {
        1.0 / self.selfwarp_secs
    }

    pub fn forward_sps(&self) -> f64 {
        1.0 / self.forward_secs
    }
}

/// Least-squares line `y = a + b x` and its coefficient of determination.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r2: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    LinearFit { intercept, slope, r2 }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn time(warmup: usize, iters: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    for _ in 0..warmup {
        f()?;
    }
    let mut t = Vec::with_capacity(iters.max(1));
    for _ in 0..iters.max(1) {
        let s = Instant::now();
        f()?;
        t.push(s.elapsed().as_secs_f64());
    }
    Ok(median(t))
}

fn random_field(geom: &Geometry, c: usize, rng: &mut ChaCha8Rng) -> Field<f32> {
    let data = (0..c * geom.len()).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Field::new(geom.clone(), c, data).expect("sized to geometry")
}

/// A warp layer with non-zero displacements, so the timing includes the
/// interpolation rather than the on-node fast path.
pub fn bench_selfwarp_params(cfg: &FlowerConfig, seed: u64) -> Result<SelfwarpParams<f32>> {
    let mut p = SelfwarpParams::<f32>::init(cfg.c_lift, cfg.c_lift, cfg.heads, cfg.dim, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for x in p.g_w2.data_mut() {
        *x = rng.gen_range(-0.05..0.05);
    }
    Ok(p)
}

/// Times a warp layer of width `c_lift` and the full network at each shape.
pub fn run_bench(
    cfg: &FlowerConfig,
    shapes: &[Vec<usize>],
    warmup: usize,
    iters: usize,
    seed: u64,
    with_forward: bool,
) -> Result<Vec<BenchRow>> {
    let warp = bench_selfwarp_params(cfg, seed)?;
    let net = FlowerParams::<f32>::init(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for shape in shapes {
        cfg.check_shape(shape)?;
        let geom = Geometry::unit(shape, cfg.bc)?;
        let u = random_field(&geom, cfg.c_lift, &mut rng);
        let selfwarp_secs = time(warmup, iters, || {
            flowerkit_core::flower::selfwarp(&u, &warp)?;
            Ok(())
        })?;
        let forward_secs = if with_forward {
            let x = random_field(&geom, cfg.in_channels(), &mut rng);
            time(warmup, iters, || {
                flower_forward(&x, &net)?;
                Ok(())
            })?
        } else {
            f64::NAN
        };
        rows.push(BenchRow {
            shape: shape.clone(),
            pixels: geom.len(),
            selfwarp_secs,
            forward_secs,
        });
    }
    Ok(rows)
}
