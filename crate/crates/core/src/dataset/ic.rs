use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::grid::{Field, Geometry, MAX_DIM};

/// A seeded sum of low-frequency sines, `u0(x) = Σ a_k sin(2π k·x + φ_k)`,
/// normalised to unit variance over the periodic cell.
#[derive(Clone, Debug)]
pub struct BandLimited {
    dim: usize,
    modes: Vec<([i64; MAX_DIM], f64, f64)>,
}

impl BandLimited {
    /// All wavevectors with components in `-k_max..=k_max` from one
    /// half-space (so no mode appears twice), excluding zero.
    pub fn sample(dim: usize, k_max: usize, rng: &mut impl Rng) -> Self {
        let k = k_max as i64;
        let mut modes = Vec::new();
        let total = (2 * k + 1).pow(dim as u32);
        for code in 0..total {
            let mut kv = [0i64; MAX_DIM];
            let mut rem = code;
            for a in (0..dim).rev() {
                kv[a] = rem % (2 * k + 1) - k;
                rem /= 2 * k + 1;
            }
            // first nonzero component positive
            match kv[..dim].iter().find(|&&c| c != 0) {
                Some(&c) if c > 0 => {}
                _ => continue,
            }
            let norm = libm::sqrt(kv[..dim].iter().map(|&c| (c * c) as f64).sum());
            let amp = rng.gen_range(0.5..1.0) / norm;
            let phase = rng.gen_range(0.0..2.0 * PI);
            modes.push((kv, amp, phase));
        }
        let var: f64 = modes.iter().map(|m| 0.5 * m.1 * m.1).sum();
        let s = 1.0 / libm::sqrt(var);
        for m in &mut modes {
            m.1 *= s;
        }
        Self { dim, modes }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Value at a physical point of the unit-periodic cell scaled by `extent`.
    pub fn eval(&self, x: &[f64], extent: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|(k, a, phi)| {
                let arg: f64 = (0..self.dim).map(|i| k[i] as f64 * x[i] / extent[i]).sum();
                a * libm::sin(2.0 * PI * arg + phi)
            })
            .sum()
    }

    /// Values at every node translated by `shift` cells, `u0(x - shift h)`.
    ///
    /// Phases are reduced in exact arithmetic on `k (i + 1/2 - s)` whenever
    /// the shift is a whole number of cells, so an integer shift reproduces
    /// a circular roll bit for bit.
    pub fn on_grid_shifted(&self, geom: &Geometry, shift: &[f64]) -> Vec<f64> {
        let n = geom.len();
        let d = self.dim;
        let mut out = Vec::with_capacity(n);
        for flat in 0..n {
            let idx = geom.unravel(flat);
            let mut v = 0.0;
            for (k, a, phi) in &self.modes {
                let mut cycles = 0.0;
                for i in 0..d {
                    let len = geom.shape()[i] as f64;
                    let r = wrap(k[i] as f64 * (idx[i] as f64 + 0.5 - shift[i]), len);
                    cycles += r / len;
                }
                v += a * libm::sin(2.0 * PI * cycles + phi);
            }
            out.push(v);
        }
        out
    }

    pub fn on_grid(&self, geom: &Geometry) -> Field<f64> {
        let zero = [0.0; MAX_DIM];
        Field::new(geom.clone(), 1, self.on_grid_shifted(geom, &zero[..self.dim])).expect("one value per node")
    }
}

/// SplitMix64 finaliser, used to derive per-trajectory seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `index` under `master`.
pub fn trajectory_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

/// `x mod len` in `[0, len)`; exact for the small integers and halves used here.
fn wrap(x: f64, len: f64) -> f64 {
    let r = x % len;
    if r < 0.0 {
        r + len
    } else {
        r
    }
}
