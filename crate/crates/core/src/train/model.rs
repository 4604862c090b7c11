use alloc::format;
use alloc::vec::Vec;

use crate::dataset::TrajectoryDataset;
use crate::error::{shape_err, Result};
use crate::flower::{flower_forward, FlowerParams};
use crate::grid::Field;
use crate::scalar::Scalar;

/// Per-channel standardisation fitted on training data.
///
/// The same statistics apply to every history frame and to the target.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub enabled: bool,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(channels: usize) -> Self {
        Self {
            enabled: false,
            mean: alloc::vec![0.0; channels],
            std: alloc::vec![1.0; channels],
        }
    }

    /// Channel statistics over every frame of every trajectory.
    pub fn fit(data: &TrajectoryDataset) -> Self {
        let c = data.channels();
        let n = data.geom().len();
        let mut sum = alloc::vec![0.0f64; c];
        let mut sq = alloc::vec![0.0f64; c];
        for i in 0..data.n_traj() {
            for (k, chunk) in data.trajectory(i).chunks(n).enumerate() {
                let ch = k % c;
                for &v in chunk {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (data.n_traj() * data.n_frames() * n).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / count - m * m).max(0.0);
                if var > 1e-24 {
                    libm::sqrt(var)
                } else {
                    1.0
                }
            })
            .collect();
        Self {
            enabled: true,
            mean,
            std,
        }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Standardises a stack of frames (channel `k` uses statistics `k mod C`).
    pub fn forward<T: Scalar>(&self, f: &Field<T>) -> Field<T> {
        self.apply(f, |v, m, s| (v - m) / s)
    }

    pub fn inverse<T: Scalar>(&self, f: &Field<T>) -> Field<T> {
        self.apply(f, |v, m, s| v * s + m)
    }

    fn apply<T: Scalar>(&self, f: &Field<T>, op: impl Fn(T, T, T) -> T) -> Field<T> {
        if !self.enabled {
            return f.clone();
        }
        let c = self.channels();
        let mut out = f.clone();
        for k in 0..f.channels() {
            let (m, s) = (T::of(self.mean[k % c]), T::of(self.std[k % c]));
            for v in out.channel_mut(k) {
                *v = op(*v, m, s);
            }
        }
        out
    }
}

/// Anything that maps a 4-frame stack to the next frame.
pub trait Predictor: Sync {
    fn predict(&self, window: &Field<f32>) -> Result<Field<f32>>;
}

/// Repeats the most recent input frame.
#[derive(Clone, Copy, Debug)]
pub struct Persistence {
    pub channels: usize,
}

impl Predictor for Persistence {
    fn predict(&self, window: &Field<f32>) -> Result<Field<f32>> {
        let c = self.channels;
        if c == 0 || !window.channels().is_multiple_of(c) {
            return Err(shape_err("persistence", format!("{} channels in frames of {c}", window.channels())));
        }
        let n = window.geom().len();
        let last = &window.data()[(window.channels() - c) * n..];
        Field::new(window.geom().clone(), c, last.to_vec())
    }
}

/// Trained network weights together with their input statistics.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub params: FlowerParams<T>,
    pub norm: Normalizer,
}

impl<T: Scalar> Predictor for Model<T> {
    fn predict(&self, window: &Field<f32>) -> Result<Field<f32>> {
        let x = self.norm.forward(&window.cast::<T>());
        let y = flower_forward(&x, &self.params)?;
        Ok(self.norm.inverse(&y).cast::<f32>())
    }
}

/// Mean next-step VRMSE of `model` over the windows of `data`, using at
/// most `per_traj` evenly spaced window starts per trajectory.
pub fn evaluate<P: Predictor, E: crate::exec::Executor>(
    exec: &E,
    model: &P,
    data: &TrajectoryDataset,
    per_traj: Option<usize>,
) -> Result<f64> {
    let windows = window_starts(data, per_traj)?;
    let scores = exec.map(windows.len(), |j| {
        let (i, s) = windows[j];
        let (x, y) = data.window(i, s)?;
        super::vrmse(&model.predict(&x)?, &y)
    });
    let mut total = 0.0;
    for s in &scores {
        total += *s.as_ref().map_err(|e| e.clone())?;
    }
    Ok(total / windows.len().max(1) as f64)
}

/// `(trajectory, start)` pairs, `per_traj` evenly spaced starts each.
pub fn window_starts(data: &TrajectoryDataset, per_traj: Option<usize>) -> Result<Vec<(usize, usize)>> {
    let avail = data.windows_per_traj()?;
    let k = per_traj.unwrap_or(avail).clamp(1, avail);
    let mut out = Vec::with_capacity(data.n_traj() * k);
    for i in 0..data.n_traj() {
        for j in 0..k {
            out.push((i, j * avail / k));
        }
    }
    Ok(out)
}

