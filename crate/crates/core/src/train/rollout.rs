use alloc::vec::Vec;

use super::model::Predictor;
use super::vrmse;
use crate::dataset::{TrajectoryDataset, HISTORY};
use crate::error::{Error, Result};
use crate::grid::Field;

/// Autoregressive predictions and their errors against the truth.
#[derive(Clone, Debug)]
pub struct RolloutReport {
    pub frames: Vec<Field<f32>>,
    pub vrmse: Vec<f64>,
}

impl RolloutReport {
    /// Mean over steps, the 1:N score.
    pub fn mean(&self) -> f64 {
        self.vrmse.iter().sum::<f64>() / self.vrmse.len().max(1) as f64
    }
}

/// Rolls `model` forward `steps` times from frames `start .. start + 4`
/// of trajectory `traj`, feeding each prediction back as the newest input.
pub fn rollout<P: Predictor>(
    model: &P,
    data: &TrajectoryDataset,
    traj: usize,
    start: usize,
    steps: usize,
) -> Result<RolloutReport> {
    let available = data.n_frames().saturating_sub(start + HISTORY);
    if steps > available {
        return Err(Error::HorizonExceedsTruth { horizon: steps, available });
    }
    let c = data.channels();
    let n = c * data.geom().len();
    let mut window = data.stack(traj, start, HISTORY)?.into_data();
    let mut frames = Vec::with_capacity(steps);
    let mut scores = Vec::with_capacity(steps);
    for k in 0..steps {
        let x = Field::new(data.geom().clone(), HISTORY * c, window.clone())?;
        let y = model.predict(&x)?;
        scores.push(vrmse(&y, &data.frame(traj, start + HISTORY + k))?);
        window.drain(..n);
        window.extend_from_slice(y.data());
        frames.push(y);
    }
    Ok(RolloutReport { frames, vrmse: scores })
}

/// Mean 1:`steps` rollout score over trajectories, each started at frame 0.
pub fn rollout_score<P: Predictor, E: crate::exec::Executor>(
    exec: &E,
    model: &P,
    data: &TrajectoryDataset,
    steps: usize,
) -> Result<f64> {
    let res = exec.map(data.n_traj(), |i| rollout(model, data, i, 0, steps).map(|r| r.mean()));
    let mut total = 0.0;
    for r in res {
        total += r?;
    }
    Ok(total / data.n_traj().max(1) as f64)
}
