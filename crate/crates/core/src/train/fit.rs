use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metric::record_vrmse;
use super::model::{evaluate, Model, Normalizer};
use super::optim::{adamw_step, clip_global_norm, lr_at, AdamW, OptimState, Schedule};
use crate::dataset::{splitmix64, TrajectoryDataset};
use crate::diff::Tape;
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::flower::{record_flower, register_params, FlowerParams, ForwardOptions};
use crate::grid::Field;
use crate::scalar::Scalar;

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub warmup_epochs: usize,
    pub adamw: AdamW,
    pub clip_norm: f64,
    /// Random window starts drawn per trajectory each epoch (`None`: all).
    pub windows_per_traj: Option<usize>,
    /// Evenly spaced validation windows per trajectory (`None`: all).
    pub valid_windows_per_traj: Option<usize>,
    pub normalize: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr_peak: 1e-3,
            warmup_epochs: 5,
            adamw: AdamW::default(),
            clip_norm: 1.0,
            windows_per_traj: None,
            valid_windows_per_traj: None,
            normalize: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be positive".into()));
        }
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::ConfigInvalid(format!("lr {}", self.lr_peak)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::ConfigInvalid(format!("clip_norm {}", self.clip_norm)));
        }
        if self.windows_per_traj == Some(0) || self.valid_windows_per_traj == Some(0) {
            return Err(Error::ConfigInvalid("window counts must be positive".into()));
        }
        Ok(())
    }
}

/// Source of wall-clock time, in seconds from an arbitrary origin.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that never advances (keeps records reproducible).
#[derive(Clone, Copy, Debug, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// One line of the training log, written after every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub valid_vrmse: f64,
    pub lr: f64,
    pub wall_clock: f64,
    pub seed: u64,
    /// Steps in this epoch whose gradient norm was clipped.
    pub clipped: usize,
    /// Steps in this epoch skipped for non-finite gradients.
    pub skipped: usize,
}

impl TrainRecord {
    /// `key=value` pairs separated by spaces, fixed key order.
    pub fn to_line(&self) -> String {
        format!(
            "epoch={} step={} train_loss={:.9e} valid_vrmse={:.9e} lr={:.6e} wall_clock={:.3} seed={} clipped={} skipped={}",
            self.epoch,
            self.step,
            self.train_loss,
            self.valid_vrmse,
            self.lr,
            self.wall_clock,
            self.seed,
            self.clipped,
            self.skipped
        )
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct TrainOutput<T> {
    pub model: Model<T>,
    pub optim: OptimState<T>,
    pub records: Vec<TrainRecord>,
}

type Grads<T> = BTreeMap<String, Vec<T>>;

/// Loss and parameter gradients of one 4→1 window (already normalised).
pub fn window_gradient<T: Scalar>(p: &FlowerParams<T>, input: &Field<T>, target: &Field<T>) -> Result<(f64, Grads<T>)> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, p, true)?;
    let x = tape.constant(&input.tensor_shape(), input.data().to_vec())?;
    let y = tape.constant(&target.tensor_shape(), target.data().to_vec())?;
    let rec = record_flower(&mut tape, &vars, p.config(), x, input.geom(), ForwardOptions::default())?;
    let loss = record_vrmse(&mut tape, rec.out, y)?;
    let value = tape.value(loss)[0].f64();
    let g = tape.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (name, var) in vars.iter() {
        let len = p.get(name).map_or(0, |t| t.len());
        grads.insert(name.clone(), g.get_or_zero(*var, len));
    }
    Ok((value, grads))
}

fn epoch_windows(data: &TrajectoryDataset, cfg: &TrainConfig, epoch: usize) -> Result<Vec<(usize, usize)>> {
    let avail = data.windows_per_traj()?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ splitmix64(epoch as u64 + 1)));
    let mut out = Vec::new();
    let mut starts: Vec<usize> = (0..avail).collect();
    for i in 0..data.n_traj() {
        match cfg.windows_per_traj {
            Some(k) if k < avail => {
                starts.shuffle(&mut rng);
                out.extend(starts[..k].iter().map(|&s| (i, s)));
                starts.sort_unstable();
            }
            _ => out.extend((0..avail).map(|s| (i, s))),
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

fn steps_per_epoch(data: &TrajectoryDataset, cfg: &TrainConfig) -> Result<usize> {
    let avail = data.windows_per_traj()?;
    let per = cfg.windows_per_traj.map_or(avail, |k| k.min(avail));
    Ok((data.n_traj() * per).div_ceil(cfg.batch_size))
}

/// Supervised 4→1 training with AdamW on the VRMSE loss.
///
/// Windows are shuffled per epoch from `cfg.seed`; each sample is recorded
/// on its own tape (possibly in parallel via `exec`) and gradients are summed
/// in window order, so results do not depend on the executor.
pub fn train_loop<T: Scalar, E: Executor>(
    init: FlowerParams<T>,
    train: &TrajectoryDataset,
    valid: &TrajectoryDataset,
    cfg: &TrainConfig,
    exec: &E,
    clock: &dyn Clock,
    on_record: &mut dyn FnMut(&TrainRecord),
) -> Result<TrainOutput<T>> {
    cfg.validate()?;
    for d in [train, valid] {
        d.windows_per_traj()?;
    }
    let norm = if cfg.normalize { Normalizer::fit(train) } else { Normalizer::identity(train.channels()) };
    let mut model = Model { params: init, norm };
    let mut optim = OptimState::new(cfg.adamw, model.params.iter());
    let mut records = Vec::new();
    if cfg.epochs == 0 {
        return Ok(TrainOutput { model, optim, records });
    }
    let spe = steps_per_epoch(train, cfg)?;
    let total = (cfg.epochs * spe).max(2);
    let warmup = (cfg.warmup_epochs * spe).clamp(1, total - 1);
    let sched = Schedule::new(total, warmup, cfg.lr_peak)?;
    let start = clock.now();
    let mut step = 0usize;
    let mut lr = lr_at(0, &sched);
    for epoch in 0..cfg.epochs {
        let windows = epoch_windows(train, cfg, epoch)?;
        let (mut loss_sum, mut loss_count) = (0.0, 0usize);
        let (mut clipped, mut skipped) = (0, 0);
        for batch in windows.chunks(cfg.batch_size) {
            let params = &model.params;
            let norm = &model.norm;
            let results = exec.map(batch.len(), |j| {
                let (i, s) = batch[j];
                let (x, y) = train.window(i, s)?;
                window_gradient(params, &norm.forward(&x.cast::<T>()), &norm.forward(&y.cast::<T>()))
            });
            let mut acc: Grads<T> = BTreeMap::new();
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                for (name, gv) in g {
                    match acc.get_mut(&name) {
                        Some(a) => a.iter_mut().zip(&gv).for_each(|(a, b)| *a += *b),
                        None => {
                            acc.insert(name, gv);
                        }
                    }
                }
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, loss: batch_loss });
            }
            let inv = T::of(1.0 / batch.len() as f64);
            acc.values_mut().flatten().for_each(|g| *g *= inv);
            if clip_global_norm(&mut acc, cfg.clip_norm) > cfg.clip_norm {
                clipped += 1;
            }
            lr = lr_at(step.min(total), &sched);
            match adamw_step(model.params.iter_mut(), &acc, &mut optim, lr) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient(_)) => skipped += 1,
                Err(e) => return Err(e),
            }
            loss_sum += batch_loss;
            loss_count += 1;
            step += 1;
        }
        let valid_vrmse = evaluate(exec, &model, valid, cfg.valid_windows_per_traj)?;
        let rec = TrainRecord {
            epoch,
            step,
            train_loss: loss_sum / loss_count.max(1) as f64,
            valid_vrmse,
            lr,
            wall_clock: clock.now() - start,
            seed: cfg.seed,
            clipped,
            skipped,
        };
        on_record(&rec);
        records.push(rec);
    }
    Ok(TrainOutput { model, optim, records })
}
