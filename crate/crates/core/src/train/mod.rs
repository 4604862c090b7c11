//! Loss, optimiser, schedule, training loop and rollout evaluation.

mod diagnostics;
mod fit;
mod metric;
mod model;
mod optim;
mod rollout;

pub use diagnostics::{displacement_alignment, weighted_displacement};
pub use fit::{train_loop, window_gradient, Clock, NoClock, TrainConfig, TrainOutput, TrainRecord};
pub use metric::{record_vrmse, vrmse, VRMSE_EPS};
pub use model::{evaluate, window_starts, Model, Normalizer, Persistence, Predictor};
pub use optim::{adamw_step, clip_global_norm, lr_at, AdamW, OptimState, Schedule};
pub use rollout::{rollout, rollout_score, RolloutReport};
