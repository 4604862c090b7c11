use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// AdamW hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Moment accumulators, one pair per named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub hyper: AdamW,
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new<'a>(hyper: AdamW, params: impl IntoIterator<Item = (&'a String, &'a Tensor<T>)>) -> Self
    where
        T: 'a,
    {
        let mut m = BTreeMap::new();
        for (name, t) in params {
            m.insert(name.clone(), alloc::vec![T::zero(); t.len()]);
        }
        Self {
            hyper,
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One AdamW update with bias correction. Weight decay is decoupled and
/// applied first: `p ← p - lr wd p`, then `p ← p - lr m̂ / (sqrt(v̂) + eps)`.
///
/// Any non-finite gradient aborts the step before anything is modified.
pub fn adamw_step<'a, T: Scalar + 'a>(
    params: impl IntoIterator<Item = (&'a String, &'a mut Tensor<T>)>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut OptimState<T>,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let h = state.hyper;
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - libm::pow(h.beta1, t as f64);
    let bc2 = 1.0 - libm::pow(h.beta2, t as f64);
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - h.beta1), T::of(1.0 - h.beta2));
    let decay = T::of(1.0 - lr * h.weight_decay);
    let step = T::of(lr / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    let eps = T::of(h.eps);
    for (name, p) in params {
        let Some(g) = grads.get(name) else { continue };
        let (Some(m), Some(v)) = (state.m.get_mut(name), state.v.get_mut(name)) else {
            return Err(Error::ConfigInvalid(format!("optimizer has no state for `{name}`")));
        };
        if g.len() != p.len() || m.len() != p.len() {
            return Err(Error::ConfigInvalid(format!("gradient of `{name}` has {} entries", g.len())));
        }
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *pi *= decay;
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            *pi -= step * *mi / ((*vi * inv_bc2).sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}

/// Linear warmup followed by cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub lr_peak: f64,
}

impl Schedule {
    pub fn new(total_steps: usize, warmup_steps: usize, lr_peak: f64) -> Result<Self> {
        if !(0 < warmup_steps && warmup_steps < total_steps) || !(lr_peak > 0.0 && lr_peak.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "schedule needs 0 < warmup ({warmup_steps}) < total ({total_steps}) and lr > 0 ({lr_peak})"
            )));
        }
        Ok(Self {
            total_steps,
            warmup_steps,
            lr_peak,
        })
    }
}

pub fn lr_at(step: usize, s: &Schedule) -> f64 {
    if step < s.warmup_steps {
        return s.lr_peak * (step + 1) as f64 / s.warmup_steps as f64;
    }
    let span = (s.total_steps - s.warmup_steps) as f64;
    let phase = ((step - s.warmup_steps) as f64 / span).min(1.0);
    s.lr_peak * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * phase))
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Vec<T>>, max_norm: f64) -> f64 {
    let sq: f64 = grads.values().flatten().map(|g| g.f64() * g.f64()).sum();
    let norm = libm::sqrt(sq);
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.values_mut().flatten() {
            *g *= s;
        }
    }
    norm
}
