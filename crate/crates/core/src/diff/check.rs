//! Finite-difference oracles for the tape: per-entry gradient checks for
//! named parameter groups and dot-product adjoint tests for single ops.
//!
//! Both run in `f64`. Piecewise-smooth ops (ReLU, interpolation) are only
//! differentiable away from their kinks, so every perturbed evaluation is
//! compared against the unperturbed [`Tape::kink_signature`]; a probe that
//! changes the signature is retried with a smaller step and skipped if it
//! still crosses.
//!
//! A group passes on the vector relative error of its whole gradient. The
//! entrywise maximum is reported too, but for entries many orders of
//! magnitude below the loss it is bounded by the rounding floor of the
//! difference quotient (about `ulp(loss) / step`), not by the adjoint.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{OpKind, Tape, Var};
use crate::error::Result;

/// A named learnable tensor fed to a checked computation.
#[derive(Clone, Debug)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: &[usize], value: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            value,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries whose analytic gradient is at most this are not compared.
    pub min_magnitude: f64,
    /// Upper bound on probed entries per tensor (`0` = all).
    pub max_entries: usize,
    pub seed: u64,
    /// Adjoint to corrupt on purpose (harness self-test).
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            min_magnitude: 1e-8,
            max_entries: 0,
            seed: 0,
            fault: None,
        }
    }
}

/// Agreement between analytic and finite-difference gradients of one tensor.
#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    /// `‖analytic − fd‖₂ / ‖analytic‖₂` over the compared entries.
    pub group_rel: f64,
    /// Largest entrywise `|analytic − fd| / max(|analytic|, |fd|)`.
    pub worst_rel: f64,
    pub worst_index: usize,
    pub compared: usize,
    pub below_magnitude: usize,
    pub kink_skipped: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub loss: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.group_rel.total_cmp(&b.group_rel))
    }

    /// Every group gradient within `tol` (vector relative error).
    pub fn passes(&self, tol: f64) -> bool {
        self.groups.iter().all(|g| g.group_rel <= tol)
    }
}

fn evaluate<F>(params: &[NamedTensor], f: &F, fault: Option<OpKind>) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some(k) = fault {
        tape.inject_fault(k);
    }
    let vars = params
        .iter()
        .map(|p| tape.param(&p.shape, p.value.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    Ok((tape, vars, loss))
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central finite differences, entry by entry.
pub fn gradcheck<F>(params: &[NamedTensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, loss) = evaluate(params, &f, opts.fault)?;
    let base_sig = tape.kink_signature();
    let loss_value = tape.value(loss)[0];
    let grads = tape.backward(loss)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<NamedTensor> = params.to_vec();
    let mut groups = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zero(vars[pi], p.value.len());
        let mut entries: Vec<usize> = (0..p.value.len()).collect();
        if opts.max_entries > 0 && entries.len() > opts.max_entries {
            // partial Fisher-Yates: a seeded random subset
            for i in 0..opts.max_entries {
                let j = rng.gen_range(i..entries.len());
                entries.swap(i, j);
            }
            entries.truncate(opts.max_entries);
            entries.sort_unstable();
        }
        let (mut diff_sq, mut norm_sq) = (0.0f64, 0.0f64);
        let mut report = GroupReport {
            name: p.name.clone(),
            group_rel: 0.0,
            worst_rel: 0.0,
            worst_index: 0,
            compared: 0,
            below_magnitude: 0,
            kink_skipped: 0,
        };
        for &e in &entries {
            let a = analytic[e];
            if a.abs() <= opts.min_magnitude {
                report.below_magnitude += 1;
                continue;
            }
            let mut step = opts.step;
            let mut fd = None;
            for _ in 0..3 {
                let orig = work[pi].value[e];
                work[pi].value[e] = orig + step;
                let (tp, _, lp) = evaluate(&work, &f, None)?;
                work[pi].value[e] = orig - step;
                let (tm, _, lm) = evaluate(&work, &f, None)?;
                work[pi].value[e] = orig;
                if tp.kink_signature() == base_sig && tm.kink_signature() == base_sig {
                    fd = Some((tp.value(lp)[0] - tm.value(lm)[0]) / (2.0 * step));
                    break;
                }
                step *= 0.1;
            }
            let Some(fd) = fd else {
                report.kink_skipped += 1;
                continue;
            };
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            report.compared += 1;
            diff_sq += (a - fd) * (a - fd);
            norm_sq += a * a;
            if rel > report.worst_rel || rel.is_nan() {
                report.worst_rel = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst_index = e;
            }
        }
        report.group_rel = if norm_sq > 0.0 {
            let r = libm::sqrt(diff_sq / norm_sq);
            if r.is_nan() {
                f64::INFINITY
            } else {
                r
            }
        } else {
            0.0
        };
        groups.push(report);
    }
    Ok(GradCheckReport {
        loss: loss_value,
        groups,
    })
}

/// Outcome of [`dot_product_test`].
#[derive(Clone, Copy, Debug)]
pub struct DotTest {
    /// `<u, J delta>` by a fourth-order directional difference.
    pub forward: f64,
    /// `<J^T u, delta>` by reverse mode.
    pub adjoint: f64,
    pub rel: f64,
    pub kink_crossed: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Checks `<u, J delta> = <J^T u, delta>` for the op(s) built by `f` at the
/// point `inputs`, with random `u` and `delta`.
///
/// `J delta` uses the five-point stencil with step `h`, which is exact for
/// polynomials of degree four along the probe line; piecewise-multilinear
/// ops are therefore exact as long as the probe stays inside one cell.
pub fn dot_product_test<F>(inputs: &[NamedTensor], f: F, h: f64, seed: u64) -> Result<DotTest>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|p| tape.param(&p.shape, p.value.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    let sig = tape.kink_signature();
    let out_shape = tape.shape(out).to_vec();
    let u: Vec<f64> = (0..tape.value(out).len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let uv = tape.constant(&out_shape, u.clone())?;
    let prod = tape.mul(out, uv)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;
    let deltas: Vec<Vec<f64>> = inputs
        .iter()
        .map(|p| (0..p.value.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let adjoint: f64 = inputs
        .iter()
        .enumerate()
        .map(|(i, p)| dot(&grads.get_or_zero(vars[i], p.value.len()), &deltas[i]))
        .sum();

    let mut kink_crossed = false;
    let mut probe = |s: f64| -> Result<f64> {
        let shifted: Vec<NamedTensor> = inputs
            .iter()
            .zip(&deltas)
            .map(|(p, d)| NamedTensor {
                name: p.name.clone(),
                shape: p.shape.clone(),
                value: p.value.iter().zip(d).map(|(v, dv)| v + s * dv).collect(),
            })
            .collect();
        let (t, _, o) = evaluate(&shifted, &f, None)?;
        if t.kink_signature() != sig {
            kink_crossed = true;
        }
        Ok(dot(t.value(o), &u))
    };
    let fp2 = probe(2.0 * h)?;
    let fp1 = probe(h)?;
    let fm1 = probe(-h)?;
    let fm2 = probe(-2.0 * h)?;
    let forward = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h);
    let scale = forward.abs().max(adjoint.abs()).max(1e-300);
    Ok(DotTest {
        forward,
        adjoint,
        rel: (forward - adjoint).abs() / scale,
        kink_crossed,
    })
}

/// Random values in `[-1, 1)` (test-input helper).
pub fn random_values(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Random values bounded away from zero, for ops with a kink at the origin.
pub fn random_off_zero(n: usize, margin: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut v = vec![0.0; n];
    for x in v.iter_mut() {
        let m: f64 = rng.gen_range(margin..1.0);
        *x = if rng.gen_bool(0.5) { m } else { -m };
    }
    v
}
