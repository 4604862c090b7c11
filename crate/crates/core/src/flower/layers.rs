use alloc::format;
use alloc::vec::Vec;

use super::params::{FlowerBlockParams, SelfwarpParams};
use super::DisplacementSet;
use crate::diff::{Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::grid::{Field, Geometry};
use crate::scalar::Scalar;

/// Tape handles of one warp layer's weights.
#[derive(Clone, Copy, Debug)]
pub struct SelfwarpVars {
    pub v: Var,
    pub vb: Var,
    pub g_w1: Var,
    pub g_b1: Var,
    pub g_w2: Var,
    pub g_b2: Var,
    pub heads: usize,
}

/// Tape handles of one block's weights.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub warp: SelfwarpVars,
    pub idproj_w: Var,
    pub idproj_b: Var,
    pub gamma: Var,
    pub beta: Var,
    pub groups: usize,
}

/// Output of a recorded warp layer together with its displacement field.
#[derive(Clone, Copy, Debug)]
pub struct WarpOutput {
    pub out: Var,
    pub disp: Var,
}

/// Records `Selfwarp[x]`.
///
/// With `warp == false` the heads are not resampled, which turns the
/// layer into the pointwise value map `V x + Vb`.
pub fn record_selfwarp<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &SelfwarpVars,
    geom: &Geometry,
    warp: bool,
) -> Result<WarpOutput> {
    let v = tape.matmul_pointwise(p.v, Some(p.vb), x)?;
    let hidden = tape.matmul_pointwise(p.g_w1, Some(p.g_b1), x)?;
    let hidden = tape.gelu(hidden);
    let disp = tape.matmul_pointwise(p.g_w2, Some(p.g_b2), hidden)?;
    let out = if warp { tape.warp(v, disp, p.heads, geom)? } else { v };
    Ok(WarpOutput { out, disp })
}

/// Records `GELU(Norm(Selfwarp[x] + IdProj[x]))`.
pub fn record_block<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &BlockVars,
    geom: &Geometry,
    warp: bool,
) -> Result<WarpOutput> {
    let w = record_selfwarp(tape, x, &p.warp, geom, warp)?;
    let id = tape.matmul_pointwise(p.idproj_w, Some(p.idproj_b), x)?;
    let pre = tape.add(w.out, id)?;
    let normed = tape.groupnorm(pre, p.gamma, p.beta, p.groups)?;
    Ok(WarpOutput {
        out: tape.gelu(normed),
        disp: w.disp,
    })
}

fn leaf<T: Scalar>(tape: &mut Tape<T>, t: &Tensor<T>, grad: bool) -> Result<Var> {
    tape.leaf(t.shape(), t.data().to_vec(), grad)
}

impl<T: Scalar> SelfwarpParams<T> {
    pub fn register(&self, tape: &mut Tape<T>, grad: bool) -> Result<SelfwarpVars> {
        Ok(SelfwarpVars {
            v: leaf(tape, &self.v, grad)?,
            vb: leaf(tape, &self.vb, grad)?,
            g_w1: leaf(tape, &self.g_w1, grad)?,
            g_b1: leaf(tape, &self.g_b1, grad)?,
            g_w2: leaf(tape, &self.g_w2, grad)?,
            g_b2: leaf(tape, &self.g_b2, grad)?,
            heads: self.heads,
        })
    }
}

impl<T: Scalar> FlowerBlockParams<T> {
    pub fn register(&self, tape: &mut Tape<T>, grad: bool) -> Result<BlockVars> {
        Ok(BlockVars {
            warp: self.warp.register(tape, grad)?,
            idproj_w: leaf(tape, &self.idproj_w, grad)?,
            idproj_b: leaf(tape, &self.idproj_b, grad)?,
            gamma: leaf(tape, &self.gamma, grad)?,
            beta: leaf(tape, &self.beta, grad)?,
            groups: self.groups,
        })
    }
}

fn check_input<T: Scalar>(u: &Field<T>, c_in: usize, op: &'static str) -> Result<()> {
    if u.channels() != c_in {
        return Err(shape_err(op, format!("input has {} channels, layer expects {c_in}", u.channels())));
    }
    if !u.is_finite() {
        return Err(shape_err(op, "input contains non-finite values"));
    }
    Ok(())
}

fn to_field<T: Scalar>(tape: &Tape<T>, v: Var, geom: &Geometry) -> Result<Field<T>> {
    Field::new(geom.clone(), tape.shape(v)[0], tape.value(v).to_vec())
}

/// Multihead pullback of `u`'s value projection along displacements
/// predicted pointwise from `u`. Boundary handling follows `u.geom().bc()`.
pub fn selfwarp<T: Scalar>(u: &Field<T>, p: &SelfwarpParams<T>) -> Result<Field<T>> {
    check_input(u, p.c_in(), "selfwarp")?;
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, false)?;
    let x = tape.constant(&u.tensor_shape(), u.data().to_vec())?;
    let w = record_selfwarp(&mut tape, x, &vars, u.geom(), true)?;
    to_field(&tape, w.out, u.geom())
}

/// The displacement fields `g[u]` a warp layer would apply to `u`.
pub fn selfwarp_displacements<T: Scalar>(u: &Field<T>, p: &SelfwarpParams<T>) -> Result<DisplacementSet<T>> {
    check_input(u, p.c_in(), "selfwarp")?;
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, false)?;
    let x = tape.constant(&u.tensor_shape(), u.data().to_vec())?;
    let w = record_selfwarp(&mut tape, x, &vars, u.geom(), true)?;
    DisplacementSet::new(p.heads, u.geom().clone(), tape.value(w.disp).to_vec())
}

/// One residual warp block applied to `u`.
pub fn flower_block<T: Scalar>(u: &Field<T>, p: &FlowerBlockParams<T>) -> Result<Field<T>> {
    check_input(u, p.warp.c_in(), "flower_block")?;
    if p.idproj_w.shape() != p.warp.v.shape() {
        return Err(shape_err(
            "flower_block",
            format!("IdProj {:?} vs value map {:?}", p.idproj_w.shape(), p.warp.v.shape()),
        ));
    }
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, false)?;
    let x = tape.constant(&u.tensor_shape(), u.data().to_vec())?;
    let b = record_block(&mut tape, x, &vars, u.geom(), true)?;
    to_field(&tape, b.out, u.geom())
}

/// Splits a `[H * C_h, N...]` field into per-head fields.
pub fn split_heads<T: Scalar>(f: &Field<T>, heads: usize) -> Result<Vec<Field<T>>> {
    if heads == 0 || !f.channels().is_multiple_of(heads) {
        return Err(shape_err("split_heads", format!("{} channels into {heads} heads", f.channels())));
    }
    let ch = f.channels() / heads;
    let n = f.geom().len();
    (0..heads)
        .map(|h| Field::new(f.geom().clone(), ch, f.data()[h * ch * n..(h + 1) * ch * n].to_vec()))
        .collect()
}
