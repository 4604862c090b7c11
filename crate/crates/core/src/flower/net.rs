use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::layers::{record_block, BlockVars, SelfwarpVars};
use super::params::{block_ids, FlowerParams};
use super::{DisplacementSet, FlowerConfig};
use crate::diff::{Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::grid::{grid_coords, Field, Geometry};
use crate::scalar::Scalar;

/// Tape handles of every network tensor, by name.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    /// Maps names to vars created elsewhere (e.g. by a gradient checker).
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self {
            vars: pairs.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::ParamMismatch {
            missing: alloc::vec![name.to_string()],
            extra: Vec::new(),
        })
    }

    /// `(name, var)` in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    fn block(&self, id: &str, cfg: &FlowerConfig) -> Result<BlockVars> {
        let v = |s: &str| self.get(&format!("{id}.{s}"));
        Ok(BlockVars {
            warp: SelfwarpVars {
                v: v("warp.V")?,
                vb: v("warp.Vb")?,
                g_w1: v("warp.g.w1")?,
                g_b1: v("warp.g.b1")?,
                g_w2: v("warp.g.w2")?,
                g_b2: v("warp.g.b2")?,
                heads: cfg.heads,
            },
            idproj_w: v("idproj.w")?,
            idproj_b: v("idproj.b")?,
            gamma: v("norm.gamma")?,
            beta: v("norm.beta")?,
            groups: cfg.groups,
        })
    }
}

/// Places every parameter on `tape` as a leaf.
pub fn register_params<T: Scalar>(tape: &mut Tape<T>, p: &FlowerParams<T>, grad: bool) -> Result<ParamVars> {
    let mut vars = BTreeMap::new();
    for (name, t) in p.iter() {
        vars.insert(name.clone(), tape.leaf(t.shape(), t.data().to_vec(), grad)?);
    }
    Ok(ParamVars { vars })
}

/// Switches for [`record_flower`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    /// `false` replaces every warp by its pointwise value map.
    pub warp: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { warp: true }
    }
}

/// A recorded forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub out: Var,
    /// `(block id, displacement var, geometry of that level)`.
    pub displacements: Vec<(String, Var, Geometry)>,
}

/// Records the full network on `tape` for an input var of shape
/// `[frames * phys_channels, N...]` laid out on `geom`.
pub fn record_flower<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    cfg: &FlowerConfig,
    input: Var,
    geom: &Geometry,
    opts: ForwardOptions,
) -> Result<Recorded> {
    cfg.check_shape(geom.shape())?;
    let shape = tape.shape(input).to_vec();
    if shape[0] != cfg.in_channels() || shape[1..] != *geom.shape() {
        return Err(shape_err(
            "flower_forward",
            format!("input {shape:?}, config expects {} channels on {:?}", cfg.in_channels(), geom.shape()),
        ));
    }
    let geom0 = geom.with_bc(cfg.bc);
    let mut disps = Vec::new();

    let xi = grid_coords::<T>(&geom0);
    let xi = tape.constant(&xi.tensor_shape(), xi.into_data())?;
    let aug = tape.concat(&[input, xi])?;
    let mut x = tape.matmul_pointwise(vars.get("lift.w")?, Some(vars.get("lift.b")?), aug)?;

    let mut geoms = alloc::vec![geom0.clone()];
    let mut skips = Vec::new();
    for l in 0..cfg.levels - 1 {
        let id = format!("enc{l}");
        skips.push(x);
        let b = record_block(tape, x, &vars.block(&id, cfg)?, &geoms[l], opts.warp)?;
        disps.push((id.clone(), b.disp, geoms[l].clone()));
        let down = tape.conv_strided(
            b.out,
            vars.get(&format!("{id}.down.w"))?,
            vars.get(&format!("{id}.down.b"))?,
            &geoms[l],
        )?;
        x = tape.relu(down);
        let next = geoms[l].rescaled(1, 2)?;
        geoms.push(next);
    }

    let top = cfg.levels - 1;
    let b = record_block(tape, x, &vars.block("bot", cfg)?, &geoms[top], opts.warp)?;
    disps.push(("bot".into(), b.disp, geoms[top].clone()));
    let mut d = b.out;

    for l in (1..cfg.levels).rev() {
        let id = format!("dec{l}");
        let b = record_block(tape, d, &vars.block(&id, cfg)?, &geoms[l], opts.warp)?;
        disps.push((id.clone(), b.disp, geoms[l].clone()));
        let up = tape.conv_transposed(
            b.out,
            vars.get(&format!("{id}.up.w"))?,
            vars.get(&format!("{id}.up.b"))?,
            &geoms[l],
        )?;
        let up = tape.relu(up);
        d = tape.concat(&[up, skips[l - 1]])?;
    }

    let h = tape.matmul_pointwise(vars.get("proj.w1")?, Some(vars.get("proj.b1")?), d)?;
    let h = tape.relu(h);
    let mut out = tape.matmul_pointwise(vars.get("proj.w2")?, Some(vars.get("proj.b2")?), h)?;
    if cfg.residual {
        let last = tape.slice(input, (cfg.frames - 1) * cfg.phys_channels, cfg.phys_channels)?;
        out = tape.add(out, last)?;
    }
    Ok(Recorded {
        out,
        displacements: disps,
    })
}

fn run<T: Scalar>(u_stack: &Field<T>, p: &FlowerParams<T>, opts: ForwardOptions) -> Result<(Tape<T>, Recorded)> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, p, false)?;
    let input = tape.constant(&u_stack.tensor_shape(), u_stack.data().to_vec())?;
    let rec = record_flower(&mut tape, &vars, p.config(), input, u_stack.geom(), opts)?;
    Ok((tape, rec))
}

/// Next-frame prediction from four (or `cfg.frames`) stacked frames.
pub fn flower_forward<T: Scalar>(u_stack: &Field<T>, p: &FlowerParams<T>) -> Result<Field<T>> {
    let (tape, rec) = run(u_stack, p, ForwardOptions::default())?;
    Field::new(u_stack.geom().with_bc(p.config().bc), p.config().out_channels, tape.value(rec.out).to_vec())
}

/// The same network with every warp replaced by its pointwise value map.
pub fn flower_forward_pointwise<T: Scalar>(u_stack: &Field<T>, p: &FlowerParams<T>) -> Result<Field<T>> {
    let (tape, rec) = run(u_stack, p, ForwardOptions { warp: false })?;
    Field::new(u_stack.geom().with_bc(p.config().bc), p.config().out_channels, tape.value(rec.out).to_vec())
}

/// Per-head displacement fields computed at `block_id` during a forward
/// pass on `u_stack`.
pub fn extract_displacements<T: Scalar>(
    u_stack: &Field<T>,
    p: &FlowerParams<T>,
    block_id: &str,
) -> Result<DisplacementSet<T>> {
    if !block_ids(p.config()).iter().any(|b| b == block_id) {
        return Err(Error::UnknownBlock(block_id.to_string()));
    }
    let (tape, rec) = run(u_stack, p, ForwardOptions::default())?;
    let (_, var, geom) = rec
        .displacements
        .iter()
        .find(|(id, _, _)| id == block_id)
        .ok_or_else(|| Error::UnknownBlock(block_id.to_string()))?;
    DisplacementSet::new(p.config().heads, geom.clone(), tape.value(*var).to_vec())
}
