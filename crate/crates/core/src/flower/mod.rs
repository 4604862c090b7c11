//! Multihead warp layers, the residual warp block and the multiscale
//! U-Net that composes them.
//!
//! A warp layer reads its value projection at displaced coordinates
//! `x + g_h(u(x))`, one displacement per head, with `g` a pointwise MLP.
//! Because `g` has no spatial receptive field, all spatial mixing in a block
//! comes from the resampling itself.

mod config;
mod layers;
mod net;
mod params;

use alloc::format;
use alloc::vec::Vec;

pub use config::FlowerConfig;
pub use layers::{
    flower_block, record_block, record_selfwarp, selfwarp, selfwarp_displacements, split_heads, BlockVars,
    SelfwarpVars, WarpOutput,
};
pub use net::{
    extract_displacements, flower_forward, flower_forward_pointwise, record_flower, register_params, ForwardOptions,
    ParamVars, Recorded,
};
pub use params::{
    affine_count, block_ids, count_params, param_specs, FlowerBlockParams, FlowerParams, Init, ParamSpec,
    SelfwarpParams,
};

use crate::error::{shape_err, Result};
use crate::grid::Geometry;
use crate::scalar::Scalar;

/// Per-head displacement fields, layout `[H, d, N...]`, physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementSet<T> {
    heads: usize,
    geom: Geometry,
    data: Vec<T>,
}

impl<T: Scalar> DisplacementSet<T> {
    pub fn new(heads: usize, geom: Geometry, data: Vec<T>) -> Result<Self> {
        let need = heads * geom.dim() * geom.len();
        if heads == 0 || data.len() != need {
            return Err(shape_err(
                "displacements",
                format!("{} values for {heads} heads on {:?}", data.len(), geom.shape()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(shape_err("displacements", "non-finite displacement"));
        }
        Ok(Self { heads, geom, data })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.geom.dim()
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// `[H, d, N_1, ..., N_d]`.
    pub fn shape(&self) -> Vec<usize> {
        let mut s = alloc::vec![self.heads, self.dim()];
        s.extend_from_slice(self.geom.shape());
        s
    }

    /// Component `axis` of head `h`, one value per node.
    pub fn component(&self, h: usize, axis: usize) -> &[T] {
        let n = self.geom.len();
        let off = (h * self.dim() + axis) * n;
        &self.data[off..off + n]
    }
}
