use alloc::format;

use crate::error::{Error, Result};
use crate::grid::Boundary;

/// Architecture of a multiscale Flower network.
///
/// Level `l` has width `c_l = 2^l * c_lift`. Every block uses `heads`
/// warp heads and `groups` normalisation groups, so both must divide
/// `c_lift` (and hence every `c_l`).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowerConfig {
    /// Spatial dimension `d`.
    pub dim: usize,
    /// Number of U-Net levels `L`; `1` is the single-scale degenerate case.
    pub levels: usize,
    /// Lift width `c_0`.
    pub c_lift: usize,
    pub heads: usize,
    pub groups: usize,
    /// History frames stacked along the channel axis.
    pub frames: usize,
    /// Physical channels per frame.
    pub phys_channels: usize,
    pub out_channels: usize,
    pub bc: Boundary,
    /// Predict `u_last + Phi[u]` instead of `Phi[u]`.
    pub residual: bool,
}

impl FlowerConfig {
    /// The four-frame next-step configuration with `out_channels` equal to
    /// the physical channel count.
    pub fn next_step(dim: usize, phys_channels: usize, levels: usize, c_lift: usize, heads: usize, groups: usize) -> Self {
        Self {
            dim,
            levels,
            c_lift,
            heads,
            groups,
            frames: 4,
            phys_channels,
            out_channels: phys_channels,
            bc: Boundary::Periodic,
            residual: false,
        }
    }

    /// Benchmark-scale model: lift to 160 channels, four levels, 40 heads,
    /// 40 normalisation groups.
    pub fn tiny(dim: usize, phys_channels: usize) -> Self {
        Self::next_step(dim, phys_channels, 4, 160, 40, 40)
    }

    /// Channels entering the network before coordinate augmentation.
    pub fn in_channels(&self) -> usize {
        self.frames * self.phys_channels
    }

    pub fn width(&self, level: usize) -> usize {
        self.c_lift << level
    }

    /// Input width of the decoder block at `level` (after skip concatenation).
    pub fn decoder_width(&self, level: usize) -> usize {
        if level == self.levels - 1 {
            self.width(level)
        } else {
            2 * self.width(level)
        }
    }

    /// Width entering the final projection.
    pub fn proj_width(&self) -> usize {
        if self.levels == 1 {
            self.c_lift
        } else {
            2 * self.c_lift
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::ConfigInvalid(m));
        if !(1..=3).contains(&self.dim) {
            return bad(format!("dim = {} outside 1..=3", self.dim));
        }
        if self.levels == 0 || self.levels > 8 {
            return bad(format!("levels = {} outside 1..=8", self.levels));
        }
        for (name, v) in [
            ("c_lift", self.c_lift),
            ("heads", self.heads),
            ("groups", self.groups),
            ("frames", self.frames),
            ("phys_channels", self.phys_channels),
            ("out_channels", self.out_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.c_lift.is_multiple_of(self.heads) {
            return bad(format!("heads = {} does not divide c_lift = {}", self.heads, self.c_lift));
        }
        if !self.c_lift.is_multiple_of(self.groups) {
            return bad(format!("groups = {} does not divide c_lift = {}", self.groups, self.c_lift));
        }
        if self.residual && self.out_channels != self.phys_channels {
            return bad(format!(
                "residual prediction needs out_channels = phys_channels ({} vs {})",
                self.out_channels, self.phys_channels
            ));
        }
        Ok(())
    }

    /// Checks that a spatial shape fits this configuration.
    pub fn check_shape(&self, shape: &[usize]) -> Result<()> {
        self.validate()?;
        if shape.len() != self.dim {
            return Err(Error::ConfigInvalid(format!(
                "input has {} spatial axes, config expects {}",
                shape.len(),
                self.dim
            )));
        }
        let divisor = 1usize << (self.levels - 1);
        for (axis, &len) in shape.iter().enumerate() {
            if len % divisor != 0 {
                return Err(Error::ShapeNotDivisible { axis, len, divisor });
            }
        }
        Ok(())
    }
}
