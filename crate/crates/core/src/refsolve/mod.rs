//! Reference solvers used as data generators and as oracles.
//!
//! Everything here is deliberately independent of the trained network:
//! conservation laws are solved along characteristics (and, as a second
//! opinion, by finite volumes), wave geometry comes from ray tracing and
//! fast marching, and two analytic constructions show how fixed warp
//! layers reproduce convolutions and quadrature sums exactly.

mod characteristics;
mod conv;
mod eikonal;
mod flux;
mod fv;
mod kinetic;
mod parametrix;
mod rays;

pub use characteristics::{
    characteristic_map, characteristics_solve, gt_fixed_point, gt_taylor2, shock_time, warp_gradient,
    MAX_FIXED_POINT_ITERS, SHOCK_MARGIN,
};
pub use conv::{conv_as_warp, ConvWarp};
pub use eikonal::{eikonal_solve, SOURCE_RADIUS_CELLS};
pub use flux::FluxSpec;
pub use fv::{fv_burgers_solve, MAX_CFL};
pub use kinetic::kinetic_cascade;
pub use parametrix::{directions, parametrix_as_selfwarp, parametrix_superposition, parametrix_via_selfwarp};
pub use rays::{ray_trace, ConstantSpeed, RayPath, RayState, SineSpeed, WaveSpeed};
