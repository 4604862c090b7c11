use alloc::collections::BinaryHeap;
use alloc::format;
use core::cmp::Ordering;

use super::rays::WaveSpeed;
use crate::error::{Error, Result};
use crate::grid::{Field, Geometry};

/// Radius, in cells, of the neighbourhood around the source seeded with
/// the local constant-speed distance.
pub const SOURCE_RADIUS_CELLS: f64 = 2.0;

#[derive(Clone, Copy, PartialEq)]
struct Trial {
    tau: f64,
    node: usize,
}

impl Eq for Trial {}

impl Ord for Trial {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on travel time
        other.tau.total_cmp(&self.tau).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Trial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// First-arrival travel times from `y` solving `c² |∇τ|² = 1` on a 2D
/// grid by first-order fast marching. Grid edges are outflow boundaries
/// regardless of the geometry's boundary rule.
pub fn eikonal_solve(speed: &dyn WaveSpeed, geom: &Geometry, y: &[f64]) -> Result<Field<f64>> {
    if geom.dim() != 2 || speed.dim() != 2 || y.len() != 2 {
        return Err(Error::InvalidGeometry(format!(
            "fast marching runs on 2D grids (grid {}D, speed {}D)",
            geom.dim(),
            speed.dim()
        )));
    }
    let (nx, ny) = (geom.shape()[0], geom.shape()[1]);
    let (hx, hy) = (geom.spacing(0), geom.spacing(1));
    let n = nx * ny;
    let mut tau = alloc::vec![f64::INFINITY; n];
    let mut known = alloc::vec![false; n];
    let centre = |i: usize, j: usize| [geom.center(0, i), geom.center(1, j)];

    let c_src = speed.c(y);
    if !(c_src > 0.0) {
        return Err(Error::InvalidSpeed(format!("c({y:?}) = {c_src}")));
    }
    let radius = SOURCE_RADIUS_CELLS * hx.max(hy);
    let mut heap = BinaryHeap::new();
    for i in 0..nx {
        for j in 0..ny {
            let x = centre(i, j);
            let r = libm::hypot(x[0] - y[0], x[1] - y[1]);
            if r <= radius {
                tau[i * ny + j] = r / c_src;
                known[i * ny + j] = true;
            }
        }
    }
    if !known.iter().any(|&k| k) {
        // source outside the grid's reach: seed the nearest node
        let i = ((y[0] / hx) as usize).min(nx - 1);
        let j = ((y[1] / hy) as usize).min(ny - 1);
        let x = centre(i, j);
        tau[i * ny + j] = libm::hypot(x[0] - y[0], x[1] - y[1]) / c_src;
        known[i * ny + j] = true;
    }

    let neighbours = |node: usize| {
        let (i, j) = (node / ny, node % ny);
        let mut out = [usize::MAX; 4];
        if i > 0 {
            out[0] = node - ny;
        }
        if i + 1 < nx {
            out[1] = node + ny;
        }
        if j > 0 {
            out[2] = node - 1;
        }
        if j + 1 < ny {
            out[3] = node + 1;
        }
        out
    };

    let update = |node: usize, tau: &[f64], known: &[bool]| -> f64 {
        let nb = neighbours(node);
        let pick = |a: usize, b: usize| {
            let v = |k: usize| if k != usize::MAX && known[k] { tau[k] } else { f64::INFINITY };
            v(a).min(v(b))
        };
        let a = pick(nb[0], nb[1]);
        let b = pick(nb[2], nb[3]);
        let (i, j) = (node / ny, node % ny);
        let s = 1.0 / speed.c(&centre(i, j));
        let one_sided = (a + hx * s).min(b + hy * s);
        if !a.is_finite() || !b.is_finite() {
            return one_sided;
        }
        let (wa, wb) = (1.0 / (hx * hx), 1.0 / (hy * hy));
        let qa = wa + wb;
        let qb = -2.0 * (a * wa + b * wb);
        let qc = a * a * wa + b * b * wb - s * s;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return one_sided;
        }
        let t = (-qb + libm::sqrt(disc)) / (2.0 * qa);
        if t >= a.max(b) {
            t.min(one_sided)
        } else {
            one_sided
        }
    };

    for node in 0..n {
        if known[node] {
            for k in neighbours(node) {
                if k != usize::MAX && !known[k] {
                    let t = update(k, &tau, &known);
                    if t < tau[k] {
                        tau[k] = t;
                        heap.push(Trial { tau: t, node: k });
                    }
                }
            }
        }
    }
    while let Some(Trial { tau: t, node }) = heap.pop() {
        if known[node] || t > tau[node] {
            continue;
        }
        known[node] = true;
        for k in neighbours(node) {
            if k != usize::MAX && !known[k] {
                let t = update(k, &tau, &known);
                if t < tau[k] {
                    tau[k] = t;
                    heap.push(Trial { tau: t, node: k });
                }
            }
        }
    }
    Field::new(geom.clone(), 1, tau)
}
