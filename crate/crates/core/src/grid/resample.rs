use alloc::vec;

use super::{Field, MAX_DIM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    /// Mean over non-overlapping `2^d` blocks.
    Down2,
    /// Repeat every cell `2^d` times.
    Up2,
}

pub fn resample<T: Scalar>(field: &Field<T>, factor: Resample) -> Result<Field<T>> {
    let geom = field.geom();
    let d = geom.dim();
    let out_geom = match factor {
        Resample::Down2 => {
            for (axis, &len) in geom.shape().iter().enumerate() {
                if len % 2 != 0 {
                    return Err(Error::OddShape { axis, len });
                }
            }
            geom.rescaled(1, 2)?
        }
        Resample::Up2 => geom.rescaled(2, 1)?,
    };
    let c = field.channels();
    let n_in = geom.len();
    let n_out = out_geom.len();
    let in_strides = geom.strides();
    let mut data = vec![T::zero(); c * n_out];
    match factor {
        Resample::Down2 => {
            let scale = T::of(1.0 / (1usize << d) as f64);
            for flat in 0..n_in {
                let idx = geom.unravel(flat);
                let mut o = [0usize; MAX_DIM];
                for a in 0..d {
                    o[a] = idx[a] / 2;
                }
                let out_flat = ravel(&o[..d], out_geom.strides());
                for ch in 0..c {
                    data[ch * n_out + out_flat] += field.data()[ch * n_in + flat] * scale;
                }
            }
        }
        Resample::Up2 => {
            for flat in 0..n_out {
                let idx = out_geom.unravel(flat);
                let mut src = 0;
                for a in 0..d {
                    src += (idx[a] / 2) * in_strides[a];
                }
                for ch in 0..c {
                    data[ch * n_out + flat] = field.data()[ch * n_in + src];
                }
            }
        }
    }
    Field::new(out_geom, c, data)
}

fn ravel(idx: &[usize], strides: [usize; MAX_DIM]) -> usize {
    idx.iter().zip(strides.iter()).map(|(i, s)| i * s).sum()
}
