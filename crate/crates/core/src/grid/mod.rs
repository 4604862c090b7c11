//! Cell-centred regular grids, boundary extension and multilinear sampling.
//!
//! Node `n` along an axis of length `N` and extent `L` sits at
//! `(n + 0.5) * L / N`. Coordinates and displacements are physical
//! (fractions of the extent); conversion to index space happens only inside
//! the samplers.

mod interp;
mod resample;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) use interp::split as split_index;
pub use interp::{interpolate, interpolate_vjp, Stencil};
pub use resample::{resample, Resample};

pub const MAX_DIM: usize = 3;

/// Boundary extension applied before sampling outside the domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    /// Wrap modulo the extent.
    Periodic,
    /// Hold the edge value (replicate padding).
    Clamp,
    /// Mirror about the domain faces (symmetric padding).
    Reflect,
}

impl Boundary {
    /// Maps a possibly out-of-range node index onto `0..n`.
    #[inline]
    pub fn index(self, i: i64, n: usize) -> usize {
        let n_i = n as i64;
        match self {
            Boundary::Periodic => i.rem_euclid(n_i) as usize,
            Boundary::Clamp => i.clamp(0, n_i - 1) as usize,
            Boundary::Reflect => {
                let m = i.rem_euclid(2 * n_i);
                if m < n_i {
                    m as usize
                } else {
                    (2 * n_i - 1 - m) as usize
                }
            }
        }
    }

    /// Extends a physical coordinate into the domain `[0, extent)`.
    ///
    /// Clamp holds coordinates to the span of cell centres, which is where
    /// replicate padding stops changing the sampled value.
    pub fn extend(self, x: f64, extent: f64, spacing: f64) -> f64 {
        match self {
            Boundary::Periodic => {
                if (0.0..extent).contains(&x) {
                    x
                } else {
                    let r = x - extent * libm::floor(x / extent);
                    if r >= extent {
                        0.0
                    } else {
                        r
                    }
                }
            }
            Boundary::Clamp => {
                if (0.0..extent).contains(&x) {
                    x.clamp(0.5 * spacing, extent - 0.5 * spacing)
                } else if x < 0.0 {
                    0.5 * spacing
                } else {
                    extent - 0.5 * spacing
                }
            }
            Boundary::Reflect => {
                if (0.0..extent).contains(&x) {
                    return x;
                }
                let period = 2.0 * extent;
                let m = x - period * libm::floor(x / period);
                if m < extent {
                    m
                } else {
                    period - m
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Boundary::Periodic => "periodic",
            Boundary::Clamp => "clamp",
            Boundary::Reflect => "reflect",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "periodic" => Some(Boundary::Periodic),
            "clamp" => Some(Boundary::Clamp),
            "reflect" => Some(Boundary::Reflect),
            _ => None,
        }
    }
}

/// Spatial layout of a field: shape, physical extent and boundary rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    shape: Vec<usize>,
    extent: Vec<f64>,
    bc: Boundary,
}

impl Geometry {
    pub fn new(shape: &[usize], extent: &[f64], bc: Boundary) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_DIM {
            return Err(Error::InvalidGeometry(format!(
                "dimension {} outside 1..=3",
                shape.len()
            )));
        }
        if extent.len() != shape.len() {
            return Err(Error::InvalidGeometry(format!(
                "{} extents for {} axes",
                extent.len(),
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidGeometry(format!("zero-length axis in {shape:?}")));
        }
        if extent.iter().any(|&e| !(e.is_finite() && e > 0.0)) {
            return Err(Error::InvalidGeometry(format!("non-positive extent {extent:?}")));
        }
        Ok(Self {
            shape: shape.to_vec(),
            extent: extent.to_vec(),
            bc,
        })
    }

    /// Unit extent along every axis.
    pub fn unit(shape: &[usize], bc: Boundary) -> Result<Self> {
        Self::new(shape, &vec![1.0; shape.len()], bc)
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn bc(&self) -> Boundary {
        self.bc
    }

    pub fn with_bc(&self, bc: Boundary) -> Self {
        Self { bc, ..self.clone() }
    }

    /// Number of grid nodes.
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / self.shape[axis] as f64
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> [usize; MAX_DIM] {
        let mut s = [0usize; MAX_DIM];
        let mut acc = 1;
        for a in (0..self.dim()).rev() {
            s[a] = acc;
            acc *= self.shape[a];
        }
        s
    }

    /// Cell-centre coordinate of node `n` along `axis`.
    pub fn center(&self, axis: usize, n: usize) -> f64 {
        (n as f64 + 0.5) * self.spacing(axis)
    }

    /// Multi-index of a flat node index.
    pub fn unravel(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0usize; MAX_DIM];
        for a in (0..self.dim()).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }

    /// Geometry with every axis scaled by `num / den` (used for U-Net levels).
    pub fn rescaled(&self, num: usize, den: usize) -> Result<Self> {
        let mut shape = Vec::with_capacity(self.dim());
        for (axis, &n) in self.shape.iter().enumerate() {
            if !(n * num).is_multiple_of(den) {
                return Err(Error::ShapeNotDivisible {
                    axis,
                    len: n,
                    divisor: den,
                });
            }
            shape.push(n * num / den);
        }
        Self::new(&shape, &self.extent, self.bc)
    }
}

/// `C`-channel data on a regular grid, layout `[C, N_1, ..., N_d]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T> {
    channels: usize,
    geom: Geometry,
    data: Vec<T>,
}

impl<T: Scalar> Field<T> {
    pub fn new(geom: Geometry, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidGeometry("field needs at least one channel".into()));
        }
        if data.len() != channels * geom.len() {
            return Err(Error::InvalidGeometry(format!(
                "data length {} != {} channels x {} nodes",
                data.len(),
                channels,
                geom.len()
            )));
        }
        Ok(Self {
            channels,
            geom,
            data,
        })
    }

    pub fn zeros(geom: Geometry, channels: usize) -> Self {
        let len = channels * geom.len();
        Self {
            channels,
            geom,
            data: vec![T::zero(); len],
        }
    }

    /// Samples `f(channel, x)` at every cell centre.
    pub fn from_fn(geom: Geometry, channels: usize, mut f: impl FnMut(usize, &[f64]) -> f64) -> Self {
        let d = geom.dim();
        let n = geom.len();
        let mut data = Vec::with_capacity(channels * n);
        let mut x = [0.0f64; MAX_DIM];
        for c in 0..channels {
            for flat in 0..n {
                let idx = geom.unravel(flat);
                for a in 0..d {
                    x[a] = geom.center(a, idx[a]);
                }
                data.push(T::of(f(c, &x[..d])));
            }
        }
        Self {
            channels,
            geom,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn dim(&self) -> usize {
        self.geom.dim()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.geom.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.geom.len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Full tensor shape `[C, N_1, ..., N_d]`.
    pub fn tensor_shape(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(1 + self.dim());
        s.push(self.channels);
        s.extend_from_slice(self.geom.shape());
        s
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Field<U> {
        Field {
            channels: self.channels,
            geom: self.geom.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Field<U> {
        self.map(|v| U::of(v.f64()))
    }

    /// Channel concatenation `self ⊕ other`.
    pub fn concat(&self, other: &Field<T>) -> Result<Field<T>> {
        if self.geom.shape() != other.geom.shape() {
            return Err(crate::error::shape_err(
                "concat",
                format!("{:?} vs {:?}", self.geom.shape(), other.geom.shape()),
            ));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Field {
            channels: self.channels + other.channels,
            geom: self.geom.clone(),
            data,
        })
    }

    /// Circular shift by whole nodes: `out[n] = self[n - shift]`.
    pub fn roll(&self, shift: &[i64]) -> Field<T> {
        let d = self.dim();
        let n = self.geom.len();
        let strides = self.geom.strides();
        let mut out = self.data.clone();
        for flat in 0..n {
            let idx = self.geom.unravel(flat);
            let mut src = 0;
            for a in 0..d {
                let i = (idx[a] as i64 - shift[a]).rem_euclid(self.geom.shape()[a] as i64);
                src += i as usize * strides[a];
            }
            for c in 0..self.channels {
                out[c * n + flat] = self.data[c * n + src];
            }
        }
        Field {
            channels: self.channels,
            geom: self.geom.clone(),
            data: out,
        }
    }
}

/// Cell-centred coordinate field `ξ(x) = x`, one channel per axis.
pub fn grid_coords<T: Scalar>(geom: &Geometry) -> Field<T> {
    Field::from_fn(geom.clone(), geom.dim(), |c, x| x[c])
}
