//! Synthetic trajectory datasets produced by the reference solvers.

mod families;
mod ic;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use families::{gen_dataset, gen_dataset_with, FamilyParams};
pub use ic::{splitmix64, trajectory_seed, BandLimited};

use crate::error::{shape_err, Error, Result};
use crate::grid::{Field, Geometry};

/// Mixed into the master seed for the split shuffle.
const SPLIT_SALT: u64 = 0x5EED_5B11_7000_0001;

/// Frames a 4→1 training window consumes.
pub const HISTORY: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    AdvectionConst,
    AdvectionVar,
    Burgers1d,
    Burgers2dAxis,
    KineticStream,
    Custom,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::AdvectionConst,
        Family::AdvectionVar,
        Family::Burgers1d,
        Family::Burgers2dAxis,
        Family::KineticStream,
        Family::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::AdvectionConst => "advection_const",
            Family::AdvectionVar => "advection_var",
            Family::Burgers1d => "burgers_1d",
            Family::Burgers2dAxis => "burgers_2d_axis",
            Family::KineticStream => "kinetic_stream",
            Family::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    All,
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::All => "all",
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Split::All, Split::Train, Split::Valid, Split::Test]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

/// Equal-length trajectories of equally shaped frames, stored in single
/// precision as `[frames, C, N...]` per trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub family: Family,
    /// Generator coefficients as `(key, value)` text, for metadata.
    pub coefficients: Vec<(String, String)>,
    pub dt: f64,
    pub seed: u64,
    pub split: Split,
    geom: Geometry,
    channels: usize,
    frames: usize,
    /// Index of each trajectory in the generating run.
    ids: Vec<usize>,
    data: Vec<Vec<f32>>,
}

impl TrajectoryDataset {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        family: Family,
        coefficients: Vec<(String, String)>,
        dt: f64,
        seed: u64,
        geom: Geometry,
        channels: usize,
        frames: usize,
        data: Vec<Vec<f32>>,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::ConfigInvalid(format!("frame interval {dt}")));
        }
        if channels == 0 || frames == 0 {
            return Err(Error::ConfigInvalid(format!("{channels} channels, {frames} frames")));
        }
        let per = frames * channels * geom.len();
        if let Some(i) = data.iter().position(|t| t.len() != per) {
            return Err(shape_err(
                "dataset",
                format!("trajectory {i} has {} values, expected {per}", data[i].len()),
            ));
        }
        Ok(Self {
            family,
            coefficients,
            dt,
            seed,
            split: Split::All,
            geom,
            channels,
            frames,
            ids: (0..data.len()).collect(),
            data,
        })
    }

    pub fn geom(&self) -> &Geometry {
        &self.geom
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_traj(&self) -> usize {
        self.data.len()
    }

    pub fn n_frames(&self) -> usize {
        self.frames
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Raw `[frames, C, N...]` values of trajectory `i`.
    pub fn trajectory(&self, i: usize) -> &[f32] {
        &self.data[i]
    }

    fn frame_len(&self) -> usize {
        self.channels * self.geom.len()
    }

    pub fn frame(&self, i: usize, k: usize) -> Field<f32> {
        let n = self.frame_len();
        Field::new(self.geom.clone(), self.channels, self.data[i][k * n..(k + 1) * n].to_vec())
            .expect("frame length checked at construction")
    }

    /// Frames `start .. start + count` of trajectory `i` stacked along channels.
    pub fn stack(&self, i: usize, start: usize, count: usize) -> Result<Field<f32>> {
        if start + count > self.frames {
            return Err(Error::DatasetTooShort {
                index: i,
                frames: self.frames,
                need: start + count,
            });
        }
        let n = self.frame_len();
        Field::new(
            self.geom.clone(),
            self.channels * count,
            self.data[i][start * n..(start + count) * n].to_vec(),
        )
    }

    /// The 4→1 window starting at frame `start`: stacked inputs and target.
    pub fn window(&self, i: usize, start: usize) -> Result<(Field<f32>, Field<f32>)> {
        let input = self.stack(i, start, HISTORY)?;
        let target = self.stack(i, start + HISTORY, 1)?;
        Ok((input, target))
    }

    /// Windows per trajectory, or `DatasetTooShort`.
    pub fn windows_per_traj(&self) -> Result<usize> {
        if self.frames < HISTORY + 1 {
            return Err(Error::DatasetTooShort {
                index: 0,
                frames: self.frames,
                need: HISTORY + 1,
            });
        }
        Ok(self.frames - HISTORY)
    }

    fn subset(&self, idx: &[usize], split: Split) -> Self {
        let mut out = Self {
            data: idx.iter().map(|&i| self.data[i].clone()).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            coefficients: self.coefficients.clone(),
            geom: self.geom.clone(),
            ..*self
        };
        out.split = split;
        out
    }

    /// 80/10/10 split by trajectory after a seeded shuffle of the indices.
    pub fn split_train_valid_test(&self) -> (Self, Self, Self) {
        let n = self.n_traj();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(self.seed ^ SPLIT_SALT)));
        let n_valid = n / 10;
        let n_test = n / 10;
        let n_train = n - n_valid - n_test;
        let (a, rest) = idx.split_at(n_train);
        let (b, c) = rest.split_at(n_valid);
        let sort = |s: &[usize]| {
            let mut v = s.to_vec();
            v.sort_unstable();
            v
        };
        (
            self.subset(&sort(a), Split::Train),
            self.subset(&sort(b), Split::Valid),
            self.subset(&sort(c), Split::Test),
        )
    }

    /// Rebuilds a dataset from stored parts (used by loaders).
    pub fn with_split(mut self, split: Split, ids: Vec<usize>) -> Result<Self> {
        if ids.len() != self.n_traj() {
            return Err(shape_err("dataset", format!("{} ids for {} trajectories", ids.len(), self.n_traj())));
        }
        self.split = split;
        self.ids = ids;
        Ok(self)
    }
}
