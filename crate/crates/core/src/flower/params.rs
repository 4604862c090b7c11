use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FlowerConfig;
use crate::diff::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// How a tensor is initialised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    FanIn(usize),
    Zero,
    One,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn spec(out: &mut Vec<ParamSpec>, name: String, shape: &[usize], init: Init) {
    out.push(ParamSpec {
        name,
        shape: shape.to_vec(),
        init,
    });
}

/// Learnable scalars of an affine map `c_in -> c_out` with bias.
pub fn affine_count(c_in: usize, c_out: usize) -> usize {
    c_out * c_in + c_out
}

fn selfwarp_specs(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, heads: usize, dim: usize) {
    let fan = Init::FanIn(c_in);
    spec(out, format!("{prefix}.V"), &[c_out, c_in], fan);
    spec(out, format!("{prefix}.Vb"), &[c_out], fan);
    spec(out, format!("{prefix}.g.w1"), &[c_in, c_in], fan);
    spec(out, format!("{prefix}.g.b1"), &[c_in], fan);
    // zero output layer: every warp starts as the identity
    spec(out, format!("{prefix}.g.w2"), &[heads * dim, c_in], Init::Zero);
    spec(out, format!("{prefix}.g.b2"), &[heads * dim], Init::Zero);
}

fn block_specs(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize, heads: usize, dim: usize) {
    selfwarp_specs(out, &format!("{prefix}.warp"), c_in, c_out, heads, dim);
    spec(out, format!("{prefix}.idproj.w"), &[c_out, c_in], Init::FanIn(c_in));
    spec(out, format!("{prefix}.idproj.b"), &[c_out], Init::FanIn(c_in));
    spec(out, format!("{prefix}.norm.gamma"), &[c_out], Init::One);
    spec(out, format!("{prefix}.norm.beta"), &[c_out], Init::Zero);
}

/// Every learnable tensor of the network, in initialisation order.
pub fn param_specs(cfg: &FlowerConfig) -> Vec<ParamSpec> {
    let d = cfg.dim;
    let h = cfg.heads;
    let mut out = Vec::new();
    let c_aug = cfg.in_channels() + d;
    spec(&mut out, "lift.w".into(), &[cfg.c_lift, c_aug], Init::FanIn(c_aug));
    spec(&mut out, "lift.b".into(), &[cfg.c_lift], Init::FanIn(c_aug));
    let taps_down = 3usize.pow(d as u32);
    let taps_up = 1usize << d;
    for l in 0..cfg.levels - 1 {
        let c = cfg.width(l);
        block_specs(&mut out, &format!("enc{l}"), c, c, h, d);
        let fan = Init::FanIn(c * taps_down);
        spec(&mut out, format!("enc{l}.down.w"), &[2 * c, c, taps_down], fan);
        spec(&mut out, format!("enc{l}.down.b"), &[2 * c], fan);
    }
    let top = cfg.width(cfg.levels - 1);
    block_specs(&mut out, "bot", top, top, h, d);
    for l in (1..cfg.levels).rev() {
        let c_in = cfg.decoder_width(l);
        let c_out = cfg.width(l - 1);
        block_specs(&mut out, &format!("dec{l}"), c_in, c_out, h, d);
        let fan = Init::FanIn(c_out * taps_up);
        spec(&mut out, format!("dec{l}.up.w"), &[c_out, c_out, taps_up], fan);
        spec(&mut out, format!("dec{l}.up.b"), &[c_out], fan);
    }
    let pw = cfg.proj_width();
    spec(&mut out, "proj.w1".into(), &[cfg.c_lift, pw], Init::FanIn(pw));
    spec(&mut out, "proj.b1".into(), &[cfg.c_lift], Init::FanIn(pw));
    spec(&mut out, "proj.w2".into(), &[cfg.out_channels, cfg.c_lift], Init::FanIn(cfg.c_lift));
    spec(&mut out, "proj.b2".into(), &[cfg.out_channels], Init::FanIn(cfg.c_lift));
    out
}

/// Exact learnable-scalar count of the network described by `cfg`.
pub fn count_params(cfg: &FlowerConfig) -> usize {
    param_specs(cfg)
        .iter()
        .map(|s| s.shape.iter().product::<usize>())
        .sum()
}

/// Names of the blocks whose displacements can be extracted.
pub fn block_ids(cfg: &FlowerConfig) -> Vec<String> {
    let mut ids: Vec<String> = (0..cfg.levels - 1).map(|l| format!("enc{l}")).collect();
    ids.push("bot".into());
    ids.extend((1..cfg.levels).rev().map(|l| format!("dec{l}")));
    ids
}

fn sample_init<T: Scalar>(init: Init, n: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    match init {
        Init::Zero => vec![T::zero(); n],
        Init::One => vec![T::one(); n],
        Init::FanIn(fan) => {
            let bound = 1.0 / libm::sqrt(fan as f64);
            (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
        }
    }
}

/// All learnable tensors of a Flower network together with its config.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowerParams<T> {
    cfg: FlowerConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> FlowerParams<T> {
    /// Seeded initialisation; tensors are drawn in [`param_specs`] order.
    pub fn init(cfg: &FlowerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for s in param_specs(cfg) {
            let n = s.shape.iter().product();
            let t = Tensor::new(&s.shape, sample_init(s.init, n, &mut rng))?;
            tensors.insert(s.name, t);
        }
        Ok(Self {
            cfg: cfg.clone(),
            tensors,
        })
    }

    /// Assembles parameters loaded from storage, requiring exactly the
    /// tensor names and shapes the config implies.
    pub fn from_tensors(cfg: &FlowerConfig, mut tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(cfg);
        let missing: Vec<String> = specs
            .iter()
            .filter(|s| !tensors.contains_key(&s.name))
            .map(|s| s.name.clone())
            .collect();
        let extra: Vec<String> = tensors
            .keys()
            .filter(|k| !specs.iter().any(|s| &s.name == *k))
            .cloned()
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::ParamMismatch { missing, extra });
        }
        for s in &specs {
            let t = &tensors[&s.name];
            if t.shape() != s.shape.as_slice() {
                return Err(shape_err(
                    "checkpoint",
                    format!("{} has shape {:?}, config needs {:?}", s.name, t.shape(), s.shape),
                ));
            }
        }
        let tensors = core::mem::take(&mut tensors);
        Ok(Self {
            cfg: cfg.clone(),
            tensors,
        })
    }

    pub fn config(&self) -> &FlowerConfig {
        &self.cfg
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Tensors in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    pub fn into_tensors(self) -> BTreeMap<String, Tensor<T>> {
        self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> FlowerParams<U> {
        FlowerParams {
            cfg: self.cfg.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    fn tensor(&self, name: &str, block: &str) -> Result<Tensor<T>> {
        self.tensors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownBlock(block.to_string()))
    }

    /// Parameters of one block (`enc0`, `bot`, `dec1`, ...).
    pub fn block(&self, id: &str) -> Result<FlowerBlockParams<T>> {
        if !block_ids(&self.cfg).iter().any(|b| b == id) {
            return Err(Error::UnknownBlock(id.to_string()));
        }
        let t = |suffix: &str| self.tensor(&format!("{id}.{suffix}"), id);
        Ok(FlowerBlockParams {
            warp: SelfwarpParams {
                v: t("warp.V")?,
                vb: t("warp.Vb")?,
                g_w1: t("warp.g.w1")?,
                g_b1: t("warp.g.b1")?,
                g_w2: t("warp.g.w2")?,
                g_b2: t("warp.g.b2")?,
                heads: self.cfg.heads,
            },
            idproj_w: t("idproj.w")?,
            idproj_b: t("idproj.b")?,
            gamma: t("norm.gamma")?,
            beta: t("norm.beta")?,
            groups: self.cfg.groups,
        })
    }
}

/// Weights of one multihead warp layer.
///
/// The value map is `v = V a + Vb`; the displacement MLP is
/// `g(a) = w2 GELU(w1 a + b1) + b2` with `H * d` outputs, head-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SelfwarpParams<T> {
    pub v: Tensor<T>,
    pub vb: Tensor<T>,
    pub g_w1: Tensor<T>,
    pub g_b1: Tensor<T>,
    pub g_w2: Tensor<T>,
    pub g_b2: Tensor<T>,
    pub heads: usize,
}

impl<T: Scalar> SelfwarpParams<T> {
    /// Seeded initialisation with a zero displacement output layer.
    pub fn init(c_in: usize, c_out: usize, heads: usize, dim: usize, seed: u64) -> Result<Self> {
        if heads == 0 || !c_out.is_multiple_of(heads) {
            return Err(shape_err("selfwarp", format!("{heads} heads cannot split {c_out} channels")));
        }
        let mut specs = Vec::new();
        selfwarp_specs(&mut specs, "w", c_in, c_out, heads, dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ts = Vec::new();
        for s in specs {
            let n = s.shape.iter().product();
            ts.push(Tensor::new(&s.shape, sample_init(s.init, n, &mut rng))?);
        }
        let mut it = ts.into_iter();
        let mut next = || it.next().expect("six tensors");
        Ok(Self {
            v: next(),
            vb: next(),
            g_w1: next(),
            g_b1: next(),
            g_w2: next(),
            g_b2: next(),
            heads,
        })
    }

    pub fn c_in(&self) -> usize {
        self.v.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.v.shape()[0]
    }

    pub fn head_width(&self) -> usize {
        self.c_out() / self.heads
    }

    pub fn dim(&self) -> usize {
        self.g_b2.len() / self.heads
    }

    pub fn num_scalars(&self) -> usize {
        [&self.v, &self.vb, &self.g_w1, &self.g_b1, &self.g_w2, &self.g_b2]
            .iter()
            .map(|t| t.len())
            .sum()
    }
}

/// Weights of one residual warp block.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowerBlockParams<T> {
    pub warp: SelfwarpParams<T>,
    pub idproj_w: Tensor<T>,
    pub idproj_b: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub groups: usize,
}

impl<T: Scalar> FlowerBlockParams<T> {
    pub fn init(c_in: usize, c_out: usize, heads: usize, groups: usize, dim: usize, seed: u64) -> Result<Self> {
        let warp = SelfwarpParams::init(c_in, c_out, heads, dim, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        Ok(Self {
            warp,
            idproj_w: Tensor::new(&[c_out, c_in], sample_init(Init::FanIn(c_in), c_out * c_in, &mut rng))?,
            idproj_b: Tensor::new(&[c_out], sample_init(Init::FanIn(c_in), c_out, &mut rng))?,
            gamma: Tensor::new(&[c_out], vec![T::one(); c_out])?,
            beta: Tensor::zeros(&[c_out]),
            groups,
        })
    }
}
