//! Datasets and checkpoints as FLW1 files.
//!
//! A dataset file holds `frames` (f32, `[n_traj, F, C, N...]`) and `ids`
//! (f64, `[n_traj]`) plus descriptive metadata. A checkpoint holds every
//! network tensor under `param.<name>`, the normaliser statistics, and
//! optionally the AdamW moments under `optim.m.<name>` / `optim.v.<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use flowerkit_core::dataset::{Family, Split, TrajectoryDataset};
use flowerkit_core::diff::Tensor;
use flowerkit_core::flower::{FlowerConfig, FlowerParams};
use flowerkit_core::grid::{Boundary, Geometry};
use flowerkit_core::train::{AdamW, Model, Normalizer, OptimState};

use crate::container::{self, Array, ArrayData, Meta, TensorMap};
use crate::error::{Error, Result};

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn format_err(what: &'static str, detail: impl Into<String>) -> Error {
    Error::Format {
        what,
        detail: detail.into(),
    }
}

fn get<'a>(meta: &'a Meta, key: &str, what: &'static str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| format_err(what, format!("metadata key `{key}` missing")))
}

fn parse<T: std::str::FromStr>(meta: &Meta, key: &str, what: &'static str) -> Result<T> {
    let s = get(meta, key, what)?;
    s.parse()
        .map_err(|_| format_err(what, format!("metadata `{key}={s}` is not a valid value")))
}

fn parse_list<T: std::str::FromStr>(meta: &Meta, key: &str, what: &'static str) -> Result<Vec<T>> {
    let s = get(meta, key, what)?;
    s.split(',')
        .map(|p| p.trim().parse())
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|_| format_err(what, format!("metadata `{key}={s}` is not a list")))
}

/// Tensors and metadata describing `ds`.
pub fn dataset_to_container(ds: &TrajectoryDataset) -> Result<(TensorMap, Meta)> {
    let n = ds.n_traj();
    let mut shape = vec![n, ds.n_frames(), ds.channels()];
    shape.extend_from_slice(ds.geom().shape());
    let mut frames = Vec::with_capacity(shape.iter().product());
    for i in 0..n {
        frames.extend_from_slice(ds.trajectory(i));
    }
    let mut tensors = TensorMap::new();
    tensors.insert("frames".into(), Array::f32(&shape, frames)?);
    tensors.insert(
        "ids".into(),
        Array::f64(&[n], ds.ids().iter().map(|&i| i as f64).collect())?,
    );

    let mut meta = Meta::new();
    meta.insert("kind".into(), "dataset".into());
    meta.insert("family".into(), ds.family.name().into());
    meta.insert("dt".into(), ds.dt.to_string());
    meta.insert("seed".into(), ds.seed.to_string());
    meta.insert("split".into(), ds.split.name().into());
    meta.insert("shape".into(), join(ds.geom().shape()));
    meta.insert("extent".into(), join(ds.geom().extent()));
    meta.insert("bc".into(), ds.geom().bc().name().into());
    for (k, v) in &ds.coefficients {
        meta.insert(format!("coef.{k}"), v.clone());
    }
    Ok((tensors, meta))
}

pub fn dataset_from_container(tensors: &TensorMap, meta: &Meta) -> Result<TrajectoryDataset> {
    const W: &str = "dataset";
    if get(meta, "kind", W)? != "dataset" {
        return Err(format_err(W, "file is not a dataset"));
    }
    let family = Family::parse(get(meta, "family", W)?).ok_or_else(|| format_err(W, "unknown family"))?;
    let split = Split::parse(get(meta, "split", W)?).ok_or_else(|| format_err(W, "unknown split"))?;
    let bc = Boundary::parse(get(meta, "bc", W)?).ok_or_else(|| format_err(W, "unknown boundary"))?;
    let shape: Vec<usize> = parse_list(meta, "shape", W)?;
    let extent: Vec<f64> = parse_list(meta, "extent", W)?;
    let geom = Geometry::new(&shape, &extent, bc)?;

    let frames = tensors.get("frames").ok_or_else(|| format_err(W, "`frames` missing"))?;
    let ArrayData::F32(values) = frames.data() else {
        return Err(format_err(W, "`frames` must be f32"));
    };
    let s = frames.shape();
    if s.len() != 3 + shape.len() || s[3..] != shape[..] {
        return Err(format_err(W, format!("`frames` shape {s:?} does not match grid {shape:?}")));
    }
    let (n, f, c) = (s[0], s[1], s[2]);
    let per = f * c * geom.len();
    let data: Vec<Vec<f32>> = (0..n).map(|i| values[i * per..(i + 1) * per].to_vec()).collect();
    let ids = tensors.get("ids").ok_or_else(|| format_err(W, "`ids` missing"))?;
    if ids.shape() != [n] {
        return Err(format_err(W, "`ids` length differs from trajectory count"));
    }
    let ids: Vec<usize> = ids.data().to_f64().into_iter().map(|x| x as usize).collect();
    let coefficients = meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("coef.").map(|k| (k.to_string(), v.clone())))
        .collect();
    let ds = TrajectoryDataset::new(
        family,
        coefficients,
        parse(meta, "dt", W)?,
        parse(meta, "seed", W)?,
        geom,
        c,
        f,
        data,
    )?;
    Ok(ds.with_split(split, ids)?)
}

pub fn save_dataset(path: &Path, ds: &TrajectoryDataset) -> Result<String> {
    let (tensors, meta) = dataset_to_container(ds)?;
    let digest = container::payload_digest(&tensors);
    std::fs::write(path, container::encode_map(&tensors, &meta)?)?;
    Ok(digest)
}

pub fn load_dataset(path: &Path) -> Result<TrajectoryDataset> {
    let (t, m) = container::read_container(path)?;
    dataset_from_container(&t, &m)
}

fn config_meta(cfg: &FlowerConfig, meta: &mut Meta) {
    for (k, v) in [
        ("dim", cfg.dim),
        ("levels", cfg.levels),
        ("c_lift", cfg.c_lift),
        ("heads", cfg.heads),
        ("groups", cfg.groups),
        ("frames", cfg.frames),
        ("phys_channels", cfg.phys_channels),
        ("out_channels", cfg.out_channels),
    ] {
        meta.insert(format!("model.{k}"), v.to_string());
    }
    meta.insert("model.bc".into(), cfg.bc.name().into());
    meta.insert("model.residual".into(), cfg.residual.to_string());
}

fn config_from_meta(meta: &Meta) -> Result<FlowerConfig> {
    const W: &str = "checkpoint";
    let u = |k: &str| parse::<usize>(meta, &format!("model.{k}"), W);
    Ok(FlowerConfig {
        dim: u("dim")?,
        levels: u("levels")?,
        c_lift: u("c_lift")?,
        heads: u("heads")?,
        groups: u("groups")?,
        frames: u("frames")?,
        phys_channels: u("phys_channels")?,
        out_channels: u("out_channels")?,
        bc: Boundary::parse(get(meta, "model.bc", W)?).ok_or_else(|| format_err(W, "unknown boundary"))?,
        residual: parse(meta, "model.residual", W)?,
    })
}

/// A stored model, its optimiser state if saved, and any extra metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optim: Option<OptimState<f32>>,
    pub extra: BTreeMap<String, String>,
}

pub fn checkpoint_to_container(ck: &Checkpoint) -> Result<(TensorMap, Meta)> {
    let mut tensors = TensorMap::new();
    for (name, t) in ck.model.params.iter() {
        tensors.insert(format!("param.{name}"), Array::f32(t.shape(), t.data().to_vec())?);
    }
    let norm = &ck.model.norm;
    tensors.insert("norm.mean".into(), Array::f64(&[norm.mean.len()], norm.mean.clone())?);
    tensors.insert("norm.std".into(), Array::f64(&[norm.std.len()], norm.std.clone())?);
    let mut meta = Meta::new();
    meta.insert("kind".into(), "checkpoint".into());
    config_meta(ck.model.params.config(), &mut meta);
    meta.insert("norm.enabled".into(), norm.enabled.to_string());
    if let Some(o) = &ck.optim {
        for (prefix, moments) in [("optim.m", &o.m), ("optim.v", &o.v)] {
            for (name, m) in moments {
                tensors.insert(format!("{prefix}.{name}"), Array::f32(&[m.len()], m.clone())?);
            }
        }
        meta.insert("optim.step".into(), o.step.to_string());
        meta.insert("optim.beta1".into(), o.hyper.beta1.to_string());
        meta.insert("optim.beta2".into(), o.hyper.beta2.to_string());
        meta.insert("optim.eps".into(), o.hyper.eps.to_string());
        meta.insert("optim.weight_decay".into(), o.hyper.weight_decay.to_string());
    }
    for (k, v) in &ck.extra {
        meta.insert(format!("info.{k}"), v.clone());
    }
    Ok((tensors, meta))
}

fn f32_data<'a>(arr: &'a Array, name: &str) -> Result<&'a [f32]> {
    match arr.data() {
        ArrayData::F32(v) => Ok(v),
        _ => Err(format_err("checkpoint", format!("`{name}` must be f32"))),
    }
}

pub fn checkpoint_from_container(tensors: &TensorMap, meta: &Meta) -> Result<Checkpoint> {
    const W: &str = "checkpoint";
    if get(meta, "kind", W)? != "checkpoint" {
        return Err(format_err(W, "file is not a checkpoint"));
    }
    let cfg = config_from_meta(meta)?;
    let mut params = BTreeMap::new();
    let mut m = BTreeMap::new();
    let mut v = BTreeMap::new();
    for (key, arr) in tensors {
        if let Some(name) = key.strip_prefix("param.") {
            params.insert(name.to_string(), Tensor::new(arr.shape(), f32_data(arr, key)?.to_vec())?);
        } else if let Some(name) = key.strip_prefix("optim.m.") {
            m.insert(name.to_string(), f32_data(arr, key)?.to_vec());
        } else if let Some(name) = key.strip_prefix("optim.v.") {
            v.insert(name.to_string(), f32_data(arr, key)?.to_vec());
        }
    }
    let params = FlowerParams::from_tensors(&cfg, params)?;
    let stat = |k: &str| -> Result<Vec<f64>> {
        Ok(tensors
            .get(k)
            .ok_or_else(|| format_err(W, format!("`{k}` missing")))?
            .data()
            .to_f64())
    };
    let norm = Normalizer {
        enabled: parse(meta, "norm.enabled", W)?,
        mean: stat("norm.mean")?,
        std: stat("norm.std")?,
    };
    if norm.mean.len() != cfg.phys_channels || norm.std.len() != cfg.phys_channels {
        return Err(format_err(W, "normaliser statistics do not match the channel count"));
    }
    let optim = if meta.contains_key("optim.step") {
        let hyper = AdamW {
            beta1: parse(meta, "optim.beta1", W)?,
            beta2: parse(meta, "optim.beta2", W)?,
            eps: parse(meta, "optim.eps", W)?,
            weight_decay: parse(meta, "optim.weight_decay", W)?,
        };
        for (name, t) in params.iter() {
            let ok = |map: &BTreeMap<String, Vec<f32>>| map.get(name).is_some_and(|x| x.len() == t.len());
            if !ok(&m) || !ok(&v) {
                return Err(format_err(W, format!("optimiser moments for `{name}` missing or mis-sized")));
            }
        }
        Some(OptimState {
            hyper,
            step: parse(meta, "optim.step", W)?,
            m,
            v,
        })
    } else {
        None
    };
    let extra = meta
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("info.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(Checkpoint {
        model: Model { params, norm },
        optim,
        extra,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let (t, m) = checkpoint_to_container(ck)?;
    std::fs::write(path, container::encode_map(&t, &m)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (t, m) = container::read_container(path)?;
    checkpoint_from_container(&t, &m)
}
