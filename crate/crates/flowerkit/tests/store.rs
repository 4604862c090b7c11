use std::collections::BTreeMap;

use flowerkit::container::{decode, encode_map, read_container};
use flowerkit::store::*;
use flowerkit_core::dataset::{gen_dataset, Family, FamilyParams};
use flowerkit_core::flower::{FlowerConfig, FlowerParams};
use flowerkit_core::train::{AdamW, Model, Normalizer, OptimState};

fn small_dataset(seed: u64) -> flowerkit_core::dataset::TrajectoryDataset {
    let p = FamilyParams {
        velocity: vec![0.3, -0.2],
        ..Default::default()
    };
    gen_dataset(Family::AdvectionConst, &p, 4, 6, &[8, 8], seed).unwrap()
}

#[test]
fn dataset_round_trip_preserves_everything_and_its_digest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset(3);
    let path = dir.path().join("d.flw");
    let digest = save_dataset(&path, &ds).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let again = save_dataset(&dir.path().join("e.flw"), &back).unwrap();
    assert_eq!(digest, again);
    let (t, meta) = read_container(&path).unwrap();
    assert_eq!(meta["kind"], "dataset");
    assert_eq!(meta["family"], "advection_const");
    assert_eq!(t["frames"].shape(), &[4, 6, 1, 8, 8]);
}

#[test]
fn regeneration_reproduces_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let a = save_dataset(&dir.path().join("a.flw"), &small_dataset(5)).unwrap();
    let b = save_dataset(&dir.path().join("b.flw"), &small_dataset(5)).unwrap();
    let c = save_dataset(&dir.path().join("c.flw"), &small_dataset(6)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn split_datasets_keep_their_role_and_ids() {
    let ds = gen_dataset(Family::AdvectionConst, &FamilyParams::default(), 10, 5, &[8, 8], 1).unwrap();
    let (_, _, test) = ds.split_train_valid_test();
    let (t, m) = dataset_to_container(&test).unwrap();
    let back = dataset_from_container(&t, &m).unwrap();
    assert_eq!(back.split, test.split);
    assert_eq!(back.ids(), test.ids());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let cfg = FlowerConfig::next_step(2, 1, 2, 8, 2, 4);
    let params = FlowerParams::<f32>::init(&cfg, 4).unwrap();
    let mut optim = OptimState::new(AdamW::default(), params.iter());
    optim.step = 17;
    for (i, m) in optim.m.values_mut().enumerate() {
        m.iter_mut().for_each(|x| *x = 0.5 + i as f32);
    }
    let mut extra = BTreeMap::new();
    extra.insert("epochs".to_string(), "3".to_string());
    let ck = Checkpoint {
        model: Model {
            params,
            norm: Normalizer {
                enabled: true,
                mean: vec![0.25],
                std: vec![1.5],
            },
        },
        optim: Some(optim),
        extra,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.flw");
    save_checkpoint(&path, &ck).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model.params, ck.model.params);
    assert_eq!(back.model.norm, ck.model.norm);
    assert_eq!(back.optim, ck.optim);
    assert_eq!(back.extra, ck.extra);

    // the stored bytes are canonical
    let bytes = std::fs::read(&path).unwrap();
    let (t, m) = decode(&bytes).unwrap();
    assert_eq!(encode_map(&t, &m).unwrap(), bytes);
}

#[test]
fn checkpoint_without_optimiser_state() {
    let cfg = FlowerConfig::next_step(1, 2, 1, 4, 1, 2);
    let ck = Checkpoint {
        model: Model {
            params: FlowerParams::<f32>::init(&cfg, 0).unwrap(),
            norm: Normalizer::identity(2),
        },
        optim: None,
        extra: BTreeMap::new(),
    };
    let (t, m) = checkpoint_to_container(&ck).unwrap();
    assert!(t.keys().all(|k| !k.starts_with("optim.")));
    let back = checkpoint_from_container(&t, &m).unwrap();
    assert!(back.optim.is_none());
    assert_eq!(back.model.params, ck.model.params);
}

#[test]
fn wrong_kind_is_rejected() {
    let ds = small_dataset(1);
    let (t, m) = dataset_to_container(&ds).unwrap();
    assert!(checkpoint_from_container(&t, &m).is_err());
}
