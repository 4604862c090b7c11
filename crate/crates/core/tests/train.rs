use std::collections::BTreeMap;

use flowerkit_core::dataset::{gen_dataset, Family, FamilyParams, TrajectoryDataset};
use flowerkit_core::diff::Tensor;
use flowerkit_core::exec::Serial;
use flowerkit_core::flower::{FlowerConfig, FlowerParams};
use flowerkit_core::grid::{Boundary, Field, Geometry};
use flowerkit_core::train::*;
use flowerkit_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(vals: &[f64]) -> Field<f64> {
    Field::new(Geometry::unit(&[vals.len()], Boundary::Periodic).unwrap(), 1, vals.to_vec()).unwrap()
}

// ---- vrmse ----

#[test]
fn vrmse_of_truth_is_zero() {
    let t = field(&[1.0, -2.0, 0.5, 4.0]);
    assert_eq!(vrmse(&t, &t).unwrap(), 0.0);
}

#[test]
fn predicting_the_mean_scores_one() {
    let t = field(&[1.0, -2.0, 0.5, 4.0]);
    let m = 3.5 / 4.0;
    let r = vrmse(&field(&[m; 4]), &t).unwrap();
    assert!((r - 1.0).abs() < 1e-6, "{r}");
}

#[test]
fn offset_prediction_by_hand() {
    // truth (1, 2, 3): mean 2, population variance 2/3
    let t = field(&[1.0, 2.0, 3.0]);
    let p = field(&[1.5, 2.5, 3.5]);
    let want = 0.5 / (2.0f64 / 3.0 + 1e-7).sqrt();
    assert!((vrmse(&p, &t).unwrap() - want).abs() < 1e-15);
}

#[test]
fn vrmse_averages_channels() {
    let g = Geometry::unit(&[3], Boundary::Periodic).unwrap();
    let t = Field::new(g.clone(), 2, vec![1.0, 2.0, 3.0, 0.0, 0.0, 6.0]).unwrap();
    let p = Field::new(g, 2, vec![1.0, 2.0, 3.0, 2.0, 2.0, 2.0]).unwrap();
    // channel 0 exact, channel 1 predicts its mean
    let r = vrmse(&p, &t).unwrap();
    assert!((r - 0.5).abs() < 1e-7, "{r}");
}

#[test]
fn vrmse_rejects_shape_mismatch() {
    assert!(matches!(vrmse(&field(&[1.0, 2.0]), &field(&[1.0, 2.0, 3.0])), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn vrmse_is_invariant_to_joint_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p: Vec<f64> = t.iter().map(|v| v + rng.gen_range(-0.3..0.3)).collect();
    let base = vrmse(&field(&p), &field(&t)).unwrap();
    for a in [2.0, -1.0] {
        let s = |v: &[f64]| field(&v.iter().map(|x| a * x).collect::<Vec<_>>());
        let r = vrmse(&s(&p), &s(&t)).unwrap();
        assert!((r - base).abs() <= 1e-6, "α = {a}");
    }
}

#[test]
fn tape_vrmse_matches_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Geometry::unit(&[4, 4], Boundary::Periodic).unwrap();
    let t = Field::from_fn(g.clone(), 3, |_, _| rng.gen_range(-1.0..1.0));
    let p = Field::from_fn(g, 3, |_, _| rng.gen_range(-1.0..1.0));
    let mut tape = flowerkit_core::diff::Tape::<f64>::new();
    let pv = tape.constant(&p.tensor_shape(), p.data().to_vec()).unwrap();
    let tv = tape.constant(&t.tensor_shape(), t.data().to_vec()).unwrap();
    let l = record_vrmse(&mut tape, pv, tv).unwrap();
    assert!((tape.value(l)[0] - vrmse(&p, &t).unwrap()).abs() < 1e-14);
}

// ---- AdamW ----

fn one(name: &str, v: f64) -> BTreeMap<String, Tensor<f64>> {
    BTreeMap::from([(name.to_string(), Tensor::new(&[1], vec![v]).unwrap())])
}

fn grad(name: &str, g: f64) -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([(name.to_string(), vec![g])])
}

#[test]
fn zero_gradient_only_decays() {
    let mut p = one("w", 2.0);
    let mut st = OptimState::new(AdamW::default(), p.iter());
    adamw_step(p.iter_mut(), &grad("w", 0.0), &mut st, 0.1).unwrap();
    assert!((p["w"].data()[0] - 0.999 * 2.0).abs() < 1e-15);
}

#[test]
fn first_step_moves_by_lr_against_the_gradient() {
    for g in [3.0, -0.02] {
        let mut p = one("w", 1.0);
        let hyper = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        let mut st = OptimState::new(hyper, p.iter());
        adamw_step(p.iter_mut(), &grad("w", g), &mut st, 0.1).unwrap();
        let moved = p["w"].data()[0] - 1.0;
        assert!((moved + 0.1 * g.signum()).abs() < 1e-6, "{moved}");
    }
}

#[test]
fn non_finite_gradient_keeps_state() {
    let mut p = one("w", 1.0);
    let mut st = OptimState::new(AdamW::default(), p.iter());
    let before = st.clone();
    let err = adamw_step(p.iter_mut(), &grad("w", f64::NAN), &mut st, 0.1).unwrap_err();
    assert_eq!(err, Error::NonFiniteGradient("w".into()));
    assert_eq!(st, before);
    assert_eq!(p["w"].data()[0], 1.0);
}

#[test]
fn quadratic_converges() {
    for wd in [0.0, 1e-2] {
        let mut p = one("w", 0.0);
        let hyper = AdamW {
            weight_decay: wd,
            ..AdamW::default()
        };
        let mut st = OptimState::new(hyper, p.iter());
        for _ in 0..500 {
            let x = p["w"].data()[0];
            adamw_step(p.iter_mut(), &grad("w", 2.0 * (x - 3.0)), &mut st, 0.05).unwrap();
        }
        let x = p["w"].data()[0];
        if wd == 0.0 {
            assert!((x - 3.0).abs() < 1e-2, "{x}");
        } else {
            // decoupled decay pulls the fixed point slightly towards zero
            assert!(x < 3.0 && x > 2.95, "{x}");
        }
    }
}

#[test]
fn without_decay_matches_plain_adam() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let hyper = AdamW {
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut p = one("w", 0.3);
    let mut st = OptimState::new(hyper, p.iter());
    let (mut x, mut m, mut v) = (0.3f64, 0.0f64, 0.0f64);
    for t in 1..=100 {
        let g: f64 = rng.gen_range(-2.0..2.0);
        let lr = rng.gen_range(1e-4..1e-1);
        adamw_step(p.iter_mut(), &grad("w", g), &mut st, lr).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x -= lr * mh / (vh.sqrt() + 1e-8);
        assert!((p["w"].data()[0] - x).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn clipping_caps_the_global_norm() {
    let mut g = BTreeMap::from([("a".to_string(), vec![3.0f64, 0.0]), ("b".to_string(), vec![4.0])]);
    let n = clip_global_norm(&mut g, 1.0);
    assert_eq!(n, 5.0);
    assert!((g["a"][0] - 0.6).abs() < 1e-15 && (g["b"][0] - 0.8).abs() < 1e-15);
    let mut small = BTreeMap::from([("a".to_string(), vec![0.1])]);
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small["a"][0], 0.1);
}

// ---- schedule ----

#[test]
fn schedule_landmarks() {
    let s = Schedule::new(100, 20, 1e-3).unwrap();
    assert_eq!(lr_at(20, &s), 1e-3);
    assert!(lr_at(100, &s).abs() < 1e-18);
    assert!((lr_at(60, &s) - 0.5e-3).abs() < 1e-15);
    assert!((lr_at(0, &s) - 1e-3 / 20.0).abs() < 1e-18);
    // continuous at the junction: the last warmup step already reaches the peak
    assert_eq!(lr_at(19, &s), lr_at(20, &s));
}

#[test]
fn schedule_validation() {
    assert!(Schedule::new(10, 0, 1e-3).is_err());
    assert!(Schedule::new(10, 10, 1e-3).is_err());
    assert!(Schedule::new(10, 3, 0.0).is_err());
}

// ---- loop ----

fn tiny_data(seed: u64) -> TrajectoryDataset {
    let p = FamilyParams {
        velocity: vec![0.5, 0.0],
        dt: 1.0 / 16.0,
        modes: 2,
        ..Default::default()
    };
    gen_dataset(Family::AdvectionConst, &p, 10, 7, &[8, 8], seed).unwrap()
}

fn tiny_net() -> FlowerParams<f64> {
    FlowerParams::init(&FlowerConfig::next_step(2, 1, 2, 4, 2, 2), 5).unwrap()
}

fn quick_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr_peak: 1e-3,
        warmup_epochs: 1,
        windows_per_traj: Some(2),
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn zero_epochs_returns_initial_params() {
    let d = tiny_data(1);
    let init = tiny_net();
    let out = train_loop(init.clone(), &d, &d, &quick_cfg(0), &Serial, &NoClock, &mut |_| {}).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.model.params.tensors(), init.tensors());
}

#[test]
fn same_seed_same_records() {
    let d = tiny_data(1);
    let run = || {
        let mut lines = Vec::new();
        let out = train_loop(tiny_net(), &d, &d, &quick_cfg(2), &Serial, &NoClock, &mut |r| lines.push(r.to_line())).unwrap();
        (out.records, lines, out.model.params)
    };
    let (a, la, pa) = run();
    let (b, lb, pb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(pa.tensors(), pb.tensors());
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|r| r.train_loss.is_finite() && r.valid_vrmse.is_finite()));
    assert!(a[0].step < a[1].step);
}

#[test]
fn short_trajectories_are_rejected() {
    let p = FamilyParams {
        velocity: vec![0.0, 0.0],
        ..Default::default()
    };
    let d = gen_dataset(Family::AdvectionConst, &p, 2, 5, &[8, 8], 1).unwrap();
    let short = TrajectoryDataset::new(
        d.family,
        vec![],
        d.dt,
        0,
        d.geom().clone(),
        1,
        4,
        vec![d.trajectory(0)[..4 * 64].to_vec()],
    )
    .unwrap();
    let err = train_loop(tiny_net(), &short, &short, &quick_cfg(1), &Serial, &NoClock, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::DatasetTooShort { need: 5, .. }), "{err:?}");
}

#[test]
fn training_loss_decreases_on_a_learnable_toy() {
    // 1D advection by a quarter cell per frame
    let p = FamilyParams {
        velocity: vec![0.25 / 16.0 / 0.05],
        modes: 2,
        ..Default::default()
    };
    let d = gen_dataset(Family::AdvectionConst, &p, 8, 9, &[16], 4).unwrap();
    let init = FlowerParams::<f64>::init(&FlowerConfig::next_step(1, 1, 2, 4, 2, 2), 8).unwrap();
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 4,
        lr_peak: 1e-3,
        warmup_epochs: 1,
        seed: 2,
        ..Default::default()
    };
    let out = train_loop(init, &d, &d, &cfg, &Serial, &NoClock, &mut |_| {}).unwrap();
    let losses: Vec<f64> = out.records.iter().map(|r| r.train_loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

// ---- rollout ----

#[test]
fn persistence_on_static_data_is_perfect() {
    let p = FamilyParams {
        velocity: vec![0.0, 0.0],
        ..Default::default()
    };
    let d = gen_dataset(Family::AdvectionConst, &p, 1, 25, &[8, 8], 3).unwrap();
    let r = rollout(&Persistence { channels: 1 }, &d, 0, 0, 20).unwrap();
    assert_eq!(r.vrmse.len(), 20);
    assert!(r.vrmse.iter().all(|&v| v == 0.0));
}

#[test]
fn persistence_error_grows_with_lead_time_on_advection() {
    // one cell per frame on a 32-cell loop: error grows until half a period
    let p = FamilyParams {
        velocity: vec![1.0 / 32.0 / 0.05, 0.0],
        ..Default::default()
    };
    let d = gen_dataset(Family::AdvectionConst, &p, 1, 25, &[32, 32], 5).unwrap();
    let r = rollout(&Persistence { channels: 1 }, &d, 0, 0, 12).unwrap();
    // the persisted frame is frame 3; step k compares it with frame 4 + k
    for (k, &v) in r.vrmse.iter().enumerate() {
        let want = vrmse(&d.frame(0, 3), &d.frame(0, 4 + k)).unwrap();
        assert!((v - want).abs() < 1e-12);
    }
    for w in r.vrmse.windows(2) {
        assert!(w[1] > w[0], "{:?}", r.vrmse);
    }
}

#[test]
fn rollout_past_the_data_is_rejected() {
    let d = tiny_data(2);
    let err = rollout(&Persistence { channels: 1 }, &d, 0, 0, 20).unwrap_err();
    assert_eq!(err, Error::HorizonExceedsTruth { horizon: 20, available: 3 });
}

// ---- normaliser ----

#[test]
fn normalizer_round_trips_and_standardises() {
    let d = tiny_data(3);
    let n = Normalizer::fit(&d);
    assert!(n.enabled);
    let f = d.frame(0, 0).cast::<f64>();
    let back = n.inverse(&n.forward(&f));
    for (a, b) in back.data().iter().zip(f.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let off = Normalizer::identity(1);
    assert_eq!(off.forward(&f), f);
}
