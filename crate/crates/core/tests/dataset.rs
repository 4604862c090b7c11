use flowerkit_core::dataset::*;
use flowerkit_core::grid::{interpolate, Boundary, Field};
use flowerkit_core::refsolve::{characteristic_map, FluxSpec};
use flowerkit_core::Error;

fn advection(v: &[f64], dt: f64) -> FamilyParams {
    FamilyParams {
        velocity: v.to_vec(),
        dt,
        ..Default::default()
    }
}

#[test]
fn zero_velocity_frames_are_identical() {
    let d = gen_dataset(Family::AdvectionConst, &advection(&[0.0, 0.0], 0.1), 2, 6, &[16, 16], 1).unwrap();
    for i in 0..2 {
        for k in 1..6 {
            assert_eq!(d.frame(i, k), d.frame(i, 0));
        }
    }
}

#[test]
fn whole_cell_advection_is_a_roll() {
    // dt v = 1/16 = one cell per frame along x, two along -y
    let d = gen_dataset(Family::AdvectionConst, &advection(&[0.625, -1.25], 0.1), 3, 8, &[16, 16], 2).unwrap();
    for i in 0..3 {
        let f0 = d.frame(i, 0);
        for k in 0..8i64 {
            assert_eq!(d.frame(i, k as usize), f0.roll(&[k, -2 * k]), "traj {i} frame {k}");
        }
    }
}

#[test]
fn initial_conditions_have_unit_variance() {
    let d = gen_dataset(Family::AdvectionConst, &advection(&[0.3, 0.1], 0.05), 4, 5, &[32, 32], 3).unwrap();
    for i in 0..4 {
        let f = d.frame(i, 0);
        let n = f.data().len() as f64;
        let m: f64 = f.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = f.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n;
        assert!(m.abs() < 1e-6 && (var - 1.0).abs() < 1e-5, "mean {m} var {var}");
    }
}

#[test]
fn generation_is_a_pure_function_of_the_seed() {
    let p = advection(&[0.3, 0.1], 0.05);
    let a = gen_dataset(Family::AdvectionConst, &p, 5, 6, &[8, 8], 9).unwrap();
    let b = gen_dataset(Family::AdvectionConst, &p, 5, 6, &[8, 8], 9).unwrap();
    let c = gen_dataset(Family::AdvectionConst, &p, 5, 6, &[8, 8], 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.trajectory(0), c.trajectory(0));
    // trajectory i does not depend on how many others were generated
    let short = gen_dataset(Family::AdvectionConst, &p, 2, 6, &[8, 8], 9).unwrap();
    assert_eq!(short.trajectory(1), a.trajectory(1));
}

#[test]
fn burgers_frames_are_constant_along_characteristics() {
    let p = FamilyParams {
        amplitude: 0.05,
        dt: 0.02,
        ..Default::default()
    };
    let d = gen_dataset(Family::Burgers1d, &p, 2, 8, &[2048], 4).unwrap();
    for i in 0..2 {
        let u0 = d.frame(i, 0).cast::<f64>();
        for k in 1..8 {
            let t = k as f64 * 0.02;
            let phi = characteristic_map(&u0, &FluxSpec::burgers(), t).unwrap();
            let along = interpolate(&d.frame(i, k).cast::<f64>(), &phi, Boundary::Periodic).unwrap();
            let err = along.iter().zip(u0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-5, "traj {i} frame {k}: {err}");
        }
    }
}

#[test]
fn burgers_past_the_shock_is_rejected() {
    let p = FamilyParams {
        amplitude: 1.0,
        dt: 0.05,
        ..Default::default()
    };
    let err = gen_dataset(Family::Burgers1d, &p, 1, 20, &[128], 1).unwrap_err();
    assert!(matches!(err, Error::ShockWithinHorizon { .. }), "{err:?}");
}

#[test]
fn burgers_2d_runs_along_its_axis() {
    let p = FamilyParams {
        amplitude: 0.05,
        dt: 0.02,
        velocity: vec![0.0, 1.0],
        ..Default::default()
    };
    let d = gen_dataset(Family::Burgers2dAxis, &p, 1, 5, &[16, 16], 5).unwrap();
    assert_eq!(d.channels(), 1);
    assert!(d.trajectory(0).iter().all(|v| v.is_finite()));
}

#[test]
fn variable_advection_with_no_swirl_matches_constant() {
    let base = advection(&[0.3, -0.2], 0.05);
    let var = FamilyParams { swirl: 0.0, ..base.clone() };
    let a = gen_dataset(Family::AdvectionConst, &base, 1, 6, &[16, 16], 6).unwrap();
    let b = gen_dataset(Family::AdvectionVar, &var, 1, 6, &[16, 16], 6).unwrap();
    for (x, y) in a.trajectory(0).iter().zip(b.trajectory(0)) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn kinetic_stream_has_one_channel_per_direction() {
    let p = FamilyParams {
        heads: 4,
        speed: 0.5,
        dt: 0.125,
        substeps: 1,
        ..Default::default()
    };
    let d = gen_dataset(Family::KineticStream, &p, 1, 5, &[16, 16], 7).unwrap();
    assert_eq!(d.channels(), 4);
    // speed dt = 1/16: each direction node moves a whole cell per frame
    let f0 = d.frame(0, 0);
    let f1 = d.frame(0, 1);
    let n = 256;
    let head0 = Field::new(f0.geom().clone(), 1, f0.data()[..n].to_vec()).unwrap();
    assert_eq!(&f1.data()[..n], head0.roll(&[-1, 0]).data());
}

#[test]
fn invalid_parameters_are_named() {
    let err = gen_dataset(Family::AdvectionConst, &advection(&[1.0], 0.1), 1, 5, &[8, 8], 0).unwrap_err();
    assert!(matches!(err, Error::InvalidFamilyParams { family: "advection_const", .. }));
    let err = gen_dataset(Family::Burgers1d, &FamilyParams::default(), 1, 5, &[8, 8], 0).unwrap_err();
    assert!(matches!(err, Error::InvalidFamilyParams { family: "burgers_1d", .. }));
    let err = gen_dataset(Family::Custom, &FamilyParams::default(), 1, 5, &[8], 0).unwrap_err();
    assert!(matches!(err, Error::InvalidFamilyParams { family: "custom", .. }));
    let err = gen_dataset(Family::AdvectionConst, &advection(&[0.0, 0.0], 0.1), 1, 4, &[8, 8], 0).unwrap_err();
    assert!(matches!(err, Error::InvalidFamilyParams { .. }));
}

#[test]
fn split_is_eighty_ten_ten_and_disjoint() {
    let d = gen_dataset(Family::AdvectionConst, &advection(&[0.1, 0.1], 0.05), 50, 5, &[4, 4], 8).unwrap();
    let (tr, va, te) = d.split_train_valid_test();
    assert_eq!((tr.n_traj(), va.n_traj(), te.n_traj()), (40, 5, 5));
    assert_eq!((tr.split, va.split, te.split), (Split::Train, Split::Valid, Split::Test));
    let mut all: Vec<usize> = tr.ids().iter().chain(va.ids()).chain(te.ids()).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..50).collect::<Vec<_>>());
    for (k, &id) in te.ids().iter().enumerate() {
        assert_eq!(te.trajectory(k), d.trajectory(id));
    }
    assert_eq!(d.split_train_valid_test().2.ids(), te.ids());
}

#[test]
fn windows_stack_four_frames() {
    let d = gen_dataset(Family::AdvectionConst, &advection(&[0.5, 0.0], 0.05), 1, 7, &[8, 8], 9).unwrap();
    assert_eq!(d.windows_per_traj().unwrap(), 3);
    let (x, y) = d.window(0, 2).unwrap();
    assert_eq!(x.channels(), 4);
    assert_eq!(&x.data()[..64], d.frame(0, 2).data());
    assert_eq!(y, d.frame(0, 6));
    assert!(matches!(d.window(0, 3), Err(Error::DatasetTooShort { .. })));
}

#[test]
fn seeds_are_decorrelated() {
    assert_ne!(trajectory_seed(1, 0), trajectory_seed(1, 1));
    assert_ne!(trajectory_seed(1, 0), trajectory_seed(2, 0));
    // reference value of the SplitMix64 finaliser
    assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
}
