//! Acceptance criteria A1–A11, one PASS/FAIL line each.
//!
//! This target runs without the libtest harness, so its report is always
//! printed. Criteria run sequentially so the timing criterion (A10) is not
//! disturbed by concurrent work. A5–A7 share one training run.

use std::time::Instant;

use flowerkit::bench::{linear_fit, run_bench};
use flowerkit::container::{decode, encode, encode_map, Array, Meta};
use flowerkit::netcheck::{interpolate_dot_test, network_gradcheck, NetCheck};
use flowerkit::parallel::Pool;
use flowerkit::suites::{conv_worst_error, run_suite, Check, Suite};
use flowerkit_core::dataset::{gen_dataset_with, Family, FamilyParams};
use flowerkit_core::flower::{flower_forward, flower_forward_pointwise, FlowerConfig, FlowerParams};
use flowerkit_core::grid::{Boundary, Field, Geometry};
use flowerkit_core::train::{
    displacement_alignment, evaluate, rollout_score, train_loop, Clock, Persistence, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
}

fn describe(checks: &[Check]) -> String {
    checks
        .iter()
        .map(|c| format!("{} = {:.3e} ({})", c.name, c.value, c.bound.describe()))
        .collect::<Vec<_>>()
        .join("; ")
}

fn run(id: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t0 = Instant::now();
    let (passed, detail) = f();
    let o = Outcome {
        id,
        passed,
        detail,
        secs: t0.elapsed().as_secs_f64(),
    };
    println!(
        "{} {} [{:.1}s] {}",
        o.id,
        if o.passed { "PASS" } else { "FAIL" },
        o.secs,
        o.detail
    );
    o
}

fn a1() -> (bool, String) {
    let cfg = FlowerConfig::next_step(2, 1, 2, 8, 2, 4);
    let t0 = Instant::now();
    let rep = network_gradcheck(&NetCheck {
        seed: 1,
        ..NetCheck::new(cfg, &[16, 16])
    })
    .expect("gradcheck runs");
    let secs = t0.elapsed().as_secs_f64();
    let worst = rep.worst().expect("groups");
    let worst_entry = rep
        .groups
        .iter()
        .max_by(|a, b| a.worst_rel.total_cmp(&b.worst_rel))
        .expect("groups");
    let all_probed = rep.groups.iter().all(|g| g.compared > 0);
    let dot = interpolate_dot_test(&[16, 16], 3, 256, Boundary::Periodic, 2).expect("dot test runs");
    let dot_clamp = interpolate_dot_test(&[16, 16], 3, 256, Boundary::Clamp, 3).expect("dot test runs");
    let dot_rel = dot.rel.max(dot_clamp.rel);
    let ok = rep.passes(1e-4) && all_probed && dot_rel <= 1e-10 && secs <= 300.0;
    (
        ok,
        format!(
            "{} groups, worst group {} rel {:.2e} (<= 1e-4); interpolate_vjp dot rel {:.2e} (<= 1e-10); {:.0}s (<= 300s); \
             diagnostic: worst single entry {} rel {:.2e}",
            rep.groups.len(),
            worst.name,
            worst.group_rel,
            dot_rel,
            secs,
            worst_entry.name,
            worst_entry.worst_rel,
        ),
    )
}

fn a2() -> (bool, String) {
    let cfg = FlowerConfig::next_step(2, 1, 2, 32, 4, 4);
    let p = FlowerParams::<f64>::init(&cfg, 4).unwrap();
    let g = Geometry::unit(&[32, 32], Boundary::Periodic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut equal = 0;
    for _ in 0..10 {
        let u = Field::from_fn(g.clone(), 4, |_, _| rng.gen_range(-2.0..2.0));
        let a = flower_forward(&u, &p).unwrap();
        let b = flower_forward_pointwise(&u, &p).unwrap();
        if a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            equal += 1;
        }
    }
    (equal == 10, format!("{equal}/10 inputs bitwise equal"))
}

fn a3() -> (bool, String) {
    let errs: Vec<(usize, f64)> = [1, 3, 5].iter().map(|&k| (k, conv_worst_error(k, 20, 40 + k as u64).unwrap())).collect();
    let ok = errs.iter().all(|(_, e)| *e <= 1e-12);
    (
        ok,
        errs.iter()
            .map(|(k, e)| format!("{k}x{k}: {e:.2e}"))
            .collect::<Vec<_>>()
            .join(", ")
            + " (<= 1e-12, 20 trials each)",
    )
}

fn suite_outcome(suites: &[Suite]) -> (bool, String) {
    let checks: Vec<Check> = suites.iter().flat_map(|&s| run_suite(s).expect("suite runs")).collect();
    (checks.iter().all(Check::passed), describe(&checks))
}

struct Wall(Instant);

impl Clock for Wall {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Measurements from the shared A5–A7 run.
struct Learning {
    model: f64,
    persistence: f64,
    rollout_model: f64,
    rollout_persistence: f64,
    align_enc0: f64,
    align_bot: f64,
    secs: f64,
}

fn learning_run() -> Learning {
    let t0 = Instant::now();
    let pool = Pool::from_env();
    let velocity = vec![0.4, 0.25];
    let params = FamilyParams {
        velocity: velocity.clone(),
        dt: 0.05,
        ..Default::default()
    };
    let ds = gen_dataset_with(&pool, Family::AdvectionConst, &params, 200, 24, &[64, 64], 7).unwrap();
    let (train, valid, test) = ds.split_train_valid_test();
    let cfg = FlowerConfig::next_step(2, 1, 2, 32, 4, 4);
    let init = FlowerParams::<f32>::init(&cfg, 11).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 8,
        lr_peak: 1e-3,
        windows_per_traj: Some(4),
        valid_windows_per_traj: Some(2),
        seed: 3,
        ..Default::default()
    };
    let out = train_loop(init, &train, &valid, &tc, &pool, &Wall(Instant::now()), &mut |r| {
        println!("  {}", r.to_line())
    })
    .unwrap();
    let m = &out.model;
    let persist = Persistence { channels: 1 };
    let reference: Vec<f64> = velocity.iter().map(|v| -v).collect();
    Learning {
        model: evaluate(&pool, m, &test, None).unwrap(),
        persistence: evaluate(&pool, &persist, &test, None).unwrap(),
        rollout_model: rollout_score(&pool, m, &test, 20).unwrap(),
        rollout_persistence: rollout_score(&pool, &persist, &test, 20).unwrap(),
        align_enc0: displacement_alignment(&pool, m, &test, "enc0", &reference).unwrap(),
        align_bot: displacement_alignment(&pool, m, &test, "bot", &reference).unwrap(),
        secs: t0.elapsed().as_secs_f64(),
    }
}

fn a10() -> (bool, String) {
    let cfg = FlowerConfig::next_step(2, 1, 2, 32, 4, 4);
    let shapes = vec![vec![64, 64], vec![128, 128], vec![256, 256]];
    let rows = run_bench(&cfg, &shapes, 1, 7, 0, false).unwrap();
    let x: Vec<f64> = rows.iter().map(|r| r.pixels as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.selfwarp_secs).collect();
    let fit = linear_fit(&x, &y);
    let ratios: Vec<String> = rows
        .windows(2)
        .map(|w| format!("{:.2}", w[1].selfwarp_secs / w[0].selfwarp_secs))
        .collect();
    (
        fit.r2 >= 0.98,
        format!(
            "R^2 = {:.4} (>= 0.98); ms {:?}; time ratio per 4x pixels {}",
            fit.r2,
            y.iter().map(|s| (s * 1e4).round() / 10.0).collect::<Vec<_>>(),
            ratios.join(", ")
        ),
    )
}

fn random_name(rng: &mut ChaCha8Rng) -> String {
    const CH: &[u8] = b"abcXYZ019._-";
    let len = rng.gen_range(1..10);
    (0..len).map(|_| CH[rng.gen_range(0..CH.len())] as char).collect()
}

fn random_array(rng: &mut ChaCha8Rng) -> Array {
    let rank = rng.gen_range(1..=5);
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(0..4)).collect();
    let n: usize = shape.iter().product();
    if rng.gen_bool(0.5) {
        Array::f32(&shape, (0..n).map(|_| f32::from_bits(rng.gen())).collect()).unwrap()
    } else {
        Array::f64(&shape, (0..n).map(|_| f64::from_bits(rng.gen())).collect()).unwrap()
    }
}

fn a11() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = Vec::new();
    for case in 0..100 {
        let mut records: Vec<(String, Array)> = Vec::new();
        for _ in 0..rng.gen_range(0..6) {
            let name = random_name(&mut rng);
            if records.iter().all(|(n, _)| *n != name) {
                records.push((name, random_array(&mut rng)));
            }
        }
        let mut meta = Meta::new();
        for _ in 0..rng.gen_range(0..4) {
            meta.insert(random_name(&mut rng), format!("v={}", rng.gen::<u32>()));
        }
        let bytes = encode(&records, &meta).unwrap();
        let (back, meta_back) = decode(&bytes).unwrap();
        let identity = back.len() == records.len()
            && records.iter().all(|(n, a)| back.get(n).is_some_and(|b| b.bits_eq(a)))
            && meta_back == meta;
        let rewritten = encode_map(&back, &meta_back).unwrap();
        records.shuffle(&mut rng);
        let reordered = encode(&records, &meta).unwrap();
        if !identity || rewritten != bytes || reordered != bytes {
            failures.push(case);
        }
    }
    (
        failures.is_empty(),
        format!("{}/100 cases round-trip bitwise with canonical bytes; failing: {failures:?}", 100 - failures.len()),
    )
}

fn main() {
    let mut outcomes = vec![
        run("A1", a1),
        run("A2", a2),
        run("A3", a3),
        run("A4", || suite_outcome(&[Suite::Characteristics, Suite::Taylor])),
    ];

    let learn = learning_run();
    let ratio = learn.model / learn.persistence;
    let rollout_ratio = learn.rollout_model / learn.rollout_persistence;
    println!("  shared training run: {:.0}s", learn.secs);
    outcomes.push(run("A5", || {
        (
            ratio <= 0.2 && learn.secs <= 3600.0,
            format!(
                "test VRMSE {:.4e} vs persistence {:.4e}: ratio {ratio:.4} (<= 0.2); run {:.0}s (<= 3600s)",
                learn.model, learn.persistence, learn.secs
            ),
        )
    }));
    outcomes.push(run("A6", || {
        (
            rollout_ratio <= 0.5,
            format!(
                "1:20 rollout {:.4e} vs persistence {:.4e}: ratio {rollout_ratio:.4} (<= 0.5)",
                learn.rollout_model, learn.rollout_persistence
            ),
        )
    }));
    outcomes.push(run("A7", || {
        (
            learn.align_enc0 >= 0.8,
            format!(
                "enc0 mean cosine with -v {:.4} (>= 0.8); diagnostic: bottleneck {:.4}",
                learn.align_enc0, learn.align_bot
            ),
        )
    }));

    outcomes.push(run("A8", || suite_outcome(&[Suite::Rays, Suite::Eikonal])));
    outcomes.push(run("A9", || suite_outcome(&[Suite::Kinetic])));
    outcomes.push(run("A10", a10));
    outcomes.push(run("A11", a11));

    println!("---");
    for o in &outcomes {
        println!("{:<4} {}", o.id, if o.passed { "PASS" } else { "FAIL" });
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all {} criteria passed", outcomes.len());
}
