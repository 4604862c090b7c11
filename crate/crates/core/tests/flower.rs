use flowerkit_core::diff::check::{gradcheck, GradCheckOptions, NamedTensor};
use flowerkit_core::diff::{Tape, Tensor, Var};
use flowerkit_core::flower::*;
use flowerkit_core::grid::{Boundary, Field, Geometry};
use flowerkit_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_field(geom: &Geometry, c: usize, rng: &mut ChaCha8Rng) -> Field<f64> {
    let n = c * geom.len();
    Field::new(geom.clone(), c, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn randomize(t: &mut Tensor<f64>, scale: f64, rng: &mut ChaCha8Rng) {
    for v in t.data_mut() {
        *v = scale * rng.gen_range(-1.0..1.0);
    }
}

#[test]
fn parameter_counts() {
    assert_eq!(affine_count(2, 3), 9);
    let p = SelfwarpParams::<f64>::init(4, 4, 2, 2, 0).unwrap();
    assert_eq!(p.num_scalars(), 60);
    let cfg = FlowerConfig::next_step(2, 1, 2, 8, 2, 4);
    let params = FlowerParams::<f64>::init(&cfg, 1).unwrap();
    assert_eq!(params.num_scalars(), count_params(&cfg));
}

#[test]
fn zero_displacement_warp_is_the_value_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = Geometry::unit(&[8, 8], Boundary::Clamp).unwrap();
    let u = random_field(&g, 4, &mut rng);
    let p = SelfwarpParams::<f64>::init(4, 6, 3, 2, 7).unwrap();
    let out = selfwarp(&u, &p).unwrap();
    let mut tape = Tape::new();
    let v = tape.constant(&[6, 4], p.v.data().to_vec()).unwrap();
    let b = tape.constant(&[6], p.vb.data().to_vec()).unwrap();
    let x = tape.constant(&u.tensor_shape(), u.data().to_vec()).unwrap();
    let y = tape.matmul_pointwise(v, Some(b), x).unwrap();
    assert_eq!(out.data(), tape.value(y));
}

#[test]
fn constant_one_cell_displacement_shifts_circularly() {
    let g = Geometry::unit(&[4], Boundary::Periodic).unwrap();
    let u = Field::new(g.clone(), 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let mut p = SelfwarpParams::<f64>::init(1, 1, 1, 1, 0).unwrap();
    p.v.data_mut()[0] = 1.0;
    p.vb.data_mut()[0] = 0.0;
    p.g_b2.data_mut()[0] = g.spacing(0);
    assert_eq!(selfwarp(&u, &p).unwrap().data(), &[2.0, 3.0, 4.0, 1.0]);
}

fn warp_tensors(p: &SelfwarpParams<f64>) -> Vec<NamedTensor> {
    vec![
        NamedTensor::new("V", p.v.shape(), p.v.data().to_vec()),
        NamedTensor::new("Vb", p.vb.shape(), p.vb.data().to_vec()),
        NamedTensor::new("g.w1", p.g_w1.shape(), p.g_w1.data().to_vec()),
        NamedTensor::new("g.b1", p.g_b1.shape(), p.g_b1.data().to_vec()),
        NamedTensor::new("g.w2", p.g_w2.shape(), p.g_w2.data().to_vec()),
        NamedTensor::new("g.b2", p.g_b2.shape(), p.g_b2.data().to_vec()),
    ]
}

fn warp_vars(v: &[Var], heads: usize) -> SelfwarpVars {
    SelfwarpVars {
        v: v[0],
        vb: v[1],
        g_w1: v[2],
        g_b1: v[3],
        g_w2: v[4],
        g_b2: v[5],
        heads,
    }
}

#[test]
fn selfwarp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Geometry::unit(&[8, 8], Boundary::Periodic).unwrap();
    let u = random_field(&g, 4, &mut rng);
    let mut p = SelfwarpParams::<f64>::init(4, 6, 3, 2, 3).unwrap();
    randomize(&mut p.g_w2, 0.1, &mut rng);
    randomize(&mut p.g_b2, 0.1, &mut rng);
    let readout: Vec<f64> = (0..6 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut params = warp_tensors(&p);
    params.push(NamedTensor::new("u", &u.tensor_shape(), u.data().to_vec()));
    let report = gradcheck(
        &params,
        |t, v| {
            let w = record_selfwarp(t, v[6], &warp_vars(v, 3), &g, true)?;
            let r = t.constant(&[6, 8, 8], readout.clone())?;
            let m = t.mul(w.out, r)?;
            Ok(t.sum(m))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    for grp in &report.groups {
        assert!(grp.compared > 0, "{} compared nothing", grp.name);
        assert!(grp.worst_rel <= 1e-5, "{}: {:e}", grp.name, grp.worst_rel);
    }
}

#[test]
fn cancelling_idproj_gives_zero_block_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Geometry::unit(&[16, 16], Boundary::Periodic).unwrap();
    let u = random_field(&g, 4, &mut rng);
    let mut p = FlowerBlockParams::<f64>::init(4, 8, 2, 4, 2, 5).unwrap();
    p.idproj_w = Tensor::new(p.warp.v.shape(), p.warp.v.data().iter().map(|v| -v).collect()).unwrap();
    p.idproj_b = Tensor::new(p.warp.vb.shape(), p.warp.vb.data().iter().map(|v| -v).collect()).unwrap();
    let out = flower_block(&u, &p).unwrap();
    assert_eq!(out.tensor_shape(), vec![8, 16, 16]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn block_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = Geometry::unit(&[8, 8], Boundary::Clamp).unwrap();
    let u = random_field(&g, 4, &mut rng);
    let mut p = FlowerBlockParams::<f64>::init(4, 6, 3, 3, 2, 9).unwrap();
    randomize(&mut p.warp.g_w2, 0.1, &mut rng);
    randomize(&mut p.warp.g_b2, 0.1, &mut rng);
    randomize(&mut p.gamma, 1.0, &mut rng);
    randomize(&mut p.beta, 1.0, &mut rng);
    let readout: Vec<f64> = (0..6 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut params = warp_tensors(&p.warp);
    for (n, t) in [("idproj.w", &p.idproj_w), ("idproj.b", &p.idproj_b), ("gamma", &p.gamma), ("beta", &p.beta)] {
        params.push(NamedTensor::new(n, t.shape(), t.data().to_vec()));
    }
    params.push(NamedTensor::new("u", &u.tensor_shape(), u.data().to_vec()));
    let report = gradcheck(
        &params,
        |t, v| {
            let vars = BlockVars {
                warp: warp_vars(v, 3),
                idproj_w: v[6],
                idproj_b: v[7],
                gamma: v[8],
                beta: v[9],
                groups: 3,
            };
            let b = record_block(t, v[10], &vars, &g, true)?;
            let r = t.constant(&[6, 8, 8], readout.clone())?;
            let m = t.mul(b.out, r)?;
            Ok(t.sum(m))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    for grp in &report.groups {
        assert!(grp.compared > 0, "{} compared nothing", grp.name);
        assert!(grp.worst_rel <= 1e-5, "{}: {:e}", grp.name, grp.worst_rel);
    }
}

#[test]
fn forward_shape_contract_and_determinism() {
    let cfg = FlowerConfig::next_step(2, 4, 3, 16, 4, 4);
    let p = FlowerParams::<f32>::init(&cfg, 11).unwrap();
    let g = Geometry::unit(&[32, 32], Boundary::Periodic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u = random_field(&g, 16, &mut rng).cast::<f32>();
    let a = flower_forward(&u, &p).unwrap();
    assert_eq!(a.tensor_shape(), vec![4, 32, 32]);
    let b = flower_forward(&u, &FlowerParams::<f32>::init(&cfg, 11).unwrap()).unwrap();
    assert_eq!(a.data(), b.data());
    assert!(a.is_finite());
}

#[test]
fn shape_and_config_errors() {
    let cfg = FlowerConfig::next_step(2, 1, 3, 8, 2, 4);
    let p = FlowerParams::<f64>::init(&cfg, 0).unwrap();
    let g = Geometry::unit(&[12, 10], Boundary::Periodic).unwrap();
    let u = Field::<f64>::zeros(g, 4);
    assert_eq!(
        flower_forward(&u, &p).err(),
        Some(Error::ShapeNotDivisible { axis: 1, len: 10, divisor: 4 })
    );
    let bad = FlowerConfig { heads: 3, ..cfg.clone() };
    assert!(matches!(FlowerParams::<f64>::init(&bad, 0), Err(Error::ConfigInvalid(_))));
}

#[test]
fn reduced_network_gradients_match_finite_differences() {
    // same reduced network as the acceptance run, with a sampled subset of
    // entries per tensor to keep this test quick
    let cfg = FlowerConfig::next_step(2, 1, 2, 8, 2, 4);
    let mut p = FlowerParams::<f64>::init(&cfg, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, t) in p.iter_mut() {
        if name.ends_with("g.w2") || name.ends_with("g.b2") {
            randomize(t, 0.05, &mut rng);
        }
    }
    let g = Geometry::unit(&[16, 16], Boundary::Periodic).unwrap();
    let u = random_field(&g, 4, &mut rng);
    let target: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let names: Vec<String> = p.iter().map(|(n, _)| n.clone()).collect();
    let params: Vec<NamedTensor> = p
        .iter()
        .map(|(n, t)| NamedTensor::new(n.clone(), t.shape(), t.data().to_vec()))
        .collect();
    let report = gradcheck(
        &params,
        |t, v| loss(t, v, &names, &cfg, &u, &target),
        &GradCheckOptions {
            max_entries: 6,
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap();
    for grp in &report.groups {
        assert!(grp.worst_rel <= 1e-4, "{}: {:e}", grp.name, grp.worst_rel);
    }
    assert!(report.groups.iter().all(|g| g.compared > 0));
}

fn loss(
    t: &mut Tape<f64>,
    v: &[Var],
    names: &[String],
    cfg: &FlowerConfig,
    u: &Field<f64>,
    target: &[f64],
) -> Result<Var> {
    let vars = ParamVars::from_pairs(names.iter().cloned().zip(v.iter().copied()));
    let x = t.constant(&u.tensor_shape(), u.data().to_vec())?;
    let rec = record_flower(t, &vars, cfg, x, u.geom(), ForwardOptions::default())?;
    let y = t.constant(&[1, 16, 16], target.to_vec())?;
    let e = t.sub(rec.out, y)?;
    let sq = t.mul(e, e)?;
    Ok(t.mean(sq))
}

#[test]
fn identity_at_init_matches_pointwise_network() {
    let cfg = FlowerConfig::next_step(2, 1, 2, 8, 2, 4);
    let p = FlowerParams::<f64>::init(&cfg, 3).unwrap();
    let g = Geometry::unit(&[16, 16], Boundary::Periodic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..3 {
        let u = random_field(&g, 4, &mut rng);
        let a = flower_forward(&u, &p).unwrap();
        let b = flower_forward_pointwise(&u, &p).unwrap();
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn displacement_extraction() {
    let cfg = FlowerConfig::next_step(2, 1, 2, 8, 2, 4);
    let p = FlowerParams::<f64>::init(&cfg, 3).unwrap();
    let g = Geometry::unit(&[16, 16], Boundary::Periodic).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = random_field(&g, 4, &mut rng);
    let d = extract_displacements(&u, &p, "enc0").unwrap();
    assert_eq!(d.shape(), vec![2, 2, 16, 16]);
    assert!(d.data().iter().all(|&v| v == 0.0));
    assert_eq!(extract_displacements(&u, &p, "bot").unwrap().shape(), vec![2, 2, 8, 8]);
    assert_eq!(
        extract_displacements(&u, &p, "enc7").err(),
        Some(Error::UnknownBlock("enc7".into()))
    );
}

#[test]
fn displacement_mlp_is_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Geometry::unit(&[6, 7], Boundary::Periodic).unwrap();
    let u = random_field(&g, 3, &mut rng);
    let mut p = SelfwarpParams::<f64>::init(3, 4, 2, 2, 1).unwrap();
    randomize(&mut p.g_w2, 0.3, &mut rng);
    let n = g.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let permute = |data: &[f64], c: usize| -> Vec<f64> {
        let mut out = vec![0.0; data.len()];
        for ch in 0..c {
            for j in 0..n {
                out[ch * n + j] = data[ch * n + perm[j]];
            }
        }
        out
    };
    let up = Field::new(g.clone(), 3, permute(u.data(), 3)).unwrap();
    let d = selfwarp_displacements(&u, &p).unwrap();
    let dp = selfwarp_displacements(&up, &p).unwrap();
    assert_eq!(dp.data(), permute(d.data(), 4).as_slice());
}

#[test]
fn selfwarp_commutes_with_periodic_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = Geometry::unit(&[8, 12], Boundary::Periodic).unwrap();
    let u = random_field(&g, 3, &mut rng);
    let mut p = SelfwarpParams::<f64>::init(3, 4, 2, 2, 1).unwrap();
    randomize(&mut p.g_w2, 0.4, &mut rng);
    randomize(&mut p.g_b2, 0.4, &mut rng);
    for shift in [[1i64, 0], [3, -5], [-2, 7]] {
        let a = selfwarp(&u.roll(&shift), &p).unwrap();
        let b = selfwarp(&u, &p).unwrap().roll(&shift);
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn reordering_heads_with_downstream_rows_is_invisible() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let g = Geometry::unit(&[8, 8], Boundary::Periodic).unwrap();
    let u = random_field(&g, 3, &mut rng).cast::<f32>();
    let (heads, ch, d) = (3usize, 2usize, 2usize);
    let mut p = SelfwarpParams::<f64>::init(3, heads * ch, heads, d, 1).unwrap();
    randomize(&mut p.g_w2, 0.3, &mut rng);
    randomize(&mut p.g_b2, 0.3, &mut rng);
    let w: Vec<f64> = (0..2 * heads * ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let order = [2usize, 0, 1];
    let rows = |t: &Tensor<f64>, block: usize| -> Tensor<f64> {
        let width = t.len() / (heads * block);
        let mut out = Vec::new();
        for &h in &order {
            out.extend_from_slice(&t.data()[h * block * width..(h + 1) * block * width]);
        }
        Tensor::new(t.shape(), out).unwrap()
    };
    let mut q = p.clone();
    q.v = rows(&p.v, ch);
    q.vb = rows(&p.vb, ch);
    q.g_w2 = rows(&p.g_w2, d);
    q.g_b2 = rows(&p.g_b2, d);
    let mut wq = vec![0.0; w.len()];
    for r in 0..2 {
        for (new_h, &old_h) in order.iter().enumerate() {
            for k in 0..ch {
                wq[r * heads * ch + new_h * ch + k] = w[r * heads * ch + old_h * ch + k];
            }
        }
    }
    let apply = |p: &SelfwarpParams<f64>, w: &[f64]| -> Vec<f32> {
        let y = selfwarp(&u, &cast_warp(p)).unwrap();
        let mut t = Tape::<f32>::new();
        let wv = t.constant(&[2, heads * ch], w.iter().map(|&v| v as f32).collect()).unwrap();
        let x = t.constant(&y.tensor_shape(), y.data().to_vec()).unwrap();
        let z = t.matmul_pointwise(wv, None, x).unwrap();
        t.value(z).to_vec()
    };
    let a = apply(&p, &w);
    let b = apply(&q, &wq);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
    }
}

fn cast_warp(p: &SelfwarpParams<f64>) -> SelfwarpParams<f32> {
    SelfwarpParams {
        v: p.v.cast(),
        vb: p.vb.cast(),
        g_w1: p.g_w1.cast(),
        g_b1: p.g_b1.cast(),
        g_w2: p.g_w2.cast(),
        g_b2: p.g_b2.cast(),
        heads: p.heads,
    }
}

#[test]
fn loading_mismatched_tensors_lists_names() {
    let cfg = FlowerConfig::next_step(2, 1, 2, 8, 2, 4);
    let p = FlowerParams::<f64>::init(&cfg, 0).unwrap();
    let mut map = p.into_tensors();
    map.remove("bot.warp.V");
    map.insert("extra.w".into(), Tensor::zeros(&[1]));
    match FlowerParams::from_tensors(&cfg, map) {
        Err(Error::ParamMismatch { missing, extra }) => {
            assert_eq!(missing, vec!["bot.warp.V".to_string()]);
            assert_eq!(extra, vec!["extra.w".to_string()]);
        }
        other => panic!("expected ParamMismatch, got {other:?}"),
    }
}
