use flowerkit_core::diff::check::{dot_product_test, gradcheck, random_off_zero, random_values, GradCheckOptions, NamedTensor};
use flowerkit_core::diff::{OpKind, Tape, Var};
use flowerkit_core::grid::{Boundary, Geometry};
use flowerkit_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn nt(name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> NamedTensor {
    let n = shape.iter().product();
    NamedTensor::new(name, shape, random_values(n, rng))
}

/// Probe step for ops that are polynomial of degree <= 4 along a line,
/// where the five-point stencil is exact and a large step avoids
/// cancellation.
const POLY: f64 = 0.1;
/// Probe step for transcendental ops.
const SMOOTH: f64 = 1e-3;

fn assert_dot<F>(label: &str, h: f64, inputs: &[NamedTensor], f: F)
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let t = dot_product_test(inputs, f, h, 99).unwrap();
    assert!(!t.kink_crossed, "{label}: probe crossed a kink");
    assert!(t.rel <= 1e-10, "{label}: <u,Jd> = {} vs <J^T u,d> = {} (rel {})", t.forward, t.adjoint, t.rel);
}

#[test]
fn add_zero_is_identity_forward_and_backward() {
    let mut tape = Tape::new();
    let x = tape.param(&[3], vec![1.0f64, -2.0, 0.5]).unwrap();
    let z = tape.constant(&[3], vec![0.0; 3]).unwrap();
    let y = tape.add(x, z).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let w = tape.constant(&[3], vec![0.3, -1.0, 2.0]).unwrap();
    let p = tape.mul(y, w).unwrap();
    let l = tape.sum(p);
    let g = tape.backward(l).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.3, -1.0, 2.0]);
}

#[test]
fn gelu_at_zero() {
    let mut tape = Tape::new();
    let x = tape.param(&[1], vec![0.0f64]).unwrap();
    let y = tape.gelu(x);
    let l = tape.sum(y);
    assert_eq!(tape.value(y), &[0.0]);
    let g = tape.backward(l).unwrap();
    assert!((g.get(x).unwrap()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn sum_and_half_square_gradients() {
    let mut tape = Tape::new();
    let xs = vec![0.25f64, -1.5, 3.0, 2.0];
    let x = tape.param(&[2, 2], xs.clone()).unwrap();
    let l = tape.sum(x);
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap(), &[1.0; 4]);

    let mut tape = Tape::new();
    let x = tape.param(&[2, 2], xs.clone()).unwrap();
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let l = tape.scale(s, 0.5);
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap(), xs.as_slice());
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let x = tape.param(&[2], vec![1.0f64, 2.0]).unwrap();
    assert_eq!(tape.backward(x).err(), Some(Error::NotScalarLoss { len: 2 }));
    let l = tape.sum(x);
    tape.backward(l).unwrap();
    assert_eq!(tape.backward(l).err(), Some(Error::TapeConsumed));
}

#[test]
fn shape_mismatch_names_the_op() {
    let mut tape = Tape::<f64>::new();
    let a = tape.param(&[2], vec![0.0; 2]).unwrap();
    let b = tape.param(&[3], vec![0.0; 3]).unwrap();
    match tape.add(a, b) {
        Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "add"),
        other => panic!("expected ShapeMismatch, got {other:?}"),
    }
    let w = tape.param(&[4, 5], vec![0.0; 20]).unwrap();
    match tape.matmul_pointwise(w, None, a) {
        Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "matmul_pointwise"),
        other => panic!("expected ShapeMismatch, got {other:?}"),
    }
}

#[test]
fn fan_out_accumulates() {
    let mut tape = Tape::new();
    let x = tape.param(&[2], vec![1.0f64, 2.0]).unwrap();
    let a = tape.add(x, x).unwrap();
    let b = tape.add(a, x).unwrap();
    let l = tape.sum(b);
    assert_eq!(tape.backward(l).unwrap().get(x).unwrap(), &[3.0, 3.0]);
}

#[test]
fn dot_product_elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = nt("a", &[3, 4, 5], &mut rng);
    let b = nt("b", &[3, 4, 5], &mut rng);
    let pos = NamedTensor::new("p", &[3, 4, 5], (0..60).map(|_| rng.gen_range(0.5..2.0)).collect());
    let off = NamedTensor::new("o", &[3, 4, 5], random_off_zero(60, 0.05, &mut rng));
    assert_dot("add", POLY, &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    assert_dot("sub", POLY, &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
    assert_dot("mul", POLY, &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
    assert_dot("div", SMOOTH, &[a.clone(), pos.clone()], |t, v| t.div(v[0], v[1]));
    assert_dot("scale", POLY, std::slice::from_ref(&a), |t, v| Ok(t.scale(v[0], -1.7)));
    assert_dot("add_const", POLY, std::slice::from_ref(&a), |t, v| Ok(t.add_const(v[0], 0.3)));
    assert_dot("gelu", SMOOTH, std::slice::from_ref(&a), |t, v| Ok(t.gelu(v[0])));
    assert_dot("relu", 1e-3, &[off], |t, v| Ok(t.relu(v[0])));
    assert_dot("sqrt", SMOOTH, &[pos], |t, v| Ok(t.sqrt(v[0])));
    assert_dot("mean", POLY, std::slice::from_ref(&a), |t, v| Ok(t.mean(v[0])));
    assert_dot("sum", POLY, std::slice::from_ref(&a), |t, v| Ok(t.sum(v[0])));
    assert_dot("reduce_mean", POLY, std::slice::from_ref(&a), |t, v| Ok(t.reduce_mean(v[0])));
    assert_dot("reduce_var", POLY, &[a], |t, v| Ok(t.reduce_var(v[0])));
}

#[test]
fn dot_product_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = nt("w", &[5, 3], &mut rng);
    let b = nt("b", &[5], &mut rng);
    let x = nt("x", &[3, 4, 6], &mut rng);
    let y = nt("y", &[2, 4, 6], &mut rng);
    assert_dot("matmul_pointwise", POLY, &[w.clone(), b, x.clone()], |t, v| t.matmul_pointwise(v[0], Some(v[1]), v[2]));
    assert_dot("matmul_pointwise (no bias)", POLY, &[w, x.clone()], |t, v| t.matmul_pointwise(v[0], None, v[1]));
    assert_dot("concat", POLY, &[x.clone(), y.clone()], |t, v| t.concat(&[v[0], v[1], v[0]]));
    assert_dot("slice", POLY, std::slice::from_ref(&x), |t, v| t.slice(v[0], 1, 2));

    let gamma = nt("gamma", &[6], &mut rng);
    let beta = nt("beta", &[6], &mut rng);
    let z = nt("z", &[6, 3, 5], &mut rng);
    for groups in [1, 2, 3, 6] {
        assert_dot("groupnorm", SMOOTH, &[z.clone(), gamma.clone(), beta.clone()], move |t, v| {
            t.groupnorm(v[0], v[1], v[2], groups)
        });
    }
}

#[test]
fn dot_product_convolutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (shape, bc) in [
        (vec![8usize], Boundary::Periodic),
        (vec![8, 6], Boundary::Periodic),
        (vec![8, 6], Boundary::Clamp),
        (vec![4, 4, 2], Boundary::Reflect),
    ] {
        let g = Geometry::unit(&shape, bc).unwrap();
        let d = shape.len();
        let mut xs = vec![3usize];
        xs.extend_from_slice(&shape);
        let x = nt("x", &xs, &mut rng);
        let w = nt("w", &[4, 3, 3usize.pow(d as u32)], &mut rng);
        let b = nt("b", &[4], &mut rng);
        let gg = g.clone();
        assert_dot("conv_strided", POLY, &[x.clone(), w, b.clone()], move |t, v| t.conv_strided(v[0], v[1], v[2], &gg));
        let wu = nt("wu", &[4, 3, 1 << d], &mut rng);
        let gg = g.clone();
        assert_dot("conv_transposed", POLY, &[x, wu, b], move |t, v| t.conv_transposed(v[0], v[1], v[2], &gg));
    }
}

/// Displacements in index units `cell + frac` with `frac` in [0.2, 0.8], so
/// a probe of at most 0.01 (physical) never leaves the interpolation cell.
fn off_face_displacements(n: usize, spacing: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| (rng.gen_range(-3i32..3) as f64 + rng.gen_range(0.2..0.8)) * spacing)
        .collect()
}

#[test]
fn dot_product_warp() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (shape, bc, heads) in [
        (vec![9usize], Boundary::Periodic, 1usize),
        (vec![6, 5], Boundary::Periodic, 2),
        (vec![6, 5], Boundary::Clamp, 3),
        (vec![6, 5], Boundary::Reflect, 2),
        (vec![4, 3, 5], Boundary::Periodic, 2),
    ] {
        let g = Geometry::unit(&shape, bc).unwrap();
        let d = shape.len();
        let p: usize = shape.iter().product();
        let mut vs = vec![2 * heads];
        vs.extend_from_slice(&shape);
        let mut ds = vec![heads * d];
        ds.extend_from_slice(&shape);
        let v = nt("v", &vs, &mut rng);
        // per-axis spacing differs, but the same fractional layout works
        let mut disp = Vec::with_capacity(heads * d * p);
        for _h in 0..heads {
            for a in 0..d {
                disp.extend(off_face_displacements(p, g.spacing(a), &mut rng));
            }
        }
        let disp = NamedTensor::new("disp", &ds, disp);
        let gg = g.clone();
        assert_dot("interpolate", 5e-3, &[v, disp], move |t, x| t.warp(x[0], x[1], heads, &gg));
    }
}

#[test]
fn groupnorm_of_constant_is_zero_and_gradient_matches_fd() {
    let mut tape = Tape::new();
    let x = tape.param(&[4, 3, 3], vec![2.5f64; 36]).unwrap();
    let gamma = tape.constant(&[4], vec![1.0; 4]).unwrap();
    let beta = tape.constant(&[4], vec![0.0; 4]).unwrap();
    let y = tape.groupnorm(x, gamma, beta, 2).unwrap();
    assert!(tape.value(y).iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = vec![
        nt("x", &[4, 3, 3], &mut rng),
        nt("gamma", &[4], &mut rng),
        nt("beta", &[4], &mut rng),
    ];
    let readout: Vec<f64> = random_values(36, &mut rng);
    let report = gradcheck(
        &params,
        |t, v| {
            let y = t.groupnorm(v[0], v[1], v[2], 2)?;
            let r = t.constant(&[4, 3, 3], readout.clone())?;
            let m = t.mul(y, r)?;
            Ok(t.sum(m))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    for g in &report.groups {
        assert!(g.worst_rel < 1e-6, "{}: {}", g.name, g.worst_rel);
        assert!(g.compared > 0);
    }
}

#[test]
fn groupnorm_normalises_each_group_in_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xs: Vec<f32> = (0..8 * 16).map(|_| rng.gen_range(-3.0..5.0)).collect();
    let mut tape = Tape::new();
    let x = tape.param(&[8, 4, 4], xs).unwrap();
    let gamma = tape.constant(&[8], vec![1.0; 8]).unwrap();
    let beta = tape.constant(&[8], vec![0.0; 8]).unwrap();
    let y = tape.groupnorm(x, gamma, beta, 4).unwrap();
    for grp in tape.value(y).chunks(32) {
        let n = grp.len() as f64;
        let mean: f64 = grp.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = grp.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5, "mean {mean}");
        // eps = 1e-5 shrinks the variance by var / (var + eps)
        assert!((var - 1.0).abs() < 1e-5, "var {var}");
    }
}

#[test]
fn injected_fault_is_detected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = vec![nt("w", &[3, 2], &mut rng), nt("x", &[2, 5], &mut rng)];
    let f = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.matmul_pointwise(v[0], None, v[1])?;
        let g = t.gelu(y);
        Ok(t.sum(g))
    };
    let ok = gradcheck(&params, f, &GradCheckOptions::default()).unwrap();
    assert!(ok.passes(1e-6));
    let bad = gradcheck(
        &params,
        f,
        &GradCheckOptions {
            fault: Some(OpKind::Gelu),
            ..Default::default()
        },
    )
    .unwrap();
    assert!(!bad.passes(1e-2));
}

#[test]
fn rerecorded_backward_is_bitwise_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let geom = Geometry::unit(&[8, 8], Boundary::Periodic).unwrap();
    let v = random_values(2 * 64, &mut rng);
    let d: Vec<f64> = random_values(2 * 64, &mut rng).iter().map(|x| 0.3 * x).collect();
    let run = || {
        let mut t = Tape::new();
        let vv = t.param(&[2, 8, 8], v.clone()).unwrap();
        let dd = t.param(&[2, 8, 8], d.clone()).unwrap();
        let w = t.warp(vv, dd, 1, &geom).unwrap();
        let s = t.mul(w, w).unwrap();
        let l = t.mean(s);
        let g = t.backward(l).unwrap();
        (g.get(vv).unwrap().to_vec(), g.get(dd).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}
