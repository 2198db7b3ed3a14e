use wavemlp::gradcheck::{grad_check, grad_check_many, GradCheckConfig};
use wavemlp::suite::grad_suite;
use wavemlp::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn cfg() -> GradCheckConfig {
    GradCheckConfig {
        step: STEP,
        tol: TOL,
        max_coords: None,
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn module_suite_passes() {
    for seed in [0, 1] {
        for (name, r) in grad_suite(&cfg(), seed).unwrap() {
            assert!(r.passed(), "{} (seed {}): {:?}", name, seed, r);
            assert!(r.coords_checked > 0);
        }
    }
}

#[test]
fn suite_covers_every_family() {
    let names: Vec<String> = grad_suite(&cfg(), 0).unwrap().into_iter().map(|(n, _)| n).collect();
    for want in [
        "matmul",
        "normalize",
        "channel_mlp",
        "aggregate_tokens_h",
        "patm_None_h",
        "patm_Static_w",
        "patm_Identity_h",
        "patm_ChannelFC_w",
        "patm_DepthWise_h",
        "token_mixing",
        "block",
        "two_block_model",
    ] {
        assert!(names.iter().any(|n| n == want), "missing {}", want);
    }
}

#[test]
fn elementwise_ops() {
    let x = Tensor::uniform(&[3, 4], 0.2, 2.0, &mut rng(1));
    let checks: Vec<(&str, f64)> = vec![
        ("sqrt", grad_check(|_, v| Ok(v.sqrt()?.sum_all()), &x, STEP, TOL).unwrap().max_rel_err),
        ("cos", grad_check(|_, v| Ok(v.cos()?.sum_all()), &x, STEP, TOL).unwrap().max_rel_err),
        ("sin", grad_check(|_, v| Ok(v.sin()?.sum_all()), &x, STEP, TOL).unwrap().max_rel_err),
        ("gelu", grad_check(|_, v| Ok(v.scale(-1.3).gelu()?.sum_all()), &x, STEP, TOL).unwrap().max_rel_err),
        ("abs", grad_check(|_, v| Ok(v.scale(-1.0).abs()?.square()?.sum_all()), &x, STEP, TOL).unwrap().max_rel_err),
    ];
    for (name, err) in checks {
        assert!(err <= TOL, "{}: {}", name, err);
    }
}

#[test]
fn binary_and_broadcast_ops() {
    let mut r = rng(2);
    let a = Tensor::randn(&[2, 3, 4], &mut r);
    let b = Tensor::randn(&[4], &mut r);
    let rep = grad_check_many(
        |_, v| Ok(v[0].mul(v[1])?.sub(v[1])?.add(v[0])?.square()?.sum_all()),
        &[a.clone(), b.clone()],
        &cfg(),
    )
    .unwrap();
    assert!(rep.passed(), "{:?}", rep);
    let rep = grad_check_many(|_, v| Ok(v[0].atan2(v[1])?.sum_all()), &[a.clone(), Tensor::randn(&[2, 3, 4], &mut r)], &cfg()).unwrap();
    assert!(rep.passed(), "{:?}", rep);
    let rep = grad_check(|_, v| Ok(v.broadcast_to(&[3, 2, 4])?.square()?.sum_all()), &Tensor::randn(&[2, 4], &mut r), STEP, TOL).unwrap();
    assert!(rep.passed(), "{:?}", rep);
}

#[test]
fn shape_ops() {
    let mut r = rng(3);
    let x = Tensor::randn(&[2, 5, 4, 3], &mut r);
    let w = Tensor::randn(&[2, 5, 4, 3], &mut r);
    let cases: Vec<(&str, f64)> = vec![
        (
            "transpose",
            grad_check_many(
                |t, v| Ok(v[0].transpose(&[0, 2, 1, 3])?.mul(t.constant(w.clone().reshape(&[2, 4, 5, 3])?))?.sum_all()),
                &[x.clone()],
                &cfg(),
            )
            .unwrap()
            .max_rel_err,
        ),
        (
            "reduce_sum",
            grad_check(|_, v| Ok(v.reduce_sum(1)?.square()?.sum_all()), &x, STEP, TOL).unwrap().max_rel_err,
        ),
        (
            "pad_slice",
            grad_check(
                |_, v| Ok(v.pad_zeros(2, 1, 2)?.slice_window(2, 2, 4)?.square()?.sum_all()),
                &x,
                STEP,
                TOL,
            )
            .unwrap()
            .max_rel_err,
        ),
        (
            "patchify",
            grad_check(|_, v| Ok(v.patchify(2)?.square()?.mean_all()), &x, STEP, TOL).unwrap().max_rel_err,
        ),
        (
            "reshape",
            grad_check(|_, v| Ok(v.reshape(&[10, 12])?.matmul(v.reshape(&[12, 10])?)?.sum_all()), &x, STEP, TOL)
                .unwrap()
                .max_rel_err,
        ),
    ];
    for (name, err) in cases {
        assert!(err <= TOL, "{}: {}", name, err);
    }
}

#[test]
fn window_mix_and_layer_norm() {
    let mut r = rng(4);
    let x = Tensor::randn(&[2, 4, 5, 3], &mut r);
    let k = Tensor::randn(&[5, 3], &mut r);
    for axis in 0..3 {
        let rep = grad_check_many(
            |_, v| Ok(v[0].window_mix(v[1], axis)?.square()?.sum_all()),
            &[x.clone(), k.clone()],
            &cfg(),
        )
        .unwrap();
        assert!(rep.passed(), "axis {}: {:?}", axis, rep);
    }
    let scale = Tensor::randn(&[3], &mut r);
    let shift = Tensor::randn(&[3], &mut r);
    let rep = grad_check_many(
        |_, v| Ok(v[0].layer_norm(v[1], v[2], 1e-5)?.square()?.mul(v[0])?.sum_all()),
        &[x, scale, shift],
        &cfg(),
    )
    .unwrap();
    assert!(rep.passed(), "{:?}", rep);
}

#[test]
fn cross_entropy_and_linear() {
    let mut r = rng(5);
    let x = Tensor::randn(&[4, 6], &mut r);
    let w = Tensor::randn(&[3, 6], &mut r);
    let rep = grad_check_many(
        |_, v| v[0].linear(v[1])?.cross_entropy(&[0, 2, 1, 2]),
        &[x, w],
        &cfg(),
    )
    .unwrap();
    assert!(rep.passed(), "{:?}", rep);
}

#[test]
fn subsampled_check_is_deterministic() {
    let x = Tensor::randn(&[50], &mut rng(6));
    let c = GradCheckConfig {
        max_coords: Some(7),
        ..cfg()
    };
    let a = grad_check_many(|_, v| Ok(v[0].sin()?.sum_all()), &[x.clone()], &c).unwrap();
    let b = grad_check_many(|_, v| Ok(v[0].sin()?.sum_all()), &[x], &c).unwrap();
    assert_eq!(a.coords_checked, 7);
    assert_eq!(a.max_rel_err, b.max_rel_err);
    assert_eq!(a.worst, b.worst);
}
