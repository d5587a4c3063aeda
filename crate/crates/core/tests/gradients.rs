mod common;

use common::{check_f32, check_f64, random_tensor};
use deproj_core::tensor::{Scalar, Tape, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-3;
const TOL64: f64 = 1e-5;

/// `sum(r * x)` with a fixed pseudo-random `r`, so every output element
/// carries a distinct weight.
fn weighted_sum<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Var {
    let shape = tape.value(x).shape().to_vec();
    let r = random_tensor(&shape, 4242, -1.0, 1.0).cast::<T>();
    let r = tape.constant(r);
    let p = tape.mul(x, r).unwrap();
    tape.sum(p)
}

#[test]
fn conv_2d_sum_matches_finite_differences() {
    let inputs = vec![
        random_tensor(&[1, 1, 6, 6], 1, -1.0, 1.0),
        random_tensor(&[2, 1, 3, 3], 2, -1.0, 1.0),
        random_tensor(&[2], 3, -1.0, 1.0),
    ];
    let build = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.conv(v[0], v[1], v[2], &[1, 1], &[0, 0]).unwrap();
        t.sum(y)
    };
    let err = check_f64(&build, &inputs, H);
    assert!(err < TOL64, "max rel err {err}");
}

fn conv_case(x: &[usize], w: &[usize], stride: &[usize], pad: &[usize], seed: u64) -> f64 {
    let inputs = vec![
        random_tensor(x, seed, -1.0, 1.0),
        random_tensor(w, seed + 1, -1.0, 1.0),
        random_tensor(&[w[0]], seed + 2, -1.0, 1.0),
    ];
    let (stride, pad) = (stride.to_vec(), pad.to_vec());
    let build = move |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.conv(v[0], v[1], v[2], &stride, &pad).unwrap();
        weighted_sum(t, y)
    };
    check_f64(&build, &inputs, H)
}

#[test]
fn conv_strided_padded_1d_2d_3d() {
    let cases: [(&[usize], &[usize], &[usize], &[usize]); 5] = [
        (&[2, 2, 7], &[3, 2, 3], &[2], &[1]),
        (&[1, 3, 5, 6], &[2, 3, 3, 3], &[2, 2], &[1, 1]),
        (&[2, 1, 8, 5], &[2, 1, 2, 3], &[1, 2], &[0, 1]),
        (&[1, 2, 4, 6, 5], &[3, 2, 3, 3, 3], &[2, 2, 2], &[1, 1, 1]),
        (&[1, 2, 3, 4, 4], &[2, 2, 1, 1, 1], &[1, 1, 1], &[0, 0, 0]),
    ];
    for (i, (x, w, s, p)) in cases.iter().enumerate() {
        let err = conv_case(x, w, s, p, 10 * i as u64 + 7);
        assert!(err < TOL64, "case {i}: max rel err {err}");
    }
}

#[test]
fn dense_matches_finite_differences() {
    let inputs = vec![
        random_tensor(&[3, 8], 11, -1.0, 1.0),
        random_tensor(&[4, 8], 12, -1.0, 1.0),
        random_tensor(&[4], 13, -1.0, 1.0),
    ];
    let build = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.dense(v[0], v[1], v[2]).unwrap();
        weighted_sum(t, y)
    };
    assert!(check_f64(&build, &inputs, H) < TOL64);
}

#[test]
fn leaky_relu_gradient_at_negative_one() {
    let inputs = vec![Tensor::<f64>::new(vec![1], vec![-1.0]).unwrap()];
    let build = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.leaky_relu(v[0], 0.2);
        t.sum(y)
    };
    let (tape, vars, loss) = common::eval_loss(&build, &inputs);
    let g = tape.backward(loss).unwrap().get(vars[0]).unwrap().data()[0];
    assert!((g - 0.2).abs() < 1e-12);
    assert!(check_f64(&build, &inputs, H) < TOL64);
}

#[test]
fn elementwise_ops_match_finite_differences() {
    // Inputs kept away from the leaky-relu kink and the clamp edges.
    let mut x = random_tensor(&[2, 3, 4], 21, 0.05, 1.0);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        if i % 3 == 0 {
            *v = -*v;
        }
    }
    let y = random_tensor(&[2, 3, 4], 22, -1.0, 1.0);
    let inputs = vec![x, y];
    type Build = fn(&mut Tape<f64>, &[Var]) -> Var;
    let ops: Vec<(&str, Build)> = vec![
        ("leaky_relu", |t, v| {
            let y = t.leaky_relu(v[0], 0.2);
            weighted_sum(t, y)
        }),
        ("sigmoid", |t, v| {
            let y = t.sigmoid(v[0]);
            weighted_sum(t, y)
        }),
        ("exp", |t, v| {
            let y = t.exp(v[0]);
            weighted_sum(t, y)
        }),
        ("square", |t, v| {
            let y = t.square(v[0]);
            weighted_sum(t, y)
        }),
        ("mul", |t, v| {
            let y = t.mul(v[0], v[1]).unwrap();
            weighted_sum(t, y)
        }),
        ("sub", |t, v| {
            let y = t.sub(v[0], v[1]).unwrap();
            weighted_sum(t, y)
        }),
        ("scale_offset", |t, v| {
            let y = t.scale(v[0], -1.5);
            let y = t.offset(y, 0.25);
            weighted_sum(t, y)
        }),
        ("clamp", |t, v| {
            let y = t.clamp(v[0], -0.5, 0.5);
            weighted_sum(t, y)
        }),
        ("mean", |t, v| {
            let s = t.square(v[0]);
            t.mean(s)
        }),
        ("mse", |t, v| t.mse(v[0], v[1]).unwrap()),
        ("upsample", |t, v| {
            let y = t.upsample_nearest(v[0], &[2]).unwrap();
            weighted_sum(t, y)
        }),
        ("reshape_permute", |t, v| {
            let y = t.reshape(v[0], &[6, 4]).unwrap();
            let y = t.permute(y, &[1, 0]).unwrap();
            weighted_sum(t, y)
        }),
        ("concat", |t, v| {
            let y = t.concat(v[0], v[1], 1).unwrap();
            weighted_sum(t, y)
        }),
        ("project", |t, v| {
            let y = t.project(v[0], 1, &[0.2, 0.3, 0.5]).unwrap();
            weighted_sum(t, y)
        }),
    ];
    for (name, op) in ops {
        let err = check_f64(&op, &inputs, H);
        assert!(err < TOL64, "{name}: max rel err {err}");
    }
}

#[test]
fn upsample_2d_and_3d() {
    let build = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.upsample_nearest(v[0], &[2, 3]).unwrap();
        weighted_sum(t, y)
    };
    assert!(check_f64(&build, &[random_tensor(&[2, 2, 3, 2], 31, -1.0, 1.0)], H) < TOL64);
    let build = |t: &mut Tape<f64>, v: &[Var]| {
        let y = t.upsample_nearest(v[0], &[2, 1, 2]).unwrap();
        weighted_sum(t, y)
    };
    assert!(check_f64(&build, &[random_tensor(&[1, 2, 2, 3, 2], 32, -1.0, 1.0)], H) < TOL64);
}

fn composite<T: Scalar>(t: &mut Tape<T>, v: &[Var]) -> Var {
    let h = t.conv(v[0], v[1], v[2], &[2, 2], &[1, 1]).unwrap();
    let h = t.leaky_relu(h, T::lit(0.2));
    let flat = t.reshape(h, &[2, 3 * 4 * 4]).unwrap();
    let y = t.dense(flat, v[3], v[4]).unwrap();
    let target = t.constant(random_tensor(&[2, 5], 99, 0.0, 1.0).cast::<T>());
    t.mse(y, target).unwrap()
}

fn composite_inputs() -> Vec<Tensor<f64>> {
    vec![
        random_tensor(&[2, 2, 8, 8], 41, -1.0, 1.0),
        random_tensor(&[3, 2, 3, 3], 42, -0.5, 0.5),
        random_tensor(&[3], 43, -0.1, 0.1),
        random_tensor(&[5, 48], 44, -0.3, 0.3),
        random_tensor(&[5], 45, -0.1, 0.1),
    ]
}

#[test]
fn composite_network_32_and_64_bit() {
    let inputs = composite_inputs();
    let e64 = check_f64(&composite::<f64>, &inputs, H);
    assert!(e64 < 1e-6, "64-bit max rel err {e64}");
    let e32 = check_f32(&composite::<f32>, &composite::<f64>, &inputs, H);
    assert!(e32 < 1e-4, "32-bit max rel err {e32}");
}

#[test]
fn backward_twice_is_identical() {
    let inputs: Vec<Tensor<f32>> = composite_inputs().iter().map(|t| t.cast()).collect();
    let (tape, vars, loss) = common::eval_loss(&composite::<f32>, &inputs);
    let a = tape.backward(loss).unwrap();
    let b = tape.backward(loss).unwrap();
    for v in vars {
        assert_eq!(a.get(v), b.get(v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear_in_input(
        seed in 0u64..10_000,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        h in 3usize..8,
        w in 3usize..8,
    ) {
        let u = random_tensor(&[1, 2, h, w], seed, -1.0, 1.0);
        let v = random_tensor(&[1, 2, h, w], seed + 1, -1.0, 1.0);
        let k = random_tensor(&[3, 2, 3, 3], seed + 2, -1.0, 1.0);
        let conv = |x: &Tensor<f64>| {
            let mut t = Tape::<f64>::new();
            let (x, k, bias) = (
                t.constant(x.clone()),
                t.constant(k.clone()),
                t.constant(Tensor::zeros(vec![3]).unwrap()),
            );
            let y = t.conv(x, k, bias, &[2, 1], &[1, 1]).unwrap();
            t.value(y).clone()
        };
        let mix = Tensor::new(
            u.shape().to_vec(),
            u.data().iter().zip(v.data()).map(|(p, q)| a * p + b * q).collect(),
        ).unwrap();
        let lhs = conv(&mix);
        let (cu, cv) = (conv(&u), conv(&v));
        for i in 0..lhs.numel() {
            let rhs = a * cu.data()[i] + b * cv.data()[i];
            prop_assert!((lhs.data()[i] - rhs).abs() < 1e-5);
        }
    }

    #[test]
    fn upsample_preserves_mean(seed in 0u64..10_000, n in 1usize..7, f in 1usize..4) {
        let x = random_tensor(&[1, 2, n, n + 1], seed, -1.0, 1.0);
        let mut t = Tape::<f64>::new();
        let v = t.constant(x.clone());
        let y = t.upsample_nearest(v, &[f, f]).unwrap();
        let mean = |t: &Tensor<f64>| t.data().iter().sum::<f64>() / t.numel() as f64;
        prop_assert!((mean(t.value(y)) - mean(&x)).abs() < 1e-12);
    }
}

#[test]
fn micro_model_end_to_end() {
    for seed in [1, 2] {
        let (e32, e64) = common::micro::end_to_end_errors(seed);
        assert!(e32 < 1e-4, "32-bit {e32:e}");
        assert!(e64 < 1e-6, "64-bit {e64:e}");
    }
}
