use deproj_core::baselines::{knn_indices, knn_select, lmmse_sample, LinearGaussianModel};
use deproj_core::data::{Pair, PairSet};
use deproj_core::rng::{self, standard_normal_f64, Purpose};
use deproj_core::{project, ProjectionSpec, Tensor};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn vector(v: &[f64]) -> Tensor<f32> {
    Tensor::new(vec![v.len()], v.iter().map(|&x| x as f32).collect()).unwrap()
}

/// `y ~ N(mu, B B^T)`, `x = A y + b + 0.1 n`.
#[test]
fn gaussian_posterior_mean_matches_analytic_conditional() {
    let (dy, dx, n) = (16, 4, 100_000);
    let mut r = rng::stream(21, Purpose::Lmmse, 0);
    let a = DMatrix::from_fn(dx, dy, |_, _| r.random_range(-0.5..0.5));
    let b = DVector::from_fn(dx, |_, _| r.random_range(-1.0..1.0));
    let mu = DVector::from_fn(dy, |_, _| r.random_range(-1.0..1.0));
    let bf = DMatrix::from_fn(dy, dy, |_, _| r.random_range(-0.4..0.4));
    let sigma_y = &bf * bf.transpose();
    let noise = 0.1;
    let pairs: Vec<Pair> = (0..n)
        .map(|_| {
            let y = &mu + &bf * DVector::from_vec(standard_normal_f64(&mut r, dy));
            let x = &a * &y + &b + DVector::from_vec(standard_normal_f64(&mut r, dx)) * noise;
            Pair {
                x: vector(x.as_slice()),
                y: vector(y.as_slice()),
            }
        })
        .collect();
    let model = LinearGaussianModel::fit(&pairs, 0.0).unwrap();

    let probe = &a * &mu + &b + DVector::from_fn(dx, |i, _| 0.3 * (i as f64 - 1.5));
    let sxx = &a * &sigma_y * a.transpose() + DMatrix::identity(dx, dx) * noise * noise;
    let gain = &sigma_y * a.transpose() * sxx.try_inverse().unwrap();
    let want = &mu + gain * (&probe - (&a * &mu + &b));
    let got = model.posterior(&vector(probe.as_slice())).unwrap().mean;
    assert!((got - want).amax() < 1e-2);
}

fn projection_pairs(spec: &ProjectionSpec, shape: &[usize], n: usize, seed: u64) -> Vec<Pair> {
    let mut r = rng::stream(seed, Purpose::Lmmse, 1);
    (0..n)
        .map(|_| {
            let y = Tensor::from_fn(shape.to_vec(), |_| r.random_range(0.0..1.0f32)).unwrap();
            Pair {
                x: project(&y, spec).unwrap(),
                y,
            }
        })
        .collect()
}

#[test]
fn exact_linear_pairs_reproject_exactly() {
    let spec = ProjectionSpec::new(0, vec![0.1, 0.4, 0.2, 0.3]).unwrap();
    let pairs = projection_pairs(&spec, &[4, 5], 60, 2);
    let model = LinearGaussianModel::fit(&pairs, 0.0).unwrap();
    for p in projection_pairs(&spec, &[4, 5], 3, 9) {
        let post = model.posterior(&p.x).unwrap();
        let m = project(&post.mean_tensor(), &spec).unwrap();
        for (u, v) in m.data().iter().zip(p.x.data()) {
            assert!((u - v).abs() < 1e-6);
        }
        for s in lmmse_sample(&model, &p.x, 5, 3).unwrap() {
            let sp = project(&s, &spec).unwrap();
            assert!(sp.data().iter().zip(p.x.data()).all(|(u, v)| (u - v).abs() < 1e-5));
        }
    }
}

#[test]
fn duplicated_coordinate_stays_duplicated() {
    let mut r = rng::stream(5, Purpose::Lmmse, 2);
    let pairs: Vec<Pair> = (0..40)
        .map(|_| {
            let y: Vec<f64> = (0..6).map(|_| r.random_range(0.0..1.0)).collect();
            let mut y7 = y.clone();
            y7.push(y[2]);
            Pair {
                x: vector(&[y[0] + y[1], y[3] - y[4]]),
                y: vector(&y7),
            }
        })
        .collect();
    let model = LinearGaussianModel::fit(&pairs, 1e-6).unwrap();
    for s in lmmse_sample(&model, &vector(&[0.7, 0.1]), 20, 1).unwrap() {
        assert!((s.data()[2] - s.data()[6]).abs() < 1e-5);
    }
}

#[test]
fn shifting_signals_shifts_the_mean() {
    let spec = ProjectionSpec::averaging(0, 3).unwrap();
    let pairs = projection_pairs(&spec, &[3, 4], 30, 4);
    let c = 0.75f32;
    let shifted: Vec<Pair> = pairs
        .iter()
        .map(|p| Pair {
            x: p.x.clone(),
            y: p.y.map(|v| v + c),
        })
        .collect();
    let m0 = LinearGaussianModel::fit(&pairs, 1e-6).unwrap();
    let m1 = LinearGaussianModel::fit(&shifted, 1e-6).unwrap();
    let x = &pairs[0].x;
    let d = m1.posterior(x).unwrap().mean - m0.posterior(x).unwrap().mean;
    assert!(d.iter().all(|v| (v - c as f64).abs() < 1e-6));
}

#[test]
fn sample_covariance_matches_factor() {
    let mut r = rng::stream(8, Purpose::Lmmse, 3);
    let pairs: Vec<Pair> = (0..200)
        .map(|_| {
            let y: Vec<f64> = standard_normal_f64(&mut r, 5);
            Pair {
                x: vector(&[y[0] + 0.5 * y[1], y[2]]),
                y: vector(&y),
            }
        })
        .collect();
    let model = LinearGaussianModel::fit(&pairs, 1e-6).unwrap();
    let cov = model.factor() * model.factor().transpose();
    let post = model.posterior(&vector(&[0.2, -0.4])).unwrap();
    let n = 10_000;
    let samples = post.sample(n, &mut rng::stream(1, Purpose::Eval, 0)).unwrap();
    let mut emp = DMatrix::<f64>::zeros(5, 5);
    for s in &samples {
        let d = DVector::from_iterator(5, s.data().iter().map(|&v| v as f64)) - &post.mean;
        emp += &d * d.transpose();
    }
    emp /= n as f64;
    let rel = (&emp - &cov).norm() / cov.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
    for _ in 0..20 {
        let u = DVector::from_vec(standard_normal_f64(&mut r, 5));
        assert!((u.transpose() * &cov * &u)[0] >= 0.0);
    }
}

fn random_set(n: usize, seed: u64) -> PairSet {
    let mut r = rng::stream(seed, Purpose::Eval, 5);
    let pairs: Vec<Pair> = (0..n)
        .map(|_| {
            let y = Tensor::from_fn(vec![2, 3], |_| r.random_range(0.0..1.0f32)).unwrap();
            let x = Tensor::from_fn(vec![3], |_| r.random_range(0.0..1.0f32)).unwrap();
            Pair { x, y }
        })
        .collect();
    // the projection spec is not used by the selector
    PairSet::from_pairs(pairs, ProjectionSpec::averaging(0, 2).unwrap(), 0.0).unwrap()
}

fn brute_force(set: &PairSet, x: &Tensor<f32>) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = set
        .pairs()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s: f64 = p.x.data().iter().zip(x.data()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
            (s / x.numel() as f64, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().map(|(_, i)| i).collect()
}

#[test]
fn knn_matches_brute_force() {
    let set = random_set(50, 1);
    let mut r = rng::stream(2, Purpose::Eval, 6);
    for _ in 0..10 {
        let x = Tensor::from_fn(vec![3], |_| r.random_range(0.0..1.0f32)).unwrap();
        assert_eq!(knn_indices(&set, &x, 50).unwrap(), brute_force(&set, &x));
        let top = knn_select(&set, &x, 7).unwrap();
        let want: Vec<Tensor<f32>> = brute_force(&set, &x)[..7].iter().map(|&i| set.pairs()[i].y.clone()).collect();
        assert_eq!(top, want);
    }
    let x = set.pairs()[0].x.clone();
    assert!(knn_select(&set, &x, 0).is_err());
    assert!(knn_select(&set, &x, 51).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn knn_is_permutation_invariant(seed in 0u64..500, k in 1usize..20) {
        let set = random_set(30, seed);
        let mut order: Vec<usize> = (0..30).collect();
        order.shuffle(&mut rng::stream(seed, Purpose::Shuffle, 0));
        let permuted = PairSet::from_pairs(
            order.iter().map(|&i| set.pairs()[i].clone()).collect(),
            set.spec().clone(),
            0.0,
        ).unwrap();
        let x = Tensor::from_fn(vec![3], |i| (seed as f32 * 0.37 + i as f32 * 0.21).fract()).unwrap();
        prop_assert_eq!(knn_select(&set, &x, k).unwrap(), knn_select(&permuted, &x, k).unwrap());
    }
}
