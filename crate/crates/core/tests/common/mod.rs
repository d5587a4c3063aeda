#![allow(dead_code)]

use deproj_core::rng::{self, Purpose};
use deproj_core::tensor::{Scalar, Tape, Tensor, Var};
use rand::Rng as _;

/// Relative error with `max(1, |a|, |n|)` in the denominator.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut r = rng::stream(seed, Purpose::Eval, 999);
    Tensor::from_fn(shape.to_vec(), |_| r.random_range(lo..hi)).unwrap()
}

/// Evaluates a loss built on a fresh tape with the given inputs as leaves.
pub fn eval_loss<T: Scalar>(
    build: &dyn Fn(&mut Tape<T>, &[Var]) -> Var,
    inputs: &[Tensor<T>],
) -> (Tape<T>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    (tape, vars, loss)
}

/// Central finite differences of the loss w.r.t. every element of every input,
/// evaluated in 64-bit using forward passes only.
pub fn numeric_grads(
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    inputs: &[Tensor<f64>],
    h: f64,
) -> Vec<Vec<f64>> {
    let f = |ins: &[Tensor<f64>]| {
        let (tape, _, loss) = eval_loss(build, ins);
        tape.value(loss).data()[0]
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut out = Vec::new();
    for i in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[i].numel());
        for j in 0..inputs[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = f(&work);
            work[i].data_mut()[j] = orig - h;
            let down = f(&work);
            work[i].data_mut()[j] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

pub fn analytic_grads<T: Scalar>(
    build: &dyn Fn(&mut Tape<T>, &[Var]) -> Var,
    inputs: &[Tensor<T>],
) -> Vec<Vec<f64>> {
    let (tape, vars, loss) = eval_loss(build, inputs);
    let grads = tape.backward(loss).unwrap();
    vars.iter()
        .map(|&v| match grads.get(v) {
            Some(g) => g.data().iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; tape.value(v).numel()],
        })
        .collect()
}

/// Worst relative error of the 64-bit analytic gradient against the oracle.
pub fn check_f64(
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    inputs: &[Tensor<f64>],
    h: f64,
) -> f64 {
    let numeric = numeric_grads(build, inputs, h);
    let analytic = analytic_grads(build, inputs);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_rel_err(a, n))
        .fold(0.0, f64::max)
}

/// Worst relative error of the 32-bit analytic gradient against the 64-bit oracle.
pub fn check_f32(
    build32: &dyn Fn(&mut Tape<f32>, &[Var]) -> Var,
    build64: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
    inputs: &[Tensor<f64>],
    h: f64,
) -> f64 {
    let numeric = numeric_grads(build64, inputs, h);
    let ins32: Vec<Tensor<f32>> = inputs.iter().map(|t| t.cast()).collect();
    let analytic = analytic_grads(build32, &ins32);
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| max_rel_err(a, n))
        .fold(0.0, f64::max)
}

pub mod micro {
    use deproj_core::model::{ModelConfig, ModelParams, Network};
    use deproj_core::rng::{self, Purpose};
    use deproj_core::tensor::{Scalar, Tape, Tensor};
    use rand::Rng as _;

    use super::max_rel_err;

    /// `[1, 4, 8, 8]` signals averaged along time, `L = 2`, two conv layers
    /// per encoder.
    pub fn config() -> ModelConfig {
        let mut c = ModelConfig::for_signal(vec![1, 4, 8, 8], 1);
        c.latent_dim = 2;
        c.enc_channels = vec![2, 2];
        c.dec_channels = vec![2, 2];
        c.z_channels = 1;
        c.expand_features = 1;
        c.refine_channels = vec![2];
        c.beta = 0.5;
        c
    }

    pub struct Case {
        pub params: ModelParams<f64>,
        pub x: Tensor<f64>,
        pub y: Tensor<f64>,
        pub eps: Tensor<f64>,
    }

    /// Seeded weights with non-zero biases and a batch of two examples.
    pub fn case(cfg: &ModelConfig, seed: u64) -> Case {
        let mut r = rng::stream(seed, Purpose::Eval, 7);
        let params = ModelParams::<f32>::init(cfg, seed).unwrap().cast::<f64>().map(|_, t| {
            if t.rank() == 1 {
                Tensor::from_fn(t.shape().to_vec(), |_| r.random_range(-0.2..0.2)).unwrap()
            } else {
                t.clone()
            }
        });
        let mut sig = vec![2];
        sig.extend(&cfg.signal_shape);
        let mut proj = vec![2];
        proj.extend(cfg.projection_shape());
        let x = Tensor::from_fn(proj, |_| r.random_range(0.0..1.0)).unwrap();
        let y = Tensor::from_fn(sig, |_| r.random_range(0.0..1.0)).unwrap();
        let eps = Tensor::from_fn(vec![2, cfg.latent_dim], |_| r.random_range(-1.5..1.5)).unwrap();
        Case { params, x, y, eps }
    }

    fn loss_value<T: Scalar>(cfg: &ModelConfig, p: &ModelParams<T>, c: &Case) -> f64 {
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, cfg, p, false);
        let x = tape.constant(c.x.cast());
        let y = tape.constant(c.y.cast());
        let e = tape.constant(c.eps.cast());
        let l = net.loss(&mut tape, x, y, Some(e), cfg.beta).unwrap();
        tape.value(l.total).data()[0].as_f64()
    }

    fn analytic<T: Scalar>(cfg: &ModelConfig, p: &ModelParams<T>, c: &Case) -> Vec<Vec<f64>> {
        let mut tape = Tape::new();
        let net = Network::bind(&mut tape, cfg, p, true);
        let x = tape.constant(c.x.cast());
        let y = tape.constant(c.y.cast());
        let e = tape.constant(c.eps.cast());
        let l = net.loss(&mut tape, x, y, Some(e), cfg.beta).unwrap();
        let g = tape.backward(l.total).unwrap();
        net.vars()
            .iter()
            .zip(p.tensors())
            .map(|(&v, t)| match g.get(v) {
                Some(g) => g.data().iter().map(|x| x.as_f64()).collect(),
                None => vec![0.0; t.numel()],
            })
            .collect()
    }

    /// Central differences in 64-bit over every parameter element.
    pub fn numeric(cfg: &ModelConfig, c: &Case, h: f64) -> Vec<Vec<f64>> {
        let mut p = c.params.clone();
        let n = p.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let len = p.tensors().nth(i).unwrap().numel();
            let mut g = Vec::with_capacity(len);
            for j in 0..len {
                let orig = p.tensors().nth(i).unwrap().data()[j];
                p.tensors_mut().nth(i).unwrap().data_mut()[j] = orig + h;
                let up = loss_value(cfg, &p, c);
                p.tensors_mut().nth(i).unwrap().data_mut()[j] = orig - h;
                let down = loss_value(cfg, &p, c);
                p.tensors_mut().nth(i).unwrap().data_mut()[j] = orig;
                g.push((up - down) / (2.0 * h));
            }
            out.push(g);
        }
        out
    }

    fn worst(a: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
        a.iter().zip(n).map(|(a, n)| max_rel_err(a, n)).fold(0.0, f64::max)
    }

    /// Worst relative gradient error of the whole model in 32-bit and in
    /// 64-bit arithmetic against the 64-bit finite-difference oracle.
    pub fn end_to_end_errors(seed: u64) -> (f64, f64) {
        let cfg = config();
        let c = case(&cfg, seed);
        let n = numeric(&cfg, &c, 1e-5);
        let a64 = analytic(&cfg, &c.params, &c);
        let a32 = analytic(&cfg, &c.params.cast::<f32>(), &c);
        (worst(&a32, &n), worst(&a64, &n))
    }
}
