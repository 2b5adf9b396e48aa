//! Finite-difference gradient checks shared by the test targets.

#![allow(dead_code)]

use mspc::dmol;
use mspc::grouping::{GroupSchedule, GroupingMethod};
use mspc::net::{ModelWeights, NetConfig};
use mspc::tensor::{ParamStore, Shape, Tape, TapeGraph, Tensor, Var};
use mspc::train::{batch_loss, params_f64};
use mspc::Image8;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-3;

/// Five-point central difference of `f` at offsets `±h, ±2h`.
pub fn five_point(f: impl Fn(f64) -> f64) -> f64 {
    (8.0 * (f(STEP) - f(-STEP)) - (f(2.0 * STEP) - f(-2.0 * STEP))) / (12.0 * STEP)
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

pub fn random(shape: Shape, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values bounded away from zero so kinks stay out of the difference stencil.
pub fn away_from_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..shape.numel())
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Largest relative error between reverse-mode gradients of `build` and
/// central differences, over every input entry (or 40 sampled per input).
pub fn max_grad_error(inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let run = |inputs: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = build(&mut tape, &vars);
        (tape, vars, out)
    };
    let (tape, vars, out) = run(&inputs);
    let grads = tape.backward(out).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let g = grads.get_or_zeros(vars[k], input.shape());
        let idx: Vec<usize> = if input.len() <= 40 {
            (0..input.len()).collect()
        } else {
            (0..40).map(|_| rng.gen_range(0..input.len())).collect()
        };
        for i in idx {
            let numeric = five_point(|d| {
                let mut moved = inputs.clone();
                moved[k].data_mut()[i] += d;
                let (t, _, o) = run(&moved);
                t.value(o).data()[0]
            });
            worst = worst.max(rel_err(g.data()[i], numeric));
        }
    }
    worst
}

/// Reduces a tensor to a scalar through a fixed random projection.
pub fn project(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let shape = tape.value(x).shape();
    let r = random(shape, &mut ChaCha8Rng::seed_from_u64(seed), -1.0, 1.0);
    let r = tape.constant(r);
    let p = tape.mul(x, r).unwrap();
    tape.sum(p).unwrap()
}

pub fn conv2d_error(seed: u64, cin: usize, cout: usize, k: usize, h: usize, w: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = vec![
        random(Shape::new(2, cin, h, w), &mut rng, -1.0, 1.0),
        random(Shape::new(cout, cin, k, k), &mut rng, -1.0, 1.0),
        random(Shape::new(1, cout, 1, 1), &mut rng, -1.0, 1.0),
    ];
    max_grad_error(inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], k / 2).unwrap();
        project(t, y, 1)
    })
}

pub fn elementwise_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(2, 3, 3, 2);
    let inputs = vec![away_from_zero(s, &mut rng), away_from_zero(s, &mut rng)];
    max_grad_error(inputs, |t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let m = t.mul(a, v[1]).unwrap();
        let r = t.relu(m).unwrap();
        let l = t.leaky_relu(v[0], 0.1).unwrap();
        let c = t.concat(&[r, l]).unwrap();
        let u = t.upsample2x(c).unwrap();
        let sc = t.scale(u, 0.7).unwrap();
        project(t, sc, 2)
    })
}

pub fn mask_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Shape::new(1, 2, 4, 4);
    let bits = (0..s.numel()).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let mask = Tensor::from_vec(s, bits).unwrap();
    let inputs = vec![random(s, &mut rng, -1.0, 1.0), random(s, &mut rng, -1.0, 1.0)];
    max_grad_error(inputs, move |t, v| {
        let sel = t.mask_select(v[0], mask.clone()).unwrap();
        let asg = t.mask_assign(sel, v[1], mask.clone()).unwrap();
        let p = project(t, asg, 3);
        let m = t.mean(v[1]).unwrap();
        t.add(p, m).unwrap()
    })
}

pub fn dmol_nll_error(seed: u64, mixtures: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (2, 3);
    let k = mixtures;
    let q = dmol::params_per_pixel(k);
    let mut p = Tensor::zeros(Shape::new(1, q, h, w));
    for ch in 0..q {
        let (lo, hi) = match ch / k {
            0 => (-2.0, 2.0),
            1..=3 => (-0.9, 0.9),
            4..=6 => (-4.0, -0.5),
            _ => (-1.5, 1.5),
        };
        for v in p.plane_mut(0, ch) {
            *v = rng.gen_range(lo..hi);
        }
    }
    let targets: Vec<u8> = (0..3 * h * w).map(|_| rng.gen()).collect();
    let select: Vec<bool> = (0..h * w).map(|i| i % 2 == 0 || rng.gen_bool(0.5)).collect();
    max_grad_error(vec![p], move |t, v| t.dmol_nll(v[0], k, &targets, &select).unwrap())
}

fn noise_batch(seed: u64) -> Vec<Image8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|_| Image8::from_raw(8, 8, (0..192).map(|_| rng.gen()).collect()).unwrap())
        .collect()
}

/// Largest relative error of `batch_loss` gradients over 10 random
/// parameters of a small double-precision model on a 2×8×8 batch.
pub fn batch_loss_error(method: GroupingMethod, share: bool) -> f64 {
    let mut cfg = NetConfig::new(4, 2, 1, 2, method);
    cfg.share_weights = share;
    let model = ModelWeights::init(cfg.clone(), 7).unwrap();
    let params = params_f64(&model);
    let schedule = GroupSchedule::uniform(method, 2, 3, 5);
    let batch = noise_batch(3);
    let loss_of = |store: &ParamStore<f64>| {
        let mut g = TapeGraph::new(store);
        batch_loss(&mut g, &cfg, &schedule, &batch).unwrap().bpp
    };
    let mut graph = TapeGraph::new(&params);
    let out = batch_loss(&mut graph, &cfg, &schedule, &batch).unwrap();
    let grads = graph.param_grads(out.loss).unwrap();
    let names: Vec<String> = params.names().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let name = &names[rng.gen_range(0..names.len())];
        let i = rng.gen_range(0..params.get(name).unwrap().len());
        let numeric = five_point(|d| {
            let mut moved = params.clone();
            moved.get_mut(name).unwrap().data_mut()[i] += d;
            loss_of(&moved)
        });
        worst = worst.max(rel_err(grads[name].data()[i], numeric));
    }
    worst
}
