#![allow(dead_code)]

//! Central finite-difference checks of every differentiable op, shared by
//! the gradient tests and the acceptance run. Each check records the worst
//! relative error over its configurations.

use crate::common::{self, away_from_zero, fd_check, rng, uniform};
use iastar::autodiff::{Graph, Padding, Tensor, Var};
use iastar::dastar::{search, search_recorded, DAStarConfig};
use iastar::encoder::{instance_tensor, Arch, EncoderModel};
use iastar::gridmap::GeneratorKind;
use rand::Rng;

pub const CONFIGS: u64 = 20;

fn check_each(out: &mut Vec<(&'static str, f64)>, name: &'static str, mut one: impl FnMut(u64) -> f64) {
    let worst = (0..CONFIGS).map(&mut one).fold(0.0, f64::max);
    out.push((name, worst));
}

fn dims(r: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    vec![r.random_range(1..4), r.random_range(2..6), r.random_range(2..6)]
}

pub fn elementwise_binary(out: &mut Vec<(&'static str, f64)>) {
    type Op = fn(&mut Graph, Var, Var) -> Var;
    let ops: [(&str, Op); 3] = [
        ("add", |g, a, b| g.add(a, b).unwrap()),
        ("sub", |g, a, b| g.sub(a, b).unwrap()),
        ("mul", |g, a, b| g.mul(a, b).unwrap()),
    ];
    for (name, op) in ops {
        check_each(out, name, |seed| {
            let mut r = rng(seed);
            let shape = dims(&mut r);
            let x = [uniform(&mut r, &shape, -2.0, 2.0), uniform(&mut r, &shape, -2.0, 2.0)];
            fd_check(&mut r, &x, 64, |g, v| op(g, v[0], v[1]))
        });
    }
}

pub fn elementwise_unary(out: &mut Vec<(&'static str, f64)>) {
    type Op = fn(&mut Graph, Var) -> Var;
    let ops: [(&str, Op); 7] = [
        ("neg", |g, a| g.neg(a)),
        ("scale", |g, a| g.scale(a, -1.7)),
        ("add_scalar", |g, a| g.add_scalar(a, 0.3)),
        ("exp", |g, a| g.exp(a)),
        ("sigmoid", |g, a| g.sigmoid(a)),
        ("relu", |g, a| g.relu(a)),
        ("abs", |g, a| g.abs(a)),
    ];
    for (name, op) in ops {
        check_each(out, name, |seed| {
            let mut r = rng(100 + seed);
            let shape = dims(&mut r);
            let x = [away_from_zero(&mut r, &shape, 1e-2)];
            fd_check(&mut r, &x, 64, |g, v| op(g, v[0]))
        });
    }
}

pub fn reductions_and_reshape(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "sum", |seed| {
        let mut r = rng(200 + seed);
        let shape = dims(&mut r);
        let x = [uniform(&mut r, &shape, -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| g.sum(v[0]))
    });
    check_each(out, "mean", |seed| {
        let mut r = rng(300 + seed);
        let shape = dims(&mut r);
        let x = [uniform(&mut r, &shape, -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| g.mean(v[0]))
    });
    check_each(out, "inner", |seed| {
        let mut r = rng(400 + seed);
        let shape = dims(&mut r);
        let x = [uniform(&mut r, &shape, -1.0, 1.0), uniform(&mut r, &shape, -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| g.inner(v[0], v[1]).unwrap())
    });
    check_each(out, "reshape", |seed| {
        let mut r = rng(500 + seed);
        let shape = dims(&mut r);
        let n: usize = shape.iter().product();
        let x = [uniform(&mut r, &shape, -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| {
            let y = g.reshape(v[0], &[n]).unwrap();
            g.mul(y, y).unwrap()
        })
    });
}

pub fn conv2d_input_and_kernel(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "conv2d", |seed| {
        let mut r = rng(600 + seed);
        let c_in = r.random_range(1..4);
        let c_out = r.random_range(1..4);
        let k = [1, 3, 5][r.random_range(0..3)];
        let padding = if r.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let (h, w) = (r.random_range(k..k + 5), r.random_range(k..k + 5));
        let x = [
            uniform(&mut r, &[c_in, h, w], -1.0, 1.0),
            uniform(&mut r, &[c_out, c_in, k, k], -1.0, 1.0),
        ];
        fd_check(&mut r, &x, 48, |g, v| g.conv2d(v[0], v[1], padding).unwrap())
    });
}

pub fn channel_bias(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "channel_bias", |seed| {
        let mut r = rng(700 + seed);
        let shape = dims(&mut r);
        let x = [uniform(&mut r, &shape, -1.0, 1.0), uniform(&mut r, &[shape[0]], -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| g.channel_bias(v[0], v[1]).unwrap())
    });
}

pub fn pooling_and_upsampling(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "maxpool2", |seed| {
        let mut r = rng(800 + seed);
        let shape = [r.random_range(1..3), 2 * r.random_range(1..4), 2 * r.random_range(1..4)];
        // distinct values keep every window away from a tie
        let n: usize = shape.iter().product();
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            vals.swap(i, r.random_range(0..=i));
        }
        let x = [Tensor::new(shape.to_vec(), vals).unwrap()];
        fd_check(&mut r, &x, 64, |g, v| g.maxpool2(v[0]).unwrap())
    });
    check_each(out, "upsample2", |seed| {
        let mut r = rng(900 + seed);
        let shape = dims(&mut r);
        let x = [uniform(&mut r, &shape, -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| g.upsample2(v[0]).unwrap())
    });
}

pub fn concat_pad_crop(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "concat", |seed| {
        let mut r = rng(1000 + seed);
        let (h, w) = (r.random_range(2..5), r.random_range(2..5));
        let (c1, c2) = (r.random_range(1..3), r.random_range(1..3));
        let x = [uniform(&mut r, &[c1, h, w], -1.0, 1.0), uniform(&mut r, &[c2, h, w], -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| g.concat_channels(&[v[0], v[1]]).unwrap())
    });
    check_each(out, "pad_crop", |seed| {
        let mut r = rng(1100 + seed);
        let shape = dims(&mut r);
        let (ph, pw) = (shape[1] + r.random_range(0..3), shape[2] + r.random_range(0..3));
        let (ch, cw) = (r.random_range(1..=shape[1]), r.random_range(1..=shape[2]));
        let x = [uniform(&mut r, &shape, -1.0, 1.0)];
        fd_check(&mut r, &x, 64, |g, v| {
            let p = g.pad_to(v[0], ph, pw).unwrap();
            let p = g.mul(p, p).unwrap();
            g.crop_to(p, ch, cw).unwrap()
        })
    });
}

/// Numeric oracle for the straight-through estimator: differences of the
/// soft surrogate, compared with the backward pass of the hard selection.
pub fn straight_through_selection(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "straight_through", |seed| {
        let mut r = rng(1200 + seed);
        let (h, w) = (r.random_range(2..6), r.random_range(2..6));
        let scores = uniform(&mut r, &[h, w], 0.0, 4.0);
        let mut mask = Tensor::from_fn(&[h, w], |_| if r.random_bool(0.6) { 1.0 } else { 0.0 });
        mask.data_mut()[0] = 1.0;
        let tau = r.random_range(0.3..3.0);
        let weights = uniform(&mut r, &[h, w], -1.0, 1.0);
        let soft_probe = |s: &Tensor| -> f64 {
            let z: Vec<f64> = s.data().iter().zip(mask.data()).map(|(v, m)| m * (-v / tau).exp()).collect();
            let total: f64 = z.iter().sum();
            z.iter().zip(weights.data()).map(|(a, b)| a / total * b).sum()
        };
        let mut g = Graph::new();
        let sv = g.leaf(scores.clone());
        let sel = g.masked_softargmax(sv, &mask, tau).unwrap();
        let wv = g.constant(weights.clone());
        let probe = g.inner(sel, wv).unwrap();
        let analytic = g.backward(probe).unwrap().get_or_zeros(sv, &[h, w]);
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..h * w {
            let mut p = scores.clone();
            p.data_mut()[i] += common::FD_STEP;
            let mut m = scores.clone();
            m.data_mut()[i] -= common::FD_STEP;
            let numeric = (soft_probe(&p) - soft_probe(&m)) / (2.0 * common::FD_STEP);
            diff += (numeric - analytic.data()[i]).powi(2);
            norm = norm.max(numeric.abs()).max(analytic.data()[i].abs());
        }
        diff.sqrt() / norm.max(1e-12)
    });
}

/// The recorded search against finite differences of a soft replay: the
/// same selections, each weighted by the temperature softmax of the open
/// cells at that step.
pub fn differentiable_search(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "dastar", |seed| {
        let mut r = rng(1300 + seed);
        let inst = common::instances(GeneratorKind::RandomBlocks, 10, 0.2, 1, seed).pop().unwrap();
        let (h, w) = (inst.map().height(), inst.map().width());
        let p = uniform(&mut r, &[h, w], 0.0, 2.0);
        let cfg = DAStarConfig {
            tau: Some(r.random_range(0.5..4.0)),
            ..Default::default()
        };
        let weights = uniform(&mut r, &[h, w], -1.0, 1.0);
        let path_w = uniform(&mut r, &[h, w], -1.0, 1.0);
        let trace = search(&inst, &p, &cfg).unwrap().trace;
        let soft_probe = |pp: &Tensor| -> f64 {
            let n = h * w;
            let mut g_cost = vec![f64::INFINITY; n];
            g_cost[inst.start_index()] = 0.0;
            let mut open = vec![false; n];
            open[inst.start_index()] = true;
            let heur: Vec<f64> = (0..n)
                .map(|i| iastar::gridmap::octile(inst.map().coord(i), inst.goal()))
                .collect();
            let mut total = 0.0;
            for step in &trace.steps {
                let z: Vec<f64> = (0..n)
                    .map(|j| if open[j] { (-(g_cost[j] + heur[j] + pp.data()[j]) / trace.tau).exp() } else { 0.0 })
                    .collect();
                let zs: f64 = z.iter().sum();
                let on_path = trace.on_path[step.selected];
                for j in 0..n {
                    let y = z[j] / zs;
                    total += y * weights.data()[j];
                    if on_path {
                        total += y * path_w.data()[j];
                    }
                }
                open[step.selected] = false;
                for &(j, c) in &step.relaxations {
                    g_cost[j] = c;
                    open[j] = true;
                }
            }
            total
        };
        let mut g = Graph::new();
        let pv = g.leaf(p.clone());
        let rec = search_recorded(&mut g, &inst, pv, &cfg).unwrap();
        let wv = g.constant(weights.clone());
        let a = g.inner(rec.closed, wv).unwrap();
        let pw = g.constant(path_w.clone());
        let b = g.inner(rec.path, pw).unwrap();
        let probe = g.add(a, b).unwrap();
        let analytic = g.backward(probe).unwrap().get_or_zeros(pv, &[h, w]);
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for i in 0..h * w {
            let mut pp = p.clone();
            pp.data_mut()[i] += common::FD_STEP;
            let mut pm = p.clone();
            pm.data_mut()[i] -= common::FD_STEP;
            let numeric = (soft_probe(&pp) - soft_probe(&pm)) / (2.0 * common::FD_STEP);
            diff += (numeric - analytic.data()[i]).powi(2);
            norm = norm.max(numeric.abs()).max(analytic.data()[i].abs());
        }
        diff.sqrt() / norm.max(1e-12)
    });
}

pub fn encoder_probe(out: &mut Vec<(&'static str, f64)>) {
    check_each(out, "encoder", |seed| {
        let mut r = rng(1400 + seed);
        let arch = Arch {
            depth: r.random_range(1..3),
            base: 4,
            out_scale: 3.0,
        };
        let model = EncoderModel::init(arch, seed).unwrap();
        let size = [8, 9, 12][r.random_range(0..3)];
        let inst = common::instances(GeneratorKind::RandomBlocks, size, 0.2, 1, seed).pop().unwrap();
        let x = instance_tensor(&inst);
        // random biases keep ReLU inputs off the kink at exactly zero,
        // which zero biases on sparse inputs would hit everywhere
        let inputs: Vec<Tensor> = model
            .params()
            .iter()
            .map(|(n, t)| if n.ends_with(".bias") { uniform(&mut r, t.shape(), -0.5, 0.5) } else { t.clone() })
            .collect();
        fd_check(&mut r, &inputs, 6, |g, v| model.forward_with(g, &x, v).unwrap())
    });
}

pub type Check = fn(&mut Vec<(&'static str, f64)>);

pub const ALL: [Check; 10] = [
    elementwise_binary,
    elementwise_unary,
    reductions_and_reshape,
    conv2d_input_and_kernel,
    channel_bias,
    pooling_and_upsampling,
    concat_pad_crop,
    straight_through_selection,
    differentiable_search,
    encoder_probe,
];
