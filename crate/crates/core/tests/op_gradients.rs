//! Every differentiable graph op checked against central differences.

use std::rc::Rc;

use dressup_core::autodiff::{Axis, Graph, Var};
use dressup_core::harness::gradcheck::{grad_check, STEP};
use dressup_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Sum of the output weighted by a fixed pseudo-random tensor, so every element matters.
fn weighted_sum(g: &mut Graph<f64>, y: Var) -> Var {
    let shape = g.shape(y).to_vec();
    let wts = Tensor::from_fn(&shape, |i| ((i * 37 % 23) as f64 / 23.0) - 0.4);
    let w = g.constant(wts);
    let p = g.mul(y, w);
    g.sum_all(p)
}

fn check(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let r = grad_check(f, &inputs, STEP).unwrap();
    assert!(r.passes(TOL), "{name}: {r}");
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_t(&[2, 3, 4, 4], &mut rng);
    let b = rand_t(&[2, 3, 4, 4], &mut rng).map(|v| v + 2.5);
    let m = rand_t(&[2, 1, 4, 4], &mut rng);
    check("add/mul/div", vec![a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1]);
        let p = g.mul(s, v[0]);
        let q = g.div(p, v[1]);
        weighted_sum(g, q)
    });
    check("broadcast mul/sub", vec![a.clone(), m.clone()], |g, v| {
        let p = g.mul(v[0], v[1]);
        let q = g.sub(p, v[1]);
        weighted_sum(g, q)
    });
    check(
        "maximum",
        vec![a.clone(), rand_t(&[2, 3, 4, 4], &mut rng)],
        |g, v| {
            let y = g.maximum(v[0], v[1]);
            weighted_sum(g, y)
        },
    );
    check("activations", vec![a.clone()], |g, v| {
        let s = g.sigmoid(v[0]);
        let t = g.tanh(v[0]);
        let l = g.leaky_relu(v[0], 0.2);
        let r = g.relu(v[0]);
        let ab = g.abs(v[0]);
        let x = g.add(s, t);
        let x = g.add(x, l);
        let x = g.add(x, r);
        let x = g.add(x, ab);
        weighted_sum(g, x)
    });
    check("sqrt/square/scale", vec![b.clone()], |g, v| {
        let s = g.sqrt(v[0]);
        let q = g.square(s);
        let q = g.scale(q, 0.3);
        let q = g.one_minus(q);
        weighted_sum(g, q)
    });
}

#[test]
fn conv_and_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_t(&[2, 3, 6, 6], &mut rng);
    for &(k, stride, pad) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0)] {
        let w = rand_t(&[4, 3, k, k], &mut rng);
        let b = rand_t(&[4], &mut rng);
        check(
            &format!("conv k{k} s{stride}"),
            vec![x.clone(), w, b],
            |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad);
                weighted_sum(g, y)
            },
        );
    }
    check("instance_norm", vec![x.clone()], |g, v| {
        let y = g.instance_norm(v[0]);
        weighted_sum(g, y)
    });
    check("channel_norm", vec![x.clone()], |g, v| {
        let y = g.channel_norm(v[0]);
        weighted_sum(g, y)
    });
}

#[test]
fn resampling_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_t(&[2, 2, 4, 4], &mut rng);
    check("upsample", vec![x.clone()], |g, v| {
        let y = g.upsample2x(v[0]);
        weighted_sum(g, y)
    });
    check("avg_pool", vec![x.clone()], |g, v| {
        let y = g.avg_pool(v[0], 2);
        weighted_sum(g, y)
    });
    check(
        "concat",
        vec![x.clone(), rand_t(&[2, 1, 4, 4], &mut rng)],
        |g, v| {
            let y = g.concat_channels(&[v[0], v[1]]);
            weighted_sum(g, y)
        },
    );
    check("sum_spatial/sum_channels", vec![x.clone()], |g, v| {
        let a = g.sum_spatial(v[0]);
        let b = g.sum_channels(v[0]);
        let p = g.mul(a, b);
        weighted_sum(g, p)
    });
    check("gram", vec![x.clone()], |g, v| {
        let y = g.gram(v[0]);
        weighted_sum(g, y)
    });
    check("diff", vec![x.clone()], |g, v| {
        let a = g.diff(v[0], Axis::X);
        let b = g.diff(v[0], Axis::Y);
        let a = weighted_sum(g, a);
        let b = weighted_sum(g, b);
        g.add(a, b)
    });
    check("mean", vec![x], |g, v| {
        let y = g.square(v[0]);
        g.mean_all(y)
    });
}

#[test]
fn warp_gradients_on_4x4_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let feat = rand_t(&[1, 4, 4, 4], &mut rng);
    // keep sample points inside the grid and off integer coordinates
    let mut flow = Tensor::zeros(&[1, 2, 4, 4]);
    for y in 0..4 {
        for x in 0..4 {
            let tx: f64 = rng.random_range(0.2..2.8);
            let ty: f64 = rng.random_range(0.2..2.8);
            let tx = if (tx - tx.round()).abs() < 0.1 {
                tx + 0.25
            } else {
                tx
            };
            let ty = if (ty - ty.round()).abs() < 0.1 {
                ty + 0.25
            } else {
                ty
            };
            flow.set4(0, 0, y, x, tx - x as f64);
            flow.set4(0, 1, y, x, ty - y as f64);
        }
    }
    check("warp", vec![feat, flow], |g, v| {
        let y = g.warp(v[0], v[1]);
        weighted_sum(g, y)
    });
}

#[test]
fn classification_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let logits = rand_t(&[2, 5, 3, 3], &mut rng).map(|v| v * 3.0);
    let labels: Vec<usize> = (0..18).map(|i| (i * 7) % 5).collect();
    let labels = Rc::new(labels);
    check("softmax_xent", vec![logits.clone()], move |g, v| {
        g.softmax_xent(v[0], labels.clone())
    });
    let targets = Tensor::from_fn(&[2, 5, 3, 3], |i| (i % 2) as f64);
    check("bce_logits", vec![logits], move |g, v| {
        g.bce_logits(v[0], targets.clone())
    });
}
