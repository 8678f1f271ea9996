use std::rc::Rc;

use dressup_core::autodiff::{Graph, Var};
use dressup_core::harness::gradcheck::{grad_check, STEP};
use dressup_core::harness::oracle;
use dressup_core::model::{FeatureExtractor, PatchDiscriminator};
use dressup_core::nn::seeded_rng;
use dressup_core::tensor::Tensor;
use dressup_core::training::losses::{
    content_loss, content_loss_parts, content_loss_vars, gan_loss, gan_loss_vars, geo_loss,
    geo_loss_vars, lsgan_from_outputs, mask_bce_vars, seg_loss, seg_loss_vars,
};
use dressup_core::training::{total_loss, LossParts, TrainConfig};
use dressup_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn unit_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(0.05..0.95))
}

fn fx() -> FeatureExtractor<f64> {
    FeatureExtractor::new(5)
}

#[test]
fn content_loss_identity_and_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = unit_t(&[2, 3, 16, 16], &mut rng);
    assert_eq!(content_loss(&fx(), &x, &x).unwrap(), 0.0);
    let y = x.map(|v| v + 0.1);
    let (l1, perc, style) = content_loss_parts(&fx(), &x, &y).unwrap();
    assert!((l1 - 0.1).abs() < 1e-12, "l1 {l1}");
    assert!(perc > 0.0 && style >= 0.0);
    assert!(matches!(
        content_loss(&fx(), &x, &Tensor::zeros(&[2, 3, 8, 8])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn content_loss_ignores_batch_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a: Vec<Tensor<f64>> = (0..3).map(|_| unit_t(&[1, 3, 16, 16], &mut rng)).collect();
    let b: Vec<Tensor<f64>> = (0..3).map(|_| unit_t(&[1, 3, 16, 16], &mut rng)).collect();
    let fwd = content_loss(
        &fx(),
        &Tensor::stack_batch(&a).unwrap(),
        &Tensor::stack_batch(&b).unwrap(),
    )
    .unwrap();
    let perm = [2, 0, 1];
    let pa: Vec<_> = perm.iter().map(|&i| a[i].clone()).collect();
    let pb: Vec<_> = perm.iter().map(|&i| b[i].clone()).collect();
    let rev = content_loss(
        &fx(),
        &Tensor::stack_batch(&pa).unwrap(),
        &Tensor::stack_batch(&pb).unwrap(),
    )
    .unwrap();
    assert!((fwd - rev).abs() < 1e-12 * fwd.abs().max(1.0));
}

#[test]
fn geo_loss_identity_and_constant_flow() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = rand_t(&[1, 4, 4, 4], &mut rng);
    let zero = Tensor::zeros(&[1, 2, 4, 4]);
    let (corr, reg, total) = geo_loss(&zero, &f, &f).unwrap();
    assert!(corr.abs() < 1e-12 && reg == 0.0 && total.abs() < 1e-12);
    let mut flow = Tensor::zeros(&[1, 2, 4, 4]);
    flow.data_mut()[..16].fill(0.7);
    flow.data_mut()[16..].fill(-0.3);
    assert_eq!(geo_loss(&flow, &f, &f).unwrap().1, 0.0);
    assert!(matches!(
        geo_loss(&zero, &f, &Tensor::zeros(&[1, 4, 4, 3])),
        Err(Error::Shape(_))
    ));
    assert!(geo_loss(&Tensor::zeros(&[1, 2, 3, 3]), &f, &f).is_err());
}

#[test]
fn geo_regularization_checkerboard_matches_hand_sum() {
    let mut flow = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    for y in 0..4 {
        for x in 0..4 {
            flow.set4(0, 0, y, x, if (x + y) % 2 == 0 { 1.0 } else { -1.0 });
        }
    }
    // Hand sum: mean of squared forward differences along x, plus the same along y.
    let (mut sx, mut nx, mut sy, mut ny) = (0.0, 0, 0.0, 0);
    for c in 0..2 {
        for y in 0..4 {
            for x in 0..3 {
                sx += (flow.at4(0, c, y, x + 1) - flow.at4(0, c, y, x)).powi(2);
                nx += 1;
            }
        }
        for y in 0..3 {
            for x in 0..4 {
                sy += (flow.at4(0, c, y + 1, x) - flow.at4(0, c, y, x)).powi(2);
                ny += 1;
            }
        }
    }
    let expect = sx / nx as f64 + sy / ny as f64;
    let f = Tensor::ones(&[1, 3, 4, 4]);
    let (_, reg, _) = geo_loss(&flow, &f, &f).unwrap();
    assert!((reg - expect).abs() < 1e-12, "{reg} vs {expect}");
    assert_eq!(expect, 4.0);
}

#[test]
fn least_squares_closed_forms() {
    let half = Tensor::<f64>::full(&[2, 1, 4, 4], 0.5);
    let (g, d) = lsgan_from_outputs(&half, &half);
    assert!((d - 0.25).abs() < 1e-15);
    assert!((g - 0.125).abs() < 1e-15);
    let (_, d) = lsgan_from_outputs(
        &Tensor::<f64>::ones(&[2, 1, 4, 4]),
        &Tensor::zeros(&[2, 1, 4, 4]),
    );
    assert_eq!(d, 0.0);
}

#[test]
fn gan_generator_term_ignores_real_branch() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let disc = PatchDiscriminator::<f64>::new(9, "d", 2, &mut seeded_rng(9, 0));
    let fake = unit_t(&[2, 3, 32, 32], &mut rng);
    let cond = unit_t(&[2, 2, 32, 32], &mut rng);
    let (g1, d1) = gan_loss(&disc, &unit_t(&[2, 3, 32, 32], &mut rng), &fake, &cond).unwrap();
    let (g2, d2) = gan_loss(&disc, &unit_t(&[2, 3, 32, 32], &mut rng), &fake, &cond).unwrap();
    assert_eq!(g1, g2);
    assert_ne!(d1, d2);
    assert!(g1 >= 0.0 && d1 >= 0.0);
    assert!(matches!(
        gan_loss(&disc, &fake, &fake, &Tensor::zeros(&[2, 3, 32, 32])),
        Err(Error::Shape(_))
    ));
}

fn one_hot_logits(truth: &[usize], hw: usize, hi: f64) -> Vec<Tensor<f64>> {
    (0..5)
        .map(|l| Tensor::from_fn(&[1, 1, hw, hw], |i| if truth[i] == l { hi } else { -hi }))
        .collect()
}

#[test]
fn seg_loss_closed_forms() {
    let truth: Vec<usize> = (0..16).map(|i| (i * 7 + i / 3) % 5).collect();
    assert!(seg_loss(&one_hot_logits(&truth, 4, 10.0), &truth).unwrap() < 1e-3);
    let uniform: Vec<Tensor<f64>> = (0..5).map(|_| Tensor::full(&[1, 1, 4, 4], 0.3)).collect();
    assert!((seg_loss(&uniform, &truth).unwrap() - 5f64.ln()).abs() < 1e-6);

    let logits = one_hot_logits(&truth, 4, 1.5);
    let base = seg_loss(&logits, &truth).unwrap();
    let mut swapped = logits.clone();
    swapped.swap(1, 3);
    assert!(seg_loss(&swapped, &truth).unwrap() > base);

    let rows: Vec<Vec<f64>> = logits.iter().map(|t| t.data().to_vec()).collect();
    assert!((oracle::xent(&rows, &truth).unwrap() - base).abs() < 1e-12);

    assert!(seg_loss(&logits[..4], &truth).unwrap_err().is_validation());
    assert!(seg_loss(&logits, &truth[..15]).unwrap_err().is_validation());
}

#[test]
fn total_loss_examples() {
    let cfg = TrainConfig::default();
    let ones = LossParts {
        content: 1.0,
        geo: 1.0,
        gan: 1.0,
        seg: 1.0,
    };
    let r = total_loss(ones, &cfg, 3).unwrap();
    assert!((r.total - 3.1).abs() < 1e-12);
    assert_eq!(r.step, 3);
    let zero_w = TrainConfig {
        lambda_gan: 0.0,
        lambda_seg: 0.0,
        ..cfg.clone()
    };
    let parts = LossParts {
        content: 0.4,
        geo: 0.2,
        gan: 9.0,
        seg: 7.0,
    };
    assert_eq!(total_loss(parts, &zero_w, 1).unwrap().total, 0.4 + 0.2);
    let bad = LossParts {
        gan: f64::NAN,
        ..parts
    };
    match total_loss(bad, &cfg, 12) {
        Err(Error::NonFinite { term, step }) => {
            assert_eq!(term, "gan");
            assert_eq!(step, 12);
        }
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

proptest! {
    #[test]
    fn total_loss_matches_oracle(
        c in 0.0f64..10.0, g in 0.0f64..10.0, a in 0.0f64..10.0, s in 0.0f64..10.0,
        lg in 0.0f64..5.0, ls in 0.0f64..5.0,
    ) {
        let cfg = TrainConfig { lambda_gan: lg, lambda_seg: ls, ..TrainConfig::default() };
        let r = total_loss(LossParts { content: c, geo: g, gan: a, seg: s }, &cfg, 1).unwrap();
        let want = oracle::losssum([c, g, a, s], lg, ls);
        prop_assert!((r.total - want).abs() <= 1e-9 * want.abs().max(1.0));
    }

    #[test]
    fn seg_loss_matches_oracle(seed in 0u64..5000, side in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = side * side;
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..5)).collect();
        let logits: Vec<Tensor<f64>> = (0..5).map(|_| rand_t(&[1, 1, side, side], &mut rng).map(|v| 3.0 * v)).collect();
        let rows: Vec<Vec<f64>> = logits.iter().map(|t| t.data().to_vec()).collect();
        let got = seg_loss(&logits, &truth).unwrap();
        prop_assert!(got >= 0.0);
        prop_assert!((got - oracle::xent(&rows, &truth).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn content_and_geo_are_nonnegative(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = unit_t(&[1, 3, 8, 8], &mut rng);
        let b = unit_t(&[1, 3, 8, 8], &mut rng);
        prop_assert!(content_loss(&fx(), &a, &b).unwrap() >= 0.0);
        let flow = rand_t(&[1, 2, 4, 4], &mut rng);
        let (corr, reg, _) = geo_loss(&flow, &rand_t(&[1, 3, 4, 4], &mut rng), &rand_t(&[1, 3, 4, 4], &mut rng)).unwrap();
        prop_assert!(corr >= -1e-12 && reg >= 0.0);
    }
}

fn check(name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let r = grad_check(f, &inputs, STEP).unwrap();
    assert!(r.passes(TOL), "{name}: {r}");
}

#[test]
fn loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let fx = fx();
    check(
        "content",
        vec![
            unit_t(&[1, 3, 8, 8], &mut rng),
            unit_t(&[1, 3, 8, 8], &mut rng),
        ],
        |g, v| content_loss_vars(g, &fx, v[0], v[1]).unwrap().total,
    );
    check(
        "geo",
        vec![
            rand_t(&[1, 2, 4, 4], &mut rng).map(|x| 0.4 * x + 0.13),
            rand_t(&[1, 3, 4, 4], &mut rng),
            rand_t(&[1, 3, 4, 4], &mut rng),
        ],
        |g, v| geo_loss_vars(g, v[0], v[1], v[2]).unwrap().total,
    );
    let disc = PatchDiscriminator::<f64>::new(9, "d", 1, &mut seeded_rng(9, 0));
    for (label, pick) in [("gan g", 0usize), ("gan d", 1)] {
        check(
            label,
            vec![
                unit_t(&[1, 3, 16, 16], &mut rng),
                unit_t(&[1, 3, 16, 16], &mut rng),
                unit_t(&[1, 1, 16, 16], &mut rng),
            ],
            |g, v| {
                let (gl, dl) = gan_loss_vars(g, &disc, v[0], v[1], v[2]).unwrap();
                [gl, dl][pick]
            },
        );
    }
    let truth: Rc<Vec<usize>> = Rc::new((0..16).map(|i| (i * 3) % 5).collect());
    let logits: Vec<Tensor<f64>> = (0..5).map(|_| rand_t(&[1, 1, 4, 4], &mut rng)).collect();
    check("seg xent", logits.clone(), |g, v| {
        seg_loss_vars(g, v, truth.clone()).unwrap()
    });
    check("seg bce", logits, |g, v| {
        mask_bce_vars(g, v, &truth).unwrap()
    });
}
