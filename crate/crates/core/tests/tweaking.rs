use std::collections::BTreeMap;

use dressup_core::dataset::{render_person, PaperDollSpec, Sample};
use dressup_core::encoders::{GRID, LATENT};
use dressup_core::image::{joint, Keypoints, LABEL_BOTTOM, LABEL_HAIR, LABEL_TOP};
use dressup_core::model::{GarmentFeature, Model, PersonInput};
use dressup_core::tensor::Tensor;
use dressup_core::tweaking::{
    apply_tweaks, fit_attribute_direction, limb_chains, limb_corridor, pooled_latent,
    recolor_texture, torso_polygon, tweak_latent, tweak_person, tweak_shape_mask, width_band,
    Attribute, AttributeDirection, Tweak, TweakKind, TweakPayload, LATENT_STEP,
};
use dressup_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn person(seed: u64, sleeve: f64, leg: f64) -> Sample {
    let mut spec = PaperDollSpec::random(seed);
    spec.top.sleeve_or_leg_length = sleeve;
    spec.bottom.sleeve_or_leg_length = leg;
    render_person(&spec).unwrap()
}

/// Garment feature with the ground-truth grid mask and a random texture.
fn gt_feature(s: &Sample, label: u8, seed: u64) -> GarmentFeature<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = s.seg.downsample_majority(4);
    GarmentFeature {
        texture: Tensor::from_fn(&[1, LATENT, GRID, GRID], |_| rng.random_range(-1.0..1.0)),
        shape_mask: Tensor::from_fn(&[1, 1, GRID, GRID], |i| {
            if small.labels()[i] == label {
                0.95
            } else {
                0.02
            }
        }),
        flow: Tensor::zeros(&[1, 2, GRID, GRID]),
        source_label: label,
    }
}

fn area(g: &GarmentFeature<f64>) -> usize {
    g.shape_mask.data().iter().filter(|&&m| m > 0.5).count()
}

/// Cells of every corridor a length tweak may touch.
fn corridor_cells(k: &Keypoints, kind: TweakKind) -> Vec<(usize, usize)> {
    let torso = torso_polygon(k).unwrap();
    limb_chains(kind)
        .unwrap()
        .iter()
        .flat_map(|chain| {
            let line: Vec<(f64, f64)> = chain
                .iter()
                .map(|&j| (k.get(j).x as f64 / 4.0, k.get(j).y as f64 / 4.0))
                .collect();
            limb_corridor(&line, &torso).into_iter().map(|(c, _)| c)
        })
        .collect()
}

fn assert_outside_identical(
    a: &GarmentFeature<f64>,
    b: &GarmentFeature<f64>,
    inside: &dyn Fn(usize, usize) -> bool,
) {
    assert_eq!(a.flow, b.flow);
    for y in 0..GRID {
        for x in 0..GRID {
            if inside(y, x) {
                continue;
            }
            assert_eq!(
                a.shape_mask.at4(0, 0, y, x).to_bits(),
                b.shape_mask.at4(0, 0, y, x).to_bits(),
                "mask ({y},{x})"
            );
            for c in 0..LATENT {
                assert_eq!(
                    a.texture.at4(0, c, y, x).to_bits(),
                    b.texture.at4(0, c, y, x).to_bits()
                );
            }
        }
    }
}

fn cell_of(k: &Keypoints, j: usize) -> (usize, usize) {
    let p = k.get(j);
    ((p.y / 4.0).floor() as usize, (p.x / 4.0).floor() as usize)
}

#[test]
fn magnitude_zero_is_identity_for_every_kind() {
    let s = person(3, 0.2, 0.2);
    let g = gt_feature(&s, LABEL_TOP, 1);
    for kind in [
        TweakKind::SleeveLength,
        TweakKind::LegLength,
        TweakKind::Width,
    ] {
        assert_eq!(tweak_shape_mask(&g, &s.keypoints, kind, 0.0).unwrap(), g);
    }
    let model = Model::<f64>::new(5);
    assert_eq!(
        recolor_texture(&model, &g, [1.0, 0.0, 0.0], 0.0).unwrap(),
        g
    );
    let dir = unit_direction(0);
    assert_eq!(tweak_latent(&g, &dir, 0.0).unwrap(), g);
    let mut dirs = BTreeMap::new();
    dirs.insert("d".to_string(), dir);
    let enc = encoded(&model, &s);
    let tweaks = [
        Tweak {
            kind: TweakKind::Recolor,
            magnitude: 0.0,
            target_garment: 0,
            payload: Some(TweakPayload::Color {
                rgb: [0.0, 1.0, 0.0],
            }),
        },
        Tweak {
            kind: TweakKind::Latent,
            magnitude: 0.0,
            target_garment: 1,
            payload: Some(TweakPayload::Direction { id: "d".into() }),
        },
        Tweak {
            kind: TweakKind::Width,
            magnitude: 0.0,
            target_garment: 1,
            payload: None,
        },
    ];
    assert_eq!(
        tweak_person(&model, &enc, &s.keypoints, &tweaks, &dirs).unwrap(),
        enc
    );
}

#[test]
fn full_sleeve_reaches_the_wrists() {
    for seed in 0..10 {
        let s = person(seed, 0.0, 0.5);
        let g = gt_feature(&s, LABEL_TOP, seed);
        let out = tweak_shape_mask(&g, &s.keypoints, TweakKind::SleeveLength, 1.0).unwrap();
        for wrist in [joint::R_WRIST, joint::L_WRIST] {
            let (y, x) = cell_of(&s.keypoints, wrist);
            assert!(
                out.shape_mask.at4(0, 0, y, x) > 0.5,
                "seed {seed}: wrist cell ({y},{x}) uncovered"
            );
        }
        assert!(area(&out) > area(&g));
        // New cells copy an existing covered cell's texture.
        let covered: Vec<Vec<u64>> = (0..GRID * GRID)
            .filter(|&i| g.shape_mask.data()[i] > 0.5)
            .map(|i| {
                (0..LATENT)
                    .map(|c| g.texture.at4(0, c, i / GRID, i % GRID).to_bits())
                    .collect()
            })
            .collect();
        for i in 0..GRID * GRID {
            if out.shape_mask.data()[i] > 0.5 && g.shape_mask.data()[i] <= 0.5 {
                let tex: Vec<u64> = (0..LATENT)
                    .map(|c| out.texture.at4(0, c, i / GRID, i % GRID).to_bits())
                    .collect();
                assert!(covered.contains(&tex));
            }
        }
        let (y, x) = cell_of(&s.keypoints, joint::L_ANKLE);
        let legs = tweak_shape_mask(
            &gt_feature(&s, LABEL_BOTTOM, 1),
            &s.keypoints,
            TweakKind::LegLength,
            1.0,
        )
        .unwrap();
        assert!(legs.shape_mask.at4(0, 0, y, x) > 0.5);
    }
}

#[test]
fn retraction_shrinks_only_inside_the_corridor() {
    for seed in 0..10 {
        let s = person(seed, 1.0, 1.0);
        for (label, kind) in [
            (LABEL_TOP, TweakKind::SleeveLength),
            (LABEL_BOTTOM, TweakKind::LegLength),
        ] {
            let g = gt_feature(&s, label, seed);
            let out = tweak_shape_mask(&g, &s.keypoints, kind, -1.0).unwrap();
            let cells = corridor_cells(&s.keypoints, kind);
            let inside = |y: usize, x: usize| cells.contains(&(y, x));
            let count = |f: &GarmentFeature<f64>| {
                cells
                    .iter()
                    .filter(|&&(y, x)| f.shape_mask.at4(0, 0, y, x) > 0.5)
                    .count()
            };
            assert!(count(&out) < count(&g), "seed {seed} {kind:?}");
            assert_outside_identical(&g, &out, &inside);
        }
    }
}

#[test]
fn sleeve_round_trip_area_returns_within_ten_percent() {
    // -1 retracts fully, so the round trip is measured from sleeveless tops; a partial
    // sleeve would come back sleeveless. A forearm crossing the torso carves a few body
    // cells, so single poses can miss; the mean over poses is the measured quantity.
    let mut total = 0.0;
    let n = 50;
    for seed in 0..n {
        let s = person(seed, 0.0, 0.5);
        let g = gt_feature(&s, LABEL_TOP, seed);
        let long = tweak_shape_mask(&g, &s.keypoints, TweakKind::SleeveLength, 1.0).unwrap();
        let back = tweak_shape_mask(&long, &s.keypoints, TweakKind::SleeveLength, -1.0).unwrap();
        let (a, b) = (area(&g) as f64, area(&back) as f64);
        assert!((a - b).abs() <= 0.5 * a, "seed {seed}: {a} -> {b}");
        total += (a - b).abs() / a;
    }
    let mean = total / n as f64;
    assert!(mean <= 0.1, "mean relative area change {mean}");
}

#[test]
fn width_edits_stay_in_the_band() {
    for seed in 0..10 {
        let s = person(seed, 0.5, 0.5);
        let g = gt_feature(&s, LABEL_TOP, seed);
        let (rows, _) = width_band(&s.keypoints, LABEL_TOP).unwrap();
        let wide = tweak_shape_mask(&g, &s.keypoints, TweakKind::Width, 1.0).unwrap();
        let narrow = tweak_shape_mask(&g, &s.keypoints, TweakKind::Width, -1.0).unwrap();
        assert!(area(&wide) > area(&g), "seed {seed}");
        assert!(area(&narrow) < area(&g), "seed {seed}");
        let band = |y: usize, _: usize| rows.contains(&y);
        assert_outside_identical(&g, &wide, &band);
        assert_outside_identical(&g, &narrow, &band);
    }
}

#[test]
fn invisible_joints_are_named() {
    let s = person(1, 0.5, 0.5);
    let g = gt_feature(&s, LABEL_TOP, 0);
    let mut k = s.keypoints;
    k.0[joint::L_ELBOW].visible = false;
    let err = tweak_shape_mask(&g, &k, TweakKind::SleeveLength, 0.5).unwrap_err();
    assert!(
        matches!(&err, Error::Tweak(m) if m.contains("left_elbow")),
        "{err}"
    );
    assert!(tweak_shape_mask(&g, &k, TweakKind::LegLength, 0.5).is_ok());
    k.0[joint::R_HIP].visible = false;
    assert!(
        matches!(tweak_shape_mask(&g, &k, TweakKind::Width, 0.5), Err(Error::Tweak(m)) if m.contains("right_hip"))
    );
    assert!(tweak_shape_mask(&g, &s.keypoints, TweakKind::Width, 1.5)
        .unwrap_err()
        .is_validation());
    assert!(tweak_shape_mask(&g, &s.keypoints, TweakKind::Recolor, 0.5)
        .unwrap_err()
        .is_validation());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn shape_tweaks_never_touch_outside_the_corridor(seed in 0u64..1000, m in -1.0f64..=1.0, sleeve in 0.0f64..=1.0) {
        let s = person(seed, sleeve, 1.0 - sleeve);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = gt_feature(&s, LABEL_TOP, seed);
        // Soft random masks exercise partial coverage too.
        for v in g.shape_mask.data_mut() {
            if rng.random_range(0.0..1.0) < 0.2 {
                *v = rng.random_range(0.0..1.0);
            }
        }
        for kind in [TweakKind::SleeveLength, TweakKind::LegLength] {
            let out = tweak_shape_mask(&g, &s.keypoints, kind, m).unwrap();
            let cells = corridor_cells(&s.keypoints, kind);
            assert_outside_identical(&g, &out, &|y, x| cells.contains(&(y, x)));
        }
    }
}

fn encoded(model: &Model<f64>, s: &Sample) -> dressup_core::model::PersonRepresentation<f64> {
    let input = PersonInput {
        image: &s.image,
        seg: &s.seg,
        keypoints: &s.keypoints,
    };
    model
        .encode_person(input, &s.keypoints, &[LABEL_HAIR, LABEL_TOP, LABEL_BOTTOM])
        .unwrap()
        .person
}

#[test]
fn recolor_blends_inside_the_mask_only() {
    let model = Model::<f64>::new(8);
    let s = person(4, 0.5, 0.5);
    let g = gt_feature(&s, LABEL_TOP, 2);
    let red = [0.9, 0.1, 0.1];
    let once = recolor_texture(&model, &g, red, 1.0).unwrap();
    let twice = recolor_texture(&model, &once, red, 1.0).unwrap();
    let diff = once
        .texture
        .data()
        .iter()
        .zip(twice.texture.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-6);
    assert_ne!(once, g);
    assert_outside_identical(&g, &once, &|y, x| g.shape_mask.at4(0, 0, y, x) > 0.5);
    assert_eq!(once.shape_mask, g.shape_mask);
    // Half strength is the midpoint of identity and full strength.
    let half = recolor_texture(&model, &g, red, 0.5).unwrap();
    for ((h, a), b) in half
        .texture
        .data()
        .iter()
        .zip(g.texture.data())
        .zip(once.texture.data())
    {
        assert!((h - 0.5 * (a + b)).abs() < 1e-12);
    }
    assert!(recolor_texture(&model, &g, red, 1.5)
        .unwrap_err()
        .is_validation());
    assert!(recolor_texture(&model, &g, red, -0.1)
        .unwrap_err()
        .is_validation());
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_clouds(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let positive = i % 2 == 0;
        let mut z: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        z[0] += if positive { 2.0 } else { -2.0 };
        latents.push(z);
        labels.push(positive);
    }
    (latents, labels)
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
}

#[test]
fn axis_separable_latents_recover_the_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 16;
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for i in 0..120 {
        let positive = i % 2 == 0;
        // Off-axis coordinates carry only small noise.
        let mut z: Vec<f64> = (0..dim).map(|_| 0.1 * normal(&mut rng)).collect();
        z[1] = if positive {
            rng.random_range(1.0..3.0)
        } else {
            rng.random_range(-3.0..-1.0)
        };
        latents.push(z);
        labels.push(positive);
    }
    let d = fit_attribute_direction(&latents, &labels, Attribute::WideTop, 0).unwrap();
    let mut e1 = vec![0.0; dim];
    e1[1] = 1.0;
    assert!(
        cos(&d.direction, &e1).abs() >= 0.99,
        "cos {}",
        cos(&d.direction, &e1)
    );
    let norm: f64 = d.direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-6);
    assert_eq!(d.fit_accuracy, 1.0);
}

#[test]
fn gaussian_clouds_hold_out_above_95_percent() {
    // The Bayes rule sign(z0) scores about 0.977, so one 40-point holdout has a few points
    // of sampling noise; average over seeds.
    let mut total = 0.0;
    for seed in 0..10 {
        let (latents, labels) = gaussian_clouds(200, 8, seed);
        let d = fit_attribute_direction(&latents, &labels, Attribute::LongSleeves, 7).unwrap();
        assert_eq!(d.train_count, 160);
        assert!(d.direction[0] > 0.8, "seed {seed}: {:?}", d.direction);
        assert!(d.fit_accuracy >= 0.85, "seed {seed}: {}", d.fit_accuracy);
        total += d.fit_accuracy;
    }
    assert!(total / 10.0 >= 0.95, "mean accuracy {}", total / 10.0);
}

#[test]
fn fit_preconditions() {
    let (latents, _) = gaussian_clouds(60, 4, 1);
    assert!(
        fit_attribute_direction(&latents, &[true; 60], Attribute::LongLegs, 0)
            .unwrap_err()
            .is_validation()
    );
    let few: Vec<bool> = (0..60).map(|i| i < 10).collect();
    assert!(
        fit_attribute_direction(&latents, &few, Attribute::LongLegs, 0)
            .unwrap_err()
            .is_validation()
    );
    assert!(
        fit_attribute_direction(&latents, &[true, false], Attribute::LongLegs, 0)
            .unwrap_err()
            .is_validation()
    );
    let mut bad = latents.clone();
    bad[3][0] = f64::NAN;
    let labels: Vec<bool> = (0..60).map(|i| i % 2 == 0).collect();
    assert!(
        fit_attribute_direction(&bad, &labels, Attribute::LongLegs, 0)
            .unwrap_err()
            .is_validation()
    );
}

#[test]
fn fit_ignores_example_order_and_label_polarity() {
    let (latents, labels) = gaussian_clouds(100, 6, 9);
    let d = fit_attribute_direction(&latents, &labels, Attribute::DarkTop, 4).unwrap();
    let mut order: Vec<usize> = (0..100).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in (1..100).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| latents[i].clone()).collect();
    let shuffled_labels: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    let s = fit_attribute_direction(&shuffled, &shuffled_labels, Attribute::DarkTop, 4).unwrap();
    assert!((cos(&d.direction, &s.direction) - 1.0).abs() < 1e-9);
    assert_eq!(d.fit_accuracy, s.fit_accuracy);
    let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
    let f = fit_attribute_direction(&latents, &flipped, Attribute::DarkTop, 4).unwrap();
    assert!((cos(&d.direction, &f.direction) + 1.0).abs() < 1e-9);
}

#[test]
fn direction_json_round_trip() {
    let (latents, labels) = gaussian_clouds(80, 5, 5);
    let d = fit_attribute_direction(&latents, &labels, Attribute::StripedTop, 1).unwrap();
    let back = AttributeDirection::from_json(&d.to_json()).unwrap();
    assert_eq!(back, d);
    let json: serde_json::Value = serde_json::from_str(&d.to_json()).unwrap();
    assert_eq!(json["attribute"], "striped_top");
    assert!(json["train_count"].is_u64());
    let mut off = d.clone();
    off.direction[0] += 0.5;
    assert!(matches!(
        AttributeDirection::from_json(&off.to_json()),
        Err(Error::Format(_))
    ));
    assert_eq!("wide_top".parse::<Attribute>().unwrap(), Attribute::WideTop);
    assert!("tall".parse::<Attribute>().unwrap_err().is_validation());
}

fn unit_direction(axis: usize) -> AttributeDirection {
    let mut direction = vec![0.0; LATENT];
    direction[axis] = 1.0;
    AttributeDirection {
        attribute: Attribute::LongSleeves,
        direction,
        fit_accuracy: 1.0,
        train_count: 0,
        scale: 2.0,
        bias: -0.5,
    }
}

#[test]
fn latent_tweak_is_monotone_and_masked() {
    let s = person(6, 0.5, 0.5);
    let g = gt_feature(&s, LABEL_TOP, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut raw: Vec<f64> = (0..LATENT).map(|_| normal(&mut rng)).collect();
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter_mut().for_each(|v| *v /= n);
    let dir = AttributeDirection {
        direction: raw,
        ..unit_direction(0)
    };
    let scores: Vec<f64> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .map(|&m| dir.score(&pooled_latent(&tweak_latent(&g, &dir, m).unwrap()).unwrap()))
        .collect();
    assert!(scores.windows(2).all(|w| w[1] >= w[0]), "{scores:?}");
    // Pooled latents move by exactly magnitude * step along the direction.
    let shift = scores[4] - scores[2];
    assert!((shift - dir.scale * LATENT_STEP).abs() < 1e-9);
    let out = tweak_latent(&g, &dir, 0.7).unwrap();
    assert_outside_identical(&g, &out, &|y, x| g.shape_mask.at4(0, 0, y, x) > 0.5);
    assert_eq!(out.shape_mask, g.shape_mask);
    let short = AttributeDirection {
        direction: vec![1.0],
        ..unit_direction(0)
    };
    assert!(tweak_latent(&g, &short, 0.5).is_err());
}

#[test]
fn apply_tweaks_folds_in_order() {
    let model = Model::<f64>::new(2);
    let s = person(7, 0.3, 0.3);
    let enc = encoded(&model, &s);
    let dirs = BTreeMap::new();
    assert_eq!(
        apply_tweaks(&model, &enc, &s.keypoints, &[], &dirs).unwrap(),
        model.try_on(&enc).unwrap()
    );

    let top = Tweak {
        kind: TweakKind::Recolor,
        magnitude: 0.8,
        target_garment: 1,
        payload: Some(TweakPayload::Color {
            rgb: [0.1, 0.2, 0.9],
        }),
    };
    let bottom = Tweak {
        kind: TweakKind::LegLength,
        magnitude: 0.6,
        target_garment: 2,
        payload: None,
    };
    let ab = apply_tweaks(
        &model,
        &enc,
        &s.keypoints,
        &[top.clone(), bottom.clone()],
        &dirs,
    )
    .unwrap();
    let ba = apply_tweaks(
        &model,
        &enc,
        &s.keypoints,
        &[bottom.clone(), top.clone()],
        &dirs,
    )
    .unwrap();
    assert_eq!(ab, ba);
    assert_ne!(ab, model.try_on(&enc).unwrap());

    let bad = Tweak {
        target_garment: 3,
        ..bottom.clone()
    };
    assert!(apply_tweaks(&model, &enc, &s.keypoints, &[bad], &dirs)
        .unwrap_err()
        .is_validation());
    let missing = Tweak {
        kind: TweakKind::Latent,
        magnitude: 0.5,
        target_garment: 0,
        payload: Some(TweakPayload::Direction { id: "nope".into() }),
    };
    assert!(apply_tweaks(&model, &enc, &s.keypoints, &[missing], &dirs)
        .unwrap_err()
        .is_validation());
    let no_color = Tweak {
        kind: TweakKind::Recolor,
        magnitude: 0.5,
        target_garment: 0,
        payload: None,
    };
    assert!(no_color.validate().unwrap_err().is_validation());
}

#[test]
fn tweak_json_shape() {
    let t: Tweak = serde_json::from_str(r#"{"kind":"recolor","magnitude":0.5,"target_garment":1,"payload":{"type":"color","rgb":[1,0,0]}}"#).unwrap();
    assert_eq!(
        t.payload,
        Some(TweakPayload::Color {
            rgb: [1.0, 0.0, 0.0]
        })
    );
    let back: Tweak = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
    assert_eq!(back, t);
    assert!(serde_json::from_str::<Tweak>(
        r#"{"kind":"sleeve_length","magnitude":0.5,"target_garment":0,"extra":1}"#
    )
    .is_err());
    let wide = Tweak {
        kind: TweakKind::Width,
        magnitude: 1.2,
        target_garment: 0,
        payload: None,
    };
    assert!(wide.validate().unwrap_err().is_validation());
}
