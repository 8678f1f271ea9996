use std::collections::BTreeMap;

use dressup_core::dataset::{render_person, DollGeometry, Paint, PaperDollSpec, Vec2};
use dressup_core::image::{Keypoint, Keypoints, LabelMap, LABEL_TOP};
use dressup_core::preprocessing::{
    extract_segment, import_external_parse, import_external_pose, make_heatmaps,
    parse_external_pose, parse_label_map, remap_parse,
};
use proptest::prelude::*;
use serde_json::json;

fn visible(x: f32, y: f32) -> Keypoint {
    Keypoint {
        x,
        y,
        visible: true,
    }
}

#[test]
fn invisible_keypoints_give_zero_heatmaps() {
    let t = make_heatmaps::<f32>(&Keypoints::default()).unwrap();
    assert_eq!(t.shape(), &[1, 18, 64, 64]);
    assert_eq!(t.max_abs(), 0.0);
}

#[test]
fn two_keypoints_two_channels() {
    let mut kps = Keypoints::default();
    kps.0[1] = visible(10.2, 30.7);
    kps.0[9] = visible(50.0, 5.0);
    let t = make_heatmaps::<f64>(&kps).unwrap();
    let nonzero: Vec<usize> = (0..18)
        .filter(|&c| t.channels(c, 1).max_abs() > 0.0)
        .collect();
    assert_eq!(nonzero, vec![1, 9]);
    assert_eq!(t.at4(0, 1, 31, 10), 1.0);
    assert_eq!(t.channels(1, 1).max_abs(), 1.0);
}

#[test]
fn segments_partition_the_image() {
    let s = render_person(&PaperDollSpec::random(11)).unwrap();
    let mut total = vec![0.0f64; 64 * 64];
    for label in 0..5 {
        let seg = extract_segment::<f64>(&s.image, &s.seg, label).unwrap();
        for (t, m) in total.iter_mut().zip(seg.mask.data()) {
            *t += m;
        }
    }
    assert!(total.iter().all(|&v| v == 1.0));
    assert!(extract_segment::<f32>(&s.image, &s.seg, 5)
        .unwrap_err()
        .is_validation());
}

#[test]
fn absent_label_gives_empty_segment() {
    let mut spec = PaperDollSpec::random(4);
    spec.hair_style = dressup_core::dataset::HairStyle::None;
    let s = render_person(&spec).unwrap();
    let seg = extract_segment::<f32>(&s.image, &s.seg, 2).unwrap();
    assert_eq!(seg.mask.max_abs(), 0.0);
    assert_eq!(seg.masked_image.max_abs(), 0.0);
}

#[test]
fn top_segment_matches_renderer_polygons() {
    for seed in 0..20 {
        let spec = PaperDollSpec::random(seed);
        let s = render_person(&spec).unwrap();
        let geo = DollGeometry::new(&spec);
        let seg = extract_segment::<f32>(&s.image, &s.seg, LABEL_TOP).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let p = Vec2::new(x as f64, y as f64);
                let front = geo.layers.iter().rev().find(|l| l.contains(p));
                let is_top = front.is_some_and(|l| l.paint == Paint::Top);
                let lit = (0..3).any(|c| seg.masked_image.at4(0, c, y, x) != 0.0);
                if lit {
                    assert!(is_top, "seed {seed} ({x}, {y})");
                }
                assert_eq!(seg.mask.at4(0, 0, y, x) == 1.0, is_top);
            }
        }
    }
}

#[test]
fn external_pose_threshold_and_rescale() {
    let zeros = json!(vec![0.0; 54]);
    let kps = parse_external_pose(&zeros, (64, 64), 0.1).unwrap();
    assert!(kps.0.iter().all(|k| !k.visible));

    let mut flat = vec![0.0; 54];
    flat[2] = 0.05;
    flat[5] = 0.5;
    flat[3] = 100.0;
    flat[4] = 40.0;
    let kps = parse_external_pose(&json!(flat), (256, 256), 0.1).unwrap();
    assert!(!kps.0[0].visible);
    assert!(kps.0[1].visible);
    assert_eq!((kps.0[1].x, kps.0[1].y), (25.0, 10.0));

    let doc = json!({"keypoints": flat, "width": 128, "height": 256});
    let kps = parse_external_pose(&doc, (64, 64), 0.1).unwrap();
    assert_eq!((kps.0[1].x, kps.0[1].y), (50.0, 10.0));

    let openpose = json!({"people": [{"pose_keypoints_2d": flat}]});
    assert_eq!(
        parse_external_pose(&openpose, (256, 256), 0.1).unwrap().0[1].x,
        25.0
    );

    let err = parse_external_pose(&json!([1.0, 2.0]), (64, 64), 0.1).unwrap_err();
    assert!(matches!(err, dressup_core::Error::Format(_)));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pose.json");
    std::fs::write(&path, serde_json::to_vec(&json!(flat)).unwrap()).unwrap();
    assert_eq!(
        import_external_pose(&path, (256, 256), 0.1).unwrap(),
        kps_at(&flat)
    );
}

fn kps_at(flat: &[f64]) -> Keypoints {
    parse_external_pose(&json!(flat), (256, 256), 0.1).unwrap()
}

#[test]
fn external_parse_identity_constant_and_resize() {
    let s = render_person(&PaperDollSpec::random(8)).unwrap();
    let identity: BTreeMap<u32, u8> = (0..5).map(|i| (i, i as u8)).collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.png");
    s.seg.save_png(&path).unwrap();
    assert_eq!(import_external_parse(&path, &identity).unwrap(), s.seg);

    let zero: BTreeMap<u32, u8> = (0..5).map(|i| (i, 0)).collect();
    assert_eq!(remap_parse(&s.seg, &zero).unwrap().count(0), 64 * 64);

    let big = LabelMap::from_vec(
        128,
        128,
        (0..128 * 128)
            .map(|i| ((i * 7 + i / 128) % 5) as u8)
            .collect(),
    )
    .unwrap();
    let small = remap_parse(&big, &identity).unwrap();
    for y in 0..64 {
        for x in 0..64 {
            assert_eq!(small.get(y, x), big.get(2 * y, 2 * x));
        }
    }

    let partial: BTreeMap<u32, u8> = [(0, 0), (1, 1)].into_iter().collect();
    let err = remap_parse(&s.seg, &partial).unwrap_err().to_string();
    assert!(err.contains("unmapped label id"), "{err}");

    let parsed = parse_label_map(&json!({"0": 0, "13": 2})).unwrap();
    assert_eq!(parsed.get(&13), Some(&2));
    assert!(parse_label_map(&json!({"0": 9})).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn heatmap_peaks_at_rounded_pixel(x in 0.0f32..63.49, y in 0.0f32..63.49, j in 0usize..18) {
        let mut kps = Keypoints::default();
        kps.0[j] = visible(x, y);
        let t = make_heatmaps::<f32>(&kps).unwrap();
        prop_assert_eq!(t.at4(0, j, y.round() as usize, x.round() as usize), 1.0);
        prop_assert_eq!(t.max_abs(), 1.0);
    }

    #[test]
    fn extract_is_idempotent(seed in 0u64..1000, label in 0u8..5) {
        let s = render_person(&PaperDollSpec::random(seed)).unwrap();
        let seg = extract_segment::<f32>(&s.image, &s.seg, label).unwrap();
        prop_assert_eq!(seg.remasked(), seg);
    }

    #[test]
    fn adapters_never_invent_labels(targets in proptest::collection::vec(0u8..5, 5)) {
        let s = render_person(&PaperDollSpec::random(1)).unwrap();
        let map: BTreeMap<u32, u8> = targets.iter().enumerate().map(|(i, &t)| (i as u32, t)).collect();
        let out = remap_parse(&s.seg, &map).unwrap();
        prop_assert!(out.labels().iter().all(|l| targets.contains(l)));
    }
}
