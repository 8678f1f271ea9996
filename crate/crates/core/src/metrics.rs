//! SSIM and segmentation IoU, dataset evaluation, and the garment-order and
//! self-transfer diagnostics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, Split};
use crate::encoders::GRID;
use crate::error::{Error, Result};
use crate::image::{
    joint, Keypoints, LabelMap, RgbImage, IMAGE_SIZE, LABEL_HAIR, LABEL_SKIN, NUM_LABELS,
};
use crate::model::{Model, PersonInput, PersonRepresentation, DEFAULT_ORDER};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::training::{grid_labels, load_split, PairData};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Threshold turning soft masks into binary masks for sIoU.
pub const MASK_THRESHOLD: f64 = 0.5;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    std::array::from_fn(|i| {
        let d = i as f64 - r;
        (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    })
}

/// Separable Gaussian average. Taps falling outside the image are dropped and the rest
/// renormalized, so every pixel gets a proper weighted mean.
fn blur(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let pass = |src: &[f64], along_x: bool| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for xx in 0..w {
                let (mut acc, mut norm) = (0.0, 0.0);
                for (k, &t) in taps.iter().enumerate() {
                    let d = k as isize - r;
                    let (sy, sx) = if along_x {
                        (y as isize, xx as isize + d)
                    } else {
                        (y as isize + d, xx as isize)
                    };
                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                        continue;
                    }
                    acc += t * src[sy as usize * w + sx as usize];
                    norm += t;
                }
                out[y * w + xx] = acc / norm;
            }
        }
        out
    };
    let tmp = pass(x, true);
    pass(&tmp, false)
}

/// Per-pixel SSIM of one channel.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> Vec<f64> {
    let taps = gaussian_taps();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = blur(x, h, w, &taps);
    let my = blur(y, h, w, &taps);
    let exx = blur(&prod(x, x), h, w, &taps);
    let eyy = blur(&prod(y, y), h, w, &taps);
    let exy = blur(&prod(x, y), h, w, &taps);
    (0..h * w)
        .map(|i| {
            let (a, b) = (mx[i], my[i]);
            let vx = exx[i] - a * a;
            let vy = eyy[i] - b * b;
            let cov = exy[i] - a * b;
            ((2.0 * a * b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((a * a + b * b + SSIM_C1) * (vx + vy + SSIM_C2))
        })
        .collect()
}

fn check_pair<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "ssim: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.shape().len() != 4 {
        return Err(Error::shape(format!(
            "ssim expects N x C x H x W, got {:?}",
            a.shape()
        )));
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::validation("image", "non-finite pixel values"));
    }
    Ok(())
}

/// Channel-averaged SSIM map, `N x 1 x H x W` in 64-bit.
pub fn ssim_map<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<f64>> {
    check_pair(a, b)?;
    let (n, c, h, w) = a.dims4();
    let hw = h * w;
    let mut out = Tensor::zeros(&[n, 1, h, w]);
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        for ch in 0..c {
            let off = (i * c + ch) * hw;
            let x: Vec<f64> = ad[off..off + hw].iter().map(|v| v.as_f64()).collect();
            let y: Vec<f64> = bd[off..off + hw].iter().map(|v| v.as_f64()).collect();
            for (o, s) in out.data_mut()[i * hw..(i + 1) * hw]
                .iter_mut()
                .zip(ssim_plane(&x, &y, h, w))
            {
                *o += s / c as f64;
            }
        }
    }
    Ok(out)
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over channels and pixels.
pub fn ssim<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    Ok(ssim_map(a, b)?.mean())
}

pub fn ssim_images(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    ssim::<f64>(&a.to_tensor(), &b.to_tensor())
}

/// Intersection over union of two binary masks; `None` when both are empty.
pub fn mask_iou(pred: &[bool], truth: &[bool]) -> Option<f64> {
    let inter = pred.iter().zip(truth).filter(|(p, t)| **p && **t).count();
    let union = pred.iter().zip(truth).filter(|(p, t)| **p || **t).count();
    (union > 0).then(|| inter as f64 / union as f64)
}

/// Per-label IoU plus notes for labels absent from both maps (reported as 1.0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiouResult {
    pub per_label: BTreeMap<u8, f64>,
    pub absent: Vec<u8>,
}

pub fn siou(pred: &LabelMap, truth: &LabelMap, labels: &[u8]) -> Result<SiouResult> {
    if (pred.width, pred.height) != (truth.width, truth.height) {
        return Err(Error::shape(format!(
            "siou: {}x{} vs {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let mut per_label = BTreeMap::new();
    let mut absent = Vec::new();
    for &l in labels {
        let p: Vec<bool> = pred.labels().iter().map(|&v| v == l).collect();
        let t: Vec<bool> = truth.labels().iter().map(|&v| v == l).collect();
        let v = mask_iou(&p, &t).unwrap_or_else(|| {
            absent.push(l);
            1.0
        });
        per_label.insert(l, v);
    }
    Ok(SiouResult { per_label, absent })
}

/// A pose-transfer prediction: the rendered image and one soft mask per label on the
/// feature grid.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub image: RgbImage,
    /// `NUM_LABELS` masks of `GRID * GRID` values in `[0, 1]`, row-major.
    pub masks: Vec<Vec<f64>>,
}

/// Anything that can move a person into a new pose.
pub trait PoseTransfer: Sync {
    fn transfer(&self, source: &Sample, target: &Keypoints) -> Result<Prediction>;
}

impl<S: Scalar> PoseTransfer for Model<S> {
    fn transfer(&self, source: &Sample, target: &Keypoints) -> Result<Prediction> {
        let enc = self.encode_person(
            PersonInput {
                image: &source.image,
                seg: &source.seg,
                keypoints: &source.keypoints,
            },
            target,
            &DEFAULT_ORDER,
        )?;
        let image = self.try_on(&enc.person)?;
        Ok(Prediction {
            image: RgbImage::from_tensor(&image, 0),
            masks: enc
                .segments
                .iter()
                .map(|s| s.shape_mask.data().iter().map(|v| v.as_f64()).collect())
                .collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ssim_mean: f64,
    pub siou_per_label: BTreeMap<u8, f64>,
    pub sample_count: usize,
    pub notes: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples   {}", self.sample_count);
        let _ = writeln!(s, "ssim      {:.4}", self.ssim_mean);
        for (l, v) in &self.siou_per_label {
            let _ = writeln!(s, "siou[{l}]   {v:.4}");
        }
        if !self.notes.is_empty() {
            let _ = writeln!(s, "notes     {}", self.notes);
        }
        s
    }
}

/// Per-sample scores behind an [`EvalReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct SampleScore {
    pub ssim: f64,
    pub siou: BTreeMap<u8, f64>,
    pub absent: Vec<u8>,
}

/// Scores one prediction against the target sample.
pub fn score_prediction(pred: &Prediction, target: &Sample) -> Result<SampleScore> {
    if pred.masks.len() != NUM_LABELS || pred.masks.iter().any(|m| m.len() != GRID * GRID) {
        return Err(Error::shape("prediction needs one grid mask per label"));
    }
    let ssim = ssim_images(&pred.image, &target.image)?;
    let truth = grid_labels(&target.seg);
    let mut siou = BTreeMap::new();
    let mut absent = Vec::new();
    for l in 0..NUM_LABELS {
        let p: Vec<bool> = pred.masks[l].iter().map(|&v| v > MASK_THRESHOLD).collect();
        let t: Vec<bool> = truth.iter().map(|&v| v == l).collect();
        let v = mask_iou(&p, &t).unwrap_or_else(|| {
            absent.push(l as u8);
            1.0
        });
        siou.insert(l as u8, v);
    }
    Ok(SampleScore { ssim, siou, absent })
}

fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Scores every pair; the report is the mean of the per-sample values.
pub fn evaluate_pairs(
    model: &dyn PoseTransfer,
    pairs: &[PairData],
) -> Result<(EvalReport, Vec<SampleScore>)> {
    if pairs.is_empty() {
        return Err(Error::validation("split", "no pairs to evaluate"));
    }
    let scores = parallel_map(pairs, |p| {
        let pred = model.transfer(&p.source, &p.target.keypoints)?;
        score_prediction(&pred, &p.target)
    })?;
    let n = scores.len() as f64;
    let ssim_mean = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
    let mut siou_per_label = BTreeMap::new();
    for l in 0..NUM_LABELS as u8 {
        siou_per_label.insert(l, scores.iter().map(|s| s.siou[&l]).sum::<f64>() / n);
    }
    let absent: usize = scores.iter().map(|s| s.absent.len()).sum();
    let notes = format!(
        "ssim: {SSIM_WINDOW}x{SSIM_WINDOW} gaussian window, sigma {SSIM_SIGMA}, C1 {SSIM_C1:e}, C2 {SSIM_C2:e}, \
         edge windows renormalized; siou: predicted masks > {MASK_THRESHOLD} vs majority-downsampled \
         target labels on the {GRID}x{GRID} grid; {absent} label slots absent from both and scored 1.0"
    );
    Ok((
        EvalReport {
            ssim_mean,
            siou_per_label,
            sample_count: scores.len(),
            notes,
        },
        scores,
    ))
}

/// Runs pose transfer over one split of a dataset.
pub fn evaluate(model: &dyn PoseTransfer, split: Split, dataset: &Path) -> Result<EvalReport> {
    if split == Split::Train {
        return Err(Error::validation("split", "evaluate on val or test"));
    }
    let pairs = load_split(dataset, split)?;
    Ok(evaluate_pairs(model, &pairs)?.0)
}

/// Renders of one person under several garment orders, compared pairwise.
#[derive(Clone, Debug)]
pub struct OrderVariationReport {
    pub orders: Vec<Vec<usize>>,
    /// Mean absolute pixel difference between renders `i` and `j`.
    pub mad: Vec<Vec<f64>>,
    /// Per-pixel channel-mean absolute difference, maximized over order pairs, `H * W`.
    pub heat: Vec<f64>,
    pub renders: Vec<RgbImage>,
}

impl OrderVariationReport {
    /// Heat mask as an 8-bit gray PNG scaled so the largest difference is white.
    pub fn heat_png(&self) -> Result<Vec<u8>> {
        let peak = self.heat.iter().cloned().fold(0.0, f64::max);
        let mut img = RgbImage::new(IMAGE_SIZE, IMAGE_SIZE);
        for (i, &v) in self.heat.iter().enumerate() {
            let g = if peak > 0.0 { (v / peak) as f32 } else { 0.0 };
            img.set_pixel(i / IMAGE_SIZE, i % IMAGE_SIZE, [g; 3]);
        }
        img.encode_png()
    }
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n
        && order
            .iter()
            .all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// Re-renders `person` with its garments permuted by each order.
pub fn order_variation_report<S: Scalar>(
    person: &PersonRepresentation<S>,
    orders: &[Vec<usize>],
    model: &Model<S>,
) -> Result<OrderVariationReport> {
    if orders.len() < 2 {
        return Err(Error::validation(
            "orders",
            "at least two orders are required",
        ));
    }
    let n = person.garments.len();
    if let Some(bad) = orders.iter().find(|o| !is_permutation(o, n)) {
        return Err(Error::validation(
            "orders",
            format!("{bad:?} is not a permutation of {n} garments"),
        ));
    }
    let renders = orders
        .iter()
        .map(|o| {
            let p = PersonRepresentation {
                pose: person.pose.clone(),
                body: person.body.clone(),
                garments: o.iter().map(|&i| person.garments[i].clone()).collect(),
            };
            Ok(RgbImage::from_tensor(&model.try_on(&p)?, 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let hw = IMAGE_SIZE * IMAGE_SIZE;
    let mut heat = vec![0.0f64; hw];
    let mut mad = vec![vec![0.0; orders.len()]; orders.len()];
    for i in 0..renders.len() {
        for j in i + 1..renders.len() {
            let d = pixel_difference(&renders[i], &renders[j]);
            let m = d.iter().sum::<f64>() / hw as f64;
            mad[i][j] = m;
            mad[j][i] = m;
            for (h, v) in heat.iter_mut().zip(d) {
                *h = (*h).max(v);
            }
        }
    }
    Ok(OrderVariationReport {
        orders: orders.to_vec(),
        mad,
        heat,
        renders,
    })
}

/// Channel-mean absolute difference per pixel.
pub fn pixel_difference(a: &RgbImage, b: &RgbImage) -> Vec<f64> {
    let hw = a.width * a.height;
    (0..hw)
        .map(|p| {
            (0..3)
                .map(|c| (a.planar()[c * hw + p] as f64 - b.planar()[c * hw + p] as f64).abs())
                .sum::<f64>()
                / 3.0
        })
        .collect()
}

/// Self pose transfer scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub overall: f64,
    /// Mean SSIM over skin and hair pixels above the shoulders; `None` without such pixels.
    pub head: Option<f64>,
}

/// Skin or hair pixels above the higher of the two shoulders.
pub fn head_region(sample: &Sample) -> Vec<bool> {
    let k = &sample.keypoints;
    let shoulders = [k.get(joint::R_SHOULDER), k.get(joint::L_SHOULDER)];
    let limit = shoulders
        .iter()
        .filter(|s| s.visible)
        .map(|s| s.y)
        .fold(f32::INFINITY, f32::min);
    let w = sample.seg.width;
    sample
        .seg
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &l)| (l == LABEL_SKIN || l == LABEL_HAIR) && ((i / w) as f32) < limit)
        .collect()
}

/// Transfers `source` to its own pose and compares with the source image.
pub fn identity_diagnostic(source: &Sample, model: &dyn PoseTransfer) -> Result<IdentityReport> {
    let pred = model.transfer(source, &source.keypoints)?;
    let map = ssim_map::<f64>(&pred.image.to_tensor(), &source.image.to_tensor())?;
    let region = head_region(source);
    let picked: Vec<f64> = map
        .data()
        .iter()
        .zip(&region)
        .filter(|(_, &r)| r)
        .map(|(v, _)| *v)
        .collect();
    Ok(IdentityReport {
        overall: map.mean(),
        head: (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64),
    })
}
