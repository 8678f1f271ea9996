//! Loss terms. Each has a graph form used for training and gradient checks, and a tensor
//! form for direct evaluation.

use std::rc::Rc;

use crate::autodiff::{Axis, Graph, Var};
use crate::error::{Error, Result};
use crate::image::NUM_LABELS;
use crate::model::{FeatureExtractor, PatchDiscriminator};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor on the product of squared norms inside the cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// Components of the content loss.
#[derive(Clone, Copy, Debug)]
pub struct ContentVars {
    pub l1: Var,
    pub perceptual: Var,
    pub style: Var,
    pub total: Var,
}

fn same_shape<S: Scalar>(g: &Graph<S>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

fn mean_abs_diff<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Var {
    let d = g.sub(a, b);
    let d = g.abs(d);
    g.mean_all(d)
}

/// Pixel L1 plus feature L1 and Gram L1 summed over every extractor layer.
pub fn content_loss_vars<S: Scalar>(
    g: &mut Graph<S>,
    fx: &FeatureExtractor<S>,
    generated: Var,
    target: Var,
) -> Result<ContentVars> {
    same_shape(g, generated, target, "content_loss")?;
    let l1 = mean_abs_diff(g, generated, target);
    let fa = fx.forward(g, generated);
    let fb = fx.forward(g, target);
    let mut perceptual = None;
    let mut style = None;
    for (&a, &b) in fa.iter().zip(&fb) {
        let p = mean_abs_diff(g, a, b);
        let ga = g.gram(a);
        let gb = g.gram(b);
        let s = mean_abs_diff(g, ga, gb);
        perceptual = Some(match perceptual {
            Some(acc) => g.add(acc, p),
            None => p,
        });
        style = Some(match style {
            Some(acc) => g.add(acc, s),
            None => s,
        });
    }
    let (perceptual, style) = (perceptual.unwrap(), style.unwrap());
    let total = g.add(l1, perceptual);
    let total = g.add(total, style);
    Ok(ContentVars {
        l1,
        perceptual,
        style,
        total,
    })
}

/// Flow losses: correctness `mean(1 - cos(warp(src, flow), tgt))` over cells, regularization
/// `mean(dx^2) + mean(dy^2)` over the flow's forward differences.
#[derive(Clone, Copy, Debug)]
pub struct GeoVars {
    pub correctness: Var,
    pub regularization: Var,
    pub total: Var,
}

/// Per-cell cosine similarity over channels, `N x 1 x H x W`.
pub fn cosine_map<S: Scalar>(g: &mut Graph<S>, a: Var, b: Var) -> Var {
    let ab = g.mul(a, b);
    let dot = g.sum_channels(ab);
    let aa = g.square(a);
    let sa = g.sum_channels(aa);
    let bb = g.square(b);
    let sb = g.sum_channels(bb);
    let prod = g.mul(sa, sb);
    let floor = g.constant(Tensor::full(&[1, 1, 1, 1], S::lit(COSINE_EPS * COSINE_EPS)));
    let prod = g.maximum(prod, floor);
    let norm = g.sqrt(prod);
    g.div(dot, norm)
}

pub fn flow_smoothness<S: Scalar>(g: &mut Graph<S>, flow: Var) -> Var {
    let dx = g.diff(flow, Axis::X);
    let dx = g.square(dx);
    let dx = g.mean_all(dx);
    let dy = g.diff(flow, Axis::Y);
    let dy = g.square(dy);
    let dy = g.mean_all(dy);
    g.add(dx, dy)
}

pub fn geo_loss_vars<S: Scalar>(
    g: &mut Graph<S>,
    flow: Var,
    source_feats: Var,
    target_feats: Var,
) -> Result<GeoVars> {
    same_shape(g, source_feats, target_feats, "geo_loss features")?;
    let fs = g.shape(source_feats).to_vec();
    if fs.len() != 4 || g.shape(flow) != [fs[0], 2, fs[2], fs[3]] {
        return Err(Error::shape(format!(
            "geo_loss: flow {:?} does not match features {fs:?}",
            g.shape(flow)
        )));
    }
    let warped = g.warp(source_feats, flow);
    let cos = cosine_map(g, warped, target_feats);
    let miss = g.one_minus(cos);
    let correctness = g.mean_all(miss);
    let regularization = flow_smoothness(g, flow);
    let total = g.add(correctness, regularization);
    Ok(GeoVars {
        correctness,
        regularization,
        total,
    })
}

/// Least-squares adversarial terms from raw discriminator outputs.
pub fn lsgan_d_loss<S: Scalar>(g: &mut Graph<S>, d_real: Var, d_fake: Var) -> Var {
    let r = g.add_scalar(d_real, -S::one());
    let r = g.square(r);
    let r = g.mean_all(r);
    let f = g.square(d_fake);
    let f = g.mean_all(f);
    let s = g.add(r, f);
    g.scale(s, S::lit(0.5))
}

pub fn lsgan_g_loss<S: Scalar>(g: &mut Graph<S>, d_fake: Var) -> Var {
    let f = g.add_scalar(d_fake, -S::one());
    let f = g.square(f);
    let f = g.mean_all(f);
    g.scale(f, S::lit(0.5))
}

/// Which discriminator, and so which conditioning it expects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscriminatorRole {
    /// Conditioned on target pose heatmaps.
    Pose,
    /// Conditioned on the one-hot target segmentation.
    Seg,
}

/// `(g_loss, d_loss)` of one patch discriminator. `g_loss` only sees the fake branch.
pub fn gan_loss_vars<S: Scalar>(
    g: &mut Graph<S>,
    disc: &PatchDiscriminator<S>,
    real: Var,
    fake: Var,
    cond: Var,
) -> Result<(Var, Var)> {
    same_shape(g, real, fake, "gan_loss")?;
    let cs = g.shape(cond);
    let rs = g.shape(real);
    if cs.len() != 4 || cs[0] != rs[0] || cs[1] != disc.cond_channels() || cs[2..] != rs[2..] {
        return Err(Error::shape(format!(
            "gan_loss: conditioning {cs:?} does not fit image {rs:?} and {} channels",
            disc.cond_channels()
        )));
    }
    let d_real = disc.forward(g, real, cond);
    let d_fake = disc.forward(g, fake, cond);
    let gl = lsgan_g_loss(g, d_fake);
    let dl = lsgan_d_loss(g, d_real, d_fake);
    Ok((gl, dl))
}

/// Checks one logit map per label and one ground-truth label per cell.
fn check_seg_inputs<S: Scalar>(g: &Graph<S>, logits: &[Var], truth: &[usize]) -> Result<()> {
    if logits.len() != NUM_LABELS {
        return Err(Error::validation(
            "predicted_masks",
            format!("expected {NUM_LABELS} masks, got {}", logits.len()),
        ));
    }
    let s = g.shape(logits[0]).to_vec();
    if logits.iter().any(|&l| g.shape(l) != s.as_slice()) || s.len() != 4 || s[1] != 1 {
        return Err(Error::shape(
            "seg_loss: masks must share one N x 1 x H x W shape",
        ));
    }
    if truth.len() != s[0] * s[2] * s[3] {
        return Err(Error::validation(
            "ground_truth",
            format!(
                "expected {} labels, got {}",
                s[0] * s[2] * s[3],
                truth.len()
            ),
        ));
    }
    if let Some(&bad) = truth.iter().find(|&&l| l >= NUM_LABELS) {
        return Err(Error::validation(
            "ground_truth",
            format!("label {bad} outside 0..4"),
        ));
    }
    Ok(())
}

/// Per-cell cross-entropy of the softmax over stacked mask logits against the labels.
pub fn seg_loss_vars<S: Scalar>(
    g: &mut Graph<S>,
    mask_logits: &[Var],
    truth: Rc<Vec<usize>>,
) -> Result<Var> {
    check_seg_inputs(g, mask_logits, &truth)?;
    let stacked = g.concat_channels(mask_logits);
    Ok(g.softmax_xent(stacked, truth))
}

/// Mean over labels of the binary cross-entropy between each mask and its label's region.
pub fn mask_bce_vars<S: Scalar>(
    g: &mut Graph<S>,
    mask_logits: &[Var],
    truth: &[usize],
) -> Result<Var> {
    check_seg_inputs(g, mask_logits, truth)?;
    let shape = g.shape(mask_logits[0]).to_vec();
    let mut acc = None;
    for (l, &logit) in mask_logits.iter().enumerate() {
        let target = Tensor::from_vec(
            &shape,
            truth
                .iter()
                .map(|&t| if t == l { S::one() } else { S::zero() })
                .collect(),
        )?;
        let b = g.bce_logits(logit, target);
        acc = Some(match acc {
            Some(a) => g.add(a, b),
            None => b,
        });
    }
    Ok(g.scale(acc.unwrap(), S::one() / S::from_usize(NUM_LABELS).unwrap()))
}

fn eval_scalar<S: Scalar>(g: &Graph<S>, v: Var) -> S {
    g.value(v).data()[0]
}

pub fn content_loss<S: Scalar>(
    fx: &FeatureExtractor<S>,
    generated: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<S> {
    let mut g = Graph::new();
    let a = g.constant(generated.clone());
    let b = g.constant(target.clone());
    let c = content_loss_vars(&mut g, fx, a, b)?;
    Ok(eval_scalar(&g, c.total))
}

/// Returns `(l1, perceptual, style)`.
pub fn content_loss_parts<S: Scalar>(
    fx: &FeatureExtractor<S>,
    generated: &Tensor<S>,
    target: &Tensor<S>,
) -> Result<(S, S, S)> {
    let mut g = Graph::new();
    let a = g.constant(generated.clone());
    let b = g.constant(target.clone());
    let c = content_loss_vars(&mut g, fx, a, b)?;
    Ok((
        eval_scalar(&g, c.l1),
        eval_scalar(&g, c.perceptual),
        eval_scalar(&g, c.style),
    ))
}

/// Returns `(correctness, regularization, total)`.
pub fn geo_loss<S: Scalar>(
    flow: &Tensor<S>,
    source_feats: &Tensor<S>,
    target_feats: &Tensor<S>,
) -> Result<(S, S, S)> {
    let mut g = Graph::new();
    let f = g.constant(flow.clone());
    let a = g.constant(source_feats.clone());
    let b = g.constant(target_feats.clone());
    let v = geo_loss_vars(&mut g, f, a, b)?;
    Ok((
        eval_scalar(&g, v.correctness),
        eval_scalar(&g, v.regularization),
        eval_scalar(&g, v.total),
    ))
}

pub fn gan_loss<S: Scalar>(
    disc: &PatchDiscriminator<S>,
    real: &Tensor<S>,
    fake: &Tensor<S>,
    conditioning: &Tensor<S>,
) -> Result<(S, S)> {
    let mut g = Graph::new();
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let c = g.constant(conditioning.clone());
    let (gl, dl) = gan_loss_vars(&mut g, disc, r, f, c)?;
    Ok((eval_scalar(&g, gl), eval_scalar(&g, dl)))
}

/// `(g_loss, d_loss)` of the least-squares objective on given discriminator outputs.
pub fn lsgan_from_outputs<S: Scalar>(d_real: &Tensor<S>, d_fake: &Tensor<S>) -> (S, S) {
    let mut g = Graph::new();
    let r = g.constant(d_real.clone());
    let f = g.constant(d_fake.clone());
    let gl = lsgan_g_loss(&mut g, f);
    let dl = lsgan_d_loss(&mut g, r, f);
    (eval_scalar(&g, gl), eval_scalar(&g, dl))
}

/// Tensor form of [`seg_loss_vars`]; `predicted` holds per-label mask logits.
pub fn seg_loss<S: Scalar>(predicted: &[Tensor<S>], truth: &[usize]) -> Result<S> {
    let mut g = Graph::new();
    let vars: Vec<Var> = predicted.iter().map(|t| g.constant(t.clone())).collect();
    if vars.is_empty() {
        return Err(Error::validation("predicted_masks", "no masks given"));
    }
    let v = seg_loss_vars(&mut g, &vars, Rc::new(truth.to_vec()))?;
    Ok(eval_scalar(&g, v))
}
