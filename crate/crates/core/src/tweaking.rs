//! Post-transfer garment edits on encoded garment features: limb-corridor mask edits,
//! recoloring through the texture encoder, and learned latent directions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Pattern, Sample};
use crate::encoders::GRID;
use crate::error::{Error, Result};
use crate::image::{joint, Keypoints, IMAGE_SIZE, LABEL_BOTTOM, LABEL_TOP};
use crate::model::{GarmentFeature, Model, PersonInput, PersonRepresentation};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Half-width of a limb corridor, in grid cells.
pub const CORRIDOR_RADIUS: f64 = 1.5;
/// Latent step per unit magnitude.
pub const LATENT_STEP: f64 = 3.0;
/// Width scale per unit magnitude: `1 + WIDTH_GAIN * magnitude`.
pub const WIDTH_GAIN: f64 = 0.5;
/// L2 penalty of the attribute classifier.
pub const L2_PENALTY: f64 = 1e-3;
pub const HOLDOUT_FRACTION: f64 = 0.2;
pub const MIN_PER_CLASS: usize = 20;
const MASK_ON: f64 = 0.5;
const CELL: f64 = (IMAGE_SIZE / GRID) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TweakKind {
    SleeveLength,
    LegLength,
    Width,
    Recolor,
    Latent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TweakPayload {
    /// Target color for `recolor`, channels in `[0, 1]`.
    Color { rgb: [f64; 3] },
    /// Name of a fitted direction for `latent`.
    Direction { id: String },
}

/// One garment edit. `magnitude` lies in `[-1, 1]`; zero is always the identity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tweak {
    pub kind: TweakKind,
    pub magnitude: f64,
    /// Index into the person's garment list.
    pub target_garment: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<TweakPayload>,
}

impl Tweak {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude.is_finite() && (-1.0..=1.0).contains(&self.magnitude)) {
            return Err(Error::validation(
                "magnitude",
                format!("must lie in [-1, 1], got {}", self.magnitude),
            ));
        }
        match (self.kind, &self.payload) {
            (TweakKind::Recolor, Some(TweakPayload::Color { rgb })) => {
                if rgb
                    .iter()
                    .any(|c| !(c.is_finite() && (0.0..=1.0).contains(c)))
                {
                    return Err(Error::validation(
                        "payload",
                        "color channels must lie in [0, 1]",
                    ));
                }
            }
            (TweakKind::Recolor, _) => {
                return Err(Error::validation(
                    "payload",
                    "recolor needs a color payload",
                ));
            }
            (TweakKind::Latent, Some(TweakPayload::Direction { .. })) => {}
            (TweakKind::Latent, _) => {
                return Err(Error::validation(
                    "payload",
                    "latent needs a direction payload",
                ));
            }
            (_, None) => {}
            (_, Some(_)) => {
                return Err(Error::validation(
                    "payload",
                    "geometric tweaks take no payload",
                ));
            }
        }
        Ok(())
    }
}

/// Garment attributes available as free labels on the toy data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    LongSleeves,
    LongLegs,
    StripedTop,
    WideTop,
    DarkTop,
}

impl Attribute {
    pub const ALL: [Attribute; 5] = [
        Attribute::LongSleeves,
        Attribute::LongLegs,
        Attribute::StripedTop,
        Attribute::WideTop,
        Attribute::DarkTop,
    ];

    /// Segmentation label of the garment the attribute describes.
    pub fn garment_label(self) -> u8 {
        match self {
            Attribute::LongLegs => LABEL_BOTTOM,
            _ => LABEL_TOP,
        }
    }

    /// Ground-truth label of a rendered sample.
    pub fn label(self, sample: &Sample) -> bool {
        let s = &sample.attrs;
        match self {
            Attribute::LongSleeves => s.top.sleeve_or_leg_length > 0.5,
            Attribute::LongLegs => s.bottom.sleeve_or_leg_length > 0.5,
            Attribute::StripedTop => s.top.pattern == Pattern::Stripes,
            Attribute::WideTop => s.top.width > 0.5,
            Attribute::DarkTop => s.top.base_color.iter().sum::<f64>() / 3.0 < 0.5,
        }
    }
}

impl std::str::FromStr for Attribute {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
            Error::validation(
                "attribute",
                format!("unknown attribute {s:?}; expected long_sleeves, long_legs, striped_top, wide_top or dark_top"),
            )
        })
    }
}

/// Unit-norm linear boundary in pooled latent space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDirection {
    pub attribute: Attribute,
    pub direction: Vec<f64>,
    pub fit_accuracy: f64,
    pub train_count: usize,
    /// Norm of the fitted weight vector; `score = scale * direction . z + bias`.
    pub scale: f64,
    pub bias: f64,
}

impl AttributeDirection {
    /// Classifier logit of a pooled latent.
    pub fn score(&self, latent: &[f64]) -> f64 {
        self.scale * dot(&self.direction, latent) + self.bias
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("direction serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: AttributeDirection = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("attribute direction: {e}")))?;
        let norm = dot(&d.direction, &d.direction).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Format(format!("direction norm {norm} is not 1")));
        }
        Ok(d)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_feature<S: Scalar>(g: &GarmentFeature<S>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = g.texture.dims4();
    if n != 1 || g.shape_mask.shape() != [1, 1, h, w] {
        return Err(Error::shape(format!(
            "garment feature: texture {:?} with mask {:?}",
            g.texture.shape(),
            g.shape_mask.shape()
        )));
    }
    Ok((c, h, w))
}

fn mask_at<S: Scalar>(g: &GarmentFeature<S>, y: usize, x: usize) -> f64 {
    g.shape_mask.at4(0, 0, y, x).as_f64()
}

/// Grid-space position of a keypoint (cell `j` spans `[j, j + 1)`).
fn grid_point(k: &Keypoints, j: usize) -> (f64, f64) {
    let p = k.get(j);
    (p.x as f64 / CELL, p.y as f64 / CELL)
}

fn require_visible(k: &Keypoints, joints: &[usize]) -> Result<()> {
    let missing: Vec<&str> = joints
        .iter()
        .filter(|&&j| !k.get(j).visible)
        .map(|&j| joint::NAMES[j])
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Tweak(format!(
            "required keypoints not visible: {}",
            missing.join(", ")
        )))
    }
}

/// Distance from `p` to a polyline and the arclength of the closest point.
fn project(p: (f64, f64), line: &[(f64, f64)]) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let mut start = 0.0;
    for seg in line.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let s = if len2 > 0.0 {
            (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = (a.0 + s * dx, a.1 + s * dy);
        let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
        if d < best.0 {
            best = (d, start + s * len2.sqrt());
        }
        start += len2.sqrt();
    }
    best
}

fn polyline_length(line: &[(f64, f64)]) -> f64 {
    line.windows(2)
        .map(|s| ((s[1].0 - s[0].0).powi(2) + (s[1].1 - s[0].1).powi(2)).sqrt())
        .sum()
}

/// Whether `p` lies inside the convex polygon `poly` (either winding).
fn inside_polygon(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    let mut sign = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

/// Cells this close to a limb line belong to the limb even over the torso; covers every
/// cell the line passes through.
pub const LIMB_CORE: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Distance from `p` to the torso polygon, zero inside it.
fn torso_distance(p: (f64, f64), torso: &[(f64, f64)]) -> f64 {
    if inside_polygon(p, torso) {
        return 0.0;
    }
    let mut ring = torso.to_vec();
    ring.push(torso[0]);
    project(p, &ring).0
}

const TORSO: [usize; 4] = [
    joint::R_SHOULDER,
    joint::L_SHOULDER,
    joint::L_HIP,
    joint::R_HIP,
];

/// Torso quadrilateral (shoulders and hips) in grid coordinates.
pub fn torso_polygon(keypoints: &Keypoints) -> Result<Vec<(f64, f64)>> {
    require_visible(keypoints, &TORSO)?;
    Ok(TORSO.iter().map(|&j| grid_point(keypoints, j)).collect())
}

/// Cells within [`CORRIDOR_RADIUS`] of a limb polyline that are closer to the limb than to
/// the torso, plus the limb's own cells, with their arclength parameter.
pub fn limb_corridor(line: &[(f64, f64)], torso: &[(f64, f64)]) -> Vec<((usize, usize), f64)> {
    let mut out = Vec::new();
    for y in 0..GRID {
        for x in 0..GRID {
            let centre = (x as f64 + 0.5, y as f64 + 0.5);
            let (d, t) = project(centre, line);
            if d <= LIMB_CORE || (d <= CORRIDOR_RADIUS && d < torso_distance(centre, torso)) {
                out.push(((y, x), t));
            }
        }
    }
    out
}

/// Limb polylines (proximal, middle, distal joint) a length tweak acts on.
pub fn limb_chains(kind: TweakKind) -> Result<[[usize; 3]; 2]> {
    match kind {
        TweakKind::SleeveLength => Ok([
            [joint::R_SHOULDER, joint::R_ELBOW, joint::R_WRIST],
            [joint::L_SHOULDER, joint::L_ELBOW, joint::L_WRIST],
        ]),
        TweakKind::LegLength => Ok([
            [joint::R_HIP, joint::R_KNEE, joint::R_ANKLE],
            [joint::L_HIP, joint::L_KNEE, joint::L_ANKLE],
        ]),
        other => Err(Error::validation(
            "kind",
            format!("{other:?} is not a limb tweak"),
        )),
    }
}

/// Covered cells (mask above one half) of the unedited feature.
fn covered_cells<S: Scalar>(g: &GarmentFeature<S>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..GRID {
        for x in 0..GRID {
            if mask_at(g, y, x) > MASK_ON {
                out.push((y, x));
            }
        }
    }
    out
}

/// Copies texture and mask into `cell` from the nearest covered cell of `source`.
fn fill_from_nearest<S: Scalar>(
    out: &mut GarmentFeature<S>,
    source: &GarmentFeature<S>,
    covered: &[(usize, usize)],
    cell: (usize, usize),
) {
    let Some(&(sy, sx)) = covered.iter().min_by_key(|&&(y, x)| {
        let dy = y as i64 - cell.0 as i64;
        let dx = x as i64 - cell.1 as i64;
        (dy * dy + dx * dx, y, x)
    }) else {
        out.shape_mask.set4(0, 0, cell.0, cell.1, S::one());
        return;
    };
    let c = out.texture.dims4().1;
    for ch in 0..c {
        out.texture
            .set4(0, ch, cell.0, cell.1, source.texture.at4(0, ch, sy, sx));
    }
    out.shape_mask
        .set4(0, 0, cell.0, cell.1, source.shape_mask.at4(0, 0, sy, sx));
}

fn tweak_length<S: Scalar>(
    garment: &GarmentFeature<S>,
    keypoints: &Keypoints,
    kind: TweakKind,
    magnitude: f64,
) -> Result<GarmentFeature<S>> {
    let chains = limb_chains(kind)?;
    let mut needed = chains.concat();
    needed.extend_from_slice(&TORSO);
    needed.sort_unstable();
    needed.dedup();
    require_visible(keypoints, &needed)?;
    let torso = torso_polygon(keypoints)?;
    let covered = covered_cells(garment);
    let mut out = garment.clone();
    for chain in chains {
        let line: Vec<(f64, f64)> = chain.iter().map(|&j| grid_point(keypoints, j)).collect();
        let length = polyline_length(&line);
        let corridor = limb_corridor(&line, &torso);
        let reach = corridor
            .iter()
            .filter(|((y, x), _)| mask_at(garment, *y, *x) > MASK_ON)
            .map(|(_, t)| *t)
            .fold(0.0, f64::max);
        let target = if magnitude > 0.0 {
            reach + magnitude * (length - reach)
        } else {
            reach * (1.0 + magnitude)
        };
        for &((y, x), t) in &corridor {
            let on = mask_at(garment, y, x) > MASK_ON;
            if magnitude > 0.0 && t > 0.0 && t <= target && !on {
                fill_from_nearest(&mut out, garment, &covered, (y, x));
            } else if magnitude < 0.0 && t > target {
                out.shape_mask.set4(0, 0, y, x, S::zero());
            }
        }
    }
    Ok(out)
}

/// Rows a width tweak edits, and the body centre line, for a garment label.
pub fn width_band(
    keypoints: &Keypoints,
    label: u8,
) -> Result<(std::ops::RangeInclusive<usize>, f64)> {
    let shoulders = [joint::R_SHOULDER, joint::L_SHOULDER];
    let hips = [joint::R_HIP, joint::L_HIP];
    let knees = [joint::R_KNEE, joint::L_KNEE];
    let (top, bottom): (&[usize], &[usize]) = match label {
        LABEL_TOP => (&shoulders, &hips),
        LABEL_BOTTOM => (&hips, &knees),
        _ => (&shoulders, &knees),
    };
    let mut needed = vec![
        joint::R_SHOULDER,
        joint::L_SHOULDER,
        joint::R_HIP,
        joint::L_HIP,
    ];
    needed.extend_from_slice(bottom);
    needed.dedup();
    require_visible(keypoints, &needed)?;
    let row = |j: usize| (grid_point(keypoints, j).1.floor().max(0.0) as usize).min(GRID - 1);
    let lo = top.iter().map(|&j| row(j)).min().expect("two joints");
    let hi = bottom.iter().map(|&j| row(j)).max().expect("two joints");
    let centre = [
        joint::R_SHOULDER,
        joint::L_SHOULDER,
        joint::R_HIP,
        joint::L_HIP,
    ]
    .iter()
    .map(|&j| grid_point(keypoints, j).0)
    .sum::<f64>()
        / 4.0;
    Ok((lo.min(hi)..=hi.max(lo), centre))
}

fn tweak_width<S: Scalar>(
    garment: &GarmentFeature<S>,
    keypoints: &Keypoints,
    magnitude: f64,
) -> Result<GarmentFeature<S>> {
    let (rows, centre) = width_band(keypoints, garment.source_label)?;
    let scale = 1.0 + WIDTH_GAIN * magnitude;
    let covered = covered_cells(garment);
    let mut out = garment.clone();
    for y in rows {
        let on = |x: usize| mask_at(garment, y, x) > MASK_ON;
        // The covered run closest to the centre line.
        let Some(seed) = (0..GRID).filter(|&x| on(x)).min_by(|&a, &b| {
            let da = (a as f64 + 0.5 - centre).abs();
            let db = (b as f64 + 0.5 - centre).abs();
            da.total_cmp(&db).then(a.cmp(&b))
        }) else {
            continue;
        };
        let mut a = seed;
        while a > 0 && on(a - 1) {
            a -= 1;
        }
        let mut b = seed;
        while b + 1 < GRID && on(b + 1) {
            b += 1;
        }
        let (left, right) = (
            scale * (a as f64 - centre),
            scale * (b as f64 + 1.0 - centre),
        );
        for x in 0..GRID {
            let off = x as f64 + 0.5 - centre;
            let inside = off >= left && off <= right;
            let in_run = (a..=b).contains(&x);
            if inside && !on(x) {
                fill_from_nearest(&mut out, garment, &covered, (y, x));
            } else if !inside && in_run {
                out.shape_mask.set4(0, 0, y, x, S::zero());
            }
        }
    }
    Ok(out)
}

/// Geometric mask edit along a limb corridor (lengths) or the torso band (width).
/// Cells outside the corridor are never touched.
pub fn tweak_shape_mask<S: Scalar>(
    garment: &GarmentFeature<S>,
    keypoints: &Keypoints,
    kind: TweakKind,
    magnitude: f64,
) -> Result<GarmentFeature<S>> {
    let (_, h, w) = check_feature(garment)?;
    if (h, w) != (GRID, GRID) {
        return Err(Error::shape(format!(
            "shape tweaks need a {GRID}x{GRID} grid, got {h}x{w}"
        )));
    }
    if !(magnitude.is_finite() && (-1.0..=1.0).contains(&magnitude)) {
        return Err(Error::validation(
            "magnitude",
            format!("must lie in [-1, 1], got {magnitude}"),
        ));
    }
    if magnitude == 0.0 {
        return Ok(garment.clone());
    }
    match kind {
        TweakKind::SleeveLength | TweakKind::LegLength => {
            tweak_length(garment, keypoints, kind, magnitude)
        }
        TweakKind::Width => tweak_width(garment, keypoints, magnitude),
        other => Err(Error::validation(
            "kind",
            format!("{other:?} is not a shape tweak"),
        )),
    }
}

/// Texture encoding of a flat `color` patch (no warp).
pub fn flat_color_texture<S: Scalar>(model: &Model<S>, color: [f64; 3]) -> Result<Tensor<S>> {
    let hw = IMAGE_SIZE * IMAGE_SIZE;
    let patch = Tensor::from_fn(&[1, 3, IMAGE_SIZE, IMAGE_SIZE], |i| S::lit(color[i / hw]));
    model.encode_texture(&patch)
}

/// Blends texture toward the flat-color encoding inside the mask; `strength` in `[0, 1]`.
pub fn recolor_texture<S: Scalar>(
    model: &Model<S>,
    garment: &GarmentFeature<S>,
    color: [f64; 3],
    strength: f64,
) -> Result<GarmentFeature<S>> {
    let (c, h, w) = check_feature(garment)?;
    if !(strength.is_finite() && (0.0..=1.0).contains(&strength)) {
        return Err(Error::validation(
            "strength",
            format!("must lie in [0, 1], got {strength}"),
        ));
    }
    if strength == 0.0 {
        return Ok(garment.clone());
    }
    let flat = flat_color_texture(model, color)?;
    if flat.shape() != garment.texture.shape() {
        return Err(Error::shape(format!(
            "color encoding {:?} vs garment texture {:?}",
            flat.shape(),
            garment.texture.shape()
        )));
    }
    let s = S::lit(strength);
    let keep = S::one() - s;
    let mut out = garment.clone();
    for y in 0..h {
        for x in 0..w {
            if mask_at(garment, y, x) > MASK_ON {
                for ch in 0..c {
                    let v = if strength == 1.0 {
                        flat.at4(0, ch, y, x)
                    } else {
                        keep * garment.texture.at4(0, ch, y, x) + s * flat.at4(0, ch, y, x)
                    };
                    out.texture.set4(0, ch, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

/// Mean texture over cells with mask above one half; the mask-weighted mean when no cell
/// qualifies, and zeros for an empty mask.
pub fn pooled_latent<S: Scalar>(garment: &GarmentFeature<S>) -> Result<Vec<f64>> {
    let (c, h, w) = check_feature(garment)?;
    let mut acc = vec![0.0; c];
    let mut count = 0.0;
    for y in 0..h {
        for x in 0..w {
            if mask_at(garment, y, x) > MASK_ON {
                count += 1.0;
                for (ch, a) in acc.iter_mut().enumerate() {
                    *a += garment.texture.at4(0, ch, y, x).as_f64();
                }
            }
        }
    }
    if count == 0.0 {
        for y in 0..h {
            for x in 0..w {
                let m = mask_at(garment, y, x);
                count += m;
                for (ch, a) in acc.iter_mut().enumerate() {
                    *a += m * garment.texture.at4(0, ch, y, x).as_f64();
                }
            }
        }
    }
    if count > 0.0 {
        for a in &mut acc {
            *a /= count;
        }
    }
    Ok(acc)
}

/// Shifts texture along `direction` by `magnitude * step` on cells with mask above one half.
pub fn tweak_latent_with_step<S: Scalar>(
    garment: &GarmentFeature<S>,
    direction: &AttributeDirection,
    magnitude: f64,
    step: f64,
) -> Result<GarmentFeature<S>> {
    let (c, h, w) = check_feature(garment)?;
    if direction.direction.len() != c {
        return Err(Error::shape(format!(
            "direction has {} components, texture has {c} channels",
            direction.direction.len()
        )));
    }
    if magnitude == 0.0 {
        return Ok(garment.clone());
    }
    let mut out = garment.clone();
    for y in 0..h {
        for x in 0..w {
            if mask_at(garment, y, x) > MASK_ON {
                for (ch, d) in direction.direction.iter().enumerate() {
                    let v = garment.texture.at4(0, ch, y, x) + S::lit(magnitude * step * d);
                    out.texture.set4(0, ch, y, x, v);
                }
            }
        }
    }
    Ok(out)
}

pub fn tweak_latent<S: Scalar>(
    garment: &GarmentFeature<S>,
    direction: &AttributeDirection,
    magnitude: f64,
) -> Result<GarmentFeature<S>> {
    tweak_latent_with_step(garment, direction, magnitude, LATENT_STEP)
}

/// Order-independent holdout assignment: a seeded hash of the example's bytes.
fn holdout_key(seed: u64, latent: &[f64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for v in latent {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss plus `L2_PENALTY / 2 * |w|^2`; `theta` is `[w.., b]`.
fn objective(x: &[&[f64]], y: &[f64], theta: &[f64]) -> f64 {
    let d = theta.len() - 1;
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z = dot(&theta[..d], xi) + theta[d];
        // log(1 + e^z) - y z, computed stably.
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - yi * z;
    }
    loss / x.len() as f64 + 0.5 * L2_PENALTY * dot(&theta[..d], &theta[..d])
}

/// Solves `a x = b` for symmetric positive definite `a` (row-major `n x n`).
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s = a[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i * n + k] * z[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    Some(x)
}

/// Damped Newton iterations on the regularized logistic objective.
fn fit_logistic(x: &[&[f64]], y: &[f64]) -> Vec<f64> {
    let d = x[0].len();
    let n = d + 1;
    let m = x.len() as f64;
    let mut theta = vec![0.0; n];
    for _ in 0..100 {
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        for (xi, &yi) in x.iter().zip(y) {
            let p = sigmoid(dot(&theta[..d], xi) + theta[d]);
            let r = (p - yi) / m;
            let wgt = p * (1.0 - p) / m;
            for a in 0..n {
                let xa = if a < d { xi[a] } else { 1.0 };
                grad[a] += r * xa;
                for b in 0..=a {
                    let xb = if b < d { xi[b] } else { 1.0 };
                    hess[a * n + b] += wgt * xa * xb;
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                hess[b * n + a] = hess[a * n + b];
            }
        }
        for a in 0..d {
            grad[a] += L2_PENALTY * theta[a];
            hess[a * n + a] += L2_PENALTY;
        }
        hess[d * n + d] += 1e-9;
        let Some(step) = cholesky_solve(&hess, &grad, n) else {
            break;
        };
        let base = objective(x, y, &theta);
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-8 {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            if objective(x, y, &cand) <= base {
                theta = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        let size = t * dot(&step, &step).sqrt();
        if !moved || size < 1e-10 {
            break;
        }
    }
    theta
}

/// Fits a linear boundary between the two label classes and returns its unit normal.
/// 20% of each class (chosen by a seeded hash of the latent, so independent of input
/// order) is held out to measure `fit_accuracy`.
pub fn fit_attribute_direction(
    latents: &[Vec<f64>],
    labels: &[bool],
    attribute: Attribute,
    seed: u64,
) -> Result<AttributeDirection> {
    if latents.len() != labels.len() {
        return Err(Error::validation(
            "labels",
            format!("{} labels for {} latents", labels.len(), latents.len()),
        ));
    }
    let dim = latents.first().map_or(0, Vec::len);
    if dim == 0
        || latents
            .iter()
            .any(|l| l.len() != dim || l.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::validation(
            "latents",
            "need finite vectors of one non-zero length",
        ));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::validation("labels", "both classes are required"));
    }
    if pos.min(neg) < MIN_PER_CLASS {
        return Err(Error::validation(
            "labels",
            format!("need at least {MIN_PER_CLASS} examples per class, got {pos} positive and {neg} negative"),
        ));
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.sort_by_key(|&i| (holdout_key(seed, &latents[i]), i));
        let k = (idx.len() as f64 * HOLDOUT_FRACTION).round() as usize;
        held.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    // Canonical order so the fit does not depend on input order either.
    train.sort_by_key(|&i| (holdout_key(seed, &latents[i]), i));
    let x: Vec<&[f64]> = train.iter().map(|&i| latents[i].as_slice()).collect();
    let y: Vec<f64> = train
        .iter()
        .map(|&i| if labels[i] { 1.0 } else { 0.0 })
        .collect();
    let theta = fit_logistic(&x, &y);
    let norm = dot(&theta[..dim], &theta[..dim]).sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::validation("latents", "classifier weights vanished"));
    }
    let direction: Vec<f64> = theta[..dim].iter().map(|w| w / norm).collect();
    let mut fitted = AttributeDirection {
        attribute,
        direction,
        fit_accuracy: 0.0,
        train_count: train.len(),
        scale: norm,
        bias: theta[dim],
    };
    let correct = held
        .iter()
        .filter(|&&i| (fitted.score(&latents[i]) > 0.0) == labels[i])
        .count();
    fitted.fit_accuracy = if held.is_empty() {
        1.0
    } else {
        correct as f64 / held.len() as f64
    };
    Ok(fitted)
}

/// Pooled garment latents of `samples` (each encoded in its own pose) with their labels.
pub fn attribute_examples<S: Scalar>(
    model: &Model<S>,
    samples: &[Sample],
    attribute: Attribute,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    let mut latents = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        let input = PersonInput {
            image: &s.image,
            seg: &s.seg,
            keypoints: &s.keypoints,
        };
        let g = model.encode_garment(input, attribute.garment_label(), &s.keypoints)?;
        latents.push(pooled_latent(&g)?);
        labels.push(attribute.label(s));
    }
    Ok((latents, labels))
}

/// Applies one tweak to one garment feature.
pub fn apply_tweak<S: Scalar>(
    model: &Model<S>,
    garment: &GarmentFeature<S>,
    keypoints: &Keypoints,
    tweak: &Tweak,
    directions: &BTreeMap<String, AttributeDirection>,
) -> Result<GarmentFeature<S>> {
    tweak.validate()?;
    match (tweak.kind, &tweak.payload) {
        (TweakKind::SleeveLength | TweakKind::LegLength | TweakKind::Width, _) => {
            tweak_shape_mask(garment, keypoints, tweak.kind, tweak.magnitude)
        }
        (TweakKind::Recolor, Some(TweakPayload::Color { rgb })) => {
            recolor_texture(model, garment, *rgb, tweak.magnitude.abs())
        }
        (TweakKind::Latent, Some(TweakPayload::Direction { id })) => {
            let d = directions
                .get(id)
                .ok_or_else(|| Error::validation("payload", format!("unknown direction {id:?}")))?;
            tweak_latent(garment, d, tweak.magnitude)
        }
        _ => unreachable!("validated above"),
    }
}

/// Folds `tweaks` over the person's garment features in order.
pub fn tweak_person<S: Scalar>(
    model: &Model<S>,
    person: &PersonRepresentation<S>,
    keypoints: &Keypoints,
    tweaks: &[Tweak],
    directions: &BTreeMap<String, AttributeDirection>,
) -> Result<PersonRepresentation<S>> {
    let mut out = person.clone();
    for t in tweaks {
        if t.target_garment >= out.garments.len() {
            return Err(Error::validation(
                "target_garment",
                format!(
                    "index {} but the person wears {} garments",
                    t.target_garment,
                    out.garments.len()
                ),
            ));
        }
        let edited = apply_tweak(
            model,
            &out.garments[t.target_garment],
            keypoints,
            t,
            directions,
        )?;
        out.garments[t.target_garment] = edited;
    }
    Ok(out)
}

/// Applies `tweaks` in order and re-renders with `try_on`.
pub fn apply_tweaks<S: Scalar>(
    model: &Model<S>,
    person: &PersonRepresentation<S>,
    keypoints: &Keypoints,
    tweaks: &[Tweak],
    directions: &BTreeMap<String, AttributeDirection>,
) -> Result<Tensor<S>> {
    model.try_on(&tweak_person(model, person, keypoints, tweaks, directions)?)
}
