//! Direct, loop-based reference formulas. Deliberately naive and independent of the fast
//! paths; inputs are limited to small grids.

use crate::error::{Error, Result};

pub const MAX_SIDE: usize = 8;
pub const MAX_CHANNELS: usize = 4;

/// One `C x H x W` grid in 64-bit, row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(format!(
                "grid {c}x{h}x{w} needs {} values, got {}",
                c * h * w,
                data.len()
            )));
        }
        Ok(Grid { c, h, w, data })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Grid {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }
}

fn small(g: &Grid, what: &str) -> Result<()> {
    if g.h > MAX_SIDE || g.w > MAX_SIDE || g.c > MAX_CHANNELS {
        return Err(Error::validation(
            what,
            format!(
                "oracle inputs are limited to {MAX_CHANNELS} channels of {MAX_SIDE}x{MAX_SIDE}, got {}x{}x{}",
                g.c, g.h, g.w
            ),
        ));
    }
    Ok(())
}

fn same_plane(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(Error::shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.h, a.w, b.h, b.w
        )));
    }
    Ok(())
}

/// Body texture with an identity texture mapper:
/// `fg * b + (1 - fg) * bg`, where `fg` is the pointwise max of the foreground masks and `b`
/// the mean skin feature over cells whose skin mask exceeds 0.5 (all cells if none do).
pub fn eq1(
    skin_texture: &Grid,
    skin_mask: &Grid,
    background: &Grid,
    fg_masks: &[Grid],
) -> Result<Grid> {
    small(skin_texture, "skin_texture")?;
    small(background, "background")?;
    same_plane(skin_texture, skin_mask, "eq1 skin mask")?;
    same_plane(skin_texture, background, "eq1 background")?;
    if fg_masks.is_empty() {
        return Err(Error::validation(
            "fg_masks",
            "at least one foreground mask",
        ));
    }
    let (c, h, w) = (skin_texture.c, skin_texture.h, skin_texture.w);
    let mut b = vec![0.0; c];
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            if skin_mask.at(0, y, x) > 0.5 {
                count += 1;
                for (ch, bv) in b.iter_mut().enumerate() {
                    *bv += skin_texture.at(ch, y, x);
                }
            }
        }
    }
    if count == 0 {
        for y in 0..h {
            for x in 0..w {
                for (ch, bv) in b.iter_mut().enumerate() {
                    *bv += skin_texture.at(ch, y, x);
                }
            }
        }
        count = h * w;
    }
    for bv in &mut b {
        *bv /= count as f64;
    }
    let mut out = Grid::zeros(c, h, w);
    for y in 0..h {
        for x in 0..w {
            let mut fg: f64 = fg_masks[0].at(0, y, x);
            for m in &fg_masks[1..] {
                same_plane(skin_texture, m, "eq1 foreground mask")?;
                fg = fg.max(m.at(0, y, x));
            }
            for (ch, &bv) in b.iter().enumerate() {
                out.set(
                    ch,
                    y,
                    x,
                    fg * (fg * bv) + (1.0 - fg) * background.at(ch, y, x),
                );
            }
        }
    }
    Ok(out)
}

/// Recurrent garment step with the generator replaced by its output `phi`:
/// `phi * m + z * (1 - m)`.
pub fn eq2(z: &Grid, phi: &Grid, m: &Grid) -> Result<Grid> {
    small(z, "z")?;
    same_plane(z, phi, "eq2 phi")?;
    same_plane(z, m, "eq2 mask")?;
    let mut out = Grid::zeros(z.c, z.h, z.w);
    for ch in 0..z.c {
        for y in 0..z.h {
            for x in 0..z.w {
                let mv = m.at(0, y, x);
                out.set(
                    ch,
                    y,
                    x,
                    phi.at(ch, y, x) * mv + z.at(ch, y, x) * (1.0 - mv),
                );
            }
        }
    }
    Ok(out)
}

/// Bilinear backward warp with clamp-to-edge sampling; `flow` channel 0 is x, 1 is y.
pub fn warp(feature: &Grid, flow: &Grid) -> Result<Grid> {
    small(feature, "feature")?;
    same_plane(feature, flow, "warp flow")?;
    let (h, w) = (feature.h, feature.w);
    let clampi = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;
    let mut out = Grid::zeros(feature.c, h, w);
    for y in 0..h {
        for x in 0..w {
            let sx = (x as f64 + flow.at(0, y, x)).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 + flow.at(1, y, x)).clamp(0.0, (h - 1) as f64);
            let x0 = sx.floor();
            let y0 = sy.floor();
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for ch in 0..feature.c {
                let p = |yy: i64, xx: i64| feature.at(ch, clampi(yy, h), clampi(xx, w));
                let v = p(y0, x0) * (1.0 - fx) * (1.0 - fy)
                    + p(y0, x0 + 1) * fx * (1.0 - fy)
                    + p(y0 + 1, x0) * (1.0 - fx) * fy
                    + p(y0 + 1, x0 + 1) * fx * fy;
                out.set(ch, y, x, v);
            }
        }
    }
    Ok(out)
}

/// Mean SSIM over all pixels and channels with an 11x11 Gaussian window (sigma 1.5)
/// truncated to the image and renormalized.
pub fn ssim(a: &Grid, b: &Grid) -> Result<f64> {
    small(a, "a")?;
    same_plane(a, b, "ssim")?;
    if a.c != b.c {
        return Err(Error::shape("ssim channel counts differ"));
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..a.c {
        for y in 0..a.h {
            for x in 0..a.w {
                let (mut wsum, mut ma, mut mb, mut aa, mut bb, mut ab) =
                    (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                        if yy < 0 || xx < 0 || yy >= a.h as i64 || xx >= a.w as i64 {
                            continue;
                        }
                        let wt = (-((dx * dx + dy * dy) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        let (va, vb) = (
                            a.at(ch, yy as usize, xx as usize),
                            b.at(ch, yy as usize, xx as usize),
                        );
                        wsum += wt;
                        ma += wt * va;
                        mb += wt * vb;
                        aa += wt * va * va;
                        bb += wt * vb * vb;
                        ab += wt * va * vb;
                    }
                }
                let (ma, mb) = (ma / wsum, mb / wsum);
                let va = aa / wsum - ma * ma;
                let vb = bb / wsum - mb * mb;
                let cov = ab / wsum - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
    }
    Ok(total / (a.c * a.h * a.w) as f64)
}

/// Per-label IoU by pixel counting; labels absent from both maps score 1.0.
pub fn siou(pred: &[u8], truth: &[u8], labels: &[u8]) -> Result<Vec<f64>> {
    if pred.len() != truth.len() {
        return Err(Error::shape("siou maps differ in size"));
    }
    if pred.len() > MAX_SIDE * MAX_SIDE {
        return Err(Error::validation(
            "pred",
            "oracle maps are limited to 64 pixels",
        ));
    }
    Ok(labels
        .iter()
        .map(|&l| {
            let mut inter = 0;
            let mut union = 0;
            for i in 0..pred.len() {
                let (p, t) = (pred[i] == l, truth[i] == l);
                if p && t {
                    inter += 1;
                }
                if p || t {
                    union += 1;
                }
            }
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .collect())
}

/// Mean softmax cross-entropy; `logits[k][cell]` against `labels[cell]`.
pub fn xent(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.is_empty() || logits.len() > 8 || labels.len() > MAX_SIDE * MAX_SIDE {
        return Err(Error::validation(
            "logits",
            "oracle limited to 8 classes over 64 cells",
        ));
    }
    let mut total = 0.0;
    for (cell, &lab) in labels.iter().enumerate() {
        let z: f64 = logits.iter().map(|row| row[cell].exp()).sum();
        total += z.ln() - logits[lab][cell];
    }
    Ok(total / labels.len() as f64)
}

/// `content + geo + lambda_gan * gan + lambda_seg * seg`.
pub fn losssum(parts: [f64; 4], lambda_gan: f64, lambda_seg: f64) -> f64 {
    let [content, geo, gan, seg] = parts;
    let mut total = 0.0;
    total += content;
    total += geo;
    total += lambda_gan * gan;
    total += lambda_seg * seg;
    total
}
