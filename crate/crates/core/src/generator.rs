//! Body texture composition, recurrent garment composition and image decoding.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::encoders::{expect_dims, leaky, TextureMap, GRID, LATENT};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Threshold on the skin mask selecting the region averaged into the body vector.
pub const SKIN_ROI_THRESHOLD: f64 = 0.5;

/// Texture and soft mask of one encoded segment, as graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars {
    pub texture: Var,
    pub mask: Var,
}

#[derive(Clone, Debug)]
pub struct BodyVars {
    /// T'_body.
    pub texture: Var,
    /// M_fg.
    pub fg_mask: Var,
    /// Per batch item: true when the skin region was empty and the global mean was used.
    pub fallback: Vec<bool>,
}

/// T'_body = M_fg * E_map(M_fg (x) b, M_fg) + (1 - M_fg) * E_map(T_bg, M_bg), where b is
/// the mean skin texture over cells with M_skin > 0.5 and M_fg the elementwise max of the
/// foreground masks.
pub fn compose_body_texture<S: Scalar>(
    g: &mut Graph<S>,
    emap: &dyn TextureMap<S>,
    skin: FeatureVars,
    background: FeatureVars,
    fg_masks: &[Var],
) -> Result<BodyVars> {
    let Some((&first, rest)) = fg_masks.split_first() else {
        return Err(Error::validation(
            "all_fg_masks",
            "at least one foreground mask is required",
        ));
    };
    let mut fg = first;
    for &m in rest {
        if g.shape(m) != g.shape(first) {
            return Err(Error::shape("foreground masks differ in shape"));
        }
        fg = g.maximum(fg, m);
    }

    let skin_mask = g.value(skin.mask).clone();
    let (n, _, h, w) = skin_mask.dims4();
    let hw = h * w;
    let threshold = S::lit(SKIN_ROI_THRESHOLD);
    let mut roi = skin_mask.map(|v| if v > threshold { S::one() } else { S::zero() });
    let mut fallback = vec![false; n];
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let cells = &mut roi.data_mut()[i * hw..(i + 1) * hw];
        let mut count = cells.iter().filter(|&&v| v > S::zero()).count();
        if count == 0 {
            cells.fill(S::one());
            count = hw;
            fallback[i] = true;
        }
        counts.push(S::from_usize(count).unwrap());
    }
    let roi = g.constant(roi);
    let counts = g.constant(Tensor::from_vec(&[n, 1, 1, 1], counts)?);
    let selected = g.mul(skin.texture, roi);
    let sums = g.sum_spatial(selected);
    let b = g.div(sums, counts);

    let broadcast_b = g.mul(b, fg);
    let body_fg = emap.map(g, broadcast_b, fg);
    let bg = emap.map(g, background.texture, background.mask);
    let a = g.mul(fg, body_fg);
    let inv = g.one_minus(fg);
    let c = g.mul(inv, bg);
    let texture = g.add(a, c);
    Ok(BodyVars {
        texture,
        fg_mask: fg,
        fallback,
    })
}

/// Conditional generator interface shared by G_body and Phi.
pub trait CondGenerator<S: Scalar> {
    fn forward(&self, g: &mut Graph<S>, z: Var, cond: Var) -> Var;
}

#[derive(Clone, Debug)]
struct StyleBlock {
    shared: Conv2d,
    gamma: Conv2d,
    beta: Conv2d,
    out: Conv2d,
}

/// Hidden size of the modulation branch.
pub const STYLE_HIDDEN: usize = 32;
pub const STYLE_BLOCKS: usize = 2;

/// Two residual style blocks; each normalizes z per cell and modulates it per cell with
/// scale and shift predicted from the condition map.
#[derive(Clone, Debug)]
pub struct StyleGenerator<S> {
    pub params: ParamStore<S>,
    blocks: Vec<StyleBlock>,
}

impl<S: Scalar> StyleGenerator<S> {
    pub fn new(tag: u32, name: &str, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        let blocks = (0..STYLE_BLOCKS)
            .map(|i| {
                let pre = format!("{name}.{i}");
                StyleBlock {
                    shared: Conv2d::same3(
                        &mut p,
                        &format!("{pre}.shared"),
                        LATENT,
                        STYLE_HIDDEN,
                        rng,
                    ),
                    gamma: Conv2d::pointwise(
                        &mut p,
                        &format!("{pre}.gamma"),
                        STYLE_HIDDEN,
                        LATENT,
                        rng,
                    ),
                    beta: Conv2d::pointwise(
                        &mut p,
                        &format!("{pre}.beta"),
                        STYLE_HIDDEN,
                        LATENT,
                        rng,
                    ),
                    out: Conv2d::same3(&mut p, &format!("{pre}.out"), LATENT, LATENT, rng),
                }
            })
            .collect();
        StyleGenerator { params: p, blocks }
    }
}

impl<S: Scalar> CondGenerator<S> for StyleGenerator<S> {
    fn forward(&self, g: &mut Graph<S>, z: Var, cond: Var) -> Var {
        let p = &self.params;
        let mut z = z;
        for b in &self.blocks {
            let h = g.channel_norm(z);
            let s = b.shared.forward(g, p, cond);
            let s = g.relu(s);
            let gamma = b.gamma.forward(g, p, s);
            let beta = b.beta.forward(g, p, s);
            let scale = g.add_scalar(gamma, S::one());
            let h = g.mul(h, scale);
            let h = g.add(h, beta);
            let h = leaky(g, h);
            let h = b.out.forward(g, p, h);
            z = g.add(z, h);
        }
        z
    }
}

/// Stub generator returning a fixed tensor regardless of its inputs.
#[derive(Clone, Debug)]
pub struct ConstantGenerator<S>(pub Tensor<S>);

impl<S: Scalar> CondGenerator<S> for ConstantGenerator<S> {
    fn forward(&self, g: &mut Graph<S>, _z: Var, _cond: Var) -> Var {
        g.constant(self.0.clone())
    }
}

/// Stub generator with no spatial mixing: `0.5 z + tanh(cond)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct PointwiseGenerator;

impl<S: Scalar> CondGenerator<S> for PointwiseGenerator {
    fn forward(&self, g: &mut Graph<S>, z: Var, cond: Var) -> Var {
        let a = g.scale(z, S::lit(0.5));
        let b = g.tanh(cond);
        g.add(a, b)
    }
}

/// Z_0 = G_body(Z_pose | T'_body).
pub fn generate_body<S: Scalar>(
    g: &mut Graph<S>,
    gen: &dyn CondGenerator<S>,
    pose: Var,
    body: Var,
) -> Result<Var> {
    expect_dims(g, pose, LATENT, GRID, "generate_body pose")?;
    if g.shape(pose) != g.shape(body) {
        return Err(Error::shape(format!(
            "pose map {:?} and body map {:?} differ",
            g.shape(pose),
            g.shape(body)
        )));
    }
    Ok(gen.forward(g, pose, body))
}

/// Z_k = Phi(Z_{k-1}, T'_g) * M_g + Z_{k-1} * (1 - M_g), with T'_g = E_map(T_g, M_g).
pub fn add_garment<S: Scalar>(
    g: &mut Graph<S>,
    phi: &dyn CondGenerator<S>,
    emap: &dyn TextureMap<S>,
    state: Var,
    garment: FeatureVars,
) -> Result<Var> {
    let zs = g.shape(state).to_vec();
    let ms = g.shape(garment.mask);
    if zs.len() != 4 || ms != [zs[0], 1, zs[2], zs[3]] || g.shape(garment.texture)[2..] != zs[2..] {
        return Err(Error::shape(format!(
            "state {zs:?} incompatible with garment mask {ms:?}"
        )));
    }
    let mapped = emap.map(g, garment.texture, garment.mask);
    let out = phi.forward(g, state, mapped);
    let a = g.mul(out, garment.mask);
    let keep = g.one_minus(garment.mask);
    let b = g.mul(state, keep);
    Ok(g.add(a, b))
}

/// G_dec: residual block at 16x16, two (upsample, conv) stages, RGB head, sigmoid.
#[derive(Clone, Debug)]
pub struct Decoder<S> {
    pub params: ParamStore<S>,
    res: Conv2d,
    up1: Conv2d,
    up2: Conv2d,
    head: Conv2d,
}

impl<S: Scalar> Decoder<S> {
    pub fn new(tag: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        Decoder {
            res: Conv2d::same3(&mut p, "dec.res", LATENT, LATENT, rng),
            up1: Conv2d::same3(&mut p, "dec.up1", LATENT, 32, rng),
            up2: Conv2d::same3(&mut p, "dec.up2", 32, 16, rng),
            head: Conv2d::same3(&mut p, "dec.head", 16, 3, rng),
            params: p,
        }
    }

    pub fn forward(&self, g: &mut Graph<S>, state: Var) -> Result<Var> {
        expect_dims(g, state, LATENT, GRID, "decode")?;
        let p = &self.params;
        let h = g.channel_norm(state);
        let h = leaky(g, h);
        let h = self.res.forward(g, p, h);
        let x = g.add(state, h);
        let x = g.upsample2x(x);
        let x = self.up1.forward(g, p, x);
        let x = leaky(g, x);
        let x = g.upsample2x(x);
        let x = self.up2.forward(g, p, x);
        let x = leaky(g, x);
        let x = self.head.forward(g, p, x);
        Ok(g.sigmoid(x))
    }
}
