//! Person encoders: hidden pose map, garment texture features, flow, soft shape masks and
//! the texture dimension mapper.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::{IMAGE_SIZE, NUM_KEYPOINTS};
use crate::nn::{Conv2d, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Latent channels of every feature map.
pub const LATENT: usize = 64;
/// Side of the feature grid (image side / 4).
pub const GRID: usize = IMAGE_SIZE / 4;
pub const LEAK: f64 = 0.2;

pub(crate) fn leaky<S: Scalar>(g: &mut Graph<S>, x: Var) -> Var {
    g.leaky_relu(x, S::lit(LEAK))
}

pub(crate) fn expect_dims<S: Scalar>(
    g: &Graph<S>,
    v: Var,
    c: usize,
    side: usize,
    what: &str,
) -> Result<()> {
    let s = g.shape(v);
    if s.len() != 4 || s[1] != c || s[2] != side || s[3] != side {
        return Err(Error::shape(format!(
            "{what}: expected N x {c} x {side} x {side}, got {s:?}"
        )));
    }
    Ok(())
}

/// E_pose: three Conv-InstanceNorm-LeakyReLU layers, 18 x 64 x 64 to L x 16 x 16.
#[derive(Clone, Debug)]
pub struct PoseEncoder<S> {
    pub params: ParamStore<S>,
    convs: [Conv2d; 3],
}

impl<S: Scalar> PoseEncoder<S> {
    pub fn new(tag: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        let convs = [
            Conv2d::new(&mut p, "e_pose.0", NUM_KEYPOINTS, 16, 3, 2, 1, rng),
            Conv2d::new(&mut p, "e_pose.1", 16, 32, 3, 2, 1, rng),
            Conv2d::same3(&mut p, "e_pose.2", 32, LATENT, rng),
        ];
        PoseEncoder { params: p, convs }
    }

    pub fn forward(&self, g: &mut Graph<S>, heatmaps: Var) -> Result<Var> {
        expect_dims(g, heatmaps, NUM_KEYPOINTS, IMAGE_SIZE, "encode_pose")?;
        let mut x = heatmaps;
        for c in &self.convs {
            x = c.forward(g, &self.params, x);
            x = g.instance_norm(x);
            x = leaky(g, x);
        }
        Ok(x)
    }
}

/// E_tex: masked RGB segment to L x 16 x 16 (Conv-LeakyReLU, strides 1, 2, 2).
#[derive(Clone, Debug)]
pub struct TextureEncoder<S> {
    pub params: ParamStore<S>,
    convs: [Conv2d; 3],
}

impl<S: Scalar> TextureEncoder<S> {
    pub fn new(tag: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        let convs = [
            Conv2d::same3(&mut p, "e_tex.0", 3, 16, rng),
            Conv2d::new(&mut p, "e_tex.1", 16, 32, 3, 2, 1, rng),
            Conv2d::new(&mut p, "e_tex.2", 32, LATENT, 3, 2, 1, rng),
        ];
        TextureEncoder { params: p, convs }
    }

    pub fn forward(&self, g: &mut Graph<S>, masked_image: Var) -> Result<Var> {
        expect_dims(g, masked_image, 3, IMAGE_SIZE, "encode_segment")?;
        let mut x = masked_image;
        for c in &self.convs {
            x = c.forward(g, &self.params, x);
            x = leaky(g, x);
        }
        Ok(x)
    }
}

/// F: five 3x3 convolutions over (source image, source pose, target pose), each pooled 4x,
/// predicting backward-sampling offsets in grid units.
#[derive(Clone, Debug)]
pub struct FlowEstimator<S> {
    pub params: ParamStore<S>,
    convs: Vec<Conv2d>,
}

impl<S: Scalar> FlowEstimator<S> {
    pub fn new(tag: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        let widths = [3 + 2 * NUM_KEYPOINTS, 32, 32, 32, 32, 2];
        let convs: Vec<Conv2d> = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Conv2d::same3(&mut p, &format!("flow.{i}"), w[0], w[1], rng))
            .collect();
        // Start from the identity warp.
        let last = convs.last().unwrap().weight;
        p.value_mut(last).data_mut().fill(S::zero());
        FlowEstimator { params: p, convs }
    }

    pub fn forward(
        &self,
        g: &mut Graph<S>,
        source_image: Var,
        source_pose: Var,
        target_pose: Var,
    ) -> Result<Var> {
        expect_dims(g, source_image, 3, IMAGE_SIZE, "estimate_flow source image")?;
        expect_dims(
            g,
            source_pose,
            NUM_KEYPOINTS,
            IMAGE_SIZE,
            "estimate_flow source pose",
        )?;
        expect_dims(
            g,
            target_pose,
            NUM_KEYPOINTS,
            IMAGE_SIZE,
            "estimate_flow target pose",
        )?;
        if g.shape(source_image)[0] != g.shape(target_pose)[0]
            || g.shape(source_pose)[0] != g.shape(target_pose)[0]
        {
            return Err(Error::shape("estimate_flow: batch sizes differ"));
        }
        let parts = [
            g.avg_pool(source_image, 4),
            g.avg_pool(source_pose, 4),
            g.avg_pool(target_pose, 4),
        ];
        let mut x = g.concat_channels(&parts);
        let n = self.convs.len();
        for (i, c) in self.convs.iter().enumerate() {
            x = c.forward(g, &self.params, x);
            if i + 1 < n {
                x = leaky(g, x);
            }
        }
        Ok(x)
    }
}

/// Produces pre-sigmoid mask logits from a warped texture feature.
pub trait ShapeHead<S: Scalar> {
    fn logits(&self, g: &mut Graph<S>, texture: Var) -> Var;
}

/// S: three convolutions, L to 1 channel.
#[derive(Clone, Debug)]
pub struct ShapeNet<S> {
    pub params: ParamStore<S>,
    convs: [Conv2d; 3],
}

impl<S: Scalar> ShapeNet<S> {
    pub fn new(tag: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        let convs = [
            Conv2d::same3(&mut p, "shape.0", LATENT, 32, rng),
            Conv2d::same3(&mut p, "shape.1", 32, 32, rng),
            Conv2d::same3(&mut p, "shape.2", 32, 1, rng),
        ];
        ShapeNet { params: p, convs }
    }
}

impl<S: Scalar> ShapeHead<S> for ShapeNet<S> {
    fn logits(&self, g: &mut Graph<S>, texture: Var) -> Var {
        let mut x = texture;
        for (i, c) in self.convs.iter().enumerate() {
            x = c.forward(g, &self.params, x);
            if i < 2 {
                x = leaky(g, x);
            }
        }
        x
    }
}

/// Shape head stub with fixed logits everywhere.
#[derive(Clone, Copy, Debug)]
pub struct ConstantShape(pub f64);

impl<S: Scalar> ShapeHead<S> for ConstantShape {
    fn logits(&self, g: &mut Graph<S>, texture: Var) -> Var {
        let s = g.shape(texture);
        let t = Tensor::full(&[s[0], 1, s[2], s[3]], S::lit(self.0));
        g.constant(t)
    }
}

/// E_map: per-pixel projection of concatenated (texture, mask) to L channels.
pub trait TextureMap<S: Scalar> {
    fn map(&self, g: &mut Graph<S>, texture: Var, mask: Var) -> Var;
}

#[derive(Clone, Debug)]
pub struct TextureMapper<S> {
    pub params: ParamStore<S>,
    conv: Conv2d,
}

impl<S: Scalar> TextureMapper<S> {
    pub fn new(tag: u32, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        let conv = Conv2d::pointwise(&mut p, "e_map", LATENT + 1, LATENT, rng);
        TextureMapper { params: p, conv }
    }

    pub fn weight_id(&self) -> crate::nn::ParamId {
        self.conv.weight
    }

    pub fn bias_id(&self) -> crate::nn::ParamId {
        self.conv.bias
    }
}

impl<S: Scalar> TextureMap<S> for TextureMapper<S> {
    fn map(&self, g: &mut Graph<S>, texture: Var, mask: Var) -> Var {
        let x = g.concat_channels(&[texture, mask]);
        self.conv.forward(g, &self.params, x)
    }
}

/// Passes the texture through unchanged (identity on the first L channels).
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityMap;

impl<S: Scalar> TextureMap<S> for IdentityMap {
    fn map(&self, _g: &mut Graph<S>, texture: Var, _mask: Var) -> Var {
        texture
    }
}

/// Tensor-level bilinear warp: `out[p] = bilinear(feature, p + flow[p])`, clamped at borders.
pub fn bilinear_warp<S: Scalar>(feature: &Tensor<S>, flow: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, _, h, w) = feature.dims4();
    if flow.shape() != [n, 2, h, w] {
        return Err(Error::shape(format!(
            "flow {:?} does not match feature {:?}",
            flow.shape(),
            feature.shape()
        )));
    }
    Ok(crate::autodiff::kernels::warp_forward(feature, flow))
}
