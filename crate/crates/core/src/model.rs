//! The full try-on network: encoders, generators, decoder and discriminators, with both a
//! graph-level pose-transfer pass (for training) and tensor-level inference helpers.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::encoders::{
    leaky, FlowEstimator, PoseEncoder, ShapeHead, ShapeNet, TextureEncoder, TextureMap,
    TextureMapper, GRID, LATENT,
};
use crate::error::{Error, Result};
use crate::generator::{
    add_garment, compose_body_texture, generate_body, CondGenerator, Decoder, FeatureVars,
    StyleGenerator,
};
use crate::image::{
    Keypoints, LabelMap, RgbImage, IMAGE_SIZE, LABEL_BACKGROUND, LABEL_SKIN, NUM_KEYPOINTS,
    NUM_LABELS,
};
use crate::nn::{seeded_rng, Conv2d, ParamStore};
use crate::preprocessing::{extract_segment, make_heatmaps, GarmentSegment};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Garment labels in dressing order, back to front: bottom, top, hair.
pub const DEFAULT_ORDER: [u8; 3] = [4, 3, 2];

pub mod tag {
    pub const E_POSE: u32 = 1;
    pub const E_TEX: u32 = 2;
    pub const FLOW: u32 = 3;
    pub const SHAPE: u32 = 4;
    pub const E_MAP: u32 = 5;
    pub const G_BODY: u32 = 6;
    pub const PHI: u32 = 7;
    pub const DEC: u32 = 8;
    pub const D_POSE: u32 = 9;
    pub const D_SEG: u32 = 10;
    pub const FEATURES: u32 = 11;
}

/// Patch discriminator: four stride-2 4x4 convolutions over (image, conditioning).
#[derive(Clone, Debug)]
pub struct PatchDiscriminator<S> {
    pub params: ParamStore<S>,
    convs: [Conv2d; 4],
    cond_channels: usize,
}

impl<S: Scalar> PatchDiscriminator<S> {
    pub fn new(tag: u32, name: &str, cond_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamStore::new(tag);
        let widths = [3 + cond_channels, 32, 64, 64, 1];
        let convs = std::array::from_fn(|i| {
            Conv2d::new(
                &mut p,
                &format!("{name}.{i}"),
                widths[i],
                widths[i + 1],
                4,
                2,
                1,
                rng,
            )
        });
        PatchDiscriminator {
            params: p,
            convs,
            cond_channels,
        }
    }

    pub fn cond_channels(&self) -> usize {
        self.cond_channels
    }

    /// Patch scores `N x 1 x 4 x 4`.
    pub fn forward(&self, g: &mut Graph<S>, image: Var, cond: Var) -> Var {
        let mut x = g.concat_channels(&[image, cond]);
        for (i, c) in self.convs.iter().enumerate() {
            x = c.forward(g, &self.params, x);
            if i < 3 {
                x = leaky(g, x);
            }
        }
        x
    }
}

/// Frozen, randomly initialized 4-layer convolutional feature stack used by the content
/// and flow losses.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<S> {
    pub params: ParamStore<S>,
    convs: [Conv2d; 4],
}

/// Index of the 16x16 layer of [`FeatureExtractor`].
pub const GEO_LAYER: usize = 2;

impl<S: Scalar> FeatureExtractor<S> {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded_rng(seed, tag::FEATURES as u64);
        let mut p = ParamStore::new(tag::FEATURES);
        let convs = [
            Conv2d::new(&mut p, "feat.0", 3, 16, 3, 1, 1, &mut rng),
            Conv2d::new(&mut p, "feat.1", 16, 32, 3, 2, 1, &mut rng),
            Conv2d::new(&mut p, "feat.2", 32, 32, 3, 2, 1, &mut rng),
            Conv2d::new(&mut p, "feat.3", 32, 64, 3, 2, 1, &mut rng),
        ];
        FeatureExtractor { params: p, convs }
    }

    /// Activations of all four layers (64, 32, 16 and 8 pixels square).
    pub fn forward(&self, g: &mut Graph<S>, image: Var) -> Vec<Var> {
        g.freeze(self.params.tag());
        let mut x = image;
        let mut out = Vec::with_capacity(4);
        for c in &self.convs {
            x = c.forward(g, &self.params, x);
            x = leaky(g, x);
            out.push(x);
        }
        out
    }
}

/// Encoded segment: warped texture T_g, soft mask M_g, the flow used and the source label.
#[derive(Clone, Debug, PartialEq)]
pub struct GarmentFeature<S> {
    /// `1 x L x 16 x 16`.
    pub texture: Tensor<S>,
    /// `1 x 1 x 16 x 16` in `[0, 1]`.
    pub shape_mask: Tensor<S>,
    /// `1 x 2 x 16 x 16`.
    pub flow: Tensor<S>,
    pub source_label: u8,
}

/// T'_body with its foreground mask.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyTextureMap<S> {
    pub texture: Tensor<S>,
    pub foreground_mask: Tensor<S>,
    /// Set when the skin region was empty and the global skin mean stood in for b.
    pub skin_fallback: bool,
}

/// The (pose, body, garments) tuple driving generation.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonRepresentation<S> {
    /// Hidden pose map `1 x L x 16 x 16`.
    pub pose: Tensor<S>,
    pub body: BodyTextureMap<S>,
    /// Applied in order, back to front.
    pub garments: Vec<GarmentFeature<S>>,
}

/// A person (or garment donor) as raw inputs.
#[derive(Clone, Copy, Debug)]
pub struct PersonInput<'a> {
    pub image: &'a RgbImage,
    pub seg: &'a LabelMap,
    pub keypoints: &'a Keypoints,
}

/// Everything produced when encoding a person into a target pose.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedPerson<S> {
    pub person: PersonRepresentation<S>,
    /// One feature per label 0..4, including background and skin.
    pub segments: Vec<GarmentFeature<S>>,
    pub flow: Tensor<S>,
}

/// Graph nodes of one pose-transfer pass.
#[derive(Clone, Debug)]
pub struct TransferVars {
    pub image: Var,
    pub flow: Var,
    /// Mask logits per label 0..4, each `N x 1 x 16 x 16`.
    pub mask_logits: Vec<Var>,
    pub masks: Vec<Var>,
    pub textures: Vec<Var>,
    pub body_fallback: Vec<bool>,
}

/// Batched inputs of a pose-transfer pass.
#[derive(Clone, Debug)]
pub struct TransferInputs<S> {
    pub source_image: Tensor<S>,
    pub source_pose: Tensor<S>,
    pub target_pose: Tensor<S>,
    /// Masked source image per label 0..4.
    pub segments: Vec<Tensor<S>>,
}

impl<S: Scalar> TransferInputs<S> {
    pub fn from_person(src: PersonInput<'_>, target: &Keypoints) -> Result<Self> {
        let segments = (0..NUM_LABELS as u8)
            .map(|l| extract_segment::<S>(src.image, src.seg, l).map(|s| s.masked_image))
            .collect::<Result<_>>()?;
        Ok(TransferInputs {
            source_image: src.image.to_tensor(),
            source_pose: make_heatmaps(src.keypoints)?,
            target_pose: make_heatmaps(target)?,
            segments,
        })
    }

    pub fn stack(items: &[TransferInputs<S>]) -> Result<Self> {
        let col = |f: &dyn Fn(&TransferInputs<S>) -> Tensor<S>| {
            Tensor::stack_batch(&items.iter().map(f).collect::<Vec<_>>())
        };
        Ok(TransferInputs {
            source_image: col(&|t| t.source_image.clone())?,
            source_pose: col(&|t| t.source_pose.clone())?,
            target_pose: col(&|t| t.target_pose.clone())?,
            segments: (0..NUM_LABELS)
                .map(|l| col(&|t| t.segments[l].clone()))
                .collect::<Result<_>>()?,
        })
    }
}

/// All networks of the try-on model.
#[derive(Clone, Debug)]
pub struct Model<S> {
    pub e_pose: PoseEncoder<S>,
    pub e_tex: TextureEncoder<S>,
    pub flow: FlowEstimator<S>,
    pub shape: ShapeNet<S>,
    pub e_map: TextureMapper<S>,
    pub g_body: StyleGenerator<S>,
    pub phi: StyleGenerator<S>,
    pub dec: Decoder<S>,
    pub d_pose: PatchDiscriminator<S>,
    pub d_seg: PatchDiscriminator<S>,
}

fn single<S: Scalar>(t: &Tensor<S>, c: usize, side: usize, what: &str) -> Result<()> {
    if t.shape() != [1, c, side, side] {
        return Err(Error::shape(format!(
            "{what}: expected 1 x {c} x {side} x {side}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl<S: Scalar> Model<S> {
    /// Freshly initialized networks; each network draws from its own seeded stream.
    pub fn new(seed: u64) -> Self {
        let rng = |t: u32| seeded_rng(seed, t as u64);
        Model {
            e_pose: PoseEncoder::new(tag::E_POSE, &mut rng(tag::E_POSE)),
            e_tex: TextureEncoder::new(tag::E_TEX, &mut rng(tag::E_TEX)),
            flow: FlowEstimator::new(tag::FLOW, &mut rng(tag::FLOW)),
            shape: ShapeNet::new(tag::SHAPE, &mut rng(tag::SHAPE)),
            e_map: TextureMapper::new(tag::E_MAP, &mut rng(tag::E_MAP)),
            g_body: StyleGenerator::new(tag::G_BODY, "g_body", &mut rng(tag::G_BODY)),
            phi: StyleGenerator::new(tag::PHI, "phi", &mut rng(tag::PHI)),
            dec: Decoder::new(tag::DEC, &mut rng(tag::DEC)),
            d_pose: PatchDiscriminator::new(
                tag::D_POSE,
                "d_pose",
                NUM_KEYPOINTS,
                &mut rng(tag::D_POSE),
            ),
            d_seg: PatchDiscriminator::new(tag::D_SEG, "d_seg", NUM_LABELS, &mut rng(tag::D_SEG)),
        }
    }

    /// Generator-side stores (everything trained by the generator objective).
    pub fn generator_stores(&self) -> [&ParamStore<S>; 8] {
        [
            &self.e_pose.params,
            &self.e_tex.params,
            &self.flow.params,
            &self.shape.params,
            &self.e_map.params,
            &self.g_body.params,
            &self.phi.params,
            &self.dec.params,
        ]
    }

    pub fn generator_stores_mut(&mut self) -> [&mut ParamStore<S>; 8] {
        [
            &mut self.e_pose.params,
            &mut self.e_tex.params,
            &mut self.flow.params,
            &mut self.shape.params,
            &mut self.e_map.params,
            &mut self.g_body.params,
            &mut self.phi.params,
            &mut self.dec.params,
        ]
    }

    pub fn discriminator_stores_mut(&mut self) -> [&mut ParamStore<S>; 2] {
        [&mut self.d_pose.params, &mut self.d_seg.params]
    }

    /// Every store, generators first.
    pub fn stores(&self) -> Vec<&ParamStore<S>> {
        let mut v: Vec<_> = self.generator_stores().into_iter().collect();
        v.push(&self.d_pose.params);
        v.push(&self.d_seg.params);
        v
    }

    pub fn stores_mut(&mut self) -> Vec<&mut ParamStore<S>> {
        let Model {
            e_pose,
            e_tex,
            flow,
            shape,
            e_map,
            g_body,
            phi,
            dec,
            d_pose,
            d_seg,
        } = self;
        vec![
            &mut e_pose.params,
            &mut e_tex.params,
            &mut flow.params,
            &mut shape.params,
            &mut e_map.params,
            &mut g_body.params,
            &mut phi.params,
            &mut dec.params,
            &mut d_pose.params,
            &mut d_seg.params,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.stores().iter().map(|s| s.num_scalars()).sum()
    }

    /// Encodes one segment image (batched) through E_tex, warps it and predicts its mask.
    pub fn encode_segment_vars(
        &self,
        g: &mut Graph<S>,
        masked_image: Var,
        flow: Var,
    ) -> Result<(Var, Var, Var)> {
        let t = self.e_tex.forward(g, masked_image)?;
        let texture = g.warp(t, flow);
        let logits = self.shape.logits(g, texture);
        let mask = g.sigmoid(logits);
        Ok((texture, logits, mask))
    }

    /// Pose transfer: every segment of the source is encoded into the target pose, the body
    /// map is composed, garments are applied in `order` and the result decoded.
    pub fn transfer_vars(
        &self,
        g: &mut Graph<S>,
        inputs: &TransferInputs<S>,
        order: &[u8],
    ) -> Result<TransferVars> {
        if inputs.segments.len() != NUM_LABELS {
            return Err(Error::validation(
                "segments",
                "one segment per label is required",
            ));
        }
        let src = g.constant(inputs.source_image.clone());
        let ps = g.constant(inputs.source_pose.clone());
        let pt = g.constant(inputs.target_pose.clone());
        let flow = self.flow.forward(g, src, ps, pt)?;
        let pose = self.e_pose.forward(g, pt)?;

        let mut textures = Vec::with_capacity(NUM_LABELS);
        let mut logits = Vec::with_capacity(NUM_LABELS);
        let mut masks = Vec::with_capacity(NUM_LABELS);
        for seg in &inputs.segments {
            let s = g.constant(seg.clone());
            let (t, l, m) = self.encode_segment_vars(g, s, flow)?;
            textures.push(t);
            logits.push(l);
            masks.push(m);
        }
        let feat = |l: u8| FeatureVars {
            texture: textures[l as usize],
            mask: masks[l as usize],
        };
        let fg: Vec<Var> = (1..NUM_LABELS).map(|l| masks[l]).collect();
        let body = compose_body_texture(
            g,
            &self.e_map,
            feat(LABEL_SKIN),
            feat(LABEL_BACKGROUND),
            &fg,
        )?;
        let mut z = generate_body(g, &self.g_body, pose, body.texture)?;
        for &l in order {
            if l as usize >= NUM_LABELS {
                return Err(Error::validation(
                    "order",
                    format!("label {l} is outside 0..4"),
                ));
            }
            z = add_garment(g, &self.phi, &self.e_map, z, feat(l))?;
        }
        let image = self.dec.forward(g, z)?;
        Ok(TransferVars {
            image,
            flow,
            mask_logits: logits,
            masks,
            textures,
            body_fallback: body.fallback,
        })
    }

    pub fn encode_pose(&self, heatmaps: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let x = g.constant(heatmaps.clone());
        let y = self.e_pose.forward(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    pub fn estimate_flow(
        &self,
        source_image: &Tensor<S>,
        source_pose: &Tensor<S>,
        target_pose: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let a = g.constant(source_image.clone());
        let b = g.constant(source_pose.clone());
        let c = g.constant(target_pose.clone());
        let y = self.flow.forward(&mut g, a, b, c)?;
        Ok(g.value(y).clone())
    }

    /// T_g = warp(E_tex(masked image), flow); M_g = sigmoid(S(T_g)).
    pub fn encode_segment(
        &self,
        segment: &GarmentSegment<S>,
        flow: &Tensor<S>,
    ) -> Result<GarmentFeature<S>> {
        single(&segment.masked_image, 3, IMAGE_SIZE, "encode_segment image")?;
        single(flow, 2, GRID, "encode_segment flow")?;
        let mut g = Graph::new();
        let x = g.constant(segment.masked_image.clone());
        let f = g.constant(flow.clone());
        let (t, _, m) = self.encode_segment_vars(&mut g, x, f)?;
        Ok(GarmentFeature {
            texture: g.value(t).clone(),
            shape_mask: g.value(m).clone(),
            flow: flow.clone(),
            source_label: segment.source_label,
        })
    }

    /// E_tex of a masked image without warping (zero flow).
    pub fn encode_texture(&self, masked_image: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let x = g.constant(masked_image.clone());
        let t = self.e_tex.forward(&mut g, x)?;
        Ok(g.value(t).clone())
    }

    pub fn map_texture(&self, texture: &Tensor<S>, mask: &Tensor<S>) -> Result<Tensor<S>> {
        map_texture_with(&self.e_map, texture, mask)
    }

    pub fn compose_body_texture(
        &self,
        skin: &GarmentFeature<S>,
        background: &GarmentFeature<S>,
        fg_masks: &[Tensor<S>],
    ) -> Result<BodyTextureMap<S>> {
        compose_body_texture_with(&self.e_map, skin, background, fg_masks)
    }

    pub fn generate_body(&self, pose: &Tensor<S>, body: &BodyTextureMap<S>) -> Result<Tensor<S>> {
        generate_body_with(&self.g_body, pose, body)
    }

    pub fn add_garment(&self, state: &Tensor<S>, garment: &GarmentFeature<S>) -> Result<Tensor<S>> {
        let s = state.shape();
        if s.len() != 4 || s[1..] != [LATENT, GRID, GRID] {
            return Err(Error::shape(format!(
                "add_garment state: expected N x {LATENT} x {GRID} x {GRID}, got {s:?}"
            )));
        }
        add_garment_with(&self.phi, &self.e_map, state, garment)
    }

    pub fn decode(&self, state: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let z = g.constant(state.clone());
        let y = self.dec.forward(&mut g, z)?;
        Ok(g.value(y).clone())
    }

    /// encode_pose output through G_body, garments folded in order, then decoded.
    pub fn try_on(&self, person: &PersonRepresentation<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let pose = g.constant(person.pose.clone());
        let body = g.constant(person.body.texture.clone());
        let mut z = generate_body(&mut g, &self.g_body, pose, body)?;
        for garment in &person.garments {
            let fv = FeatureVars {
                texture: g.constant(garment.texture.clone()),
                mask: g.constant(garment.shape_mask.clone()),
            };
            z = add_garment(&mut g, &self.phi, &self.e_map, z, fv)?;
        }
        let y = self.dec.forward(&mut g, z)?;
        Ok(g.value(y).clone())
    }

    /// Encodes a person into `target` pose; garments follow `order` (labels).
    pub fn encode_person(
        &self,
        src: PersonInput<'_>,
        target: &Keypoints,
        order: &[u8],
    ) -> Result<EncodedPerson<S>> {
        let inputs = TransferInputs::from_person(src, target)?;
        let mut g = Graph::new();
        let vars = self.transfer_vars(&mut g, &inputs, order)?;
        let flow = g.value(vars.flow).clone();
        let segments: Vec<GarmentFeature<S>> = (0..NUM_LABELS)
            .map(|l| GarmentFeature {
                texture: g.value(vars.textures[l]).clone(),
                shape_mask: g.value(vars.masks[l]).clone(),
                flow: flow.clone(),
                source_label: l as u8,
            })
            .collect();
        let fg: Vec<Tensor<S>> = segments[1..].iter().map(|s| s.shape_mask.clone()).collect();
        let body = self.compose_body_texture(&segments[1], &segments[0], &fg)?;
        let pose = self.encode_pose(&inputs.target_pose)?;
        let garments = order
            .iter()
            .map(|&l| segments[l as usize].clone())
            .collect();
        Ok(EncodedPerson {
            person: PersonRepresentation {
                pose,
                body,
                garments,
            },
            segments,
            flow,
        })
    }

    /// Encodes one labeled garment of a donor into the `target` pose.
    pub fn encode_garment(
        &self,
        donor: PersonInput<'_>,
        label: u8,
        target: &Keypoints,
    ) -> Result<GarmentFeature<S>> {
        let seg = extract_segment::<S>(donor.image, donor.seg, label)?;
        let flow = self.estimate_flow(
            &donor.image.to_tensor(),
            &make_heatmaps(donor.keypoints)?,
            &make_heatmaps(target)?,
        )?;
        self.encode_segment(&seg, &flow)
    }
}

/// Tensor-level E_map through any [`TextureMap`].
pub fn map_texture_with<S: Scalar>(
    emap: &dyn TextureMap<S>,
    texture: &Tensor<S>,
    mask: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, _, h, w) = texture.dims4();
    if mask.shape() != [n, 1, h, w] {
        return Err(Error::shape(format!(
            "mask {:?} does not match texture {:?}",
            mask.shape(),
            texture.shape()
        )));
    }
    let mut g = Graph::new();
    let t = g.constant(texture.clone());
    let m = g.constant(mask.clone());
    let y = emap.map(&mut g, t, m);
    Ok(g.value(y).clone())
}

pub fn compose_body_texture_with<S: Scalar>(
    emap: &dyn TextureMap<S>,
    skin: &GarmentFeature<S>,
    background: &GarmentFeature<S>,
    fg_masks: &[Tensor<S>],
) -> Result<BodyTextureMap<S>> {
    if skin.texture.shape() != background.texture.shape() {
        return Err(Error::shape("skin and background textures differ in shape"));
    }
    let mut g = Graph::new();
    let fv = |g: &mut Graph<S>, f: &GarmentFeature<S>| FeatureVars {
        texture: g.constant(f.texture.clone()),
        mask: g.constant(f.shape_mask.clone()),
    };
    let skin_v = fv(&mut g, skin);
    let bg_v = fv(&mut g, background);
    let masks: Vec<Var> = fg_masks.iter().map(|m| g.constant(m.clone())).collect();
    let body = compose_body_texture(&mut g, emap, skin_v, bg_v, &masks)?;
    Ok(BodyTextureMap {
        texture: g.value(body.texture).clone(),
        foreground_mask: g.value(body.fg_mask).clone(),
        skin_fallback: body.fallback.iter().any(|&f| f),
    })
}

pub fn generate_body_with<S: Scalar>(
    gen: &dyn CondGenerator<S>,
    pose: &Tensor<S>,
    body: &BodyTextureMap<S>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let p = g.constant(pose.clone());
    let b = g.constant(body.texture.clone());
    let z = generate_body(&mut g, gen, p, b)?;
    Ok(g.value(z).clone())
}

pub fn add_garment_with<S: Scalar>(
    phi: &dyn CondGenerator<S>,
    emap: &dyn TextureMap<S>,
    state: &Tensor<S>,
    garment: &GarmentFeature<S>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let z = g.constant(state.clone());
    let fv = FeatureVars {
        texture: g.constant(garment.texture.clone()),
        mask: g.constant(garment.shape_mask.clone()),
    };
    let out = add_garment(&mut g, phi, emap, z, fv)?;
    Ok(g.value(out).clone())
}

/// Channel count of latent maps, re-exported for callers that only see the model.
pub const LATENT_CHANNELS: usize = LATENT;
