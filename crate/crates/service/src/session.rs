//! Session state and the pure operations on it. Every operation mutates a value that the
//! manager commits only after it has been persisted.

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use dressup_core::dataset::{render_person, PaperDollSpec};
use dressup_core::image::{Keypoints, LabelMap, RgbImage, IMAGE_SIZE, NUM_LABELS};
use dressup_core::model::{
    BodyTextureMap, GarmentFeature, PersonInput, PersonRepresentation, DEFAULT_ORDER,
};
use dressup_core::preprocessing::extract_segment;
use dressup_core::tensor::Tensor;
use dressup_core::tweaking::{tweak_person, AttributeDirection, Tweak};
use dressup_core::Model32;
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

pub const SCHEMA_VERSION: u32 = 1;
/// Version of the encoded-feature blob; a mismatch triggers re-encoding on load.
pub const BLOB_VERSION: u32 = 1;
const BLOB_MAGIC: &[u8; 4] = b"DSPR";

pub const LABEL_NAMES: [&str; NUM_LABELS] = ["background", "skin", "hair", "top", "bottom"];

/// Where a person comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PersonSource {
    /// A toy person drawn from a full spec.
    Toy { spec: PaperDollSpec },
    /// A toy person drawn from `PaperDollSpec::random(seed)`.
    ToySeed { seed: u64 },
    /// Base64 PNGs (64x64 RGB image, grayscale label map) and 18 `[x, y, v]` keypoints.
    Upload {
        image_png: String,
        seg_png: String,
        keypoints: serde_json::Value,
    },
}

/// Where a garment in the stack comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GarmentOrigin {
    /// The session person's own garment.
    Person,
    Toy {
        spec: PaperDollSpec,
    },
    ToySeed {
        seed: u64,
    },
    /// Without keypoints the garment is assumed to be already aligned to the person.
    Upload {
        image_png: String,
        seg_png: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        keypoints: Option<serde_json::Value>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentEntry {
    pub label: u8,
    pub origin: GarmentOrigin,
}

/// Resolved pixels of a person or donor.
pub struct Pixels {
    pub image: RgbImage,
    pub seg: LabelMap,
    pub keypoints: Option<Keypoints>,
}

impl Pixels {
    fn input<'a>(&'a self, fallback: &'a Keypoints) -> PersonInput<'a> {
        PersonInput {
            image: &self.image,
            seg: &self.seg,
            keypoints: self.keypoints.as_ref().unwrap_or(fallback),
        }
    }
}

fn decode_b64(field: &str, text: &str) -> ApiResult<Vec<u8>> {
    B64.decode(text.trim())
        .map_err(|e| ApiError::validation(field, format!("not valid base64: {e}")))
}

fn decode_upload(
    image_png: &str,
    seg_png: &str,
    keypoints: Option<&serde_json::Value>,
) -> ApiResult<Pixels> {
    let image = RgbImage::decode_png(&decode_b64("image_png", image_png)?)
        .map_err(|e| ApiError::from(e).with_field("image_png"))?;
    let seg = LabelMap::decode_png(&decode_b64("seg_png", seg_png)?)
        .map_err(|e| ApiError::from(e).with_field("seg_png"))?;
    if (image.width, image.height) != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(ApiError::validation(
            "image_png",
            format!(
                "expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {}x{}",
                image.width, image.height
            ),
        ));
    }
    if (seg.width, seg.height) != (image.width, image.height) {
        return Err(ApiError::validation(
            "seg_png",
            format!(
                "label map is {}x{} but the image is {IMAGE_SIZE}x{IMAGE_SIZE}",
                seg.width, seg.height
            ),
        ));
    }
    if let Some(bad) = seg.labels().iter().find(|&&l| l as usize >= NUM_LABELS) {
        return Err(ApiError::validation(
            "seg_png",
            format!("label {bad} is outside 0..{}", NUM_LABELS - 1),
        ));
    }
    let keypoints = keypoints.map(Keypoints::from_json).transpose()?;
    Ok(Pixels {
        image,
        seg,
        keypoints,
    })
}

fn toy_pixels(spec: &PaperDollSpec) -> ApiResult<Pixels> {
    let s = render_person(spec)?;
    Ok(Pixels {
        image: s.image,
        seg: s.seg,
        keypoints: Some(s.keypoints),
    })
}

impl PersonSource {
    pub fn resolve(&self) -> ApiResult<(Pixels, Keypoints)> {
        let px = match self {
            PersonSource::Toy { spec } => toy_pixels(spec)?,
            PersonSource::ToySeed { seed } => toy_pixels(&PaperDollSpec::random(*seed))?,
            PersonSource::Upload {
                image_png,
                seg_png,
                keypoints,
            } => decode_upload(image_png, seg_png, Some(keypoints))?,
        };
        let kps = px.keypoints.expect("person sources always carry keypoints");
        Ok((px, kps))
    }
}

impl GarmentOrigin {
    /// Donor pixels; `None` for the person's own garments.
    pub fn resolve(&self) -> ApiResult<Option<Pixels>> {
        Ok(Some(match self {
            GarmentOrigin::Person => return Ok(None),
            GarmentOrigin::Toy { spec } => toy_pixels(spec)?,
            GarmentOrigin::ToySeed { seed } => toy_pixels(&PaperDollSpec::random(*seed))?,
            GarmentOrigin::Upload {
                image_png,
                seg_png,
                keypoints,
            } => decode_upload(image_png, seg_png, keypoints.as_ref())?,
        }))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GarmentOrigin::Person => "person",
            GarmentOrigin::Toy { .. } => "toy",
            GarmentOrigin::ToySeed { .. } => "toy_seed",
            GarmentOrigin::Upload { .. } => "upload",
        }
    }
}

pub fn check_label(field: &str, label: u8) -> ApiResult<()> {
    if label == 0 || label as usize >= NUM_LABELS {
        return Err(ApiError::validation(
            field,
            format!("garment labels are 1..{}, got {label}", NUM_LABELS - 1),
        ));
    }
    Ok(())
}

/// Persisted metadata; tensors live in a separate blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub id: String,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    /// Checkpoint the encoded features and render cache belong to.
    pub checkpoint_id: String,
    pub person: PersonSource,
    pub garments: Vec<GarmentEntry>,
    pub tweaks: Vec<Tweak>,
    pub dirty: bool,
}

/// A live session: metadata, encoded person and render cache.
#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub record: SessionRecord,
    pub keypoints: Keypoints,
    pub person: PersonRepresentation<f32>,
    pub render: Option<Vec<u8>>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn encode_entry(
    model: &Model32,
    kps: &Keypoints,
    own_segments: &[GarmentFeature<f32>],
    entry: &GarmentEntry,
) -> ApiResult<GarmentFeature<f32>> {
    match entry.origin.resolve()? {
        None => Ok(own_segments[entry.label as usize].clone()),
        Some(donor) => Ok(model.encode_garment(donor.input(kps), entry.label, kps)?),
    }
}

/// Encodes the person and every garment entry with `model`.
pub fn encode_all(
    model: &Model32,
    source: &PersonSource,
    entries: &[GarmentEntry],
) -> ApiResult<(Keypoints, PersonRepresentation<f32>)> {
    let (px, kps) = source.resolve().map_err(|e| e.under("person"))?;
    let enc = model.encode_person(px.input(&kps), &kps, &[])?;
    let mut person = enc.person;
    for (i, entry) in entries.iter().enumerate() {
        let g = encode_entry(model, &kps, &enc.segments, entry)
            .map_err(|e| e.under(&format!("garments[{i}]")))?;
        person.garments.push(g);
    }
    Ok((kps, person))
}

impl Session {
    /// New session wearing the person's own garments in `order` (labels).
    pub fn create(
        model: &Model32,
        checkpoint_id: &str,
        id: String,
        source: PersonSource,
        order: Option<Vec<u8>>,
    ) -> ApiResult<Session> {
        let order = order.unwrap_or_else(|| DEFAULT_ORDER.to_vec());
        for (i, &l) in order.iter().enumerate() {
            check_label(&format!("order[{i}]"), l)?;
        }
        let garments: Vec<GarmentEntry> = order
            .iter()
            .map(|&label| GarmentEntry {
                label,
                origin: GarmentOrigin::Person,
            })
            .collect();
        let (keypoints, person) = encode_all(model, &source, &garments)?;
        let now = now_ms();
        Ok(Session {
            record: SessionRecord {
                schema_version: SCHEMA_VERSION,
                id,
                created_at_ms: now,
                updated_at_ms: now,
                checkpoint_id: checkpoint_id.to_string(),
                person: source,
                garments,
                tweaks: Vec::new(),
                dirty: true,
            },
            keypoints,
            person,
            render: None,
        })
    }

    /// Rebuilds the encoded state from the record's sources.
    pub fn reencode(
        model: &Model32,
        checkpoint_id: &str,
        mut record: SessionRecord,
    ) -> ApiResult<Session> {
        let (keypoints, person) = encode_all(model, &record.person, &record.garments)?;
        record.checkpoint_id = checkpoint_id.to_string();
        record.dirty = true;
        Ok(Session {
            record,
            keypoints,
            person,
            render: None,
        })
    }

    fn touch(&mut self) {
        self.record.dirty = true;
        self.record.updated_at_ms = now_ms().max(self.record.updated_at_ms);
    }

    pub fn add_garment(
        &mut self,
        model: &Model32,
        origin: GarmentOrigin,
        label: u8,
        position: Option<usize>,
    ) -> ApiResult<()> {
        check_label("label", label)?;
        let len = self.record.garments.len();
        let position = position.unwrap_or(len);
        if position > len {
            return Err(ApiError::validation(
                "position",
                format!("must lie in 0..={len}, got {position}"),
            ));
        }
        let entry = GarmentEntry { label, origin };
        let feature = match entry.origin.resolve().map_err(|e| e.under("source"))? {
            None => {
                let (px, kps) = self.record.person.resolve()?;
                model
                    .encode_person(px.input(&kps), &kps, &[label])?
                    .person
                    .garments
                    .remove(0)
            }
            Some(donor) => {
                model.encode_garment(donor.input(&self.keypoints), label, &self.keypoints)?
            }
        };
        self.record.garments.insert(position, entry);
        self.person.garments.insert(position, feature);
        self.shift_tweak_targets(|i| if i >= position { i + 1 } else { i });
        self.touch();
        Ok(())
    }

    /// Applies `permutation`, where new position `i` holds old garment `permutation[i]`.
    /// Tweaks follow their garments.
    pub fn reorder(&mut self, permutation: &[usize]) -> ApiResult<()> {
        let n = self.record.garments.len();
        let mut seen = vec![false; n];
        let bijective = permutation.len() == n
            && permutation
                .iter()
                .all(|&i| i < n && !std::mem::replace(&mut seen[i], true));
        if !bijective {
            return Err(ApiError::validation(
                "permutation",
                format!("{permutation:?} is not a permutation of 0..{n}"),
            ));
        }
        if permutation.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(());
        }
        let mut new_pos = vec![0; n];
        for (new, &old) in permutation.iter().enumerate() {
            new_pos[old] = new;
        }
        self.record.garments = permutation
            .iter()
            .map(|&i| self.record.garments[i].clone())
            .collect();
        self.person.garments = permutation
            .iter()
            .map(|&i| self.person.garments[i].clone())
            .collect();
        self.shift_tweak_targets(|i| new_pos[i]);
        self.touch();
        Ok(())
    }

    fn shift_tweak_targets(&mut self, f: impl Fn(usize) -> usize) {
        for t in &mut self.record.tweaks {
            t.target_garment = f(t.target_garment);
        }
    }

    /// Appends `tweak`, or with `replace` swaps out the last tweak of the same kind on the
    /// same garment. The full tweak list is dry-run so errors surface here, not at render.
    pub fn push_tweak(
        &mut self,
        model: &Model32,
        directions: &BTreeMap<String, AttributeDirection>,
        tweak: Tweak,
        replace: bool,
    ) -> ApiResult<()> {
        tweak.validate()?;
        let mut tweaks = self.record.tweaks.clone();
        let same = tweaks
            .iter()
            .rposition(|t| t.kind == tweak.kind && t.target_garment == tweak.target_garment);
        match same {
            Some(i) if replace => tweaks[i] = tweak,
            _ => tweaks.push(tweak),
        }
        tweak_person(model, &self.person, &self.keypoints, &tweaks, directions)?;
        self.record.tweaks = tweaks;
        self.touch();
        Ok(())
    }

    pub fn pop_tweak(&mut self) -> ApiResult<Tweak> {
        let t =
            self.record.tweaks.pop().ok_or_else(|| {
                ApiError::validation("tweaks", "the session has no tweaks to remove")
            })?;
        self.touch();
        Ok(t)
    }

    /// Renders the session, serving the cache when clean. Returns the PNG and whether it
    /// came from the cache.
    pub fn render(
        &mut self,
        model: &Model32,
        directions: &BTreeMap<String, AttributeDirection>,
    ) -> ApiResult<(Vec<u8>, bool)> {
        if let (false, Some(png)) = (self.record.dirty, &self.render) {
            return Ok((png.clone(), true));
        }
        let png = render_png(
            model,
            &self.person,
            &self.keypoints,
            &self.record.tweaks,
            directions,
        )?;
        self.render = Some(png.clone());
        self.record.dirty = false;
        Ok((png, false))
    }

    /// Masked donor (or person) pixels of garment `index`, as PNG.
    pub fn thumbnail(&self, index: usize) -> ApiResult<Vec<u8>> {
        let entry = self
            .record
            .garments
            .get(index)
            .ok_or_else(|| ApiError::validation("index", format!("no garment {index}")))?;
        let px = match entry.origin.resolve()? {
            Some(px) => px,
            None => self.record.person.resolve()?.0,
        };
        let seg = extract_segment::<f32>(&px.image, &px.seg, entry.label)?;
        Ok(RgbImage::from_tensor(&seg.masked_image, 0).encode_png()?)
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.record.id.clone(),
            created_at_ms: self.record.created_at_ms,
            updated_at_ms: self.record.updated_at_ms,
            checkpoint_id: self.record.checkpoint_id.clone(),
            keypoints: self.keypoints.to_json(),
            garments: self
                .record
                .garments
                .iter()
                .enumerate()
                .map(|(index, g)| GarmentView {
                    index,
                    label: g.label,
                    label_name: LABEL_NAMES[g.label as usize].to_string(),
                    origin: g.origin.kind().to_string(),
                })
                .collect(),
            tweaks: self.record.tweaks.clone(),
            dirty: self.record.dirty,
            skin_fallback: self.person.body.skin_fallback,
        }
    }
}

/// `apply_tweaks` then PNG encoding; a pure function of the model and session state.
pub fn render_png(
    model: &Model32,
    person: &PersonRepresentation<f32>,
    keypoints: &Keypoints,
    tweaks: &[Tweak],
    directions: &BTreeMap<String, AttributeDirection>,
) -> ApiResult<Vec<u8>> {
    let edited = tweak_person(model, person, keypoints, tweaks, directions)?;
    let image = model.try_on(&edited)?;
    Ok(RgbImage::from_tensor(&image, 0).encode_png()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentView {
    pub index: usize,
    pub label: u8,
    pub label_name: String,
    pub origin: String,
}

/// Body of `GET /sessions/{id}` and of every mutating response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    pub checkpoint_id: String,
    pub keypoints: serde_json::Value,
    pub garments: Vec<GarmentView>,
    pub tweaks: Vec<Tweak>,
    pub dirty: bool,
    pub skin_fallback: bool,
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        if self.0.len() < n {
            return None;
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Some(a)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Option<Tensor<f32>> {
        let rank = self.u32()? as usize;
        if rank > 8 {
            return None;
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Option<_>>()?;
        let n: usize = shape.iter().product();
        let bytes = self.take(n.checked_mul(4)?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_vec(&shape, data).ok()
    }
}

/// Lossless little-endian dump of an encoded person.
pub fn person_to_blob(p: &PersonRepresentation<f32>) -> Vec<u8> {
    let mut out = BLOB_MAGIC.to_vec();
    out.extend_from_slice(&BLOB_VERSION.to_le_bytes());
    put_tensor(&mut out, &p.pose);
    put_tensor(&mut out, &p.body.texture);
    put_tensor(&mut out, &p.body.foreground_mask);
    out.push(p.body.skin_fallback as u8);
    out.extend_from_slice(&(p.garments.len() as u32).to_le_bytes());
    for g in &p.garments {
        out.push(g.source_label);
        put_tensor(&mut out, &g.texture);
        put_tensor(&mut out, &g.shape_mask);
        put_tensor(&mut out, &g.flow);
    }
    out
}

/// `None` when the blob is malformed or from another blob version.
pub fn person_from_blob(bytes: &[u8]) -> Option<PersonRepresentation<f32>> {
    let mut r = Reader(bytes);
    if r.take(4)? != BLOB_MAGIC || r.u32()? != BLOB_VERSION {
        return None;
    }
    let pose = r.tensor()?;
    let texture = r.tensor()?;
    let foreground_mask = r.tensor()?;
    let skin_fallback = r.take(1)?[0] != 0;
    let n = r.u32()? as usize;
    let mut garments = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let source_label = r.take(1)?[0];
        garments.push(GarmentFeature {
            texture: r.tensor()?,
            shape_mask: r.tensor()?,
            flow: r.tensor()?,
            source_label,
        });
    }
    if !r.0.is_empty() {
        return None;
    }
    Some(PersonRepresentation {
        pose,
        body: BodyTextureMap {
            texture,
            foreground_mask,
            skin_fallback,
        },
        garments,
    })
}
