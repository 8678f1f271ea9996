//! Image, label-map and keypoint containers plus their PNG/JSON codecs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Working resolution of images and label maps.
pub const IMAGE_SIZE: usize = 64;
/// Number of OpenPose body keypoints.
pub const NUM_KEYPOINTS: usize = 18;
/// Segmentation classes: background, skin, hair, top, bottom.
pub const NUM_LABELS: usize = 5;

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_SKIN: u8 = 1;
pub const LABEL_HAIR: u8 = 2;
pub const LABEL_TOP: u8 = 3;
pub const LABEL_BOTTOM: u8 = 4;

/// Planar RGB image with values in `[0, 1]`, stored as a `3 x H x W` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_planar(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::shape(format!(
                "RGB {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[(c * self.height + y) * self.width + x] = v;
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn planar(&self) -> &[f32] {
        &self.data
    }

    /// `1 x 3 x H x W` network input.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        Tensor::from_fn(&[1, 3, self.height, self.width], |i| {
            S::from_f32(self.data[i]).unwrap()
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor) for item `n` of a batch; values are clamped to `[0, 1]`.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>, n: usize) -> Self {
        let (_, c, h, w) = t.dims4();
        assert_eq!(c, 3, "RGB tensor expected");
        let item = t.batch_item(n);
        RgbImage {
            width: w,
            height: h,
            data: item
                .data()
                .iter()
                .map(|v| v.to_f32().unwrap().clamp(0.0, 1.0))
                .collect(),
        }
    }

    /// 8-bit interleaved RGB, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.push((self.get(c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width * height {
            return Err(Error::Format("RGB8 buffer has the wrong length".into()));
        }
        let mut img = RgbImage::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let i = 3 * (y * width + x);
                img.set_pixel(
                    y,
                    x,
                    [
                        bytes[i] as f32 / 255.0,
                        bytes[i + 1] as f32 / 255.0,
                        bytes[i + 2] as f32 / 255.0,
                    ],
                );
            }
        }
        Ok(img)
    }

    /// Rounds every value onto the 8-bit grid (what a PNG round trip yields).
    pub fn quantized(&self) -> Self {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
                .collect(),
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(
            self.width,
            self.height,
            png::ColorType::Rgb,
            &self.to_rgb8(),
        )
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, color, buf) = decode_png(bytes)?;
        match color {
            png::ColorType::Rgb => Self::from_rgb8(w, h, &buf),
            png::ColorType::Rgba => {
                let rgb: Vec<u8> = buf
                    .chunks_exact(4)
                    .flat_map(|p| [p[0], p[1], p[2]])
                    .collect();
                Self::from_rgb8(w, h, &rgb)
            }
            png::ColorType::Grayscale => {
                let rgb: Vec<u8> = buf.iter().flat_map(|&v| [v, v, v]).collect();
                Self::from_rgb8(w, h, &rgb)
            }
            other => Err(Error::Format(format!(
                "unsupported PNG color type {other:?}"
            ))),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode_png()?)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Self::decode_png(&read_file(path)?)
    }
}

/// Single-channel map of segmentation labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(format!(
                "label map {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Majority label of each `factor x factor` block; ties resolve to the smaller label.
    pub fn downsample_majority(&self, factor: usize) -> LabelMap {
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = LabelMap::new(w, h);
        for by in 0..h {
            for bx in 0..w {
                let mut counts = [0usize; 256];
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        counts[self.get(y, x) as usize] += 1;
                    }
                }
                let best = (0..256)
                    .max_by_key(|&l| (counts[l], std::cmp::Reverse(l)))
                    .unwrap();
                out.set(by, bx, best as u8);
            }
        }
        out
    }

    /// Binary mask of one label as `1 x 1 x H x W`.
    pub fn mask_tensor<S: Scalar>(&self, label: u8) -> Tensor<S> {
        Tensor::from_fn(&[1, 1, self.height, self.width], |i| {
            if self.labels[i] == label {
                S::one()
            } else {
                S::zero()
            }
        })
    }

    /// One-hot encoding `1 x NUM_LABELS x H x W`.
    pub fn one_hot<S: Scalar>(&self) -> Tensor<S> {
        let hw = self.width * self.height;
        Tensor::from_fn(&[1, NUM_LABELS, self.height, self.width], |i| {
            let (c, p) = (i / hw, i % hw);
            if self.labels[p] as usize == c {
                S::one()
            } else {
                S::zero()
            }
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(
            self.width,
            self.height,
            png::ColorType::Grayscale,
            &self.labels,
        )
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, color, buf) = decode_png(bytes)?;
        if color != png::ColorType::Grayscale {
            return Err(Error::Format(format!(
                "label PNG must be single-channel, got {color:?}"
            )));
        }
        Self::from_vec(w, h, buf)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode_png()?)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        Self::decode_png(&read_file(path)?)
    }
}

/// One body keypoint in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Keypoint {
    pub x: f32,
    pub y: f32,
    pub visible: bool,
}

/// 18 keypoints in OpenPose order: nose, neck, right shoulder/elbow/wrist, left
/// shoulder/elbow/wrist, right hip/knee/ankle, left hip/knee/ankle, eyes, ears.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Keypoints(pub [Keypoint; NUM_KEYPOINTS]);

pub mod joint {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;

    pub const NAMES: [&str; super::NUM_KEYPOINTS] = [
        "nose",
        "neck",
        "right_shoulder",
        "right_elbow",
        "right_wrist",
        "left_shoulder",
        "left_elbow",
        "left_wrist",
        "right_hip",
        "right_knee",
        "right_ankle",
        "left_hip",
        "left_knee",
        "left_ankle",
        "right_eye",
        "left_eye",
        "right_ear",
        "left_ear",
    ];
}

impl Keypoints {
    pub fn get(&self, i: usize) -> Keypoint {
        self.0[i]
    }

    /// Serialized as a JSON array of 18 `[x, y, v]` triples.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.0
                .iter()
                .map(|k| serde_json::json!([k.x, k.y, if k.visible { 1 } else { 0 }]))
                .collect(),
        )
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let arr = value
            .as_array()
            .ok_or_else(|| Error::validation("keypoints", "expected an array of 18 [x, y, v]"))?;
        if arr.len() != NUM_KEYPOINTS {
            return Err(Error::validation(
                "keypoints",
                format!("expected 18 keypoints, got {}", arr.len()),
            ));
        }
        let mut kps = Keypoints::default();
        for (i, item) in arr.iter().enumerate() {
            let t = item.as_array().filter(|t| t.len() == 3).ok_or_else(|| {
                Error::validation(format!("keypoints[{i}]"), "expected [x, y, v]")
            })?;
            let num = |j: usize| {
                t[j].as_f64().ok_or_else(|| {
                    Error::validation(format!("keypoints[{i}][{j}]"), "expected a number")
                })
            };
            kps.0[i] = Keypoint {
                x: num(0)? as f32,
                y: num(1)? as f32,
                visible: num(2)? > 0.0,
            };
        }
        Ok(kps)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string(&self.to_json())?.as_bytes())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let v: serde_json::Value = serde_json::from_slice(&bytes)
            .map_err(|e| Error::validation("keypoints", e.to_string()))?;
        Self::from_json(&v)
    }

    /// Shifts every visible keypoint by `(dx, dy)` pixels.
    pub fn translated(&self, dx: f32, dy: f32) -> Self {
        let mut out = *self;
        for k in out.0.iter_mut().filter(|k| k.visible) {
            k.x += dx;
            k.y += dy;
        }
        out
    }
}

/// Serde helper so keypoints embed directly in JSON documents.
impl Serialize for Keypoints {
    fn serialize<Se: serde::Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Keypoints {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        Keypoints::from_json(&v).map_err(serde::de::Error::custom)
    }
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
        writer
            .write_image_data(data)
            .map_err(|e| Error::Format(format!("PNG encode: {e}")))?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("PNG decode: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("PNG decode: {e}")))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "only 8-bit PNGs are supported, got {:?}",
            info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        info.color_type,
        buf,
    ))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    BufReader::new(f)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}
