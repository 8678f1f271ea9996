//! Network inputs from raw person data: keypoint heatmaps, garment segments, and adapters
//! for external pose and parser outputs.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{
    read_file, Keypoint, Keypoints, LabelMap, RgbImage, IMAGE_SIZE, NUM_KEYPOINTS, NUM_LABELS,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const HEATMAP_SIGMA: f64 = 1.5;
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.1;

/// Peak-normalized Gaussian bumps, `1 x 18 x 64 x 64`. Each visible keypoint's bump is
/// centered on its rounded pixel; invisible channels are zero.
pub fn make_heatmaps<S: Scalar>(kps: &Keypoints) -> Result<Tensor<S>> {
    let n = IMAGE_SIZE;
    let mut t = Tensor::zeros(&[1, NUM_KEYPOINTS, n, n]);
    let limit = n as f32;
    for (j, k) in kps.0.iter().enumerate() {
        if !k.visible {
            continue;
        }
        if !(k.x >= 0.0 && k.x < limit && k.y >= 0.0 && k.y < limit) {
            return Err(Error::validation(
                format!("keypoints[{j}]"),
                format!("({}, {}) is outside [0, {n})", k.x, k.y),
            ));
        }
        let cx = (k.x.round() as usize).min(n - 1) as f64;
        let cy = (k.y.round() as usize).min(n - 1) as f64;
        let denom = 2.0 * HEATMAP_SIGMA * HEATMAP_SIGMA;
        let plane = &mut t.data_mut()[j * n * n..(j + 1) * n * n];
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                plane[y * n + x] = S::lit((-d2 / denom).exp());
            }
        }
    }
    Ok(t)
}

/// One label's pixels cut out of an image.
#[derive(Clone, Debug, PartialEq)]
pub struct GarmentSegment<S> {
    /// `1 x 1 x H x W`, values in {0, 1}.
    pub mask: Tensor<S>,
    /// `1 x 3 x H x W`, the image times the mask.
    pub masked_image: Tensor<S>,
    pub source_label: u8,
}

pub fn extract_segment<S: Scalar>(
    image: &RgbImage,
    seg: &LabelMap,
    label: u8,
) -> Result<GarmentSegment<S>> {
    if label as usize >= NUM_LABELS {
        return Err(Error::validation(
            "label",
            format!("{label} is outside the label schema 0..{}", NUM_LABELS - 1),
        ));
    }
    if (image.width, image.height) != (seg.width, seg.height) {
        return Err(Error::shape(format!(
            "image is {}x{} but segmentation is {}x{}",
            image.width, image.height, seg.width, seg.height
        )));
    }
    let mask = seg.mask_tensor::<S>(label);
    let hw = seg.width * seg.height;
    let img = image.to_tensor::<S>();
    let masked_image = Tensor::from_fn(img.shape(), |i| img.data()[i] * mask.data()[i % hw]);
    Ok(GarmentSegment {
        mask,
        masked_image,
        source_label: label,
    })
}

impl<S: Scalar> GarmentSegment<S> {
    /// Re-applies the segment's own mask; a no-op for well-formed segments.
    pub fn remasked(&self) -> Self {
        let hw = self.mask.numel();
        GarmentSegment {
            mask: self.mask.clone(),
            masked_image: Tensor::from_fn(self.masked_image.shape(), |i| {
                self.masked_image.data()[i] * self.mask.data()[i % hw]
            }),
            source_label: self.source_label,
        }
    }
}

/// Keypoints from an external pose estimator. Accepted documents:
/// a flat array of 54 numbers; `{"keypoints": [...], "width": w, "height": h}`; or OpenPose
/// `{"people": [{"pose_keypoints_2d": [...]}]}` (first person). Coordinates are rescaled from
/// the source resolution (the document's `width`/`height` when given, else `source_size`)
/// to 64x64; confidence above `threshold` marks a keypoint visible.
pub fn import_external_pose(
    path: &Path,
    source_size: (usize, usize),
    threshold: f64,
) -> Result<Keypoints> {
    let bytes = read_file(path)?;
    let doc: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    parse_external_pose(&doc, source_size, threshold)
}

pub fn parse_external_pose(
    doc: &serde_json::Value,
    source_size: (usize, usize),
    threshold: f64,
) -> Result<Keypoints> {
    let (mut w, mut h) = source_size;
    let flat = if let Some(arr) = doc.as_array() {
        arr
    } else if let Some(people) = doc.get("people").and_then(|p| p.as_array()) {
        people
            .first()
            .and_then(|p| p.get("pose_keypoints_2d"))
            .and_then(|k| k.as_array())
            .ok_or_else(|| Error::Format("no pose_keypoints_2d in first person".into()))?
    } else if let Some(arr) = doc.get("keypoints").and_then(|k| k.as_array()) {
        if let Some(v) = doc.get("width").and_then(|v| v.as_u64()) {
            w = v as usize;
        }
        if let Some(v) = doc.get("height").and_then(|v| v.as_u64()) {
            h = v as usize;
        }
        arr
    } else {
        return Err(Error::Format("unrecognized keypoint document".into()));
    };
    if flat.len() != NUM_KEYPOINTS * 3 {
        return Err(Error::Format(format!(
            "expected {} numbers (18 x [x, y, confidence]), got {}",
            NUM_KEYPOINTS * 3,
            flat.len()
        )));
    }
    if w == 0 || h == 0 {
        return Err(Error::validation("source_size", "must be positive"));
    }
    let nums: Vec<f64> = flat
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_f64()
                .ok_or_else(|| Error::Format(format!("entry {i} is not a number")))
        })
        .collect::<Result<_>>()?;
    let (sx, sy) = (IMAGE_SIZE as f64 / w as f64, IMAGE_SIZE as f64 / h as f64);
    let mut kps = Keypoints::default();
    for j in 0..NUM_KEYPOINTS {
        let (x, y, c) = (nums[3 * j], nums[3 * j + 1], nums[3 * j + 2]);
        kps.0[j] = Keypoint {
            x: (x * sx) as f32,
            y: (y * sy) as f32,
            visible: c > threshold,
        };
    }
    Ok(kps)
}

/// External label id to schema label, read from a JSON object of string-int pairs.
pub fn parse_label_map(doc: &serde_json::Value) -> Result<BTreeMap<u32, u8>> {
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::Format("label map must be a JSON object".into()))?;
    let mut map = BTreeMap::new();
    for (k, v) in obj {
        let from: u32 = k
            .parse()
            .map_err(|_| Error::Format(format!("label map key {k:?} is not an integer")))?;
        let to = v
            .as_u64()
            .filter(|&t| (t as usize) < NUM_LABELS)
            .ok_or_else(|| Error::Format(format!("label map value for {k} must be in 0..4")))?;
        map.insert(from, to as u8);
    }
    Ok(map)
}

/// Remaps an external single-channel label PNG and resizes it to 64x64 by nearest neighbor
/// (output pixel `(y, x)` reads source pixel `(y*H/64, x*W/64)`).
pub fn import_external_parse(path: &Path, label_map: &BTreeMap<u32, u8>) -> Result<LabelMap> {
    let src = LabelMap::load_png(path)?;
    remap_parse(&src, label_map)
}

pub fn remap_parse(src: &LabelMap, label_map: &BTreeMap<u32, u8>) -> Result<LabelMap> {
    let n = IMAGE_SIZE;
    let mut out = LabelMap::new(n, n);
    for y in 0..n {
        for x in 0..n {
            let id = src.get(y * src.height / n, x * src.width / n) as u32;
            let to = label_map
                .get(&id)
                .ok_or_else(|| Error::Format(format!("unmapped label id {id}")))?;
            out.set(y, x, *to);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_peak_and_neighbor() {
        let mut kps = Keypoints::default();
        kps.0[3] = Keypoint {
            x: 8.0,
            y: 8.0,
            visible: true,
        };
        let t = make_heatmaps::<f64>(&kps).unwrap();
        assert_eq!(t.at4(0, 3, 8, 8), 1.0);
        assert!((t.at4(0, 3, 8, 9) - (-1.0f64 / 4.5).exp()).abs() < 1e-12);
        assert!((t.at4(0, 3, 8, 9) - 0.8007).abs() < 1e-4);
    }

    #[test]
    fn visible_out_of_range_is_rejected() {
        let mut kps = Keypoints::default();
        kps.0[0] = Keypoint {
            x: 64.0,
            y: 1.0,
            visible: true,
        };
        assert!(make_heatmaps::<f32>(&kps).unwrap_err().is_validation());
    }
}
