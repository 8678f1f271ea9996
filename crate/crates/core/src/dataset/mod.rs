//! Procedurally generated paper-doll persons with exact keypoints and segmentation.

mod doll;

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use doll::{
    pose, render_person, render_person_shifted, segment_distance, DollGeometry, GarmentAttrs,
    HairStyle, Layer, Paint, PaperDollSpec, Pattern, Sample, Shape, Vec2, ARM_RADIUS, FOREARM,
    FOREARM_RADIUS, HEAD_RADIUS, SHIN, SHIN_RADIUS, SLEEVE_RADIUS, THIGH, THIGH_RADIUS, UPPER_ARM,
};

use crate::error::{Error, Result};
use crate::image::{read_file, write_file, Keypoints, LabelMap, RgbImage};
use crate::nn::seeded_rng;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Minimum number of analytic joints that must move between the two poses of a pair.
pub const MIN_MOVED_JOINTS: usize = 4;
/// Displacement (pixels) a joint needs to count as moved.
pub const MOVED_PX: f32 = 2.0;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Number of the 14 analytic joints displaced by more than [`MOVED_PX`].
pub fn moved_joints(a: &Keypoints, b: &Keypoints) -> usize {
    a.0.iter()
        .zip(&b.0)
        .filter(|(p, q)| p.visible && q.visible)
        .filter(|(p, q)| ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt() > MOVED_PX)
        .count()
}

/// Same identity in two poses. The target pose is a bounded perturbation of the source;
/// draws are repeated until enough joints move.
pub fn sample_pose_pair(seed: u64) -> (Sample, Sample) {
    let spec = PaperDollSpec::random(seed);
    let source = render_person(&spec).expect("random specs are valid");
    let mut rng = seeded_rng(seed, 0x7a26);
    loop {
        let mut target_pose = spec.pose_params;
        for p in &mut target_pose {
            *p = (*p + rng.random_range(-0.7..=0.7)).clamp(-1.0, 1.0);
        }
        let target_spec = spec.with_pose(target_pose).expect("clamped pose");
        let target = render_person(&target_spec).expect("random specs are valid");
        if moved_joints(&source.keypoints, &target.keypoints) >= MIN_MOVED_JOINTS {
            return (source, target);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(
                "split",
                format!("expected train, val or test, got {other}"),
            )),
        }
    }
}

/// Files of one sample, relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub image: String,
    pub seg: String,
    pub keypoints: String,
    pub spec: PaperDollSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub pair_seed: u64,
    pub split: Split,
    pub source: SampleFiles,
    pub target: SampleFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub count: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Hex SHA-256 of the serialized manifest.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    /// Reads `manifest.json` from a dataset directory (or the file itself).
    pub fn load(path: &Path) -> Result<Self> {
        let file = manifest_path(path);
        let bytes = read_file(&file)?;
        let m: DatasetManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", file.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest schema version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Dataset root for a manifest path given as either the directory or the file.
pub fn dataset_root(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

impl SampleFiles {
    /// Loads the sample back from disk (image values are 8-bit quantized).
    pub fn load(&self, root: &Path) -> Result<Sample> {
        Ok(Sample {
            image: RgbImage::load_png(&root.join(&self.image))?,
            seg: LabelMap::load_png(&root.join(&self.seg))?,
            keypoints: Keypoints::load_json(&root.join(&self.keypoints))?,
            attrs: self.spec.clone(),
        })
    }
}

impl ManifestEntry {
    pub fn load(&self, root: &Path) -> Result<(Sample, Sample)> {
        Ok((self.source.load(root)?, self.target.load(root)?))
    }
}

/// Split sizes for `count` entries: 10% val and 10% test (rounded), the rest train.
pub fn split_counts(count: usize) -> (usize, usize, usize) {
    let val = (count as f64 * 0.1).round() as usize;
    let test = (count as f64 * 0.1).round() as usize;
    (count - val - test, val, test)
}

fn write_sample(root: &Path, stem: &str, sample: &Sample) -> Result<SampleFiles> {
    let files = SampleFiles {
        image: format!("samples/{stem}.png"),
        seg: format!("samples/{stem}_seg.png"),
        keypoints: format!("samples/{stem}_kp.json"),
        spec: sample.attrs.clone(),
    };
    sample.image.save_png(&root.join(&files.image))?;
    sample.seg.save_png(&root.join(&files.seg))?;
    sample.keypoints.save_json(&root.join(&files.keypoints))?;
    Ok(files)
}

/// Writes `count` pose pairs under `out` plus `manifest.json`. Entries are ranked by a
/// seed-derived hash and the ranking is cut 80/10/10 into train/val/test.
pub fn build_dataset(count: usize, seed: u64, out: &Path) -> Result<DatasetManifest> {
    if count == 0 {
        return Err(Error::validation("count", "must be at least 1"));
    }
    let pair_seeds: Vec<u64> = (0..count as u64).map(|i| mix64(seed ^ mix64(i))).collect();
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&i| (mix64(pair_seeds[i] ^ 0x5b11_7000), i));
    let (train, val, _) = split_counts(count);
    let mut splits = vec![Split::Test; count];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let mut entries = Vec::with_capacity(count);
    for (i, &pair_seed) in pair_seeds.iter().enumerate() {
        let (src, tgt) = sample_pose_pair(pair_seed);
        entries.push(ManifestEntry {
            id: i,
            pair_seed,
            split: splits[i],
            source: write_sample(out, &format!("{i:05}_src"), &src)?,
            target: write_sample(out, &format!("{i:05}_tgt"), &tgt)?,
        });
    }
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        count,
        seed,
        entries,
    };
    write_file(&out.join(MANIFEST_FILE), manifest.to_json().as_bytes())?;
    Ok(manifest)
}
