//! Checkpoint archives: a tar holding `manifest.json` plus one little-endian blob per
//! parameter tensor (and optionally the optimizer moments).

use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::image::{read_file, write_file};
use crate::model::Model;
use crate::nn::Adam;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "dressup-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

/// Trained networks with the config they were trained under and the step count.
#[derive(Clone, Debug)]
pub struct ModelBundle<S> {
    pub model: Model<S>,
    pub config: TrainConfig,
    pub step: u64,
}

impl<S: Scalar> ModelBundle<S> {
    /// Untrained bundle for `config`.
    pub fn untrained(config: TrainConfig) -> Self {
        ModelBundle {
            model: Model::new(config.seed),
            config,
            step: 0,
        }
    }

    /// Content hash of every parameter (names, shapes and bytes); 16 hex digits.
    pub fn checkpoint_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(S::DTYPE.as_bytes());
        for store in self.model.stores() {
            h.update(store.tag().to_le_bytes());
            for (name, t) in store.named_values() {
                h.update(name.as_bytes());
                for d in t.shape() {
                    h.update((*d as u64).to_le_bytes());
                }
                h.update(t.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Loaded checkpoint: the bundle and, when saved, per-store optimizer `(step, m, v)`.
pub struct Checkpoint<S> {
    pub bundle: ModelBundle<S>,
    pub optimizers: Option<Vec<(u64, Vec<Tensor<S>>, Vec<Tensor<S>>)>>,
    pub id: String,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    store: u32,
    name: String,
    #[serde(flatten)]
    tensor: TensorEntry,
}

#[derive(Serialize, Deserialize)]
struct OptimizerEntry {
    store: u32,
    step: u64,
    m: Vec<TensorEntry>,
    v: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    id: String,
    step: u64,
    config: TrainConfig,
    params: Vec<ParamEntry>,
    #[serde(default)]
    optimizers: Option<Vec<OptimizerEntry>>,
}

fn append<W: std::io::Write>(
    tar: &mut tar::Builder<W>,
    name: &str,
    bytes: &[u8],
) -> std::io::Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(0);
    header.set_cksum();
    tar.append_data(&mut header, name, bytes)
}

/// Serializes a checkpoint to bytes. Output is deterministic for equal inputs.
pub fn checkpoint_bytes<S: Scalar>(
    bundle: &ModelBundle<S>,
    optimizers: Option<&[Adam<S>]>,
) -> Result<(Vec<u8>, String)> {
    let id = bundle.checkpoint_id();
    let mut blobs: Vec<(String, Vec<u8>)> = Vec::new();
    let mut params = Vec::new();
    for store in bundle.model.stores() {
        for (name, t) in store.named_values() {
            let file = format!("params/{}/{name}.bin", store.tag());
            blobs.push((file.clone(), t.to_le_bytes()));
            params.push(ParamEntry {
                store: store.tag(),
                name: name.to_string(),
                tensor: TensorEntry {
                    file,
                    shape: t.shape().to_vec(),
                },
            });
        }
    }
    let optimizers = optimizers.map(|opts| {
        bundle
            .model
            .stores()
            .iter()
            .zip(opts)
            .map(|(store, opt)| {
                let (m, v) = opt.moments();
                let mut entries = |kind: &str, ts: &[Tensor<S>]| {
                    ts.iter()
                        .enumerate()
                        .map(|(i, t)| {
                            let file = format!("adam/{}/{kind}/{i}.bin", store.tag());
                            blobs.push((file.clone(), t.to_le_bytes()));
                            TensorEntry {
                                file,
                                shape: t.shape().to_vec(),
                            }
                        })
                        .collect()
                };
                let m = entries("m", m);
                let v = entries("v", v);
                OptimizerEntry {
                    store: store.tag(),
                    step: opt.step,
                    m,
                    v,
                }
            })
            .collect()
    });
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype: S::DTYPE.into(),
        id: id.clone(),
        step: bundle.step,
        config: bundle.config.clone(),
        params,
        optimizers,
    };
    let mut tar = tar::Builder::new(Vec::new());
    let io = |e| Error::Format(format!("writing checkpoint archive: {e}"));
    append(&mut tar, MANIFEST, &serde_json::to_vec_pretty(&manifest)?).map_err(io)?;
    for (name, bytes) in &blobs {
        append(&mut tar, name, bytes).map_err(io)?;
    }
    Ok((tar.into_inner().map_err(io)?, id))
}

/// Writes the archive atomically (temp file then rename). Returns the checkpoint id.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    bundle: &ModelBundle<S>,
    optimizers: Option<&[Adam<S>]>,
) -> Result<String> {
    let (bytes, id) = checkpoint_bytes(bundle, optimizers)?;
    let tmp = path.with_extension("tar.tmp");
    write_file(&tmp, &bytes)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(id)
}

fn decode_tensor<S: Scalar>(dtype: &str, shape: &[usize], bytes: &[u8]) -> Result<Tensor<S>> {
    let n: usize = shape.iter().product();
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Format(format!("unknown dtype {other}"))),
    };
    if bytes.len() != n * width {
        return Err(Error::Format(format!(
            "tensor blob has {} bytes, expected {}",
            bytes.len(),
            n * width
        )));
    }
    if dtype == S::DTYPE {
        return Tensor::from_le_bytes(shape, bytes);
    }
    let data = bytes
        .chunks_exact(width)
        .map(|c| {
            let v = if width == 4 {
                f32::read_le(c) as f64
            } else {
                f64::read_le(c)
            };
            S::lit(v)
        })
        .collect();
    Tensor::from_vec(shape, data)
}

pub fn parse_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<Checkpoint<S>> {
    let mut files = std::collections::HashMap::new();
    let mut archive = tar::Archive::new(Cursor::new(bytes));
    let bad = |e: std::io::Error| Error::Format(format!("reading checkpoint archive: {e}"));
    for entry in archive.entries().map_err(bad)? {
        let mut entry = entry.map_err(bad)?;
        let name = entry.path().map_err(bad)?.to_string_lossy().into_owned();
        let mut buf = Vec::new();
        entry.read_to_end(&mut buf).map_err(bad)?;
        files.insert(name, buf);
    }
    let manifest: Manifest = serde_json::from_slice(
        files
            .get(MANIFEST)
            .ok_or_else(|| Error::Format("checkpoint has no manifest.json".into()))?,
    )
    .map_err(|e| Error::Format(format!("checkpoint manifest: {e}")))?;
    if manifest.format != CHECKPOINT_FORMAT || manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let blob = |t: &TensorEntry| -> Result<Tensor<S>> {
        let bytes = files
            .get(&t.file)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing {}", t.file)))?;
        decode_tensor(&manifest.dtype, &t.shape, bytes)
    };

    let mut model = Model::<S>::new(manifest.config.seed);
    let mut loaded = 0usize;
    {
        let mut stores = model.stores_mut();
        for p in &manifest.params {
            let store = stores
                .iter_mut()
                .find(|s| s.tag() == p.store)
                .ok_or_else(|| Error::Format(format!("unknown parameter store {}", p.store)))?;
            store.load(&p.name, blob(&p.tensor)?)?;
            loaded += 1;
        }
    }
    let expected: usize = model.stores().iter().map(|s| s.len()).sum();
    if loaded != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {loaded} parameters, model has {expected}"
        )));
    }
    let optimizers = match &manifest.optimizers {
        None => None,
        Some(entries) => Some(
            entries
                .iter()
                .map(|o| {
                    let m = o.m.iter().map(&blob).collect::<Result<Vec<_>>>()?;
                    let v = o.v.iter().map(&blob).collect::<Result<Vec<_>>>()?;
                    Ok((o.step, m, v))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let bundle = ModelBundle {
        model,
        config: manifest.config,
        step: manifest.step,
    };
    let id = bundle.checkpoint_id();
    Ok(Checkpoint {
        bundle,
        optimizers,
        id,
    })
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let bytes = read_file(path)?;
    parse_checkpoint(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
