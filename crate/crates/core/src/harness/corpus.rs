//! Versioned oracle-case corpus: `index.json` plus one raw little-endian f64 file per tensor.
//! Every case is produced by the loop oracles from a fixed seed, never typed by hand.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::oracle::{self, Grid};
use crate::error::{Error, Result};
use crate::image::{read_file, write_file};
use crate::nn::seeded_rng;

pub const CORPUS_VERSION: u32 = 1;
pub const CORPUS_SEED: u64 = 20_240_601;
pub const CASES_PER_KIND: usize = 20;
const INDEX: &str = "index.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    Eq1,
    Eq2,
    Warp,
    Ssim,
    Siou,
    Xent,
    Losssum,
}

pub const KINDS: [OracleKind; 7] = [
    OracleKind::Eq1,
    OracleKind::Eq2,
    OracleKind::Warp,
    OracleKind::Ssim,
    OracleKind::Siou,
    OracleKind::Xent,
    OracleKind::Losssum,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    Paper,
    Trivial,
    Derived,
}

/// A named array with its shape; stored as a raw f64 file next to the index.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Array {
            shape: shape.to_vec(),
            data,
        }
    }

    fn of_grid(g: &Grid) -> Self {
        Array::new(&[g.c, g.h, g.w], g.data.clone())
    }

    /// Reads a `C x H x W` array as a grid.
    pub fn grid(&self) -> Result<Grid> {
        match self.shape.as_slice() {
            [c, h, w] => Grid::new(*c, *h, *w, self.data.clone()),
            s => Err(Error::shape(format!("expected C x H x W, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleCase {
    pub name: String,
    pub kind: OracleKind,
    pub inputs: Vec<Array>,
    pub expected: Array,
    pub tolerance: f64,
    pub provenance: Provenance,
    pub note: String,
}

#[derive(Serialize, Deserialize)]
struct ArrayRef {
    file: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CaseEntry {
    name: String,
    kind: OracleKind,
    inputs: Vec<ArrayRef>,
    expected: ArrayRef,
    tolerance: f64,
    provenance: Provenance,
    note: String,
}

#[derive(Serialize, Deserialize)]
struct Index {
    version: u32,
    seed: u64,
    cases: Vec<CaseEntry>,
}

/// Comparison tolerance per kind.
pub fn tolerance(kind: OracleKind) -> f64 {
    match kind {
        OracleKind::Ssim => 1e-5,
        OracleKind::Siou => 0.0,
        _ => 1e-6,
    }
}

fn random_grid(rng: &mut impl Rng, c: usize, h: usize, w: usize, lo: f64, hi: f64) -> Grid {
    Grid::new(
        c,
        h,
        w,
        (0..c * h * w).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("sized")
}

fn stack_masks(masks: &[Grid]) -> Array {
    let (h, w) = (masks[0].h, masks[0].w);
    Array::new(
        &[masks.len(), h, w],
        masks.iter().flat_map(|m| m.data.clone()).collect(),
    )
}

/// Splits a `K x H x W` array into `K` single-channel grids.
pub fn unstack(a: &Array) -> Result<Vec<Grid>> {
    let g = a.grid()?;
    let hw = g.h * g.w;
    (0..g.c)
        .map(|k| Grid::new(1, g.h, g.w, g.data[k * hw..(k + 1) * hw].to_vec()))
        .collect()
}

fn random_case(kind: OracleKind, i: usize, rng: &mut impl Rng) -> Result<OracleCase> {
    let c = rng.random_range(1..=oracle::MAX_CHANNELS);
    let h = rng.random_range(1..=oracle::MAX_SIDE);
    let w = rng.random_range(1..=oracle::MAX_SIDE);
    let (inputs, expected) = match kind {
        OracleKind::Eq1 => {
            let skin = random_grid(rng, c, h, w, -1.0, 1.0);
            let skin_m = random_grid(rng, 1, h, w, 0.0, 1.0);
            let bg = random_grid(rng, c, h, w, -1.0, 1.0);
            let k = rng.random_range(1..=4);
            let fg: Vec<Grid> = (0..k)
                .map(|_| random_grid(rng, 1, h, w, 0.0, 1.0))
                .collect();
            let out = oracle::eq1(&skin, &skin_m, &bg, &fg)?;
            (
                vec![
                    Array::of_grid(&skin),
                    Array::of_grid(&skin_m),
                    Array::of_grid(&bg),
                    stack_masks(&fg),
                ],
                Array::of_grid(&out),
            )
        }
        OracleKind::Eq2 => {
            let z = random_grid(rng, c, h, w, -2.0, 2.0);
            let phi = random_grid(rng, c, h, w, -2.0, 2.0);
            let m = random_grid(rng, 1, h, w, 0.0, 1.0);
            let out = oracle::eq2(&z, &phi, &m)?;
            (
                vec![Array::of_grid(&z), Array::of_grid(&phi), Array::of_grid(&m)],
                Array::of_grid(&out),
            )
        }
        OracleKind::Warp => {
            let f = random_grid(rng, c, h, w, -1.0, 1.0);
            let flow = random_grid(rng, 2, h, w, -3.0, 3.0);
            let out = oracle::warp(&f, &flow)?;
            (
                vec![Array::of_grid(&f), Array::of_grid(&flow)],
                Array::of_grid(&out),
            )
        }
        OracleKind::Ssim => {
            let a = random_grid(rng, c, h, w, 0.0, 1.0);
            let b = if i % 2 == 0 {
                random_grid(rng, c, h, w, 0.0, 1.0)
            } else {
                let noise = random_grid(rng, c, h, w, -0.1, 0.1);
                Grid::new(
                    c,
                    h,
                    w,
                    a.data
                        .iter()
                        .zip(&noise.data)
                        .map(|(x, n)| (x + n).clamp(0.0, 1.0))
                        .collect(),
                )?
            };
            let v = oracle::ssim(&a, &b)?;
            (
                vec![Array::of_grid(&a), Array::of_grid(&b)],
                Array::new(&[1], vec![v]),
            )
        }
        OracleKind::Siou => {
            let labels = |rng: &mut dyn rand::RngCore| -> Vec<u8> {
                (0..h * w).map(|_| rng.random_range(0..5u8)).collect()
            };
            let p = labels(rng);
            let t = labels(rng);
            let v = oracle::siou(&p, &t, &[0, 1, 2, 3, 4])?;
            let f = |l: &[u8]| Array::new(&[1, h, w], l.iter().map(|&x| x as f64).collect());
            (vec![f(&p), f(&t)], Array::new(&[5], v))
        }
        OracleKind::Xent => {
            let logits = random_grid(rng, 5, h, w, -4.0, 4.0);
            let labels: Vec<usize> = (0..h * w).map(|_| rng.random_range(0..5)).collect();
            let rows: Vec<Vec<f64>> = (0..5)
                .map(|k| logits.data[k * h * w..(k + 1) * h * w].to_vec())
                .collect();
            let v = oracle::xent(&rows, &labels)?;
            (
                vec![
                    Array::of_grid(&logits),
                    Array::new(&[1, h, w], labels.iter().map(|&l| l as f64).collect()),
                ],
                Array::new(&[1], vec![v]),
            )
        }
        OracleKind::Losssum => {
            let parts: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..5.0));
            let lg = rng.random_range(0.0..2.0);
            let ls = rng.random_range(0.0..2.0);
            let v = oracle::losssum(parts, lg, ls);
            (
                vec![
                    Array::new(&[4], parts.to_vec()),
                    Array::new(&[2], vec![lg, ls]),
                ],
                Array::new(&[1], vec![v]),
            )
        }
    };
    Ok(OracleCase {
        name: format!("{}_{i:03}", kind_name(kind)),
        kind,
        inputs,
        expected,
        tolerance: tolerance(kind),
        provenance: Provenance::Derived,
        note: "random case evaluated by the loop oracle".into(),
    })
}

fn kind_name(kind: OracleKind) -> &'static str {
    match kind {
        OracleKind::Eq1 => "eq1",
        OracleKind::Eq2 => "eq2",
        OracleKind::Warp => "warp",
        OracleKind::Ssim => "ssim",
        OracleKind::Siou => "siou",
        OracleKind::Xent => "xent",
        OracleKind::Losssum => "losssum",
    }
}

/// Fixed worked cases that anchor the random ones.
fn anchor_cases() -> Result<Vec<OracleCase>> {
    let scalar = |v: f64| Grid::new(1, 1, 1, vec![v]).expect("sized");
    let eq2 = oracle::eq2(&scalar(1.0), &scalar(2.0), &scalar(0.25))?;

    let skin = Grid::new(1, 2, 2, vec![0.2, 9.0, -4.0, 0.8])?;
    let skin_m = Grid::new(1, 2, 2, vec![0.9, 0.1, 0.5, 0.7])?;
    let bg = Grid::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4])?;
    let fg = Grid::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0])?;
    let eq1 = oracle::eq1(&skin, &skin_m, &bg, std::slice::from_ref(&fg))?;

    let same = Grid::new(
        3,
        4,
        4,
        (0..48).map(|i| (i as f64 * 0.37).sin().abs()).collect(),
    )?;
    let ssim = oracle::ssim(&same, &same)?;

    let rect = |x0: usize| {
        Array::new(
            &[1, 8, 8],
            (0..64)
                .map(|p| {
                    let (y, x) = (p / 8, p % 8);
                    if (2..4).contains(&y) && (x0..x0 + 4).contains(&x) {
                        3.0
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
    };
    let (ra, rb) = (rect(1), rect(3));
    let to_u8 = |a: &Array| a.data.iter().map(|&v| v as u8).collect::<Vec<_>>();
    let siou = oracle::siou(&to_u8(&ra), &to_u8(&rb), &[0, 1, 2, 3, 4])?;

    Ok(vec![
        OracleCase {
            name: "eq2_scalar".into(),
            kind: OracleKind::Eq2,
            inputs: vec![
                Array::of_grid(&scalar(1.0)),
                Array::of_grid(&scalar(2.0)),
                Array::of_grid(&scalar(0.25)),
            ],
            expected: Array::of_grid(&eq2),
            tolerance: 0.0,
            provenance: Provenance::Derived,
            note: "M 0.25, generator output 2.0, previous state 1.0 gives 1.25".into(),
        },
        OracleCase {
            name: "eq1_worked_2x2".into(),
            kind: OracleKind::Eq1,
            inputs: vec![
                Array::of_grid(&skin),
                Array::of_grid(&skin_m),
                Array::of_grid(&bg),
                Array::of_grid(&fg),
            ],
            expected: Array::of_grid(&eq1),
            tolerance: 1e-9,
            provenance: Provenance::Derived,
            note: "skin mean 0.5 over the two cells above 0.5".into(),
        },
        OracleCase {
            name: "ssim_identical".into(),
            kind: OracleKind::Ssim,
            inputs: vec![Array::of_grid(&same), Array::of_grid(&same)],
            expected: Array::new(&[1], vec![ssim]),
            tolerance: 1e-9,
            provenance: Provenance::Trivial,
            note: "self-similarity is 1".into(),
        },
        OracleCase {
            name: "siou_rectangles".into(),
            kind: OracleKind::Siou,
            inputs: vec![ra, rb],
            expected: Array::new(&[5], siou),
            tolerance: 0.0,
            provenance: Provenance::Derived,
            note: "two 2x4 rectangles sharing 2x2 give 1/3 for label 3".into(),
        },
    ])
}

/// `per_kind` random cases of every kind from `seed`.
pub fn random_cases(seed: u64, per_kind: usize) -> Result<Vec<OracleCase>> {
    let mut cases = Vec::with_capacity(per_kind * KINDS.len());
    for (k, &kind) in KINDS.iter().enumerate() {
        let mut rng = seeded_rng(seed, k as u64);
        for i in 0..per_kind {
            cases.push(random_case(kind, i, &mut rng)?);
        }
    }
    Ok(cases)
}

/// Builds the committed corpus from `seed`: the worked anchors plus random cases.
pub fn generate_cases(seed: u64) -> Result<Vec<OracleCase>> {
    let mut cases = anchor_cases()?;
    cases.extend(random_cases(seed, CASES_PER_KIND)?);
    Ok(cases)
}

fn f64_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `cases` under `dir` (index plus raw tensors), replacing any previous corpus files.
pub fn write_corpus(dir: &Path, seed: u64, cases: &[OracleCase]) -> Result<()> {
    let mut entries = Vec::with_capacity(cases.len());
    let put = |name: &str, a: &Array| -> Result<ArrayRef> {
        let file = format!("{name}.bin");
        write_file(&dir.join(&file), &f64_bytes(&a.data))?;
        Ok(ArrayRef {
            file,
            shape: a.shape.clone(),
        })
    };
    for c in cases {
        let inputs = c
            .inputs
            .iter()
            .enumerate()
            .map(|(i, a)| put(&format!("{}_in{i}", c.name), a))
            .collect::<Result<Vec<_>>>()?;
        let expected = put(&format!("{}_out", c.name), &c.expected)?;
        entries.push(CaseEntry {
            name: c.name.clone(),
            kind: c.kind,
            inputs,
            expected,
            tolerance: c.tolerance,
            provenance: c.provenance,
            note: c.note.clone(),
        });
    }
    let index = Index {
        version: CORPUS_VERSION,
        seed,
        cases: entries,
    };
    write_file(
        &dir.join(INDEX),
        serde_json::to_string_pretty(&index)?.as_bytes(),
    )
}

/// Reads a corpus directory back.
pub fn load_corpus(dir: &Path) -> Result<Vec<OracleCase>> {
    let index: Index = serde_json::from_slice(&read_file(&dir.join(INDEX))?)
        .map_err(|e| Error::Format(format!("{}: {e}", dir.join(INDEX).display())))?;
    if index.version != CORPUS_VERSION {
        return Err(Error::Format(format!(
            "unsupported corpus version {}",
            index.version
        )));
    }
    let get = |r: &ArrayRef| -> Result<Array> {
        let bytes = read_file(&dir.join(&r.file))?;
        let n: usize = r.shape.iter().product();
        if bytes.len() != n * 8 {
            return Err(Error::Format(format!("{}: expected {} values", r.file, n)));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Array::new(&r.shape, data))
    };
    index
        .cases
        .iter()
        .map(|e| {
            Ok(OracleCase {
                name: e.name.clone(),
                kind: e.kind,
                inputs: e.inputs.iter().map(&get).collect::<Result<_>>()?,
                expected: get(&e.expected)?,
                tolerance: e.tolerance,
                provenance: e.provenance,
                note: e.note.clone(),
            })
        })
        .collect()
}
