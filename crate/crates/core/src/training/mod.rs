//! End-to-end pose-transfer training: loss assembly, generator/discriminator alternation,
//! checkpoints and the loss log.

pub mod checkpoint;
pub mod losses;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::dataset::{mix64, DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::image::{read_file, write_file, LabelMap, IMAGE_SIZE};
use crate::model::{
    FeatureExtractor, Model, TransferInputs, TransferVars, DEFAULT_ORDER, GEO_LAYER,
};
use crate::nn::{seeded_rng, Adam};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelBundle};
pub use losses::DiscriminatorRole;

/// Adam moment decay rates.
pub const ADAM_BETAS: (f64, f64) = (0.5, 0.999);
pub const LOSS_LOG: &str = "loss.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.tar";
pub const ABORT_REPORT: &str = "abort_report.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_gan: f64,
    pub lambda_seg: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    /// Seeds weight init, the frozen feature extractor and batch sampling.
    pub seed: u64,
    pub checkpoint_every: u64,
    pub dataset_path: PathBuf,
    /// Receives the checkpoint and loss log.
    pub output_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_gan: 1.0,
            lambda_seg: 0.1,
            learning_rate: 2e-4,
            batch_size: 2,
            steps: 2000,
            seed: 0,
            checkpoint_every: 500,
            dataset_path: PathBuf::from("data"),
            output_dir: PathBuf::from("run"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::validation(
                    field,
                    format!("must be a finite value >= 0, got {v}"),
                ))
            }
        };
        nonneg("lambda_gan", self.lambda_gan)?;
        nonneg("lambda_seg", self.lambda_seg)?;
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate", "must be > 0"));
        }
        if self.steps < 1 {
            return Err(Error::validation("steps", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size", "must be >= 1"));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::validation("checkpoint_every", "must be >= 1"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::validation("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML config. A missing file is a validation error naming the path.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::validation(
                "config",
                format!("{}: no such file", path.display()),
            ));
        }
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::validation("config", format!("{}: not UTF-8", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation { field, message } => {
                Error::validation(field, format!("{}: {message}", path.display()))
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Unweighted loss terms of one step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub content: f64,
    pub geo: f64,
    pub gan: f64,
    pub seg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: u64,
    pub content: f64,
    pub geo: f64,
    pub gan: f64,
    pub seg: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,content,geo,gan,seg,total";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.content, self.geo, self.gan, self.seg, self.total
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(Error::Format(format!("loss row needs 6 fields: {line}")));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number {:?} in loss row", f[i])))
        };
        Ok(LossReport {
            step: f[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad step {:?}", f[0])))?,
            content: num(1)?,
            geo: num(2)?,
            gan: num(3)?,
            seg: num(4)?,
            total: num(5)?,
        })
    }
}

/// Weighted sum `content + geo + lambda_gan * gan + lambda_seg * seg`.
pub fn total_loss(parts: LossParts, config: &TrainConfig, step: u64) -> Result<LossReport> {
    for (term, v) in [
        ("content", parts.content),
        ("geo", parts.geo),
        ("gan", parts.gan),
        ("seg", parts.seg),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: term.to_string(),
                step,
            });
        }
    }
    let total =
        parts.content + parts.geo + config.lambda_gan * parts.gan + config.lambda_seg * parts.seg;
    Ok(LossReport {
        step,
        content: parts.content,
        geo: parts.geo,
        gan: parts.gan,
        seg: parts.seg,
        total,
    })
}

/// One source/target pair held in memory.
#[derive(Clone, Debug)]
pub struct PairData {
    pub source: crate::dataset::Sample,
    pub target: crate::dataset::Sample,
}

impl PairData {
    pub fn load(root: &Path, entry: &ManifestEntry) -> Result<Self> {
        let (source, target) = entry.load(root)?;
        Ok(PairData { source, target })
    }
}

/// Loads every pair of one split.
pub fn load_split(dataset: &Path, split: Split) -> Result<Vec<PairData>> {
    let manifest = DatasetManifest::load(dataset)?;
    let root = crate::dataset::dataset_root(dataset);
    manifest
        .split(split)
        .map(|e| PairData::load(&root, e))
        .collect()
}

/// Ground-truth labels of `seg` at feature-grid resolution, row-major.
pub fn grid_labels(seg: &LabelMap) -> Vec<usize> {
    let small = seg.downsample_majority(IMAGE_SIZE / crate::encoders::GRID);
    small.labels().iter().map(|&l| l as usize).collect()
}

/// Batched training inputs and supervision.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub inputs: TransferInputs<S>,
    pub target_image: Tensor<S>,
    /// One-hot target segmentation, `N x 5 x 64 x 64`.
    pub target_onehot: Tensor<S>,
    /// Majority-downsampled target labels, `N * 16 * 16`.
    pub target_cells: Rc<Vec<usize>>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_pairs(pairs: &[&PairData]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::validation("batch", "at least one pair is required"));
        }
        let mut items = Vec::with_capacity(pairs.len());
        let mut images = Vec::with_capacity(pairs.len());
        let mut onehots = Vec::with_capacity(pairs.len());
        let mut cells = Vec::new();
        for p in pairs {
            let src = crate::model::PersonInput {
                image: &p.source.image,
                seg: &p.source.seg,
                keypoints: &p.source.keypoints,
            };
            items.push(TransferInputs::from_person(src, &p.target.keypoints)?);
            images.push(p.target.image.to_tensor());
            onehots.push(p.target.seg.one_hot());
            cells.extend(grid_labels(&p.target.seg));
        }
        Ok(Batch {
            inputs: TransferInputs::stack(&items)?,
            target_image: Tensor::stack_batch(&images)?,
            target_onehot: Tensor::stack_batch(&onehots)?,
            target_cells: Rc::new(cells),
        })
    }
}

/// Graph nodes of the generator objective.
#[derive(Clone, Debug)]
pub struct GeneratorLoss {
    pub transfer: TransferVars,
    pub content: Var,
    pub geo: Var,
    pub gan: Var,
    pub seg: Var,
    pub total: Var,
}

/// Builds the full generator objective on `g`. Discriminator weights are frozen here.
pub fn generator_loss<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    features: &FeatureExtractor<S>,
    batch: &Batch<S>,
    config: &TrainConfig,
) -> Result<GeneratorLoss> {
    g.freeze(model.d_pose.params.tag());
    g.freeze(model.d_seg.params.tag());
    let transfer = model.transfer_vars(g, &batch.inputs, &DEFAULT_ORDER)?;
    let target = g.constant(batch.target_image.clone());
    let content = losses::content_loss_vars(g, features, transfer.image, target)?.total;

    let src = g.constant(batch.inputs.source_image.clone());
    let src_feats = features.forward(g, src)[GEO_LAYER];
    let tgt_feats = features.forward(g, target)[GEO_LAYER];
    let geo = losses::geo_loss_vars(g, transfer.flow, src_feats, tgt_feats)?.total;

    let pose = g.constant(batch.inputs.target_pose.clone());
    let onehot = g.constant(batch.target_onehot.clone());
    let (gp, _) = losses::gan_loss_vars(g, &model.d_pose, target, transfer.image, pose)?;
    let (gs, _) = losses::gan_loss_vars(g, &model.d_seg, target, transfer.image, onehot)?;
    let gan = g.add(gp, gs);

    let xent = losses::seg_loss_vars(g, &transfer.mask_logits, batch.target_cells.clone())?;
    let bce = losses::mask_bce_vars(g, &transfer.mask_logits, &batch.target_cells)?;
    let seg = g.add(xent, bce);

    let wg = g.scale(gan, S::lit(config.lambda_gan));
    let ws = g.scale(seg, S::lit(config.lambda_seg));
    let total = g.add(content, geo);
    let total = g.add(total, wg);
    let total = g.add(total, ws);
    Ok(GeneratorLoss {
        transfer,
        content,
        geo,
        gan,
        seg,
        total,
    })
}

/// Discriminator objective on a detached generated image.
pub fn discriminator_loss<S: Scalar>(
    g: &mut Graph<S>,
    model: &Model<S>,
    batch: &Batch<S>,
    generated: &Tensor<S>,
) -> Result<Var> {
    let real = g.constant(batch.target_image.clone());
    let fake = g.constant(generated.clone());
    let pose = g.constant(batch.inputs.target_pose.clone());
    let onehot = g.constant(batch.target_onehot.clone());
    let (_, dp) = losses::gan_loss_vars(g, &model.d_pose, real, fake, pose)?;
    let (_, ds) = losses::gan_loss_vars(g, &model.d_seg, real, fake, onehot)?;
    Ok(g.add(dp, ds))
}

fn scalar_of<S: Scalar>(g: &Graph<S>, v: Var) -> f64 {
    g.value(v).data()[0].as_f64()
}

/// Model, frozen features and optimizer state of a training run.
#[derive(Clone, Debug)]
pub struct Trainer<S> {
    pub model: Model<S>,
    pub features: FeatureExtractor<S>,
    pub config: TrainConfig,
    /// Completed optimization steps.
    pub step: u64,
    /// One optimizer per store, in [`Model::stores`] order.
    pub optimizers: Vec<Adam<S>>,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.seed);
        let features = FeatureExtractor::new(config.seed);
        let optimizers = Self::fresh_optimizers(&model, &config);
        Ok(Trainer {
            model,
            features,
            config,
            step: 0,
            optimizers,
        })
    }

    fn fresh_optimizers(model: &Model<S>, config: &TrainConfig) -> Vec<Adam<S>> {
        model
            .stores()
            .into_iter()
            .map(|s| {
                Adam::new(
                    s,
                    S::lit(config.learning_rate),
                    S::lit(ADAM_BETAS.0),
                    S::lit(ADAM_BETAS.1),
                )
            })
            .collect()
    }

    /// Continues from a checkpoint. `config` replaces the stored one except for the seed,
    /// which must match the checkpoint.
    pub fn resume(checkpoint: Checkpoint<S>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.seed != checkpoint.bundle.config.seed {
            return Err(Error::validation(
                "seed",
                format!(
                    "resume seed {} differs from checkpoint seed {}",
                    config.seed, checkpoint.bundle.config.seed
                ),
            ));
        }
        let mut optimizers = Self::fresh_optimizers(&checkpoint.bundle.model, &config);
        if let Some(states) = checkpoint.optimizers {
            for (opt, (step, m, v)) in optimizers.iter_mut().zip(states) {
                opt.restore(step, m, v)?;
            }
        }
        Ok(Trainer {
            features: FeatureExtractor::new(config.seed),
            model: checkpoint.bundle.model,
            step: checkpoint.bundle.step,
            config,
            optimizers,
        })
    }

    pub fn bundle(&self) -> ModelBundle<S> {
        ModelBundle {
            model: self.model.clone(),
            config: self.config.clone(),
            step: self.step,
        }
    }

    /// Indices of the pairs used at `step`; a pure function of seed and step.
    pub fn batch_indices(&self, step: u64, pairs: usize) -> Vec<usize> {
        let mut rng = seeded_rng(mix64(self.config.seed ^ mix64(step)), 0xba7c);
        let n = self.config.batch_size.min(pairs);
        index::sample(&mut rng, pairs, n).into_vec()
    }

    /// One generator update followed by one discriminator update.
    pub fn train_step(&mut self, batch: &Batch<S>) -> Result<LossReport> {
        let step = self.step + 1;
        let mut g = Graph::new();
        let gl = generator_loss(&mut g, &self.model, &self.features, batch, &self.config)?;
        let parts = LossParts {
            content: scalar_of(&g, gl.content),
            geo: scalar_of(&g, gl.geo),
            gan: scalar_of(&g, gl.gan),
            seg: scalar_of(&g, gl.seg),
        };
        let report = total_loss(parts, &self.config, step)?;
        g.backward(gl.total);
        let generated = g.value(gl.transfer.image).clone();
        let n_gen = self.model.generator_stores().len();
        for (store, opt) in self
            .model
            .generator_stores_mut()
            .into_iter()
            .zip(&mut self.optimizers)
        {
            g.accumulate_param_grads(store);
            opt.step(store);
        }
        drop(g);

        let mut g = Graph::new();
        let dl = discriminator_loss(&mut g, &self.model, batch, &generated)?;
        if !scalar_of(&g, dl).is_finite() {
            return Err(Error::NonFinite {
                term: "discriminator".into(),
                step,
            });
        }
        g.backward(dl);
        for (store, opt) in self
            .model
            .discriminator_stores_mut()
            .into_iter()
            .zip(&mut self.optimizers[n_gen..])
        {
            g.accumulate_param_grads(store);
            opt.step(store);
        }
        self.step = step;
        Ok(report)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.config.output_dir.join(CHECKPOINT_FILE)
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        save_checkpoint(path, &self.bundle(), Some(&self.optimizers))
    }

    /// Trains until `config.steps` total steps, logging every step to the loss CSV and
    /// checkpointing every `checkpoint_every` steps and at the end.
    pub fn run(
        &mut self,
        pairs: &[PairData],
        mut on_step: impl FnMut(&LossReport),
    ) -> Result<Vec<LossReport>> {
        if pairs.is_empty() {
            return Err(Error::validation(
                "dataset_path",
                "the train split is empty",
            ));
        }
        let log_path = self.config.output_dir.join(LOSS_LOG);
        let mut log = open_log(&log_path, self.step)?;
        let mut reports = Vec::new();
        while self.step < self.config.steps {
            let idx = self.batch_indices(self.step + 1, pairs.len());
            let chosen: Vec<&PairData> = idx.iter().map(|&i| &pairs[i]).collect();
            let batch = Batch::from_pairs(&chosen)?;
            let report = match self.train_step(&batch) {
                Ok(r) => r,
                Err(e @ Error::NonFinite { .. }) => {
                    self.write_abort_report(&e, reports.last())?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            writeln!(log, "{}", report.csv_row()).map_err(|e| Error::io(&log_path, e))?;
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            on_step(&report);
            reports.push(report);
            if self.step % self.config.checkpoint_every == 0 || self.step == self.config.steps {
                self.save(&self.checkpoint_path())?;
            }
        }
        Ok(reports)
    }

    fn write_abort_report(&self, err: &Error, last: Option<&LossReport>) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(
            text,
            "{{\"error\": {},",
            serde_json::to_string(&err.to_string())?
        );
        let _ = writeln!(
            text,
            " \"last_report\": {}}}",
            serde_json::to_string(&last)?
        );
        write_file(&self.config.output_dir.join(ABORT_REPORT), text.as_bytes())
    }
}

fn open_log(path: &Path, step: u64) -> Result<std::fs::File> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    if step > 0 && path.is_file() {
        // Resuming: keep rows up to the checkpoint step, drop any written after it.
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut kept = String::from(LossReport::CSV_HEADER);
        kept.push('\n');
        for line in text.lines().skip(1) {
            if LossReport::parse_csv_row(line).is_ok_and(|r| r.step <= step) {
                kept.push_str(line);
                kept.push('\n');
            }
        }
        std::fs::write(path, kept).map_err(|e| Error::io(path, e))?;
        return std::fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", LossReport::CSV_HEADER).map_err(|e| Error::io(path, e))?;
    Ok(f)
}

/// Reads a loss log back.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(LossReport::CSV_HEADER) {
        return Err(Error::Format(format!(
            "{}: missing loss log header",
            path.display()
        )));
    }
    lines.map(LossReport::parse_csv_row).collect()
}

/// Trailing moving average with the given window.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for i in 0..values.len() {
        acc += values[i];
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Trains from scratch per `config`, reading the train split of its dataset.
pub fn train<S: Scalar>(config: TrainConfig) -> Result<ModelBundle<S>> {
    let mut trainer = Trainer::<S>::new(config)?;
    let pairs = load_split(&trainer.config.dataset_path, Split::Train)?;
    trainer.run(&pairs, |r| {
        if r.step % 100 == 0 {
            log::info!("step {} total {:.4}", r.step, r.total);
        }
    })?;
    Ok(trainer.bundle())
}
