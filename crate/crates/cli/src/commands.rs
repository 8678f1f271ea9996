use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dressup_core::dataset::{build_dataset, dataset_root, DatasetManifest, Split};
use dressup_core::image::{Keypoints, LabelMap, RgbImage, IMAGE_SIZE, NUM_LABELS};
use dressup_core::metrics::{evaluate, ssim_images};
use dressup_core::model::PersonInput;
use dressup_core::preprocessing::{import_external_pose, parse_label_map, remap_parse};
use dressup_core::training::{
    load_checkpoint, load_split, train as train_model, ModelBundle, TrainConfig, Trainer,
};
use dressup_core::tweaking::{
    attribute_examples, fit_attribute_direction, Attribute, AttributeDirection, Tweak,
};
use dressup_core::Model32;
use dressup_service::engine::{load_directions, DIRECTIONS_DIR};
use dressup_service::session::{Session, SessionRecord};
use dressup_service::{router, serve_router, Engine, FsStore, ServiceConfig, SessionManager};

use crate::{
    CliError, CliResult, DatasetArgs, EvalArgs, ServeArgs, TrainArgs, TryonArgs, TweakArgs,
};

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

/// An input file that must exist; a missing one is a validation error naming `flag`.
fn input<'a>(flag: &str, path: &'a Path) -> CliResult<&'a Path> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(invalid(format!(
            "--{flag} {}: no such file",
            path.display()
        )))
    }
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// The checkpoint's model and id, or an untrained model seeded by `seed`.
pub fn load_model(checkpoint: Option<&Path>, seed: u64) -> CliResult<(Model32, String)> {
    match checkpoint {
        Some(p) => {
            let ck = load_checkpoint::<f32>(input("checkpoint", p)?)?;
            Ok((ck.bundle.model, ck.id))
        }
        None => {
            let bundle = ModelBundle::<f32>::untrained(TrainConfig {
                seed,
                ..TrainConfig::default()
            });
            let id = bundle.checkpoint_id();
            Ok((bundle.model, id))
        }
    }
}

/// Comma-separated garment labels, each in 1..4.
pub fn parse_order(text: &str) -> CliResult<Vec<u8>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<u8>()
                .ok()
                .filter(|&l| l >= 1 && (l as usize) < NUM_LABELS)
                .ok_or_else(|| {
                    invalid(format!(
                        "--order: {s:?} is not a garment label 1..{}",
                        NUM_LABELS - 1
                    ))
                })
        })
        .collect()
}

pub fn dataset(a: DatasetArgs) -> CliResult<()> {
    let manifest = build_dataset(a.count, a.seed, &a.out)?;
    println!(
        "wrote {} pairs to {} (manifest {})",
        manifest.entries.len(),
        a.out.display(),
        manifest.hash()
    );
    Ok(())
}

pub fn train(a: TrainArgs) -> CliResult<()> {
    let mut config = TrainConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(n) = a.steps {
        config.steps = n;
    }
    if let Some(d) = a.dataset {
        config.dataset_path = d;
    }
    if let Some(o) = a.out {
        config.output_dir = o;
    }
    config.validate()?;
    let dataset = &config.dataset_path;
    if !dataset_root(dataset).join("manifest.json").is_file() {
        return Err(invalid(format!(
            "dataset_path {}: no manifest.json",
            dataset.display()
        )));
    }
    let bundle = if a.resume {
        let path = config
            .output_dir
            .join(dressup_core::training::CHECKPOINT_FILE);
        let ck = load_checkpoint::<f32>(input("resume", &path)?)?;
        let pairs = load_split(dataset, Split::Train)?;
        let mut trainer = Trainer::resume(ck, config.clone())?;
        trainer.run(&pairs, |r| {
            if r.step % 100 == 0 {
                log::info!("step {} total {:.4}", r.step, r.total);
            }
        })?;
        trainer.bundle()
    } else {
        train_model::<f32>(config.clone())?
    };
    println!(
        "trained {} steps; checkpoint {} ({})",
        bundle.step,
        config
            .output_dir
            .join(dressup_core::training::CHECKPOINT_FILE)
            .display(),
        bundle.checkpoint_id()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> CliResult<()> {
    if let (Some(img), Some(reference)) = (&a.image, &a.reference) {
        let x = RgbImage::load_png(input("image", img)?)?;
        let y = RgbImage::load_png(input("reference", reference)?)?;
        let s = ssim_images(&x, &y)?;
        if a.json {
            println!("{}", serde_json::json!({ "ssim": s }));
        } else {
            println!("ssim {s:.6}");
        }
        return Ok(());
    }
    let dataset = a.dataset.as_deref().expect("clap requires --dataset");
    if !dataset_root(dataset).join("manifest.json").is_file() {
        return Err(invalid(format!(
            "--dataset {}: no manifest.json",
            dataset.display()
        )));
    }
    let split: Split = a.split.parse()?;
    let (model, id) = load_model(a.checkpoint.as_deref(), a.seed)?;
    let report = evaluate(&model, split, dataset)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        println!("model     {id}");
        print!("{}", report.to_table());
    }
    Ok(())
}

fn load_seg(flag: &str, path: &Path, label_map: Option<&BTreeMap<u32, u8>>) -> CliResult<LabelMap> {
    let raw = LabelMap::load_png(input(flag, path)?)?;
    let seg = match label_map {
        Some(m) => remap_parse(&raw, m)?,
        None => raw,
    };
    if (seg.width, seg.height) != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(invalid(format!(
            "--{flag} {}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {}x{}",
            path.display(),
            seg.width,
            seg.height
        )));
    }
    if let Some(bad) = seg.labels().iter().find(|&&l| l as usize >= NUM_LABELS) {
        return Err(invalid(format!(
            "--{flag} {}: label {bad} is outside 0..{}",
            path.display(),
            NUM_LABELS - 1
        )));
    }
    Ok(seg)
}

fn load_image(flag: &str, path: &Path) -> CliResult<RgbImage> {
    let img = RgbImage::load_png(input(flag, path)?)?;
    if (img.width, img.height) != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(invalid(format!(
            "--{flag} {}: expected {IMAGE_SIZE}x{IMAGE_SIZE}, got {}x{}",
            path.display(),
            img.width,
            img.height
        )));
    }
    Ok(img)
}

fn load_pose(flag: &str, path: &Path, external: bool, threshold: f64) -> CliResult<Keypoints> {
    let path = input(flag, path)?;
    if external {
        Ok(import_external_pose(
            path,
            (IMAGE_SIZE, IMAGE_SIZE),
            threshold,
        )?)
    } else {
        Ok(Keypoints::load_json(path)?)
    }
}

pub fn tryon(a: TryonArgs) -> CliResult<()> {
    let order = parse_order(&a.order)?;
    let label_map = match &a.label_map {
        Some(p) => {
            let bytes = std::fs::read(input("label-map", p)?)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let doc: serde_json::Value = serde_json::from_slice(&bytes)
                .map_err(|e| invalid(format!("--label-map {}: {e}", p.display())))?;
            Some(parse_label_map(&doc)?)
        }
        None => None,
    };
    let image = load_image("person", &a.person)?;
    let seg = load_seg("seg", &a.seg, label_map.as_ref())?;
    let kps = load_pose("pose", &a.pose, a.external_pose, a.confidence_threshold)?;
    let slot = match a.label {
        Some(l) => Some(
            order
                .iter()
                .position(|&o| o == l)
                .ok_or_else(|| invalid(format!("--label {l} is not in --order {}", a.order)))?,
        ),
        None => None,
    };
    let (model, _) = load_model(a.checkpoint.as_deref(), a.seed)?;
    let person = PersonInput {
        image: &image,
        seg: &seg,
        keypoints: &kps,
    };
    let mut rep = model.encode_person(person, &kps, &order)?.person;
    if let (Some(slot), Some(g), Some(gs), Some(label)) =
        (slot, &a.garment, &a.garment_seg, a.label)
    {
        let g_image = load_image("garment", g)?;
        let g_seg = load_seg("garment-seg", gs, label_map.as_ref())?;
        let g_kps = match &a.garment_pose {
            Some(p) => load_pose("garment-pose", p, a.external_pose, a.confidence_threshold)?,
            None => kps.clone(),
        };
        let donor = PersonInput {
            image: &g_image,
            seg: &g_seg,
            keypoints: &g_kps,
        };
        rep.garments[slot] = model.encode_garment(donor, label, &kps)?;
    }
    let out = model.try_on(&rep)?;
    let png = RgbImage::from_tensor(&out, 0).encode_png()?;
    write(&a.out, &png)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn read_text(flag: &str, path: &Path) -> CliResult<String> {
    std::fs::read_to_string(input(flag, path)?)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// A session record from `session.json` or the directory holding it.
fn load_snapshot(path: &Path) -> CliResult<SessionRecord> {
    let file = if path.is_dir() {
        path.join("session.json")
    } else {
        path.to_path_buf()
    };
    let text = read_text("session", &file)?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("--session {}: {e}", file.display())))
}

fn parse_tweak(arg: &str) -> CliResult<Tweak> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        read_text("tweak", Path::new(arg))?
    };
    let tweak: Tweak = serde_json::from_str(&text).map_err(|e| invalid(format!("--tweak: {e}")))?;
    tweak.validate()?;
    Ok(tweak)
}

fn fit(a: &TweakArgs, name: &str) -> CliResult<()> {
    let attribute: Attribute = name.parse()?;
    let dataset = a.dataset.as_deref().expect("clap requires --dataset");
    if !dataset_root(dataset).join("manifest.json").is_file() {
        return Err(invalid(format!(
            "--dataset {}: no manifest.json",
            dataset.display()
        )));
    }
    let (model, _) = load_model(a.checkpoint.as_deref(), a.seed)?;
    let root = dataset_root(dataset);
    let manifest = DatasetManifest::load(&root.join("manifest.json"))?;
    let mut samples = Vec::new();
    for entry in manifest.split(Split::Train) {
        let (s, t) = entry.load(&root)?;
        samples.push(s);
        samples.push(t);
    }
    let (latents, labels) = attribute_examples(&model, &samples, attribute)?;
    let dir = fit_attribute_direction(&latents, &labels, attribute, a.seed)?;
    write(&a.out, dir.to_json().as_bytes())?;
    println!(
        "fitted {attribute:?} on {} examples, held-out accuracy {:.3}; wrote {}",
        dir.train_count,
        dir.fit_accuracy,
        a.out.display()
    );
    Ok(())
}

pub fn tweak(a: TweakArgs) -> CliResult<()> {
    if let Some(name) = &a.fit {
        return fit(&a, name);
    }
    let record = load_snapshot(a.session.as_deref().expect("clap requires --session"))?;
    let tweak = parse_tweak(a.tweak.as_deref().expect("clap requires --tweak"))?;
    let (model, id) = load_model(a.checkpoint.as_deref(), a.seed)?;
    let dir: Option<PathBuf> = a.directions.clone().or_else(|| {
        a.checkpoint
            .as_ref()
            .map(|c| c.parent().unwrap_or(Path::new(".")).join(DIRECTIONS_DIR))
    });
    let directions: BTreeMap<String, AttributeDirection> = match dir {
        Some(d) => load_directions(&d)?,
        None => BTreeMap::new(),
    };
    let mut session = Session::reencode(&model, &id, record)?;
    session.push_tweak(&model, &directions, tweak, a.replace)?;
    let (png, _) = session.render(&model, &directions)?;
    write(&a.out, &png)?;
    if let Some(path) = &a.save {
        let text = serde_json::to_string_pretty(&session.record)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write(path, text.as_bytes())?;
    }
    println!(
        "wrote {} ({} tweaks)",
        a.out.display(),
        session.record.tweaks.len()
    );
    Ok(())
}

pub fn serve(a: ServeArgs) -> CliResult<()> {
    let mut config = ServiceConfig::from_env()?;
    if a.model.is_some() {
        config.model_path = a.model;
    }
    if let Some(d) = a.session_dir {
        config.session_dir = d;
    }
    if let Some(p) = a.port {
        config.port = p;
    }
    let engine = match (&config.model_path, a.seed) {
        (None, Some(seed)) => {
            let (model, id) = load_model(None, seed)?;
            log::warn!("no checkpoint configured; serving an untrained model (seed {seed})");
            Engine::new(model, id)
        }
        (path, _) => Engine::load(path.as_deref()),
    };
    let store = Arc::new(FsStore::new(&config.session_dir)?);
    let app = router(Arc::new(SessionManager::new(Arc::new(engine), store)));
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("serving on port {}", config.port);
    rt.block_on(serve_router(app, config.port))
        .map_err(|e| CliError::Runtime(format!("port {}: {e}", config.port)))
}
