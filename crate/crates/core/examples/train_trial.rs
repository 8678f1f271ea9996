//! Trains on a fresh toy dataset and compares test-split scores before and after.
//!
//! Usage: train_trial <out_dir> [steps] [batch_size]

use std::time::Instant;

use dressup_core::dataset::{build_dataset, Split};
use dressup_core::metrics::evaluate;
use dressup_core::model::Model;
use dressup_core::training::{train, TrainConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let out = std::path::PathBuf::from(args.next().expect("output directory"));
    let steps = args.next().map_or(2000, |s| s.parse().unwrap());
    let batch_size = args.next().map_or(4, |s| s.parse().unwrap());
    let data = out.join("data");
    if !data.join("manifest.json").is_file() {
        build_dataset(500, 7, &data).unwrap();
    }
    let config = TrainConfig {
        steps,
        batch_size,
        seed: 7,
        dataset_path: data.clone(),
        output_dir: out.join("run"),
        ..TrainConfig::default()
    };
    let base = evaluate(&Model::<f32>::new(7), Split::Test, &data).unwrap();
    println!("untrained\n{}", base.to_table());
    let start = Instant::now();
    let bundle = train::<f32>(config).unwrap();
    println!(
        "trained {} steps in {:.1}s",
        bundle.step,
        start.elapsed().as_secs_f64()
    );
    let after = evaluate(&bundle.model, Split::Test, &data).unwrap();
    println!("trained\n{}", after.to_table());
}
