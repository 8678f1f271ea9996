//! Times training steps on a small generated dataset.

use std::time::Instant;

use dressup_core::dataset::{build_dataset, Split};
use dressup_core::training::{load_split, Batch, TrainConfig, Trainer};

fn main() {
    let dir = std::env::temp_dir().join("dressup_bench");
    build_dataset(20, 1, &dir).unwrap();
    let pairs = load_split(&dir, Split::Train).unwrap();
    let batch_size: usize = std::env::args().nth(1).map_or(2, |s| s.parse().unwrap());
    let config = TrainConfig {
        batch_size,
        dataset_path: dir.clone(),
        output_dir: dir.join("run"),
        ..TrainConfig::default()
    };
    let mut t = Trainer::<f32>::new(config).unwrap();
    println!("parameters: {}", t.model.num_parameters());
    let chosen: Vec<_> = pairs.iter().take(batch_size).collect();
    let batch = Batch::from_pairs(&chosen).unwrap();
    for i in 0..6 {
        let start = Instant::now();
        let r = t.train_step(&batch).unwrap();
        println!(
            "step {i}: {:.3}s total {:.4}",
            start.elapsed().as_secs_f64(),
            r.total
        );
    }
}
