//! Regenerates the oracle-case corpus under `crates/core/tests/oracle_cases/v1`.

use dressup_core::harness::corpus::{generate_cases, write_corpus, CORPUS_SEED};

fn main() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/oracle_cases/v1");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("clearing old corpus");
    }
    let cases = generate_cases(CORPUS_SEED).expect("generating cases");
    write_corpus(&dir, CORPUS_SEED, &cases).expect("writing corpus");
    println!("wrote {} cases to {}", cases.len(), dir.display());
}
